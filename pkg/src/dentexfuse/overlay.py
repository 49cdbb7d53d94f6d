"""Draw final findings onto the source radiograph."""

from __future__ import annotations

import os
import tempfile
from typing import Any, Mapping, Sequence

from PIL import Image, ImageDraw

OVERLAY_MIN_SCORE = 0.3

_PALETTE = [(230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
            (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230)]


def visible(records: Sequence[Mapping[str, Any]], min_score: float = OVERLAY_MIN_SCORE) -> list[Mapping[str, Any]]:
    return [r for r in records if float(r["score"]) > min_score]


def draw_findings(image: Image.Image, records: Sequence[Mapping[str, Any]],
                  min_score: float = OVERLAY_MIN_SCORE) -> tuple[Image.Image, int]:
    """Return an RGB copy with boxes and ``FDI disease score`` captions, plus the number drawn."""
    canvas = image.convert("RGB")
    draw = ImageDraw.Draw(canvas)
    shown = visible(records, min_score)
    for r in shown:
        x, y, w, h = (float(v) for v in r["bbox"])
        colour = _PALETTE[int(r.get("category_id_3") or 0) % len(_PALETTE)]
        draw.rectangle([x, y, x + w, y + h], outline=colour, width=2)
        caption = f"{r.get('tooth_fdi') or '??'} {r.get('disease', r.get('category_id_3'))} {float(r['score']):.2f}"
        draw.text((x + 2, max(0.0, y - 12)), caption, fill=colour)
    return canvas, len(shown)


def render(image_path: str | os.PathLike, records: Sequence[Mapping[str, Any]], out_path: str | os.PathLike,
           min_score: float = OVERLAY_MIN_SCORE) -> int:
    with Image.open(image_path) as im:
        canvas, n = draw_findings(im, records, min_score)
    out_path = os.fspath(out_path)
    directory = os.path.dirname(out_path) or "."
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    os.close(fd)
    try:
        canvas.save(tmp, format="PNG")
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return n
