import filecmp

import numpy as np
import pytest

from dentexfuse.annotations import from_global
from dentexfuse.errors import CapacityError, RangeError
from dentexfuse.geometry import iou
from dentexfuse.pipeline import load_config, run_fuse
from dentexfuse.rasterize import OTHER_QUADRANT, largest_component_boxes
from dentexfuse.synth import SynthSpec, generate_case, generate_dataset, random_plan, tooth_layout, write_dataset


def test_layout_is_disjoint_and_ordered():
    boxes = tooth_layout((1024, 512))
    assert len(boxes) == 32
    vals = list(boxes.values())
    for i, a in enumerate(vals):
        for b in vals[i + 1:]:
            assert iou(a, b) == 0.0
    # quadrant 1 sits left of quadrant 2, quadrant 4 left of quadrant 3, upper above lower
    assert boxes[1].x < boxes[9].x and boxes[25].x < boxes[17].x
    assert boxes[1].y2 < boxes[25].y


def test_tiny_image_is_capacity_error():
    with pytest.raises(CapacityError):
        tooth_layout((40, 10))


@pytest.mark.parametrize("kw", [{"drop_rate": 1.5}, {"jitter": -1}, {"teeth_present": (1, 2), "disease_plan": ((5, "caries"),)},
                                {"teeth_present": (0,)}])
def test_spec_validation(kw):
    with pytest.raises(RangeError):
        SynthSpec(**kw)


def test_noiseless_masks_recover_layout():
    case = generate_case(SynthSpec(seed=1), image_id=1)
    layout = tooth_layout((1024, 512))
    assert largest_component_boxes(case.mask) == layout
    assert largest_component_boxes(case.whole_masks["whole_segmenter"]) == layout
    for q, m in case.quadrant_masks["quadrant_segmenter"].items():
        labels = set(largest_component_boxes(m))
        assert set(range(1, 9)) <= labels
        assert labels <= set(range(1, 9)) | {OTHER_QUADRANT}
    det = {r.category: r.bbox for r in case.box_predictions["detector"]}
    assert det == layout


def test_streams_depend_on_seed_and_index():
    spec = SynthSpec(seed=7, jitter=3.0, drop_rate=0.1, false_positive_rate=0.2)
    a = generate_case(spec, 1, 0).box_predictions["detector"]
    assert a == generate_case(spec, 1, 0).box_predictions["detector"]
    assert a != generate_case(spec, 1, 1).box_predictions["detector"]
    assert a != generate_case(SynthSpec(seed=8, jitter=3.0, drop_rate=0.1, false_positive_rate=0.2), 1, 0) \
        .box_predictions["detector"]


def test_random_plan_respects_impacted_prior():
    rng = np.random.default_rng(0)
    for _ in range(200):
        for g, name in random_plan(rng, range(1, 33)):
            if name == "Impacted":
                assert from_global(g).in_quadrant == 8


def test_seed_42_twice_is_byte_identical(tmp_path):
    spec = SynthSpec(seed=42, image_size=(512, 256), jitter=2.0, drop_rate=0.1, false_positive_rate=0.1,
                     disease_plan=((8, "Impacted"), (3, "Caries")))
    for d in ("a", "b"):
        write_dataset(generate_dataset(spec, 2), tmp_path / d)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert len(files) > 10
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert not cmp.left_only and not cmp.right_only


def test_full_drop_leaves_everything_unmatched(tmp_path):
    spec = SynthSpec(seed=3, image_size=(512, 256), drop_rate=1.0, disease_plan=((8, "Impacted"), (12, "Caries")))
    cfg = write_dataset(generate_dataset(spec, 2), tmp_path, images=False)
    result = run_fuse(load_config(cfg))
    assert set(result.report["tooth_entries_per_source"].values()) == {0}
    assert result.report["matched"] == 0 and result.report["unmatched"] == 4
    assert result.findings == []
    assert result.report["postprocess"]["unmatched_dropped"] == 4


def test_quadrant_masks_match_quadrant_labeling():
    from dentexfuse.rasterize import Labeling, crop_mask, rasterize_objects

    case = generate_case(SynthSpec(seed=2, image_size=(512, 256)), 1, 0)
    for q, fr in case.crop_frames.items():
        direct = crop_mask(rasterize_objects(case.teeth.objects, 512, 256, Labeling.quadrant_9(q)), fr.crop_box)
        assert np.array_equal(case.quadrant_masks["quadrant_segmenter"][q].labels, direct.labels)
