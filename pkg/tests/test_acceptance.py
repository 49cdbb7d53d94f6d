"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary."""

import math

import numpy as np

from dentexfuse.annotations import DEFAULT_VOCABULARY, IndexBase, ToothId, from_global, parse_fdi, to_fdi, to_global
from dentexfuse.evaluate import EvalConfig, Prediction, evaluate
from dentexfuse.fusion import DiseaseDetection, ToothDictionary, ToothEntry, fuse_image, vote_tooth
from dentexfuse.geometry import BBox, CropFrame, iou, restore_to_image
from dentexfuse.overlay import OVERLAY_MIN_SCORE, visible
from dentexfuse.pipeline import load_config, run_fuse
from dentexfuse.postprocess import IMPACTED_THIRD_MOLAR, FusedFinding, apply_priors, dedupe, postprocess, threshold
from dentexfuse.rasterize import OTHER_QUADRANT, LabelMask, connected_components, largest_component_boxes
from dentexfuse.synth import SynthSpec, generate_dataset, random_plan, tooth_layout, write_dataset

from .conftest import criterion
from .oracles import brute_force_eval, corner_restore, flood_fill_largest, grid_iou


def test_criterion_1_id_bijection():
    with criterion(1, "tooth id bijection, 32 teeth x both index bases", 1.0):
        seen_fdi = {}
        for q in range(1, 5):
            for e in range(1, 9):
                t = ToothId(q, e)
                g = to_global(t)
                assert g == (q - 1) * 8 + e
                assert from_global(g) == t
                for base in IndexBase:
                    code = to_fdi(t, base)
                    assert len(code) == 2 and parse_fdi(code, base) == t
                    seen_fdi.setdefault(base, set()).add(code)
        assert sorted(to_global(from_global(g)) for g in range(1, 33)) == list(range(1, 33))
        assert all(len(codes) == 32 for codes in seen_fdi.values())
        assert to_fdi(ToothId(4, 8), "one_based") == "48" and to_fdi(ToothId(4, 8), "zero_based") == "37"


def random_pair(rng):
    if rng.random() < 0.5:
        a = np.sort(rng.uniform(0, 100, 2)), np.sort(rng.uniform(0, 100, 2))
        b = np.sort(rng.uniform(0, 100, 2)), np.sort(rng.uniform(0, 100, 2))
        return [BBox.from_corners(x[0], y[0], x[1], y[1]) for x, y in (a, b)]
    out = []
    for _ in range(2):
        w, h = rng.uniform(1, 60, 2)
        x, y = rng.uniform(0, 100 - w), rng.uniform(0, 100 - h)
        out.append(BBox(x, y, w, h))
    return out


def test_criterion_2_iou_oracle():
    with criterion(2, "IoU vs 1000x1000 cell-counting oracle on 1000 pairs, 1/7 exact", 10.0):
        rng = np.random.default_rng(20240202)
        worst = 0.0
        overlapping = 0
        for _ in range(1000):
            a, b = random_pair(rng)
            got = iou(a, b)
            ref = grid_iou(tuple(a.to_list()), tuple(b.to_list()), n=1000)
            worst = max(worst, abs(got - ref))
            overlapping += got > 0
        assert worst <= 2e-3, worst
        assert overlapping > 200
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 2, 2)) == 1 / 7


def random_mask(rng):
    h, w = (int(v) for v in rng.integers(1, 129, size=2))
    if rng.random() < 0.5:
        # sparse noise: many small components, lots of ties
        grid = np.where(rng.random((h, w)) < 0.35, rng.integers(1, 10, (h, w)), 0)
    else:
        # painted rectangles: large components that merge and overwrite
        grid = np.zeros((h, w), dtype=np.int64)
        for _ in range(int(rng.integers(1, 25))):
            r, c = int(rng.integers(0, h)), int(rng.integers(0, w))
            grid[r:r + int(rng.integers(1, 30)), c:c + int(rng.integers(1, 30))] = int(rng.integers(0, 10))
    return grid.astype(np.uint8)


def test_criterion_3_components_conservation():
    with criterion(3, "component conservation and largest-component oracle on 500 masks", 30.0):
        rng = np.random.default_rng(3)
        for _ in range(500):
            grid = random_mask(rng)
            mask = LabelMask(grid)
            comps = connected_components(mask)
            per_label: dict[int, int] = {}
            for c in comps:
                per_label[c.label] = per_label.get(c.label, 0) + c.pixel_count
            totals = {int(v): int(n) for v, n in zip(*np.unique(grid, return_counts=True)) if v != 0}
            assert per_label == totals
            got = {k: tuple(b.to_list()) for k, b in largest_component_boxes(mask).items()}
            ref = {k: tuple(float(v) for v in box) for k, box in flood_fill_largest(grid).items()}
            assert got == ref


def random_fusion(rng):
    dicts = []
    for s in range(int(rng.integers(1, 5))):
        entries = {}
        for g in rng.choice(np.arange(1, 33), size=int(rng.integers(1, 10)), replace=False):
            w, h = rng.uniform(5, 40, 2)
            entries[int(g)] = ToothEntry(BBox(rng.uniform(0, 100), rng.uniform(0, 100), w, h),
                                         None if rng.random() < 0.3 else float(rng.uniform(0, 1)))
        dicts.append(ToothDictionary(f"s{s}", float(rng.uniform(0.2, 3.0)), entries))
    w, h = rng.uniform(5, 40, 2)
    d = DiseaseDetection(1, DEFAULT_VOCABULARY.by_id(2), BBox(rng.uniform(0, 100), rng.uniform(0, 100), w, h),
                         float(rng.uniform(0, 1)))
    return d, dicts


def test_criterion_4_voting_properties():
    with criterion(4, "vote scaling / disjoint-source invariance on 200 instances, worked example", 5.0):
        rng = np.random.default_rng(4)
        matched = 0
        for _ in range(200):
            d, dicts = random_fusion(rng)
            base = vote_tooth(d, dicts)
            matched += base.matched
            c = float(rng.uniform(0.01, 100))
            scaled = [ToothDictionary(s.source_id, s.weight * c, s.entries, s.kind) for s in dicts]
            assert vote_tooth(d, scaled).tooth == base.tooth
            far = {int(g): ToothEntry(BBox(d.bbox.x2 + 5 + 10 * i, d.bbox.y2 + 5, 8, 8), 1.0)
                   for i, g in enumerate(rng.choice(np.arange(1, 33), size=6, replace=False))}
            extra = ToothDictionary("far", float(rng.uniform(0.2, 5.0)), far)
            assert vote_tooth(d, dicts + [extra]).tooth == base.tooth
        assert matched > 50

        a = ToothDictionary("A", 2.0, {11: ToothEntry(BBox(10, 10, 10, 10)), 12: ToothEntry(BBox(19, 10, 10, 10))})
        b = ToothDictionary("B", 1.0, {12: ToothEntry(BBox(10, 10, 10, 10))}, "segmenter")
        d = DiseaseDetection(1, DEFAULT_VOCABULARY.by_id(2), BBox(10, 10, 10, 10), 0.9)
        m = vote_tooth(d, [a, b])
        assert to_global(m.tooth) == 11
        assert math.isclose(m.vote_tally[12], 2.0 * 10 / 190 + 1.0)
        (f,) = fuse_image([d], [a, b], "one_based")
        assert f.tooth_fdi == "23"


def random_findings(rng):
    names = [lab.name for lab in DEFAULT_VOCABULARY]
    out = []
    for _ in range(int(rng.integers(0, 40))):
        tooth = None if rng.random() < 0.1 else ToothId(int(rng.integers(1, 5)), int(rng.integers(1, 9)))
        out.append(FusedFinding(int(rng.integers(1, 3)), DEFAULT_VOCABULARY.by_name(names[int(rng.integers(0, 4))]),
                                tooth, BBox(0, 0, float(rng.integers(1, 4)), 1.0), float(np.round(rng.random(), 2))))
    return out


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x is y for y in it) for x in sub)


def test_criterion_5_postprocess_laws():
    with criterion(5, "dedupe / threshold / prior laws on 1000 finding lists", 5.0):
        rng = np.random.default_rng(5)
        rules = [IMPACTED_THIRD_MOLAR]
        for _ in range(1000):
            fs = random_findings(rng)
            d = dedupe(fs)
            assert dedupe(d) == d
            a, b = (float(v) for v in rng.random(2))
            t = threshold(fs, a)
            p = apply_priors(fs, rules)
            for sub in (d, t, p):
                assert is_subsequence(sub, fs)
            assert threshold(t, b) == threshold(fs, max(a, b))
            groups: dict = {}
            for f in fs:
                if f.tooth is not None:
                    k = (f.image_id, f.tooth, f.disease.key)
                    groups[k] = max(groups.get(k, 0.0), f.score)
            assert {(f.image_id, f.tooth, f.disease.key): f.score for f in d if f.tooth is not None} == groups
            for f in fs:
                impacted_elsewhere = f.disease.key == "impacted" and f.tooth is not None and f.tooth.in_quadrant != 8
                assert any(f is g for g in p) != impacted_elsewhere
            out, report = postprocess(fs, a, rules)
            assert report.output == len(out) and all(f.matched for f in out)


def synth_eval_dataset(rng):
    spec = SynthSpec(seed=int(rng.integers(0, 2**31)), image_size=(256, 128), jitter=float(rng.uniform(0, 4)),
                     drop_rate=0.0, false_positive_rate=float(rng.uniform(0, 0.2)))
    plans = [random_plan(rng, range(1, 33)) for _ in range(20)]
    return generate_dataset(spec, 20, plans)


def test_criterion_6_evaluator_oracle():
    with criterion(6, "evaluator vs brute force on 50 synthetic 20-image sets, hand case, invariants", 60.0):
        rng = np.random.default_rng(6)
        thresholds = EvalConfig().iou_thresholds
        for k in range(50):
            ds = synth_eval_dataset(rng)
            gt = ds.merged("diseases")
            preds = [Prediction(r.image_id, r.category, r.bbox, r.score)
                     for c in ds.cases for r in c.disease_predictions]
            if not gt.objects:
                continue
            rep = evaluate(gt, preds)
            ref = brute_force_eval([(o.image_id, o.disease, tuple(o.bbox.to_list())) for o in gt.objects],
                                   [(p.image_id, p.cls, tuple(p.bbox.to_list()), p.score) for p in preds],
                                   thresholds)
            for name, value in (("AP", rep.ap), ("AP50", rep.ap50), ("AP75", rep.ap75), ("AR", rep.ar)):
                assert abs(value - ref[name]) <= 1e-9, (k, name, value, ref[name])
            per_t = [evaluate(gt, preds, EvalConfig(iou_thresholds=(t,))).ap for t in thresholds]
            assert all(hi <= lo + 1e-12 for lo, hi in zip(per_t, per_t[1:]))
            squashed = [Prediction(p.image_id, p.cls, p.bbox, 0.1 + 0.5 * p.score ** 2) for p in preds]
            assert abs(evaluate(gt, squashed).ap - rep.ap) <= 1e-12

        from dentexfuse.annotations import AnnotatedObject, AnnotationSet, HierarchyLevel, ImageInfo

        images = (ImageInfo(1, "1.png", 50, 50), ImageInfo(2, "2.png", 50, 50))
        objs = tuple(AnnotatedObject(i, i, BBox(0, 0, 10, 10), (), 1, 1, 2) for i in (1, 2))
        hand = AnnotationSet(images, objs, HierarchyLevel.DISEASE, DEFAULT_VOCABULARY)
        preds = [Prediction(1, 2, BBox(0, 0, 10, 10), 0.9), Prediction(2, 2, BBox(30, 30, 10, 10), 0.8),
                 Prediction(2, 2, BBox(0, 0, 10, 10), 0.7)]
        ap = evaluate(hand, preds).ap
        assert abs(ap - (51 * 1.0 + 50 * (2 / 3)) / 101) <= 1e-12
        assert abs(ap - 0.8351) < 2e-4


def test_criterion_7_noiseless_round_trip(tmp_path):
    with criterion(7, "noiseless synth -> rasterize -> boxes -> fuse -> postprocess -> eval = 1.0", 10.0):
        plans = [[(8, "Impacted"), (3, "Caries"), (20, "Deep Caries")],
                 [(32, "Impacted"), (14, "Periapical Lesion")],
                 [(17, "Caries"), (24, "Impacted"), (10, "Deep Caries"), (27, "Caries")]]
        ds = generate_dataset(SynthSpec(seed=7), 3, plans)
        layout = tooth_layout((1024, 512))
        for case in ds.cases:
            for g, box in largest_component_boxes(case.whole_masks["whole_segmenter"]).items():
                assert max(abs(u - v) for u, v in zip(box.to_list(), layout[g].to_list())) <= 1.0
            for q, m in case.quadrant_masks["quadrant_segmenter"].items():
                for label, box in largest_component_boxes(m).items():
                    if label == OTHER_QUADRANT:
                        continue
                    restored = restore_to_image(box, case.crop_frames[q])
                    ref = layout[to_global(ToothId(q, label))]
                    for u, v in zip((restored.x, restored.y, restored.x2, restored.y2), (ref.x, ref.y, ref.x2, ref.y2)):
                        assert abs(u - v) <= 1.0
        result = run_fuse(load_config(write_dataset(ds, tmp_path, images=False)))
        got = sorted((f.image_id, to_global(f.tooth), f.disease.name) for f in result.findings)
        want = sorted((i + 1, g, name) for i, plan in enumerate(plans) for g, name in plan)
        assert got == want
        gt = ds.merged("diseases")
        for label_type in ("quadrant", "enumeration", "disease"):
            rep = evaluate(gt, result.submission, EvalConfig(label_type=label_type))
            assert (rep.ap, rep.ap50, rep.ap75, rep.ar) == (1.0, 1.0, 1.0, 1.0), label_type


def test_criterion_8_restore_and_threshold_boundary():
    with criterion(8, "restore_to_image vs per-corner mapping on 1000 pairs, 0.30 excluded"):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            sw, sh = (int(v) for v in rng.integers(200, 3000, 2))
            cw, ch = rng.uniform(10, sw / 2), rng.uniform(10, sh / 2)
            crop = BBox(rng.uniform(0, sw - cw), rng.uniform(0, sh - ch), cw, ch)
            size = tuple(int(v) for v in rng.integers(16, 1024, 2))
            frame = CropFrame(crop, (sw, sh), size)
            bx, by = rng.uniform(-0.1, 1.0, 2) * size
            box = BBox(bx, by, rng.uniform(0, size[0]), rng.uniform(0, size[1]))
            got = restore_to_image(box, frame).to_list()
            ref = corner_restore(tuple(box.to_list()), tuple(crop.to_list()), size, (sw, sh))
            assert max(abs(u - v) for u, v in zip(got, ref)) <= 1e-9

        assert OVERLAY_MIN_SCORE == 0.3
        fs = [FusedFinding(1, DEFAULT_VOCABULARY.by_id(2), ToothId(1, 1), BBox(0, 0, 1, 1), s)
              for s in (0.31, 0.30, 0.29)]
        assert [f.score for f in threshold(fs, 0.3)] == [0.31]
        assert [r["score"] for r in visible([{"score": f.score} for f in fs])] == [0.31]
