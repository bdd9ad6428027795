import math

import numpy as np
import pytest

from bedexit.data import Label, ReadingTable
from bedexit.segfeat import (FeatureLayout, Mode, Segment, SegmentationConfig, apply_normalizer, compute_cfpr,
                             event_features, extract_features, featurize_record, fit_normalizer, moving_flag,
                             segment_stream, wrap_phase, write_feature_csv)

import oracles
from conftest import make_record

ANTS = (1, 2, 3)
I, O = Label.IN_BED, Label.OUT_OF_BED


def seg_of(t, antenna=None, rssi=None, phase=None, freq=None, tag=None, end=None, seg_len=2.0):
    rec = make_record(t, antenna, rssi, phase, freq, tag)
    r = rec.readings
    end = float(r.t[-1]) if end is None else end
    return Segment(0, end, seg_len, r, r, 0)


def test_ten_second_stream_gives_ten_segments():
    rec = make_record(np.linspace(0.05, 9.95, 50), labels=[(0, 10, I)])
    segs = segment_stream(rec, SegmentationConfig(segment_len=2.0, step=1.0))
    assert [s.end_time for s in segs] == [float(i) for i in range(1, 11)]


def test_majority_label_in_bed():
    # 7 in-bed readings then 3 out-of-bed readings inside one 2 s segment ending at t=2
    t = np.concatenate([np.linspace(0.1, 1.3, 7), np.linspace(1.6, 1.9, 3)])
    rec = make_record(t, labels=[(0, 1.5, I), (1.5, 4, O)])
    segs = segment_stream(rec, SegmentationConfig(segment_len=2.0, step=2.0))
    assert len(segs[0].readings) == 10
    assert segs[0].label == int(I)


def test_empty_segments_are_kept_and_flagged():
    rec = make_record([0.2, 5.9], labels=[(0, 6, I)])
    segs = segment_stream(rec, SegmentationConfig(segment_len=1.0, step=1.0))
    assert len(segs) == 6
    assert [s.empty for s in segs] == [False, True, True, True, True, False]


def test_segment_membership_count_interior(small_cohort):
    rec = small_cohort[0].record
    cfg = SegmentationConfig(segment_len=2.0, step=0.5)
    segs = segment_stream(rec, cfg)
    counts = np.zeros(len(rec.readings), dtype=int)
    t = rec.readings.t
    for s in segs:
        lo = np.searchsorted(t, s.end_time - cfg.segment_len, side="right")
        hi = np.searchsorted(t, s.end_time, side="right")
        assert len(s.readings) == hi - lo
        counts[lo:hi] += 1
    interior = (t > cfg.segment_len) & (t <= segs[-1].end_time - cfg.segment_len)
    assert np.all(counts[interior] == math.ceil(cfg.segment_len / cfg.step))
    # brute force on a slice
    sub = t[interior][:200]
    member = oracles.segment_membership(sub.tolist(), cfg.step, cfg.segment_len, len(segs))
    assert all(len(m) == 4 for m in member)


def test_extended_contains_segment(small_cohort):
    for s in segment_stream(small_cohort[1].record, SegmentationConfig())[:400]:
        assert set(s.readings.t.tolist()) <= set(s.extended.t.tolist())
        assert np.all(np.diff(s.readings.t) >= 0)


def test_cfpr_direct_difference():
    s = seg_of([0.0, 0.1], phase=[0.1, 0.3])
    rates, _ = compute_cfpr(s.readings, 1)
    np.testing.assert_allclose(rates, [2.0])


def test_cfpr_wraparound():
    s = seg_of([0.0, 0.1], phase=[6.2, 0.1])
    rates, _ = compute_cfpr(s.readings, 1)
    step = oracles.wrap(0.1 - 6.2)
    assert step == pytest.approx(0.18318530717958605, abs=1e-12)
    np.testing.assert_allclose(rates, [step / 0.1], rtol=1e-12)
    assert rates[0] == pytest.approx(1.8318, abs=1e-4)


def test_cfpr_skips_channel_change():
    s = seg_of([0.0, 0.1], freq=[920.5, 921.0])
    assert compute_cfpr(s.readings, 1)[0].size == 0


def test_cfpr_counts_zero_dt():
    s = seg_of([0.0, 0.0, 0.1], phase=[1.0, 1.1, 1.2])
    rates, n_zero = compute_cfpr(s.readings, 1)
    assert n_zero == 1
    assert rates.size == 1


def test_wrap_phase_range():
    d = np.linspace(-20, 20, 1001)
    w = wrap_phase(d)
    assert np.all(w >= -math.pi) and np.all(w < math.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(d), atol=1e-12)


def test_moving_flag_examples():
    t = np.array([0.0, 1.0, 2.0])
    assert moving_flag(np.array([-60.0, -55.0, -50.0]), t) == 1
    assert moving_flag(np.array([-50.0, -55.0, -60.0]), t) == 0


def test_moving_flag_ties_use_first_occurrence():
    t = np.arange(4.0)
    # max at t=0 and t=3, min at t=1 -> first max (t=0) is earlier -> 0
    assert moving_flag(np.array([-50.0, -60.0, -55.0, -50.0]), t) == 0


def test_moving_flag_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = 20
        t = np.sort(rng.uniform(0, 2, n))
        rssi = np.round(rng.uniform(-70, -40, n) * 2) / 2
        s = seg_of(t, rssi=rssi)
        assert moving_flag(rssi, t) == oracles.moving(list(s.readings))


def test_event_features_counts():
    s = seg_of(np.arange(10) * 0.1, antenna=[1] * 5 + [2] * 3 + [3] * 2)
    rc, om, last = event_features(s, ANTS)
    np.testing.assert_allclose(rc, [0.5, 0.3, 0.2])
    assert om.tolist() == [1, 0, 0]
    assert last.tolist() == [0, 0, 1]


def test_event_features_single_antenna():
    s = seg_of(np.arange(4) * 0.1, antenna=[3] * 4)
    rc, om, _ = event_features(s, ANTS)
    assert rc.tolist() == [0, 0, 1]
    assert om.tolist() == [0, 0, 1]


def test_omega_tie_goes_to_lowest_antenna():
    s = seg_of(np.arange(4) * 0.1, antenna=[3, 2, 3, 2])
    _, om, _ = event_features(s, ANTS)
    assert om.tolist() == [0, 1, 0]


def test_empty_segment_is_zero_vector():
    empty = Segment(0, 1.0, 2.0, ReadingTable.empty(), ReadingTable.empty(), 0)
    rc, om, last = event_features(empty, ANTS)
    assert not rc.any() and not om.any() and not last.any()
    fv = extract_features(empty, Mode.IDSENSOR, ANTS)
    assert not fv.values.any()


def test_single_id_segment():
    s = seg_of(np.arange(5) * 0.1, tag=[2] * 5)
    fv = extract_features(s, Mode.IDSENSOR, ANTS)
    names = fv.layout.names
    v = dict(zip(names, fv.values))
    assert (v["id_last_1"], v["id_last_2"]) == (0.0, 1.0)
    assert (v["ri_1"], v["ri_2"]) == (0.0, 1.0)


def test_layout_dimensions_and_names_unique():
    for mode, dim in ((Mode.TAG, 54), (Mode.IDSENSOR, 122)):
        lay = FeatureLayout(mode, ANTS)
        assert lay.dim == dim
        assert len(set(lay.names)) == dim


def test_tag_and_idsensor_share_common_blocks(small_cohort):
    segs = segment_stream(small_cohort[0].record, SegmentationConfig())[100:300]
    n_tag = FeatureLayout(Mode.TAG, ANTS).dim
    for s in segs:
        a = extract_features(s, Mode.TAG, ANTS).values
        b = extract_features(s, Mode.IDSENSOR, ANTS).values
        np.testing.assert_array_equal(a, b[:n_tag])


def test_features_match_naive_oracle(small_cohort):
    rng = np.random.default_rng(0)
    pool = [s for p in small_cohort for s in segment_stream(p.record, SegmentationConfig())]
    for i in rng.choice(len(pool), size=200, replace=False):
        s = pool[i]
        for mode in ("tag", "idsensor"):
            got = extract_features(s, mode, ANTS).values
            want = np.array(oracles.features(s, mode, ANTS))
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_feature_extraction_is_pure(small_cohort):
    s = segment_stream(small_cohort[2].record, SegmentationConfig())[250]
    a = extract_features(s, "idsensor", ANTS).values
    b = extract_features(s, "idsensor", ANTS).values
    assert a.tobytes() == b.tobytes()


def test_rc_and_ri_sum_to_one(small_cohort):
    lay = FeatureLayout(Mode.IDSENSOR, ANTS)
    names = lay.names
    rc_idx = [names.index(f"rc_{k}") for k in ANTS]
    ri_idx = [names.index("ri_1"), names.index("ri_2")]
    X, _, _, empty = featurize_record(small_cohort[0].record, SegmentationConfig(), Mode.IDSENSOR, ANTS)
    np.testing.assert_allclose(X[~empty][:, rc_idx].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(X[~empty][:, ri_idx].sum(axis=1), 1.0, atol=1e-12)


def test_normalizer_constant_column_unchanged():
    X = np.column_stack([np.full(10, 3.5), np.arange(10.0)])
    out = apply_normalizer(fit_normalizer(X), X)
    np.testing.assert_array_equal(out[:, 0], X[:, 0])


def test_normalized_training_set_moments():
    rng = np.random.default_rng(2)
    X = rng.normal(5, 3, size=(200, 6))
    X[:, 2] = 1.0
    out = fit_normalizer(X).apply(X)
    varying = np.array([True, True, False, True, True, True])
    assert np.all(np.abs(out[:, varying].mean(axis=0)) < 1e-9)
    sd = out.std(axis=0)
    assert np.all((np.abs(sd - 1) < 1e-9) | (sd == 0) | ~varying)


def test_normalizer_empty_input_rejected():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 3)))


def test_normalizer_is_fold_specific(small_cohort):
    X = [featurize_record(p.record, SegmentationConfig(), "tag", ANTS)[0] for p in small_cohort]
    a = fit_normalizer(np.vstack([X[0], X[1]]))
    b = fit_normalizer(np.vstack([X[1], X[2]]))
    assert not np.allclose(a.mean, b.mean)


def test_feature_csv_header(tmp_path):
    lay = FeatureLayout(Mode.TAG, ANTS)
    p = tmp_path / "f.csv"
    write_feature_csv(p, lay, [(0, 1.0, 0, np.zeros(lay.dim))])
    header = p.read_text().splitlines()[0].split(",")
    assert header[:3] == ["patient_id", "end_time_s", "label"]
    assert tuple(header[3:]) == lay.names


def test_segmentation_config_validation():
    with pytest.raises(ValueError):
        SegmentationConfig(segment_len=0)
    with pytest.raises(ValueError):
        SegmentationConfig(extended_factor=2)
