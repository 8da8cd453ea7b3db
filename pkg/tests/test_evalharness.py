import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from freeze_oracles import percent_cases
from vicsfm.evalharness import (DEFAULT_WINDOW, MatchCurve, MetricsRow, anchor_match_curve, compare_rows,
                                curve_svg, format_percent, group_starts, read_metrics_csv, table_metrics,
                                write_eval_outputs, write_metrics_csv)
from vicsfm.sfm import CameraIntrinsics, Observation, Pose, Reconstruction


# --- percentages and metric rows ---

@pytest.mark.parametrize("n,d,text", [(438, 439, "99.77%"), (2165, 2302, "94.05%"), (823, 829, "99.28%")])
def test_published_table_percentages(n, d, text):
    assert format_percent(n, d) == text


def test_percentages_match_frozen_oracle(frozen):
    assert [list(c) for c in percent_cases()] == [row[:2] for row in frozen["percent"]]
    for n, d, text in frozen["percent"]:
        assert format_percent(n, d) == text


@given(st.integers(1, 10 ** 7).flatmap(lambda d: st.tuples(st.integers(0, d), st.just(d))))
def test_percent_matches_decimal_oracle(nd):
    assert format_percent(*nd) == oracles.percent_half_up(*nd)


def test_percent_half_way_rounds_up():
    assert format_percent(1, 800) == "0.13%"  # 0.125
    assert format_percent(1, 1600) == "0.06%"  # 0.0625
    assert format_percent(1, 8) == "12.50%"
    assert format_percent(5, 5) == "100.00%"
    with pytest.raises(ValueError):
        format_percent(1, 0)
    with pytest.raises(ValueError):
        format_percent(-1, 3)


def two_frame_recon(counts=(10, 20)):
    """Only the per-frame observation counts matter here, so each point carries one observation."""
    recon = Reconstruction(CameraIntrinsics(100, 50, 50, 0), {0: Pose.identity(), 1: Pose.identity()})
    for frame, n in enumerate(counts):
        for k in range(n):
            recon.add_point(np.zeros(3), [Observation(frame, k, 0, 0)])
    return recon


def test_average_observations():
    recon = two_frame_recon()
    assert recon.n_observations == 30 and len(recon.poses) == 2
    row = table_metrics(recon, 4, "x")
    assert row.avg_observations == 15.0
    assert row.reconstructed_images == 2 and row.reconstructed_pct == "50.00%"
    assert row.points3d == len(recon.points)


def test_table_metrics_preconditions():
    recon = two_frame_recon()
    with pytest.raises(ValueError):
        table_metrics(recon, 0, "x")
    with pytest.raises(ValueError):
        table_metrics(recon, 1, "x")


def test_metrics_row_rejects_inconsistent_percentage():
    with pytest.raises(ValueError):
        MetricsRow("a", 439, 438, 1, 1.0, "99.78%")
    with pytest.raises(ValueError):
        MetricsRow("a", 10, 11, 1, 1.0)


def test_compare_flags_higher_percentage():
    rows = [MetricsRow("raw", 439, 217, 10, 5.0), MetricsRow("vic", 439, 438, 10, 5.0)]
    assert rows[0].reconstructed_pct == "49.43%"
    rep = compare_rows(rows)
    assert rep.winners["reconstructed_pct"] == 1
    assert rep.ties["input_images"]
    assert rep.ties["points3d"] and rep.ties["avg_observations"]


def test_compare_identical_rows_all_tied():
    r = MetricsRow("a", 10, 9, 100, 3.5)
    rep = compare_rows([r, MetricsRow("b", 10, 9, 100, 3.5)])
    assert all(rep.ties.values()) and all(v is None for v in rep.winners.values())
    assert "tie" in rep.to_csv().splitlines()[1]


def test_compare_single_metric_differs():
    a = MetricsRow("a", 10, 9, 100, 3.5)
    b = MetricsRow("b", 10, 9, 101, 3.5)
    rep = compare_rows([a, b])
    assert [m for m, t in rep.ties.items() if not t] == ["points3d"]
    assert rep.winners["points3d"] == 1
    with pytest.raises(ValueError):
        compare_rows([a])


@given(st.lists(st.tuples(st.integers(1, 5000), st.integers(0, 5000), st.integers(0, 10 ** 6),
                          st.floats(0, 1e4, allow_nan=False)), min_size=1, max_size=5))
def test_metrics_csv_roundtrip(raw):
    rows = [MetricsRow(f"row {i}, \"q\"", n, min(r, n), p, a) for i, (n, r, p, a) in enumerate(raw)]
    assert read_metrics_csv(write_metrics_csv(rows)) == rows


def test_metrics_csv_columns():
    text = write_metrics_csv([MetricsRow("a", 439, 438, 7, 1.5)])
    assert text.splitlines() == ["label,input_images,reconstructed_images,reconstructed_pct,points3d,avg_observations",
                                 "a,439,438,99.77%,7,1.5"]


# --- anchor match curve ---

def test_default_window():
    assert DEFAULT_WINDOW == 10


def test_eleven_identical_frames():
    f = oracles.synthetic_descriptor_sequence(1, 37, seed=0)[0]
    curve = anchor_match_curve([f] * 11)
    assert curve.samples == 1
    assert curve.mean_matches == (37.0,) * 10


def test_three_groups_match_frozen(frozen):
    seq = oracles.synthetic_descriptor_sequence(33, 60, seed=3)
    curve = anchor_match_curve(seq, 10, 11, 0.8)
    assert curve.samples == 3
    assert list(curve.mean_matches) == frozen["anchor_3groups"]


def test_forty_three_groups_match_frozen(frozen):
    seq = oracles.synthetic_descriptor_sequence(43 * 11, 24, seed=4)
    curve = anchor_match_curve(seq, samples=43)
    assert curve.samples == 43
    assert list(curve.mean_matches) == frozen["anchor_43groups"]
    assert "samples=43" in curve.to_csv().splitlines()[0]
    assert "window=10" in curve.to_csv().splitlines()[0]


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 6))
def test_curve_matches_live_oracle(seed, window, stride):
    seq = oracles.synthetic_descriptor_sequence(window + 1 + 2 * stride, 12, seed=seed)
    curve = anchor_match_curve(seq, window, stride)
    assert list(curve.mean_matches) == oracles.anchor_curve(seq, window, stride, 0.8)


def test_disjoint_groups_sum():
    seq = oracles.synthetic_descriptor_sequence(33, 20, seed=9)
    whole = anchor_match_curve(seq, 10, 11)
    parts = [anchor_match_curve(seq[11 * g:11 * g + 11], 10, 11) for g in range(3)]
    assert whole.totals == tuple(sum(p.totals[k] for p in parts) for k in range(10))


def test_group_starts():
    assert group_starts(33, 10) == [0, 11, 22]
    assert group_starts(33, 10, stride=5) == [0, 5, 10, 15, 20]
    assert group_starts(33, 10, samples=2) == [0, 11]
    for args in ((10, 10), (33, 0), (33, 10, 0), (33, 10, None, 4)):
        with pytest.raises(ValueError):
            group_starts(*args)


def test_curve_csv_and_svg(tmp_path):
    curve = anchor_match_curve([oracles.synthetic_descriptor_sequence(1, 9, 1)[0]] * 11)
    back = MatchCurve.from_csv(curve.to_csv())
    assert back.mean_matches == curve.mean_matches and back.samples == curve.samples
    lines = curve.to_csv().splitlines()
    assert lines[1] == "offset,mean_matches,samples" and lines[2].startswith("1,9.0,1")
    root = ET.fromstring(curve_svg(curve))
    assert root.tag.endswith("svg")
    paths = write_eval_outputs(tmp_path, [MetricsRow("a", 2, 1, 3, 4.0)], curve)
    assert sorted(p.split("/")[-1] for p in paths) == ["curve.csv", "curve.svg", "metrics.csv"]
