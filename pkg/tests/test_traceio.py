"""On-disk round trips: trace CSV, epoch metrics CSV, meta sidecar, SVG."""

import json
import math

import numpy as np
import pytest

from sawtoothlab.analysis import esp_metrics
from sawtoothlab.trainer import TRACE_COLUMNS, RunConfig, run, run_toy
from sawtoothlab.traceio import (
    read_trace_csv,
    render_line_chart_svg,
    write_epochs_csv,
    write_meta_json,
    write_trace_csv,
)


@pytest.fixture(scope="module")
def small_result():
    return run(
        RunConfig(
            num_functions=40, dim=20, problem_seed=2, seed=2, num_epochs=2,
            tracked_batch=3, probe_stride=4,
        )
    )


def test_trace_round_trip_is_exact(small_result, tmp_path):
    path = tmp_path / "trace.csv"
    write_trace_csv(small_result.trace, path)
    back = read_trace_csv(path)
    assert len(back) == len(small_result.trace)
    assert back.probes_enabled
    for name in TRACE_COLUMNS:
        np.testing.assert_array_equal(
            getattr(back, name), getattr(small_result.trace, name), err_msg=name
        )


def test_probe_gaps_written_as_empty_cells(small_result, tmp_path):
    path = tmp_path / "trace.csv"
    write_trace_csv(small_result.trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    # step 1 is skipped by the stride of 4: all five probe cells empty
    skipped = lines[2].split(",")
    assert skipped[TRACE_COLUMNS.index("tracked_loss"):] == [""] * 5
    probed = lines[1].split(",")
    assert all(cell != "" for cell in probed)


def test_write_is_idempotent(small_result, tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace_csv(small_result.trace, p1)
    write_trace_csv(read_trace_csv(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_probeless_trace_reads_back_probeless(tmp_path):
    res = run_toy("fixed", 0.0, epochs=3)
    path = tmp_path / "toy.csv"
    write_trace_csv(res.trace, path)
    back = read_trace_csv(path)
    assert not back.probes_enabled
    np.testing.assert_array_equal(back.batch_loss, res.trace.batch_loss)
    assert np.isnan(back.tracked_loss).all()


def test_read_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope,nope\n")
    with pytest.raises(ValueError):
        read_trace_csv(bad)
    short_row = tmp_path / "short.csv"
    short_row.write_text(",".join(TRACE_COLUMNS) + "\n1,2\n")
    with pytest.raises(ValueError):
        read_trace_csv(short_row)


def test_non_finite_values_survive_round_trip(tmp_path):
    cfg = RunConfig(
        num_functions=30, dim=10, problem_seed=1, seed=1, num_epochs=2,
        probe=False, tracked_batch=0, divergence_ceiling=1e-3,
    )
    res = run(cfg)
    assert res.diverged
    path = tmp_path / "diverged.csv"
    write_trace_csv(res.trace, path)
    back = read_trace_csv(path)
    assert math.isnan(back.g_norm[-1])


def test_epochs_csv(small_result, tmp_path):
    metrics = esp_metrics(small_result.trace)
    path = tmp_path / "epochs.csv"
    write_epochs_csv(metrics, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("epoch,loss_start,loss_end,rise,drop")
    assert len(lines) == 1 + len(metrics)
    first = lines[1].split(",")
    assert int(first[0]) == metrics[0].epoch
    assert float(first[3]) == metrics[0].rise
    # the last epoch has no successor; its drop is written as nan
    assert "nan" in lines[-1]


def test_meta_json_stable_and_plain(tmp_path):
    cfg = RunConfig(num_functions=30, dim=10, problem_seed=1, seed=1, num_epochs=1,
                    tracked_batch=0)
    meta = {
        "config": cfg,
        "final": np.float64(1.5),
        "count": np.int64(7),
        "curve": np.array([1.0, 2.0]),
    }
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    write_meta_json(meta, p1)
    write_meta_json(meta, p2)
    assert p1.read_bytes() == p2.read_bytes()
    data = json.loads(p1.read_text())
    assert data["config"]["lr"] == 0.06
    assert data["final"] == 1.5
    assert data["count"] == 7
    assert data["curve"] == [1.0, 2.0]
    assert p1.read_text().endswith("\n")


def test_svg_smoke(tmp_path):
    path = tmp_path / "chart.svg"
    x = np.arange(50, dtype=float)
    render_line_chart_svg(
        path,
        [("loss", x, np.sin(x / 5.0)), ("other", x, np.full(50, np.nan))],
        title="demo",
        x_label="step",
        y_label="value",
    )
    text = path.read_text()
    assert text.startswith("<svg")
    assert text.rstrip().endswith("</svg>")
    assert "polyline" in text
    assert "demo" in text
    # all-NaN series contributes a legend entry but no polyline points
    assert text.count("<polyline") == 1


def test_svg_empty_series(tmp_path):
    path = tmp_path / "empty.svg"
    render_line_chart_svg(path, [])
    assert "<svg" in path.read_text()
