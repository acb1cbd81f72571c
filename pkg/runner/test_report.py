# runner/test_report.py
"""
Report files.

 Group 1: single run
   1. four files with the documented columns and verdict fields
   2. eigenmodes listed per analytic segment

 Group 2: comparisons and diagnostics
   3. agreement table with one row per machine; theta matrix and clusters
   4. standalone frames and JSON (nan becomes null)

 Group 3: robustness
   5. identical inputs give byte-identical files
   6. nothing to report or an unwritable target raise AssessmentError
"""
import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from network.case_model import GeneratorDynamic
from network.errors import AssessmentError
from dynamics.trajectory import PiecewiseTrajectory, RegionSegment, state_from_angles
from runner.diagnostics import PartitionDiagnostic
from runner.report import emit_frame, emit_json, emit_partition, emit_report
from runner.verifier import angle_deviation, verify_run

GENS = (
    GeneratorDynamic(1, M=0.1, D=0.1, E=1.05, xd_t=0.1, p_mech=0.5),
    GeneratorDynamic(2, M=0.03, D=0.03, E=1.0, xd_t=0.1, p_mech=0.5),
)


class _Modes:
    def mode_frame(self):
        return pd.DataFrame({"real": [-0.5], "imag": [8.0], "pair": [True],
                             "frequency_hz": [8.0 / (2 * math.pi)], "damping_ratio": [0.0624]})


def _run(engine="analytic", scale=1.0, with_modes=False):
    traj = PiecewiseTrajectory(gens=GENS, engine=engine, km_ids=(4,))
    for t in np.linspace(0.0, 1.0, 51):
        delta = np.array([0.0, scale * 0.4 * math.sin(2 * math.pi * t)])
        w, dw = state_from_angles(GENS, delta, np.zeros(2))
        traj.append(float(t), w, dw, ref_angle=0.01 * t, v_km=[complex(1.0, 0.1 * t)])
    traj.segments.append(RegionSegment(0.0, 0.5, engine, "boundary", trigger="o1",
                                       solution=_Modes() if with_modes else None, max_constraint=0.01))
    traj.segments.append(RegionSegment(0.5, 1.0, engine, "horizon", max_constraint=0.002))
    traj.network_solves = 4
    return traj


# ═══ Group 1: single run ═══

def test_single_run_files(tmp_path):
    traj = _run()
    verdict = verify_run(traj, 1.0)
    paths = emit_report(str(tmp_path), {"analytic": traj}, {"analytic": verdict})
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["modes_analytic.txt", "segments_analytic.csv", "trajectory_analytic.csv", "verdict_analytic.json"]

    frame = pd.read_csv(tmp_path / "trajectory_analytic.csv")
    assert list(frame.columns[:7]) == ["t", "delta_coi_1", "delta_coi_2", "omega_1", "omega_2", "vx_4", "vy_4"]
    assert {"ex_1", "ey_2", "delta_ref_2", "delta_2"} <= set(frame.columns)
    assert len(frame) == 51
    assert frame["vy_4"].iloc[-1] == pytest.approx(0.1)

    body = json.loads((tmp_path / "verdict_analytic.json").read_text(encoding="utf-8"))
    assert {"status", "decision_time", "segments", "max_excursion"} <= set(body)
    assert body["status"] == "stable" and body["segments"] == 2
    assert body["max_excursion"] == 0.01

    segments = pd.read_csv(tmp_path / "segments_analytic.csv")
    assert list(segments["exit_cause"]) == ["boundary", "horizon"]
    assert list(segments["segment_id"]) == [1, 2]
    assert {"reinit_iterations", "reinit_residual", "relinearized"} <= set(segments.columns)
    assert "no analytic segments" in (tmp_path / "modes_analytic.txt").read_text(encoding="utf-8")


def test_modes_per_segment(tmp_path):
    traj = _run(with_modes=True)
    emit_report(str(tmp_path), {"analytic": traj}, {})
    text = (tmp_path / "modes_analytic.txt").read_text(encoding="utf-8")
    assert text.startswith("segment 1  t=[0, 0.5]  exit=boundary")
    assert "frequency_hz" in text and "segment 2" not in text
    assert not (tmp_path / "verdict_analytic.json").exists()


# ═══ Group 2: comparisons and diagnostics ═══

def test_comparison_and_partition_files(tmp_path):
    ref, fast = _run("tds"), _run("analytic", scale=1.01)
    table = angle_deviation(fast, ref)
    table.insert(0, "engine", "analytic")
    diag = PartitionDiagnostic(theta=np.array([[0.0, 0.7], [0.7, 0.0]]), bus_ids=[4, 9], clusters=[[4], [9]], k=2)
    emit_report(str(tmp_path), {"tds": ref, "analytic": fast},
                {"tds": verify_run(ref, 1.0), "analytic": verify_run(fast, 1.0)},
                agreement=table, diagnostic=diag)

    agreement = pd.read_csv(tmp_path / "agreement.csv")
    assert list(agreement["machine"]) == [1, 2]
    assert agreement["relative_deviation"].max() == pytest.approx(0.01, rel=1e-6)

    theta = pd.read_csv(tmp_path / "theta.csv", index_col="bus")
    assert list(theta.columns) == ["4", "9"] and list(theta.index) == [4, 9]
    assert theta.loc[4, "9"] == 0.7
    assert json.loads((tmp_path / "clusters.json").read_text(encoding="utf-8"))["clusters"] == [[4], [9]]

    only = tmp_path / "only"
    assert len(emit_partition(str(only), diag)) == 2


def test_standalone_outputs(tmp_path):
    path = emit_frame(str(tmp_path / "nested" / "curve.csv"), pd.DataFrame({"r": [0.8, 1.0], "ratio": [1.025, 1.0]}))
    assert open(path, encoding="utf-8").read() == "r,ratio\n0.8,1.025\n1,1\n"
    path = emit_json(str(tmp_path / "summary.json"), {"tau": float("nan"), "z": complex(1, -2), "n": np.int64(3)})
    assert json.loads(open(path, encoding="utf-8").read()) == {"n": 3, "tau": None, "z": [1.0, -2.0]}


# ═══ Group 3: robustness ═══

def test_reports_are_deterministic(tmp_path):
    def emit(folder):
        traj = _run(with_modes=True)
        return emit_report(str(folder), {"analytic": traj}, {"analytic": verify_run(traj, 1.0)},
                           extra={"note": "rerun", "value": 1 / 3})

    first = emit(tmp_path / "a")
    second = emit(tmp_path / "b")
    again = emit(tmp_path / "a")
    for p, q, r in zip(first, second, again):
        assert open(p, "rb").read() == open(q, "rb").read() == open(r, "rb").read()
    assert not [f for f in os.listdir(tmp_path / "a") if f.startswith(".tmp_")]


def test_report_errors(tmp_path):
    with pytest.raises(AssessmentError):
        emit_report(str(tmp_path), {}, {})
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    with pytest.raises(AssessmentError):
        emit_report(str(blocker / "run"), {"analytic": _run()}, {})
