# runner/report.py
"""
Run artifacts. Per engine:
  trajectory_<engine>.csv   t, delta_coi_<gen>, omega_<gen>, vx_<bus>, vy_<bus>, ex_<gen>, ey_<gen>,
                            delta_ref_<gen>, delta_<gen>
  verdict_<engine>.json     status, decision_time, segments, max_excursion, ...
  modes_<engine>.txt        eigenmodes of every analytic segment
  segments_<engine>.csv     region log (id, times, exit cause, re-init iterations and |F|, relinearized)
Optional: agreement.csv, theta.csv, clusters.json, summary.json.
"""
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from network.errors import AssessmentError
from dynamics.trajectory import PiecewiseTrajectory
from runner.diagnostics import PartitionDiagnostic
from runner.verifier import StabilityVerdict

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def _clean(value: Any) -> Any:
    """JSON-safe copy: floats rounded to 10 significant digits, nan/inf -> None."""
    if isinstance(value, Mapping):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, pd.DataFrame):
        return _clean(value.to_dict(orient="records"))
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return float(FLOAT_FORMAT % value) if math.isfinite(value) else None
    if isinstance(value, complex):
        return [_clean(value.real), _clean(value.imag)]
    return value


def _write_atomic(path: str, text: str) -> str:
    folder = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _csv(frame: pd.DataFrame, index: bool = False, index_label: Optional[str] = None) -> str:
    return frame.to_csv(index=index, index_label=index_label, float_format=FLOAT_FORMAT, lineterminator="\n")


def _json(payload: Any) -> str:
    return json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n"


def modes_text(traj: PiecewiseTrajectory) -> str:
    blocks = []
    for i, seg in enumerate(traj.segments, start=1):
        if seg.solution is None or not hasattr(seg.solution, "mode_frame"):
            continue
        frame = seg.solution.mode_frame()
        head = f"segment {i}  t=[{FLOAT_FORMAT % seg.t_start}, {FLOAT_FORMAT % seg.t_end}]  exit={seg.exit_cause}"
        body = frame.to_string(index=False, float_format=lambda x: FLOAT_FORMAT % x)
        blocks.append(f"{head}\n{body}\n")
    if not blocks:
        return f"no analytic segments in the {traj.engine} run\n"
    return "\n".join(blocks)


# ------------------ public API ------------------

def emit_report(
    out_dir: str,
    trajectories: Mapping[str, PiecewiseTrajectory],
    verdicts: Mapping[str, StabilityVerdict],
    agreement: Optional[pd.DataFrame] = None,
    diagnostic: Optional[PartitionDiagnostic] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> List[str]:
    """Write every artifact for one run; returns the written paths in write order."""
    if not trajectories:
        raise AssessmentError("nothing to report: no trajectory")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise AssessmentError(f"cannot create report directory {out_dir}: {exc}") from exc

    files: Dict[str, str] = {}
    for engine in sorted(trajectories):
        traj = trajectories[engine]
        files[f"trajectory_{engine}.csv"] = _csv(traj.to_frame())
        verdict = verdicts.get(engine)
        if verdict is not None:
            files[f"verdict_{engine}.json"] = _json(verdict.to_dict())
        files[f"modes_{engine}.txt"] = modes_text(traj)
        files[f"segments_{engine}.csv"] = _csv(traj.segment_frame())
    if agreement is not None and not agreement.empty:
        files["agreement.csv"] = _csv(agreement)
    if diagnostic is not None:
        files["theta.csv"] = _csv(diagnostic.theta_frame(), index=True, index_label="bus")
        files["clusters.json"] = _json(diagnostic.to_dict())
    if extra:
        files["summary.json"] = _json(extra)

    written = []
    try:
        for name, text in files.items():
            written.append(_write_atomic(os.path.join(out_dir, name), text))
    except OSError as exc:
        raise AssessmentError(f"cannot write report into {out_dir}: {exc}") from exc
    logger.info("Report: %d files in %s", len(written), out_dir)
    return written


def _emit(path: str, text: str) -> str:
    folder = os.path.dirname(path)
    try:
        if folder:
            os.makedirs(folder, exist_ok=True)
        return _write_atomic(path, text)
    except OSError as exc:
        raise AssessmentError(f"cannot write {path}: {exc}") from exc


def emit_text(path: str, text: str) -> str:
    return _emit(path, text)


def emit_frame(path: str, frame: pd.DataFrame) -> str:
    """One standalone CSV (sweeps, load-error curves)."""
    return _emit(path, _csv(frame))


def emit_json(path: str, payload: Any) -> str:
    return _emit(path, _json(payload))


def emit_partition(out_dir: str, diagnostic: PartitionDiagnostic) -> List[str]:
    return [
        _emit(os.path.join(out_dir, "theta.csv"), _csv(diagnostic.theta_frame(), index=True, index_label="bus")),
        _emit(os.path.join(out_dir, "clusters.json"), _json(diagnostic.to_dict())),
    ]
