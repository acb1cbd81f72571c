# network/errors.py
from typing import Optional

import numpy as np


class SwinglineError(Exception):
    """Root of every error raised by the toolkit."""


# ---------- configuration / case input ----------
class ConfigurationError(SwinglineError, ValueError):
    pass


class CaseError(SwinglineError, ValueError):
    pass


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class DanglingReferenceError(CaseError):
    pass


class DuplicateBusError(CaseError):
    pass


class UnsupportedCaseError(CaseError):
    pass


class LoadModelError(SwinglineError, ValueError):
    pass


# ---------- quasi power flow ----------
class QpfError(SwinglineError):
    pass


class QpfDimensionError(QpfError, ValueError):
    pass


class QpfDivergenceError(QpfError):
    def __init__(self, message: str, last_iterate: np.ndarray, mismatch: float):
        self.last_iterate = last_iterate
        self.mismatch = mismatch
        super().__init__(f"{message} (mismatch={mismatch:.3e})")


class QpfSingularJacobianError(QpfError):
    pass


# ---------- linearization ----------
class LinearizationError(SwinglineError):
    pass


class StructuralSingularityError(LinearizationError):
    pass


class OrderTruncationError(LinearizationError):
    def __init__(self, message: str, last_order: int):
        self.last_order = last_order
        super().__init__(f"{message} (last stable order {last_order})")


class PadePoleError(LinearizationError):
    def __init__(self, message: str, block: str = ""):
        self.block = block
        tag = f"[{block}] " if block else ""
        super().__init__(f"{tag}{message}")


class PadeDegeneracyWarning(UserWarning):
    pass


class ReductionError(LinearizationError):
    pass


class SensitivityError(LinearizationError):
    pass


class UndefinedBoundError(LinearizationError, ValueError):
    pass


# ---------- swing solution ----------
class SwingError(SwinglineError):
    pass


class SingularSwingError(SwingError):
    def __init__(self, message: str, rank: int):
        self.rank = rank
        super().__init__(f"{message} (rank {rank})")


class DefectiveSystemError(SwingError):
    def __init__(self, message: str, eigenvalue: complex):
        self.eigenvalue = eigenvalue
        super().__init__(f"{message} (repeated eigenvalue {eigenvalue:.6g})")


class FitDegeneracyError(SwingError):
    pass


# ---------- region tracking ----------
class RegionError(SwinglineError):
    pass


class InconsistentStartError(RegionError):
    pass


class SingularJacobianError(RegionError):
    pass


class ReinitFailure(RegionError):
    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


# ---------- reference simulators ----------
class SimulationError(SwinglineError):
    pass


class TruncatedCoefficientError(SimulationError):
    def __init__(self, message: str, order: int):
        self.order = order
        super().__init__(f"{message} (order {order})")


class RadiusCollapseError(SimulationError):
    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)


# ---------- assessment ----------
class AssessmentError(SwinglineError):
    pass


class TargetNotFoundError(AssessmentError, ValueError):
    pass


class EngineFailure(AssessmentError):
    def __init__(self, message: str, engine: str, partial=None):
        self.engine = engine
        self.partial = partial
        super().__init__(f"[{engine}] {message}")
