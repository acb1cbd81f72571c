# runner/session_manager.py
"""
A session is a parsed case together with its pre-disturbance operating point.
Every scenario on the same case starts from the same session.
"""
import logging
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from network.case_model import AugmentedNetwork, CaseData, network_from_case, parse_case
from network.qpf import QPF_TOL, OperatingPoint, solve_operating_point
from network.zip_loads import ZipLoadSpec, as_load_type

logger = logging.getLogger(__name__)

CASES_DIR = "cases"
CASE_SUFFIX = ".case"


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def case_path(name: str, cases_dir: str = CASES_DIR) -> str:
    """A path to an existing file is used as is; otherwise <cases_dir>/<name>.case."""
    if os.path.isfile(name):
        return name
    stem = name[: -len(CASE_SUFFIX)] if name.endswith(CASE_SUFFIX) else name
    path = os.path.join(cases_dir, f"{stem}{CASE_SUFFIX}")
    if os.path.exists(path):
        return path
    raise FileNotFoundError(f"No case found for {name} (looked in {cases_dir})")


def list_cases(cases_dir: str = CASES_DIR) -> List[str]:
    if not os.path.isdir(cases_dir):
        return []
    return sorted(f[: -len(CASE_SUFFIX)] for f in os.listdir(cases_dir) if f.endswith(CASE_SUFFIX))


def load_case(name: str, cases_dir: str = CASES_DIR) -> CaseData:
    path = case_path(name, cases_dir)
    stem = os.path.splitext(os.path.basename(path))[0]
    with open(path, "r", encoding="utf-8") as f:
        case = parse_case(f.read(), stem)
    logger.info("Loaded case %s: %d buses, %d branches, %d machines",
                stem, len(case.buses), len(case.branches), len(case.gens))
    return case


@dataclass(frozen=True, eq=False)
class CaseSession:
    case: CaseData
    net: AugmentedNetwork
    op: OperatingPoint
    load_type: Optional[str] = None
    tol: float = QPF_TOL

    @property
    def name(self) -> str:
        return self.case.name

    @property
    def zips(self) -> Tuple[ZipLoadSpec, ...]:
        return self.case.zips

    def with_load_type(self, kind: str) -> "CaseSession":
        """Same case with every load converted to one type ('z', 'i' or 'p')."""
        return start_session(self.case, load_type=kind, tol=self.tol)


def start_session(case: CaseData, load_type: Optional[str] = None, tol: float = QPF_TOL) -> CaseSession:
    if load_type is not None:
        case = replace(case, zips=tuple(as_load_type(case.zips, load_type)))
    net = network_from_case(case)
    op = solve_operating_point(net, case.zips, tol=tol)
    logger.info("Session %s%s ready after %d QPF solves",
                case.name, f" ({load_type.upper()} loads)" if load_type else "", op.qpf_solves)
    return CaseSession(case=case, net=net, op=op, load_type=load_type, tol=tol)
