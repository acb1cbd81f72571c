# runner/locator.py
import logging
import re
from difflib import get_close_matches
from typing import Any, List, Sequence, Tuple

from network.case_model import BranchRecord, BusKind, BusRecord
from network.errors import TargetNotFoundError
from network.zip_loads import ZipLoadSpec

logger = logging.getLogger(__name__)

# -------- target parsing --------
BRANCH_RE = re.compile(r"^\s*(\d+)\s*[-–:,/ ]\s*(\d+)\s*$")


def parse_branch_target(target: Any) -> Tuple[int, int]:
    """
    Accepts "5-7", "5 7", "5,7" or a two-element sequence.
    Orientation does not matter for matching.
    """
    if isinstance(target, str):
        m = BRANCH_RE.match(target)
        if not m:
            raise TargetNotFoundError(f"cannot read branch target '{target}' (expected e.g. '5-7')")
        return int(m.group(1)), int(m.group(2))
    if isinstance(target, (list, tuple)) and len(target) == 2:
        return int(target[0]), int(target[1])
    raise TargetNotFoundError(f"cannot read branch target {target!r}")


def parse_bus_target(target: Any) -> int:
    try:
        return int(str(target).strip())
    except ValueError:
        raise TargetNotFoundError(f"cannot read bus target {target!r}") from None


def _suggest(wanted: str, labels: Sequence[str]) -> str:
    close = get_close_matches(wanted, list(labels), n=3, cutoff=0.3)
    return f"; closest: {', '.join(close)}" if close else ""


# -------- public API --------
def locate_branch(branches: Sequence[BranchRecord], target: Any) -> int:
    """Index of the in-service branch joining the two target buses."""
    a, b = parse_branch_target(target)
    hits = [
        i for i, br in enumerate(branches)
        if br.in_service and {br.from_bus, br.to_bus} == {a, b}
    ]
    if not hits:
        labels = [br.label for br in branches if br.in_service]
        raise TargetNotFoundError(f"no in-service branch {a}-{b}{_suggest(f'{a}-{b}', labels)}")
    if len(hits) > 1:
        logger.warning("Branch %d-%d has %d parallel circuits; taking the first", a, b, len(hits))
    return hits[0]


def locate_load_bus(zips: Sequence[ZipLoadSpec], target: Any) -> int:
    bus = parse_bus_target(target)
    load_buses = sorted({z.bus for z in zips if z.S0 != 0})
    if bus not in load_buses:
        raise TargetNotFoundError(
            f"bus {bus} carries no load{_suggest(str(bus), [str(b) for b in load_buses])}"
        )
    return bus


def locate_bus(buses: Sequence[BusRecord], target: Any) -> int:
    """A Kbus or Mbus of the original case (internal machine nodes are not targets)."""
    bus = parse_bus_target(target)
    ids = [b.id for b in buses if b.kind != BusKind.IBUS]
    if bus not in ids:
        raise TargetNotFoundError(f"no bus {bus}{_suggest(str(bus), [str(i) for i in ids])}")
    return bus


def load_buses(zips: Sequence[ZipLoadSpec]) -> List[int]:
    return sorted({z.bus for z in zips if z.S0 != 0})
