# network/case_model.py
"""
Case documents, nodal admittance assembly and generator-node augmentation.

A case document is plain text made of named numeric tables:

    baseMVA = 100;
    bus = [ id kind Gs(MW) Bs(MVAr) baseKV; ... ];
    branch = [ from to R X B tap status [shift_deg]; ... ];
    gen = [ bus p_mech(MW); ... ];
    dynamics = [ bus M D E xd_t omega0; ... ];
    zip = [ bus P0(MW) Q0(MVAr) fz fi fp; ... ];

Comments start with '%' or '#'. Kind codes: 1 = Mbus, 2 or 3 = Kbus.
"""
import logging
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from network.errors import (
    CaseError,
    CaseSyntaxError,
    DanglingReferenceError,
    DuplicateBusError,
    UnsupportedCaseError,
)
from network.zip_loads import ZipLoadSpec

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9


class BusKind(str, Enum):
    IBUS = "Ibus"
    KBUS = "Kbus"
    MBUS = "Mbus"


@dataclass(frozen=True)
class BusRecord:
    id: int
    kind: BusKind
    base_kv: float = 0.0
    shunt: complex = 0j


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    series_admittance: complex
    line_charging: float = 0.0
    tap: complex = 1.0 + 0j
    in_service: bool = True

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseError(f"branch {self.from_bus}-{self.to_bus} connects a bus to itself")

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class GeneratorDynamic:
    bus: int
    M: float
    D: float
    E: float
    xd_t: float
    p_mech: float
    omega0: float = 2.0 * math.pi * 60.0

    def __post_init__(self):
        if self.M <= 0 or self.E <= 0 or self.xd_t <= 0:
            raise CaseError(
                f"generator at bus {self.bus}: M, E and xd_t must be positive"
            )


@dataclass(frozen=True)
class GenLink:
    kbus: int
    y_mag: float
    g_jj: float
    b_jj: float
    y_jk: complex


@dataclass(frozen=True)
class CaseData:
    name: str
    base_mva: float
    buses: Tuple[BusRecord, ...]
    branches: Tuple[BranchRecord, ...]
    gens: Tuple[GeneratorDynamic, ...]
    zips: Tuple[ZipLoadSpec, ...]


@dataclass(frozen=True)
class CaseDefaults:
    """Machine data used when a source (MATPOWER) carries no dynamics block."""

    inertia_h: float = 5.0
    damping_ratio: float = 1.0
    xd_t: float = 0.2
    e_mag: float = 1.05
    omega0: float = 2.0 * math.pi * 60.0
    zip_split: Tuple[float, float, float] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True, eq=False)
class AugmentedNetwork:
    buses: Tuple[BusRecord, ...]
    branches: Tuple[BranchRecord, ...]
    gens: Tuple[GeneratorDynamic, ...]
    ybus: np.ndarray
    ytr: np.ndarray
    ysh: np.ndarray
    ibus_idx: np.ndarray
    km_idx: np.ndarray
    gen_link: Dict[int, GenLink]
    base_buses: Tuple[BusRecord, ...] = field(default=())
    base_branches: Tuple[BranchRecord, ...] = field(default=())
    index: Dict[int, int] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.buses)

    @property
    def NI(self) -> int:
        return len(self.ibus_idx)

    @property
    def NKM(self) -> int:
        return len(self.km_idx)

    @property
    def ibus_ids(self) -> List[int]:
        return [self.buses[i].id for i in self.ibus_idx]

    @property
    def km_ids(self) -> List[int]:
        return [self.buses[i].id for i in self.km_idx]

    def position(self, bus_id: int) -> int:
        try:
            return self.index[bus_id]
        except KeyError:
            raise DanglingReferenceError(f"bus {bus_id} is not in the network") from None

    def rebuild(
        self,
        branches: Optional[Sequence[BranchRecord]] = None,
        extra_shunts: Optional[Dict[int, complex]] = None,
    ) -> "AugmentedNetwork":
        """New network from the pre-augmentation records with changed branches/shunts."""
        buses = list(self.base_buses)
        if extra_shunts:
            known = {b.id for b in buses}
            for bus_id in extra_shunts:
                if bus_id not in known:
                    raise DanglingReferenceError(f"shunt at unknown bus {bus_id}")
            buses = [
                replace(b, shunt=b.shunt + extra_shunts.get(b.id, 0j)) for b in buses
            ]
        return augment_with_ibus(
            buses, list(branches if branches is not None else self.base_branches), list(self.gens)
        )


# ------------------ parsing ------------------

_ASSIGN_RE = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*=\s*(.*)$")
_KIND_CODES = {1: BusKind.MBUS, 2: BusKind.KBUS, 3: BusKind.KBUS}


def _strip_comment(line: str) -> str:
    for marker in ("%", "#"):
        pos = line.find(marker)
        if pos >= 0:
            line = line[:pos]
    return line


def _parse_row(text: str, line_no: int) -> List[float]:
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise CaseSyntaxError(f"non-numeric table entry in '{text.strip()}'", line_no) from None


def read_tables(text: str) -> Tuple[Dict[str, float], Dict[str, List[Tuple[List[float], int]]]]:
    """
    Tokenize a case document into scalars and tables.
    Table rows keep their source line number for later diagnostics.
    Names are returned without a leading 'mpc.' prefix.
    """
    scalars: Dict[str, float] = {}
    tables: Dict[str, List[Tuple[List[float], int]]] = {}
    open_table: Optional[str] = None
    open_line = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue

        if open_table is not None:
            body, closed = line, False
            if "]" in body:
                body, rest = body.split("]", 1)
                closed = True
                if rest.strip() not in ("", ";"):
                    raise CaseSyntaxError("unexpected text after ']'", line_no)
            for chunk in body.split(";"):
                if chunk.strip():
                    tables[open_table].append((_parse_row(chunk, line_no), line_no))
            if closed:
                open_table = None
            continue

        if line.startswith("function"):
            continue
        m = _ASSIGN_RE.match(line)
        if not m:
            raise CaseSyntaxError(f"cannot parse statement '{line}'", line_no)
        name = m.group(1)
        if name.startswith("mpc."):
            name = name[4:]
        value = m.group(2).strip()

        if value.startswith("["):
            if name in tables:
                raise CaseSyntaxError(f"table '{name}' defined twice", line_no)
            tables[name] = []
            open_table, open_line = name, line_no
            body = value[1:]
            closed = False
            if "]" in body:
                body, rest = body.split("]", 1)
                closed = True
                if rest.strip() not in ("", ";"):
                    raise CaseSyntaxError("unexpected text after ']'", line_no)
            for chunk in body.split(";"):
                if chunk.strip():
                    tables[name].append((_parse_row(chunk, line_no), line_no))
            if closed:
                open_table = None
            continue

        value = value.rstrip(";").strip()
        if value.startswith("'") or value.startswith('"'):
            continue  # string settings such as mpc.version
        try:
            scalars[name] = float(value)
        except ValueError:
            raise CaseSyntaxError(f"bad value for '{name}'", line_no) from None

    if open_table is not None:
        raise CaseSyntaxError(f"table '{open_table}' is never closed", open_line)
    return scalars, tables


def _need(row: List[float], width: int, table: str, line_no: int) -> None:
    if len(row) < width:
        raise CaseSyntaxError(
            f"'{table}' rows need at least {width} columns, got {len(row)}", line_no
        )


def parse_case(text: str, name: str = "case") -> CaseData:
    """
    Parse a case document into bus, branch, generator and ZIP records.
    Loads, shunts and p_mech are converted to p.u. on baseMVA here and nowhere else.
    """
    scalars, tables = read_tables(text)
    base = scalars.get("baseMVA")
    if base is None or base <= 0:
        raise CaseSyntaxError("missing or nonpositive baseMVA")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseSyntaxError(f"missing '{required}' table")

    buses: List[BusRecord] = []
    seen: Dict[int, int] = {}
    for row, line_no in tables["bus"]:
        _need(row, 5, "bus", line_no)
        bus_id, code = int(row[0]), int(row[1])
        if bus_id in seen:
            raise DuplicateBusError(f"line {line_no}: bus {bus_id} already defined on line {seen[bus_id]}")
        if code not in _KIND_CODES:
            raise CaseSyntaxError(f"unknown bus kind code {code}", line_no)
        seen[bus_id] = line_no
        buses.append(
            BusRecord(
                id=bus_id,
                kind=_KIND_CODES[code],
                base_kv=row[4],
                shunt=complex(row[2], row[3]) / base,
            )
        )

    def _check_bus(bus_id: int, what: str, line_no: int) -> None:
        if bus_id not in seen:
            raise DanglingReferenceError(f"line {line_no}: {what} references unknown bus {bus_id}")

    branches: List[BranchRecord] = []
    for row, line_no in tables["branch"]:
        _need(row, 7, "branch", line_no)
        f, t = int(row[0]), int(row[1])
        _check_bus(f, "branch", line_no)
        _check_bus(t, "branch", line_no)
        r, x, b = row[2], row[3], row[4]
        if r == 0 and x == 0:
            raise CaseSyntaxError(f"branch {f}-{t} has zero impedance", line_no)
        ratio = row[5] if row[5] != 0 else 1.0
        shift = math.radians(row[7]) if len(row) > 7 else 0.0
        try:
            branches.append(
                BranchRecord(
                    from_bus=f,
                    to_bus=t,
                    series_admittance=1.0 / complex(r, x),
                    line_charging=b,
                    tap=ratio * complex(math.cos(shift), math.sin(shift)),
                    in_service=row[6] != 0,
                )
            )
        except CaseError as exc:
            raise CaseSyntaxError(str(exc), line_no) from None

    dyn_rows: Dict[int, List[float]] = {}
    for row, line_no in tables.get("dynamics", []):
        _need(row, 6, "dynamics", line_no)
        _check_bus(int(row[0]), "dynamics", line_no)
        dyn_rows[int(row[0])] = row

    gens: List[GeneratorDynamic] = []
    kinds = {b.id: b.kind for b in buses}
    for row, line_no in tables.get("gen", []):
        _need(row, 2, "gen", line_no)
        bus_id = int(row[0])
        _check_bus(bus_id, "gen", line_no)
        if kinds[bus_id] != BusKind.KBUS:
            raise CaseError(f"line {line_no}: generator attached to Mbus {bus_id}")
        if bus_id not in dyn_rows:
            raise CaseError(f"line {line_no}: no dynamics row for generator at bus {bus_id}")
        d = dyn_rows[bus_id]
        gens.append(
            GeneratorDynamic(
                bus=bus_id, M=d[1], D=d[2], E=d[3], xd_t=d[4], omega0=d[5], p_mech=row[1] / base
            )
        )
    gen_buses = {g.bus for g in gens}
    for b in buses:
        if b.kind == BusKind.KBUS and b.id not in gen_buses:
            raise CaseError(f"Kbus {b.id} has no generator")

    zips: List[ZipLoadSpec] = []
    for row, line_no in tables.get("zip", []):
        _need(row, 6, "zip", line_no)
        _check_bus(int(row[0]), "zip", line_no)
        zips.append(
            ZipLoadSpec(
                bus=int(row[0]), S0=complex(row[1], row[2]) / base, fz=row[3], fi=row[4], fp=row[5]
            )
        )

    logger.debug(
        "Parsed case %s: %d buses, %d branches, %d generators, %d loads",
        name, len(buses), len(branches), len(gens), len(zips),
    )
    return CaseData(
        name=name,
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        gens=tuple(gens),
        zips=tuple(zips),
    )


def format_case(case: CaseData) -> str:
    """Render a CaseData back into the case document format."""
    base = case.base_mva
    out = [f"% {case.name}", f"baseMVA = {base:g};", "", "% id kind Gs Bs baseKV", "bus = ["]
    code = {BusKind.MBUS: 1, BusKind.KBUS: 2}
    for b in case.buses:
        out.append(
            f"  {b.id} {code[b.kind]} {b.shunt.real * base:.6g} {b.shunt.imag * base:.6g} {b.base_kv:g};"
        )
    out += ["];", "", "% from to R X B tap status shift_deg", "branch = ["]
    for br in case.branches:
        z = 1.0 / br.series_admittance
        ratio = abs(br.tap)
        shift = math.degrees(np.angle(br.tap))
        out.append(
            f"  {br.from_bus} {br.to_bus} {z.real:.6g} {z.imag:.6g} {br.line_charging:.6g} "
            f"{ratio:.6g} {int(br.in_service)} {shift:.6g};"
        )
    out += ["];", "", "% bus p_mech", "gen = ["]
    for g in case.gens:
        out.append(f"  {g.bus} {g.p_mech * base:.6g};")
    out += ["];", "", "% bus M D E xd_t omega0", "dynamics = ["]
    for g in case.gens:
        out.append(f"  {g.bus} {g.M:.6g} {g.D:.6g} {g.E:.6g} {g.xd_t:.6g} {g.omega0:.10g};")
    out += ["];", "", "% bus P0 Q0 fz fi fp", "zip = ["]
    for z in case.zips:
        out.append(
            f"  {z.bus} {z.S0.real * base:.6g} {z.S0.imag * base:.6g} {z.fz:.17g} {z.fi:.17g} {z.fp:.17g};"
        )
    out += ["];", ""]
    return "\n".join(out)


def convert_matpower(text: str, name: str = "case", defaults: Optional[CaseDefaults] = None) -> CaseData:
    """
    Build a CaseData from MATPOWER-format `bus`/`gen`/`branch` matrices.
    PD/QD become ZIP loads with defaults.zip_split; machines get the default dynamics.
    """
    defaults = defaults or CaseDefaults()
    scalars, tables = read_tables(text)
    base = scalars.get("baseMVA", 100.0)
    for required in ("bus", "branch", "gen"):
        if required not in tables:
            raise CaseSyntaxError(f"MATPOWER source lacks '{required}'")

    gen_bus_lines: Dict[int, int] = {}
    gen_p: Dict[int, float] = {}
    for row, line_no in tables["gen"]:
        _need(row, 2, "gen", line_no)
        if len(row) >= 8 and row[7] <= 0:
            continue  # out-of-service unit
        bus_id = int(row[0])
        if bus_id in gen_p:
            raise UnsupportedCaseError(f"line {line_no}: two generators on bus {bus_id}")
        gen_bus_lines[bus_id] = line_no
        gen_p[bus_id] = row[1]

    fz, fi, fp = defaults.zip_split
    buses: List[BusRecord] = []
    zips: List[ZipLoadSpec] = []
    for row, line_no in tables["bus"]:
        _need(row, 10, "bus", line_no)
        bus_id, mtype = int(row[0]), int(row[1])
        if mtype == 4:
            raise UnsupportedCaseError(f"line {line_no}: isolated bus {bus_id}")
        kind = BusKind.KBUS if bus_id in gen_p else BusKind.MBUS
        buses.append(BusRecord(bus_id, kind, base_kv=row[9], shunt=complex(row[4], row[5]) / base))
        if row[2] != 0 or row[3] != 0:
            zips.append(ZipLoadSpec(bus_id, complex(row[2], row[3]) / base, fz, fi, fp))
    known = {b.id for b in buses}
    for bus_id, line_no in gen_bus_lines.items():
        if bus_id not in known:
            raise DanglingReferenceError(f"line {line_no}: generator at unknown bus {bus_id}")

    branches: List[BranchRecord] = []
    for row, line_no in tables["branch"]:
        _need(row, 11, "branch", line_no)
        f, t = int(row[0]), int(row[1])
        if f not in known or t not in known:
            raise DanglingReferenceError(f"line {line_no}: branch {f}-{t} references an unknown bus")
        ratio = row[8] if row[8] != 0 else 1.0
        shift = math.radians(row[9])
        branches.append(
            BranchRecord(
                f, t, 1.0 / complex(row[2], row[3]), row[4],
                ratio * complex(math.cos(shift), math.sin(shift)), row[10] != 0,
            )
        )

    M = 2.0 * defaults.inertia_h / defaults.omega0
    gens = [
        GeneratorDynamic(
            bus=bus_id,
            M=M,
            D=defaults.damping_ratio * M,
            E=defaults.e_mag,
            xd_t=defaults.xd_t,
            p_mech=gen_p[bus_id] / base,
            omega0=defaults.omega0,
        )
        for bus_id in gen_p
    ]
    return CaseData(name, base, tuple(buses), tuple(branches), tuple(gens), tuple(zips))


# ------------------ admittance assembly ------------------

def build_ybus(
    buses: Sequence[BusRecord], branches: Sequence[BranchRecord]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Nodal admittance with its zero-row-sum (Ytr) and diagonal shunt (Ysh) parts.
    Branches use the pi model with the tap on the from side.
    """
    index = {b.id: k for k, b in enumerate(buses)}
    n = len(buses)
    ybus = np.zeros((n, n), dtype=complex)
    for br in branches:
        if not br.in_service:
            continue
        try:
            f, t = index[br.from_bus], index[br.to_bus]
        except KeyError:
            raise DanglingReferenceError(f"branch {br.label} references an unknown bus") from None
        y = br.series_admittance
        half = 0.5j * br.line_charging
        tap = br.tap
        ybus[f, f] += (y + half) / abs(tap) ** 2
        ybus[t, t] += y + half
        ybus[f, t] -= y / np.conj(tap)
        ybus[t, f] -= y / tap
    for k, b in enumerate(buses):
        ybus[k, k] += b.shunt

    for k, b in enumerate(buses):
        if not np.any(ybus[k] != 0):
            logger.warning("Bus %d is isolated (no branches, no shunt)", b.id)

    ysh = np.diag(ybus.sum(axis=1))
    ytr = ybus - ysh
    return ybus, ytr, ysh


def augment_with_ibus(
    buses: Sequence[BusRecord],
    branches: Sequence[BranchRecord],
    gens: Sequence[GeneratorDynamic],
) -> AugmentedNetwork:
    """
    Add one internal node per generator behind 1/(j xd_t).
    Ibus ids continue after the largest existing id, in generator order.
    """
    if any(b.kind == BusKind.IBUS for b in buses):
        raise UnsupportedCaseError("network already carries Ibus nodes")
    ids = {b.id for b in buses}
    gen_buses: Dict[int, int] = {}
    for g in gens:
        if g.bus not in ids:
            raise DanglingReferenceError(f"generator references unknown bus {g.bus}")
        if g.bus in gen_buses:
            raise UnsupportedCaseError(f"two generators on bus {g.bus}")
        gen_buses[g.bus] = 1

    next_id = max(ids) + 1 if ids else 1
    all_buses = list(buses)
    all_branches = list(branches)
    ibus_ids: List[int] = []
    for k, g in enumerate(gens):
        ibus = next_id + k
        ibus_ids.append(ibus)
        all_buses.append(BusRecord(ibus, BusKind.IBUS, 0.0, 0j))
        all_branches.append(BranchRecord(ibus, g.bus, 1.0 / complex(0.0, g.xd_t)))

    ybus, ytr, ysh = build_ybus(all_buses, all_branches)
    index = {b.id: k for k, b in enumerate(all_buses)}
    ibus_idx = np.array([index[i] for i in ibus_ids], dtype=int)
    km_idx = np.array(
        [k for k, b in enumerate(all_buses) if b.kind != BusKind.IBUS], dtype=int
    )
    gen_link: Dict[int, GenLink] = {}
    for ibus, g in zip(ibus_ids, gens):
        j, k = index[ibus], index[g.bus]
        gen_link[ibus] = GenLink(
            kbus=g.bus,
            y_mag=abs(ybus[j, k]),
            g_jj=ybus[j, j].real,
            b_jj=-ybus[j, j].imag,
            y_jk=complex(ybus[j, k]),
        )

    return AugmentedNetwork(
        buses=tuple(all_buses),
        branches=tuple(all_branches),
        gens=tuple(gens),
        ybus=ybus,
        ytr=ytr,
        ysh=ysh,
        ibus_idx=ibus_idx,
        km_idx=km_idx,
        gen_link=gen_link,
        base_buses=tuple(buses),
        base_branches=tuple(branches),
        index=index,
    )


def network_from_case(case: CaseData) -> AugmentedNetwork:
    return augment_with_ibus(case.buses, case.branches, case.gens)
