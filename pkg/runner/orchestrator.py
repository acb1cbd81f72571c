# runner/orchestrator.py
import asyncio
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from network.case_model import AugmentedNetwork
from network.errors import ConfigurationError, EngineFailure, SwinglineError
from network.zip_loads import ZipLoadSpec, as_load_type, build_extended_loads, scale_loads
from dynamics.reference_sims import TdsConfig, tds_run
from dynamics.trajectory import PiecewiseTrajectory, RegionSegment, state_from_angles
from runner.diagnostics import oscillation_period
from runner.executor import EngineRequest, run_engine
from runner.locator import locate_branch, locate_bus, locate_load_bus
from runner.recovery import recover_engine
from runner.session_manager import CaseSession
from runner.settings import ENGINES, Settings
from runner.verifier import StabilityVerdict, verify_agreement, verify_cost, verify_run

logger = logging.getLogger(__name__)

SCENARIO_KINDS = ("line_outage", "load_loss", "none")
LOAD_TYPES = ("z", "i", "p")


def _complex(value: Any) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigurationError(f"complex value needs [re, im], got {value!r}")
        return complex(float(value[0]), float(value[1]))
    try:
        return complex(str(value).replace(" ", "")) if isinstance(value, str) else complex(value)
    except ValueError:
        raise ConfigurationError(f"cannot read complex value {value!r}") from None


# ------------------ scenarios ------------------

@dataclass(frozen=True)
class Scenario:
    """
    One disturbance:
      - line_outage: the target branch ("5-7") trips at t_clear
      - load_loss: a `severity` fraction of the load at the target bus is lost at t_fault
      - none: nothing changes (equilibrium check)
    Between t_fault and t_clear an optional shunt sits at `fault_bus`.
    """

    kind: str
    target: Any = None
    severity: float = 1.0
    t_fault: float = 0.0
    t_clear: float = 0.0
    fault_bus: Optional[int] = None
    fault_admittance: complex = 0j
    fault_loads_as_z: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigurationError(f"unknown scenario kind '{self.kind}'")
        if self.kind != "none" and self.target is None:
            raise ConfigurationError(f"{self.kind} scenario needs a target")
        if not 0.0 < self.severity <= 1.0:
            raise ConfigurationError(f"severity must lie in (0, 1], got {self.severity}")
        if self.t_fault < 0 or self.t_clear < self.t_fault:
            raise ConfigurationError(
                f"need 0 <= t_fault <= t_clear, got t_fault={self.t_fault}, t_clear={self.t_clear}"
            )
        if self.fault_bus is not None and self.fault_admittance == 0:
            raise ConfigurationError("fault_bus given without a fault_admittance")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "none":
            return "no_disturbance"
        return f"{self.kind}_{str(self.target).replace(' ', '')}"

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "Scenario":
        known = {"kind", "target", "severity", "t_fault", "t_clear", "fault_bus",
                 "fault_admittance", "fault_loads_as_z", "name"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario key '{sorted(unknown)[0]}'")
        values = dict(raw)
        if "fault_admittance" in values:
            values["fault_admittance"] = _complex(values["fault_admittance"])
        for key in ("severity", "t_fault", "t_clear"):
            if key in values:
                values[key] = float(values[key])
        if values.get("fault_bus") is not None:
            values["fault_bus"] = int(values["fault_bus"])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        y = complex(self.fault_admittance)
        out["fault_admittance"] = [y.real, y.imag]
        return out


@dataclass(frozen=True, eq=False)
class FaultedSystem:
    fault_net: AugmentedNetwork
    fault_zips: Tuple[ZipLoadSpec, ...]
    post_net: AugmentedNetwork
    post_zips: Tuple[ZipLoadSpec, ...]


def apply_scenario(session: CaseSession, scenario: Scenario) -> FaultedSystem:
    """On-fault and post-clearing networks and loads for `scenario`."""
    net = session.net
    zips = tuple(session.zips)
    branches = list(net.base_branches)
    post_branches = branches
    post_zips = zips

    if scenario.kind == "line_outage":
        idx = locate_branch(branches, scenario.target)
        post_branches = list(branches)
        post_branches[idx] = replace(branches[idx], in_service=False)
        logger.info("Outage of branch %s", branches[idx].label)
    elif scenario.kind == "load_loss":
        bus = locate_load_bus(zips, scenario.target)
        post_zips = tuple(scale_loads(zips, bus, 1.0 - scenario.severity))
        logger.info("Loss of %.0f%% of the load at bus %d", 100 * scenario.severity, bus)

    post_net = net.rebuild(post_branches) if post_branches is not branches else net

    if scenario.fault_bus is not None:
        bus = locate_bus(net.base_buses, scenario.fault_bus)
        # the faulted line is still closed until the breakers open at t_clear
        on_branches = branches if scenario.kind == "line_outage" else post_branches
        fault_net = net.rebuild(on_branches, extra_shunts={bus: complex(scenario.fault_admittance)})
        fault_zips = zips if scenario.kind == "line_outage" else post_zips
    else:
        fault_net, fault_zips = post_net, post_zips
    if scenario.fault_loads_as_z:
        fault_zips = tuple(as_load_type(fault_zips, "z"))

    return FaultedSystem(fault_net=fault_net, fault_zips=tuple(fault_zips),
                         post_net=post_net, post_zips=tuple(post_zips))


# ------------------ single scenario ------------------

def _prefault(session: CaseSession, t_fault: float, sample_dt: float) -> PiecewiseTrajectory:
    op = session.op
    gens = op.gens
    net = session.net
    traj = PiecewiseTrajectory(gens=gens, engine="prefault", km_ids=tuple(net.km_ids))
    w, dw = state_from_angles(gens, op.delta, np.zeros(len(gens)))
    ref = float(np.angle(op.v[net.position(gens[0].bus)]))
    v_km = op.v[net.km_idx]
    n = max(1, int(math.ceil(t_fault / sample_dt - 1e-9)))
    for t in np.linspace(0.0, t_fault, n + 1):
        traj.append(float(t), w, dw, ref, v_km)
    traj.segments.append(RegionSegment(0.0, t_fault, "prefault", "handoff"))
    return traj


def run_scenario(
    session: CaseSession,
    scenario: Scenario,
    engine: Optional[str] = None,
    eps: Optional[float] = None,
    horizon: Optional[float] = None,
    settings: Optional[Settings] = None,
) -> Tuple[PiecewiseTrajectory, StabilityVerdict]:
    """
    Runs one scenario through:
      1) pre-fault equilibrium (held until t_fault)
      2) on-fault TDS until t_clear
      3) the chosen engine on the post-clearing network until the horizon
         (failed runs go through recovery)
      4) the stability verdict
    """
    settings = settings or Settings()
    if eps is not None:
        settings = settings.apply({"region.eps": eps})
    engine = engine or settings.assessment.engine
    horizon = settings.assessment.horizon if horizon is None else float(horizon)
    if engine not in ENGINES:
        raise ConfigurationError(f"unknown engine '{engine}'")
    if not horizon > scenario.t_clear:
        raise ConfigurationError(f"horizon {horizon} must lie after t_clear={scenario.t_clear}")

    system = apply_scenario(session, scenario)
    op = session.op
    gens = op.gens

    print(f"\nScenario {scenario.label} on {session.name}")
    print(f"   Engine: {engine} | horizon {horizon:g} s | eps {settings.region.eps:g}")

    traj = PiecewiseTrajectory(gens=gens, engine=engine, km_ids=tuple(session.net.km_ids))
    if scenario.t_fault > 0:
        traj.concat(_prefault(session, scenario.t_fault, settings.region.sample_dt))
    traj.event(scenario.t_fault, "fault", disturbance=scenario.kind)

    delta, speed = op.delta.copy(), np.zeros(len(gens))
    if scenario.t_clear > scenario.t_fault:
        fault_loads = build_extended_loads(system.fault_zips, op.v, system.fault_net)
        cfg = TdsConfig(
            dt=settings.tds.dt, horizon=scenario.t_clear, tol=settings.qpf.tol,
            damping=settings.tds.damping, resplit_threshold=settings.loads.resplit_threshold,
        )
        on_fault = tds_run(system.fault_net, fault_loads, gens, delta, speed, cfg,
                           t0=scenario.t_fault, delta_eq=op.delta, v_guess=op.v)
        traj.concat(on_fault)
        print(f"   On-fault TDS: {len(on_fault.t)} samples, ended at t={on_fault.t_end:.3f} s")
        if on_fault.failed or on_fault.t_end < scenario.t_clear - 1e-9:
            verdict = verify_run(traj, horizon)
            print(f"   Verdict: {verdict.status} (on-fault stage: {on_fault.failure or 'stopped early'})")
            return traj, verdict
        delta = on_fault.rotor_angles()[-1]
        speed = on_fault.speed_deviation()[-1]
    traj.event(scenario.t_clear, "clear")

    post_loads = build_extended_loads(system.post_zips, op.v, system.post_net)
    req = EngineRequest.from_settings(
        engine, settings,
        net=system.post_net, loads=post_loads, gens=gens,
        delta0=delta, speed0=speed, t0=scenario.t_clear, horizon=horizon,
        delta_eq=op.delta, v_guess=op.v,
    )
    try:
        post = run_engine(req)
    except EngineFailure as exc:
        print(f"   Engine failure: {exc}")
        outcome = recover_engine(req, exc, max_attempts=settings.assessment.recovery_attempts)
        post = outcome["trajectory"]
        print(f"   Recovery: {'ok' if outcome['recovered'] else 'failed'} | "
              f"attempts={outcome['attempts']} handoff={outcome['handoff']}")
        if post is None:
            post = PiecewiseTrajectory(gens=gens, engine=engine)
            post.fail(str(exc))
    traj.concat(post)

    verdict = verify_run(traj, horizon)
    print(f"   Segments: {verdict.segments} | network solves: {verdict.network_solves}")
    print(f"   Verdict: {verdict.status} at t={verdict.decision_time:.3f} s")
    return traj, verdict


# ------------------ engine comparison ------------------

@dataclass
class ComparisonReport:
    scenario: Scenario
    trajectories: Dict[str, PiecewiseTrajectory] = field(default_factory=dict)
    verdicts: Dict[str, StabilityVerdict] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    agreement: pd.DataFrame = field(default_factory=pd.DataFrame)
    periods: Dict[str, float] = field(default_factory=dict)
    cost_ratio: float = float("nan")
    cost_ok: Optional[bool] = None

    @property
    def tau_ordered(self) -> Optional[bool]:
        """tau_Z > tau_I > tau_P, or None when a period is missing."""
        taus = [self.periods.get(k, float("nan")) for k in LOAD_TYPES]
        if not all(math.isfinite(t) for t in taus):
            return None
        return taus[0] > taus[1] > taus[2]

    def summary(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "verdicts": {k: v.status for k, v in self.verdicts.items()},
            "failures": dict(self.failures),
            "periods": dict(self.periods),
            "tau_ordered": self.tau_ordered,
            "cost_ratio": self.cost_ratio,
            "cost_ok": self.cost_ok,
        }


def compare_engines(
    session: CaseSession,
    scenario: Scenario,
    eps: Optional[float] = None,
    horizon: Optional[float] = None,
    settings: Optional[Settings] = None,
    engines: Sequence[str] = ENGINES,
    load_types: Sequence[str] = LOAD_TYPES,
) -> ComparisonReport:
    """
    Every engine on the same scenario, measured against TDS:
      - per-machine COI angle deviation and verdict agreement
      - network-solve cost ratio TDS / analytic
      - post-transient oscillation periods with all loads of one type
    """
    settings = settings or Settings()
    report = ComparisonReport(scenario=scenario)
    engines = list(dict.fromkeys(["tds", *engines]))

    for engine in engines:
        try:
            traj, verdict = run_scenario(session, scenario, engine, eps=eps, horizon=horizon, settings=settings)
        except SwinglineError as exc:
            logger.error("%s engine failed on %s: %s", engine, scenario.label, exc)
            report.failures[engine] = f"{engine}: {exc}"
            continue
        report.trajectories[engine] = traj
        report.verdicts[engine] = verdict

    reference = report.trajectories.get("tds")
    if reference is not None:
        frames = []
        for engine, traj in report.trajectories.items():
            if engine == "tds":
                continue
            check = verify_agreement(traj, reference)
            frame = check.pop("table")
            frame.insert(0, "engine", engine)
            frames.append(frame)
            report.verdicts[engine].agreement = {
                "reference": "tds",
                "status_matches": report.verdicts[engine].status == report.verdicts["tds"].status,
                **check,
            }
        if frames:
            report.agreement = pd.concat(frames, ignore_index=True)
        analytic = report.trajectories.get("analytic")
        if analytic is not None:
            report.cost_ratio = reference.network_solves / max(analytic.network_solves, 1)
            report.cost_ok = verify_cost(analytic, reference)

    for kind in load_types:
        try:
            typed = session.with_load_type(kind)
            traj, _ = run_scenario(typed, scenario, "tds", eps=eps, horizon=horizon, settings=settings)
            report.periods[kind] = oscillation_period(traj, t_start=scenario.t_clear)
        except SwinglineError as exc:
            logger.error("Load-type run '%s' failed: %s", kind, exc)
            report.failures[f"tds_{kind}"] = f"tds ({kind.upper()} loads): {exc}"
            report.periods[kind] = float("nan")

    print(f"\nComparison on {scenario.label}: "
          + ", ".join(f"{k}={v.status}" for k, v in report.verdicts.items()))
    if report.periods:
        print("   Periods: " + ", ".join(f"tau_{k.upper()}={v:.3f} s" for k, v in report.periods.items()))
    return report


# ------------------ sweeps ------------------

async def run_sweep(
    session: CaseSession,
    scenarios: Sequence[Scenario],
    engine: Optional[str] = None,
    settings: Optional[Settings] = None,
    workers: Optional[int] = None,
) -> List[Dict[str, Any]]:
    """Scenarios run concurrently in worker threads; each scenario's pipeline stays sequential."""
    settings = settings or Settings()
    gate = asyncio.Semaphore(workers or settings.assessment.workers)

    async def one(scenario: Scenario) -> Dict[str, Any]:
        async with gate:
            try:
                traj, verdict = await asyncio.to_thread(
                    run_scenario, session, scenario, engine, None, None, settings
                )
            except SwinglineError as exc:
                logger.error("Scenario %s failed: %s", scenario.label, exc)
                return {"scenario": scenario, "trajectory": None, "verdict": None, "error": str(exc)}
            return {"scenario": scenario, "trajectory": traj, "verdict": verdict, "error": ""}

    results = await asyncio.gather(*(one(s) for s in scenarios))
    print(f"\nSweep completed: {sum(r['verdict'] is not None for r in results)}/{len(results)} scenarios assessed.\n")
    return list(results)
