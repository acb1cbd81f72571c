# runner/cli.py
import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

from network.case_model import convert_matpower, format_case
from network.errors import ConfigurationError, SwinglineError
from network.qpf import solve_operating_point
from network.zip_loads import error_curve
from dynamics.he_linearizer import assemble_linearization, order_diagnostic
from planner.cache_manager import DEFAULT_TASK, get_or_generate_plan, read_plan
from runner.diagnostics import linearization_sweep, partition_diagnostic
from runner.orchestrator import Scenario, apply_scenario, compare_engines, run_scenario, run_sweep
from runner.report import emit_frame, emit_json, emit_partition, emit_report, emit_text
from runner.session_manager import load_case, start_session
from runner.settings import ENGINES, INIT_MODES, LOG_LEVELS, POLICIES, Settings, load_settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level))


# ------------------ argument groups ------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="settings yaml (default: configs/defaults.yaml or $SWINGLINE_CONFIG)")
    p.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS)
    p.add_argument("--out", help="output directory (default: paths.output_dir)")


def _case_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", required=True, help="case name under cases/ or a path to a .case file")


def _scenario_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--plan", help="plan name under plans/<case>/ or a plan file path")
    g.add_argument("--outage", help="branch to trip, e.g. 5-7")
    g.add_argument("--load-loss", dest="load_loss", help="bus losing load")
    g.add_argument("--severity", type=float, default=0.1, help="lost load fraction (default 0.1)")
    g.add_argument("--t-fault", dest="t_fault", type=float, default=0.0)
    g.add_argument("--t-clear", dest="t_clear", type=float, default=None)
    g.add_argument("--fault-bus", dest="fault_bus", type=int)
    g.add_argument("--fault-admittance", dest="fault_admittance", help="shunt admittance p.u., e.g. 0-20j")
    g.add_argument("--fault-loads-as-z", dest="fault_loads_as_z", action="store_true")


def _numeric_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("numerics")
    g.add_argument("--eps", type=float, help="validity-region tolerance")
    g.add_argument("--eps-o2", dest="eps_o2", type=float)
    g.add_argument("--policy", choices=POLICIES)
    g.add_argument("--init-mode", dest="init_mode", choices=INIT_MODES)
    g.add_argument("--horizon", type=float, help="seconds")
    g.add_argument("--l", type=int, help="Pade numerator order")
    g.add_argument("--m", type=int, help="Pade denominator order")
    g.add_argument("--dt", type=float, help="TDS step")
    g.add_argument("--terms", type=int, help="HTMS series terms")


OVERRIDES = {
    "log_level": "log_level",
    "eps": "region.eps",
    "eps_o2": "region.eps_o2",
    "policy": "region.policy",
    "init_mode": "region.init_mode",
    "horizon": "assessment.horizon",
    "engine": "assessment.engine",
    "workers": "assessment.workers",
    "k": "assessment.clusters",
    "l": "linearization.l",
    "m": "linearization.m",
    "dt": "tds.dt",
    "terms": "htms.terms",
}


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted settings keys for the flags this verb defines and the user set."""
    return {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}


# ------------------ helpers ------------------

def _out_dir(args: argparse.Namespace, settings: Settings, *parts: str) -> str:
    base = args.out or settings.paths.resolve("output_dir")
    return os.path.join(base, *parts)


def _session(args: argparse.Namespace, settings: Settings):
    case = load_case(args.case, settings.paths.resolve("cases_dir"))
    return start_session(case, tol=settings.qpf.tol)


def scenario_from_args(args: argparse.Namespace, case_name: str, settings: Settings) -> Scenario:
    if args.plan:
        path = args.plan
        if not os.path.isfile(path):
            path = os.path.join(settings.paths.resolve("plans_dir"), case_name, f"{args.plan}.json")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"No plan found for {args.plan}")
        items = read_plan(path)
        if len(items) != 1:
            raise ConfigurationError(f"{path} holds {len(items)} scenarios; use 'assess' for sweeps")
        return Scenario.from_dict(items[0])

    t_clear = args.t_clear if args.t_clear is not None else args.t_fault
    shared = dict(
        t_fault=args.t_fault, t_clear=t_clear, fault_bus=args.fault_bus,
        fault_loads_as_z=args.fault_loads_as_z,
    )
    if args.fault_admittance is not None:
        shared["fault_admittance"] = args.fault_admittance
    if args.outage and args.load_loss:
        raise ConfigurationError("give either --outage or --load-loss, not both")
    if args.outage:
        raw = {"kind": "line_outage", "target": args.outage, **shared}
    elif args.load_loss:
        raw = {"kind": "load_loss", "target": args.load_loss, "severity": args.severity, **shared}
    else:
        raw = {"kind": "none", **shared}
    return Scenario.from_dict(raw)


# ------------------ verbs ------------------

def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    session = _session(args, settings)
    scenario = scenario_from_args(args, session.name, settings)
    traj, verdict = run_scenario(session, scenario, settings=settings)
    out = _out_dir(args, settings, session.name, scenario.label)
    paths = emit_report(out, {traj.engine: traj}, {traj.engine: verdict},
                        extra={"scenario": scenario.to_dict(), "settings": settings.to_dict()})
    print(f"Report written to {out} ({len(paths)} files)")
    return 0 if verdict.status != "undetermined-by-horizon" else 1


def cmd_assess(args: argparse.Namespace, settings: Settings) -> int:
    session = _session(args, settings)
    plan = get_or_generate_plan(session.case, args.task, settings.paths.resolve("plans_dir"))
    scenarios = [Scenario.from_dict(raw) for raw in plan]
    results = asyncio.run(run_sweep(session, scenarios, settings=settings))

    rows: List[Dict[str, Any]] = []
    for item in results:
        scenario, traj, verdict = item["scenario"], item["trajectory"], item["verdict"]
        if traj is not None and verdict is not None:
            emit_report(_out_dir(args, settings, session.name, scenario.label),
                        {traj.engine: traj}, {traj.engine: verdict})
        rows.append({
            "scenario": scenario.label,
            "status": verdict.status if verdict else "error",
            "decision_time": verdict.decision_time if verdict else float("nan"),
            "segments": verdict.segments if verdict else 0,
            "network_solves": verdict.network_solves if verdict else 0,
            "error": item["error"],
        })
    path = emit_frame(_out_dir(args, settings, session.name, f"sweep_{args.task}.csv"), pd.DataFrame(rows))
    print(f"Sweep summary written to {path}")
    return 0 if all(not r["error"] for r in rows) else 1


def cmd_compare(args: argparse.Namespace, settings: Settings) -> int:
    session = _session(args, settings)
    scenario = scenario_from_args(args, session.name, settings)
    report = compare_engines(session, scenario, settings=settings, engines=args.engines)
    out = _out_dir(args, settings, session.name, scenario.label, "compare")
    if report.trajectories:
        emit_report(out, report.trajectories, report.verdicts, agreement=report.agreement,
                    extra=report.summary())
    else:
        emit_json(os.path.join(out, "summary.json"), report.summary())
    print(f"Comparison written to {out}")
    return 0 if not report.failures else 1


def cmd_linearize(args: argparse.Namespace, settings: Settings) -> int:
    session = _session(args, settings)
    net, op = session.net, session.op
    l, m = settings.linearization.l, settings.linearization.m
    lin = assemble_linearization(net, op.loads, op.v[net.ibus_idx], l, m)
    bound = order_diagnostic(net, op.loads, op.v[net.ibus_idx], l)
    out = _out_dir(args, settings, session.name, "linearization")
    for name, diag in lin.diagnostics().items():
        print(f"   {name:5s} sigma_min={diag['sigma_min']:.3e} residual={diag['residual']:.3e}")
    print(f"   Order bound [{l}/{l}] vs [{l + 1}/{l + 1}]: {bound:.3e}")
    emit_json(os.path.join(out, "diagnostics.json"),
              {"l": l, "m": m, "blocks": lin.diagnostics(), "order_bound": bound})
    if args.sweep:
        frame = linearization_sweep(net, op.loads, op.v, n_directions=args.directions, seed=args.seed,
                                    l=l, m=m, tol=settings.qpf.tol)
        path = emit_frame(os.path.join(out, "sweep.csv"), frame)
        print(f"   Sweep ({len(frame)} points) written to {path}")
    return 0


def cmd_cluster(args: argparse.Namespace, settings: Settings) -> int:
    session = _session(args, settings)
    net, op = session.net, session.op
    label = "base"
    if args.outage:
        system = apply_scenario(session, Scenario(kind="line_outage", target=args.outage))
        net = system.post_net
        op = solve_operating_point(net, session.zips, gens=session.case.gens, tol=settings.qpf.tol)
        label = f"outage_{args.outage.replace(' ', '')}"
    lin = assemble_linearization(net, op.loads, op.v[net.ibus_idx],
                                 settings.linearization.l, settings.linearization.m)
    diag = partition_diagnostic(lin, settings.assessment.clusters, seed=args.seed)
    for i, group in enumerate(diag.clusters, start=1):
        print(f"   Group {i}: buses {', '.join(map(str, group))}")
    out = _out_dir(args, settings, session.name, "clusters", label)
    emit_partition(out, diag)
    print(f"Partition written to {out}")
    return 0


def cmd_convert_case(args: argparse.Namespace, settings: Settings) -> int:
    with open(args.source, "r", encoding="utf-8") as f:
        text = f.read()
    name = args.name or os.path.splitext(os.path.basename(args.source))[0]
    case = convert_matpower(text, name, settings.case_defaults)
    target = args.out or os.path.join(settings.paths.resolve("cases_dir"), f"{name}.case")
    if os.path.isdir(target):
        target = os.path.join(target, f"{name}.case")
    emit_text(target, format_case(case))
    print(f"Case {name}: {len(case.buses)} buses, {len(case.gens)} machines -> {target}")
    return 0


def cmd_load_error(args: argparse.Namespace, settings: Settings) -> int:
    frame = error_curve(args.r_min, args.r_max, args.n)
    path = emit_frame(_out_dir(args, settings, "load_error.csv"), frame)
    print(f"Load-error curve ({len(frame)} points) written to {path}")
    return 0


# ------------------ parser ------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swingline", description="Transient-stability assessment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario with one engine")
    _common(p)
    _case_arg(p)
    _scenario_args(p)
    _numeric_args(p)
    p.add_argument("--engine", choices=ENGINES)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("assess", help="run a scenario plan (cached or generated) concurrently")
    _common(p)
    _case_arg(p)
    _numeric_args(p)
    p.add_argument("--task", default=DEFAULT_TASK, help="plan name under plans/<case>/")
    p.add_argument("--engine", choices=ENGINES)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("compare", help="all engines on one scenario, measured against TDS")
    _common(p)
    _case_arg(p)
    _scenario_args(p)
    _numeric_args(p)
    p.add_argument("--engines", nargs="+", choices=ENGINES, default=list(ENGINES))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("linearize", help="linear-map diagnostics at the operating point")
    _common(p)
    _case_arg(p)
    _numeric_args(p)
    p.add_argument("--sweep", action="store_true", help="compare HE-Pade, Taylor and Ward against QPF")
    p.add_argument("--directions", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("cluster", help="subspace-angle matrix and k-means bus groups")
    _common(p)
    _case_arg(p)
    _numeric_args(p)
    p.add_argument("--k", type=int, help="cluster count")
    p.add_argument("--outage", help="cluster the network with this branch out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("convert-case", help="MATPOWER case -> case document")
    _common(p)
    p.add_argument("source", help="MATPOWER .m file")
    p.add_argument("--name")
    p.set_defaults(func=cmd_convert_case)

    p = sub.add_parser("load-error", help="I-load split error ratio curve")
    _common(p)
    p.add_argument("--r-min", dest="r_min", type=float, default=0.8)
    p.add_argument("--r-max", dest="r_max", type=float, default=1.2)
    p.add_argument("-n", type=int, default=41)
    p.set_defaults(func=cmd_load_error)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config).apply(_overrides(args))
    except SwinglineError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 2
    configure_logging(settings.log_level)
    try:
        return args.func(args, settings)
    except (SwinglineError, FileNotFoundError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"Error: {exc}", file=sys.stderr)
        return 2
