# planner/cache_manager.py
import json
import logging
import os
from typing import Any, Dict, List, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from network.case_model import BranchRecord, CaseData

logger = logging.getLogger(__name__)

PLANS_DIR = "plans"
DEFAULT_TASK = "default_sweep"
LOAD_LOSS_SEVERITY = 0.1


def _sanitize(task: str) -> str:
    return task.lower().strip().replace(" ", "_").replace("-", "_")


def keeps_connected(case: CaseData, removed: int) -> bool:
    """True when the case stays one island with branch `removed` out of service."""
    ids = [b.id for b in case.buses]
    pos = {bus: k for k, bus in enumerate(ids)}
    edges = [
        (pos[br.from_bus], pos[br.to_bus])
        for k, br in enumerate(case.branches)
        if br.in_service and k != removed
    ]
    if not edges:
        return len(ids) <= 1
    rows, cols = zip(*edges)
    graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(len(ids), len(ids)))
    n_islands, _ = connected_components(graph, directed=False)
    return n_islands == 1


def _outage(br: BranchRecord) -> Dict[str, Any]:
    return {"name": f"line_{br.from_bus}_{br.to_bus}", "kind": "line_outage",
            "target": br.label, "t_fault": 0.0, "t_clear": 0.0}


def default_scenarios(case: CaseData, severity: float = LOAD_LOSS_SEVERITY) -> List[Dict[str, Any]]:
    """
    Every in-service branch outage that leaves the grid in one piece, then a
    `severity` load loss at every load bus.
    """
    plan = []
    for k, br in enumerate(case.branches):
        if not br.in_service:
            continue
        if keeps_connected(case, k):
            plan.append(_outage(br))
        else:
            logger.info("Skipping outage of %s: it islands the network", br.label)
    for bus in sorted({z.bus for z in case.zips if z.S0 != 0}):
        plan.append({"name": f"load_loss_bus{bus}", "kind": "load_loss", "target": str(bus),
                     "severity": severity, "t_fault": 0.0, "t_clear": 0.0})
    return plan


def read_plan(path: str) -> List[Dict[str, Any]]:
    """A plan file holds one scenario object or a list of them."""
    with open(path, "r", encoding="utf-8") as f:
        raw: Union[Dict[str, Any], List[Dict[str, Any]]] = json.load(f)
    return [raw] if isinstance(raw, dict) else list(raw)


def get_or_generate_plan(case: CaseData, task: str = DEFAULT_TASK, plans_dir: str = PLANS_DIR) -> List[Dict[str, Any]]:
    """Load a scenario plan from cache if it exists, else generate the default sweep and save it."""
    plan_path = os.path.join(plans_dir, case.name, f"{_sanitize(task)}.json")
    print(f"Checking cache at: {plan_path}")

    if os.path.exists(plan_path):
        print(f"Loaded cached plan for {case.name}:{task}")
        return read_plan(plan_path)

    if _sanitize(task) != DEFAULT_TASK:
        raise FileNotFoundError(f"No plan '{task}' for {case.name} and only '{DEFAULT_TASK}' can be generated")

    print(f"Generating new plan for {case.name}:{task}")
    plan = default_scenarios(case)
    os.makedirs(os.path.dirname(plan_path), exist_ok=True)
    with open(plan_path, "w", encoding="utf-8") as f:
        json.dump(plan, f, indent=2)
    print(f"Plan saved to {plan_path}")
    return plan
