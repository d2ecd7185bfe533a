"""Regenerate the golden scenarios shipped with the package.

Each file holds a scenario and the brute-force integer optimum for it.
Run from the repository root: ``python3 scripts/make_golden.py``.
"""

import json
from pathlib import Path

from comets.network import (
    Edge,
    NetworkGraph,
    ResolutionCatalog,
    Scenario,
    UserProfile,
    default_catalog,
    scenario_to_dict,
)
from comets.oracle import ilp_optimum
from comets.topology import chain, random_tree

OUT = Path(__file__).resolve().parent.parent / "src" / "comets" / "golden"


def small_dag() -> Scenario:
    cat = ResolutionCatalog(default_catalog().levels[:2])
    roles = {"S": "server", "F1": "forwarder", "F2": "forwarder", "U1": "user", "U2": "user"}
    edges = [Edge("S", "F1", 4.0), Edge("S", "F2", 3.5), Edge("F1", "U1", 3.0),
             Edge("F2", "U1", 3.0), Edge("F2", "U2", 2.0)]
    users = {"U1": UserProfile("U1", (1, 2), 1.5), "U2": UserProfile("U2", (1, 2), 1.0)}
    return Scenario(NetworkGraph(roles, edges), cat, users)


def cases() -> dict[str, Scenario]:
    four = ResolutionCatalog(default_catalog().levels[:4])
    return {
        "chain.json": chain(),
        "tree_a.json": random_tree(3, 3, 5, catalog=four),
        "tree_b.json": random_tree(11, 4, 7, catalog=four),
        "dag_two_paths.json": small_dag(),
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, sc in cases().items():
        sol = ilp_optimum(sc)
        doc = {"scenario": scenario_to_dict(sc),
               "expected": {"z_star": sol.z, "levels": sol.levels}}
        (OUT / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(name, sol.z, sol.levels)


if __name__ == "__main__":
    main()
