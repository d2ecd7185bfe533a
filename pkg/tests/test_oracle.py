import numpy as np
import pytest

from comets.milp import check, inflow
from comets.network import Edge, Level, NetworkGraph, ResolutionCatalog, Scenario, UserProfile, default_catalog
from comets.oracle import (
    LimitsExceeded,
    OracleError,
    OracleLimits,
    ilp_optimum_small_dag,
    ilp_optimum_tree,
    knapsack_grid_check,
)
from comets.topology import random_tree

from conftest import fan_scenario


def direct(cap, bandwidths=(2.0, 5.0), levels=(1, 2), w=1.0):
    cat = ResolutionCatalog([Level(f"L{i + 1}", 100 * (i + 1), b) for i, b in enumerate(bandwidths)])
    g = NetworkGraph({"S": "server", "U": "user"}, [Edge("S", "U", cap)])
    return Scenario(g, cat, {"U": UserProfile("U", levels, w)})


def test_unconstrained_single_user_takes_top_level():
    sol = ilp_optimum_tree(direct(100.0))
    assert sol.levels == {"U": 2}


def test_capacity_forces_level_one():
    sc = direct(3.0, w=1.5)
    sol = ilp_optimum_tree(sc)
    assert sol.levels == {"U": 1}
    assert sol.z == pytest.approx(1.5 * sc.catalog.qualities[0])


def test_infeasible_when_nothing_fits():
    assert ilp_optimum_tree(direct(1.0)) is None
    assert ilp_optimum_small_dag(direct(1.0)) is None


@pytest.mark.parametrize("seed", range(10))
def test_tree_and_dag_oracles_agree(seed):
    sc = random_tree(seed, 1, 2, catalog=ResolutionCatalog(default_catalog().levels[:2]))
    a = ilp_optimum_tree(sc)
    b = ilp_optimum_small_dag(sc)
    assert (a is None) == (b is None)
    if a is not None:
        assert a.z == pytest.approx(b.z, abs=1e-12)


def test_parallel_paths_uses_the_sufficient_one():
    cat = ResolutionCatalog([Level("lo", 480, 2.0), Level("hi", 960, 4.0)])
    roles = {"S": "server", "F1": "forwarder", "F2": "forwarder", "U": "user"}
    edges = [Edge("S", "F1", 10), Edge("S", "F2", 10), Edge("F1", "U", 2.5), Edge("F2", "U", 4.5)]
    sc = Scenario(NetworkGraph(roles, edges), cat, {"U": UserProfile("U", (1, 2), 1.0)})
    sol = ilp_optimum_small_dag(sc)
    assert sol.levels == {"U": 2}
    assert sol.y[sc.graph.edge_index[("F2", "U")], 1] == 1.0
    assert check(sc, sol.x, sol.y, integral=True).ok


def test_tree_oracle_rejects_dag_and_limits():
    cat = ResolutionCatalog([Level("lo", 480, 2.0)])
    roles = {"S": "server", "F1": "forwarder", "F2": "forwarder", "U": "user"}
    edges = [Edge("S", "F1", 10), Edge("S", "F2", 10), Edge("F1", "U", 2.5), Edge("F2", "U", 4.5)]
    sc = Scenario(NetworkGraph(roles, edges), cat, {"U": UserProfile("U", (1,), 1.0)})
    with pytest.raises(OracleError):
        ilp_optimum_tree(sc)
    with pytest.raises(LimitsExceeded):
        ilp_optimum_tree(random_tree(0, 3, 8), OracleLimits(max_assignments=2))
    with pytest.raises(LimitsExceeded):
        ilp_optimum_small_dag(random_tree(0, 3, 8))


@pytest.mark.parametrize("seed", range(10))
def test_tree_solution_is_demand_closure(seed):
    sc = random_tree(seed, 3, 5)
    sol = ilp_optimum_tree(sc)
    g = sc.graph
    for k in range(g.n_edges):
        for l in np.flatnonzero(sol.y[k]):
            y = sol.y.copy()
            y[k, l] = 0
            x = sol.x.copy()
            short = (x - inflow(sc, y))[g.role_code != 0]
            assert short.max() > 0


def test_grid_examples():
    assert knapsack_grid_check([1.0], [1.0], 0.5, 0.1) == pytest.approx(0.5)
    assert knapsack_grid_check([0.0, 0.0], [1.0, 2.0], 3.0, 0.1) == 0.0
    assert knapsack_grid_check([6, 4, 5], [2, 3, 5], 6, 1e-3) == pytest.approx(11.0, abs=1e-2)
    with pytest.raises(ValueError):
        knapsack_grid_check([1.0], [1.0], 1.0, 0.0)


def test_fan_optimum():
    # both users want level 2 (B=3) over shared S-F capacity 3: one stream serves both
    sc = fan_scenario(cap_sf=3.0, cap_fu=3.0)
    sol = ilp_optimum_tree(sc)
    assert sol.levels == {"U1": 2, "U2": 2}
