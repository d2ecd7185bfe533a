import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from comets.milp import (
    check,
    empty_selection,
    empty_transmission,
    link_load,
    objective,
    selection_from_levels,
)
from comets.oracle import ilp_optimum
from comets.topology import chain, random_tree

from conftest import fan_scenario, random_dag, two_level_catalog


def test_objective_zero():
    sc = fan_scenario()
    assert objective(sc, empty_selection(sc)) == 0.0


def test_objective_two_users():
    sc = fan_scenario()
    sc.users["U2"] = sc.users["U2"].__class__("U2", (1, 2), 2.0)
    x = selection_from_levels(sc, {"U1": 1, "U2": 2})
    assert objective(sc, x) == pytest.approx(1 + 2 * (1 + math.log(2)), abs=1e-12)
    assert objective(sc, x) == pytest.approx(4.386294, abs=1e-6)


def test_objective_missing_profile():
    sc = fan_scenario()
    del sc.users["U1"]
    with pytest.raises(KeyError):
        objective(sc, empty_selection(sc))


def test_objective_shape_error():
    sc = fan_scenario()
    with pytest.raises(ValueError):
        objective(sc, np.zeros((1, 1)))


@given(st.integers(0, 1000), st.floats(0, 1))
def test_objective_linear(seed, a):
    sc = random_tree(seed % 50, 3, 4)
    r = np.random.default_rng(seed)
    x1 = r.random(empty_selection(sc).shape)
    x2 = r.random(x1.shape)
    lhs = objective(sc, a * x1 + (1 - a) * x2)
    rhs = a * objective(sc, x1) + (1 - a) * objective(sc, x2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_doubling_weights_doubles_objective():
    sc = random_tree(2, 3, 5)
    x = np.random.default_rng(0).random(empty_selection(sc).shape)
    from dataclasses import replace
    doubled = replace(sc, users={u: replace(p, weight=2 * p.weight) for u, p in sc.users.items()})
    assert objective(doubled, x) == pytest.approx(2 * objective(sc, x), rel=1e-12)


def _chain_feasible():
    sc = chain(catalog=two_level_catalog())
    x = selection_from_levels(sc, {"U": 2})
    g = sc.graph
    x[g.index["F"], 1] = 1.0
    y = empty_transmission(sc)
    y[g.edge_index[("S", "F")], 1] = 1.0
    y[g.edge_index[("F", "U")], 1] = 1.0
    return sc, x, y


def test_hand_built_chain_is_feasible():
    sc, x, y = _chain_feasible()
    rep = check(sc, x, y, integral=True)
    assert rep.ok, rep.to_dict()


def test_fwd_out_residual():
    sc, x, y = _chain_feasible()
    y[sc.graph.edge_index[("S", "F")], 0] = 1.0
    x[sc.graph.index["S"], 0] = 0.0
    rep = check(sc, x, y)
    assert rep.residual("C-FWD-OUT", ("S", "F", 1)) == 1.0
    assert rep.residual("C-SRV", ("S", 1)) == 1.0


def test_bandwidth_residual():
    sc, x, y = _chain_feasible()
    cap = sc.graph.edge("S", "F").capacity
    k = sc.graph.edge_index[("S", "F")]
    # B = [2, 3]; choose y so that the load is exactly cap + 0.5
    y[k] = [(cap + 0.5 - 3.0) / 2.0, 1.0]
    rep = check(sc, x, y)
    assert rep.residual("C-BW", ("S", "F")) == pytest.approx(0.5, abs=1e-12)


def test_each_family_detected():
    sc, x, y = _chain_feasible()
    g = sc.graph
    x[g.index["U"], 0] = 1.0  # U picks two levels; level 1 never arrives
    rep = check(sc, x, y, integral=True)
    assert rep.residual("C-ONE", ("U",)) == 1.0
    assert rep.residual("C-FWD-IN", ("U", 1)) == 1.0
    x[g.index["U"], 0] = 0.5
    rep = check(sc, x, y, integral=True)
    assert rep.residual("C-INT", ("U", 1)) == 0.5
    sc.users["U"] = sc.users["U"].__class__("U", (1,), 1.0)
    rep = check(sc, x, y)
    assert rep.residual("C-CAP-USR", ("U", 2)) == 1.0


def test_check_shape_mismatch():
    sc = chain()
    with pytest.raises(ValueError):
        check(sc, np.zeros((2, 2)), empty_transmission(sc))


def test_link_load_examples():
    sc = fan_scenario()
    y = empty_transmission(sc)
    assert link_load(sc, y, ("S", "F")) == 0.0
    y[sc.graph.edge_index[("S", "F")]] = [1, 0.5]
    assert link_load(sc, y, ("S", "F")) == 3.5
    y[sc.graph.edge_index[("S", "F")]] = [1, 1]
    assert link_load(sc, y, ("S", "F")) == 5.0
    with pytest.raises(KeyError):
        link_load(sc, y, ("F", "S"))


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11, 12])
def test_oracle_optimum_passes_check(seed):
    sc = random_tree(seed, 3, 4) if seed % 2 else random_dag(seed, 2, 2, 2)
    sol = ilp_optimum(sc)
    assert sol is not None
    assert check(sc, sol.x, sol.y, integral=True).ok
