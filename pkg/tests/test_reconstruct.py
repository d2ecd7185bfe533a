import numpy as np
import pytest
from hypothesis import given, strategies as st

from comets.milp import check, empty_selection, empty_transmission, link_load, objective
from comets.network import compute_depths
from comets.oracle import ilp_optimum
from comets.dual import continuous_knapsack
from comets.reconstruct import reconstruct, residual_violations
from comets.topology import random_tree

from conftest import fan_scenario, random_dag


def test_hand_traced_example():
    sc = fan_scenario(users=("U1", "U2"))
    g = sc.graph
    x = empty_selection(sc)
    y = empty_transmission(sc)
    y[g.edge_index[("S", "F")]] = [1, 0.6]
    y[g.edge_index[("F", "U1")]] = [1, 1]
    y[g.edge_index[("F", "U2")]] = [1, 1]
    r = reconstruct(sc, x, y)
    np.testing.assert_array_equal(r.x[g.index["F"]], [1, 0])
    np.testing.assert_array_equal(r.y[g.edge_index[("F", "U1")]], [1, 0])
    np.testing.assert_array_equal(r.y[g.edge_index[("F", "U2")]], [1, 0])
    assert r.levels(sc) == {"U1": 1, "U2": 1}
    assert r.unserved_users == []
    np.testing.assert_array_equal(r.x[g.index["S"]], [1, 1])


def test_integral_feasible_input_is_identity():
    sc = random_tree(5, 3, 4)
    sol = ilp_optimum(sc)
    r = reconstruct(sc, sol.x, sol.y)
    np.testing.assert_array_equal(r.y, sol.y)
    for u in sc.graph.users:
        np.testing.assert_array_equal(r.x[sc.graph.index[u]], sol.x[sc.graph.index[u]])
    assert objective(sc, r.x) == pytest.approx(sol.z)


def test_zero_transmission_strands_everyone():
    sc = fan_scenario()
    r = reconstruct(sc, empty_selection(sc), empty_transmission(sc))
    assert r.unserved_users == ["U1", "U2"]
    assert not r.x[[sc.graph.index["U1"], sc.graph.index["U2"]]].any()


def test_shape_error():
    sc = fan_scenario()
    with pytest.raises(ValueError):
        reconstruct(sc, np.zeros((1, 2)), empty_transmission(sc))


@given(st.integers(0, 10**6))
def test_random_fractional_inputs_repair_to_feasible(seed):
    r = np.random.default_rng(seed)
    sc = random_dag(seed % 500, int(r.integers(1, 5)), int(r.integers(1, 5)), int(r.integers(1, 4)))
    x = r.random(empty_selection(sc).shape)
    # knapsack-shaped rows: within capacity, at most one fractional entry
    B = sc.catalog.bandwidths
    y = np.array([continuous_knapsack(r.normal(1.0, 1.0, B.size), B, e.capacity) for e in sc.graph.edges])
    out = reconstruct(sc, x, y)
    assert residual_violations(sc, out) == {}
    rep = check(sc, out.x, out.y, integral=True)
    assert sorted(c[0] for c, _ in rep.families["C-ONE"]) == sorted(out.unserved_users)
    for e in sc.graph.edges:
        assert link_load(sc, out.y, (e.src, e.dst)) <= link_load(sc, y, (e.src, e.dst)) + 1e-12
    # upstream nodes are processed before their children
    pos = {n: i for i, n in enumerate(out.order)}
    for e in sc.graph.edges:
        assert pos[e.src] < pos[e.dst]
    depth = compute_depths(sc.graph)
    assert [depth[n] for n in out.order] == sorted(depth[n] for n in out.order)
    again = reconstruct(sc, x, y)
    assert again.x.tobytes() == out.x.tobytes() and again.y.tobytes() == out.y.tobytes()
