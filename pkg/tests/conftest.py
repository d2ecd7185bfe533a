import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from comets.network import Edge, NetworkGraph, ResolutionCatalog, Level, Scenario, UserProfile
from comets.topology import chain

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def two_level_catalog(b=(2.0, 3.0), heights=(480, 960)):
    return ResolutionCatalog([Level(f"L{i + 1}", h, bw, (50.0 + 20 * i, 70.0 + 20 * i))
                              for i, (h, bw) in enumerate(zip(heights, b))])


def fan_scenario(cap_sf=10.0, cap_fu=10.0, users=("U1", "U2"), levels=(1, 2), catalog=None):
    """S -> F -> each user."""
    cat = catalog or two_level_catalog()
    roles = {"S": "server", "F": "forwarder", **{u: "user" for u in users}}
    edges = [Edge("S", "F", cap_sf)] + [Edge("F", u, cap_fu) for u in users]
    profiles = {u: UserProfile(u, tuple(levels), 1.0) for u in users}
    return Scenario(NetworkGraph(roles, edges), cat, profiles)


@pytest.fixture
def chain_scenario():
    return chain()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dag(seed, n_fwd=3, n_users=3, n_levels=3, max_parents=2):
    """Small layered DAG: every node draws 1..max_parents parents among earlier nodes."""
    r = np.random.default_rng(seed)
    cat = ResolutionCatalog([Level(f"L{i + 1}", 240 * (i + 1), float(2 ** i))
                             for i in range(n_levels)])
    roles = {"S": "server"}
    upstream = ["S"]
    edges = []
    for i in range(n_fwd):
        f = f"F{i + 1}"
        roles[f] = "forwarder"
        k = int(r.integers(1, min(max_parents, len(upstream)) + 1))
        for p in r.choice(upstream, size=k, replace=False):
            edges.append(Edge(str(p), f, float(r.uniform(1, 4 * cat.bandwidths[-1]))))
        upstream.append(f)
    profiles = {}
    for i in range(n_users):
        u = f"U{i + 1}"
        roles[u] = "user"
        k = int(r.integers(1, min(max_parents, len(upstream)) + 1))
        for p in r.choice(upstream, size=k, replace=False):
            edges.append(Edge(str(p), u, float(r.uniform(1, 2 * cat.bandwidths[-1]))))
        lv = sorted(set(int(v) for v in r.integers(1, n_levels + 1, size=int(r.integers(1, n_levels + 1)))))
        profiles[u] = UserProfile(u, tuple(lv), float(r.uniform(0.5, 2.0)))
    return Scenario(NetworkGraph(roles, edges), cat, profiles)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
