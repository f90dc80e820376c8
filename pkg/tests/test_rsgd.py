import math

import numpy as np
import pytest

from rekit import model, rsgd
from rekit.model import Topology


def test_interaction_term_examples():
    assert rsgd.interaction_term(3, 1, 0.7, 3, "corrected") == pytest.approx(0.0, abs=1e-15)
    assert rsgd.interaction_term(3, 1, 0.7, 3, "continuous") == 0.0
    assert rsgd.interaction_term(1, 1, 1.0, 3, "standard") == pytest.approx(math.tanh(1) - 1)
    assert rsgd.interaction_term(1, -1, 1.0, 3, "standard") == pytest.approx(math.tanh(1) + 1)
    # y = 1 artifact of the standard form vs exact zero of the corrected one
    assert rsgd.interaction_term(1, 1, 0.5, 1, "standard") != 0
    assert rsgd.interaction_term(1, 1, 0.5, 1, "corrected") == pytest.approx(0.0, abs=1e-15)
    assert rsgd.interaction_term(-1, -1, 0.5, 1, "corrected") == pytest.approx(0.0, abs=1e-15)
    # infinite coupling: tanh -> sign
    assert rsgd.interaction_term(1, -1, math.inf, 3) == 2.0
    with pytest.raises(ValueError):
        rsgd.interaction_term(1, 1, 1.0, 3, "bogus")


def test_pattern_gradient_perceptron():
    t = Topology(3)
    g = rsgd.pattern_gradient(np.array([-1, 1, -1]), np.array([[1, -1, 1]]), t)
    assert list(g) == [-0.5, 0.5, -0.5]
    assert not rsgd.pattern_gradient(np.array([1, -1, 1]), np.array([[1, -1, 1]]), t).any()


def test_pattern_gradient_committee_selects_cheapest_unit():
    t = Topology(9, 3, "tree")
    w = np.ones(9, dtype=np.int8)
    xi = np.array([[-1, -1, -1], [-1, -1, 1], [1, 1, 1]])
    g = rsgd.pattern_gradient(w, xi, t)
    assert not g[:3].any() and not g[6:].any()
    assert list(g[3:6]) == [0.5, 0.5, -0.5]


def test_two_layer_tie_break_lowest_index():
    t = Topology(9, 3, "tree")
    w = np.ones(9, dtype=np.int8)
    xi = np.array([[-1, -1, 1], [-1, -1, 1], [-1, -1, -1]])  # fields (-1, -1, -3): c = 2
    g = rsgd.pattern_gradient(w, xi, t)
    assert g[:6].any() and not g[6:].any()
    xi2 = np.array([[-1, -1, 1], [1, 1, 1], [-1, -1, 1]])  # fields (-1, 3, -1): c = 1, tie
    g2 = rsgd.pattern_gradient(w, xi2, t)
    assert g2[:3].any() and not g2[3:].any()


@pytest.mark.parametrize("topo", [Topology(15), Topology(15, 3, "tree"), Topology(15, 5, "committee")])
def test_gradient_selected_units_are_the_energy_ones(topo):
    """Flipping a weight against the gradient on a selected unit lowers the unit's cost."""
    rng = np.random.default_rng(0)
    p = model.generate_patterns(topo, 40 / topo.N, 1)
    for _ in range(20):
        w = model.random_weights(topo, rng)
        for xi in p.xi:
            g = rsgd.pattern_gradient(w, xi, topo)
            e = model.pattern_energy(w, xi, topo)
            assert (e == 0) == (not g.any())
            assert set(np.unique(np.abs(g))) <= {0.0, 0.5}
            if e == 0:
                continue
            d = model.unit_fields(w, xi, topo)
            units = sorted(set(np.flatnonzero(g) // topo.n))
            out = np.where(d > 0, 1, -1).sum()
            assert len(units) == (1 - out) // 2
            costs = sorted(((1 - dk) // 2, k) for k, dk in enumerate(d) if dk < 0)
            assert units == sorted(k for _, k in costs[: len(units)])
            # moving along -g on those units lowers the summed repair cost of the chosen units
            for k in units:
                j = k * topo.n + int(np.flatnonzero(g[k * topo.n:(k + 1) * topo.n])[0])
                assert np.sign(-g[j]) == xi.ravel()[j]


def test_clipped_perceptron_rule_special_case():
    t = Topology(51)
    p = model.generate_patterns(t, 0.5, 3)
    rng = np.random.default_rng(1)
    init = rng.choice([-3, -1, 1, 3], size=51).astype(float)
    state = rsgd.ShadowWeights.from_shadow(init[None, :])
    cfg = rsgd.SgdConfig(y=1, minibatch=1, eta=4.0, eta_prime=0.0)
    ref = init.copy()
    for step in range(300):
        mu = int(rng.integers(p.M))
        w = np.where(ref >= 0, 1, -1)
        if (w * p.xi[mu, 0]).sum() < 0:
            ref = ref + 2 * p.xi[mu, 0]
        rsgd.sgd_step(state, 0, [mu], p, cfg, gamma=1.0)
        assert np.array_equal(state.shadow[0], ref)
        assert np.all(np.abs(state.shadow[0]) % 2 == 1)


def test_decoupled_replicas_match_independent_runs():
    t = Topology(45, 3, "committee")
    p = model.generate_patterns(t, 0.5, 2)
    rng = np.random.default_rng(4)
    shadows = rng.normal(size=(3, 45))
    joint = rsgd.ShadowWeights.from_shadow(shadows)
    single = [rsgd.ShadowWeights.from_shadow(shadows[a]) for a in range(3)]
    cfg = rsgd.SgdConfig(y=3, minibatch=5, eta_prime=0.0, gamma0=3.0)
    for _ in range(100):
        a = int(rng.integers(3))
        batch = rng.choice(p.M, size=5, replace=False)
        rsgd.sgd_step(joint, a, batch, p, cfg, gamma=3.0)
        rsgd.sgd_step(single[a], 0, batch, p, rsgd.SgdConfig(y=1, minibatch=5), gamma=3.0)
    for a in range(3):
        assert np.allclose(joint.shadow[a], single[a].shadow[0])
    assert np.array_equal(joint.T, joint.W.sum(axis=0))


def test_scale_invariance():
    t = Topology(45, 3, "committee")
    p = model.generate_patterns(t, 0.6, 5)
    base = rsgd.SgdConfig(y=3, minibatch=7, eta=1.0, eta_prime=0.3, gamma0=0.2, dgamma=0.05, max_epochs=30)
    scaled = rsgd.SgdConfig(y=3, minibatch=7, eta=0.25, eta_prime=0.075, gamma0=0.2, dgamma=0.05,
                            max_epochs=30, init_scale=0.25)
    r1 = rsgd.run_rsgd(p, base, seed=3)
    r2 = rsgd.run_rsgd(p, scaled, seed=3)
    assert [r["min_errors"] for r in r1.trace] == [r["min_errors"] for r in r2.trace]
    assert r1.solution == r2.solution


def test_site_sums_stay_consistent():
    t = Topology(45, 3, "tree")
    p = model.generate_patterns(t, 0.6, 5)
    rng = np.random.default_rng(2)
    state = rsgd.ShadowWeights.equal_start(t, 5, rng)
    cfg = rsgd.SgdConfig(y=5, minibatch=4, eta_prime=0.7, variant="corrected")
    for _ in range(300):
        rsgd.sgd_step(state, int(rng.integers(5)), rng.choice(p.M, 4, replace=False), p, cfg, gamma=0.8)
        assert np.array_equal(state.T, state.W.sum(axis=0))
        assert np.array_equal(state.W, np.where(state.shadow > 0, 1, -1))
        assert not np.any(state.shadow == 0)


def test_run_rsgd_solves_easy_problem_and_verifies():
    t = Topology(105, 5, "committee")
    p = model.generate_patterns(t, 0.2, 1)
    cfg = rsgd.SgdConfig(y=3, minibatch=5, eta_prime=0.002, gamma0=0.1, dgamma=0.001, max_epochs=2000,
                         init_scale=0.1)
    r = rsgd.run_rsgd(p, cfg, seed=0)
    assert r.status == "solved"
    assert model.total_energy(np.array(r.solution), p) == 0
    assert r.trace[-1]["min_errors"] == 0
    assert r.deterministic_dict() == rsgd.run_rsgd(p, cfg, seed=0).deterministic_dict()


def test_config_validation():
    with pytest.raises(ValueError):
        rsgd.SgdConfig(minibatch=0)
    with pytest.raises(ValueError):
        rsgd.SgdConfig(max_epochs=0)
    with pytest.raises(ValueError):
        rsgd.SgdConfig(variant="x")
