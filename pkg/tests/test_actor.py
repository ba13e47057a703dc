import numpy as np
import pytest
from hypothesis import given, strategies as st

from pmdlab.actor import ActorConfig, StabilityWarning, argmin_margin, gtilde_objective, mirror_step
from pmdlab.critic import FeatureMap, approx_q_and_advantage
from pmdlab.instances import make_instance
from pmdlab.mdp import PolicyLogits, kl_rows, log_density

from conftest import random_instance, random_policy

# 1/(1 + e), from mpmath
TILT_EXAMPLE = 0.268941421369995120748840758178

seeds = st.integers(0, 10_000)


def test_zero_advantage_keeps_policy():
    mu = np.full(3, 1 / 3)
    pol = PolicyLogits(np.array([[0.3, -1.0, 2.0]]), mu)
    new = mirror_step(pol, np.zeros((1, 3)), ActorConfig(0.5, 1.0))
    np.testing.assert_allclose(new.probs, pol.probs, atol=1e-15)


def test_two_action_tilt():
    pol = PolicyLogits.uniform(1, np.array([0.5, 0.5]))
    new = mirror_step(pol, np.array([[1.0, -1.0]]), ActorConfig(0.5, 1.0))
    assert new.probs[0, 0] == pytest.approx(TILT_EXAMPLE, abs=1e-15)


def test_constant_advantage_is_gauge():
    mu = np.full(2, 0.5)
    pol = PolicyLogits(np.array([[1.0, 0.0], [0.0, -2.0]]), mu)
    new = mirror_step(pol, np.array([[3.0, 3.0], [-1.0, -1.0]]), ActorConfig(0.7, 1.0))
    np.testing.assert_allclose(new.probs, pol.probs, atol=1e-15)


def test_large_step_warns():
    pol = PolicyLogits.uniform(1, np.array([0.5, 0.5]))
    with pytest.warns(StabilityWarning):
        mirror_step(pol, np.zeros((1, 2)), ActorConfig(2.0, 1.0))


def test_actor_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        ActorConfig(0.0, 1.0)


def _setup(seed):
    mdp, feats = random_instance(seed)
    rng = np.random.default_rng(seed)
    base = random_policy(rng, mdp)
    theta = rng.standard_normal(feats.dim) * 3
    cfg = ActorConfig(float(rng.uniform(0.05, 0.95)) / mdp.tau, mdp.tau)
    return mdp, feats, base, theta, cfg


@given(seeds)
def test_gtilde_zero_at_base(seed):
    mdp, feats, base, theta, cfg = _setup(seed)
    assert abs(gtilde_objective(mdp, base, base, theta, feats, cfg)) <= 1e-10 * (1 + np.abs(theta).max())


@given(seeds)
def test_mirror_step_is_argmin(seed):
    mdp, feats, base, theta, cfg = _setup(seed)
    _, a_hat = approx_q_and_advantage(theta, feats, base, mdp)
    new = mirror_step(base, a_hat, cfg)
    assert gtilde_objective(mdp, new, base, theta, feats, cfg) <= 1e-10
    assert argmin_margin(mdp, new, base, theta, feats, cfg, n_probes=100, seed=seed) >= -1e-10


@given(seeds)
def test_mirror_step_matches_per_state_tilt(seed):
    mdp, feats, base, theta, cfg = _setup(seed)
    _, a_hat = approx_q_and_advantage(theta, feats, base, mdp)
    new = mirror_step(base, a_hat, cfg)
    w = base.probs * np.exp(-cfg.lam * (a_hat - a_hat.min(axis=1, keepdims=True)))
    np.testing.assert_allclose(new.probs, w / w.sum(axis=1, keepdims=True), atol=1e-12)


@given(seeds)
def test_log_recursion(seed):
    mdp, feats, base, theta, cfg = _setup(seed)
    _, a_hat = approx_q_and_advantage(theta, feats, base, mdp)
    new = mirror_step(base, a_hat, cfg)
    l_old = log_density(base)[1].sup_norm_l
    l_new = log_density(new)[1].sup_norm_l
    bound = (1 - cfg.tau_lambda) * l_old + 2 * cfg.lam * np.linalg.norm(theta)
    assert l_new <= bound + 1e-9 * (1 + bound)


def test_consecutive_kl_bound_needs_reference_term():
    # theta = 0 with pi^n away from mu: the step still moves, so KL > 0 = lambda/(1-lambda tau) |theta|
    mdp, feats = make_instance(0, 2, 3)
    base = PolicyLogits(np.array([[2.0, 0.0, -1.0], [0.0, 1.0, 0.0]]), mdp.mu)
    cfg = ActorConfig(0.5, mdp.tau)
    theta = np.zeros(feats.dim)
    _, a_hat = approx_q_and_advantage(theta, feats, base, mdp)
    kl = kl_rows(mirror_step(base, a_hat, cfg), base)
    assert kl.max() > 0
    k_n = log_density(base)[1].K_sup
    assert kl.max() <= cfg.lam / (1 - cfg.tau_lambda) * (2 * 0.0 + mdp.tau * k_n)
