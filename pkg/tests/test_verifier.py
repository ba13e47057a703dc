import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmdlab.critic import FeatureMap, build_certificate, exact_theta
from pmdlab.driver import RunConfig, Schedule, run_actor_critic
from pmdlab.instances import cycle_instance, make_instance
from pmdlab.mdp import FiniteMdp, PolicyLogits
from pmdlab.oracle import solve_optimal, state_occupancy, stationary_distribution
from pmdlab.verifier import (CheckReport, check_critic, check_stability, compare, concentrability,
                             verify)

from conftest import random_instance


def _by_name(reports):
    return {r["check_name"] if isinstance(r, dict) else r.check_name: r for r in reports}


def test_compare_slack_and_first_violation():
    ok = compare("x", [1.0, 2.0], [1.0 - 5e-10, 3.0])
    assert ok.passed
    bad = compare("x", [1.0, 2.0, 5.0], [2.0, 1.0, 0.0])
    assert bad.status == "fail" and bad.first_violation_n == 1 and bad.worst_margin == -5.0


def test_compare_empty_is_skipped_not_passed():
    r = compare("x", [], [])
    assert r.status == "skipped" and r.skip_reason.startswith("precondition")


def test_report_dict_has_pass_flag():
    d = CheckReport("x", "pass", worst_margin=0.0).to_dict()
    assert d["pass"] is True and d["check_name"] == "x"


def test_fabricated_log_recursion_violation(tabular):
    mdp, feats = tabular
    assert mdp.tau == 1.0
    cert = build_certificate(mdp, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=cert.h_singleloop_lemma31, lam=0.5,
                                                n_policy_updates=1, schedule=Schedule("single")))
    tr.l_sup = [1.0, 10.0]
    tr.theta_norm = [tr.theta_norm[0], 0.0]
    r = _by_name(check_stability(tr, cert, mdp))["lemma32_log_recursion"]
    assert r.status == "fail" and r.first_violation_n == 0
    assert r.worst_margin == pytest.approx(-9.5, abs=1e-15)


def test_theta_recursion_skipped_when_h_too_large(tabular):
    mdp, feats = tabular
    cert = build_certificate(mdp, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=2 * cert.h_singleloop_lemma31, lam=0.5,
                                                n_policy_updates=3, schedule=Schedule("single")))
    r = _by_name(check_stability(tr, cert, mdp))["lemma31_theta_recursion"]
    assert r.status == "skipped" and r.skip_reason.startswith("precondition")


def test_admissible_single_loop_passes(tabular):
    mdp, feats = tabular
    cert = build_certificate(mdp, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=cert.h_singleloop_lemma31, lam=0.5,
                                                n_policy_updates=40, schedule=Schedule("single")))
    reps = _by_name(check_stability(tr, cert, mdp))
    for name in ("lemma31_theta_recursion", "lemma32_log_recursion", "lemmaB4_kl_vs_l"):
        assert reps[name].passed, reps[name]


def test_critic_at_fixed_point_has_zero_margin(tabular):
    mdp, feats = tabular
    cert = build_certificate(mdp, feats)
    pi0 = PolicyLogits.uniform(mdp.n_states, mdp.mu)
    theta_pi, _ = exact_theta(mdp, pi0, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=0.5 * cert.h_doubleloop, lam=0.5, n_policy_updates=1,
                                                schedule=Schedule("constant", M=5),
                                                theta0=tuple(theta_pi)))
    r = _by_name(check_critic(tr, cert, mdp))["thm41_inner_endpoint"]
    assert r.passed and abs(r.worst_margin) <= 1e-12


def test_critic_checks_skip_unrealisable():
    mdp, feats = make_instance(2, 4, 3, feature_kind="random_rank", rank=3)
    cert = build_certificate(mdp, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=0.5 * cert.h_doubleloop, lam=0.5, n_policy_updates=2,
                                                schedule=Schedule("constant", M=3)))
    for r in check_critic(tr, cert, mdp):
        assert r.status == "skipped" and "realisable" in r.skip_reason


def test_concentrability_single_state():
    mdp = FiniteMdp(transition=np.ones((1, 2, 1)), cost=np.array([[0.2, 0.7]]), gamma=0.6, tau=1.0,
                    mu=np.array([0.5, 0.5]), rho=np.array([1.0]), beta=np.array([[0.5, 0.5]]))
    _, _, pi_star = solve_optimal(mdp)
    xi = concentrability(mdp, pi_star)
    assert xi.xi_statement == pytest.approx(1.0, abs=1e-15)
    assert xi.xi_proof == pytest.approx(1 / 0.4, rel=1e-14)


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_concentrability_at_stationary_rho(seed):
    mdp, _ = random_instance(seed)
    _, _, pi_star = solve_optimal(mdp)
    mdp = mdp.replace(rho=stationary_distribution(mdp, pi_star))
    assert concentrability(mdp, pi_star).xi_statement == pytest.approx(1.0, abs=1e-10)


def test_concentrability_ratio_example():
    # action-independent kernel into state 0 with prob 17/18; gamma = 0.9 gives d = (0.9, 0.1)
    p = 17 / 18
    row = np.array([p, 1 - p])
    mdp = FiniteMdp(transition=np.broadcast_to(row, (2, 2, 2)).copy(), cost=np.zeros((2, 2)),
                    gamma=0.9, tau=1.0, mu=np.full(2, 0.5), rho=np.full(2, 0.5), beta=np.full((2, 2), 0.25))
    _, _, pi_star = solve_optimal(mdp)
    np.testing.assert_allclose(state_occupancy(mdp, pi_star), [0.9, 0.1], atol=1e-14)
    assert concentrability(mdp, pi_star).xi_statement == pytest.approx(1.8, rel=1e-13)


def test_concentrability_infinite_without_support():
    mdp, _ = cycle_instance()
    _, _, pi_star = solve_optimal(mdp)
    xi = concentrability(mdp, pi_star)
    assert xi.xi_statement == np.inf and xi.kappa_statement == 1.0


def test_start_at_optimum_stays_there(tabular):
    mdp, feats = tabular
    _, _, pi_star = solve_optimal(mdp)
    cert = build_certificate(mdp, feats)
    theta_star, _ = exact_theta(mdp, pi_star, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=0.5 * cert.h_doubleloop, lam=0.5, n_policy_updates=20,
                                                schedule=Schedule("constant", M=50),
                                                pi0=tuple(map(tuple, pi_star.f)),
                                                theta0=tuple(theta_star)))
    assert max(abs(g) for g in tr.gap) <= 1e-8
    rep = verify(tr, mdp, feats)
    assert _by_name(rep["checks"])["thmB3_cumulative_error"]["status"] != "fail"
    assert rep["all_passed"]


def test_verify_report_structure(tabular):
    mdp, feats = tabular
    cert = build_certificate(mdp, feats)
    tr = run_actor_critic(mdp, feats, RunConfig(h=cert.h_singleloop_lemma31, lam=0.5,
                                                n_policy_updates=10, schedule=Schedule("single")))
    rep = verify(tr, mdp, feats)
    assert {"checks", "certificate", "constants", "aborted", "all_passed", "eta"} <= set(rep)
    for ch in rep["checks"]:
        assert ch["status"] in ("pass", "fail", "skipped")
        if ch["status"] == "skipped":
            assert ch["skip_reason"].startswith("precondition")
    assert rep["eta"] == pytest.approx(0.5 / cert.h_singleloop_lemma31)
