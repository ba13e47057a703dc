"""Exact solvers: policy evaluation, soft-optimal control, occupancy measures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMdp, PolicyLogits, kl_rows

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class PolicyEvaluation:
    v: np.ndarray
    q: np.ndarray
    advantage: np.ndarray
    kl_term: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("v", "q", "advantage", "kl_term")}


@dataclass(frozen=True)
class OccupancyMeasures:
    d_state: np.ndarray
    d_state_action: np.ndarray

    def to_dict(self) -> dict:
        return {"d_state": self.d_state.tolist(), "d_state_action": self.d_state_action.tolist()}


def state_kernel(mdp: FiniteMdp, policy: PolicyLogits) -> np.ndarray:
    """P_pi[s, s'] = sum_a P(s'|s,a) pi(a|s)."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def _kl_to_mu(policy: PolicyLogits) -> np.ndarray:
    return np.maximum(np.sum(policy.probs * policy.cached_log_density, axis=1), 0.0)


def evaluate_policy(mdp: FiniteMdp, policy: PolicyLogits) -> PolicyEvaluation:
    pi = policy.probs
    kl = _kl_to_mu(policy)
    p_pi = state_kernel(mdp, policy)
    rhs = np.sum(pi * mdp.cost, axis=1) + mdp.tau * kl
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, rhs)
    if not np.all(np.isfinite(v)):
        raise RuntimeError("policy evaluation produced non-finite values")
    q = mdp.cost + mdp.gamma * mdp.transition @ v
    adv = q + mdp.tau * policy.cached_log_density - v[:, None]
    return PolicyEvaluation(v=v, q=q, advantage=adv, kl_term=kl)


def bellman_apply(mdp: FiniteMdp, policy: PolicyLogits, f: np.ndarray) -> np.ndarray:
    """Soft on-policy Bellman operator applied to a state-action function."""
    f = np.asarray(f, dtype=float)
    next_v = np.sum(policy.probs * f, axis=1) + mdp.tau * _kl_to_mu(policy)
    return mdp.cost + mdp.gamma * mdp.transition @ next_v


def soft_min(q: np.ndarray, mu: np.ndarray, tau: float) -> np.ndarray:
    """-tau log sum_a exp(-q/tau) mu(a), row-wise.

    Shifted by the row minimum and evaluated through expm1/log1p, so the
    result keeps full relative precision when tau dominates q.
    """
    q_min = q.min(axis=1)
    s = np.sum(np.expm1(-(q - q_min[:, None]) / tau) * mu[None, :], axis=1)
    return q_min - tau * np.log1p(s)


def solve_optimal(mdp: FiniteMdp, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000):
    """Soft value iteration; returns ``(v_star, q_star, pi_star)``.

    Stops once the sup-norm change drops to ``tol * (1 - gamma)``, or to the
    floating-point resolution of ``v`` if that is coarser.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    gamma, tau = mdp.gamma, mdp.tau
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.cost + gamma * mdp.transition @ v
        v_new = soft_min(q, mdp.mu, tau)
        change = float(np.abs(v_new - v).max())
        v = v_new
        floor = 16 * np.finfo(float).eps * (1.0 + float(np.abs(v).max()))
        if change <= max(tol * (1.0 - gamma), floor):
            break
    else:
        raise RuntimeError("soft value iteration did not converge")
    q = mdp.cost + gamma * mdp.transition @ v
    return v, q, PolicyLogits(-q / tau, mdp.mu)


def value_iteration_bound(initial_gap: float, tol: float, gamma: float) -> int:
    """Iteration budget implied by the gamma-contraction."""
    if initial_gap <= tol:
        return 1
    return math.ceil(math.log(initial_gap / tol) / math.log(1.0 / gamma))


def state_occupancy_kernel(mdp: FiniteMdp, policy: PolicyLogits) -> np.ndarray:
    """Row s holds d^pi(.|s) = (1-gamma) sum_n gamma^n P_pi^n(s, .)."""
    n = mdp.n_states
    p_pi = state_kernel(mdp, policy)
    return (1.0 - mdp.gamma) * np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, np.eye(n))


def state_occupancy(mdp: FiniteMdp, policy: PolicyLogits, rho=None) -> np.ndarray:
    rho = mdp.rho if rho is None else np.asarray(rho, dtype=float)
    p_pi = state_kernel(mdp, policy)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi.T
    return (1.0 - mdp.gamma) * np.linalg.solve(a, rho)


def state_action_occupancy(mdp: FiniteMdp, policy: PolicyLogits) -> np.ndarray:
    """d^pi_beta over S x A.

    The state-action recursion d = (1-gamma) beta + gamma pi * x, with x the
    next-state mass under d, reduces to an |S|-dimensional solve for x.
    """
    gamma = mdp.gamma
    p_pi = state_kernel(mdp, policy)
    b = np.einsum("sa,sat->t", mdp.beta, mdp.transition)
    x = (1.0 - gamma) * np.linalg.solve(np.eye(mdp.n_states) - gamma * p_pi.T, b)
    return (1.0 - gamma) * mdp.beta + gamma * policy.probs * x[:, None]


def occupancies(mdp: FiniteMdp, policy: PolicyLogits) -> OccupancyMeasures:
    d_s = state_occupancy(mdp, policy)
    d_sa = state_action_occupancy(mdp, policy)
    for name, d in (("state", d_s), ("state-action", d_sa)):
        if abs(d.sum() - 1.0) > 1e-10 or np.any(d < -1e-14):
            raise RuntimeError(f"{name} occupancy is not a probability measure (sum={d.sum()!r})")
    return OccupancyMeasures(d_state=d_s, d_state_action=d_sa)


def performance_difference(mdp: FiniteMdp, p: PolicyLogits, q: PolicyLogits) -> tuple[float, float]:
    """Both sides of the regularised performance-difference identity."""
    ev_p = evaluate_policy(mdp, p)
    ev_q = evaluate_policy(mdp, q)
    lhs = float(mdp.rho @ ev_p.v - mdp.rho @ ev_q.v)
    d_p = state_occupancy(mdp, p)
    shifted = ev_q.q + mdp.tau * q.cached_log_density
    inner = np.sum(shifted * (p.probs - q.probs), axis=1) + mdp.tau * kl_rows(p, q)
    rhs = float(d_p @ inner) / (1.0 - mdp.gamma)
    return lhs, rhs


def stationary_distribution(mdp: FiniteMdp, policy: PolicyLogits) -> np.ndarray:
    """A law rho with d^pi_rho = rho, i.e. a stationary law of P_pi."""
    p_pi = state_kernel(mdp, policy)
    n = mdp.n_states
    a = np.vstack([p_pi.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    rho, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    rho = np.clip(rho, 0.0, None)
    return rho / rho.sum()
