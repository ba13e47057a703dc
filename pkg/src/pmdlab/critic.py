"""Linear critic: features, semi-gradient TD, projected parameters, step-size certificate."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .mdp import FiniteMdp, PolicyLogits
from .oracle import bellman_apply, evaluate_policy, state_action_occupancy, state_kernel

RANK_TOL = 1e-14
RIDGE = 1e-12
COND_LIMIT = 1e12


class AssumptionError(ValueError):
    """A structural assumption on (features, beta) fails."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Rows of ``phi`` are indexed by ``s * n_actions + a``."""

    phi: np.ndarray
    n_states: int
    n_actions: int
    scale_applied: float = 1.0

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != self.n_states * self.n_actions:
            raise ValueError(f"phi must have {self.n_states * self.n_actions} rows, got shape {phi.shape}")
        if np.max(np.linalg.norm(phi, axis=1)) > 1.0 + 1e-12:
            raise ValueError("feature rows must have Euclidean norm <= 1 (use FeatureMap.normalised)")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def normalised(cls, phi, n_states: int, n_actions: int) -> "FeatureMap":
        """Divide every row by the largest row norm when that exceeds one."""
        phi = np.asarray(phi, dtype=float)
        biggest = float(np.max(np.linalg.norm(phi, axis=1)))
        scale = 1.0 / biggest if biggest > 1.0 else 1.0
        return cls(phi * scale, n_states, n_actions, scale)

    @classmethod
    def onehot(cls, n_states: int, n_actions: int) -> "FeatureMap":
        return cls(np.eye(n_states * n_actions), n_states, n_actions)

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def q(self, theta) -> np.ndarray:
        return (self.phi @ np.asarray(theta, dtype=float)).reshape(self.n_states, self.n_actions)

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "scale_applied": self.scale_applied}


@dataclass(frozen=True)
class CriticState:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValueError("critic parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))


def _theta(x) -> np.ndarray:
    return np.asarray(getattr(x, "theta", x), dtype=float)


def second_moment(mdp: FiniteMdp, features: FeatureMap) -> np.ndarray:
    """Sigma_beta = sum phi phi^T beta(s, a)."""
    w = mdp.beta.ravel()
    return features.phi.T @ (features.phi * w[:, None])


@dataclass(frozen=True)
class StepSizeCertificate:
    gamma: float
    lambda_beta: float
    lambda_beta_residual: float
    gamma_const: float
    h_singleloop_lemma31: float
    h_thm31: float
    h_thm31_stated: float
    h_doubleloop: float
    h_delta2_limit: float
    cond_32gamma: bool
    tau_lambda_ok: bool | None = None
    h: float | None = None
    actor_step: float | None = None
    h_ok_lemma31: bool | None = None
    h_ok_thm31: bool | None = None
    h_ok_doubleloop: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _thm31_threshold(gamma_const: float, gamma: float, k1: float, k2: float) -> float:
    g2 = gamma * gamma
    first = gamma_const / (3 * (1 + gamma) ** 2)
    second = (gamma_const ** 2 - k1 * g2) / (gamma_const * (k2 * g2 + 3 * (1 + gamma) ** 2))
    return 0.5 * min(first, second)


def thresholds(gamma: float, lambda_beta: float) -> dict:
    """Every step-size threshold as a function of (gamma, lambda_beta)."""
    big_gamma = (1 - gamma) * (1 - math.sqrt(gamma)) * lambda_beta
    return {
        "gamma_const": big_gamma,
        "h_singleloop_lemma31": big_gamma / (6 * (1 + gamma) ** 2),
        "h_thm31": _thm31_threshold(big_gamma, gamma, 32.0, 48.0),
        "h_thm31_stated": _thm31_threshold(big_gamma, gamma, 16.0, 24.0),
        "h_doubleloop": min(big_gamma / (2 * (1 + gamma)), 1.0 / big_gamma),
        "h_delta2_limit": big_gamma / (3 * (1 + gamma) ** 2),
        "cond_32gamma": bool(32 * gamma ** 2 / big_gamma ** 2 < 1),
    }


def build_certificate(mdp: FiniteMdp, features: FeatureMap, h: float | None = None,
                      actor_step: float | None = None) -> StepSizeCertificate:
    sigma = second_moment(mdp, features)
    evals, evecs = linalg.eigh(sigma)
    lam = float(evals[0])
    if lam <= RANK_TOL:
        raise AssumptionError("Assumption 1 violated: features not full rank under beta")
    resid = float(np.linalg.norm(sigma @ evecs[:, 0] - lam * evecs[:, 0]))
    t = thresholds(mdp.gamma, lam)
    flags = {}
    if actor_step is not None:
        flags["tau_lambda_ok"] = bool(0 < mdp.tau * actor_step < 1)
    if h is not None:
        flags["h_ok_lemma31"] = bool(0 < h <= t["h_singleloop_lemma31"])
        flags["h_ok_thm31"] = bool(0 < h <= t["h_thm31"] and t["cond_32gamma"])
        flags["h_ok_doubleloop"] = bool(0 < h < t["h_doubleloop"])
    return StepSizeCertificate(gamma=mdp.gamma, lambda_beta=lam, lambda_beta_residual=resid,
                               h=h, actor_step=actor_step, **t, **flags)


def approx_q_and_advantage(theta, features: FeatureMap, policy: PolicyLogits,
                           mdp: FiniteMdp) -> tuple[np.ndarray, np.ndarray]:
    q_hat = features.q(_theta(theta))
    shifted = q_hat + mdp.tau * policy.cached_log_density
    a_hat = shifted - np.sum(shifted * policy.probs, axis=1, keepdims=True)
    return q_hat, a_hat


def msbe_and_semigradient(mdp: FiniteMdp, policy: PolicyLogits, theta,
                          features: FeatureMap, d_beta: np.ndarray | None = None):
    """Return ``(MSBE, g)`` with both integrals taken against d^pi_beta."""
    q_theta = features.q(_theta(theta))
    if d_beta is None:
        d_beta = state_action_occupancy(mdp, policy)
    resid = q_theta - bellman_apply(mdp, policy, q_theta)
    msbe = 0.5 * float(np.sum(resid ** 2 * d_beta))
    g = features.phi.T @ (resid * d_beta).ravel()
    return msbe, g


def td_affine(mdp: FiniteMdp, policy: PolicyLogits, features: FeatureMap,
              d_beta: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """For fixed pi the semi-gradient is affine: g(theta) = G theta - b."""
    if d_beta is None:
        d_beta = state_action_occupancy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    phi = features.phi
    pi = policy.probs
    # P^pi as an (SA x SA) kernel: P(s'|s,a) pi(a'|s')
    p_sa = (mdp.transition[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)
    w = d_beta.ravel()
    big_g = phi.T @ (w[:, None] * (phi - mdp.gamma * p_sa @ phi))
    kl = np.maximum(np.sum(pi * policy.cached_log_density, axis=1), 0.0)
    reward = (mdp.cost + mdp.tau * mdp.gamma * mdp.transition @ kl).ravel()
    return big_g, phi.T @ (w * reward)


def td_step(theta, h: float, g) -> CriticState:
    if not h > 0:
        raise ValueError("critic step size must be positive")
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("semi-gradient has non-finite entries")
    return CriticState(_theta(theta) - h * g)


def projection_solve(sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if np.linalg.eigvalsh(sigma)[0] <= RANK_TOL:
        raise AssumptionError("Assumption 1 violated: features not full rank under beta")
    if np.linalg.cond(sigma) > COND_LIMIT:
        warnings.warn("feature second moment is ill-conditioned; adding ridge jitter", RuntimeWarning)
        sigma = sigma + RIDGE * np.eye(sigma.shape[0])
    return linalg.solve(sigma, rhs, assume_a="pos")


def exact_theta(mdp: FiniteMdp, policy: PolicyLogits, features: FeatureMap,
                q: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """L2(beta) projection of Q^pi onto the feature span, with its sup residual."""
    if q is None:
        q = evaluate_policy(mdp, policy).q
    rhs = features.phi.T @ (q * mdp.beta).ravel()
    theta = projection_solve(second_moment(mdp, features), rhs)
    residual = float(np.abs(features.q(theta) - q).max())
    return theta, residual


def state_action_kernel(mdp: FiniteMdp, policy: PolicyLogits) -> np.ndarray:
    S, A = mdp.n_states, mdp.n_actions
    return (mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]).reshape(S * A, S * A)


__all__ = [
    "AssumptionError", "FeatureMap", "CriticState", "StepSizeCertificate", "build_certificate",
    "approx_q_and_advantage", "msbe_and_semigradient", "td_affine", "td_step", "exact_theta",
    "second_moment", "thresholds", "state_action_kernel", "state_kernel",
]
