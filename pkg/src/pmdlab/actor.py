"""Closed-form KL mirror step on logits and the linearised surrogate it minimises."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .critic import FeatureMap, approx_q_and_advantage
from .mdp import FiniteMdp, PolicyLogits, kl_rows
from .oracle import state_occupancy

PERTURBATION_SCALES = (1e-3, 1e-1, 1.0)


@dataclass(frozen=True)
class ActorConfig:
    lam: float
    tau: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("actor step size must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def tau_lambda(self) -> float:
        return self.tau * self.lam

    @property
    def stable(self) -> bool:
        return 0.0 < self.tau_lambda < 1.0


class StabilityWarning(RuntimeWarning):
    pass


def mirror_step(policy: PolicyLogits, a_hat, config: ActorConfig) -> PolicyLogits:
    """Exponential tilt of ``policy`` by ``-lam * a_hat``.

    The new logits start from the normalised log-density, so the per-state
    normaliser never accumulates in ``f``.
    """
    if not config.stable:
        warnings.warn(f"tau*lambda = {config.tau_lambda:g} outside (0, 1)", StabilityWarning)
    a_hat = np.asarray(a_hat, dtype=float)
    return PolicyLogits(policy.cached_log_density - config.lam * a_hat, policy.mu)


def gtilde_objective(mdp: FiniteMdp, candidate: PolicyLogits, base: PolicyLogits, theta,
                     features: FeatureMap, config: ActorConfig,
                     d_base: np.ndarray | None = None) -> float:
    _, a_hat = approx_q_and_advantage(theta, features, base, mdp)
    if d_base is None:
        d_base = state_occupancy(mdp, base)
    per_state = np.sum(a_hat * candidate.probs, axis=1) + kl_rows(candidate, base) / config.lam
    return float(d_base @ per_state)


def argmin_margin(mdp: FiniteMdp, new: PolicyLogits, base: PolicyLogits, theta,
                  features: FeatureMap, config: ActorConfig, n_probes: int = 100,
                  seed: int = 0) -> float:
    """min over probes of G~(probe) - G~(new); non-negative when ``new`` is the argmin.

    Probes are ``base`` itself plus seeded logit perturbations of ``new`` at
    each scale in PERTURBATION_SCALES.
    """
    rng = np.random.default_rng(seed)
    d_base = state_occupancy(mdp, base)
    at_new = gtilde_objective(mdp, new, base, theta, features, config, d_base)
    margins = [gtilde_objective(mdp, base, base, theta, features, config, d_base) - at_new]
    for i in range(n_probes):
        scale = PERTURBATION_SCALES[i % len(PERTURBATION_SCALES)]
        probe = PolicyLogits(new.f + scale * rng.standard_normal(new.shape), new.mu)
        margins.append(gtilde_objective(mdp, probe, base, theta, features, config, d_base) - at_new)
    return float(min(margins))
