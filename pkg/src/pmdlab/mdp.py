"""Finite entropy-regularised MDPs and log-density policies.

All measures live on finite sets, so every integral is a weighted sum.
Arrays use the layout ``transition[s, a, s']``, ``cost[s, a]``,
``beta[s, a]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

PROB_TOL = 1e-12
IDENTITY_TOL = 1e-10


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    transition: np.ndarray
    cost: np.ndarray
    gamma: float
    tau: float
    mu: np.ndarray
    rho: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        for name in ("transition", "cost", "mu", "rho", "beta"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "tau", float(self.tau))
        S, A = self.cost.shape
        if self.transition.shape != (S, A, S):
            raise ValueError(f"transition has shape {self.transition.shape}, expected {(S, A, S)}")
        if self.mu.shape != (A,) or self.rho.shape != (S,) or self.beta.shape != (S, A):
            raise ValueError("mu, rho, beta shapes do not match cost")

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]

    @property
    def cost_sup(self) -> float:
        return float(np.abs(self.cost).max())

    def replace(self, **changes) -> "FiniteMdp":
        fields = dict(transition=self.transition, cost=self.cost, gamma=self.gamma,
                      tau=self.tau, mu=self.mu, rho=self.rho, beta=self.beta)
        fields.update(changes)
        return FiniteMdp(**fields)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "tau": self.tau,
            "transition": self.transition.tolist(),
            "cost": self.cost.tolist(),
            "mu": self.mu.tolist(),
            "rho": self.rho.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteMdp":
        required = ("n_states", "n_actions", "gamma", "tau", "transition", "cost", "mu", "rho", "beta")
        missing = [k for k in required if k not in doc]
        if missing:
            raise ValueError(f"instance is missing keys: {', '.join(missing)}")
        mdp = cls(transition=doc["transition"], cost=doc["cost"], gamma=doc["gamma"],
                  tau=doc["tau"], mu=doc["mu"], rho=doc["rho"], beta=doc["beta"])
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError("n_states/n_actions disagree with array shapes")
        report = validate_mdp(mdp)
        if not report.passed:
            raise ValueError("invalid instance: " + "; ".join(report.reasons))
        return mdp


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    reasons: list[str] = field(default_factory=list)


def _is_distribution(p: np.ndarray, axis=-1) -> bool:
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=axis) - 1.0) <= PROB_TOL))


def validate_mdp(instance: FiniteMdp) -> ValidationReport:
    """List every violated invariant of ``instance``; never raises."""
    reasons = []
    arrays = (instance.transition, instance.cost, instance.mu, instance.rho, instance.beta)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        reasons.append("non-finite entries")
    if not _is_distribution(instance.transition, axis=2):
        reasons.append("transition rows are not probability vectors")
    if not _is_distribution(instance.mu):
        reasons.append("reference measure is not a probability vector")
    if np.any(instance.mu <= 0):
        reasons.append("reference measure lacks full support")
    if not _is_distribution(instance.rho):
        reasons.append("initial state law is not a probability vector")
    if not _is_distribution(instance.beta.ravel()):
        reasons.append("critic sampling law is not a probability matrix")
    if np.any(instance.beta <= 0):
        reasons.append("critic sampling law lacks full support")
    if not 0.0 < instance.gamma < 1.0:
        reasons.append("discount not in (0,1)")
    if not instance.tau > 0.0:
        reasons.append("regularisation weight must be positive")
    return ValidationReport(not reasons, reasons)


def load_mdp(path) -> FiniteMdp:
    return FiniteMdp.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LogDensityStats:
    l: np.ndarray
    sup_norm_l: float
    kl_to_mu: np.ndarray
    K_sup: float


@dataclass(frozen=True, eq=False)
class PolicyLogits:
    """Policy ``exp(f) mu / Z`` with the normalised log-density cached.

    ``f`` is only defined up to a per-state constant; two instances with
    logits differing by such a constant describe the same policy.
    """

    f: np.ndarray
    mu: np.ndarray
    cached_log_density: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        f = _frozen(self.f)
        mu = _frozen(self.mu)
        if f.ndim != 2 or f.shape[1] != mu.shape[0]:
            raise ValueError(f"logits shape {f.shape} incompatible with mu of length {mu.shape[0]}")
        if not np.all(np.isfinite(f)):
            raise ValueError("logits not bounded")
        if np.any(mu <= 0):
            raise ValueError("reference measure lacks full support")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "mu", mu)
        # shift-stabilised log-sum-exp against mu
        log_z = logsumexp(f, b=mu[None, :], axis=1)
        object.__setattr__(self, "cached_log_density", _frozen(f - log_z[:, None]))

    @classmethod
    def uniform(cls, n_states: int, mu) -> "PolicyLogits":
        """The policy equal to ``mu`` in every state."""
        mu = np.asarray(mu, dtype=float)
        return cls(np.zeros((n_states, mu.shape[0])), mu)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.cached_log_density) * self.mu[None, :]

    @property
    def shape(self) -> tuple[int, int]:
        return self.f.shape


def log_density(policy: PolicyLogits, mu=None) -> tuple[np.ndarray, LogDensityStats]:
    if mu is not None and not np.array_equal(np.asarray(mu, dtype=float), policy.mu):
        policy = PolicyLogits(policy.f, mu)
    ld = policy.cached_log_density
    l = ld - (ld @ policy.mu)[:, None]
    kl = np.maximum(np.sum(policy.probs * ld, axis=1), 0.0)
    stats = LogDensityStats(l=l, sup_norm_l=float(np.abs(l).max()), kl_to_mu=kl,
                            K_sup=float(kl.max()))
    return ld, stats


def kl_rows(p: PolicyLogits, q: PolicyLogits) -> np.ndarray:
    """Per-state KL(p(.|s) | q(.|s)), computed in log-density space."""
    kl = np.sum(p.probs * (p.cached_log_density - q.cached_log_density), axis=1)
    return np.maximum(kl, 0.0)


def kl_divergences(p: PolicyLogits, q: PolicyLogits, mdp: FiniteMdp | None = None):
    """Return ``(KL(p|q), KL(p|mu))`` per state."""
    if p.shape != q.shape:
        raise ValueError("policies are defined on different (S, A)")
    if mdp is not None and p.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    kl_mu = np.maximum(np.sum(p.probs * p.cached_log_density, axis=1), 0.0)
    return kl_rows(p, q), kl_mu


def total_variation(p: PolicyLogits, q: PolicyLogits) -> float:
    """Largest per-state total-variation distance (half L1)."""
    return float(0.5 * np.abs(p.probs - q.probs).sum(axis=1).max())
