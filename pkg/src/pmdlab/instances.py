"""Seeded instance generators and the bundled demo instances."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .critic import FeatureMap
from .mdp import FiniteMdp

FEATURE_KINDS = ("onehot", "random_rank", "linear_mdp")
DEMOS = ("tabular_6x4", "linear_4x3", "cycle_2")


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def make_instance(seed: int, n_states: int, n_actions: int, feature_kind: str = "onehot",
                  rank: int | None = None, gamma: float = 0.5, tau: float = 1.0):
    """Return ``(mdp, features)``; mu, rho and beta are uniform."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("sizes must be >= 1")
    if feature_kind not in FEATURE_KINDS:
        raise ValueError(f"unknown feature kind {feature_kind!r}")
    rng = np.random.default_rng(seed)
    S, A = n_states, n_actions
    common = dict(gamma=gamma, tau=tau, mu=_uniform(A), rho=_uniform(S),
                  beta=np.full((S, A), 1.0 / (S * A)))
    if feature_kind == "linear_mdp":
        k = rank if rank is not None else 2
        if not 1 <= k <= S * A:
            raise ValueError(f"rank must lie in [1, {S * A}] for a {S}x{A} linear MDP")
        phi = rng.dirichlet(np.ones(k), size=S * A)
        psi = rng.dirichlet(np.ones(S), size=k)
        w = rng.uniform(0.0, 1.0, size=k)
        transition = (phi @ psi).reshape(S, A, S)
        transition /= transition.sum(axis=2, keepdims=True)
        cost = (phi @ w).reshape(S, A)
        features = FeatureMap.normalised(phi, S, A)
        if np.linalg.matrix_rank(features.phi) < k:
            raise ValueError("sampled linear-MDP factors are rank deficient; try another seed")
    else:
        transition = rng.dirichlet(np.ones(S), size=(S, A))
        cost = rng.uniform(0.0, 1.0, size=(S, A))
        if feature_kind == "onehot":
            features = FeatureMap.onehot(S, A)
        else:
            k = rank if rank is not None else 2
            if not 1 <= k <= S * A:
                raise ValueError(f"rank must lie in [1, {S * A}]")
            features = FeatureMap.normalised(rng.standard_normal((S * A, k)), S, A)
    return FiniteMdp(transition=transition, cost=cost, **common), features


def cycle_instance(gamma: float = 0.5, tau: float = 1.0):
    """Two states swapping deterministically; cost 1 in state 0 and 0 in state 1."""
    transition = np.zeros((2, 2, 2))
    transition[0, :, 1] = 1.0
    transition[1, :, 0] = 1.0
    cost = np.array([[1.0, 1.0], [0.0, 0.0]])
    mdp = FiniteMdp(transition=transition, cost=cost, gamma=gamma, tau=tau, mu=_uniform(2),
                    rho=np.array([1.0, 0.0]), beta=np.full((2, 2), 0.25))
    return mdp, FeatureMap.onehot(2, 2)


def instance_to_dict(mdp: FiniteMdp, features: FeatureMap, feature_kind: str) -> dict:
    doc = mdp.to_dict()
    doc["features"] = features.phi.tolist()
    doc["feature_kind"] = feature_kind
    doc["feature_scale"] = features.scale_applied
    return doc


def save_instance(path, mdp: FiniteMdp, features: FeatureMap, feature_kind: str) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(mdp, features, feature_kind), sort_keys=True) + "\n")


def instance_from_dict(doc: dict):
    mdp = FiniteMdp.from_dict(doc)
    if "features" in doc:
        features = FeatureMap(np.asarray(doc["features"], dtype=float), mdp.n_states, mdp.n_actions,
                              doc.get("feature_scale", 1.0))
    else:
        features = FeatureMap.onehot(mdp.n_states, mdp.n_actions)
    return mdp, features


def load_instance(path):
    return instance_from_dict(json.loads(Path(path).read_text()))


def demo_path(name: str) -> Path:
    if name not in DEMOS:
        raise ValueError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    return Path(str(resources.files("pmdlab") / "data" / f"{name}.json"))


def demo(name: str):
    """Load a bundled demo as ``(mdp, features)``."""
    return load_instance(demo_path(name))


def build_demo(name: str):
    """Regenerate a bundled demo from its seed."""
    if name == "tabular_6x4":
        return make_instance(seed=7, n_states=6, n_actions=4, feature_kind="onehot")
    if name == "linear_4x3":
        return make_instance(seed=3, n_states=4, n_actions=3, feature_kind="linear_mdp", rank=2)
    if name == "cycle_2":
        return cycle_instance()
    raise ValueError(f"unknown demo {name!r}")
