"""Actor-critic runs: single-step TD or M(n) inner TD steps per mirror update."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actor import ActorConfig, StabilityWarning, argmin_margin, mirror_step
from .critic import FeatureMap, StepSizeCertificate, approx_q_and_advantage, exact_theta, td_affine
from .mdp import FiniteMdp, PolicyLogits, kl_rows, log_density
from .oracle import evaluate_policy, solve_optimal, state_action_occupancy

SCHEDULE_KINDS = ("single", "constant", "log", "linear")
CSV_COLUMNS = ("n", "K_n", "theta_norm", "l_sup", "v_rho", "gap", "critic_err",
               "critic_err_pre", "consec_kl", "m_used")
DIVERGENCE_LIMIT = 1e12
C_FLOOR = 1e-6


@dataclass(frozen=True)
class Schedule:
    kind: str = "single"
    M: int | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and (self.M is None or int(self.M) != self.M or self.M < 1):
            raise ValueError("constant schedule needs an integer M >= 1")
        if self.kind in ("log", "linear") and not (self.c is not None and self.c > 0):
            raise ValueError(f"{self.kind} schedule needs c > 0")

    @property
    def single_loop(self) -> bool:
        return self.kind == "single" or (self.kind == "constant" and self.M == 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "M": self.M, "c": self.c}


def _ceil(x: float) -> int:
    # a formula that is an integer in exact arithmetic must not round up on float noise
    r = round(x)
    if abs(x - r) <= 1e-12 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def m_schedule(kind: Schedule, n: int, h: float, gamma_const: float) -> int:
    if not h * gamma_const > 0:
        raise ValueError("h * Gamma must be positive")
    if kind.kind == "single":
        return 1
    if kind.kind == "constant":
        return int(kind.M)
    if not (kind.c is not None and kind.c > 0):
        raise ValueError("schedule constant c must be positive")
    if kind.kind == "log":
        return max(1, _ceil(4.0 / (h * gamma_const) * math.log(kind.c * (n + 1))))
    return max(1, _ceil(4.0 * kind.c / (h * gamma_const) * (n + 1)))


@dataclass(frozen=True)
class ScheduleConstants:
    c: float
    c_raw: float
    c_gamma: float
    delta1: float
    delta2: float


def schedule_constant(mdp: FiniteMdp, cert: StepSizeCertificate, features: FeatureMap | None = None,
                      theta0=None, pi0: PolicyLogits | None = None, h: float | None = None,
                      c_min: float = C_FLOOR) -> ScheduleConstants:
    """Smallest c making the log schedule sum to at most tau / (4 c(gamma) delta2).

    ``features`` and ``pi0`` only fix dimensions; the constant depends on
    them through ``theta0`` and the certificate.
    """
    h = cert.h if h is None else h
    if h is None or not h > 0:
        raise ValueError("a positive critic step h is required")
    g, big_gamma, lam_b, tau = mdp.gamma, cert.gamma_const, cert.lambda_beta, mdp.tau
    denom = big_gamma - 3 * h * (1 + g) ** 2
    if denom <= 0:
        raise ValueError("h too large for delta2 formula")
    ratio = (3 * h + 2 / big_gamma) / denom
    delta2 = 2 * tau * g * (math.sqrt(ratio) + 1 / ((1 - g) * lam_b))
    dim = features.dim if features is not None else None
    theta0 = np.zeros(dim if dim is not None else 0) if theta0 is None else np.asarray(theta0, float)
    c_sup = mdp.cost_sup
    delta1 = math.sqrt(float(theta0 @ theta0) + c_sup ** 2 * ratio) + c_sup / ((1 - g) * lam_b)
    c_gamma = max(1.0, 2 * g / (1 - g))
    c_raw = math.sqrt(8 * c_gamma * delta2 / tau)
    return ScheduleConstants(c=max(c_raw, c_min), c_raw=c_raw, c_gamma=c_gamma,
                             delta1=delta1, delta2=delta2)


@dataclass(frozen=True)
class RunConfig:
    h: float
    lam: float
    n_policy_updates: int
    schedule: Schedule = field(default_factory=Schedule)
    theta0: tuple | None = None
    pi0: tuple | None = None
    enforce_certificate: bool = False
    exact_critic: bool = False
    inner_record_limit: int = 20_000
    argmin_probes: int = 0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.n_policy_updates < 0:
            raise ValueError("n_policy_updates must be non-negative")

    def to_dict(self) -> dict:
        return {
            "h": self.h, "lambda": self.lam, "n_policy_updates": self.n_policy_updates,
            "schedule": self.schedule.to_dict(),
            "theta0": None if self.theta0 is None else [float(x) for x in self.theta0],
            "pi0": None if self.pi0 is None else [[float(x) for x in row] for row in self.pi0],
            "enforce_certificate": self.enforce_certificate, "exact_critic": self.exact_critic,
            "inner_record_limit": self.inner_record_limit, "argmin_probes": self.argmin_probes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        s = doc["schedule"]
        return cls(h=doc["h"], lam=doc["lambda"], n_policy_updates=doc["n_policy_updates"],
                   schedule=Schedule(s["kind"], s.get("M"), s.get("c")),
                   theta0=None if doc.get("theta0") is None else tuple(doc["theta0"]),
                   pi0=None if doc.get("pi0") is None else tuple(tuple(r) for r in doc["pi0"]),
                   enforce_certificate=doc.get("enforce_certificate", False),
                   exact_critic=doc.get("exact_critic", False),
                   inner_record_limit=doc.get("inner_record_limit", 20_000),
                   argmin_probes=doc.get("argmin_probes", 0))


@dataclass
class RunTrace:
    """Per-iteration record of a run.

    State quantities (``K``, ``theta_norm``, ``l_sup``, ``v_rho``, ``gap``,
    ``v_states``, ``q_sup``, ``residual``) have one entry per policy
    pi^0..pi^N. Transition quantities have one entry per update n -> n+1.
    """

    config: dict
    certificate: dict
    v_star: list
    K: list = field(default_factory=list)
    theta_norm: list = field(default_factory=list)
    l_sup: list = field(default_factory=list)
    v_rho: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    v_states: list = field(default_factory=list)
    q_sup: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    critic_err: list = field(default_factory=list)
    critic_err_pre: list = field(default_factory=list)
    consec_kl: list = field(default_factory=list)
    m_used: list = field(default_factory=list)
    q_diff_sup: list = field(default_factory=list)
    inner_errors: list = field(default_factory=list)
    inner_grad_sq: list = field(default_factory=list)
    inner_recorded: list = field(default_factory=list)
    argmin_margin: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    aborted: bool = False
    diagnostic: str | None = None

    @property
    def n_updates(self) -> int:
        return len(self.critic_err)

    @property
    def eta(self) -> float:
        return self.config["lambda"] / self.config["h"]

    def as_arrays(self) -> dict:
        return {k: np.asarray(getattr(self, k), dtype=float) for k in
                ("K", "theta_norm", "l_sup", "v_rho", "gap", "q_sup", "residual", "critic_err",
                 "critic_err_pre", "consec_kl", "m_used", "q_diff_sup")}

    def sidecar(self) -> dict:
        return {
            "config": self.config, "certificate": self.certificate, "v_star": self.v_star,
            "eta": self.eta, "v_states": self.v_states, "q_sup": self.q_sup,
            "residual": self.residual, "q_diff_sup": self.q_diff_sup,
            "inner_errors": self.inner_errors, "inner_grad_sq": self.inner_grad_sq,
            "inner_recorded": self.inner_recorded, "argmin_margin": self.argmin_margin,
            "warnings": self.warnings, "aborted": self.aborted, "diagnostic": self.diagnostic,
        }

    def write(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for n in range(len(self.K)):
                row = [n, self.K[n], self.theta_norm[n], self.l_sup[n], self.v_rho[n], self.gap[n]]
                if n < self.n_updates:
                    row += [self.critic_err[n], self.critic_err_pre[n], self.consec_kl[n], self.m_used[n]]
                else:
                    row += ["", "", "", ""]
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        json_path.write_text(json.dumps(self.sidecar(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def read(cls, csv_path, json_path=None) -> "RunTrace":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        with csv_path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in CSV_COLUMNS if c not in header]
            if missing:
                raise TraceFormatError(f"trace is missing column(s): {', '.join(missing)}")
            rows = list(reader)
        side = json.loads(json_path.read_text())
        tr = cls(config=side["config"], certificate=side["certificate"], v_star=side["v_star"])
        for name, col in (("K", "K_n"), ("theta_norm", "theta_norm"), ("l_sup", "l_sup"),
                          ("v_rho", "v_rho"), ("gap", "gap")):
            setattr(tr, name, [float(r[col]) for r in rows])
        done = [r for r in rows if r["critic_err"] != ""]
        for name in ("critic_err", "critic_err_pre", "consec_kl"):
            setattr(tr, name, [float(r[name]) for r in done])
        tr.m_used = [int(r["m_used"]) for r in done]
        for key in ("v_states", "q_sup", "residual", "q_diff_sup", "inner_errors", "inner_grad_sq",
                    "inner_recorded", "argmin_margin", "warnings", "aborted", "diagnostic"):
            setattr(tr, key, side[key])
        return tr


class TraceFormatError(ValueError):
    pass


class CertificateError(ValueError):
    pass


def _check_certificate(mdp: FiniteMdp, cert: StepSizeCertificate, config: RunConfig) -> None:
    tl = mdp.tau * config.lam
    if not 0 < tl < 1:
        raise CertificateError(f"tau*lambda = {tl:g} not in (0, 1)")
    if config.schedule.single_loop:
        if config.h > cert.h_singleloop_lemma31:
            raise CertificateError(f"h = {config.h:g} exceeds single-loop threshold {cert.h_singleloop_lemma31:g}")
    elif not config.h < cert.h_doubleloop:
        raise CertificateError(f"h = {config.h:g} not below double-loop threshold {cert.h_doubleloop:g}")


def _inner_loop(theta, big_g, b, h, m, theta_pi, record_limit):
    """Run m TD steps on g = G theta - b; returns (theta_m, errors, grad_sq, recorded)."""
    if m <= record_limit:
        errs, gsq = [], []
        for _ in range(m):
            g = big_g @ theta - b
            errs.append(float(np.linalg.norm(theta - theta_pi)))
            gsq.append(float(g @ g))
            theta = theta - h * g
        g = big_g @ theta - b
        errs.append(float(np.linalg.norm(theta - theta_pi)))
        gsq.append(float(g @ g))
        return theta, errs, gsq, True
    # closed form of the affine recursion: theta_m = theta* + (I - hG)^m (theta_0 - theta*)
    fixed = np.linalg.solve(big_g, b)
    step = np.eye(len(theta)) - h * big_g
    theta_m = fixed + np.linalg.matrix_power(step, int(m)) @ (theta - fixed)
    ends = [theta, theta_m]
    errs = [float(np.linalg.norm(t - theta_pi)) for t in ends]
    gsq = [float(np.sum((big_g @ t - b) ** 2)) for t in ends]
    return theta_m, errs, gsq, False


def run_actor_critic(mdp: FiniteMdp, features: FeatureMap, config: RunConfig,
                     cert: StepSizeCertificate | None = None, v_star=None) -> RunTrace:
    from .critic import build_certificate

    if cert is None:
        cert = build_certificate(mdp, features, h=config.h, actor_step=config.lam)
    if config.enforce_certificate:
        _check_certificate(mdp, cert, config)
    if v_star is None:
        v_star, _, _ = solve_optimal(mdp)
    v_star = np.asarray(v_star, dtype=float)
    v_star_rho = float(mdp.rho @ v_star)
    actor = ActorConfig(config.lam, mdp.tau)

    theta = np.zeros(features.dim) if config.theta0 is None else np.asarray(config.theta0, float)
    if theta.shape != (features.dim,):
        raise ValueError(f"theta0 must have length {features.dim}")
    policy = (PolicyLogits.uniform(mdp.n_states, mdp.mu) if config.pi0 is None
              else PolicyLogits(np.asarray(config.pi0, float), mdp.mu))
    trace = RunTrace(config=config.to_dict(), certificate=cert.to_dict(), v_star=v_star.tolist())
    if not actor.stable:
        trace.warnings.append(f"tau*lambda = {actor.tau_lambda!r} outside (0, 1); stability results void")

    def record_state(theta, policy):
        _, stats = log_density(policy)
        ev = evaluate_policy(mdp, policy)
        trace.K.append(stats.K_sup)
        trace.theta_norm.append(float(np.linalg.norm(theta)))
        trace.l_sup.append(stats.sup_norm_l)
        v_rho = float(mdp.rho @ ev.v)
        trace.v_rho.append(v_rho)
        trace.gap.append(v_rho - v_star_rho)
        trace.v_states.append(ev.v.tolist())
        trace.q_sup.append(float(np.abs(ev.q).max()))
        return ev

    def diverged(theta, policy) -> str | None:
        tn = float(np.linalg.norm(theta))
        if not np.isfinite(tn):
            return "theta became non-finite"
        if tn > DIVERGENCE_LIMIT:
            return f"|theta|_2 = {tn:.3e} exceeded {DIVERGENCE_LIMIT:g}"
        if policy is not None:
            _, stats = log_density(policy)
            if stats.sup_norm_l > DIVERGENCE_LIMIT:
                return f"|l|_inf = {stats.sup_norm_l:.3e} exceeded {DIVERGENCE_LIMIT:g}"
        return None

    ev = record_state(theta, policy)
    for n in range(config.n_policy_updates):
        theta_pi, resid = exact_theta(mdp, policy, features, q=ev.q)
        trace.residual.append(resid)
        d_beta = state_action_occupancy(mdp, policy)
        err_pre = float(np.linalg.norm(theta - theta_pi))
        if config.exact_critic:
            m = 0
            theta_next = theta_pi
            errs, gsq, rec = [err_pre, 0.0], [], True
        else:
            m = m_schedule(config.schedule, n, config.h, cert.gamma_const)
            big_g, b = td_affine(mdp, policy, features, d_beta)
            theta_next, errs, gsq, rec = _inner_loop(theta, big_g, b, config.h, m, theta_pi,
                                                     config.inner_record_limit)
        why = diverged(theta_next, None)
        if why is not None:
            trace.aborted, trace.diagnostic = True, f"n={n}: {why}"
            break
        _, a_hat = approx_q_and_advantage(theta_next, features, policy, mdp)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            new_policy = mirror_step(policy, a_hat, actor)
        why = diverged(theta_next, new_policy)
        if why is not None:
            trace.aborted, trace.diagnostic = True, f"n={n}: {why}"
            break
        if config.argmin_probes:
            trace.argmin_margin.append(argmin_margin(mdp, new_policy, policy, theta_next, features,
                                                     actor, n_probes=config.argmin_probes, seed=n))
        trace.critic_err_pre.append(err_pre)
        trace.critic_err.append(float(np.linalg.norm(theta_next - theta_pi)))
        trace.m_used.append(m)
        trace.inner_errors.append(errs)
        trace.inner_grad_sq.append(gsq)
        trace.inner_recorded.append(rec)
        trace.consec_kl.append(float(kl_rows(new_policy, policy).max()))
        q_prev = ev.q
        theta, policy = theta_next, new_policy
        ev = record_state(theta, policy)
        trace.q_diff_sup.append(float(np.abs(ev.q - q_prev).max()))
    if not trace.aborted:
        _, resid = exact_theta(mdp, policy, features, q=ev.q)
        trace.residual.append(resid)
    return trace


__all__ = [
    "Schedule", "RunConfig", "RunTrace", "ScheduleConstants", "m_schedule", "schedule_constant",
    "run_actor_critic", "CertificateError", "TraceFormatError", "CSV_COLUMNS",
]
