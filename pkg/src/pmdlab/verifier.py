"""Inequality and rate checks evaluated on a recorded run."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .critic import FeatureMap, StepSizeCertificate, build_certificate
from .driver import RunTrace, Schedule, schedule_constant
from .mdp import FiniteMdp, PolicyLogits, kl_rows
from .oracle import solve_optimal, state_occupancy

ABS_TOL = 1e-9
REL_TOL = 1e-9
REALISABLE_TOL = 1e-8
GAP_FLOOR = 1e-10


@dataclass
class CheckReport:
    check_name: str
    status: str
    first_violation_n: int | None = None
    worst_margin: float | None = None
    skip_reason: str | None = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {"check_name": self.check_name, "status": self.status, "pass": self.passed,
                "first_violation_n": self.first_violation_n, "worst_margin": self.worst_margin,
                "skip_reason": self.skip_reason, "details": self.details}


def skipped(name: str, reason: str, **details) -> CheckReport:
    return CheckReport(name, "skipped", skip_reason=f"precondition: {reason}", details=details)


def compare(name: str, lhs, rhs, index=None, **details) -> CheckReport:
    """Check lhs[i] <= rhs[i] with absolute plus relative slack."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lhs.size == 0:
        return skipped(name, "no iterations to check", **details)
    index = np.arange(lhs.size) if index is None else np.asarray(index)
    margin = rhs - lhs
    slack = ABS_TOL + REL_TOL * np.maximum(np.abs(lhs), np.abs(rhs))
    bad = ~(margin >= -slack)
    first = int(index[np.argmax(bad)]) if bad.any() else None
    worst = float(np.min(margin)) if np.all(np.isfinite(margin)) else -math.inf
    return CheckReport(name, "fail" if bad.any() else "pass", first, worst, details=details)


@dataclass(frozen=True)
class Concentrability:
    xi_statement: float
    xi_proof: float
    kappa_statement: float
    kappa_proof: float


def concentrability(mdp: FiniteMdp, pi_star: PolicyLogits) -> Concentrability:
    d = state_occupancy(mdp, pi_star)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mdp.rho > 0, d / np.where(mdp.rho > 0, mdp.rho, 1.0),
                         np.where(d > 0, np.inf, 0.0))
    xi = float(ratio.max())
    xi_p = xi / (1.0 - mdp.gamma)
    kappa = lambda x: (x - 1.0) / x if math.isfinite(x) else 1.0
    return Concentrability(xi, xi_p, kappa(xi), kappa(xi_p))


@dataclass
class ProofConstants:
    c_gamma_b3: float
    c_gamma_c5: float
    alpha2: float
    alpha1: list
    delta1: float | None
    delta2: float | None
    conc: Concentrability

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conc"] = asdict(self.conc)
        return d


def proof_constants(trace: RunTrace, mdp: FiniteMdp, cert: StepSizeCertificate,
                    pi_star: PolicyLogits) -> ProofConstants:
    g, tau = mdp.gamma, mdp.tau
    alpha1 = [(math.sqrt(2) * tau * g * l + g * q) / (1 - g)
              for l, q in zip(trace.l_sup, trace.q_sup)]
    try:
        sc = schedule_constant(mdp, cert, theta0=_theta0(trace), h=trace.config["h"])
        d1, d2 = sc.delta1, sc.delta2
    except ValueError:
        d1 = d2 = None
    return ProofConstants(c_gamma_b3=max(1.0, 2 / (1 - g)), c_gamma_c5=max(1.0, 2 * g / (1 - g)),
                          alpha2=tau * g / (1 - g), alpha1=alpha1, delta1=d1, delta2=d2,
                          conc=concentrability(mdp, pi_star))


def _theta0(trace: RunTrace):
    t0 = trace.config.get("theta0")
    return None if t0 is None else np.asarray(t0, dtype=float)


def _pi0(trace: RunTrace, mdp: FiniteMdp) -> PolicyLogits:
    p0 = trace.config.get("pi0")
    if p0 is None:
        return PolicyLogits.uniform(mdp.n_states, mdp.mu)
    return PolicyLogits(np.asarray(p0, dtype=float), mdp.mu)


class _Ctx:
    """Quantities shared by every check."""

    def __init__(self, trace: RunTrace, mdp: FiniteMdp, cert: StepSizeCertificate):
        self.trace, self.mdp, self.cert = trace, mdp, cert
        cfg = trace.config
        self.h, self.lam = cfg["h"], cfg["lambda"]
        s = cfg["schedule"]
        self.schedule = Schedule(s["kind"], s.get("M"), s.get("c"))
        self.exact = cfg.get("exact_critic", False)
        self.tl = mdp.tau * self.lam
        self.N = trace.n_updates
        self.a = trace.as_arrays()
        res = np.asarray(trace.residual[: self.N], dtype=float)
        self.realisable = res <= REALISABLE_TOL
        self.all_realisable = bool(self.realisable.all()) if self.N else True
        self.single = self.schedule.single_loop and not self.exact
        self.h_lemma41 = cert.gamma_const / (2 * (1 + mdp.gamma))


def check_stability(trace: RunTrace, cert: StepSizeCertificate, mdp: FiniteMdp,
                    features: FeatureMap | None = None) -> list[CheckReport]:
    c = _Ctx(trace, mdp, cert)
    a, N, g, G = c.a, c.N, mdp.gamma, cert.gamma_const
    out = []

    name = "lemma31_theta_recursion"
    if not c.single:
        out.append(skipped(name, "single-step TD run required"))
    elif not c.h <= cert.h_singleloop_lemma31:
        out.append(skipped(name, f"h = {c.h!r} > Gamma/(6(1+gamma)^2) = {cert.h_singleloop_lemma31!r}"))
    else:
        factor = (3 * c.h + 2 / G) / (G - 3 * c.h * (1 + g) ** 2)
        run_k = np.maximum.accumulate(a["K"][:N] ** 2) if N else np.array([])
        rhs = a["theta_norm"][0] ** 2 + mdp.tau ** 2 * g ** 2 * factor * run_k + mdp.cost_sup ** 2 * factor
        out.append(compare(name, a["theta_norm"][1:N + 1] ** 2, rhs))

    name = "lemma32_log_recursion"
    if not 0 < c.tl < 1:
        out.append(skipped(name, f"tau*lambda = {c.tl!r} not in (0, 1)"))
    else:
        rhs = (1 - c.tl) * a["l_sup"][:N] + 2 * c.lam * a["theta_norm"][1:N + 1]
        out.append(compare(name, a["l_sup"][1:N + 1], rhs))

    out.append(compare("lemmaB4_kl_vs_l", a["K"], 2 * a["l_sup"]))

    name = "thm31_running_sup"
    seq = a["K"] + a["theta_norm"]
    details = {"running_sup": float(seq.max()) if seq.size else None,
               "argmax": int(seq.argmax()) if seq.size else None}
    if not c.single:
        out.append(skipped(name, "single-step TD run required", **details))
    elif not (c.h <= cert.h_thm31 and cert.cond_32gamma and 0 < c.tl < 1):
        out.append(skipped(name, "h <= h_thm31, 32 gamma^2/Gamma^2 < 1 and 0 < tau*lambda < 1 not all met",
                           **details))
    else:
        finite = bool(np.all(np.isfinite(seq)))
        out.append(CheckReport(name, "pass" if finite else "fail", details=details))
    return out


def check_critic(trace: RunTrace, cert: StepSizeCertificate, mdp: FiniteMdp,
                 features: FeatureMap | None = None) -> list[CheckReport]:
    c = _Ctx(trace, mdp, cert)
    a, N = c.a, c.N
    hG = c.h * cert.gamma_const
    names = ("thm41_inner_endpoint", "thm41_inner_stepwise", "thm41_inner_cumulative",
             "lemma41_grad_bound")
    if c.exact:
        return [skipped(n, "exact critic run has no TD steps") for n in names]
    if not c.all_realisable:
        bad = int(np.argmin(c.realisable))
        return [skipped(n, f"features not Q-realisable (residual {trace.residual[bad]:.3e} at n={bad})")
                for n in names]
    out = []
    h_ok = c.h < cert.h_doubleloop
    reason = f"h = {c.h!r} not below h_doubleloop = {cert.h_doubleloop!r}"
    if not h_ok:
        out.append(skipped(names[0], reason))
    else:
        m = a["m_used"][:N]
        out.append(compare(names[0], a["critic_err"] ** 2,
                           np.exp(-m * hG) * a["critic_err_pre"] ** 2))
    rec = [n for n in range(N) if trace.inner_recorded[n]]
    unrec = N - len(rec)
    if not h_ok:
        out += [skipped(names[1], reason), skipped(names[2], reason)]
    elif not rec:
        out += [skipped(n, "no inner iterates recorded") for n in names[1:3]]
    else:
        lhs1, rhs1, idx1, lhs2, rhs2 = [], [], [], [], []
        for n in rec:
            e2 = np.asarray(trace.inner_errors[n]) ** 2
            lhs1.append(e2[1:])
            rhs1.append((1 - hG) * e2[:-1])
            idx1.append(np.full(e2.size - 1, n))
            lhs2.append(e2)
            rhs2.append((1 - hG) ** np.arange(e2.size) * e2[0])
        cat = np.concatenate
        out.append(compare(names[1], cat(lhs1), cat(rhs1), cat(idx1), unrecorded_updates=unrec))
        out.append(compare(names[2], cat(lhs2), cat(rhs2),
                           cat([np.full(x.size, n) for n, x in zip(rec, lhs2)]), unrecorded_updates=unrec))
    lhs, rhs, idx = [], [], []
    for n in range(N):
        e2 = np.asarray(trace.inner_errors[n]) ** 2
        lhs.append(np.asarray(trace.inner_grad_sq[n]))
        rhs.append(2 * (1 + mdp.gamma) * e2)
        idx.append(np.full(e2.size, n))
    if N:
        out.append(compare(names[3], np.concatenate(lhs), np.concatenate(rhs), np.concatenate(idx)))
    else:
        out.append(skipped(names[3], "no iterations to check"))
    return out


def _compensated(name, seq, index, **details) -> CheckReport:
    seq = np.asarray(seq, dtype=float)
    if seq.size == 0:
        return skipped(name, "no resolved iterations", **details)
    k = int(np.argmax(seq))
    tail = seq[3 * seq.size // 4:]
    overall, last = float(seq.max()), float(tail.max())
    details.update(bound=overall, argmax_n=int(index[k]), last_quartile_max=last,
                   argmax_in_last_quartile=bool(k >= 3 * seq.size // 4), horizon=int(index[-1]))
    ok = math.isfinite(overall) and last <= overall
    return CheckReport(name, "pass" if ok else "fail", worst_margin=overall - last, details=details)


def check_value_and_rates(trace: RunTrace, constants: ProofConstants, mdp: FiniteMdp,
                          cert: StepSizeCertificate, v_star=None,
                          pi_star: PolicyLogits | None = None) -> list[CheckReport]:
    c = _Ctx(trace, mdp, cert)
    a, N, g, lam = c.a, c.N, mdp.gamma, c.lam
    if v_star is None or pi_star is None:
        v_star, _, pi_star = solve_optimal(mdp)
    v_star = np.asarray(v_star, dtype=float)
    vs = np.asarray(trace.v_states, dtype=float)
    out = []
    not_real = None
    if not c.all_realisable:
        bad = int(np.argmin(c.realisable))
        not_real = f"features not Q-realisable (residual {trace.residual[bad]:.3e} at n={bad})"

    name = "lemma42_value_improvement"
    if not_real:
        out.append(skipped(name, not_real))
    elif not 0 < c.tl <= 1:
        out.append(skipped(name, f"tau*lambda = {c.tl!r} not in (0, 1]"))
    else:
        nxt = vs[1:N + 1]
        upper = vs[:N] + (2 / (1 - g)) * a["critic_err"][:, None]
        v_floor = v_star - 1e-12 * (1 + np.abs(v_star))
        # both sides of the sandwich, stacked per n as (lhs, rhs) pairs over states
        lhs = np.concatenate([nxt, np.broadcast_to(v_floor, nxt.shape)], axis=1)
        rhs = np.concatenate([upper, nxt], axis=1)
        idx = np.repeat(np.arange(N), lhs.shape[1]) if N else None
        out.append(compare(name, lhs.ravel(), rhs.ravel(), idx))

    name = "thmB3_cumulative_error"
    if not 0 < c.tl < 1:
        out.append(skipped(name, f"tau*lambda = {c.tl!r} not in (0, 1)"))
    elif not_real:
        out.append(skipped(name, not_real))
    else:
        d_star = state_occupancy(mdp, pi_star)
        kl0 = float(d_star @ kl_rows(pi_star, _pi0(trace, mdp)))
        n = np.arange(1, N + 1)
        cum = np.cumsum(a["critic_err"])
        rhs = (kl0 + lam * a["gap"][0] + lam * constants.c_gamma_b3 * cum) / (lam * (1 - g) * n)
        lhs = np.minimum.accumulate(a["gap"][:N]) if N else np.array([])
        out.append(compare(name, lhs, rhs, n, kl_pi_star_pi0=kl0))

    gap = a["gap"]
    pref_min = np.minimum.accumulate(gap[:N]) if N else np.array([])
    name = "thm52_sublinear_shape"
    if c.schedule.kind != "log" or c.exact:
        out.append(skipped(name, "logarithmic inner schedule required"))
    elif not c.h < c.h_lemma41:
        out.append(skipped(name, f"h = {c.h!r} not below Gamma/(2(1+gamma))"))
    elif not_real:
        out.append(skipped(name, not_real))
    else:
        n = np.arange(1, N + 1)
        out.append(_compensated(name, n * pref_min, n))

    name = "thm53_linear_shape"
    conc = constants.conc
    statement_ok = bool(0 <= c.tl <= conc.kappa_statement)
    proof_ok = bool(1 / lam < mdp.tau * conc.xi_proof)
    det = {"tau_lambda_statement_ok": statement_ok, "inv_lambda_lt_tau_xi_proof": proof_ok,
           "xi_statement": conc.xi_statement, "xi_proof": conc.xi_proof}
    if c.schedule.kind != "linear" or c.exact:
        out.append(skipped(name, "linear inner schedule required", **det))
    elif not math.isfinite(conc.xi_statement):
        out.append(skipped(name, "concentrability coefficient is infinite", **det))
    elif not c.h < c.h_lemma41:
        out.append(skipped(name, f"h = {c.h!r} not below Gamma/(2(1+gamma))", **det))
    elif not_real:
        out.append(skipped(name, not_real, **det))
    elif not (statement_ok and proof_ok):
        out.append(skipped(name, "statement and proof step-size conditions disagree", **det))
    else:
        rate = min(1 / conc.xi_proof, c.schedule.c)
        resolved = np.flatnonzero(gap > GAP_FLOOR)
        det["rate"] = rate
        out.append(_compensated(name, gap[resolved] * np.exp(rate * resolved), resolved, **det))

    name = "thm32_q_continuity"
    kl = a["consec_kl"]
    alpha1 = np.asarray(constants.alpha1[:N])
    rhs = alpha1 * np.sqrt(kl) + constants.alpha2 * kl
    out.append(compare(name, a["q_diff_sup"], rhs))

    name = "lemmaC2_consecutive_kl"
    if not 0 < c.tl < 1:
        out.append(skipped(name, f"tau*lambda = {c.tl!r} not in (0, 1)"))
        out.append(skipped(name + "_corrected", f"tau*lambda = {c.tl!r} not in (0, 1)"))
    else:
        factor = lam / (1 - c.tl)
        out.append(compare(name, kl, factor * a["theta_norm"][1:N + 1]))
        # keeps the tau KL(pi^n|mu) term and the pi^n-mean of q_hat
        rhs = factor * (2 * a["theta_norm"][1:N + 1] + mdp.tau * a["K"][:N])
        out.append(compare(name + "_corrected", kl, rhs))

    name = "thm34_single_loop_shape"
    if not c.single:
        out.append(skipped(name, "single-step TD run required"))
    elif not 0 < c.tl < 1:
        out.append(skipped(name, f"tau*lambda = {c.tl!r} not in (0, 1)"))
    elif not (c.h <= cert.h_singleloop_lemma31 or (c.h <= cert.h_thm31 and cert.cond_32gamma)):
        out.append(skipped(name, "neither finite-action nor small-gamma stability conditions hold"))
    else:
        n = np.arange(1, N + 1)
        seq = pref_min / (1 / np.sqrt(n * c.h) + c.lam / c.h)
        out.append(_compensated(name, seq, n, eta=trace.eta))

    floor = 1e-12 * (1 + float(np.abs(v_star).max()))
    out.append(compare("gap_nonnegative", -gap, np.full(gap.size, floor)))

    if trace.argmin_margin:
        out.append(compare("mirror_argmin", np.zeros(len(trace.argmin_margin)),
                           np.asarray(trace.argmin_margin) + 1e-10))
    return out


def verify(trace: RunTrace, mdp: FiniteMdp, features: FeatureMap) -> dict:
    """Every check plus the certificate and proof constants, as a JSON-ready dict."""
    cfg = trace.config
    cert = build_certificate(mdp, features, h=cfg["h"], actor_step=cfg["lambda"])
    v_star, _, pi_star = solve_optimal(mdp)
    constants = proof_constants(trace, mdp, cert, pi_star)
    checks = (check_stability(trace, cert, mdp, features) + check_critic(trace, cert, mdp, features)
              + check_value_and_rates(trace, constants, mdp, cert, v_star, pi_star))
    return {
        "checks": [ch.to_dict() for ch in checks],
        "certificate": cert.to_dict(),
        "constants": constants.to_dict(),
        "aborted": trace.aborted,
        "diagnostic": trace.diagnostic,
        "n_updates": trace.n_updates,
        "eta": trace.eta,
        "all_passed": not any(ch.status == "fail" for ch in checks),
    }
