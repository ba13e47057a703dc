"""``pmdlab gen|run|verify|sweep|report``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .critic import AssumptionError, build_certificate
from .driver import (CertificateError, RunConfig, RunTrace, Schedule, TraceFormatError,
                     run_actor_critic, schedule_constant)
from .instances import DEMOS, build_demo, load_instance, make_instance, save_instance
from .verifier import verify

THRESHOLDS = ("h_singleloop_lemma31", "h_thm31", "h_thm31_stated", "h_doubleloop", "h_delta2_limit")
CONFIG_KEYS = {"h", "lambda", "n_policy_updates", "schedule", "M", "c", "theta0", "pi0",
               "enforce_certificate", "exact_critic", "inner_record_limit", "argmin_probes",
               "instance", "out", "seed", "workers", "sweep"}


class UsageError(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown field(s) {', '.join(unknown)}")
    return doc


def merge_flags(cfg: dict, args) -> dict:
    """Command-line flags override config-file values."""
    cfg = dict(cfg)
    for key, attr in (("instance", "instance"), ("out", "out"), ("seed", "seed"),
                      ("workers", "workers"), ("h", "h"), ("lambda", "lam"),
                      ("n_policy_updates", "n_updates"), ("schedule", "schedule")):
        val = getattr(args, attr, None)
        if val is not None:
            cfg[key] = val
    return cfg


def resolve_h(value, cert) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, dict) and set(value) == {"times", "threshold"}:
        if value["threshold"] not in THRESHOLDS:
            raise UsageError(f"field h.threshold: unknown threshold {value['threshold']!r}")
        return float(value["times"]) * getattr(cert, value["threshold"])
    raise UsageError("field h: expected a number or {\"times\": x, \"threshold\": name}")


def build_run_config(cfg: dict, mdp, features) -> RunConfig:
    for key in ("h", "lambda"):
        if key not in cfg:
            raise UsageError(f"config field {key!r} is required (no default)")
    cert = build_certificate(mdp, features)
    h = resolve_h(cfg["h"], cert)
    kind = cfg.get("schedule", "single")
    theta0 = cfg.get("theta0")
    c = cfg.get("c")
    if kind in ("log", "linear") and (c is None or c == "auto"):
        try:
            c = schedule_constant(mdp, build_certificate(mdp, features, h=h), features,
                                  theta0=theta0, h=h).c
        except ValueError as exc:
            raise UsageError(f"field c: cannot compute schedule constant: {exc}") from None
    try:
        return RunConfig(h=h, lam=float(cfg["lambda"]), n_policy_updates=int(cfg.get("n_policy_updates", 100)),
                         schedule=Schedule(kind, cfg.get("M"), c),
                         theta0=None if theta0 is None else tuple(theta0),
                         pi0=None if cfg.get("pi0") is None else tuple(tuple(r) for r in cfg["pi0"]),
                         enforce_certificate=bool(cfg.get("enforce_certificate", False)),
                         exact_critic=bool(cfg.get("exact_critic", False)),
                         inner_record_limit=int(cfg.get("inner_record_limit", 20_000)),
                         argmin_probes=int(cfg.get("argmin_probes", 0)))
    except ValueError as exc:
        raise UsageError(f"config: {exc}") from None


def _need(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise UsageError(f"--{key} (or config field {key!r}) is required")
    return cfg[key]


def _load_instance(cfg):
    path = _need(cfg, "instance")
    if not Path(path).exists():
        raise UsageError(f"instance file {path} does not exist")
    try:
        return load_instance(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"instance {path}: {exc}") from None


def execute_run(instance_path, cfg: dict, out: Path) -> dict:
    mdp, features = load_instance(instance_path)
    config = build_run_config(cfg, mdp, features)
    trace = run_actor_critic(mdp, features, config)
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.csv", out / "trace.json")
    _write_json(out / "certificate.json", trace.certificate)
    return {"trace": trace, "config": config}


def cmd_gen(cfg, args) -> int:
    out = Path(_need(cfg, "out"))
    if args.demo:
        mdp, features = build_demo(args.demo)
        kind = "linear_mdp" if args.demo.startswith("linear") else "onehot"
    else:
        kind, _, rank = args.features.partition(":")
        try:
            mdp, features = make_instance(int(cfg.get("seed", 0)), args.states, args.actions, kind,
                                          int(rank) if rank else None, args.gamma, args.tau)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    save_instance(out, mdp, features, kind)
    return 0


def cmd_run(cfg, args) -> int:
    _load_instance(cfg)
    out = Path(_need(cfg, "out"))
    try:
        res = execute_run(cfg["instance"], cfg, out)
    except CertificateError as exc:
        raise UsageError(f"certificate not satisfied: {exc}") from None
    trace = res["trace"]
    if trace.aborted:
        print(f"run aborted: {trace.diagnostic}", file=sys.stderr)
    return 0


def cmd_verify(cfg, args) -> int:
    mdp, features = _load_instance(cfg)
    out = Path(_need(cfg, "out"))
    trace_path = Path(args.trace) if args.trace else out / "trace.csv"
    if not trace_path.exists():
        raise UsageError(f"trace file {trace_path} does not exist")
    try:
        trace = RunTrace.read(trace_path)
    except TraceFormatError as exc:
        raise UsageError(str(exc)) from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"malformed trace {trace_path}: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    report = verify(trace, mdp, features)
    _write_json(out / "verification.json", report)
    for ch in report["checks"]:
        print(f"{ch['status']:8s} {ch['check_name']}")
    return 0 if report["all_passed"] else 1


def _sweep_one(job):
    instance, cfg, out = job
    res = execute_run(instance, cfg, Path(out))
    mdp, features = load_instance(instance)
    trace = res["trace"]
    report = verify(trace, mdp, features)
    _write_json(Path(out) / "verification.json", report)
    cert = trace.certificate
    cfgd = trace.config
    return {
        "run": Path(out).name, "h": cfgd["h"], "lambda": cfgd["lambda"],
        "schedule": cfgd["schedule"]["kind"], "h_ok_lemma31": cert["h_ok_lemma31"],
        "h_ok_thm31": cert["h_ok_thm31"], "h_ok_doubleloop": cert["h_ok_doubleloop"],
        "tau_lambda_ok": cert["tau_lambda_ok"], "aborted": trace.aborted,
        "final_gap": trace.gap[-1] if trace.gap else None,
        "failed_checks": ";".join(c["check_name"] for c in report["checks"] if c["status"] == "fail"),
    }


def sweep_jobs(cfg: dict, out: Path) -> list:
    grid = cfg.get("sweep") or {}
    factors = grid.get("h_factors", [0.5, 1.0, 2.0])
    threshold = grid.get("threshold", "h_doubleloop")
    lams = grid.get("lambda", [cfg["lambda"]] if "lambda" in cfg else None)
    if lams is None:
        raise UsageError("config field 'lambda' (or sweep.lambda) is required")
    schedules = grid.get("schedule", [cfg.get("schedule", "single")])
    jobs = []
    for i, (fac, lam, sched) in enumerate((f, l, s) for s in schedules for l in lams for f in factors):
        run_cfg = {k: v for k, v in cfg.items() if k != "sweep"}
        run_cfg.update(h={"times": fac, "threshold": threshold}, schedule=sched)
        run_cfg["lambda"] = lam
        jobs.append((cfg["instance"], run_cfg, str(out / f"run_{i:03d}")))
    return jobs


def cmd_sweep(cfg, args) -> int:
    _load_instance(cfg)
    out = Path(_need(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    jobs = sweep_jobs(cfg, out)
    workers = int(cfg.get("workers") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 0


def cmd_report(cfg, args) -> int:
    out = Path(_need(cfg, "out"))
    trace_path = Path(args.trace) if args.trace else out / "trace.csv"
    if not trace_path.exists():
        raise UsageError(f"trace file {trace_path} does not exist")
    try:
        trace = RunTrace.read(trace_path)
    except TraceFormatError as exc:
        raise UsageError(str(exc)) from None
    gap = np.asarray(trace.gap)
    pref = np.minimum.accumulate(gap)
    lines = [f"updates: {trace.n_updates}  aborted: {trace.aborted}  eta = lambda/h = {trace.eta!r}"]
    if trace.diagnostic:
        lines.append(f"diagnostic: {trace.diagnostic}")
    ver = out / "verification.json"
    if ver.exists():
        rep = json.loads(ver.read_text())
        for ch in rep["checks"]:
            extra = ch["skip_reason"] or f"worst margin {ch['worst_margin']!r}"
            lines.append(f"  {ch['status']:8s} {ch['check_name']}: {extra}")
    lines.append("")
    lines.append("n\tgap\tmin_gap\tn_times_min_gap\tK_n\ttheta_norm")
    for n in range(len(gap)):
        lines.append(f"{n}\t{gap[n]!r}\t{pref[n]!r}\t{(n + 1) * pref[n]!r}\t{trace.K[n]!r}\t{trace.theta_norm[n]!r}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[:lines.index("")]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmdlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--instance")
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--h", type=float)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--n-updates", dest="n_updates", type=int)
        sp.add_argument("--schedule", choices=("single", "constant", "log", "linear"))
        return sp

    g = common(sub.add_parser("gen", help="write a seeded instance"))
    g.add_argument("--states", type=int, default=4)
    g.add_argument("--actions", type=int, default=3)
    g.add_argument("--features", default="onehot", help="onehot | random_rank:k | linear_mdp:k")
    g.add_argument("--gamma", type=float, default=0.5)
    g.add_argument("--tau", type=float, default=1.0)
    g.add_argument("--demo", choices=DEMOS)
    common(sub.add_parser("run", help="run actor-critic and write a trace"))
    common(sub.add_parser("verify", help="check a trace")).add_argument("--trace")
    common(sub.add_parser("sweep", help="grid of runs"))
    common(sub.add_parser("report", help="text summary of a run")).add_argument("--trace")
    return p


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = merge_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"pmdlab {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except AssumptionError as exc:
        print(f"pmdlab {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
