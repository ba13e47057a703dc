"""Sweep h around each certificate threshold on a demo and print which checks fail."""
import argparse
import csv
import json
import tempfile
from pathlib import Path

from pmdlab.cli import main as cli
from pmdlab.instances import DEMOS, demo_path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--demo", choices=DEMOS, default="tabular_6x4")
    ap.add_argument("--threshold", default="h_singleloop_lemma31")
    ap.add_argument("--schedule", default="single")
    ap.add_argument("--updates", type=int, default=100)
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--out")
    args = ap.parse_args()

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="pmdlab-sweep-"))
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "sweep.config.json"
    cfg.write_text(json.dumps({
        "lambda": 0.5, "n_policy_updates": args.updates, "schedule": args.schedule, "M": 50,
        "sweep": {"h_factors": [0.25, 0.5, 1.0, 2.0, 8.0], "threshold": args.threshold},
    }))
    code = cli(["sweep", "--instance", str(demo_path(args.demo)), "--config", str(cfg),
                "--out", str(out), "--workers", str(args.workers)])
    if code:
        raise SystemExit(code)
    with (out / "summary.csv").open() as fh:
        for row in csv.DictReader(fh):
            print(f"h = {float(row['h']):.4g}  aborted = {row['aborted']:5s}  "
                  f"gap = {float(row['final_gap']):.3e}  failed: {row['failed_checks'] or '-'}")
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
