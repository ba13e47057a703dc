"""Regenerate the bundled demo instances, their configs and golden verification reports."""
import json
import tempfile
from pathlib import Path

from pmdlab.cli import main
from pmdlab.instances import DEMOS, build_demo, save_instance

DATA = Path(__file__).resolve().parents[1] / "src" / "pmdlab" / "data"

CONFIGS = {
    "tabular_6x4": {"h": {"times": 0.5, "threshold": "h_delta2_limit"}, "lambda": 0.5,
                    "n_policy_updates": 200, "schedule": "log", "c": "auto"},
    "linear_4x3": {"h": {"times": 0.5, "threshold": "h_delta2_limit"}, "lambda": 0.5,
                   "n_policy_updates": 200, "schedule": "log", "c": "auto"},
    "cycle_2": {"h": {"times": 1.0, "threshold": "h_singleloop_lemma31"}, "lambda": 0.5,
                "n_policy_updates": 200, "schedule": "single"},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def main_():
    (DATA / "golden").mkdir(parents=True, exist_ok=True)
    for name in DEMOS:
        mdp, features = build_demo(name)
        kind = "linear_mdp" if name.startswith("linear") else "onehot"
        inst = DATA / f"{name}.json"
        save_instance(inst, mdp, features, kind)
        cfg = DATA / f"{name}.config.json"
        write_json(cfg, CONFIGS[name])
        with tempfile.TemporaryDirectory() as tmp:
            assert main(["run", "--instance", str(inst), "--config", str(cfg), "--out", tmp]) == 0
            code = main(["verify", "--instance", str(inst), "--out", tmp])
            (DATA / "golden" / f"{name}.verification.json").write_text(
                (Path(tmp) / "verification.json").read_text())
        print(f"{name}: verify exit {code}")


if __name__ == "__main__":
    main_()
