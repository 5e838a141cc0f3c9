"""Write the desk-scale experiment configs used by the acceptance suite.

The default full-length schedule (20000 iterations, 16 base channels, batch 16)
costs roughly 0.4 s per iteration on a single CPU core, so the desk runs use
a reduced budget. Everything else keeps the library defaults.

    python3 demos/make_desk_configs.py            # writes configs/desk/*.json
"""

import json
from pathlib import Path

from coopreg.experiments import EvalSpec, make_spec
from coopreg.networks import PrimaryConfig

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "configs" / "desk"

BUDGET = dict(
    total_iterations=6000,
    batch_size=8,
    learning_rate=1e-3,
    beta=1.0,
    log_every=100,
)
PRIMARY = PrimaryConfig(levels=4, base_channels=8)
METHODS = {"cae": "cae", "undr": "undr", "noskip": "undr_bn_noskip"}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    specs = {}
    for family in ("linear", "rotating"):
        for short, method in METHODS.items():
            name = f"{family}_{short}"
            specs[name] = make_spec(name, method, family, f"runs/{name}", h=1, primary=PRIMARY,
                                    **BUDGET)
    # short run used to check rerun determinism
    specs["determinism"] = make_spec(
        "determinism", "cae", "linear", "runs/determinism", h=1, primary=PRIMARY,
        eval_spec=EvalSpec(max_test_pairs=200), **{**BUDGET, "total_iterations": 200})
    for name, spec in specs.items():
        d = spec.to_dict()
        d["cache_dir"] = "runs/datasets"
        (OUT / f"{name}.json").write_text(json.dumps(d, indent=2) + "\n")
        print(OUT / f"{name}.json")


if __name__ == "__main__":
    main()
