"""Train and evaluate every desk-scale experiment, reusing finished runs.

    python3 demos/run_desk_suite.py            # all configs in configs/desk
    python3 demos/run_desk_suite.py linear_cae # a subset

Results land in runs/<name>/ and runs/report.{csv,txt}.
"""

import json
import logging
import sys
import time
from pathlib import Path

from coopreg.experiments import ExperimentSpec, cached_run, emit_report

ROOT = Path(__file__).resolve().parents[1]


def load(path: Path) -> ExperimentSpec:
    d = json.loads(path.read_text())
    d["output_dir"] = str(ROOT / d["output_dir"])
    if d.get("cache_dir"):
        d["cache_dir"] = str(ROOT / d["cache_dir"])
    return ExperimentSpec.from_dict(d)


def main(names):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    paths = sorted((ROOT / "configs" / "desk").glob("*.json"))
    if names:
        paths = [p for p in paths if p.stem in names]
    rows = []
    for path in paths:
        spec = load(path)
        start = time.perf_counter()

        def progress(it, values):
            if it % 1000 == 0 or it == spec.train.total_iterations - 1:
                logging.info("%s %5d %s", spec.name, it,
                             " ".join(f"{k}={v:.4g}" for k, v in values.items()))

        row = cached_run(spec, progress=progress)
        logging.info("%s done in %.0fs: %s", spec.name, time.perf_counter() - start, row)
        if spec.name != "determinism":
            rows.append(row)
    if rows:
        emit_report(rows, ROOT / "runs" / "report.csv")
        print((ROOT / "runs" / "report.txt").read_text())


if __name__ == "__main__":
    main(sys.argv[1:])
