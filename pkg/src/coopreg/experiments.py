"""End-to-end experiments: train, evaluate, sweep the latent space, report.

An experiment is described by an :class:`ExperimentSpec` (JSON-serializable)
and writes everything into its ``output_dir``::

    config.json     snapshot of the spec
    checkpoint/     parameters + metadata (see training.save_checkpoint)
    history.csv     training losses
    eval.csv        one EvalResult row
    figures/        pair_000.png ... (source + field, false-color overlap)
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from scipy.stats import spearmanr

from coopreg import figures
from coopreg.fields import warp_image
from coopreg.metrics import (
    EVAL_COLUMNS,
    EvalResult,
    ae_relative_error,
    dice,
    landmark_error,
    posthoc_ae_fit,
    predict_fields,
    reconstruct,
    time_forward,
)
from coopreg.networks import CAEConfig, PrimaryConfig
from coopreg.synth import build_pair_dataset, cached_pair_dataset, centered_param, family_params, make_sample
from coopreg.training import TrainConfig, TrainedModel, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

METHODS = ("cae", "undr", "undr_bn", "undr_bn_noskip")
DATASET_LABELS = {"linear": "Linear Box-Bump", "rotating": "Rotate Box-Bump"}
REPORT_COLUMNS = ("dataset", "method", "ae_error_pct", "dice", "landmark_error_pct",
                  "test_runtime_sec")
N_PAIR_FIGURES = 3


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    family: str = "linear"
    n_shapes: int = 100
    seed: int = 0
    max_train_pairs: int | None = None


@dataclass(frozen=True)
class EvalSpec:
    posthoc_h: int | None = None  # defaults to the CAE's h, else 1
    posthoc_iterations: int = 5000
    max_test_pairs: int | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    method: str
    dataset: DatasetSpec
    train: TrainConfig
    output_dir: str
    eval: EvalSpec = field(default_factory=EvalSpec)
    cache_dir: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        p, cae = self.train.primary, self.train.cae
        problems = {
            "cae": cae is None or p.bottleneck_dim is not None,
            "undr": cae is not None or p.bottleneck_dim is not None,
            "undr_bn": cae is not None or p.bottleneck_dim is None or not p.skip_connections,
            "undr_bn_noskip": cae is not None or p.bottleneck_dim is None or p.skip_connections,
        }
        if problems[self.method]:
            raise ValueError(
                f"train config does not match method {self.method!r}: "
                f"cae={cae}, bottleneck_dim={p.bottleneck_dim}, skip={p.skip_connections}"
            )

    @property
    def comparison_h(self) -> int:
        if self.eval.posthoc_h is not None:
            return self.eval.posthoc_h
        return self.train.cae.h if self.train.cae is not None else 1

    def method_label(self) -> str:
        if self.method == "cae":
            return f"CAE ({self.train.cae.h}, beta={self.train.beta:g})"
        return {"undr": "UnDR", "undr_bn": "UnDR-BN", "undr_bn_noskip": "UnDR-BN (no skip)"}[
            self.method]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "method": self.method,
            "dataset": asdict(self.dataset),
            "train": self.train.to_dict(),
            "output_dir": self.output_dir,
            "eval": asdict(self.eval),
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        return cls(
            name=d["name"],
            method=d["method"],
            dataset=DatasetSpec(**d.get("dataset", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            output_dir=d["output_dir"],
            eval=EvalSpec(**d.get("eval", {})),
            cache_dir=d.get("cache_dir"),
        )

    @classmethod
    def from_json(cls, path) -> ExperimentSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_seed(self, seed: int) -> ExperimentSpec:
        return replace(self, train=replace(self.train, seed=seed))


def make_spec(name: str, method: str, family: str, output_dir, *, h: int = 1,
              primary: PrimaryConfig | None = None, dataset_seed: int = 0, n_shapes: int = 100,
              eval_spec: EvalSpec | None = None, **train_kwargs) -> ExperimentSpec:
    """Spec with the primary/CAE configuration implied by ``method``."""
    primary = primary or PrimaryConfig()
    cae = None
    if method == "cae":
        cae = train_kwargs.pop("cae", None) or CAEConfig(h=h)
    elif method == "undr_bn":
        primary = replace(primary, bottleneck_dim=primary.bottleneck_dim or 1,
                          skip_connections=True)
    elif method == "undr_bn_noskip":
        primary = replace(primary, bottleneck_dim=primary.bottleneck_dim or 1,
                          skip_connections=False)
    train_kwargs.pop("cae", None)
    config = TrainConfig(primary=primary, cae=cae, **train_kwargs)
    return ExperimentSpec(name, method, DatasetSpec(family, n_shapes, dataset_seed), config,
                          str(output_dir), eval_spec or EvalSpec())


@dataclass
class ReportRow:
    dataset: str
    method: str
    ae_error_pct: float
    dice: float
    landmark_error_pct: float
    test_runtime_sec: float

    @classmethod
    def from_eval(cls, spec: ExperimentSpec, result: EvalResult) -> ReportRow:
        return cls(DATASET_LABELS[spec.dataset.family], spec.method_label(), result.ae_error_pct,
                   result.dice_mean, result.landmark_error_pct, result.test_runtime_sec)


def load_dataset_for(spec: ExperimentSpec):
    d = spec.dataset
    if spec.cache_dir:
        return cached_pair_dataset(d.family, d.n_shapes, d.seed, spec.cache_dir, d.max_train_pairs)
    return build_pair_dataset(d.family, d.n_shapes, d.seed, d.max_train_pairs)


def _test_pairs(dataset, max_pairs):
    idx = np.asarray(dataset.test_index)
    return idx if max_pairs is None else idx[:max_pairs]


def evaluate(model: TrainedModel, dataset, spec: ExperimentSpec, figure_dir=None) -> EvalResult:
    """Score a trained model on the held-out pairs of ``dataset``."""
    idx = _test_pairs(dataset, spec.eval.max_test_pairs)
    images = dataset.images()
    sources, targets = images[idx[:, 0]], images[idx[:, 1]]
    fields = predict_fields(model.primary, sources, targets)
    registered = warp_image(torch.from_numpy(sources), torch.from_numpy(fields.astype(np.float64)))
    registered = registered.numpy()

    dice_mean = float(np.mean([dice(r, t) for r, t in zip(registered, targets)]))
    lm = float(np.mean([
        landmark_error(f, dataset.pair(i, j), dataset.bump_width) for f, (i, j) in zip(fields, idx)
    ]))
    if model.cae is not None:
        ae = ae_relative_error(fields, reconstruct(model.cae, fields))
    else:
        _, ae = posthoc_ae_fit(fields, spec.comparison_h, seed=spec.train.seed,
                               iterations=spec.eval.posthoc_iterations)
    runtime = float(np.mean([time_forward(model.primary, sources[k], targets[k])
                             for k in range(min(5, len(idx)))]))

    if figure_dir is not None:
        figure_dir = Path(figure_dir)
        figure_dir.mkdir(parents=True, exist_ok=True)
        for k in range(min(N_PAIR_FIGURES, len(idx))):
            s, t = dataset.samples[idx[k, 0]], dataset.samples[idx[k, 1]]
            figures.pair_figure(
                figure_dir / f"pair_{k:03d}.png", s.image, t.image, registered[k], fields[k],
                title=f"{spec.method_label()}  {s.param:.3g} -> {t.param:.3g}  "
                      f"Dice {dice(registered[k], t.image):.3f}",
            )
    return EvalResult(dice_mean, lm, ae, runtime, len(idx))


def write_eval_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in result.to_dict().items()})


def read_eval_csv(path) -> EvalResult:
    with open(path, newline="") as f:
        row = next(csv.DictReader(f))
    return EvalResult(float(row["dice_mean"]), float(row["landmark_error_pct"]),
                      float(row["ae_error_pct"]), float(row["test_runtime_sec"]),
                      int(row["n_pairs"]))


def train_stage(spec: ExperimentSpec, dataset=None, progress=None) -> TrainedModel:
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(spec.to_dict(), indent=2))
    dataset = dataset if dataset is not None else load_dataset_for(spec)
    try:
        model = train(spec.train, dataset, progress=progress)
    except (FloatingPointError, ValueError) as exc:
        raise ExperimentError(f"experiment {spec.name!r}: training failed: {exc}") from exc
    save_checkpoint(model, out / "checkpoint")
    model.history.to_csv(out / "history.csv")
    return model


def eval_stage(spec: ExperimentSpec, model: TrainedModel | None = None, dataset=None) -> ReportRow:
    out = Path(spec.output_dir)
    if model is None:
        model = load_checkpoint(out / "checkpoint")
    dataset = dataset if dataset is not None else load_dataset_for(spec)
    try:
        result = evaluate(model, dataset, spec, figure_dir=out / "figures")
    except (FloatingPointError, ValueError) as exc:
        raise ExperimentError(f"experiment {spec.name!r}: evaluation failed: {exc}") from exc
    write_eval_csv(result, out / "eval.csv")
    return ReportRow.from_eval(spec, result)


def run_experiment(spec: ExperimentSpec, progress=None) -> ReportRow:
    """Build the dataset, train, evaluate on held-out pairs, write outputs."""
    start = time.perf_counter()
    dataset = load_dataset_for(spec)
    model = train_stage(spec, dataset, progress)
    row = eval_stage(spec, model, dataset)
    log.info("experiment %s finished in %.1fs", spec.name, time.perf_counter() - start)
    return row


def cached_run(spec: ExperimentSpec, progress=None) -> ReportRow:
    """Reuse ``output_dir`` when it holds a finished run of this exact spec."""
    out = Path(spec.output_dir)
    try:
        same = json.loads((out / "config.json").read_text()) == spec.to_dict()
        if same and (out / "eval.csv").exists():
            return ReportRow.from_eval(spec, read_eval_csv(out / "eval.csv"))
    except (OSError, ValueError):
        pass
    return run_experiment(spec, progress=progress)


def latent_sweep(model: TrainedModel, family: str, n_sources: int = 100, figure_path=None):
    """Latent code of each source registered to the centered-bump target.

    Returns ``[(param, latent), ...]`` over ``n_sources`` evenly spaced
    source parameters. Needs a model with a one-dimensional CAE.
    """
    if model.cae is None or model.cae.config.h != 1:
        h = None if model.cae is None else model.cae.config.h
        raise ValueError(f"latent sweep needs a CAE with h=1, model has h={h}")
    params = family_params(family, n_sources)
    sources = np.stack([make_sample(family, p).image for p in params])
    target = make_sample(family, centered_param(family)).image
    targets = np.broadcast_to(target, sources.shape)
    fields = predict_fields(model.primary, sources, targets)
    with torch.no_grad():
        latents = model.cae.encode(torch.from_numpy(fields))[:, 0].numpy().astype(np.float64)
    if figure_path is not None:
        figures.sweep_figure(figure_path, params, latents, sources, fields,
                             label="t" if family == "linear" else "theta (deg)")
    return [(float(p), float(z)) for p, z in zip(params, latents)]


def sweep_monotonicity(rows) -> float:
    """Spearman rank correlation between source parameter and latent value."""
    params, latents = zip(*rows)
    return float(spearmanr(params, latents).statistic)


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["param", "latent"])
        for p, z in rows:
            writer.writerow([repr(p), repr(z)])


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def emit_report(rows, path) -> None:
    """Write ``path`` as CSV and ``path`` with a ``.txt`` suffix as an aligned table."""
    rows = sorted(rows, key=lambda r: (r.dataset, r.method))
    if not rows:
        raise ValueError("no rows to report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = [[_fmt(getattr(r, c)) for c in REPORT_COLUMNS] for r in rows]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(table)
    widths = [max(len(c), *(len(t[i]) for t in table)) for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(t, widths)) for t in table]
    lines = [line.rstrip() for line in lines]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def read_report(path) -> list:
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append(ReportRow(r["dataset"], r["method"], float(r["ae_error_pct"]),
                                  float(r["dice"]), float(r["landmark_error_pct"]),
                                  float(r["test_runtime_sec"])))
    return rows
