"""Two-phase cooperative training, checkpoints and history logs.

Phase 1 (the first ``warmup_fraction`` of iterations) trains the primary
network alone with a small smoothness weight. Phase 2 switches the
autoencoder on: smoothness off, CAE reconstruction weighted by ``beta``, and
both networks updated by one Adam optimizer. Without an autoencoder (the
UnDR baselines) phase 2 keeps the warm-up smoothness weight.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from coopreg.fields import warp_image
from coopreg.networks import CAEConfig, PrimaryConfig, init_cae, init_primary
from coopreg.objectives import ObjectiveWeights, total_objective
from coopreg.rawio import read_raw, write_raw

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "phase", "alpha", "beta", "matching", "smoothness", "cae_recon",
                   "total")


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 20000
    warmup_fraction: float = 0.05
    warmup_alpha: float = 0.1
    beta: float = 8.0
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    primary: PrimaryConfig = field(default_factory=PrimaryConfig)
    cae: CAEConfig | None = field(default_factory=CAEConfig)
    matching: str = "l2"
    ncc_window: int = 9
    log_every: int = 100
    image_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")
        if self.total_iterations < 20:
            raise ValueError(f"total_iterations must be >= 20, got {self.total_iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        ObjectiveWeights(self.warmup_alpha, self.beta, self.matching, self.ncc_window)

    @property
    def warmup_iterations(self) -> int:
        return int(round(self.warmup_fraction * self.total_iterations))

    def weights_at(self, iteration: int) -> ObjectiveWeights:
        if iteration < self.warmup_iterations:
            alpha, beta = self.warmup_alpha, 0.0
        elif self.cae is not None:
            alpha, beta = 0.0, self.beta
        else:
            alpha, beta = self.warmup_alpha, 0.0
        return ObjectiveWeights(alpha, beta, self.matching, self.ncc_window)

    def phase_at(self, iteration: int) -> int:
        return 1 if iteration < self.warmup_iterations else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primary"] = self.primary.to_dict()
        d["cae"] = None if self.cae is None else self.cae.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "primary" in d:
            d["primary"] = PrimaryConfig(**d["primary"])
        if "cae" in d and d["cae"] is not None:
            d["cae"] = CAEConfig(**d["cae"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, iteration, phase, weights, value):
        if self.records and iteration <= self.records[-1]["iteration"]:
            raise ValueError("history iterations must be strictly increasing")
        self.records.append({
            "iteration": int(iteration), "phase": int(phase),
            "alpha": float(weights.alpha), "beta": float(weights.beta), **value,
        })

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def from_csv(cls, path) -> TrainHistory:
        h = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                h.records.append({
                    k: (int(v) if k in ("iteration", "phase") else float(v)) for k, v in row.items()
                })
        return h


@dataclass
class TrainedModel:
    primary: torch.nn.Module
    cae: torch.nn.Module | None
    config: TrainConfig
    history: TrainHistory
    iterations: int = 0


def _image_tensor(dataset) -> torch.Tensor:
    return torch.from_numpy(dataset.images().astype(np.float32))


def _check_finite(value, iteration):
    for name, v in value.items():
        if not math.isfinite(v):
            raise FloatingPointError(
                f"non-finite {name} loss ({v}) at iteration {iteration}; training diverged"
            )


def train(config: TrainConfig, dataset, progress=None) -> TrainedModel:
    """Train the primary network (and CAE, if configured) on ``dataset.train_index``.

    ``progress`` is an optional callable ``(iteration, values_dict)`` invoked at
    each logging step.
    """
    if len(dataset.train_index) == 0:
        raise ValueError("dataset has no training pairs")
    torch.manual_seed(config.seed)
    primary = init_primary(config.primary, config.seed, config.image_size)
    cae = None
    params = list(primary.parameters())
    if config.cae is not None:
        cae = init_cae(config.cae, config.seed + 1, config.image_size)
        params += list(cae.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)

    images = _image_tensor(dataset)
    pairs = torch.from_numpy(np.asarray(dataset.train_index, dtype=np.int64))
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    warm = config.warmup_iterations
    last = config.total_iterations - 1

    for it in range(config.total_iterations):
        weights = config.weights_at(it)
        batch = pairs[torch.from_numpy(rng.integers(0, len(pairs), config.batch_size))]
        source, target = images[batch[:, 0]], images[batch[:, 1]]
        phi = primary(source, target)
        registered = warp_image(source, phi)
        recon = None
        if cae is not None and weights.beta > 0:
            _, recon = cae(phi)
        value = total_objective(target, registered, phi, recon, weights)

        optimizer.zero_grad(set_to_none=True)
        value.total.backward()
        optimizer.step()

        if it % config.log_every == 0 or it in (warm - 1, warm, last):
            floats = value.as_floats()
            _check_finite(floats, it)
            history.append(it, config.phase_at(it), weights, floats)
            if progress is not None:
                progress(it, floats)
            log.debug("iter %d phase %d %s", it, config.phase_at(it), floats)
        elif not torch.isfinite(value.total):
            _check_finite(value.as_floats(), it)

    for p in params:
        if not torch.isfinite(p).all():
            raise FloatingPointError("non-finite parameters after training")
    primary.eval()
    if cae is not None:
        cae.eval()
    return TrainedModel(primary, cae, config, history, config.total_iterations)


# -- checkpoints ---------------------------------------------------------------

def _save_state(state: dict, directory: Path, prefix: str) -> dict:
    shapes = {}
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        shapes[name] = list(arr.shape)
        flat = arr.reshape(arr.shape[0] if arr.ndim else 1, -1)
        write_raw(directory / f"{prefix}.{name}.raw", flat)
    return shapes


def _load_state(directory: Path, prefix: str, shapes: dict) -> dict:
    state = {}
    for name, shape in shapes.items():
        path = directory / f"{prefix}.{name}.raw"
        if not path.exists():
            raise FileNotFoundError(f"checkpoint is missing parameter file {path.name}")
        arr = read_raw(path).reshape(shape)
        state[name] = torch.from_numpy(np.ascontiguousarray(arr))
    return state


def save_checkpoint(model: TrainedModel, path) -> None:
    """Directory of raw parameter arrays plus ``metadata.json``."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "iterations": model.iterations,
        "primary_shapes": _save_state(model.primary.state_dict(), directory, "primary"),
        "cae_shapes": None,
    }
    if model.cae is not None:
        meta["cae_shapes"] = _save_state(model.cae.state_dict(), directory, "cae")
    model.history.to_csv(directory / "history.csv")
    (directory / "metadata.json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(path) -> TrainedModel:
    directory = Path(path)
    meta_path = directory / "metadata.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint metadata at {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        config = TrainConfig.from_dict(meta["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"corrupt checkpoint metadata in {meta_path}: {exc}") from exc
    primary = init_primary(config.primary, config.seed, config.image_size)
    primary.load_state_dict(_load_state(directory, "primary", meta["primary_shapes"]))
    primary.eval()
    cae = None
    if meta.get("cae_shapes") is not None:
        cae = init_cae(config.cae, config.seed + 1, config.image_size)
        cae.load_state_dict(_load_state(directory, "cae", meta["cae_shapes"]))
        cae.eval()
    history_path = directory / "history.csv"
    history = TrainHistory.from_csv(history_path) if history_path.exists() else TrainHistory()
    return TrainedModel(primary, cae, config, history, meta.get("iterations", 0))


def with_overrides(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)
