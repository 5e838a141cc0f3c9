"""Registration metrics: Dice, landmark error, autoencoder error, runtime."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from coopreg.fields import sample_bilinear
from coopreg.networks import CAEConfig, init_cae
from coopreg.training import _check_finite

log = logging.getLogger(__name__)

POSTHOC_ITERATIONS = 5000
EVAL_COLUMNS = ("dice_mean", "landmark_error_pct", "ae_error_pct", "test_runtime_sec", "n_pairs")


@dataclass
class EvalResult:
    dice_mean: float
    landmark_error_pct: float
    ae_error_pct: float
    test_runtime_sec: float
    n_pairs: int

    def to_dict(self):
        return asdict(self)


def dice(a, b, threshold: float = 0.5) -> float:
    """Dice overlap of the thresholded foregrounds; 1.0 if both are empty."""
    fa = np.asarray(a) > threshold
    fb = np.asarray(b) > threshold
    if fa.shape != fb.shape:
        raise ValueError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    total = fa.sum() + fb.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(fa, fb).sum() / total)


def transfer_landmarks(field, landmarks) -> np.ndarray:
    """Map target-grid points ``l`` to ``l + phi(l)`` with phi interpolated bilinearly."""
    phi = torch.as_tensor(np.asarray(field, dtype=np.float64))
    pts = np.asarray(landmarks, dtype=np.float64)
    h, w = phi.shape[:2]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"landmarks must be (K, 2), got {pts.shape}")
    outside = (pts[:, 0] < 0) | (pts[:, 0] > h - 1) | (pts[:, 1] < 0) | (pts[:, 1] > w - 1)
    if outside.any():
        raise ValueError(f"landmarks outside the {h}x{w} grid: {pts[outside].tolist()}")
    rows = torch.from_numpy(pts[:, 0])
    cols = torch.from_numpy(pts[:, 1])
    disp = np.stack([
        sample_bilinear(phi[..., k], rows, cols).numpy() for k in range(2)
    ], axis=1)
    return pts + disp


def landmark_distances(field, pair) -> np.ndarray:
    predicted = transfer_landmarks(field, pair.target.landmarks)
    return np.linalg.norm(predicted - pair.source.landmarks, axis=1)


def landmark_error(field, pair, bump_width: float) -> float:
    """Mean landmark transfer error as a percentage of ``bump_width``."""
    return float(landmark_distances(field, pair).mean() / bump_width * 100.0)


def ae_relative_error(fields, reconstructions) -> float:
    """Mean of ``|phi - phi_hat| / |phi|`` over pairs, in percent.

    Zero fields have no relative error and are skipped with a warning.
    """
    fields = [np.asarray(f, dtype=np.float64) for f in fields]
    reconstructions = [np.asarray(r, dtype=np.float64) for r in reconstructions]
    if len(fields) != len(reconstructions):
        raise ValueError(f"{len(fields)} fields but {len(reconstructions)} reconstructions")
    ratios = []
    for phi, rec in zip(fields, reconstructions):
        if phi.shape != rec.shape:
            raise ValueError(f"shape mismatch: {phi.shape} vs {rec.shape}")
        norm = np.linalg.norm(phi)
        if norm == 0:
            continue
        ratios.append(np.linalg.norm(phi - rec) / norm)
    skipped = len(fields) - len(ratios)
    if not ratios:
        raise ValueError("every field has zero norm; relative error undefined")
    if skipped:
        log.warning("skipped %d zero-norm fields in AE error", skipped)
    return float(np.mean(ratios) * 100.0)


def posthoc_ae_fit(fields, h: int, seed: int, iterations: int = POSTHOC_ITERATIONS,
                   learning_rate: float = 1e-4, batch_size: int = 16,
                   config: CAEConfig | None = None):
    """Fit a fresh autoencoder to a fixed set of fields.

    Returns the fitted network and its relative reconstruction error (%) on
    the same fields.
    """
    stack = np.stack([np.asarray(f, dtype=np.float32) for f in fields])
    if len(stack) == 0:
        raise ValueError("no fields to fit")
    config = config or CAEConfig(h=h)
    if config.h != h:
        config = CAEConfig(h=h, levels=config.levels, base_channels=config.base_channels)
    torch.manual_seed(seed)
    net = init_cae(config, seed, stack.shape[1:3])
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate)
    data = torch.from_numpy(stack)
    rng = np.random.default_rng(seed)
    for it in range(iterations):
        batch = data[torch.from_numpy(rng.integers(0, len(data), batch_size))]
        _, rec = net(batch)
        loss = ((rec - batch) ** 2).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if not torch.isfinite(loss):
            _check_finite({"posthoc_ae": float(loss)}, it)
    net.eval()
    recon = reconstruct(net, stack)
    return net, ae_relative_error(stack, recon)


def reconstruct(net, fields, chunk: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        data = torch.from_numpy(np.asarray(fields, dtype=np.float32))
        for k in range(0, len(data), chunk):
            out.append(net(data[k:k + chunk])[1].numpy())
    return np.concatenate(out)


def predict_fields(primary, sources, targets, chunk: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        s = torch.from_numpy(np.asarray(sources, dtype=np.float32))
        t = torch.from_numpy(np.asarray(targets, dtype=np.float32))
        for k in range(0, len(s), chunk):
            out.append(primary(s[k:k + chunk], t[k:k + chunk]).numpy())
    return np.concatenate(out)


def time_forward(primary, source, target, repeats: int = 20) -> float:
    """Median wall time of one single-pair field prediction, in seconds."""
    s = torch.from_numpy(np.asarray(source, dtype=np.float32))[None]
    t = torch.from_numpy(np.asarray(target, dtype=np.float32))[None]
    times = []
    with torch.no_grad():
        primary(s, t)
        for _ in range(repeats):
            start = time.perf_counter()
            primary(s, t)
            times.append(time.perf_counter() - start)
    return float(np.median(times))
