"""Loss terms and the combined cooperative objective.

Every term is a mean over pixels (and batch), so weights carry over between
image sizes. All functions work on torch tensors with optional leading batch
dims and also accept numpy arrays, returning floats in that case.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from coopreg.fields import _as_tensor, check_field, spatial_gradient

NCC_EPS = 1e-5


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha: float = 0.0
    beta: float = 0.0
    matching: str = "l2"
    ncc_window: int = 9

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.matching not in ("l2", "ncc"):
            raise ValueError(f"matching must be 'l2' or 'ncc', got {self.matching!r}")
        _check_window(self.ncc_window)

    def to_dict(self):
        return asdict(self)


@dataclass
class ObjectiveValue:
    total: torch.Tensor
    matching: torch.Tensor
    smoothness: torch.Tensor
    cae_recon: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("matching", "smoothness", "cae_recon", "total")}


def _check_window(window):
    if window < 3 or window % 2 == 0:
        raise ValueError(f"NCC window must be an odd integer >= 3, got {window}")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _out(value, is_np):
    return float(value) if is_np else value


def l2_image_loss(a, b):
    """Mean squared intensity difference."""
    ta, a_np = _as_tensor(a)
    tb, b_np = _as_tensor(b)
    _same_shape(ta, tb)
    return _out(((ta - tb) ** 2).mean(), a_np and b_np)


def _box_sum(x: torch.Tensor, window: int) -> torch.Tensor:
    # x: (N, H, W); windows are truncated at the image border
    kernel = torch.ones(1, 1, window, window, dtype=x.dtype, device=x.device)
    return F.conv2d(x[:, None], kernel, padding=window // 2)[:, 0]


def ncc_loss(a, b, window: int = 9):
    """One minus the mean local squared normalized cross-correlation.

    Each pixel's window is cut off at the image border. Per window,
    ``cc = cov^2 / ((var_a + eps) * (var_b + eps))``.
    """
    _check_window(window)
    ta, a_np = _as_tensor(a)
    tb, b_np = _as_tensor(b)
    _same_shape(ta, tb)
    h, w = ta.shape[-2:]
    ta = ta.reshape(-1, h, w)
    tb = tb.reshape(-1, h, w)
    n = _box_sum(torch.ones_like(ta[:1]), window)
    mean_a = _box_sum(ta, window) / n
    mean_b = _box_sum(tb, window) / n
    var_a = (_box_sum(ta * ta, window) / n - mean_a**2).clamp(min=0)
    var_b = (_box_sum(tb * tb, window) / n - mean_b**2).clamp(min=0)
    cov = _box_sum(ta * tb, window) / n - mean_a * mean_b
    cc = cov**2 / ((var_a + NCC_EPS) * (var_b + NCC_EPS))
    return _out(1.0 - cc.mean(), a_np and b_np)


def smoothness_penalty(field):
    """Mean squared Frobenius norm of the forward-difference Jacobian."""
    phi, is_np = _as_tensor(field)
    grad = spatial_gradient(phi)
    return _out((grad**2).sum(dim=(-2, -1)).mean(), is_np)


def cae_reconstruction_loss(field, reconstruction):
    """Mean squared difference per pixel and component."""
    phi, f_np = _as_tensor(field)
    rec, r_np = _as_tensor(reconstruction)
    _same_shape(phi, rec)
    return _out(((phi - rec) ** 2).mean(), f_np and r_np)


def matching_loss(target, registered, weights: ObjectiveWeights):
    if weights.matching == "ncc":
        return ncc_loss(target, registered, weights.ncc_window)
    return l2_image_loss(target, registered)


def total_objective(target, registered, field, reconstruction, weights: ObjectiveWeights,
                    ) -> ObjectiveValue:
    """Matching loss plus weighted smoothness and CAE reconstruction terms.

    ``reconstruction`` may be None when no autoencoder is attached; the CAE
    term is then exactly zero.
    """
    tgt, _ = _as_tensor(target)
    reg, _ = _as_tensor(registered)
    phi, _ = _as_tensor(field)
    _same_shape(tgt, reg)
    check_field(phi, tgt.shape[-2:])
    match = matching_loss(tgt, reg, weights)
    smooth = smoothness_penalty(phi)
    if reconstruction is None:
        recon = torch.zeros((), dtype=phi.dtype)
    else:
        rec, _ = _as_tensor(reconstruction)
        recon = cae_reconstruction_loss(phi, rec)
    total = match + weights.alpha * smooth + weights.beta * recon
    return ObjectiveValue(total=total, matching=match, smoothness=smooth, cae_recon=recon)
