"""Grid and displacement-field math.

Images are ``(H, W)`` arrays, displacement fields are ``(H, W, 2)`` arrays in
pixel units with component order (row offset, column offset). Pixel ``(0, 0)``
is the center of the top-left pixel. Warping is backward: the registered
image at ``x`` is the source sampled at ``x + phi(x)``.

Every function accepts numpy arrays or torch tensors. Torch inputs stay on the
autograd graph; numpy inputs come back as numpy. Leading batch dimensions are
allowed on the torch paths used during training.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage

SDF_CLIP = 10.0


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, False
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return torch.from_numpy(np.ascontiguousarray(arr)), True


def check_image(image) -> None:
    if image.ndim < 2:
        raise ValueError(f"image must be at least 2-D, got shape {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"image must be at least 2x2, got {h}x{w}")


def check_field(field, shape=None) -> None:
    if field.ndim < 3 or field.shape[-1] != 2:
        raise ValueError(f"field must have shape (..., H, W, 2), got {tuple(field.shape)}")
    if shape is not None and tuple(field.shape[-3:-1]) != tuple(shape):
        raise ValueError(
            f"field grid {tuple(field.shape[-3:-1])} does not match image grid {tuple(shape)}"
        )


def sample_bilinear(images: torch.Tensor, rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup with border clamping.

    ``images`` is ``(..., H, W)``; ``rows`` and ``cols`` share leading batch
    dims with ``images`` and may have any trailing shape. Differentiable with
    respect to the image values and the coordinates.
    """
    h, w = images.shape[-2:]
    batch = images.shape[:-2]
    r = rows.clamp(0, h - 1)
    c = cols.clamp(0, w - 1)
    # the upper neighbour must stay inside the grid, so the top cell is h-2
    r0 = r.detach().floor().clamp(max=h - 2)
    c0 = c.detach().floor().clamp(max=w - 2)
    fr = r - r0
    fc = c - c0
    r0 = r0.long()
    c0 = c0.long()

    flat = images.reshape(*batch, h * w)
    out_shape = rows.shape
    idx = (r0 * w + c0).reshape(*batch, -1)

    def take(offset):
        return torch.gather(flat, -1, idx + offset).reshape(out_shape)

    v00 = take(0)
    v01 = take(1)
    v10 = take(w)
    v11 = take(w + 1)
    top = v00 + fc * (v01 - v00)
    bottom = v10 + fc * (v11 - v10)
    return top + fr * (bottom - top)


def bilinear_sample(image, point) -> float:
    """Sample ``image`` at continuous ``(row, col)`` with border clamping."""
    img, _ = _as_tensor(image)
    check_image(img)
    if img.ndim != 2:
        raise ValueError("bilinear_sample takes a single (H, W) image")
    pt = torch.as_tensor(point, dtype=img.dtype) if not isinstance(point, torch.Tensor) else point
    if pt.shape != (2,):
        raise ValueError(f"point must be a (row, col) pair, got shape {tuple(pt.shape)}")
    if not bool(torch.isfinite(pt).all()):
        raise ValueError(f"point must be finite, got {pt.tolist()}")
    value = sample_bilinear(img, pt[0].reshape(1), pt[1].reshape(1))[0]
    if isinstance(image, torch.Tensor) or isinstance(point, torch.Tensor):
        return value
    return float(value)


def identity_grid(h: int, w: int, dtype=torch.float64, device=None):
    rows = torch.arange(h, dtype=dtype, device=device).reshape(h, 1).expand(h, w)
    cols = torch.arange(w, dtype=dtype, device=device).reshape(1, w).expand(h, w)
    return rows, cols


def warp_image(image, field):
    """Backward-warp ``image`` by ``field``: ``out(x) = image(x + field(x))``."""
    img, img_np = _as_tensor(image)
    phi, phi_np = _as_tensor(field)
    check_image(img)
    check_field(phi, img.shape[-2:])
    if img.shape[:-2] != phi.shape[:-3]:
        raise ValueError(
            f"batch shapes differ: image {tuple(img.shape)} vs field {tuple(phi.shape)}"
        )
    dtype = torch.promote_types(img.dtype, phi.dtype)
    img = img.to(dtype)
    phi = phi.to(dtype)
    h, w = img.shape[-2:]
    rows, cols = identity_grid(h, w, dtype=dtype, device=img.device)
    out = sample_bilinear(img, rows + phi[..., 0], cols + phi[..., 1])
    if img_np and phi_np:
        return out.numpy()
    return out


def spatial_gradient(field):
    """Forward differences of each component along each axis.

    Returns ``(..., H, W, 2, 2)`` where ``[..., i, j]`` is the derivative of
    component ``i`` along axis ``j`` (0 = rows, 1 = columns). The last row and
    column get a zero difference.
    """
    phi, is_np = _as_tensor(field)
    check_field(phi)
    d_row = torch.zeros_like(phi)
    d_col = torch.zeros_like(phi)
    d_row[..., :-1, :, :] = phi[..., 1:, :, :] - phi[..., :-1, :, :]
    d_col[..., :, :-1, :] = phi[..., :, 1:, :] - phi[..., :, :-1, :]
    grad = torch.stack([d_row, d_col], dim=-1)
    return grad.numpy() if is_np else grad


def to_signed_distance(binary, threshold: float = 0.5, clip: float = SDF_CLIP) -> np.ndarray:
    """Signed Euclidean distance to the shape boundary, rescaled to [0, 1].

    Foreground is ``binary > threshold``. Boundary pixels are foreground pixels
    with a background 4-neighbour; they map to 0.5. Distances are negative
    inside, clipped to ``[-clip, clip]`` and mapped linearly onto [0, 1].
    """
    arr = np.asarray(binary, dtype=np.float64)
    check_image(arr)
    if arr.ndim != 2:
        raise ValueError("to_signed_distance takes a single (H, W) image")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    inside = arr > threshold
    # the image frame is not a shape boundary
    eroded = ndimage.binary_erosion(inside, structure=ndimage.generate_binary_structure(2, 1),
                                    border_value=1)
    boundary = inside & ~eroded
    if not boundary.any():
        raise ValueError("image has no foreground/background boundary")
    dist = ndimage.distance_transform_edt(~boundary)
    signed = np.where(inside, -dist, dist)
    return (np.clip(signed, -clip, clip) + clip) / (2.0 * clip)
