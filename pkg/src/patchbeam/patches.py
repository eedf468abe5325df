"""N-dimensional patch extraction, reconstitution and mask application.

Tensors are plain numpy arrays (row-major, last dimension fastest), rank 1
to 4, with values normalized to [0, 1] for image paths.  Sample masks are
boolean arrays of the same shape.  A patch grid covers only fully in-bounds
positions: along dimension i the origins are 0, s_i, 2*s_i, ... while
origin + B_i <= M_i.  A dimension with B_i == M_i ("spanning") therefore
has exactly one grid position regardless of stride.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_RANK = 4


class ShapeError(ValueError):
    """Tensor / patch / mask shape mismatch."""


class CoverageError(ValueError):
    """Strict reconstitution found elements covered by no patch."""


def _check_tensor_shape(shape: tuple[int, ...]) -> None:
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got {len(shape)}")
    if any(m < 1 for m in shape):
        raise ShapeError(f"tensor dims must be >= 1, got {shape}")


@dataclass(frozen=True)
class PatchSpec:
    """Patch shape and stride for one extraction grid."""

    patch_shape: tuple[int, ...]
    stride: tuple[int, ...] = ()

    def __post_init__(self):
        shape = tuple(int(b) for b in self.patch_shape)
        stride = tuple(int(s) for s in self.stride) if self.stride else (1,) * len(shape)
        if len(stride) != len(shape):
            raise ShapeError("stride rank must match patch rank")
        if any(b < 1 for b in shape):
            raise ShapeError(f"patch dims must be >= 1, got {shape}")
        if any(s < 1 for s in stride):
            raise ShapeError(f"strides must be >= 1, got {stride}")
        object.__setattr__(self, "patch_shape", shape)
        object.__setattr__(self, "stride", stride)

    def validate_for(self, tensor_shape: tuple[int, ...]) -> None:
        _check_tensor_shape(tensor_shape)
        if len(self.patch_shape) != len(tensor_shape):
            raise ShapeError(
                f"patch rank {len(self.patch_shape)} != tensor rank {len(tensor_shape)}"
            )
        for b, m in zip(self.patch_shape, tensor_shape):
            if b > m:
                raise ShapeError(f"patch shape {self.patch_shape} exceeds tensor {tensor_shape}")

    def grid_counts(self, tensor_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Grid positions per dimension: floor((M_i - B_i) / s_i) + 1."""
        self.validate_for(tensor_shape)
        return tuple(
            (m - b) // s + 1
            for m, b, s in zip(tensor_shape, self.patch_shape, self.stride)
        )

    def num_patches(self, tensor_shape: tuple[int, ...]) -> int:
        return int(np.prod(self.grid_counts(tensor_shape)))

    @property
    def patch_size(self) -> int:
        return int(np.prod(self.patch_shape))


@dataclass
class PatchMatrix:
    """Flattened view of all grid patches of one masked tensor.

    values[i, p] is 0 wherever observed[i, p] is False, so downstream
    consumers never see data from unobserved elements.  means[i] holds the
    per-patch mean over observed elements that was subtracted from values
    (0 when mean subtraction is disabled).
    """

    values: np.ndarray          # (N, P) float64
    observed: np.ndarray        # (N, P) bool
    origins: np.ndarray         # (N, d) int64 grid coordinates
    means: np.ndarray           # (N,) float64
    tensor_shape: tuple[int, ...]
    spec: PatchSpec
    mean_subtracted: bool = False

    @property
    def num_patches(self) -> int:
        return self.values.shape[0]

    @property
    def patch_size(self) -> int:
        return self.values.shape[1]


def _grid_origins(spec: PatchSpec, tensor_shape: tuple[int, ...]) -> np.ndarray:
    axes = [
        np.arange(0, m - b + 1, s, dtype=np.int64)
        for m, b, s in zip(tensor_shape, spec.patch_shape, spec.stride)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _windows(arr: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """All grid patches as an (N, P) array (copies)."""
    view = np.lib.stride_tricks.sliding_window_view(arr, spec.patch_shape)
    sel = tuple(slice(None, None, s) for s in spec.stride)
    picked = view[sel]
    n = int(np.prod(picked.shape[: arr.ndim]))
    return np.ascontiguousarray(picked).reshape(n, spec.patch_size)


def extract_patches(
    tensor: np.ndarray,
    mask: np.ndarray,
    spec: PatchSpec,
    mean_subtract: bool = False,
) -> PatchMatrix:
    """Extract all grid-aligned patches of a masked tensor.

    Unobserved elements are zeroed in the output.  With mean_subtract on,
    each patch's mean over its observed elements only is recorded in means
    and subtracted from the observed values.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    spec.validate_for(tensor.shape)
    if mask.shape != tensor.shape:
        raise ShapeError(f"mask shape {mask.shape} != tensor shape {tensor.shape}")
    mask = np.asarray(mask, dtype=bool)

    values = _windows(tensor, spec)
    observed = _windows(mask, spec).astype(bool)
    values = values * observed  # zero out unobserved before anything else

    n = values.shape[0]
    means = np.zeros(n, dtype=np.float64)
    if mean_subtract:
        counts = observed.sum(axis=1)
        nonempty = counts > 0
        sums = values.sum(axis=1)
        means[nonempty] = sums[nonempty] / counts[nonempty]
        values = (values - means[:, None]) * observed

    return PatchMatrix(
        values=values,
        observed=observed,
        origins=_grid_origins(spec, tensor.shape),
        means=means,
        tensor_shape=tuple(tensor.shape),
        spec=spec,
        mean_subtracted=mean_subtract,
    )


def _flat_indices(pm: PatchMatrix) -> np.ndarray:
    """Flat tensor index of every (patch, offset) pair, shape (N, P)."""
    tensor_strides = np.empty(len(pm.tensor_shape), dtype=np.int64)
    acc = 1
    for i in range(len(pm.tensor_shape) - 1, -1, -1):
        tensor_strides[i] = acc
        acc *= pm.tensor_shape[i]
    base = pm.origins @ tensor_strides

    offsets_nd = np.indices(pm.spec.patch_shape).reshape(len(pm.spec.patch_shape), -1)
    offsets = (tensor_strides[:, None] * offsets_nd).sum(axis=0)
    return base[:, None] + offsets[None, :]


def coverage_map(pm: PatchMatrix) -> np.ndarray:
    """How many patches cover each tensor element."""
    size = int(np.prod(pm.tensor_shape))
    flat = _flat_indices(pm).ravel()
    return np.bincount(flat, minlength=size).reshape(pm.tensor_shape)


def reconstitute(
    pm: PatchMatrix,
    estimates: np.ndarray,
    strict: bool = False,
) -> np.ndarray:
    """Overlap-average per-patch estimates back into a full tensor.

    Each output element is the mean of all patch estimates covering it,
    with each patch's subtracted mean added back first.  Elements covered
    by no patch are 0 (or raise CoverageError when strict).
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.shape != pm.values.shape:
        raise ShapeError(
            f"estimates shape {estimates.shape} != patch matrix shape {pm.values.shape}"
        )
    size = int(np.prod(pm.tensor_shape))
    flat = _flat_indices(pm).ravel()
    contrib = (estimates + pm.means[:, None]).ravel()

    acc = np.bincount(flat, weights=contrib, minlength=size)
    cov = np.bincount(flat, minlength=size)
    uncovered = cov == 0
    if strict and uncovered.any():
        raise CoverageError(f"{int(uncovered.sum())} elements covered by no patch")
    out = np.zeros(size, dtype=np.float64)
    np.divide(acc, cov, out=out, where=~uncovered)
    return out.reshape(pm.tensor_shape)


def apply_data_consistency(
    recon: np.ndarray,
    original: np.ndarray,
    mask: np.ndarray,
    enabled: bool = True,
) -> np.ndarray:
    """Overwrite reconstructed values with measured ones at observed elements."""
    if recon.shape != original.shape or recon.shape != mask.shape:
        raise ShapeError("data consistency requires equal shapes")
    if not enabled:
        return recon
    return np.where(np.asarray(mask, dtype=bool), original, recon)


def normalize(tensor: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine-map a tensor into [0, 1]; returns (normalized, scale, offset).

    original = normalized * scale + offset.  Constant tensors map to all
    zeros with scale 1.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.size == 0:
        raise ShapeError("cannot normalize an empty tensor")
    if not np.isfinite(tensor).all():
        raise ValueError("tensor contains non-finite values")
    lo = float(tensor.min())
    hi = float(tensor.max())
    if hi == lo:
        return np.zeros_like(tensor), 1.0, lo
    scale = hi - lo
    return (tensor - lo) / scale, scale, lo
