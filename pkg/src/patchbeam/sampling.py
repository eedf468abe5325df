"""Sampling-mask generation: pre-determined and adaptive signal selection.

Every strategy is a pure function (previous mask, residual map, spec,
frame index) -> mask, registered by name.  Masks are generated from
counter-based streams keyed by (seed, strategy), so the same spec always
yields the same mask regardless of when or where it is evaluated.  All
strategies observe exactly round(ratio * total_elements) distinct
elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .patches import ShapeError, _check_tensor_shape
from .rng import DOMAIN_MASK, keyed_rng

STRAT_UNIFORM = "uniform-random"
STRAT_STRATIFIED = "stratified"
STRAT_LINE_HOP = "line-hop"
STRAT_EXPLICIT = "explicit-list"
STRAT_ADAPTIVE = "adaptive-residual"

_STRATEGY_IDS = {
    STRAT_UNIFORM: 1,
    STRAT_STRATIFIED: 2,
    STRAT_LINE_HOP: 3,
    STRAT_EXPLICIT: 4,
    STRAT_ADAPTIVE: 5,
}


@dataclass(frozen=True)
class SamplerSpec:
    """Which strategy to run, at what ratio, under which seed."""

    kind: str = STRAT_UNIFORM
    ratio: float = 0.2
    seed: int = 0
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"sampling ratio must be in [0, 1], got {self.ratio}")

    def with_ratio(self, ratio: float) -> "SamplerSpec":
        return replace(self, ratio=float(ratio))


def sample_budget(ratio: float, shape: tuple[int, ...]) -> int:
    """Exact element budget: round-half-up of ratio * total elements."""
    total = int(np.prod(shape))
    return int(np.floor(ratio * total + 0.5))


def _mask_rng(spec: SamplerSpec, strategy: str, *subkey: int) -> np.random.Generator:
    return keyed_rng(spec.seed, DOMAIN_MASK, _STRATEGY_IDS[strategy], *subkey)


def _mask_from_flat(flat_idx: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    mask = np.zeros(int(np.prod(shape)), dtype=bool)
    mask[flat_idx] = True
    return mask.reshape(shape)


def _uniform(prev, residual, spec: SamplerSpec, shape, frame_index) -> np.ndarray:
    n = sample_budget(spec.ratio, shape)
    total = int(np.prod(shape))
    rng = _mask_rng(spec, STRAT_UNIFORM)
    picks = rng.choice(total, size=n, replace=False)
    return _mask_from_flat(picks, shape)


def _stratified(prev, residual, spec: SamplerSpec, shape, frame_index) -> np.ndarray:
    tile = tuple(spec.parameters.get("tile", (8, 8)))
    ndim = len(shape)
    tdims = min(2, ndim)
    tile = tile[:tdims]
    rest = int(np.prod(shape[tdims:])) if ndim > tdims else 1
    total = int(np.prod(shape))
    target_total = sample_budget(spec.ratio, shape)

    # Tile grid over the first (up to) two dimensions; edge tiles may be
    # smaller.  Per-tile quotas floor the ideal share, then the remaining
    # budget goes to the tiles with the largest fractional part (ties by
    # tile order), so the global count is exact.
    grids = [range(0, shape[i], tile[i]) for i in range(tdims)]
    tiles = []
    for o0 in grids[0]:
        if tdims == 2:
            for o1 in grids[1]:
                tiles.append((o0, o1))
        else:
            tiles.append((o0,))

    sizes = []
    for org in tiles:
        span = [min(tile[i], shape[i] - org[i]) for i in range(tdims)]
        sizes.append(int(np.prod(span)) * rest)
    sizes = np.asarray(sizes, dtype=np.int64)
    ideal = spec.ratio * sizes.astype(np.float64)
    quota = np.floor(ideal).astype(np.int64)
    short = target_total - int(quota.sum())
    if short > 0:
        frac = ideal - quota
        order = np.argsort(-frac, kind="stable")
        quota[order[:short]] += 1
    elif short < 0:
        order = np.argsort(ideal - quota, kind="stable")
        take = order[: -short]
        quota[take] = np.maximum(quota[take] - 1, 0)

    rng = _mask_rng(spec, STRAT_STRATIFIED)
    mask = np.zeros(shape, dtype=bool)
    for org, q in zip(tiles, quota):
        if q == 0:
            continue
        span = [min(tile[i], shape[i] - org[i]) for i in range(tdims)]
        tile_shape = tuple(span) + shape[tdims:]
        tile_total = int(np.prod(tile_shape))
        picks = rng.choice(tile_total, size=int(q), replace=False)
        sub = np.zeros(tile_total, dtype=bool)
        sub[picks] = True
        sel = tuple(slice(org[i], org[i] + span[i]) for i in range(tdims))
        mask[sel] = sub.reshape(tile_shape)
    return mask


def _line_hop(prev, residual, spec: SamplerSpec, shape, frame_index) -> np.ndarray:
    if len(shape) < 2:
        raise ShapeError("line-hop requires a 2D or 3D shape")
    if len(shape) > 3:
        raise ShapeError("line-hop supports 2D/3D shapes only")
    row_len = shape[-1]
    n_rows = int(np.prod(shape[:-1]))
    target = sample_budget(spec.ratio, shape)
    n_full, partial = divmod(target, row_len)
    n_lines = n_full + (1 if partial else 0)

    rng = _mask_rng(spec, STRAT_LINE_HOP)
    mask = np.zeros((n_rows, row_len), dtype=bool)
    if n_lines > 0:
        # One selected line per equal block of the slow axis, at a random
        # phase within its block: a hop pattern over scan lines.
        edges = np.linspace(0, n_rows, n_lines + 1)
        rows = []
        for j in range(n_lines):
            lo, hi = int(edges[j]), max(int(edges[j + 1]), int(edges[j]) + 1)
            rows.append(lo + int(rng.integers(0, hi - lo)))
        rows = np.unique(np.asarray(rows, dtype=np.int64))
        # Collisions from rounding: top up with the lowest unselected rows.
        while rows.size < n_lines:
            free = np.setdiff1d(np.arange(n_rows), rows)
            rows = np.sort(np.append(rows, free[: n_lines - rows.size]))
        full_rows, partial_row = rows[: n_full], rows[n_full:]
        mask[full_rows, :] = True
        if partial:
            phase = int(rng.integers(0, row_len))
            cols = (phase + np.arange(partial)) % row_len
            mask[partial_row[0], cols] = True
    return mask.reshape(shape)


def _explicit(prev, residual, spec: SamplerSpec, shape, frame_index) -> np.ndarray:
    total = int(np.prod(shape))
    idx = np.asarray(spec.parameters.get("indices", ()), dtype=np.int64)
    if idx.size != np.unique(idx).size:
        raise ValueError("explicit-list indices must be unique")
    if idx.size and (idx.min() < 0 or idx.max() >= total):
        raise ValueError("explicit-list indices out of bounds")
    return _mask_from_flat(idx, shape)


def _adaptive(prev, residual, spec: SamplerSpec, shape, frame_index) -> np.ndarray:
    if residual is None or not np.any(residual):
        # Degrades to plain uniform sampling, bit-identical to that strategy.
        return _uniform(prev, None, spec, shape, frame_index)
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != tuple(shape):
        raise ShapeError("residual map shape mismatch")
    if (residual < 0).any():
        raise ValueError("residual map must be non-negative")

    total = int(np.prod(shape))
    budget = sample_budget(spec.ratio, shape)
    exploit_fraction = float(spec.parameters.get("exploit_fraction", 0.5))
    n_exploit = int(np.floor(exploit_fraction * budget + 0.5))
    n_exploit = min(max(n_exploit, 0), budget)

    # Exploit: highest residual first, ties broken by lowest flat index.
    order = np.argsort(-residual.ravel(), kind="stable")
    exploit_idx = order[:n_exploit]

    n_explore = budget - n_exploit
    if n_explore > 0:
        taken = np.zeros(total, dtype=bool)
        taken[exploit_idx] = True
        free = np.flatnonzero(~taken)
        rng = _mask_rng(spec, STRAT_ADAPTIVE, frame_index)
        explore_idx = rng.choice(free.size, size=n_explore, replace=False)
        picks = np.concatenate([exploit_idx, free[explore_idx]])
    else:
        picks = exploit_idx
    return _mask_from_flat(picks, shape)


Strategy = Callable[
    [Optional[np.ndarray], Optional[np.ndarray], SamplerSpec, tuple, int], np.ndarray
]

_REGISTRY: dict[str, Strategy] = {
    STRAT_UNIFORM: _uniform,
    STRAT_STRATIFIED: _stratified,
    STRAT_LINE_HOP: _line_hop,
    STRAT_EXPLICIT: _explicit,
    STRAT_ADAPTIVE: _adaptive,
}


def register_strategy(name: str, fn: Strategy, strategy_id: int | None = None) -> None:
    """Register a custom mask strategy under a new name."""
    if name in _REGISTRY:
        raise ValueError(f"strategy {name!r} already registered")
    _REGISTRY[name] = fn
    if strategy_id is not None:
        _STRATEGY_IDS[name] = int(strategy_id)


def strategy_names() -> list[str]:
    return sorted(_REGISTRY)


def run_strategy(
    spec: SamplerSpec,
    shape: tuple[int, ...],
    prev_mask: np.ndarray | None = None,
    residual_map: np.ndarray | None = None,
    frame_index: int = 0,
) -> np.ndarray:
    """Evaluate a sampler's strategy with full plug-in inputs."""
    _check_tensor_shape(tuple(shape))
    try:
        fn = _REGISTRY[spec.kind]
    except KeyError:
        raise ValueError(f"unknown sampling strategy {spec.kind!r}") from None
    return fn(prev_mask, residual_map, spec, tuple(shape), int(frame_index))


def make_mask(spec: SamplerSpec, shape: tuple[int, ...]) -> np.ndarray:
    """Generate a mask from a pre-determined strategy (frame 0, no history)."""
    return run_strategy(spec, shape)


def next_mask_adaptive(
    prev_mask: np.ndarray,
    residual_map: np.ndarray,
    spec: SamplerSpec,
    frame_index: int = 0,
) -> np.ndarray:
    """Advance an adaptive strategy one frame using the residual map."""
    return run_strategy(
        spec,
        tuple(prev_mask.shape),
        prev_mask=prev_mask,
        residual_map=residual_map,
        frame_index=frame_index,
    )
