"""Time-to-solution benchmark harness.

Measures total inference wall time (patch extraction and I/O excluded)
over square synthetic images of increasing size, at fixed dictionary,
patch and epoch parameters, reporting the median over repeats.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from . import bpfa
from .patches import PatchSpec, extract_patches
from .sampling import SamplerSpec, make_mask
from .sources import synthetic_texture


@dataclass
class BenchRow:
    size: int
    patches: int
    epochs: int
    wall_ms: float
    throughput_patches_per_s: float


def run_bench(
    sizes: list[int],
    num_atoms: int = 64,
    patch_shape: tuple[int, ...] = (10, 10),
    stride: tuple[int, ...] = (1, 1),
    epochs: int = 2,
    repeats: int = 3,
    ratio: float = 0.2,
    seed: int = 0,
    images: list | None = None,
) -> list[BenchRow]:
    """Run the scaling benchmark; one row per image size."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    hp = bpfa.Hyperparams(num_atoms=num_atoms)
    spec = PatchSpec(patch_shape, stride)
    for idx, size in enumerate(sizes):
        if images is not None:
            img = images[idx]
        else:
            img = synthetic_texture((size, size), seed=seed)
        mask = make_mask(SamplerSpec(ratio=ratio, seed=seed), img.shape)
        pm = extract_patches(img, mask, spec, mean_subtract=True)
        walls = []
        for rep in range(repeats):
            started = time.perf_counter()
            bpfa.infer(pm, hp, epochs=epochs, seed=seed + rep)
            walls.append((time.perf_counter() - started) * 1e3)
        wall_ms = statistics.median(walls)
        rows.append(
            BenchRow(
                size=size,
                patches=pm.num_patches,
                epochs=epochs,
                wall_ms=wall_ms,
                throughput_patches_per_s=pm.num_patches * epochs / (wall_ms / 1e3),
            )
        )
    return rows


def format_csv(
    rows: list[BenchRow],
    num_atoms: int,
    patch_shape: tuple[int, ...],
    stride: tuple[int, ...],
    ratio: float,
    repeats: int,
    seed: int,
) -> str:
    """CSV with a metadata comment header documenting all fixed parameters."""
    lines = [
        f"# atoms={num_atoms} patch={'x'.join(map(str, patch_shape))} "
        f"stride={'x'.join(map(str, stride))} ratio={ratio} repeats={repeats} seed={seed}",
        "size,patches,epochs,wall_ms,throughput_patches_per_s",
    ]
    for r in rows:
        lines.append(
            f"{r.size},{r.patches},{r.epochs},{r.wall_ms:.3f},"
            f"{r.throughput_patches_per_s:.1f}"
        )
    return "\n".join(lines) + "\n"
