"""Frame sources for live sessions: image directories, tensor sequences,
and a deterministic synthetic generator."""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Iterator

import numpy as np

from . import formats
from .rng import DOMAIN_SYNTH, keyed_rng


class FrameSource:
    """Iterable of constant-shape tensors, optionally rate-capped.

    iter_items yields opaque frame handles at the capped rate; read_item
    loads one, so a failed read can be skipped without ending the stream.
    """

    def __init__(self, fps_cap: float | None = None, loop: bool = False):
        self.fps_cap = fps_cap
        self.loop = loop

    def _items(self) -> list:
        raise NotImplementedError

    def read_item(self, item) -> np.ndarray:
        raise NotImplementedError

    def iter_items(self, stop: threading.Event | None = None) -> Iterator:
        interval = 1.0 / self.fps_cap if self.fps_cap else 0.0
        last = 0.0
        while True:
            produced = False
            for item in self._items():
                if stop is not None and stop.is_set():
                    return
                if interval:
                    wait = last + interval - time.monotonic()
                    while wait > 0 and not (stop is not None and stop.is_set()):
                        time.sleep(min(wait, 0.05))
                        wait = last + interval - time.monotonic()
                    last = time.monotonic()
                yield item
                produced = True
            if not self.loop or not produced:
                return

    def frames(self) -> Iterator[np.ndarray]:
        for item in self.iter_items():
            yield self.read_item(item)


class DirectorySource(FrameSource):
    """Frames from a directory of images/tensor files, lexicographic order."""

    SUFFIXES = (".pgm", ".satf")

    def __init__(self, directory, fps_cap: float | None = None, loop: bool = False):
        super().__init__(fps_cap, loop)
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"frame directory {self.directory} does not exist")

    def _items(self) -> list[Path]:
        return sorted(
            p for p in self.directory.iterdir()
            if p.suffix.lower() in self.SUFFIXES
        )

    def read_item(self, item: Path) -> np.ndarray:
        if item.suffix.lower() == ".pgm":
            return formats.read_image(item)
        return formats.read_tensor(item)


class TensorSequenceSource(FrameSource):
    """Frames from an explicit list of tensor files."""

    def __init__(self, paths, fps_cap: float | None = None, loop: bool = False):
        super().__init__(fps_cap, loop)
        self.paths = [Path(p) for p in paths]

    def _items(self) -> list[Path]:
        return self.paths

    def read_item(self, item: Path) -> np.ndarray:
        return formats.read_tensor(item)


class SyntheticSource(FrameSource):
    """Deterministic drifting-texture frames, for demos and tests."""

    def __init__(
        self,
        shape: tuple[int, int] = (64, 64),
        num_frames: int = 10,
        seed: int = 0,
        fps_cap: float | None = None,
        loop: bool = False,
    ):
        super().__init__(fps_cap, loop)
        self.shape = tuple(shape)
        self.num_frames = int(num_frames)
        self.seed = int(seed)

    def _items(self) -> list[int]:
        return list(range(self.num_frames))

    def read_item(self, item: int) -> np.ndarray:
        return synthetic_texture(self.shape, seed=self.seed, phase=0.15 * item)


def synthetic_texture(
    shape: tuple[int, int],
    seed: int = 0,
    gratings: int = 8,
    phase: float = 0.0,
) -> np.ndarray:
    """Band-limited test image: a seeded sum of sinusoidal gratings in [0, 1]."""
    rng = keyed_rng(seed, DOMAIN_SYNTH)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    img = np.zeros(shape, dtype=np.float64)
    for _ in range(gratings):
        amp = rng.uniform(0.3, 1.0)
        fy, fx = rng.uniform(1.0, 12.0, size=2)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        img += amp * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phi + phase)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros(shape, dtype=np.float64)
    return img


def open_source(url: str, fps_cap: float | None = None, loop: bool = False) -> FrameSource:
    """Build a source from a CLI-style locator: dir:PATH or synthetic[:HxW[:N]]."""
    if url.startswith("dir:"):
        return DirectorySource(url[4:], fps_cap=fps_cap, loop=loop)
    if url == "synthetic" or url.startswith("synthetic:"):
        shape, count = (64, 64), 10
        parts = url.split(":")[1:]
        if parts and parts[0]:
            h, _, w = parts[0].partition("x")
            shape = (int(h), int(w or h))
        if len(parts) > 1:
            count = int(parts[1])
        return SyntheticSource(shape=shape, num_frames=count, fps_cap=fps_cap, loop=loop)
    raise ValueError(f"unknown source locator {url!r} (use dir:PATH or synthetic)")
