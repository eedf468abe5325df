"""Multi-problem orchestration: per-problem state across frames, control
application at frame boundaries, dictionary transfer, and the live loop.

A ProblemHandle owns exactly one sampler state.  Frame processing is
serialized per handle; distinct handles may run concurrently.  Control
mutations (sampling ratio, epochs, pause, transfer, strategy) are queued
and applied only between frames, so every frame reflects one coherent
config snapshot.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import bpfa
from .bpfa import Dictionary, GibbsState, Hyperparams
from .formats import FormatError
from .metrics import FrameMetrics, model_stats, mse, psnr
from .patches import (
    PatchSpec,
    ShapeError,
    apply_data_consistency,
    extract_patches,
    reconstitute,
)
from .sampling import SamplerSpec, run_strategy, strategy_names
from .sources import FrameSource

logger = logging.getLogger(__name__)


@dataclass
class ProblemConfig:
    name: str
    patch_spec: PatchSpec = field(default_factory=lambda: PatchSpec((10, 10)))
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    sampler_spec: SamplerSpec = field(default_factory=SamplerSpec)
    epochs_per_frame: int = 2
    freeze_dict: bool = False
    warm_start: bool = True
    data_consistency: bool = False   # display streams show pure model output
    reference_available: bool = True
    mean_subtract: bool | None = None  # None: on for 2D patches, off otherwise
    init_mode: str = "data"
    average_last: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_frame < 1:
            raise ValueError("epochs_per_frame must be >= 1")

    @property
    def resolved_mean_subtract(self) -> bool:
        if self.mean_subtract is None:
            return len(self.patch_spec.patch_shape) == 2
        return self.mean_subtract


@dataclass
class FrameResult:
    frame_id: int
    reconstruction: np.ndarray
    masked_input: np.ndarray
    metrics: FrameMetrics
    mask: np.ndarray
    dictionary: Dictionary
    ground_truth: np.ndarray | None = None


AckCallback = Callable[[int], None]


class ProblemHandle:
    """One live inpainting problem; owned by a Pipeline."""

    def __init__(self, config: ProblemConfig, problem_id: int):
        self.config = config
        self.problem_id = problem_id
        self.lock = threading.Lock()
        self.state: GibbsState | None = None
        self.shape: tuple[int, ...] | None = None
        self.frames_processed = 0
        self.last_metrics: FrameMetrics | None = None
        self.paused = False
        self.pending_dict: Dictionary | None = None
        self.prev_mask: np.ndarray | None = None
        self.prev_recon: np.ndarray | None = None
        self.residual_map: np.ndarray | None = None
        self._controls: "queue.Queue[tuple[str, object, Optional[AckCallback]]]" = queue.Queue()

    @property
    def name(self) -> str:
        return self.config.name

    def enqueue_control(self, cmd: str, value=None, ack: AckCallback | None = None) -> None:
        """Queue a config mutation; it takes effect at the next frame boundary."""
        self._controls.put((cmd, value, ack))

    def drain_controls(self, next_frame_id: int) -> None:
        """Apply queued controls; acks report the frame they first affect."""
        while True:
            try:
                cmd, value, ack = self._controls.get_nowait()
            except queue.Empty:
                return
            self._apply_control(cmd, value)
            if ack is not None:
                ack(next_frame_id)

    def _apply_control(self, cmd: str, value) -> None:
        cfg = self.config
        if cmd == "set_sampling":
            ratio = float(value)
            if not 0.0 <= ratio <= 1.0:
                raise ValueError(f"sampling ratio {ratio} out of range")
            self.config = replace(cfg, sampler_spec=cfg.sampler_spec.with_ratio(ratio))
        elif cmd == "set_epochs":
            self.config = replace(cfg, epochs_per_frame=int(value))
        elif cmd == "set_strategy":
            if value not in strategy_names():
                raise ValueError(f"unknown strategy {value!r}")
            self.config = replace(
                cfg, sampler_spec=replace(cfg.sampler_spec, kind=str(value))
            )
        elif cmd == "pause":
            self.paused = True
        elif cmd == "resume":
            self.paused = False
        elif cmd == "set_freeze":
            self.config = replace(cfg, freeze_dict=bool(value))
        elif cmd == "install_dict":
            dictionary, freeze = value
            self._install_dictionary(dictionary, freeze)
        else:
            raise ValueError(f"unknown control {cmd!r}")

    def _install_dictionary(self, dictionary: Dictionary, freeze: bool | None) -> None:
        """Adopt a dictionary (re-shaped if needed); codes reset.

        Caller must hold the handle's lock or be the frame worker itself.
        """
        moved = bpfa.transfer_dictionary(
            dictionary, self.config.patch_spec.patch_shape, self.shape
        )
        if freeze is not None:
            self.config = replace(self.config, freeze_dict=freeze)
        if self.state is None:
            self.pending_dict = moved
            return
        old = self.state
        self.state = GibbsState(
            dictionary=moved,
            usage=np.zeros((old.num_patches, moved.num_atoms), dtype=bool),
            weights=np.zeros((old.num_patches, moved.num_atoms), dtype=np.float64),
            weight_precision=old.weight_precision,
            noise_precision=old.noise_precision,
            epoch=old.epoch,  # keep the stream counter advancing
            seed=self.config.seed,
        )


class Pipeline:
    """Registry and scheduler for simultaneous inpainting problems."""

    def __init__(self):
        self._problems: dict[str, ProblemHandle] = {}
        self._registry_lock = threading.Lock()

    def create_problem(self, config: ProblemConfig) -> ProblemHandle:
        with self._registry_lock:
            if config.name in self._problems:
                raise ValueError(f"duplicate problem name {config.name!r}")
            handle = ProblemHandle(config, problem_id=len(self._problems))
            self._problems[config.name] = handle
            return handle

    def problem(self, name: str) -> ProblemHandle:
        return self._problems[name]

    def problems(self) -> list[ProblemHandle]:
        return list(self._problems.values())

    def status(self) -> dict[str, FrameMetrics | None]:
        return {name: h.last_metrics for name, h in self._problems.items()}

    # --- frame processing -------------------------------------------------

    def submit_frame(
        self,
        handle: ProblemHandle,
        frame: np.ndarray,
        ground_truth: np.ndarray | None = None,
    ) -> FrameResult:
        """Run one full mask -> infer -> reconstitute cycle on a frame."""
        with handle.lock:
            frame = np.asarray(frame, dtype=np.float64)
            frame_id = handle.frames_processed
            handle.drain_controls(frame_id)
            cfg = handle.config

            if handle.shape is None:
                cfg.patch_spec.validate_for(frame.shape)
                handle.shape = tuple(frame.shape)
            elif tuple(frame.shape) != handle.shape:
                raise ShapeError(
                    f"frame shape {frame.shape} drifted from {handle.shape}"
                )

            mask = run_strategy(
                cfg.sampler_spec,
                handle.shape,
                prev_mask=handle.prev_mask,
                residual_map=handle.residual_map,
                frame_index=frame_id,
            )
            masked_input = frame * mask
            pm = extract_patches(
                frame, mask, cfg.patch_spec, mean_subtract=cfg.resolved_mean_subtract
            )

            started = time.perf_counter()
            if cfg.warm_start and handle.state is not None:
                state = handle.state
                state.usage[:] = False   # codes re-burn each frame; dictionary,
                state.weights[:] = 0.0   # pi and precisions carry over
                state, estimates = bpfa.infer(
                    pm, cfg.hyperparams, cfg.epochs_per_frame, cfg.seed,
                    freeze_dict=cfg.freeze_dict, average_last=cfg.average_last,
                    state=state,
                )
            else:
                initial = handle.pending_dict
                handle.pending_dict = None
                state, estimates = bpfa.infer(
                    pm, cfg.hyperparams, cfg.epochs_per_frame, cfg.seed,
                    freeze_dict=cfg.freeze_dict, initial_dict=initial,
                    init_mode=cfg.init_mode, average_last=cfg.average_last,
                )
            wall_ms = (time.perf_counter() - started) * 1e3
            handle.state = state

            recon = reconstitute(pm, estimates)
            output = apply_data_consistency(recon, frame, mask, cfg.data_consistency)

            atoms_per_patch, pi_hist, _, _ = model_stats(state)
            metrics = FrameMetrics(
                frame_id=frame_id,
                psnr_db=psnr(output, ground_truth) if ground_truth is not None else None,
                mse=mse(output, ground_truth) if ground_truth is not None else None,
                sampling_ratio=float(mask.mean()),
                atoms_per_patch=atoms_per_patch,
                pi_histogram=pi_hist,
                epoch_time_ms=wall_ms / cfg.epochs_per_frame,
                epochs_run=state.epoch,
            )

            if handle.prev_recon is not None:
                diff = recon - handle.prev_recon
                handle.residual_map = diff * diff
            else:
                handle.residual_map = np.zeros_like(recon)
            handle.prev_recon = recon
            handle.prev_mask = mask
            handle.last_metrics = metrics
            handle.frames_processed = frame_id + 1

            return FrameResult(
                frame_id=frame_id,
                reconstruction=output,
                masked_input=masked_input,
                metrics=metrics,
                mask=mask,
                dictionary=state.dictionary.copy(),
                ground_truth=ground_truth,
            )

    # --- dictionary transfer ----------------------------------------------

    def snapshot_dictionary(self, handle: ProblemHandle) -> Dictionary | None:
        """Copy a problem's current dictionary without racing its sweeps."""
        with handle.lock:
            if handle.state is None:
                return handle.pending_dict.copy() if handle.pending_dict else None
            return handle.state.dictionary.copy()

    def transfer_between(
        self, src: ProblemHandle, dst: ProblemHandle, freeze: bool = False
    ) -> None:
        """Install src's current dictionary into dst; dst codes reset."""
        if src is dst:
            raise ValueError("cannot transfer a dictionary onto itself")
        snapshot = self.snapshot_dictionary(src)
        if snapshot is None:
            raise ValueError(f"source problem {src.name!r} has no trained state yet")
        with dst.lock:
            dst._install_dictionary(snapshot, freeze)

    # --- live loop ----------------------------------------------------------

    def run_live(
        self,
        pairings: list[tuple[FrameSource, ProblemHandle]],
        sink: Callable[[str, FrameResult], None],
        stop: threading.Event | None = None,
        max_workers: int | None = None,
    ) -> dict[str, dict[str, int]]:
        """Pump frames from each source into its problem until exhaustion.

        Results are delivered to the sink in frame order per problem.  Source
        read failures are logged, counted and skipped.  Returns a per-problem
        summary of processed and skipped frame counts.
        """
        if not pairings:
            raise ValueError("run_live needs at least one (source, problem) pairing")
        stop = stop or threading.Event()
        summary = {h.name: {"frames": 0, "skipped": 0} for _, h in pairings}

        def pump(source: FrameSource, handle: ProblemHandle) -> None:
            for item in source.iter_items(stop):
                if stop.is_set():
                    break
                while handle.paused and not stop.is_set():
                    handle.drain_controls(handle.frames_processed)
                    time.sleep(0.005)
                if stop.is_set():
                    break
                try:
                    frame = source.read_item(item)
                except (FormatError, OSError) as exc:
                    logger.warning("skipping unreadable frame %s: %s", item, exc)
                    summary[handle.name]["skipped"] += 1
                    continue
                gt = frame if handle.config.reference_available else None
                result = self.submit_frame(handle, frame, ground_truth=gt)
                summary[handle.name]["frames"] += 1
                sink(handle.name, result)

        with ThreadPoolExecutor(max_workers=max_workers or len(pairings)) as pool:
            futures = [pool.submit(pump, src, handle) for src, handle in pairings]
            for fut in futures:
                fut.result()
        return summary
