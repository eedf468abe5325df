"""Live session endpoint: broadcasts panel frames and metrics to viewers
over websockets and applies operator controls at frame boundaries.

Binary wire frame = 20-byte little-endian header (type u8, dtype u8,
problem_id u16, width u32, height u32, frame_id u32, reserved u32)
followed by width*height uint8 values, row-major.  Text messages are JSON:
session descriptors, metrics, control commands, acks and errors.

Slow viewers never stall the pipeline: frame panels are latest-wins per
(problem, type) with a per-viewer drop counter, while metrics and acks are
queued and never dropped.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .bpfa import Dictionary
from .pipeline import FrameResult, Pipeline, ProblemHandle
from .sampling import strategy_names
from .sources import FrameSource

logger = logging.getLogger(__name__)

FRAME_MASKED_INPUT = 0
FRAME_RECONSTRUCTION = 1
FRAME_DICT_ATLAS = 2
FRAME_GROUND_TRUTH = 3

DTYPE_U8 = 1
_HEADER = struct.Struct("<BBHIIII")

CONTROL_COMMANDS = ("set_sampling", "set_epochs", "pause", "resume",
                    "transfer_dict", "set_strategy")


def quantize_panel(panel: np.ndarray) -> np.ndarray:
    """Map a [0, 1] panel to uint8 for the wire; 3D tensors show slice 0."""
    panel = np.asarray(panel)
    if panel.ndim == 3:
        panel = panel[:, :, 0]
    if panel.ndim != 2:
        raise ValueError(f"wire panels must be 2D, got rank {panel.ndim}")
    return np.round(np.clip(panel, 0.0, 1.0) * 255.0).astype(np.uint8)


def pack_wireframe(
    frame_type: int, problem_id: int, frame_id: int, panel: np.ndarray
) -> bytes:
    data = panel if panel.dtype == np.uint8 else quantize_panel(panel)
    height, width = data.shape
    header = _HEADER.pack(frame_type, DTYPE_U8, problem_id, width, height, frame_id, 0)
    return header + data.tobytes()


def unpack_wireframe(message: bytes) -> tuple[dict, np.ndarray]:
    if len(message) < _HEADER.size:
        raise ValueError("wire frame shorter than its header")
    ftype, dtype, problem_id, width, height, frame_id, reserved = _HEADER.unpack_from(message)
    if dtype != DTYPE_U8:
        raise ValueError(f"unknown wire dtype {dtype}")
    payload = message[_HEADER.size:]
    if len(payload) != width * height:
        raise ValueError(f"wire payload is {len(payload)} bytes, expected {width * height}")
    header = {
        "type": ftype,
        "problem_id": problem_id,
        "width": width,
        "height": height,
        "frame_id": frame_id,
        "reserved": reserved,
    }
    return header, np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def render_dictionary_atlas(dictionary: Dictionary) -> np.ndarray:
    """Tile atoms into a square grid, brightest-use first.

    Atoms are min-max normalized independently (constant atoms render
    mid-grey), ordered by descending activation probability (ties by atom
    index), with 1-pixel mid-grey separators and mid-grey unused cells.
    """
    shape = dictionary.patch_shape
    k = dictionary.num_atoms
    atoms = dictionary.atoms.reshape((k,) + shape)
    if len(shape) == 3:
        atoms = atoms[:, :, :, 0]
    elif len(shape) == 1:
        atoms = atoms[:, None, :]
    elif len(shape) != 2:
        raise ValueError(f"cannot render atlas for patch rank {len(shape)}")

    b0, b1 = atoms.shape[1], atoms.shape[2]
    lo = atoms.min(axis=(1, 2), keepdims=True)
    hi = atoms.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span[:, 0, 0] == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        tiles = (atoms - lo) / span
    tiles[flat] = 0.5

    order = np.argsort(-dictionary.pi, kind="stable")
    grid = math.ceil(math.sqrt(k))
    canvas = np.full(
        (grid * b0 + grid - 1, grid * b1 + grid - 1), 0.5, dtype=np.float64
    )
    for slot, atom_idx in enumerate(order):
        r, c = divmod(slot, grid)
        y = r * (b0 + 1)
        x = c * (b1 + 1)
        canvas[y:y + b0, x:x + b1] = tiles[atom_idx]
    return canvas


# --- session serving ---------------------------------------------------------

class _Viewer:
    """Per-connection fan-out state."""

    def __init__(self):
        self.json_queue: asyncio.Queue[str] = asyncio.Queue()
        self.slots: dict[tuple[int, int], bytes] = {}
        self.dropped = 0
        self.dropped_reported = 0
        self.wake = asyncio.Event()

    def offer_frame(self, key: tuple[int, int], message: bytes) -> None:
        if key in self.slots:
            self.dropped += 1
        self.slots[key] = message
        self.wake.set()

    def offer_json(self, message: str) -> None:
        self.json_queue.put_nowait(message)
        self.wake.set()


class StreamServer:
    """Serves one live pipeline session to any number of viewers."""

    def __init__(
        self,
        pipeline: Pipeline,
        pairings: list[tuple[FrameSource, ProblemHandle]],
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.pipeline = pipeline
        self.pairings = pairings
        self.host = host
        self.port = port
        self.bound_port: int | None = None
        self.started = threading.Event()
        self._stop_async: asyncio.Event | None = None
        self._pipeline_stop = threading.Event()
        self._viewers: set[_Viewer] = set()
        self._loop: asyncio.AbstractEventLoop | None = None

    # -- pipeline side (worker threads) --

    def _sink(self, name: str, result: FrameResult) -> None:
        loop = self._loop
        if loop is None or loop.is_closed():
            return
        handle = self.pipeline.problem(name)
        messages = self._build_messages(handle, result)
        loop.call_soon_threadsafe(self._broadcast, messages)

    def _build_messages(
        self, handle: ProblemHandle, result: FrameResult
    ) -> tuple[list[tuple[tuple[int, int], bytes]], str]:
        pid = handle.problem_id
        fid = result.frame_id
        frames = [
            ((pid, FRAME_MASKED_INPUT),
             pack_wireframe(FRAME_MASKED_INPUT, pid, fid, result.masked_input)),
            ((pid, FRAME_RECONSTRUCTION),
             pack_wireframe(FRAME_RECONSTRUCTION, pid, fid, result.reconstruction)),
            ((pid, FRAME_DICT_ATLAS),
             pack_wireframe(FRAME_DICT_ATLAS, pid, fid,
                            render_dictionary_atlas(result.dictionary))),
        ]
        if result.ground_truth is not None:
            frames.append(
                ((pid, FRAME_GROUND_TRUTH),
                 pack_wireframe(FRAME_GROUND_TRUTH, pid, fid, result.ground_truth))
            )
        m = result.metrics
        if m.psnr_db is None:
            psnr_field = None
        elif math.isinf(m.psnr_db):
            psnr_field = "inf"
        else:
            psnr_field = round(m.psnr_db, 4)
        metrics_msg = json.dumps({
            "kind": "metrics",
            "problem": handle.name,
            "frame_id": fid,
            "psnr": psnr_field,
            "mse": m.mse,
            "sampling_ratio": m.sampling_ratio,
            "atoms_per_patch": round(m.atoms_per_patch, 4),
            "epoch_time_ms": round(m.epoch_time_ms, 3),
            "epochs_run": m.epochs_run,
        })
        return frames, metrics_msg

    def _broadcast(self, messages) -> None:
        frames, metrics_msg = messages
        for viewer in list(self._viewers):
            for key, payload in frames:
                viewer.offer_frame(key, payload)
            viewer.offer_json(metrics_msg)

    # -- viewer side (asyncio) --

    def _session_descriptor(self, viewer: _Viewer) -> str:
        problems = []
        for handle in self.pipeline.problems():
            cfg = handle.config
            problems.append({
                "name": handle.name,
                "id": handle.problem_id,
                "shape": list(handle.shape) if handle.shape else None,
                "num_atoms": cfg.hyperparams.num_atoms,
                "patch": list(cfg.patch_spec.patch_shape),
                "sampling_ratio": cfg.sampler_spec.ratio,
                "strategy": cfg.sampler_spec.kind,
                "epochs_per_frame": cfg.epochs_per_frame,
                "freeze_dict": cfg.freeze_dict,
                "paused": handle.paused,
                "frames_processed": handle.frames_processed,
            })
        viewer.dropped_reported = viewer.dropped
        return json.dumps({
            "kind": "session",
            "problems": problems,
            "strategies": strategy_names(),
            "dropped_frames": viewer.dropped,
        })

    async def _writer(self, websocket, viewer: _Viewer) -> None:
        last_refresh = 0.0
        while True:
            await viewer.wake.wait()
            viewer.wake.clear()
            while not viewer.json_queue.empty():
                await websocket.send(viewer.json_queue.get_nowait())
            while viewer.slots:
                key = next(iter(viewer.slots))
                await websocket.send(viewer.slots.pop(key))
            now = asyncio.get_running_loop().time()
            if viewer.dropped > viewer.dropped_reported and now - last_refresh > 1.0:
                await websocket.send(self._session_descriptor(viewer))
                last_refresh = now

    async def _reader(self, websocket, viewer: _Viewer) -> None:
        async for message in websocket:
            if isinstance(message, bytes):
                continue  # viewers only send text controls
            reply = self._handle_control(message, viewer)
            if reply is not None:
                viewer.offer_json(reply)

    def _handle_control(self, message: str, viewer: _Viewer) -> str | None:
        def error(text: str) -> str:
            return json.dumps({"kind": "error", "message": text})

        try:
            control = json.loads(message)
        except json.JSONDecodeError as exc:
            return error(f"malformed JSON: {exc}")
        if not isinstance(control, dict):
            return error("control must be a JSON object")
        cmd = control.get("cmd")
        if cmd not in CONTROL_COMMANDS:
            return error(f"unknown cmd {cmd!r}")
        name = control.get("problem")
        try:
            handle = self.pipeline.problem(name)
        except KeyError:
            return error(f"unknown problem {name!r}")
        value = control.get("value")

        loop = self._loop

        def ack(applied_at_frame: int) -> None:
            reply = json.dumps({
                "kind": "ack",
                "cmd": cmd,
                "problem": name,
                "applied_at_frame": applied_at_frame,
            })
            if loop is not None and not loop.is_closed():
                loop.call_soon_threadsafe(viewer.offer_json, reply)

        try:
            if cmd == "set_sampling":
                ratio = float(value)
                if not 0.0 <= ratio <= 1.0:
                    return error(f"sampling ratio {ratio} out of range")
                handle.enqueue_control("set_sampling", ratio, ack)
            elif cmd == "set_epochs":
                epochs = int(value)
                if epochs < 1:
                    return error("epochs must be >= 1")
                handle.enqueue_control("set_epochs", epochs, ack)
            elif cmd in ("pause", "resume"):
                handle.enqueue_control(cmd, None, ack)
            elif cmd == "set_strategy":
                if value not in strategy_names():
                    return error(f"unknown strategy {value!r}")
                handle.enqueue_control("set_strategy", value, ack)
            elif cmd == "transfer_dict":
                try:
                    src = self.pipeline.problem(value)
                except KeyError:
                    return error(f"unknown source problem {value!r}")
                if src is handle:
                    return error("cannot transfer a dictionary onto itself")
                snapshot = self.pipeline.snapshot_dictionary(src)
                if snapshot is None:
                    return error(f"problem {value!r} has no trained dictionary yet")
                handle.enqueue_control("install_dict", (snapshot, None), ack)
        except (TypeError, ValueError) as exc:
            return error(str(exc))
        return None

    async def _handler(self, websocket) -> None:
        viewer = _Viewer()
        self._viewers.add(viewer)
        try:
            await websocket.send(self._session_descriptor(viewer))
            reader = asyncio.create_task(self._reader(websocket, viewer))
            writer = asyncio.create_task(self._writer(websocket, viewer))
            done, pending = await asyncio.wait(
                {reader, writer}, return_when=asyncio.FIRST_COMPLETED
            )
            for task in pending:
                task.cancel()
            for task in done:
                exc = task.exception()
                if exc is not None and not isinstance(exc, _CLOSED_EXCEPTIONS):
                    raise exc
        except _CLOSED_EXCEPTIONS:
            pass
        finally:
            self._viewers.discard(viewer)

    async def run(self) -> None:
        """Serve until request_stop(); runs the pipeline in worker threads."""
        from websockets.asyncio.server import serve

        self._loop = asyncio.get_running_loop()
        self._stop_async = asyncio.Event()

        pump = threading.Thread(
            target=self._run_pipeline, name="patchbeam-pipeline", daemon=True
        )
        async with serve(self._handler, self.host, self.port) as server:
            self.bound_port = server.sockets[0].getsockname()[1]
            self.started.set()
            pump.start()
            try:
                await self._stop_async.wait()
            finally:
                self._pipeline_stop.set()
        pump.join(timeout=10.0)

    def _run_pipeline(self) -> None:
        try:
            summary = self.pipeline.run_live(
                self.pairings, self._sink, stop=self._pipeline_stop
            )
            logger.info("pipeline finished: %s", summary)
        except Exception:
            logger.exception("pipeline crashed")

    def request_stop(self) -> None:
        self._pipeline_stop.set()
        loop = self._loop
        if loop is not None and self._stop_async is not None and not loop.is_closed():
            loop.call_soon_threadsafe(self._stop_async.set)


def _closed_exceptions():
    import websockets.exceptions

    return (websockets.exceptions.ConnectionClosed, ConnectionError)


_CLOSED_EXCEPTIONS = _closed_exceptions()


def serve_forever(source, problem_configs, host: str, port: int) -> None:
    """Build a pipeline for the configs and serve it until interrupted."""
    pipeline = Pipeline()
    handles = [pipeline.create_problem(cfg) for cfg in problem_configs]
    pairings = [(source, handle) for handle in handles]
    server = StreamServer(pipeline, pairings, host=host, port=port)

    async def _main():
        await server.run()

    try:
        asyncio.run(_main())
    except KeyboardInterrupt:
        pass
