"""Command-line surface: inpaint, learn, transfer, bench, serve.

Exit codes: 0 success, 2 bad flags/arguments, 3 I/O or format errors,
4 inference divergence.  Engine modules are imported lazily so --threads
can size the worker pool before the compiler fixes it.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return dims


def _sizes(text: str) -> list[int]:
    return list(_dims(text))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchbeam",
        description="Masked dictionary-learning inpainting for tensors and live streams",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap engine worker threads (results are identical for any count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inpaint", help="reconstruct one subsampled tensor/image")
    p.add_argument("--input", required=True, help="input image (.pgm) or tensor (.satf)")
    p.add_argument("--out", required=True, help="output path (.pgm or .satf)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mask-ratio", type=float, default=None,
                       help="generate a uniform-random mask at this ratio")
    group.add_argument("--mask", default=None, help="mask file (.satf uint8, nonzero=observed)")
    p.add_argument("--sampler", default="uniform-random", help="mask strategy for --mask-ratio")
    p.add_argument("--patch", type=_dims, default=(10, 10), help="patch shape, e.g. 10,10")
    p.add_argument("--stride", type=_dims, default=None, help="patch stride, default all-1")
    p.add_argument("--atoms", type=int, default=64, help="dictionary truncation level")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dict-in", default=None, help="start from this dictionary file")
    p.add_argument("--freeze-dict", action="store_true", help="sparse-code only, atoms fixed")
    p.add_argument("--dict-out", default=None, help="write the final dictionary here")
    p.add_argument("--gt", default=None, help="ground truth for PSNR reporting")
    p.add_argument("--no-mean-subtract", action="store_true")
    p.add_argument("--no-data-consistency", action="store_true",
                   help="do not copy observed values into the output")
    p.add_argument("--init", choices=("data", "prior"), default="data")
    p.add_argument("--avg-last", type=int, default=1,
                   help="average the estimates of the last T epochs")
    p.add_argument("--metrics-csv", default=None, help="append a metrics row to this CSV")

    p = sub.add_parser("bench", help="time-to-solution scaling benchmark")
    p.add_argument("--sizes", type=_sizes, default=[128, 256, 512])
    p.add_argument("--atoms", type=int, default=64)
    p.add_argument("--patch", type=_dims, default=(10, 10))
    p.add_argument("--stride", type=_dims, default=None)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", nargs="*", default=None,
                   help="benchmark these images instead of synthetic textures")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("learn", help="learn a dictionary from a corpus of images")
    p.add_argument("--inputs", nargs="+", required=True, help="image/tensor files or a directory")
    p.add_argument("--out", required=True, help="dictionary output path")
    p.add_argument("--patch", type=_dims, default=(10, 10))
    p.add_argument("--stride", type=_dims, default=None)
    p.add_argument("--atoms", type=int, default=64)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-ratio", type=float, default=1.0)
    p.add_argument("--no-mean-subtract", action="store_true")

    p = sub.add_parser("transfer", help="re-shape a dictionary file for a new patch shape")
    p.add_argument("--dict-in", required=True)
    p.add_argument("--dict-out", required=True)
    p.add_argument("--patch", type=_dims, required=True, help="destination patch shape")

    p = sub.add_parser("serve", help="run the live reconstruction stream server")
    p.add_argument("--source", required=True, help="dir:PATH or synthetic[:HxW[:N]]")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", default=None, help="problem definitions (key = value sections)")
    p.add_argument("--fps", type=float, default=None, help="cap source frame rate")
    p.add_argument("--loop", action="store_true", help="cycle the source forever")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_thread_flag(argv: list[str]) -> int | None:
    """Honor --threads before anything imports the compiler."""
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return None
    try:
        value = max(1, int(threads))
    except ValueError:
        return None  # argparse will reject it with a usage error
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(value)
    return value


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    requested_threads = _apply_thread_flag(argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    from . import set_threads
    from .bpfa import DivergenceError
    from .formats import FormatError
    from .patches import ShapeError

    if requested_threads is not None:
        set_threads(requested_threads)

    try:
        if args.command == "inpaint":
            return cmd_inpaint(args)
        if args.command == "bench":
            return cmd_bench(args)
        if args.command == "learn":
            return cmd_learn(args)
        if args.command == "transfer":
            return cmd_transfer(args)
        if args.command == "serve":
            return cmd_serve(args)
        parser.error(f"unknown command {args.command!r}")
    except (FileNotFoundError, OSError, FormatError) as exc:
        print(f"patchbeam: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"patchbeam: inference diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, ShapeError) as exc:
        print(f"patchbeam: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


# --- helpers -----------------------------------------------------------------

def _read_input(path):
    from . import formats

    kind = formats.sniff_format(path)
    if kind == "pgm":
        return formats.read_image(path)
    if kind == "tensor":
        return formats.read_tensor(path)
    raise formats.FormatError(f"{path} is not an image or tensor file")


def _write_output(path, tensor, scale: float, offset: float) -> None:
    from . import formats

    path = str(path)
    if path.lower().endswith(".pgm"):
        formats.write_image(path, tensor)
    else:
        import numpy as np

        formats.write_tensor(path, (tensor * scale + offset).astype(np.float32))


def _normalize_observed(frame, mask):
    """Affine-map to [0, 1] using observed values only; identity if in range.

    Unobserved elements never influence the mapping, so outputs are
    invariant to whatever garbage they contain.
    """
    import numpy as np

    observed_vals = frame[mask]
    if observed_vals.size == 0:
        return frame, 1.0, 0.0
    lo = float(observed_vals.min())
    hi = float(observed_vals.max())
    if 0.0 <= lo and hi <= 1.0:
        return frame, 1.0, 0.0
    if hi == lo:
        return np.where(mask, 0.0, frame), 1.0, lo
    return (frame - lo) / (hi - lo), hi - lo, lo


def _load_mask(args, shape):
    import numpy as np

    from . import formats
    from .patches import ShapeError
    from .sampling import SamplerSpec, make_mask

    if args.mask is not None:
        raw = formats.read_tensor(args.mask)
        if tuple(raw.shape) != tuple(shape):
            raise ShapeError(f"mask shape {raw.shape} != input shape {shape}")
        return np.asarray(raw) != 0
    ratio = 1.0 if args.mask_ratio is None else args.mask_ratio
    return make_mask(SamplerSpec(kind=args.sampler, ratio=ratio, seed=args.seed), shape)


def _patch_spec(patch, stride):
    from .patches import PatchSpec

    return PatchSpec(tuple(patch), tuple(stride) if stride else ())


# --- commands ----------------------------------------------------------------

def cmd_inpaint(args) -> int:
    import numpy as np

    from . import bpfa, formats
    from .metrics import psnr
    from .patches import apply_data_consistency, extract_patches, reconstitute

    frame = _read_input(args.input)
    mask = _load_mask(args, frame.shape)
    frame, scale, offset = _normalize_observed(frame, mask)

    spec = _patch_spec(args.patch, args.stride)
    mean_subtract = (not args.no_mean_subtract) and len(spec.patch_shape) == 2
    pm = extract_patches(frame, mask, spec, mean_subtract=mean_subtract)

    initial = formats.read_dict(args.dict_in) if args.dict_in else None
    hp = bpfa.Hyperparams(num_atoms=args.atoms)
    started = time.perf_counter()
    state, estimates = bpfa.infer(
        pm, hp, epochs=args.epochs, seed=args.seed,
        freeze_dict=args.freeze_dict, initial_dict=initial,
        init_mode=args.init, average_last=args.avg_last,
    )
    wall_ms = (time.perf_counter() - started) * 1e3

    recon = reconstitute(pm, estimates)
    recon = apply_data_consistency(recon, frame, mask, enabled=not args.no_data_consistency)
    _write_output(args.out, recon, scale, offset)
    if args.dict_out:
        formats.write_dict(args.dict_out, state.dictionary)

    psnr_db = None
    if args.gt:
        gt = _read_input(args.gt)
        gt = (gt - offset) / scale if scale != 1.0 or offset != 0.0 else gt
        psnr_db = psnr(recon, gt)
        print(f"PSNR: {psnr_db:.2f} dB" if np.isfinite(psnr_db) else "PSNR: inf dB")

    if args.metrics_csv:
        _append_metrics_csv(args.metrics_csv, frame, mask, state, psnr_db, wall_ms, args.epochs)
    return EXIT_OK


def _append_metrics_csv(path, frame, mask, state, psnr_db, wall_ms, epochs) -> None:
    import csv
    import math
    import os

    from .metrics import model_stats

    atoms_per_patch, _, _, _ = model_stats(state)
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(
                ["frame_id", "psnr_db", "mse", "sampling_ratio",
                 "atoms_per_patch", "epoch_time_ms", "epochs_run"]
            )
        if psnr_db is None:
            psnr_field, mse_field = "", ""
        elif math.isinf(psnr_db):
            psnr_field, mse_field = "inf", "0"
        else:
            psnr_field = f"{psnr_db:.4f}"
            mse_field = f"{10 ** (-psnr_db / 10):.8g}"
        writer.writerow(
            [0, psnr_field, mse_field, f"{float(mask.mean()):.6f}",
             f"{atoms_per_patch:.4f}", f"{wall_ms / epochs:.3f}", state.epoch]
        )


def cmd_bench(args) -> int:
    from .bench import format_csv, run_bench

    stride = tuple(args.stride) if args.stride else (1,) * len(args.patch)
    images = None
    if args.images:
        images = [_read_input(p) for p in args.images]
        sizes = [img.shape[0] for img in images]
    else:
        sizes = args.sizes
    rows = run_bench(
        sizes,
        num_atoms=args.atoms,
        patch_shape=tuple(args.patch),
        stride=stride,
        epochs=args.epochs,
        repeats=args.repeats,
        ratio=args.ratio,
        seed=args.seed,
        images=images,
    )
    csv_text = format_csv(rows, args.atoms, tuple(args.patch), stride,
                          args.ratio, args.repeats, args.seed)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_learn(args) -> int:
    import numpy as np

    from . import bpfa, formats
    from .patches import PatchMatrix, extract_patches
    from .sampling import SamplerSpec, make_mask

    paths = []
    for entry_path in args.inputs:
        if os.path.isdir(entry_path):
            paths.extend(
                sorted(
                    os.path.join(entry_path, name)
                    for name in os.listdir(entry_path)
                    if name.lower().endswith((".pgm", ".satf"))
                )
            )
        else:
            paths.append(entry_path)
    if not paths:
        raise ValueError("no input images found")

    spec = _patch_spec(args.patch, args.stride)
    mean_subtract = (not args.no_mean_subtract) and len(spec.patch_shape) == 2
    parts = []
    for i, path in enumerate(paths):
        img = _read_input(path)
        mask = make_mask(SamplerSpec(ratio=args.mask_ratio, seed=args.seed + i), img.shape)
        parts.append(extract_patches(img, mask, spec, mean_subtract=mean_subtract))

    pm = PatchMatrix(
        values=np.concatenate([p.values for p in parts]),
        observed=np.concatenate([p.observed for p in parts]),
        origins=np.concatenate([p.origins for p in parts]),
        means=np.concatenate([p.means for p in parts]),
        tensor_shape=parts[0].tensor_shape,
        spec=spec,
        mean_subtracted=mean_subtract,
    )
    hp = bpfa.Hyperparams(num_atoms=args.atoms)
    state, _ = bpfa.infer(pm, hp, epochs=args.epochs, seed=args.seed)
    formats.write_dict(args.out, state.dictionary)
    print(f"learned {state.num_atoms} atoms from {len(paths)} images "
          f"({pm.num_patches} patches)")
    return EXIT_OK


def cmd_transfer(args) -> int:
    from . import bpfa, formats

    src = formats.read_dict(args.dict_in)
    moved = bpfa.transfer_dictionary(src, tuple(args.patch))
    formats.write_dict(args.dict_out, moved)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve_forever
    from .sources import open_source

    if not 0 <= args.port <= 65535:
        raise OSError(f"invalid port {args.port}")
    source = open_source(args.source, fps_cap=args.fps, loop=args.loop)
    problems = _load_problem_configs(args.config, args.seed)
    serve_forever(source, problems, host=args.host, port=args.port)
    return EXIT_OK


def _load_problem_configs(config_path, default_seed: int):
    import configparser

    from .bpfa import Hyperparams
    from .pipeline import ProblemConfig
    from .sampling import SamplerSpec

    if config_path is None:
        return [ProblemConfig(name="main", seed=default_seed)]

    cp = configparser.ConfigParser()
    read = cp.read(config_path)
    if not read:
        raise FileNotFoundError(f"config file {config_path} not found")

    def _bool(text: str) -> bool:
        return text.strip().lower() in ("1", "true", "yes", "on")

    configs = []
    for section in cp.sections():
        if not section.startswith("problem"):
            continue
        name = section.split(None, 1)[1] if " " in section else section
        opt = cp[section]
        patch = _dims(opt.get("patch", "10,10"))
        stride = _dims(opt["stride"]) if "stride" in opt else None
        mean_sub = opt.get("mean_subtract", "auto").strip().lower()
        configs.append(
            ProblemConfig(
                name=name,
                patch_spec=_patch_spec(patch, stride),
                hyperparams=Hyperparams(num_atoms=opt.getint("atoms", 64)),
                sampler_spec=SamplerSpec(
                    kind=opt.get("sampler", "uniform-random"),
                    ratio=opt.getfloat("ratio", 0.2),
                    seed=opt.getint("seed", default_seed),
                ),
                epochs_per_frame=opt.getint("epochs_per_frame", 2),
                freeze_dict=_bool(opt.get("freeze_dict", "false")),
                warm_start=_bool(opt.get("warm_start", "true")),
                data_consistency=_bool(opt.get("data_consistency", "false")),
                reference_available=_bool(opt.get("reference_available", "true")),
                mean_subtract=None if mean_sub == "auto" else _bool(mean_sub),
                init_mode=opt.get("init", "data"),
                seed=opt.getint("seed", default_seed),
            )
        )
    if not configs:
        raise ValueError(f"no [problem NAME] sections in {config_path}")
    return configs
