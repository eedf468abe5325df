"""Acceptance suite: one test per release criterion, run at the stated
scales and tolerances.  Each prints an ACCEPTANCE line on success (visible
with -s); the test name carries the criterion number for -v output.

Run:  pytest tests/test_acceptance.py -v -s
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from patchbeam import bpfa
from patchbeam.bpfa import Dictionary, Hyperparams
from patchbeam.cli import main
from patchbeam.formats import (
    read_dict,
    read_image,
    read_tensor,
    write_dict,
    write_image,
    write_tensor,
)
from patchbeam.metrics import psnr
from patchbeam.patches import PatchSpec, apply_data_consistency, extract_patches, reconstitute
from patchbeam.rng import DOMAIN_CODE, keyed_rng
from patchbeam.sampling import SamplerSpec, make_mask
from patchbeam.sources import synthetic_texture

import oracles
from conftest import random_state
from test_bpfa import tiny_instance


def _pass(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE {criterion} PASS - {message}")


def _run_cli(args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run(
        [sys.executable, "-m", "patchbeam", *args],
        capture_output=True, text=True, env=env, timeout=560,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


def test_criterion_1_conditional_update_oracle_equivalence():
    started = time.perf_counter()
    checked = 0
    for trial in range(200):
        pm, hp, state = tiny_instance(5000 + trial)
        X, O = pm.values, pm.observed
        Z, S = state.usage, state.weights
        D = state.dictionary.atoms

        def close(got, want):
            got = np.atleast_1d(np.asarray(got, dtype=np.float64))
            want = np.atleast_1d(np.asarray(want, dtype=np.float64))
            err = np.abs(got - want) / np.maximum(1.0, np.abs(want))
            assert err.max() <= 1e-12, err.max()

        for k in range(state.num_atoms):
            lam, mu = bpfa.atom_posterior(pm, state, k)
            o_lam, o_mu = oracles.atom_params(X, O, Z, S, D, k, state.noise_precision)
            close(lam, o_lam)
            close(mu, o_mu)
            log_rho, alpha, mean = bpfa.code_posterior(pm, state, k)
            o_rho, o_alpha, o_mean = oracles.code_params(
                X, O, Z, S, D, k, float(state.dictionary.pi[k]),
                state.weight_precision, state.noise_precision,
            )
            close(log_rho, o_rho)
            close(alpha, o_alpha)
            close(mean, o_mean)
            checked += 1
        a_got, b_got = bpfa.pi_posterior(state, hp)
        a_want, b_want = oracles.pi_params(
            Z, hp.concentration_a, hp.concentration_b, state.num_atoms)
        close(a_got, a_want)
        close(b_got, b_want)
        w_got, n_got = bpfa.gamma_posteriors(pm, state, hp)
        w_want, n_want = oracles.gamma_params(
            X, O, Z, S, D, hp.weight_shape, hp.weight_rate,
            hp.noise_shape, hp.noise_rate)
        close(w_got, w_want)
        close(n_got, n_want)
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"took {elapsed:.1f}s"
    _pass(1, f"200 instances, {checked} atom conditionals, rel err <= 1e-12 "
             f"in {elapsed:.2f}s")


def test_criterion_2_masked_update_invariance_cli(tmp_path, camera_image):
    started = time.perf_counter()
    truth = camera_image[128:192, 128:192]
    mask = make_mask(SamplerSpec(ratio=0.3, seed=17), truth.shape)
    mask_path = tmp_path / "mask.satf"
    write_tensor(mask_path, mask.astype(np.uint8))

    rng = np.random.default_rng(99)
    outputs = set()
    for trial in range(10):
        noisy = truth.copy()
        noisy[~mask] = rng.random(int((~mask).sum()))
        src = tmp_path / "in.pgm"
        write_image(src, noisy)
        out = tmp_path / "out.satf"
        rc = main(["inpaint", "--input", str(src), "--out", str(out),
                   "--mask", str(mask_path), "--patch", "6,6", "--atoms", "16",
                   "--epochs", "5", "--seed", "23"])
        assert rc == 0
        outputs.add(out.read_bytes())
    elapsed = time.perf_counter() - started
    assert len(outputs) == 1, "outputs differ across unobserved-value randomizations"
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    _pass(2, f"10 trials bit-identical (64x64, ratio 0.3) in {elapsed:.1f}s")


def test_criterion_3_determinism_across_parallelism(tmp_path, camera_image):
    started = time.perf_counter()
    src = tmp_path / "in.pgm"
    write_image(src, camera_image[:256:2, :256:2])  # 128x128
    results = {}
    for threads in (1, 8):
        out = tmp_path / f"out{threads}.satf"
        dict_out = tmp_path / f"dict{threads}.sadf"
        _run_cli([
            "--threads", str(threads), "inpaint",
            "--input", str(src), "--out", str(out),
            "--mask-ratio", "0.3", "--patch", "8,8", "--atoms", "32",
            "--epochs", "5", "--seed", "31", "--dict-out", str(dict_out),
        ])
        results[threads] = (out.read_bytes(), dict_out.read_bytes())
    elapsed = time.perf_counter() - started
    assert results[1][0] == results[8][0], "reconstructions differ across thread counts"
    assert results[1][1] == results[8][1], "dictionaries differ across thread counts"
    assert elapsed < 120.0, f"took {elapsed:.1f}s"
    _pass(3, f"--threads 1 vs 8 bit-identical (128x128, K=32, 5 epochs) "
             f"in {elapsed:.1f}s")


def test_criterion_4_inpainting_quality(camera_image):
    started = time.perf_counter()
    truth = np.round(camera_image[::2, ::2] * 255) / 255  # 256x256
    mask = make_mask(SamplerSpec(ratio=0.3, seed=1), truth.shape)
    pm = extract_patches(truth, mask, PatchSpec((10, 10), (1, 1)), mean_subtract=True)
    state, est = bpfa.infer(pm, Hyperparams(num_atoms=64), epochs=20, seed=2)
    recon = apply_data_consistency(reconstitute(pm, est), truth, mask, enabled=True)
    model_psnr = psnr(recon, truth)

    fill = oracles.mean_fill_estimates(pm.values, pm.observed)
    filled, _ = oracles.overlap_average(
        pm.origins, (10, 10), fill + pm.means[:, None], truth.shape)
    base_psnr = psnr(filled, truth)

    elapsed = time.perf_counter() - started
    assert model_psnr >= base_psnr + 3.0, (model_psnr, base_psnr)
    assert model_psnr > 24.0, model_psnr
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    _pass(4, f"256x256 ratio 0.3: {model_psnr:.2f} dB vs mean-fill "
             f"{base_psnr:.2f} dB (margin {model_psnr - base_psnr:+.2f}) "
             f"in {elapsed:.0f}s")


def test_criterion_5_bench_protocol_and_scaling(tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--sizes", "128,256,512", "--atoms", "64",
               "--patch", "10,10", "--epochs", "2", "--repeats", "1",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[1] == "size,patches,epochs,wall_ms,throughput_patches_per_s"
    rows = {int(r[0]): r for r in (line.split(",") for line in lines[2:])}
    assert set(rows) == {128, 256, 512}
    assert all(int(rows[s][2]) == 2 for s in rows)
    assert int(rows[512][1]) == 503 ** 2
    ratio = float(rows[512][3]) / float(rows[256][3])
    assert ratio <= 6.0, f"wall_ms(512)/wall_ms(256) = {ratio:.2f}"
    _pass(5, f"CSV emitted; wall(512)/wall(256) = {ratio:.2f} <= 6.0 "
             f"(patch-count ratio 4.15)")


def test_criterion_6_z_marginal_statistics():
    started = time.perf_counter()
    rng = np.random.default_rng(5)
    img = rng.random((2, 2))
    pm = extract_patches(img, np.ones((2, 2), bool), PatchSpec((2, 2)))
    hp = Hyperparams(num_atoms=1)

    def fixed_state():
        state = bpfa.init_state(pm, hp, seed=0, init_mode="prior")
        state.dictionary.atoms[0] = np.array([0.6, -0.2, 0.4, 0.1])
        state.dictionary.pi[:] = 0.35
        state.usage[0, 0] = True
        state.weights[0, 0] = 0.8
        state.noise_precision = 5.0
        state.weight_precision = 2.0
        return state

    log_rho, _, _ = bpfa.code_posterior(pm, fixed_state(), 0)
    p_one = 1.0 / (1.0 + math.exp(-float(log_rho[0])))
    draws = 20000
    hits = 0
    for t in range(draws):
        state = fixed_state()
        resid = bpfa._residual(pm, state)
        bpfa._sample_codes_for_atom(resid, pm, state, 0,
                                    keyed_rng(7, DOMAIN_CODE, t, 0))
        hits += int(state.usage[0, 0])
    freq = hits / draws
    sigma = math.sqrt(p_one * (1.0 - p_one) / draws)
    elapsed = time.perf_counter() - started
    assert abs(freq - p_one) <= 3.0 * sigma, (freq, p_one, sigma)
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _pass(6, f"z-marginal {freq:.4f} vs analytic {p_one:.4f} "
             f"(3 sigma = {3 * sigma:.4f}) in {elapsed:.1f}s")


def test_criterion_7_roundtrips_and_corruption(tmp_path):
    rng = np.random.default_rng(11)

    # extract -> reconstitute identity (bitwise for representable values)
    for _ in range(25):
        shape = tuple(int(rng.integers(4, 10)) for _ in range(int(rng.integers(1, 4))))
        patch = tuple(int(rng.integers(1, m + 1)) for m in shape)
        t = rng.integers(0, 256, size=shape).astype(np.float64)
        pm = extract_patches(t, np.ones(shape, bool), PatchSpec(patch))
        rec = reconstitute(pm, pm.values)
        assert np.array_equal(rec, t)

    # serialize/deserialize identity, 1000 instances per format
    for i in range(1000):
        arr = rng.standard_normal(
            tuple(int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 5))))
        ).astype(np.float32)
        path = tmp_path / "t.satf"
        write_tensor(path, arr)
        assert np.array_equal(read_tensor(path).astype(np.float32), arr)

        k = int(rng.integers(1, 7))
        pshape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
        d = Dictionary(
            atoms=rng.standard_normal((k, int(np.prod(pshape))))
            .astype(np.float32).astype(np.float64),
            pi=rng.uniform(0.01, 0.99, k).astype(np.float32).astype(np.float64),
            patch_shape=pshape,
        )
        dpath = tmp_path / "d.sadf"
        write_dict(dpath, d)
        back = read_dict(dpath)
        assert np.array_equal(back.atoms, d.atoms)
        assert np.array_equal(back.pi, d.pi)

        img = rng.integers(0, 256, size=(int(rng.integers(1, 9)),
                                         int(rng.integers(1, 9))), dtype=np.uint8)
        ipath = tmp_path / "i.pgm"
        write_image(ipath, img)
        assert np.array_equal(
            np.round(read_image(ipath) * 255).astype(np.uint8), img)

    # every header-byte corruption rejected
    from patchbeam.formats import FormatError

    checked = 0
    for trial in range(10):
        arr = rng.standard_normal((3, 4)).astype(np.float32)
        path = tmp_path / "h.satf"
        write_tensor(path, arr)
        blob = bytearray(path.read_bytes())
        header_len = 4 + 4 + 4 + 4 * 2 + 4
        for pos in range(header_len):
            for flip in (0x01, 0x80, 0xFF):
                corrupted = bytearray(blob)
                corrupted[pos] ^= flip
                target = tmp_path / "hc.satf"
                target.write_bytes(bytes(corrupted))
                with pytest.raises(FormatError):
                    read_tensor(target)
                checked += 1

        d = Dictionary(rng.standard_normal((2, 6)), rng.uniform(0.1, 0.9, 2), (2, 3))
        dpath = tmp_path / "h.sadf"
        write_dict(dpath, d)
        blob = bytearray(dpath.read_bytes())
        header_len = 4 + 4 + 4 + 4 + 4 * 2 + 4
        for pos in range(header_len):
            for flip in (0x01, 0x80, 0xFF):
                corrupted = bytearray(blob)
                corrupted[pos] ^= flip
                target = tmp_path / "hc.sadf"
                target.write_bytes(bytes(corrupted))
                with pytest.raises(FormatError):
                    read_dict(target)
                checked += 1
    _pass(7, f"1000 roundtrips per format; {checked} header corruptions rejected")


def test_criterion_8_dictionary_transfer(camera_image):
    truth = camera_image[64:160, 64:160]  # 96x96
    mask = make_mask(SamplerSpec(ratio=0.3, seed=41), truth.shape)
    pm = extract_patches(truth, mask, PatchSpec((8, 8)), mean_subtract=True)
    hp = Hyperparams(num_atoms=32)

    state, est = bpfa.infer(pm, hp, epochs=15, seed=42)
    unfrozen = psnr(
        apply_data_consistency(reconstitute(pm, est), truth, mask, True), truth)

    frozen_state, est = bpfa.infer(
        pm, hp, epochs=15, seed=43, freeze_dict=True,
        initial_dict=state.dictionary)
    frozen = psnr(
        apply_data_consistency(reconstitute(pm, est), truth, mask, True), truth)
    assert np.array_equal(frozen_state.dictionary.atoms, state.dictionary.atoms)
    assert abs(frozen - unfrozen) <= 1.0, (frozen, unfrozen)

    # single-channel -> spanning-channel tiling rule, exact
    src = Dictionary(
        atoms=np.random.default_rng(3).standard_normal((4, 25)),
        pi=np.random.default_rng(4).uniform(0.1, 0.9, 4),
        patch_shape=(5, 5),
    )
    moved = bpfa.transfer_dictionary(src, (5, 5, 3), dst_tensor_shape=(20, 20, 3))
    tiled = moved.atoms.reshape(4, 5, 5, 3)
    for c in range(3):
        expected = src.atoms.reshape(4, 5, 5) / (
            np.linalg.norm(src.atoms, axis=1, keepdims=True)[:, :, None]
            * math.sqrt(3))
        assert np.allclose(tiled[:, :, :, c], expected, rtol=0, atol=1e-15)
    assert np.array_equal(moved.pi, src.pi)
    _pass(8, f"frozen sparse coding {frozen:.2f} dB within 1 dB of unfrozen "
             f"{unfrozen:.2f} dB; channel tiling exact")


def test_criterion_9_live_pipeline_contract(tmp_path):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    for i in range(10):
        write_image(frames_dir / f"f{i:02d}.pgm",
                    synthetic_texture((32, 32), seed=2, phase=0.2 * i))
    cfg = tmp_path / "session.cfg"
    cfg.write_text(
        "[problem demo]\npatch = 6,6\natoms = 8\nratio = 0.3\n"
        "epochs_per_frame = 1\nseed = 5\n")

    import socket

    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]

    proc = subprocess.Popen(
        [sys.executable, "-m", "patchbeam", "serve",
         "--source", f"dir:{frames_dir}", "--port", str(port),
         "--config", str(cfg), "--fps", "20", "--loop"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    try:
        import asyncio

        from websockets.asyncio.client import connect

        async def scripted_client():
            for attempt in range(60):
                try:
                    ws = await connect(f"ws://127.0.0.1:{port}")
                    break
                except OSError:
                    await asyncio.sleep(0.25)
            else:
                raise AssertionError("server did not come up")
            messages = []
            async with ws:
                first = await asyncio.wait_for(ws.recv(), 15)
                descriptor = json.loads(first)
                assert descriptor["kind"] == "session"
                assert len(descriptor["problems"]) >= 1
                await ws.send(json.dumps(
                    {"cmd": "set_sampling", "problem": "demo", "value": 0.5}))
                while len(messages) < 120:
                    msg = await asyncio.wait_for(ws.recv(), 15)
                    messages.append(msg)
            return descriptor, messages

        descriptor, messages = asyncio.run(scripted_client())
    finally:
        proc.terminate()
        proc.wait(timeout=15)

    from patchbeam.server import unpack_wireframe

    acks = []
    metrics = {}
    per_type_ids = {}
    for msg in messages:
        if isinstance(msg, bytes):
            header, _ = unpack_wireframe(msg)
            per_type_ids.setdefault(
                (header["problem_id"], header["type"]), []).append(header["frame_id"])
        else:
            decoded = json.loads(msg)
            if decoded["kind"] == "ack":
                acks.append(decoded)
            elif decoded["kind"] == "metrics":
                metrics[decoded["frame_id"]] = decoded

    assert len(acks) == 1
    applied = acks[0]["applied_at_frame"]
    assert acks[0]["cmd"] == "set_sampling"
    for key, ids in per_type_ids.items():
        assert all(b > a for a, b in zip(ids, ids[1:])), (key, ids)
    assert len(per_type_ids) >= 4
    assert metrics[applied]["sampling_ratio"] == pytest.approx(0.5, abs=0.01)
    _pass(9, f"descriptor ok; {sum(len(v) for v in per_type_ids.values())} frames "
             f"strictly ordered; 1 ack applied at frame {applied}; "
             f"ratio effect visible")
