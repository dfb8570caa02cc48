"""Acceptance gate. Each test prints one ``CRITERION n: PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -s``; the lines are also
collected into the terminal summary.
"""

import io
import math
import time
import warnings
from contextlib import redirect_stdout

import numpy as np
import pytest

from gradcases import OP_CASES, smooth_model_checks, smooth_op_checks
from priornet import haze, metrics, model, scenes, training
from priornet.cli import main
from priornet.errors import NumericalAbort
from priornet.model import PriorNetConfig
from priornet.training import TrainConfig
from test_haze import dark_channel_oracle
from test_metrics import naive_ssim

GRAD_TOL = 1e-4
INSTANCES = 20

# desk-scale training corpus
CORPUS_SEED = 2024
N_TRAIN, N_TEST, SIZE = 20, 5, 64
ITERATIONS = 2000
ABLATION = ("full", "no_mia", "kernel3_only", "channel_attention_only")


def test_gradient_suite(acceptance_report):
    start = time.perf_counter()
    worst, short = {}, []
    for name in sorted(OP_CASES):
        accepted, _ = smooth_op_checks(name, INSTANCES)
        if len(accepted) < INSTANCES:
            short.append(name)
        worst[name] = max((max(e.values()) for e in accepted), default=math.inf)
    accepted, rejected = smooth_model_checks(INSTANCES)
    if len(accepted) < INSTANCES:
        short.append("network")
    worst["network"] = max((max(e.values()) for e in accepted), default=math.inf)
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = not short and worst[top] < GRAD_TOL and elapsed < 120
    acceptance_report(1, ok, f"{len(worst)} graphs x {INSTANCES} instances, worst rel err {worst[top]:.2e} "
                             f"({top}), network draws rejected for kinks {rejected}, {elapsed:.1f}s")
    assert not short, f"too few kink-free instances for {short}"
    assert worst[top] < GRAD_TOL, worst
    assert elapsed < 120


def test_physics_round_trip(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, checked = 0.0, 0
    for _ in range(100):
        J = rng.random((3, 32, 32))
        params = haze.HazeParams(A=rng.uniform(0.6, 1.0, 3), beta_scatter=1.0,
                                 t=rng.uniform(haze.T_FLOOR, 1.0, (32, 32)))
        b = rng.uniform(0.5, 1.5)
        I = haze.synthesize_haze(J, params)
        back = haze.restore(I, haze.ideal_K(I, params, b))
        mask = np.abs(I - 1) >= 1e-3
        worst = max(worst, float(np.abs(back - J)[mask].max()))
        checked += int(mask.sum())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 10
    acceptance_report(2, ok, f"100 cases, {checked} pixels, max |J' - J| = {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-5
    assert elapsed < 10


def test_parameter_budget(acceptance_report, tmp_path):
    path = tmp_path / "default.bin"
    size = model.save_weights(model.build(), path)
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(["info", "--weights", str(path)])
    info = dict(line.split(": ", 1) for line in buf.getvalue().splitlines())
    ok = (code == 0 and 9216 <= size <= 36864 and info["parameters"] == "2781"
          and info["payload_bytes"] == "11124" and int(info["file_bytes"]) == size)
    acceptance_report(3, ok, f"file {size} bytes, info reports {info['parameters']} parameters / "
                             f"{info['payload_bytes']} payload bytes")
    assert ok


_TRAINED: dict[str, dict] = {}


def _corpus():
    pairs = scenes.make_corpus(CORPUS_SEED, N_TRAIN + N_TEST, SIZE, (0.7, 1.0), (0.6, 1.8))
    train = [(p.hazy, p.clean) for p in pairs[:N_TRAIN]]
    test = [(p.hazy, p.clean) for p in pairs[N_TRAIN:]]
    return train, test


def trained(variant):
    """Train one variant under the desk-scale conditions (cached per session)."""
    if variant not in _TRAINED:
        train, test = _corpus()
        w = model.build(PriorNetConfig(variant=variant), seed=0)
        cfg = TrainConfig(iterations=ITERATIONS, perceptual_enabled=False, seed=0)
        start = time.perf_counter()
        entry = {"mse_before": training.dataset_mse(w, train)}
        try:
            w = training.train(w, train, cfg).weights
            entry["aborted"] = None
        except NumericalAbort as exc:
            entry["aborted"] = str(exc)
        entry["seconds"] = time.perf_counter() - start
        entry["mse_after"] = training.dataset_mse(w, train)
        entry["psnr_hazy"] = float(np.mean([metrics.psnr(h, c) for h, c in test]))
        entry["psnr_dehazed"] = float(np.mean([metrics.psnr(model.dehaze(w, h), c) for h, c in test]))
        _TRAINED[variant] = entry
    return _TRAINED[variant]


@pytest.mark.slow
def test_desk_scale_training(acceptance_report):
    r = trained("full")
    ratio = r["mse_after"] / r["mse_before"]
    gain = r["psnr_dehazed"] - r["psnr_hazy"]
    ok = r["aborted"] is None and ratio < 0.5 and gain >= 2.0 and r["seconds"] < 900
    acceptance_report(4, ok, f"train mse {r['mse_before']:.4f} -> {r['mse_after']:.4f} (x{ratio:.3f}), held-out "
                             f"PSNR {r['psnr_hazy']:.2f} -> {r['psnr_dehazed']:.2f} dB (+{gain:.2f}), "
                             f"{r['seconds']:.0f}s")
    assert r["aborted"] is None, r["aborted"]
    assert ratio < 0.5
    assert gain >= 2.0
    assert r["seconds"] < 900


@pytest.mark.slow
def test_ablation_harness(acceptance_report):
    results = {v: trained(v) for v in ABLATION}
    aborted = {v: r["aborted"] for v, r in results.items() if r["aborted"]}
    psnr = {v: r["psnr_dehazed"] for v, r in results.items()}
    soft = []
    if psnr["full"] < psnr["no_mia"]:
        soft.append("full < no_mia")
    if psnr["no_mia"] < psnr["kernel3_only"]:
        soft.append("5x5 < 3x3")
    for msg in soft:
        warnings.warn(f"ablation ordering not reproduced at desk scale: {msg}")
    ok = not aborted and all(math.isfinite(p) for p in psnr.values())
    table = ", ".join(f"{v} {p:.2f}" for v, p in psnr.items())
    acceptance_report(5, ok, f"PSNR dB: {table}; ordering {'as expected' if not soft else 'WARN ' + '; '.join(soft)}")
    assert not aborted, aborted


def test_dcp_baseline(acceptance_report):
    rng = np.random.default_rng(99)
    improved = 0
    for _ in range(10):
        clean, _ = scenes.make_scene(rng, 64, 64)
        hazy, _ = scenes.uniform_haze(clean, t=0.6, A=0.9)
        improved += metrics.psnr(haze.dcp_dehaze(hazy), clean) > metrics.psnr(hazy, clean)
    mismatches = 0
    for _ in range(100):
        img = rng.random((3, 8, 8))
        mismatches += not np.array_equal(haze.dark_channel(img), dark_channel_oracle(img, 15))
    ok = improved >= 8 and mismatches == 0
    acceptance_report(6, ok, f"DCP improved {improved}/10 images; dark channel mismatches {mismatches}/100")
    assert improved >= 8
    assert mismatches == 0


def test_metrics_oracle(acceptance_report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        a = rng.random((3, 16, 16))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), 0, 1)
        worst = max(worst, abs(metrics.ssim(a, b) - naive_ssim(a, b)))
    zeros = np.zeros((3, 8, 8))
    cases = [(0.1, 20.0), (0.01, 40.0), (1.0, 0.0), (0.5, 10 * math.log10(4))]
    psnr_err = max(abs(metrics.psnr(zeros, zeros + d) - expect) for d, expect in cases)
    ok = worst <= 1e-6 and psnr_err <= 1e-9
    acceptance_report(7, ok, f"ssim max |diff| {worst:.2e} over 50 pairs; psnr closed-form max err {psnr_err:.1e}")
    assert worst <= 1e-6
    assert psnr_err <= 1e-9


def _cli_run(root, scene_dir):
    root.mkdir()
    cfg = root / "run.cfg"
    cfg.write_text("iterations = 10\nseed = 3\n")
    m = str(root / "hazy" / "manifest.tsv")
    steps = {
        "synth": ["synth", "--manifest", str(scene_dir / "manifest.tsv"), "--config", str(cfg),
                  "--out", str(root / "hazy")],
        "train": ["train", "--manifest", m, "--config", str(cfg), "--out", str(root / "train" / "w.bin")],
        "dehaze": ["dehaze", "--weights", str(root / "train" / "w.bin"), "--manifest", m,
                   "--out-dir", str(root / "dehaze")],
        "eval": ["eval", "--weights", str(root / "train" / "w.bin"), "--manifest", m,
                 "--report", str(root / "eval" / "report.csv"), "--out-dir", str(root / "eval" / "images")],
    }
    (root / "train").mkdir()
    (root / "eval").mkdir()
    outputs = {}
    for name, argv in steps.items():
        with redirect_stdout(io.StringIO()):
            assert main(argv) == 0, name
        base = root / name if name != "synth" else root / "hazy"
        outputs[name] = {p.relative_to(base): p.read_bytes() for p in sorted(base.rglob("*")) if p.is_file()}
    return outputs


def test_determinism(acceptance_report, tmp_path):
    scene_dir = tmp_path / "scenes"
    with redirect_stdout(io.StringIO()):
        assert main(["scenes", "--out", str(scene_dir), "--count", "4", "--size", "32", "--seed", "8"]) == 0
    first = _cli_run(tmp_path / "one", scene_dir)
    second = _cli_run(tmp_path / "two", scene_dir)
    same = {name: bool(first[name]) and first[name] == second[name] for name in first}
    ok = all(same.values())
    counts = ", ".join(f"{n} {len(first[n])} files {'identical' if s else 'DIFFER'}" for n, s in same.items())
    acceptance_report(8, ok, counts)
    assert ok, same
