"""Acceptance suite: every criterion at its stated tolerance.

Desk-scale experiments are defined by the JSON files in ``configs/desk`` and
cached under ``runs/``; a run is reused only when its stored config matches
exactly (see ``coopreg.experiments.cached_run``). A cold cache trains every
experiment, which takes a few hours on one CPU core.

Each criterion prints one ``PASS``/``FAIL`` line (use ``pytest -s`` to see
them live; a summary is also written to ``runs/acceptance.txt``).
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest
import torch

from coopreg.experiments import (
    ExperimentSpec,
    cached_run,
    emit_report,
    latent_sweep,
    load_dataset_for,
    read_eval_csv,
    run_experiment,
    sweep_monotonicity,
    write_sweep_csv,
)
from coopreg.fields import warp_image
from coopreg.metrics import posthoc_ae_fit, predict_fields
from coopreg.networks import PrimaryConfig, init_primary
from coopreg.objectives import ObjectiveWeights, total_objective
from coopreg.training import TrainHistory, load_checkpoint

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs" / "desk"
LEDGER = ROOT / "runs" / "acceptance.txt"
_lines: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    print(line)
    _lines.append(line)
    LEDGER.parent.mkdir(parents=True, exist_ok=True)
    LEDGER.write_text("\n".join(_lines) + "\n")
    return ok


def load_spec(name: str) -> ExperimentSpec:
    spec = ExperimentSpec.from_json(CONFIGS / f"{name}.json")
    d = spec.to_dict()
    # configs store repo-relative paths
    d["output_dir"] = str(ROOT / spec.output_dir)
    if spec.cache_dir:
        d["cache_dir"] = str(ROOT / spec.cache_dir)
    return ExperimentSpec.from_dict(d)


@pytest.fixture(scope="module")
def runs():
    names = [f"{fam}_{m}" for fam in ("linear", "rotating") for m in ("cae", "undr", "noskip")]
    out = {}
    for name in names:
        spec = load_spec(name)
        start = time.perf_counter()
        row = cached_run(spec)
        print(f"  {name}: {row}  ({time.perf_counter() - start:.0f}s)")
        out[name] = (spec, row)
    emit_report([row for _, row in out.values()], ROOT / "runs" / "report.csv")
    return out


# 1 -----------------------------------------------------------------------

def _naive_warp(img, phi):
    h, w = img.shape
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            r = min(max(i + phi[i, j, 0], 0.0), h - 1.0)
            c = min(max(j + phi[i, j, 1], 0.0), w - 1.0)
            r0, c0 = min(int(np.floor(r)), h - 2), min(int(np.floor(c)), w - 2)
            fr, fc = r - r0, c - c0
            out[i, j] = ((1 - fr) * (1 - fc) * img[r0, c0] + (1 - fr) * fc * img[r0, c0 + 1]
                         + fr * (1 - fc) * img[r0 + 1, c0] + fr * fc * img[r0 + 1, c0 + 1])
    return out


def _off_grid(rng, shape, margin=1e-3):
    # displacements whose sample points stay >= margin away from pixel centers
    phi = rng.uniform(-2.5, 2.5, shape)
    frac = phi - np.floor(phi)
    return np.where(frac < margin, phi + 2 * margin, np.where(frac > 1 - margin, phi - 2 * margin, phi))


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_1_warp_and_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_oracle = 0.0
    for _ in range(20):
        img, phi = rng.random((8, 8)), rng.uniform(-3, 3, (8, 8, 2))
        worst_oracle = max(worst_oracle, np.abs(warp_image(img, phi) - _naive_warp(img, phi)).max())

    worst_fd = 0.0
    eps = 1e-5
    for _ in range(10):
        img = torch.from_numpy(rng.random((8, 8)))
        phi = torch.from_numpy(_off_grid(rng, (8, 8, 2))).requires_grad_(True)
        tgt = torch.from_numpy(rng.random((8, 8)))
        direction = torch.from_numpy(rng.standard_normal((8, 8, 2)))

        def loss(p):
            return total_objective(tgt, warp_image(img, p), p, None, ObjectiveWeights(0.3)).total

        loss(phi).backward()
        analytic = float((phi.grad * direction).sum())
        with torch.no_grad():
            numeric = float(loss(phi + eps * direction) - loss(phi - eps * direction)) / (2 * eps)
        worst_fd = max(worst_fd, _rel(analytic, numeric))

    # network parameters, tiny double-precision U-Net
    torch.manual_seed(0)
    net = init_primary(PrimaryConfig(levels=2, base_channels=2), 0, image_size=8).double()
    torch.nn.init.normal_(net.head.weight, std=0.05)
    torch.nn.init.constant_(net.head.bias, 0.37)
    s, t = torch.from_numpy(rng.random((2, 8, 8))), torch.from_numpy(rng.random((2, 8, 8)))
    params = list(net.parameters())
    direction = [torch.randn_like(p) for p in params]

    def net_loss():
        phi = net(s, t)
        return total_objective(t, warp_image(s, phi), phi, None, ObjectiveWeights(0.3)).total

    net.zero_grad()
    net_loss().backward()
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, direction))
    vals = []
    for sign in (1, -1):
        with torch.no_grad():
            for p, d in zip(params, direction):
                p.add_(sign * eps * d)
            vals.append(float(net_loss()))
            for p, d in zip(params, direction):
                p.sub_(sign * eps * d)
    worst_fd = max(worst_fd, _rel(analytic, (vals[0] - vals[1]) / (2 * eps)))

    elapsed = time.perf_counter() - start
    ok = worst_oracle <= 1e-12 and worst_fd <= 1e-4 and elapsed < 60
    assert report("1 warp/gradient suite", ok,
                  f"oracle max|diff|={worst_oracle:.2e} (<=1e-12), worst FD rel err={worst_fd:.2e} "
                  f"(<=1e-4), {elapsed:.1f}s (<60s)")


# 2 -----------------------------------------------------------------------

def test_2_linear_dice(runs):
    cae, undr = runs["linear_cae"][1], runs["linear_undr"][1]
    ok = cae.dice >= 0.92 and undr.dice >= 0.92
    assert report("2 linear Dice", ok, f"{cae.method} {cae.dice:.4f}, UnDR {undr.dice:.4f} (both >=0.92)")


# 3 -----------------------------------------------------------------------

@pytest.mark.parametrize("family", ["linear", "rotating"])
def test_3_landmark_separation(runs, family):
    cae, undr = runs[f"{family}_cae"][1], runs[f"{family}_undr"][1]
    ratio = cae.landmark_error_pct / undr.landmark_error_pct
    ok = ratio <= 0.5
    assert report(f"3 landmark separation ({family})", ok,
                  f"CAE {cae.landmark_error_pct:.2f}% vs UnDR {undr.landmark_error_pct:.2f}%, "
                  f"ratio {ratio:.3f} (<=0.5)")


# 4 -----------------------------------------------------------------------

def test_4_manifold_compactness(runs):
    cae, undr = runs["linear_cae"][1], runs["linear_undr"][1]
    ok = cae.ae_error_pct <= 20.0 and undr.ae_error_pct >= 40.0
    assert report("4 manifold compactness (linear)", ok,
                  f"CAE AE {cae.ae_error_pct:.2f}% (<=20), post-hoc h=1 on UnDR "
                  f"{undr.ae_error_pct:.2f}% (>=40)")


# 5 -----------------------------------------------------------------------

@pytest.mark.parametrize("family", ["linear", "rotating"])
def test_5_noskip_ablation(runs, family):
    spec, noskip = runs[f"{family}_noskip"]
    cae = runs[f"{family}_cae"][1]
    model = load_checkpoint(Path(spec.output_dir) / "checkpoint")
    finished = model.iterations == spec.train.total_iterations
    ok = finished and noskip.dice < cae.dice
    assert report(f"5 no-skip ablation ({family})", ok,
                  f"trained {model.iterations}/{spec.train.total_iterations} it, Dice "
                  f"{noskip.dice:.4f} < CAE {cae.dice:.4f}")


# 6 -----------------------------------------------------------------------

@pytest.mark.parametrize("family", ["linear", "rotating"])
def test_6_latent_monotonicity(runs, family):
    spec = runs[f"{family}_cae"][0]
    out = Path(spec.output_dir)
    model = load_checkpoint(out / "checkpoint")
    rows = latent_sweep(model, family, 100, figure_path=out / "figures" / "sweep.png")
    write_sweep_csv(rows, out / "figures" / "sweep.csv")
    rho = sweep_monotonicity(rows)
    ok = len(rows) == 100 and abs(rho) >= 0.9
    assert report(f"6 latent monotonicity ({family})", ok, f"|Spearman rho|={abs(rho):.3f} (>=0.9)")


# 7 -----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["linear_cae", "rotating_cae", "linear_undr"])
def test_7_schedule(runs, name):
    spec = runs[name][0]
    cfg = spec.train
    hist = TrainHistory.from_csv(Path(spec.output_dir) / "history.csv")
    it = hist.column("iteration")
    alpha, beta, phase = hist.column("alpha"), hist.column("beta"), hist.column("phase")
    warm = round(0.05 * cfg.total_iterations)
    first = it < warm
    ok = cfg.warmup_fraction == 0.05 and {warm - 1, warm} <= set(it.astype(int))
    ok &= bool(np.all(beta[first] == 0) and np.all(alpha[first] == cfg.warmup_alpha)
               and np.all(phase[first] == 1) and np.all(phase[~first] == 2))
    if cfg.cae is not None:
        ok &= bool(np.all(alpha[~first] == 0) and np.all(beta[~first] > 0))
        ok &= bool(np.all(hist.column("cae_recon")[first] == 0))
    else:
        ok &= bool(np.all(alpha[~first] == cfg.warmup_alpha) and np.all(beta == 0))
    assert report(f"7 schedule ({name})", ok,
                  f"boundary at iteration {warm} of {cfg.total_iterations}, {len(it)} logged rows")


# 8 -----------------------------------------------------------------------

def test_8_runtime(runs):
    times = {n: r.test_runtime_sec for n, (_, r) in runs.items()}
    slowest, fastest = max(times.values()), min(times.values())
    ok = slowest < 0.05 and slowest <= 2 * fastest
    assert report("8 runtime", ok,
                  f"per-pair forward {fastest * 1e3:.2f}..{slowest * 1e3:.2f} ms (<50 ms, spread "
                  f"{slowest / fastest:.2f}x <=2x)")


# 9 -----------------------------------------------------------------------

def test_9_determinism(tmp_path):
    spec = load_spec("determinism")
    first = cached_run(spec)
    rerun = ExperimentSpec.from_dict({**spec.to_dict(), "output_dir": str(tmp_path)})
    second = run_experiment(rerun)
    a = read_eval_csv(Path(spec.output_dir) / "eval.csv")
    b = read_eval_csv(tmp_path / "eval.csv")
    keys = ("dice_mean", "landmark_error_pct", "ae_error_pct", "n_pairs")
    ok = all(getattr(a, k) == getattr(b, k) for k in keys)
    ok &= (Path(spec.output_dir) / "history.csv").read_text() == (tmp_path / "history.csv").read_text()
    assert first.dice == second.dice
    assert report("9 determinism", ok,
                  "eval metrics and history bitwise equal across processes" if ok else
                  f"mismatch: {a} vs {b}")


# further invariants ------------------------------------------------------

def test_training_progress(runs):
    spec = runs["linear_cae"][0]
    hist = TrainHistory.from_csv(Path(spec.output_dir) / "history.csv")
    matching = hist.column("matching")
    ratio = matching[-1] / matching[0]
    assert report("T training progress (linear CAE)", ratio < 0.25,
                  f"final/initial matching loss {ratio:.3f} (<0.25)")


def test_posthoc_bottleneck_trend(runs):
    spec = runs["linear_undr"][0]
    model = load_checkpoint(Path(spec.output_dir) / "checkpoint")
    dataset = load_dataset_for(spec)
    idx = np.asarray(dataset.test_index)
    images = dataset.images()
    fields = predict_fields(model.primary, images[idx[:, 0]], images[idx[:, 1]])
    err1 = read_eval_csv(Path(spec.output_dir) / "eval.csv").ae_error_pct
    _, err16 = posthoc_ae_fit(fields, 16, seed=spec.train.seed,
                              iterations=spec.eval.posthoc_iterations)
    ok = err16 <= err1 + 2.0
    assert report("P post-hoc bottleneck trend (linear UnDR)", ok,
                  f"h=16 {err16:.2f}% <= h=1 {err1:.2f}% + 2")
