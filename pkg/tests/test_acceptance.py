"""Acceptance suite: one test per criterion, each printed as a PASS/FAIL line
in the terminal summary (see conftest.py).  Statistical criteria use fixed
seeds, so their outcome is reproducible."""

import filecmp
import json
import time

import numpy as np
import pytest
import yaml
from scipy.stats import spearmanr

from ppm_uncertainty import bayes, cli, eventlog, losses, nets, pipeline, synthgen, training
from ppm_uncertainty import evaluation as ev
from ppm_uncertainty.baseline import build_ts, predict_ts
from ppm_uncertainty.config import OUTPUT_ROOT_ENV
from ppm_uncertainty.nets import EncodedBatch, ModelConfig
from ppm_uncertainty.synthgen import END
from ppm_uncertainty.tensor import RngStream
from ppm_uncertainty.training import TrainConfig

from gradcheck import check
from op_cases import LOSS_CASES, OP_CASES
from test_baseline import KEY_FNS, fixture_prefixes, group_by_oracle

N_SEEDS = 20

# quick branch is nearly deterministic, the slow branch loops through a noisy step
BRANCHING_CHAIN = {"A": {"B": 0.5, "C": 0.5}, "B": {"D": 1.0}, "C": {"E": 1.0},
                   "E": {"E": 0.3, "D": 0.7}, "D": {END: 1.0}}
BRANCHING_DURATIONS = {"B": (0.5, 0.1), "C": (1.0, 0.2), "E": (2.0, 1.0), "D": (0.5, 0.1)}


def mlp_fit(data, seed, epochs, lr=3e-3, dropout_p=0.1, loss="hetero"):
    params = nets.build(ModelConfig(arch="mlp", dropout_p=dropout_p), RngStream(seed, "init"))
    training.fit(params, EncodedBatch.from_features(data.x_train), data.y_train, losses.LossSpec(loss),
                 TrainConfig(epochs=epochs, batch_size=64, lr=lr, early_stop="none"), RngStream(seed, "train"))
    return params


@pytest.mark.criterion(1, "finite-difference gradients of every op and loss")
def test_gradients_of_all_ops_and_losses(detail):
    start = time.perf_counter()
    worst = {}
    for name, build in {**OP_CASES, **LOSS_CASES}.items():
        for instance in range(10):
            f, inputs = build(np.random.default_rng(1000 + instance))
            worst[name] = max(worst.get(name, 0.0), check(f, inputs))
    elapsed = time.perf_counter() - start
    name = max(worst, key=worst.get)
    detail(f"{len(worst)} functions x 10, worst {name} {worst[name]:.1e}, {elapsed:.1f} s")
    assert all(err < 1e-4 for err in worst.values()), worst
    assert elapsed < 60


@pytest.mark.criterion(2, "entropy decomposition of the three MC-draw scenarios")
def test_entropy_scenarios(detail):
    scenarios = {
        "confident": ([(1.0, 0.0)] * 10, (0.0, 0.0, 0.0)),
        "noisy": ([(0.5, 0.5)] * 10, (0.69, 0.0, 0.69)),
        "disagreeing": ([(1.0, 0.0), (0.0, 1.0)] * 5, (0.69, 0.69, 0.0)),
    }
    got = {k: tuple(float(v) + 0.0 for v in np.round(bayes.decompose_entropy(np.array(draws)), 2))
           for k, (draws, _) in scenarios.items()}
    detail(", ".join(f"{k} {v}" for k, v in got.items()))
    for name, (_, expected) in scenarios.items():
        assert got[name] == expected


@pytest.mark.criterion(3, "loss degenerations at zero log-variance / zero logit noise")
def test_loss_degenerations(detail):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        y_hat, y = rng.normal(size=40), rng.normal(scale=3.0, size=40)
        hetero = losses.hetero_regression_loss(y_hat, np.zeros(40), y).item()
        assert hetero == losses.mse_loss(y_hat, y).item()
        assert hetero == pytest.approx(0.5 * np.mean((y - y_hat) ** 2), rel=1e-15)
        logits, labels = rng.normal(scale=2.0, size=(16, 3)), rng.integers(0, 3, size=16)
        att = losses.attenuated_ce_loss(logits, np.full(16, -np.inf), labels, 20, rng=RngStream(seed)).item()
        worst = max(worst, abs(att - losses.cross_entropy_loss(logits, labels).item()))
    detail(f"regression exact, classification max gap {worst:.1e}")
    assert worst < 1e-9


@pytest.mark.criterion(4, "epistemic variance higher inside a training-data gap")
def test_epistemic_gap_detection(detail):
    start = time.perf_counter()
    ratios = []
    for seed in range(N_SEEDS):
        data = synthgen.gen_1d_regression(synthgen.SynthSpec(n_samples=2000, gap_regions=((0.4, 0.6),), seed=seed))
        params = mlp_fit(data, seed, epochs=200)
        pred = bayes.mc_predict_regression(params, EncodedBatch.from_features(data.x_test), T=50,
                                           rng=RngStream(seed, "mc"))
        gap = data.in_gap(data.x_test)
        ratios.append(pred.epistemic[gap].mean() / pred.epistemic[~gap].mean())
    elapsed = time.perf_counter() - start
    hits = int(np.sum(np.array(ratios) > 1.5))
    detail(f"{hits}/{N_SEEDS} seeds above 1.5x, min ratio {min(ratios):.2f}, {elapsed:.0f} s")
    assert hits >= 18
    assert elapsed < 300


@pytest.mark.criterion(5, "learned variance tracks the true noise variance")
def test_aleatoric_tracking(detail):
    rhos = []
    for seed in range(N_SEEDS):
        data = synthgen.gen_1d_regression(
            synthgen.SynthSpec(n_samples=2000, noise=synthgen.NoiseProfile.linear(0.1, 1.0), seed=seed))
        params = mlp_fit(data, seed, epochs=100)
        pred = bayes.mc_predict_regression(params, EncodedBatch.from_features(data.x_test), T=50,
                                           rng=RngStream(seed, "mc"))
        rhos.append(spearmanr(pred.aleatoric, data.sigma_test ** 2)[0])
    hits = int(np.sum(np.array(rhos) > 0.8))
    detail(f"{hits}/{N_SEEDS} seeds with Spearman > 0.8, min {min(rhos):.3f}")
    assert hits >= 18


def branching_run(seed, task):
    """Metric at 100% and 25% retention for one MC-dropout model on a fresh branching log."""
    spec = synthgen.SynthProcessSpec(n_cases=300, activity_chain=BRANCHING_CHAIN,
                                     step_duration_law=BRANCHING_DURATIONS, seed=seed,
                                     outcome_rule=synthgen.OutcomeRule(2.0))
    split = eventlog.temporal_split(synthgen.gen_process_log(spec), 0.3)
    train_log, test_log = eventlog.engineer_features(split.train, split.test)
    train = eventlog.extract_prefixes(train_log, task=task)
    test = eventlog.extract_prefixes(test_log, task=task)
    model_cfg = ModelConfig(arch="cnn", task=task, vocab_size=len(train_log.activity_vocab) + 2,
                            conv_channels=(8, 8), dense_widths=(32, 32))
    tech = pipeline.technique("bayes", task, 0.1, 0.0)
    cols, _, _ = pipeline.run_technique(
        tech, model_cfg, TrainConfig(epochs=30, batch_size=64, lr=3e-3, early_stop="none"),
        eventlog.encode_batch(train), eventlog.targets(train, task), eventlog.encode_batch(test),
        RngStream(seed, "retention"), T=50)
    y = eventlog.targets(test, task)
    if task == "regression":
        curve = ev.retention_curve(cols["total"], np.abs(y - cols["point"]), thresholds=(1.0, 0.25))
    else:
        curve = ev.retention_curve(cols["H"], labels=y, scores=cols["p_positive"], thresholds=(1.0, 0.25))
    return curve.metric_at


@pytest.mark.criterion(6, "metric improves when only the most certain 25% are kept")
def test_retention_monotonicity(detail):
    mae = np.array([branching_run(seed, "regression") for seed in range(N_SEEDS)])
    auc = np.array([branching_run(seed, "classification") for seed in range(N_SEEDS)])
    mae_ok = int(np.sum(mae[:, 1] <= mae[:, 0]))
    auc_ok = int(np.sum(auc[:, 1] >= auc[:, 0]))
    detail(f"MAE {mae_ok}/{N_SEEDS}, AUC {auc_ok}/{N_SEEDS} runs")
    assert mae_ok >= 0.95 * N_SEEDS
    assert auc_ok >= 0.95 * N_SEEDS


@pytest.mark.criterion(7, "sliding-window interval calibration on stationary data")
def test_interval_calibration(detail):
    data = synthgen.gen_1d_regression(synthgen.SynthSpec(
        n_samples=2000, noise=synthgen.NoiseProfile.linear(0.1, 0.5), seed=0, n_test=30_000))
    params = mlp_fit(data, 0, epochs=100)
    # test inputs come back sorted by x; a random arrival order makes the stream stationary
    order = np.random.default_rng(1).permutation(len(data.x_test))
    x, y_test = data.x_test[order], data.y_test[order]
    pred = bayes.mc_predict_regression(params, EncodedBatch.from_features(x), T=50, rng=RngStream(0, "mc"))
    rep = ev.calibrate_intervals(y_test, pred.point, pred.total, window=5000, stride=1000)
    gaps = np.abs(np.array(rep.coverage) - np.array(rep.levels))
    rng = np.random.default_rng(0)
    y = rng.normal(size=20_000)
    oracle = ev.calibrate_intervals(y, np.zeros_like(y), np.ones_like(y), window=5000, stride=5000)
    z95 = np.array(oracle.critical_values)[:, oracle.levels.index(0.95)]
    detail(f"{len(rep.checkpoints)} checkpoints, max coverage gap {gaps.max():.3f}, "
           f"oracle z(0.95) {z95.min():.3f}..{z95.max():.3f}")
    assert gaps.max() <= 0.03
    assert np.all(np.abs(z95 - 1.96) <= 0.1)


# 30 training points for a 64x64 network: every technique can memorise the noise
LADDER = dict(n_samples=30, noise=(0.02, 0.5), epochs=2000, dropout_p=0.05, l2_lambda=3e-3, n_test=20_000)


@pytest.mark.criterion(8, "technique ladder on a small overfitting-prone set")
def test_technique_ladder(detail):
    names = ("plain", "hetero", "dropout", "bayes")
    mae = {name: [] for name in names}
    for seed in range(N_SEEDS):
        data = synthgen.gen_1d_regression(synthgen.SynthSpec(
            n_samples=LADDER["n_samples"], noise=synthgen.NoiseProfile.linear(*LADDER["noise"]), seed=seed,
            n_test=LADDER["n_test"]))
        for name in names:
            tech = pipeline.technique(name, "regression", LADDER["dropout_p"], LADDER["l2_lambda"])
            cols, _, _ = pipeline.run_technique(
                tech, ModelConfig(arch="mlp"),
                TrainConfig(epochs=LADDER["epochs"], batch_size=32, lr=3e-3, early_stop="none"),
                EncodedBatch.from_features(data.x_train), data.y_train,
                EncodedBatch.from_features(data.x_test), RngStream(seed, "ladder"))
            mae[name].append(ev.mae(data.y_test, cols["point"]))
    med = {name: float(np.median(v)) for name, v in mae.items()}
    bayes_wins = int(np.sum(np.array(mae["bayes"]) <= np.array(mae["plain"])))
    detail("median MAE " + ", ".join(f"{k} {v:.4f}" for k, v in med.items())
           + f"; bayes <= plain in {bayes_wins}/{N_SEEDS}")
    assert med["plain"] >= med["hetero"] >= med["dropout"]
    assert bayes_wins >= 0.8 * N_SEEDS


@pytest.mark.criterion(9, "transition-system baseline equals a brute-force group-by")
def test_baseline_oracle(detail):
    prefixes = fixture_prefixes(seed=0, n_cases=20)
    for abstraction, key_fn in KEY_FNS.items():
        ts = build_ts(prefixes, abstraction, k=3)
        oracle = group_by_oracle(prefixes, key_fn)
        assert [predict_ts(ts, p) for p in prefixes] == [oracle[key_fn(p.history)] for p in prefixes]
    detail(f"{len(prefixes)} prefixes x {len(KEY_FNS)} abstractions")


SMALL_RUN = {
    "seed": 11,
    "output_dir": "run",
    "data": {"synth": {"n_cases": 80}, "test_fraction": 0.3},
    "model": {"conv_channels": [4, 4], "dense_widths": [8, 8]},
    "train": {"epochs": 3, "batch_size": 32},
    "inference": {"T": 5},
    "eval": {"window": 50, "stride": 20},
    "sweep": {"fractions": [0.5, 1.0], "techniques": ["plain", "hetero", "dropout", "bayes"], "repeats": 1},
}


@pytest.mark.criterion(10, "every command reruns byte-identically")
def test_rerun_determinism(tmp_path, monkeypatch, detail):
    monkeypatch.chdir(tmp_path)
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(SMALL_RUN))
    for root in ("first", "second"):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / root))
        for command in ("synth", "prepare", "train", "predict", "evaluate", "sweep"):
            assert cli.main([command, "-c", str(cfg_path)]) == 0, command
    first, second = tmp_path / "first" / "run", tmp_path / "second" / "run"
    compared = [f for f in sorted(first.rglob("*")) if f.is_file() and not f.name.startswith("timing")]
    same = [filecmp.cmp(f, second / f.relative_to(first), shallow=False) for f in compared]
    detail(f"{sum(same)}/{len(compared)} files identical (timing files excluded)")
    assert all(same) and len(compared) >= 20


TIMING_RUN = {
    "seed": 5,
    "output_dir": "timing",
    "data": {"synth": {"n_cases": 800}},
    "train": {"epochs": 12, "early_stop": "none"},
    "inference": {"T": 5},
    "sweep": {"techniques": ["plain", "bayes"], "repeats": 1},
}


@pytest.mark.criterion(11, "Bayes/plain per-epoch time ratio is reported and stable")
def test_overhead_ratio_stable(tmp_path, monkeypatch, detail):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(TIMING_RUN))
    ratios = []
    for _ in range(3):
        assert cli.main(["sweep", "-c", str(cfg_path)]) == 0
        summary = json.loads((tmp_path / "timing" / "sweep" / "timing_summary.json").read_text())
        ratios.append(summary["bayes_over_plain_epoch_ratio"])
    spread = max(ratios) / min(ratios) - 1
    detail("ratios " + ", ".join(f"{r:.3f}" for r in ratios) + f", spread {spread:.1%}")
    assert spread <= 0.10
