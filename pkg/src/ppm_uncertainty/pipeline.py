"""End-to-end steps behind the command-line subcommands.

Every step reads and writes plain CSV/JSON under the run's output directory:

    prepared/     train_prefixes.csv, test_prefixes.csv, stats.json, encoding.json
    synth/        log.csv (or data.csv), truth.json
    model/        checkpoint.json, training_log.csv, timing.json
    predictions/  predictions.csv, timing.json
    reports/      retention.csv, calibration.csv, early_buckets.csv, report.json
    sweep/        results.csv, summary.csv, timing.csv, timing_summary.json

Each directory also gets a manifest.json.  Files named ``timing*`` hold wall-clock
measurements and are the only outputs that differ between identical reruns.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import shutil
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy

from . import __version__, baseline, bayes, eventlog, nets, synthgen, training
from . import evaluation as ev
from .config import config_hash, output_root
from .errors import ConfigError, DataError, PPMError, UndefinedMetricError
from .eventlog import PrefixSample
from .losses import LossSpec
from .nets import EncodedBatch, ModelConfig, ModelParams
from .tensor import RngStream

FILE_FORMAT_VERSION = 1
REGRESSION_COLUMNS = ["case_id", "prefix_len", "y_true", "point", "epistemic", "aleatoric", "total"]
CLASSIFICATION_COLUMNS = ["case_id", "prefix_len", "y_true", "p_positive", "H", "I", "HmI"]


# ---------------------------------------------------------------------------
# file helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_rows(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        values = [row[h] for h in header] if isinstance(row, Mapping) else list(row)
        w.writerow([_fmt(v) for v in values])
    path.write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: Path, cfg: Mapping, command: str) -> None:
    files = {p.name: _sha256(p) for p in sorted(directory.iterdir())
             if p.is_file() and p.name != "manifest.json" and not p.name.startswith("timing")}
    write_json(directory / "manifest.json", {
        "format_version": FILE_FORMAT_VERSION,
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "config": cfg,
        "versions": {"ppm_uncertainty": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": files,
    })


def _fresh_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# data


def synth_process_spec(synth: Mapping, seed: int) -> synthgen.SynthProcessSpec:
    threshold = synth.get("outcome_threshold_days")
    rule = None if threshold is None else synthgen.OutcomeRule(float(threshold), synth.get("outcome_positive_if", "below"))
    try:
        return synthgen.SynthProcessSpec(
            n_cases=int(synth["n_cases"]),
            activity_chain={a: {n: float(p) for n, p in row.items()} for a, row in synth["activity_chain"].items()},
            start_activity=synth["start_activity"],
            step_duration_law={a: (float(m), float(s)) for a, (m, s) in synth["step_duration_law"].items()},
            outcome_rule=rule,
            seed=seed,
            interarrival_days=float(synth.get("interarrival_days", 0.25)),
            max_events=int(synth.get("max_events", 50)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid data.synth settings: {exc}") from exc


def synth_regression_spec(synth: Mapping, seed: int) -> synthgen.SynthSpec:
    try:
        return synthgen.SynthSpec(
            n_samples=int(synth["n_samples"]),
            noise=synthgen.NoiseProfile(tuple(synth["noise_knots"]), tuple(synth["noise_sigmas"])),
            gap_regions=tuple(tuple(g) for g in synth.get("gap_regions", ())),
            seed=seed,
            n_test=int(synth.get("n_test", 1000)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid data.synth settings: {exc}") from exc


def load_log(cfg: Mapping) -> eventlog.EventLog:
    data = cfg["data"]
    if data["source"] is not None:
        return eventlog.parse_csv(data["source"], data["schema"] or None, int(data["max_bad_rows"]))
    if data["synth"].get("kind", "process") != "process":
        raise ConfigError("only a process-log synth spec can feed the event-log pipeline")
    return synthgen.gen_process_log(synth_process_spec(data["synth"], cfg["seed"]))


@dataclass
class PreparedData:
    train: list
    test: list
    encoding: dict
    stats: dict = field(default_factory=dict)


def prepare_from_split(split: eventlog.SplitResult, cfg: Mapping, fraction: float, seed: int) -> PreparedData:
    data = cfg["data"]
    train_log = eventlog.subsample_fraction(split.train, fraction, seed)
    train_log, test_log = eventlog.engineer_features(train_log, split.test)
    task, max_len = data["task"], int(data["max_len"])
    train = eventlog.extract_prefixes(train_log, max_len, task)
    test = eventlog.extract_prefixes(test_log, max_len, task)
    encoding = {
        "activity_vocab": dict(sorted(train_log.activity_vocab.items())),
        "elapsed_mean": train_log.elapsed_stats[0],
        "elapsed_std": train_log.elapsed_stats[1],
        "max_len": max_len,
        "task": task,
        "vocab_size": len(train_log.activity_vocab) + 2,
    }
    stats = {
        "train": eventlog.dataset_stats(train_log).to_dict(),
        "test": eventlog.dataset_stats(test_log).to_dict(),
        "split": {"removed_overlap": split.removed_overlap, "removed_debias": split.removed_debias,
                  "train_fraction": fraction},
    }
    return PreparedData(train, test, encoding, stats)


def prepare_data(cfg: Mapping) -> PreparedData:
    log = load_log(cfg)
    split = eventlog.temporal_split(log, float(cfg["data"]["test_fraction"]), bool(cfg["data"]["debias"]))
    prepared = prepare_from_split(split, cfg, float(cfg["data"]["fraction"]), cfg["seed"])
    prepared.stats["full"] = eventlog.dataset_stats(log).to_dict()
    return prepared


def load_prepared(root: Path) -> PreparedData:
    d = root / "prepared"
    if not (d / "encoding.json").is_file():
        raise DataError(f"no prepared dataset under {str(d)!r}; run 'prepare' first")
    return PreparedData(eventlog.read_prefixes(d / "train_prefixes.csv"),
                        eventlog.read_prefixes(d / "test_prefixes.csv"),
                        read_json(d / "encoding.json"), read_json(d / "stats.json"))


# ---------------------------------------------------------------------------
# models


def model_config(cfg: Mapping, encoding: Mapping, dropout_p: Optional[float] = None,
                 l2_lambda: Optional[float] = None) -> ModelConfig:
    m = cfg["model"]
    try:
        return ModelConfig(
            arch=m["arch"], task=encoding["task"], vocab_size=int(encoding["vocab_size"]),
            seq_len=int(encoding["max_len"]), embed_dim=int(m["embed_dim"]),
            conv_channels=tuple(m["conv_channels"]), kernel_width=int(m["kernel_width"]),
            lstm_hidden=tuple(m["lstm_hidden"]), dense_widths=tuple(m["dense_widths"]),
            dropout_p=float(m["dropout_p"] if dropout_p is None else dropout_p),
            l2_lambda=float(m["l2_lambda"] if l2_lambda is None else l2_lambda),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model settings: {exc}") from exc


def train_config(cfg: Mapping) -> training.TrainConfig:
    t = cfg["train"]
    try:
        return training.TrainConfig(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
            early_stop=t["early_stop"], plateau_patience=int(t["plateau_patience"]),
            plateau_tol=float(t["plateau_tol"]), val_fraction=float(t["val_fraction"]),
            lr_schedule=t["lr_schedule"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train settings: {exc}") from exc


def train_model(model_cfg: ModelConfig, spec: LossSpec, train_cfg: training.TrainConfig,
                batch: EncodedBatch, y: np.ndarray, rng: RngStream):
    params = nets.build(model_cfg, rng.child("init"))
    result = training.fit(params, batch, y, spec, train_cfg, rng.child("train"))
    return params, result


def predict_columns(params: ModelParams, batch: EncodedBatch, mode: str, T: int, rng: RngStream) -> dict:
    """Prediction columns (without ids and targets) for ``mode`` in {"mc", "deterministic"}."""
    if params.config.task == "regression":
        if mode == "mc":
            p = bayes.mc_predict_regression(params, batch, T, rng)
            return {"point": p.point, "epistemic": p.epistemic, "aleatoric": p.aleatoric, "total": p.total}
        point, var = bayes.deterministic_predict(params, batch)
        return {"point": point, "epistemic": np.zeros_like(point), "aleatoric": var, "total": var}
    if mode == "mc":
        p = bayes.mc_predict_classification(params, batch, T, rng)
        return {"p_positive": p.p_positive, "H": p.entropy_H, "I": p.mutual_info_I, "HmI": p.aleatoric_HmI}
    probs = bayes.deterministic_predict(params, batch)
    H = bayes.entropy(probs)
    return {"p_positive": probs[:, -1], "H": H, "I": np.zeros_like(H), "HmI": H}


def prediction_rows(samples: Sequence[PrefixSample], task: str, cols: Mapping) -> list[dict]:
    y = eventlog.targets(samples, task)
    names = REGRESSION_COLUMNS if task == "regression" else CLASSIFICATION_COLUMNS
    rows = []
    for i, s in enumerate(samples):
        row = {"case_id": s.case_id, "prefix_len": s.prefix_len,
               "y_true": float(y[i]) if task == "regression" else int(y[i])}
        row.update({k: float(cols[k][i]) for k in names[3:]})
        rows.append(row)
    return rows


def read_predictions(path: Path) -> tuple[str, list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if header == REGRESSION_COLUMNS:
            task = "regression"
        elif header == CLASSIFICATION_COLUMNS:
            task = "classification"
        else:
            raise DataError(f"unrecognised predictions header {header}")
        rows = []
        for r in reader:
            row = {"case_id": r["case_id"], "prefix_len": int(r["prefix_len"])}
            row["y_true"] = float(r["y_true"]) if task == "regression" else int(r["y_true"])
            row.update({k: float(r[k]) for k in header[3:]})
            rows.append(row)
    return task, rows


# ---------------------------------------------------------------------------
# evaluation


def _median_case_days(samples: Sequence[PrefixSample]) -> float:
    per_case = {}
    for s in samples:
        per_case[s.case_id] = s.case_duration_days
    return float(np.median(list(per_case.values())))


def evaluate_rows(task: str, rows: Sequence[Mapping], test: Sequence[PrefixSample],
                  train: Sequence[PrefixSample], eval_cfg: Mapping) -> dict:
    """Metrics, retention curve, calibration and early buckets for one prediction set.

    Returns a dict with ``report`` (JSON summary) and the row lists of the CSV reports.
    """
    if len(rows) != len(test):
        raise DataError(f"{len(rows)} predictions for {len(test)} test prefixes")
    thresholds = [float(t) for t in eval_cfg["thresholds"]]
    fractions = [f if f == "all" else float(f) for f in eval_cfg["fractions"]]
    y = np.array([r["y_true"] for r in rows])
    duration = np.array([s.prefix_duration_days for s in test])
    median_days = _median_case_days(test)
    report = {"task": task, "n_test": len(rows), "median_test_case_days": median_days}
    out = {"report": report, "calibration": None}

    if task == "regression":
        point = np.array([r["point"] for r in rows])
        total = np.array([r["total"] for r in rows])
        errors = np.abs(y - point)
        report["mae"] = ev.mae(y, point)
        ts = baseline.build_ts(train, eval_cfg["ts_abstraction"], int(eval_cfg["ts_k"]))
        report["baseline"] = {"abstraction": ts.abstraction, "k": ts.k,
                              "mae": ev.mae(y, baseline.predict_many(ts, test))}
        curve = ev.retention_curve(total, errors, thresholds=thresholds)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cal = ev.calibrate_intervals(y, point, total, int(eval_cfg["window"]), int(eval_cfg["stride"]),
                                         [float(l) for l in eval_cfg["levels"]])
        out["calibration"] = cal.rows()
        report["calibration_window"] = min(int(eval_cfg["window"]), len(y))
        buckets = ev.early_buckets(duration, total, errors, median_case_days=median_days,
                                   fractions=fractions, thresholds=thresholds) if median_days > 0 else None
    else:
        score = np.array([r["p_positive"] for r in rows])
        H = np.array([r["H"] for r in rows])
        try:
            report["auc_roc"] = ev.auc_roc(y, score)
        except UndefinedMetricError:
            report["auc_roc"] = None
        curve = ev.retention_curve(H, labels=y, scores=score, thresholds=thresholds)
        buckets = ev.early_buckets(duration, H, labels=y, scores=score, median_case_days=median_days,
                                   fractions=fractions, thresholds=thresholds) if median_days > 0 else None

    out["retention"] = curve.rows()
    report["retention"] = {str(t): m for t, m in zip(curve.thresholds, curve.metric_at)}
    bucket_rows = []
    if buckets is not None:
        for frac, cap, size, c in zip(buckets.fractions, buckets.max_duration_days, buckets.sizes, buckets.curves):
            for t_idx, t in enumerate(thresholds if c is None else c.thresholds):
                bucket_rows.append({"fraction": frac, "max_prefix_days": cap, "bucket_size": size, "threshold": t,
                                    "n_retained": 0 if c is None else c.n_retained[t_idx],
                                    curve.metric: float("nan") if c is None else c.metric_at[t_idx]})
    out["early_buckets"] = bucket_rows
    return out


# ---------------------------------------------------------------------------
# subcommands


def _root(cfg) -> Path:
    return output_root(cfg)


def cmd_prepare(cfg: Mapping) -> Path:
    """Parse, split, engineer and write prefix datasets; all-or-nothing."""
    root = _root(cfg)
    prepared = prepare_data(cfg)
    target = root / "prepared"
    root.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".prepared-", dir=root))
    try:
        max_len = prepared.encoding["max_len"]
        eventlog.write_prefixes(prepared.train, tmp / "train_prefixes.csv", max_len)
        eventlog.write_prefixes(prepared.test, tmp / "test_prefixes.csv", max_len)
        write_json(tmp / "stats.json", prepared.stats)
        write_json(tmp / "encoding.json", prepared.encoding)
        write_manifest(tmp, cfg, "prepare")
        if target.exists():
            shutil.rmtree(target)
        tmp.rename(target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target


def cmd_synth(cfg: Mapping) -> Path:
    synth = cfg["data"]["synth"]
    out = _fresh_dir(_root(cfg) / "synth")
    if synth.get("kind", "process") == "process":
        spec = synth_process_spec(synth, cfg["seed"])
        eventlog.write_csv(synthgen.gen_process_log(spec), out / "log.csv")
        truth = {"kind": "process", "activity_chain": spec.activity_chain,
                 "step_duration_law": {k: list(v) for k, v in spec.step_duration_law.items()},
                 "start_activity": spec.start_activity, "n_cases": spec.n_cases, "seed": spec.seed,
                 "outcome_threshold_days": synth.get("outcome_threshold_days"),
                 "outcome_positive_if": synth.get("outcome_positive_if")}
    elif synth["kind"] == "regression1d":
        data = synthgen.gen_1d_regression(synth_regression_spec(synth, cfg["seed"]))
        rows = [("train", x, y) for x, y in zip(data.x_train, data.y_train)]
        rows += [("test", x, y) for x, y in zip(data.x_test, data.y_test)]
        write_rows(out / "data.csv", ["split", "x", "y"], rows)
        truth = {"kind": "regression1d", **data.truth_dict()}
    else:
        raise ConfigError(f"unknown data.synth.kind {synth['kind']!r}")
    write_json(out / "truth.json", truth)
    write_manifest(out, cfg, "synth")
    return out


def cmd_train(cfg: Mapping) -> Path:
    root = _root(cfg)
    prepared = load_prepared(root)
    task = prepared.encoding["task"]
    if task != cfg["data"]["task"]:
        raise ConfigError(f"prepared data is for {task!r} but the config says {cfg['data']['task']!r}")
    spec = LossSpec(cfg["loss"]["kind"], int(cfg["loss"]["T_softmax"]), float(cfg["loss"]["alpha_elu"]))
    batch = eventlog.encode_batch(prepared.train)
    y = eventlog.targets(prepared.train, task)
    t0 = time.perf_counter()
    params, result = train_model(model_config(cfg, prepared.encoding), spec, train_config(cfg), batch, y,
                                 RngStream(cfg["seed"], "run"))
    elapsed = time.perf_counter() - t0
    out = _fresh_dir(root / "model")
    params.save(out / "checkpoint.json")
    val = result.val_losses + [None] * (len(result.losses) - len(result.val_losses))
    write_rows(out / "training_log.csv", ["epoch", "loss", "val_loss"],
               [(i, l, v) for i, (l, v) in enumerate(zip(result.losses, val))])
    write_json(out / "timing.json", {"epoch_seconds": result.epoch_seconds,
                                     "mean_epoch_seconds": float(np.mean(result.epoch_seconds)),
                                     "train_seconds": elapsed, "stopped_early": result.stopped_early})
    write_manifest(out, cfg, "train")
    return out


def cmd_predict(cfg: Mapping) -> Path:
    root = _root(cfg)
    ckpt = root / "model" / "checkpoint.json"
    if not ckpt.is_file():
        raise DataError(f"no checkpoint at {str(ckpt)!r}; run 'train' first")
    params = ModelParams.load(ckpt)
    prepared = load_prepared(root)
    task = params.config.task
    t0 = time.perf_counter()
    cols = predict_columns(params, eventlog.encode_batch(prepared.test), cfg["inference"]["mode"],
                           int(cfg["inference"]["T"]), RngStream(cfg["seed"], "predict"))
    elapsed = time.perf_counter() - t0
    out = _fresh_dir(root / "predictions")
    names = REGRESSION_COLUMNS if task == "regression" else CLASSIFICATION_COLUMNS
    write_rows(out / "predictions.csv", names, prediction_rows(prepared.test, task, cols))
    write_json(out / "timing.json", {"predict_seconds": elapsed, "T": int(cfg["inference"]["T"]),
                                     "mode": cfg["inference"]["mode"]})
    write_manifest(out, cfg, "predict")
    return out


def write_reports(out: Path, evaluated: Mapping, task: str) -> None:
    metric = "mae" if task == "regression" else "auc_roc"
    write_rows(out / "retention.csv", ["threshold", "n_retained", metric], evaluated["retention"])
    if evaluated["calibration"] is not None:
        write_rows(out / "calibration.csv", ["checkpoint", "level", "critical_value", "coverage", "n_following"],
                   evaluated["calibration"])
    write_rows(out / "early_buckets.csv",
               ["fraction", "max_prefix_days", "bucket_size", "threshold", "n_retained", metric],
               evaluated["early_buckets"])
    write_json(out / "report.json", evaluated["report"])


def cmd_evaluate(cfg: Mapping) -> Path:
    root = _root(cfg)
    pred_path = root / "predictions" / "predictions.csv"
    if not pred_path.is_file():
        raise DataError(f"no predictions at {str(pred_path)!r}; run 'predict' first")
    task, rows = read_predictions(pred_path)
    if task != cfg["data"]["task"]:
        raise ConfigError(f"predictions are for {task!r} but the config asks for {cfg['data']['task']!r} metrics")
    prepared = load_prepared(root)
    evaluated = evaluate_rows(task, rows, prepared.test, prepared.train, cfg["eval"])
    out = _fresh_dir(root / "reports")
    write_reports(out, evaluated, task)
    write_manifest(out, cfg, "evaluate")
    return out


# ---------------------------------------------------------------------------
# technique sweep


@dataclass(frozen=True)
class Technique:
    name: str
    loss: str
    dropout_p: float
    l2_lambda: float
    inference: str


def technique(name: str, task: str, dropout_p: float, l2_lambda: float) -> Technique:
    """The four rungs compared by the sweep: no dropout, attenuated loss, +dropout, +L2 and MC inference."""
    plain_loss, hetero_loss = ("mse", "hetero") if task == "regression" else ("ce", "attenuated_ce")
    table = {
        "plain": Technique("plain", plain_loss, 0.0, 0.0, "deterministic"),
        "hetero": Technique("hetero", hetero_loss, 0.0, 0.0, "deterministic"),
        "dropout": Technique("dropout", hetero_loss, dropout_p, 0.0, "deterministic"),
        "bayes": Technique("bayes", hetero_loss, dropout_p, l2_lambda, "mc"),
    }
    if name not in table:
        raise ConfigError(f"unknown technique {name!r}")
    return table[name]


def run_technique(tech: Technique, model_cfg: ModelConfig, train_cfg: training.TrainConfig,
                  train_batch: EncodedBatch, y_train, test_batch: EncodedBatch, rng: RngStream,
                  T: int = 50, T_softmax: int = 20):
    """Train one technique and predict the test batch; returns (columns, TrainResult, predict seconds)."""
    cfg = ModelConfig(**{**model_cfg.to_dict(), "dropout_p": tech.dropout_p, "l2_lambda": tech.l2_lambda,
                         "conv_channels": tuple(model_cfg.conv_channels),
                         "lstm_hidden": tuple(model_cfg.lstm_hidden),
                         "dense_widths": tuple(model_cfg.dense_widths)})
    params, result = train_model(cfg, LossSpec(tech.loss, T_softmax), train_cfg, train_batch, y_train, rng)
    t0 = time.perf_counter()
    cols = predict_columns(params, test_batch, tech.inference, T, rng.child("predict"))
    return cols, result, time.perf_counter() - t0


def cell_seed(seed: int, fraction: float, repeat: int) -> int:
    """Seed shared by all techniques of one (fraction, repeat) pair, so comparisons are paired."""
    return int(RngStream(seed, f"cell/{fraction!r}/{repeat}").integers(0, 2**31 - 1))


def _run_cell(args):
    cfg, split, fraction, name, repeat = args
    seed = cell_seed(cfg["seed"], fraction, repeat)
    row = {"fraction": fraction, "technique": name, "repeat": repeat, "seed": seed, "status": "ok", "error": "",
           "n_train_prefixes": 0, "metric": float("nan"), "baseline_mae": float("nan")}
    timing = {"fraction": fraction, "technique": name, "repeat": repeat,
              "mean_epoch_seconds": float("nan"), "median_epoch_seconds": float("nan"),
              "predict_seconds": float("nan")}
    try:
        prepared = prepare_from_split(split, cfg, fraction, seed)
        task = prepared.encoding["task"]
        tech = technique(name, task, float(cfg["sweep"]["dropout_p"]), float(cfg["sweep"]["l2_lambda"]))
        cols, result, pred_s = run_technique(
            tech, model_config(cfg, prepared.encoding), train_config(cfg),
            eventlog.encode_batch(prepared.train), eventlog.targets(prepared.train, task),
            eventlog.encode_batch(prepared.test), RngStream(seed, f"technique/{name}"),
            int(cfg["inference"]["T"]), int(cfg["loss"]["T_softmax"]))
        rows = prediction_rows(prepared.test, task, cols)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            evaluated = evaluate_rows(task, rows, prepared.test, prepared.train, cfg["eval"])
        rep = evaluated["report"]
        row["n_train_prefixes"] = len(prepared.train)
        row["metric"] = rep["mae"] if task == "regression" else rep["auc_roc"]
        if task == "regression":
            row["baseline_mae"] = rep["baseline"]["mae"]
        timing["mean_epoch_seconds"] = float(np.mean(result.epoch_seconds))
        timing["median_epoch_seconds"] = float(np.median(result.epoch_seconds))
        timing["predict_seconds"] = pred_s
    except PPMError as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    except (ValueError, FloatingPointError) as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row, timing


def _nanmean(values) -> float:
    arr = np.array([v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))], dtype=float)
    return float(arr.mean()) if arr.size else float("nan")


def cmd_sweep(cfg: Mapping) -> Path:
    """Every (fraction, technique, repeat) cell: subsample, train, predict, evaluate."""
    root = _root(cfg)
    log = load_log(cfg)
    split = eventlog.temporal_split(log, float(cfg["data"]["test_fraction"]), bool(cfg["data"]["debias"]))
    sw = cfg["sweep"]
    jobs = [(cfg, split, float(f), t, r) for f in sw["fractions"] for t in sw["techniques"]
            for r in range(int(sw["repeats"]))]
    workers = int(sw["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    key = lambda r: (r["fraction"], list(sw["techniques"]).index(r["technique"]), r["repeat"])
    rows = sorted((r for r, _ in results), key=key)
    timings = sorted((t for _, t in results), key=key)

    summary = []
    for f in sw["fractions"]:
        for t in sw["techniques"]:
            cell = [r for r in rows if r["fraction"] == float(f) and r["technique"] == t]
            ok = [r for r in cell if r["status"] == "ok"]
            summary.append({"fraction": float(f), "technique": t, "n_ok": len(ok), "n_failed": len(cell) - len(ok),
                            "mean_metric": _nanmean(r["metric"] for r in ok),
                            "mean_baseline_mae": _nanmean(r["baseline_mae"] for r in ok)})

    out = _fresh_dir(root / "sweep")
    write_rows(out / "results.csv", ["fraction", "technique", "repeat", "seed", "status", "error",
                                     "n_train_prefixes", "metric", "baseline_mae"], rows)
    write_rows(out / "summary.csv", ["fraction", "technique", "n_ok", "n_failed", "mean_metric",
                                     "mean_baseline_mae"], summary)
    write_rows(out / "timing.csv", ["fraction", "technique", "repeat", "mean_epoch_seconds",
                                    "median_epoch_seconds", "predict_seconds"], timings)
    per_tech = {t: _nanmean(x["mean_epoch_seconds"] for x in timings if x["technique"] == t) for t in sw["techniques"]}
    # medians resist one-off stalls (first epoch, GC), so the ratio uses them
    median_tech = {t: _nanmean(x["median_epoch_seconds"] for x in timings if x["technique"] == t)
                   for t in sw["techniques"]}
    timing_summary = {"mean_epoch_seconds": per_tech, "median_epoch_seconds": median_tech}
    if "bayes" in per_tech and "plain" in per_tech:
        timing_summary["bayes_over_plain_epoch_ratio"] = median_tech["bayes"] / median_tech["plain"]
    write_json(out / "timing_summary.json", timing_summary)
    write_manifest(out, cfg, "sweep")
    return out
