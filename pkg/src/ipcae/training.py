"""Training loop, evaluation, speedup and sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import analysis
from . import autodiff as ad
from . import concrete, objectives
from .concrete import ConfigError, TemperatureSchedule
from .data import Dataset, MinMaxStats, SyntheticSpec, gen_synthetic, load_csv, prepare
from .model import CaeModel, build_model, load_checkpoint, lr_schedule, make_optimizer, save_checkpoint
from .tensor import Rng

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (11, 22, 33, 44, 55, 66, 77, 88, 99, 1010)

METRICS_COLUMNS = ("epoch", "temperature", "lr", "train_loss", "val_loss", "val_metric",
                   "unique_pct", "gjsd", "alpha_norm", "psi_norm", "w_norm")
TRACE_COLUMNS = ("step", "epoch", "alpha_norm", "psi_norm", "w_norm", "psi_dot_mean", "transform_norm_mean")
SWEEP_AXES = ("K", "P", "variant", "lambda")


class NumericalError(RuntimeError):
    pass


@dataclass
class DataSource:
    path: str
    label: str | int | None = None
    impute: str = "class_mean"

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown data keys: {sorted(unknown)}")
        if "path" not in d:
            raise ConfigError("data.path is required")
        return cls(**d)


@dataclass
class TrainConfig:
    task: str = "reconstruction"
    K: int = 50
    P: int | None = None
    variant: str = "full"
    bias: bool = False
    lam: float = 0.0
    T0: float = 10.0
    TB: float = 0.01
    epochs: int = 200
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 256
    seed: int = 11
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    split_seed: int = 0
    split: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    warmup_epochs: int = 0
    weight_decay: float = 0.0
    trace: bool = False
    hidden: list[int] = field(default_factory=lambda: [200])
    freeze_identity_weight: bool = False
    data: DataSource | None = None
    synthetic: SyntheticSpec | None = None
    out: str | None = None

    # JSON uses "lambda"; the attribute is lam because lambda is reserved.
    _ALIASES = {"lambda": "lam"}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        kwargs = {}
        unknown = []
        for key, value in d.items():
            attr = cls._ALIASES.get(key, key)
            if attr not in names or key == "lam":
                unknown.append(key)
                continue
            kwargs[attr] = value
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(kwargs.get("data"), dict):
            kwargs["data"] = DataSource.from_dict(kwargs["data"])
        if isinstance(kwargs.get("synthetic"), dict):
            kwargs["synthetic"] = SyntheticSpec.from_dict(kwargs["synthetic"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(value, (DataSource, SyntheticSpec)):
                value = asdict(value)
            out[key] = value
        return out

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in objectives.TASKS, f"task must be one of {objectives.TASKS}, got {self.task!r}")
        need(self.variant in concrete.VARIANTS, f"variant must be one of {concrete.VARIANTS}, got {self.variant!r}")
        need(isinstance(self.K, int) and self.K >= 1, f"K must be a positive integer, got {self.K!r}")
        need(self.P is None or (isinstance(self.P, int) and self.P >= 1), f"P must be a positive integer, got {self.P!r}")
        need(self.lam >= 0, f"lambda must be >= 0, got {self.lam}")
        need(self.T0 > self.TB > 0, f"need T0 > TB > 0, got {self.T0}, {self.TB}")
        need(isinstance(self.epochs, int) and self.epochs >= 1, f"epochs must be >= 1, got {self.epochs!r}")
        need(self.lr > 0, f"lr must be positive, got {self.lr}")
        need(self.optimizer in ("adam", "sgd"), f"optimizer must be adam or sgd, got {self.optimizer!r}")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size must be a positive integer")
        need(0 <= self.warmup_epochs <= self.epochs, "warmup_epochs must lie in [0, epochs]")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(all(isinstance(h, int) and h >= 1 for h in self.hidden), f"hidden widths must be positive integers, got {self.hidden}")
        need(len(self.seeds) >= 1, "seeds must not be empty")
        need(not (self.bias and self.variant != "full"), "bias is only defined for the full variant")
        need(not (self.freeze_identity_weight and self.variant != "full"), "freeze_identity_weight needs the full variant")
        need(not (self.data and self.synthetic), "give either data or synthetic, not both")
        if self.synthetic is not None:
            need(self.synthetic.task == self.task, "synthetic.task must match task")


# ---------------------------------------------------------------- logs

@dataclass
class MetricLog:
    metric: str  # "normalized_frobenius" (lower is better) or "accuracy"
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    test_metric: float | None = None
    selection: list[int] = field(default_factory=list)
    trace: analysis.UpdateTrace | None = None

    @property
    def higher_is_better(self) -> bool:
        return self.metric == "accuracy"

    @property
    def epochs(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def final(self, name: str):
        return self.rows[-1][name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in self.rows:
            writer.writerow([_cell(r.get(c)) for c in METRICS_COLUMNS])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in (self.trace.records if self.trace else []):
            row = rec.row()
            writer.writerow([_cell(row[c]) for c in TRACE_COLUMNS])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class TrainResult:
    log: MetricLog
    model: CaeModel  # holds the best-validation weights
    best_tensors: dict
    config: TrainConfig


# ---------------------------------------------------------------- evaluation

def metric_name(task: str) -> str:
    return "accuracy" if task == "classification" else "normalized_frobenius"


def _split_arrays(dataset: Dataset, split: str, task: str):
    X, y = dataset.part(split)
    if X.shape[0] == 0:
        raise ConfigError(f"{split} split is empty")
    return X, (X if task == "reconstruction" else y)


def evaluate(model: CaeModel, dataset: Dataset, split: str = "test") -> dict:
    """Discrete-selection metrics of ``model`` on one split."""
    if dataset.D != model.D:
        raise ConfigError(f"checkpoint expects D={model.D} features, dataset has D={dataset.D}")
    X, target = _split_arrays(dataset, split, model.task)
    pred = model.forward(X, mode="eval")
    loss = float(objectives.task_loss(model.task, pred, target).value)
    if model.task == "reconstruction":
        metric = objectives.normalized_frobenius(X, pred.value, dataset.D)
    else:
        metric = objectives.top1_accuracy(pred.value, target)
    selection = concrete.discrete_selection(model.selector)
    return {
        "split": split,
        "metric": metric_name(model.task),
        "value": metric,
        "loss": loss,
        "unique_pct": concrete.unique_percentage(model.selector),
        "selection": selection,
    }


# ---------------------------------------------------------------- training

def _out_dim(config: TrainConfig, dataset: Dataset) -> int:
    if config.task == "reconstruction":
        return dataset.D
    if dataset.y is None:
        raise ConfigError("classification needs labels")
    return dataset.n_classes


def new_model(config: TrainConfig, dataset: Dataset) -> CaeModel:
    if config.K > dataset.D:
        raise ConfigError(f"K={config.K} exceeds the number of features D={dataset.D}")
    return build_model(config.task, config.variant, config.K, dataset.D, _out_dim(config, dataset),
                       config.hidden, config.P, config.seed, bias=config.bias,
                       freeze_identity_weight=config.freeze_identity_weight, config=config.to_dict())


def train(config: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the full schedule and keep the weights with the lowest validation loss.

    Validation uses discrete (argmax) selection.  The temperature for epoch b
    (0-based) is T0 (TB/T0)^(b/B).
    """
    config.validate()
    model = new_model(config, dataset)
    task = config.task
    X_tr, target_tr = _split_arrays(dataset, "train", task)
    _split_arrays(dataset, "val", task)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.lr, config.weight_decay)
    sched = TemperatureSchedule(config.T0, config.TB, config.epochs)
    shuffle_rng = Rng(config.seed, "shuffle")
    noise_rng = Rng(config.seed, "gumbel")
    mlog = MetricLog(metric_name(task), trace=analysis.UpdateTrace() if config.trace else None)
    best_loss = math.inf
    best_tensors = model.snapshot()
    n = X_tr.shape[0]
    step = 0
    for epoch in range(config.epochs):
        T = sched(epoch)
        lr = lr_schedule(epoch, config.lr, config.warmup_epochs)
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            pred = model.forward(X_tr[idx], T, noise_rng, mode="train")
            loss = objectives.regularized_loss(
                objectives.task_loss(task, pred, target_tr[idx]), concrete.logits(model.selector), config.lam)
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {batch_no}")
            ad.zero_grad(params)
            ad.backward(loss)
            before = analysis.capture(model.selector) if config.trace else None
            opt.step(lr)
            if config.trace:
                mlog.trace.records.append(analysis.trace_record(step, epoch, before, model.selector))
            total += value * len(idx)
            step += 1
        ad.zero_grad(params)
        val = evaluate(model, dataset, "val")
        alpha_norm, psi_norm, w_norm = analysis.param_norms(model.selector)
        mlog.rows.append({
            "epoch": epoch,
            "temperature": T,
            "lr": lr,
            "train_loss": total / n,
            "val_loss": val["loss"],
            "val_metric": val["value"],
            "unique_pct": val["unique_pct"],
            "gjsd": float(objectives.gjsd(concrete.logits(model.selector)).value),
            "alpha_norm": alpha_norm,
            "psi_norm": psi_norm,
            "w_norm": w_norm,
        })
        if val["loss"] < best_loss:
            best_loss = val["loss"]
            best_tensors = model.snapshot()
            mlog.best_epoch = epoch
    model.load_tensors(best_tensors)
    test = evaluate(model, dataset, "test")
    mlog.test_metric = test["value"]
    mlog.selection = test["selection"]
    return TrainResult(mlog, model, best_tensors, config)


# ---------------------------------------------------------------- speedup

NO_SPEEDUP = math.inf


def speedup(log_a: MetricLog, log_b: MetricLog) -> float:
    """Epochs of run b divided by epochs run a needs to match b's best validation metric.

    Returns :data:`NO_SPEEDUP` (infinity) when run a never matches it.
    """
    if log_a.metric != log_b.metric:
        raise ValueError(f"metric mismatch: {log_a.metric} vs {log_b.metric}")
    vb = log_b.column("val_metric")
    target = max(vb) if log_b.higher_is_better else min(vb)
    for i, v in enumerate(log_a.column("val_metric")):
        if (v >= target) if log_a.higher_is_better else (v <= target):
            return log_b.epochs / (i + 1)
    return NO_SPEEDUP


def format_speedup(value: float) -> str:
    return "no speedup" if value == NO_SPEEDUP else f"{value:.2f}x"


# ---------------------------------------------------------------- data + runs

def load_raw(config: TrainConfig) -> Dataset:
    if config.synthetic is not None:
        return gen_synthetic(config.synthetic)
    if config.data is None:
        raise ConfigError("config needs either data or synthetic")
    label = config.data.label if config.task == "classification" else None
    return load_csv(config.data.path, label)


def prepare_for(config: TrainConfig, raw: Dataset):
    impute = config.data.impute if config.data else "none"
    return prepare(raw, tuple(config.split), config.split_seed, impute)


def checkpoint_meta(result: TrainResult, stats: MinMaxStats) -> dict:
    return {
        "config": result.config.to_dict(),
        "D": result.model.D,
        "best_epoch": result.log.best_epoch,
        "minmax_low": [float(v) for v in stats.low],
        "minmax_high": [float(v) for v in stats.high],
    }


def summary(results: list[TrainResult]) -> dict:
    tests = [r.log.test_metric for r in results]
    ups = [r.log.final("unique_pct") for r in results]
    return {
        "metric": results[0].log.metric,
        "runs": [{
            "seed": r.config.seed,
            "best_epoch": r.log.best_epoch,
            "best_val_loss": r.log.rows[r.log.best_epoch]["val_loss"],
            "best_val_metric": r.log.rows[r.log.best_epoch]["val_metric"],
            "test_metric": r.log.test_metric,
            "final_unique_pct": r.log.final("unique_pct"),
            "selection": r.log.selection,
        } for r in results],
        "test_metric_mean": float(np.mean(tests)),
        "test_metric_std": float(np.std(tests)),
        "final_unique_pct_mean": float(np.mean(ups)),
        "final_unique_pct_std": float(np.std(ups)),
    }


def write_run(result: TrainResult, stats: MinMaxStats, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json", "checkpoint": out / "checkpoint.npz"}
    paths["metrics"].write_text(result.log.to_csv(), encoding="utf-8")
    paths["summary"].write_text(json.dumps(summary([result]), indent=2, sort_keys=True), encoding="utf-8")
    save_checkpoint(paths["checkpoint"], result.best_tensors, checkpoint_meta(result, stats))
    if result.log.trace is not None:
        paths["trace"] = out / "trace.csv"
        paths["trace"].write_text(result.log.trace_csv(), encoding="utf-8")
    return paths


def run(config: TrainConfig, out_dir=None, raw: Dataset | None = None) -> TrainResult:
    raw = load_raw(config) if raw is None else raw
    dataset, stats = prepare_for(config, raw)
    result = train(config, dataset)
    if out_dir is not None:
        write_run(result, stats, out_dir)
    return result


def model_from_checkpoint(path) -> tuple[CaeModel, dict]:
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    psi = tensors["selector.psi"]
    last = max(int(k.split(".")[1]) for k in tensors if k.startswith("decoder."))
    out_dim = tensors[f"decoder.{last}.weight"].shape[1]
    model = build_model(cfg.task, cfg.variant, psi.shape[0], meta["D"], out_dim, cfg.hidden, psi.shape[1],
                        cfg.seed, bias="selector.bias" in tensors,
                        freeze_identity_weight=cfg.freeze_identity_weight, config=meta["config"])
    model.load_tensors(tensors)
    return model, meta


def evaluate_checkpoint(path, data_path, split: str = "test") -> dict:
    """Re-create the run's preprocessing on ``data_path`` and evaluate the checkpoint."""
    model, meta = model_from_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    label = None
    if cfg.task == "classification":
        label = cfg.data.label if cfg.data else "label"
    raw = load_csv(data_path, label)
    if raw.D != meta["D"]:
        raise ConfigError(f"checkpoint expects D={meta['D']} features, {data_path} has D={raw.D}")
    impute = cfg.data.impute if cfg.data else "none"
    stats = MinMaxStats(np.array(meta["minmax_low"]), np.array(meta["minmax_high"]))
    dataset, _ = prepare(raw, tuple(cfg.split), cfg.split_seed, impute, stats=stats)
    return evaluate(model, dataset, split)


# ---------------------------------------------------------------- sweeps

def with_axis(config: TrainConfig, axis: str, value) -> TrainConfig:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    attr = "lam" if axis == "lambda" else axis
    cfg = replace(config, **{attr: value})
    cfg.validate()
    return cfg


def sweep(config: TrainConfig, axis: str, values, seeds=None, raw: Dataset | None = None):
    """Independent runs for every (value, seed); failures are recorded, not raised.

    Returns (rows, results) where each row summarises one value across seeds.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    configs = [with_axis(config, axis, v) for v in values]  # validate everything up front
    raw = load_raw(config) if raw is None else raw
    rows = []
    results: dict = {}
    for value, cfg in zip(values, configs):
        done, errors = [], []
        for seed in seeds:
            try:
                res = run(replace(cfg, seed=seed), raw=raw)
                done.append(res)
            except (NumericalError, ConfigError, ValueError) as exc:
                log.error("sweep %s=%r seed %s failed: %s", axis, value, seed, exc)
                errors.append({"seed": seed, "error": str(exc)})
        results[value] = done
        row = {"axis": axis, "value": value, "n_runs": len(done), "errors": errors}
        if done:
            row.update(summary(done))
        rows.append(row)
    return rows, results
