"""Metrics, baselines and multi-seed experiment orchestration.

Two tasks are supported:

``next-location``
    Windows of consecutive fingerprints predict the next position. Models are
    the CMDRNN variants plus the ``knn`` (last fingerprint -> next position)
    and ``previous`` (repeat the last known position) baselines. Each path is
    split chronologically 80/20. RMSE is in the dataset's original units.

``recognition``
    Single fingerprints predict their own position. Models are ``m1``,
    ``m2`` and ``knn``, evaluated for several labeled fractions. The split
    seed fixes a random 80/20 train/test partition; the run seed picks the
    labeled subset and the weight initialisation. RMSE is in scaled units.

Reports are written as versioned JSON plus a flat CSV. Wall-clock times go
to a separate ``*-timing.csv`` so that reports are byte-reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import cmdrnn, vae
from .autodiff import NumericalError
from .data import Dataset, make_windows, split_chronological, split_labeled, split_random, stack_windows
from .rng import Streams

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
TASKS = ("next-location", "recognition")
BASELINES = ("knn", "previous")
DEFAULT_K = 3

# Reduced configurations that train in seconds to minutes on one CPU core on
# the synthetic corridor (20 APs, 2000 steps).
DESK_SCALE_CMDRNN = dict(filters=16, feature_units=32, hidden=32, mdn_hidden=32, mixtures=5, lr=5e-3, batch_size=32, epochs=120)
DESK_SCALE_VAE = dict(vae_epochs=50, predictor_steps=800)


def rmse(preds, targets) -> float:
    """sqrt of the mean squared Euclidean distance between paired points."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"rmse: shapes differ, {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("rmse: empty input")
    diff = (preds - targets).reshape(len(preds), -1)
    return float(np.sqrt((diff * diff).sum(axis=1).mean()))


def knn_predict(train_x, train_y, query, k: int = DEFAULT_K) -> np.ndarray:
    """Mean position of the k nearest training fingerprints (Euclidean).

    Distance ties go to the lower training index. ``query`` may be a single
    vector or a batch.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if len(train_x) == 0:
        raise ValueError("knn: empty training set")
    if not 1 <= k <= len(train_x):
        raise ValueError(f"knn: k={k} must be in [1, {len(train_x)}]")
    query = np.asarray(query, dtype=np.float64)
    single = query.ndim == 1
    q = np.atleast_2d(query)
    out = np.empty((len(q), train_y.shape[1]))
    for start in range(0, len(q), 256):
        block = q[start : start + 256]
        d = ((block[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=-1)
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        out[start : start + 256] = train_y[nearest].mean(axis=1)
    return out[0] if single else out


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class SeedResult:
    seed: int
    status: str = "ok"
    rmse: float | None = None
    metrics: dict = field(default_factory=dict)
    error: str | None = None
    wall_clock: float = 0.0


@dataclass
class RunReport:
    model: str
    task: str
    fraction: float
    config: dict
    per_seed: list[SeedResult]
    provenance: dict
    k: int | None = None
    parameter: str | None = None
    value: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def config_digest(self) -> str:
        return config_digest(self.config)

    @property
    def ok(self) -> list[SeedResult]:
        return [r for r in self.per_seed if r.status == "ok"]

    @property
    def values(self) -> np.ndarray:
        return np.array([r.rmse for r in self.ok], dtype=np.float64)

    @property
    def mean(self) -> float:
        v = self.values
        return float(v.mean()) if len(v) else math.nan

    @property
    def std(self) -> float:
        v = self.values
        return float(v.std()) if len(v) else math.nan

    @property
    def failed(self) -> bool:
        return not self.ok

    @property
    def wall_clock(self) -> float:
        return sum(r.wall_clock for r in self.per_seed)

    def metric_mean(self, name: str) -> float:
        v = [r.metrics[name] for r in self.ok if name in r.metrics]
        return float(np.mean(v)) if v else math.nan

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "task": self.task,
            "fraction": self.fraction,
            "parameter": self.parameter,
            "value": self.value,
            "config-digest": self.config_digest,
            "config": self.config,
            "k": self.k,
            "per-seed": [
                {"seed": r.seed, "status": r.status, "rmse": r.rmse, "metrics": r.metrics, "error": r.error}
                for r in self.per_seed
            ],
            "mean": None if self.failed else self.mean,
            "std": None if self.failed else self.std,
            "seeds-ok": len(self.ok),
            "provenance": self.provenance,
            "notes": self.notes,
        }


@dataclass
class ExperimentSpec:
    task: str
    models: tuple[str, ...]
    dataset: Dataset
    seeds: tuple[int, ...] = (0,)
    fractions: tuple[float, ...] = (1.0,)
    split_seed: int = 0
    test_fraction: float = 0.2
    k: int = DEFAULT_K
    config: dict = field(default_factory=dict)
    eval_samples: bool = True

    def __post_init__(self):
        self.models = tuple(self.models)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.fractions = tuple(float(f) for f in self.fractions)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        allowed = set(BASELINES) | (set(cmdrnn.VARIANTS) if self.task == "next-location" else {"m1", "m2", "knn"})
        unknown = [m for m in self.models if m not in allowed]
        if unknown:
            raise ValueError(f"models {unknown} not available for task {self.task}")
        if self.dataset.positions is None:
            raise ValueError("experiments need a dataset with positions")

    def model_config(self, model: str, seed: int) -> dict:
        if model in BASELINES:
            return {"k": self.k} if model == "knn" else {}
        if self.task == "next-location":
            return cmdrnn.CmdrnnConfig.for_variant(model, self.dataset.input_dim, **{**self.config, "seed": seed}).to_dict()
        return vae.VaeConfig(input_dim=self.dataset.input_dim, **{**self.config, "seed": seed}).to_dict()


# --- per-seed execution -------------------------------------------------------


def _next_location_seed(spec: ExperimentSpec, seed: int) -> dict:
    ds = spec.dataset
    train_ds, test_ds = split_chronological(ds, 1.0 - spec.test_fraction)
    memory = spec.config.get("memory", cmdrnn.CmdrnnConfig.memory)
    train_w, test_w = make_windows(train_ds, memory), make_windows(test_ds, memory)
    X, Y = stack_windows(train_w)
    Xt, Yt = stack_windows(test_w)
    unscale = ds.scaler.unscale if ds.scaler is not None else (lambda y: y)
    truth = unscale(Yt)
    results = {}
    for model in spec.models:
        start = time.perf_counter()
        res = SeedResult(seed)
        try:
            if model == "previous":
                preds = unscale(np.stack([w.previous for w in test_w]))
            elif model == "knn":
                preds = unscale(knn_predict(X[:, -1, :], Y, Xt[:, -1, :], spec.k))
            else:
                net = cmdrnn.Cmdrnn(cmdrnn.CmdrnnConfig(**spec.model_config(model, seed)))
                trace = cmdrnn.train(net, (X, Y))
                preds = unscale(net.predict_point(Xt))
                res.metrics["final-train-loss"] = trace.epoch_loss[-1] if trace.epoch_loss else None
                if net.cfg.head == "mdn" and spec.eval_samples:
                    rng = Streams(seed)["mixture-sampling"]
                    res.metrics["rmse-sample"] = rmse(unscale(net.predict_point(Xt, "sample", rng)), truth)
            res.rmse = rmse(preds, truth)
            res.metrics["rmse-scaled"] = rmse(preds if ds.scaler is None else ds.scaler.scale(preds), Yt)
        except (NumericalError, ValueError) as exc:
            res.status, res.error = "failed", str(exc)
            log.warning("%s seed %d failed: %s", model, seed, exc)
        res.wall_clock = time.perf_counter() - start
        results[(model, 1.0)] = res
    return results


def _recognition_seed(spec: ExperimentSpec, seed: int) -> dict:
    ds = spec.dataset
    train_ds, test_ds = split_random(ds, spec.test_fraction, spec.split_seed)
    results = {}
    model = None
    vae_error = None
    vae_time = 0.0
    if any(m in ("m1", "m2") for m in spec.models):
        start = time.perf_counter()
        try:
            model = vae.VaeModel(vae.VaeConfig(**spec.model_config("m1", seed)))
            model.scaler = ds.scaler
            vae.train_unsupervised(model, train_ds.rssi)
        except (NumericalError, ValueError) as exc:
            vae_error = str(exc)
        vae_time = time.perf_counter() - start
    for fraction in spec.fractions:
        labeled, _ = split_labeled(train_ds, fraction, seed)
        for name in spec.models:
            start = time.perf_counter()
            res = SeedResult(seed)
            try:
                if name == "knn":
                    preds = knn_predict(labeled.rssi, labeled.positions, test_ds.rssi, spec.k)
                elif name == "previous":
                    raise ValueError("'previous' baseline applies to next-location only")
                else:
                    if vae_error is not None:
                        raise ValueError(f"unsupervised phase failed: {vae_error}")
                    trainer = vae.train_m1 if name == "m1" else vae.train_m2
                    trainer(model, labeled.rssi, labeled.positions)
                    preds = model.predict(test_ds.rssi, rng=Streams(seed)[f"{name}-eval"])
                res.rmse = rmse(preds, test_ds.positions)
                if ds.scaler is not None:
                    res.metrics["rmse-units"] = rmse(ds.scaler.unscale(preds), ds.scaler.unscale(test_ds.positions))
            except (NumericalError, ValueError) as exc:
                res.status, res.error = "failed", str(exc)
                log.warning("%s fraction %g seed %d failed: %s", name, fraction, seed, exc)
            res.wall_clock = time.perf_counter() - start + (vae_time if name != "knn" else 0.0) / max(len(spec.fractions), 1)
            results[(name, fraction)] = res
    return results


def _run_seed(args) -> dict:
    spec, seed = args
    if spec.task == "next-location":
        return _next_location_seed(spec, seed)
    return _recognition_seed(spec, seed)


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> list[RunReport]:
    """Train and evaluate every (model, fraction) for each seed; one report per pair."""
    tasks = [(spec, s) for s in spec.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_run_seed, tasks))
    else:
        per_seed = [_run_seed(t) for t in tasks]
    fractions = spec.fractions if spec.task == "recognition" else (1.0,)
    provenance = {"dataset": spec.dataset.provenance, "split-seed": spec.split_seed, "records": len(spec.dataset)}
    reports = []
    for model in spec.models:
        for fraction in fractions:
            config = spec.model_config(model, 0)
            config.pop("seed", None)
            reports.append(
                RunReport(
                    model=model,
                    task=spec.task,
                    fraction=fraction,
                    config=config,
                    per_seed=[seeds[(model, fraction)] for seeds in per_seed],
                    provenance=provenance,
                    k=spec.k if model == "knn" else None,
                )
            )
    return reports


# --- sweeps and trace comparisons --------------------------------------------

SWEEP_PARAMETERS = {"mixture-count": "mixtures", "memory-length": "memory"}


def sweep(spec: ExperimentSpec, parameter: str, values: Sequence, jobs: int = 1) -> list[RunReport]:
    """One report per value of ``parameter`` for the first (CMDRNN) model in ``spec``."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {sorted(SWEEP_PARAMETERS)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    if spec.task != "next-location":
        raise ValueError("sweeps apply to the next-location models")
    key = SWEEP_PARAMETERS[parameter]
    reports = []
    for value in values:
        sub = dataclasses.replace(spec, models=spec.models[:1], config={**spec.config, key: int(value)})
        (report,) = run_experiment(sub, jobs)
        report.parameter, report.value = parameter, value
        reports.append(report)
    return reports


def best_value(reports: Sequence[RunReport]):
    """Sweep value with the lowest mean RMSE (first one on ties)."""
    usable = [r for r in reports if not r.failed]
    if not usable:
        raise ValueError("every sweep value failed")
    return min(usable, key=lambda r: r.mean).value


def training_traces(spec: ExperimentSpec, runs: dict[str, dict]) -> list[dict]:
    """Per-epoch training loss for named CMDRNN configurations.

    ``runs`` maps a label to (model, config overrides). Returns rows with
    label, seed, epoch and loss, ready for CSV.
    """
    train_ds, _ = split_chronological(spec.dataset, 1.0 - spec.test_fraction)
    rows = []
    for label, (model, overrides) in runs.items():
        cfg_dict = {**spec.config, **overrides}
        memory = cfg_dict.get("memory", cmdrnn.CmdrnnConfig.memory)
        X, Y = stack_windows(make_windows(train_ds, memory))
        for seed in spec.seeds:
            net = cmdrnn.ablation_variant(model, spec.dataset.input_dim, **{**cfg_dict, "seed": seed})
            trace = cmdrnn.train(net, (X, Y))
            rows.extend({"label": label, "seed": seed, "epoch": e + 1, "loss": loss} for e, loss in enumerate(trace.epoch_loss))
    return rows


def compare_optimizers(spec: ExperimentSpec, optimizers=("rmsprop", "adam")) -> list[dict]:
    model = spec.models[0]
    return training_traces(spec, {name: (model, {"optimizer": name}) for name in optimizers})


def compare_feature_detectors(spec: ExperimentSpec, variants=("rnn+mdn", "ae+rnn+mdn", "cmdrnn")) -> list[dict]:
    return training_traces(spec, {v: (v, {}) for v in variants})


def final_loss_ordering(rows: Sequence[dict]) -> list[tuple[str, float]]:
    """Labels sorted by mean final-epoch loss across seeds."""
    final: dict[str, dict[int, float]] = {}
    for row in rows:
        final.setdefault(row["label"], {})[row["seed"]] = row["loss"]
    return sorted(((label, float(np.mean(list(v.values())))) for label, v in final.items()), key=lambda t: t[1])


# --- report writing -----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def report_rows(reports: Sequence[RunReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        key = [r.model, _fmt(r.fraction), r.parameter or "", _fmt(r.value)]
        for s in r.per_seed:
            rows.append(key + [str(s.seed), s.status, _fmt(s.rmse), ""])
        rows.append(key + ["aggregate", "failed" if r.failed else "ok", _fmt(r.mean), _fmt(r.std)])
    return rows


REPORT_CSV_HEADER = ["model", "fraction", "parameter", "value", "seed", "status", "rmse", "std"]


def write_reports(reports: Sequence[RunReport], out_dir, stem: str = "report", extra: dict | None = None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / f"{stem}.json", "csv": out_dir / f"{stem}.csv", "timing": out_dir / f"{stem}-timing.csv"}
    doc = {"format-version": REPORT_FORMAT_VERSION, "reports": [r.to_dict() for r in reports], **(extra or {})}
    paths["json"].write_text(json.dumps(doc, indent=1, sort_keys=True))
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_HEADER)
        writer.writerows(report_rows(reports))
    with open(paths["timing"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fraction", "value", "seed", "seconds"])
        for r in reports:
            for s in r.per_seed:
                writer.writerow([r.model, _fmt(r.fraction), _fmt(r.value), s.seed, f"{s.wall_clock:.3f}"])
    return paths


def write_sweep_csv(reports: Sequence[RunReport], path) -> None:
    """RMSE mean and std per swept value."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "mean", "std", "seeds-ok"])
        for r in reports:
            writer.writerow([r.parameter, _fmt(r.value), _fmt(r.mean), _fmt(r.std), len(r.ok)])


def write_trace_csv(rows: Sequence[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "seed", "epoch", "loss"])
        for row in rows:
            writer.writerow([row["label"], row["seed"], row["epoch"], repr(float(row["loss"]))])
