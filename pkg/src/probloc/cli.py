"""Command-line entry point: ``probloc <subcommand> [flags]``.

Every subcommand resolves a flat key/value configuration (defaults, then an
optional ``--config`` file, then ``--set key=value`` pairs, then dedicated
flags), writes it to ``<out>/config.resolved`` and keeps every artifact under
``--out``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure. On
failure a single line ``probloc-error code=<n> kind=<kind> message=<text>`` is
printed on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import cmdrnn, evaluation, vae
from .autodiff import NumericalError
from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .data import (
    DataError,
    Dataset,
    load_csv,
    make_windows,
    preprocess,
    save_csv,
    split_chronological,
    split_labeled,
    split_random,
    stack_windows,
    synth_corridor,
)
from .rng import Streams

log = logging.getLogger("probloc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

SYNTH = "synth"

RUN_DEFAULTS = {
    # data
    "data": SYNTH,
    "schema": "generic",
    "paths": None,
    "dedup": None,
    "normalize_rssi": False,
    "n_aps": 20,
    "n_steps": 2000,
    "noise_db": 4.0,
    "synth_seed": 0,
    # protocol
    "model": None,
    "seed": 0,
    "seeds": None,
    "labeled_fraction": 1.0,
    "fractions": None,
    "k": evaluation.DEFAULT_K,
    "split_seed": 0,
    "test_fraction": 0.2,
    "checkpoint": None,
    "param": None,
    "values": None,
    "compare": "optimizers",
}

CMDRNN_KEYS = {f.name for f in dataclasses.fields(cmdrnn.CmdrnnConfig)} - {"input_dim", "seed"}
VAE_KEYS = {f.name for f in dataclasses.fields(vae.VaeConfig)} - {"input_dim", "seed"}
TUPLE_KEYS = {"ae_layers", "encoder_hidden", "decoder_hidden", "predictor_hidden", "paths", "fractions", "values"}
KNOWN_KEYS = set(RUN_DEFAULTS) | CMDRNN_KEYS | VAE_KEYS
VAE_MODELS = ("m1", "m2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- configuration ----------------------------------------------------------------


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_value(key: str, text: str):
    if "," in text:
        return tuple(_scalar(p) for p in text.split(",") if p.strip())
    value = _scalar(text)
    if key in TUPLE_KEYS and value is not None:
        return (value,)
    return value


def _norm_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key not in KNOWN_KEYS:
        raise UsageError(f"unknown configuration key {key!r}")
    return key


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc.message.splitlines()[0]}") from None
    return {_norm_key(k): parse_value(_norm_key(k), v) for k, v in parser["run"].items()}


def resolve_config(args) -> dict:
    cfg = dict(RUN_DEFAULTS)
    if args.config:
        cfg.update(read_config_file(args.config))
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = _norm_key(key)
        cfg[key] = parse_value(key, text)
    for key, value in vars(args).items():
        if key in KNOWN_KEYS and value is not None:
            cfg[key] = parse_value(key, value) if isinstance(value, str) else value
    return cfg


def seed_list(cfg: dict) -> tuple[int, ...]:
    """``seeds`` as a count N means seeds 0..N-1; a list is used as given."""
    seeds = cfg["seeds"]
    if seeds is None:
        return (int(cfg["seed"]),)
    if isinstance(seeds, tuple):
        return tuple(int(s) for s in seeds)
    if int(seeds) < 1:
        raise UsageError("--seeds must be >= 1")
    return tuple(range(int(seeds)))


def model_overrides(cfg: dict, kind: str) -> dict:
    """Model hyperparameters that were set explicitly; the rest keep model defaults."""
    keys = VAE_KEYS if kind == "vae" else CMDRNN_KEYS
    return {k: cfg[k] for k in keys if k in cfg}


def write_resolved(cfg: dict, out: Path, model_config: dict | None = None) -> None:
    lines = ["# resolved configuration; rerun with --config on this file"]
    merged = {**cfg, **{k: v for k, v in (model_config or {}).items() if k in KNOWN_KEYS}}
    for key in sorted(merged):
        value = merged[key]
        if isinstance(value, (tuple, list)):
            text = ",".join(str(v) for v in value)
        else:
            text = "none" if value is None else str(value)
        lines.append(f"{key} = {text}")
    (out / "config.resolved").write_text("\n".join(lines) + "\n")


# --- data ---------------------------------------------------------------------------


def load_dataset(cfg: dict) -> Dataset:
    if cfg["data"] in (None, SYNTH):
        ds = synth_corridor(
            n_aps=int(cfg["n_aps"]),
            n_steps=int(cfg["n_steps"]),
            noise_db=float(cfg["noise_db"]),
            seed=int(cfg["synth_seed"]),
            preprocessed=False,
        )
    else:
        ds = load_csv(cfg["data"], cfg["schema"])
    if cfg["paths"] is not None:
        keep = np.isin(ds.paths, np.asarray(cfg["paths"], dtype=np.int64))
        if not keep.any():
            raise DataError(f"no records on paths {list(cfg['paths'])}")
        ds = ds.subset(np.flatnonzero(keep))
    if ds.positions is None:
        raise DataError("dataset has no position columns")
    return preprocess(ds, dedup=cfg["dedup"], normalize_rssi=bool(cfg["normalize_rssi"]))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_predictions(path: Path, preds: np.ndarray, truth: np.ndarray) -> None:
    _write_rows(path, ["index", "pred_x", "pred_y", "true_x", "true_y"], ([i, *p, *t] for i, (p, t) in enumerate(zip(preds, truth))))


def _run_meta(cfg: dict) -> dict:
    keys = ("data", "schema", "paths", "dedup", "normalize_rssi", "n_aps", "n_steps", "noise_db", "synth_seed", "split_seed", "test_fraction", "labeled_fraction")
    return {k: list(cfg[k]) if isinstance(cfg[k], tuple) else cfg[k] for k in keys}


def _cfg_from_checkpoint(cfg: dict, args) -> dict:
    """Data settings come from the checkpoint unless given explicitly."""
    stored = load_checkpoint(cfg["checkpoint"]).get("run", {})
    explicit = set()
    if args.config:
        explicit |= set(read_config_file(args.config))
    explicit |= {_norm_key(s.split("=", 1)[0]) for s in args.set or () if "=" in s}
    explicit |= {k for k, v in vars(args).items() if k in KNOWN_KEYS and v is not None}
    merged = dict(cfg)
    for key, value in stored.items():
        if key not in explicit:
            merged[key] = tuple(value) if isinstance(value, list) else value
    return merged


# --- subcommands ----------------------------------------------------------------------


def cmd_synth_data(args, cfg) -> int:
    out = _out_dir(args)
    ds = synth_corridor(
        n_aps=int(cfg["n_aps"]), n_steps=int(cfg["n_steps"]), noise_db=float(cfg["noise_db"]), seed=int(cfg["synth_seed"]), preprocessed=False
    )
    save_csv(ds, out / "synth.csv")
    write_resolved(cfg, out)
    print(out / "synth.csv")
    return EXIT_OK


def _cmdrnn_data(cfg: dict, ds: Dataset, memory: int):
    train_ds, test_ds = split_chronological(ds, 1.0 - float(cfg["test_fraction"]))
    return stack_windows(make_windows(train_ds, memory)), stack_windows(make_windows(test_ds, memory))


def cmd_train_cmdrnn(args, cfg) -> int:
    out = _out_dir(args)
    ds = load_dataset(cfg)
    kind = cfg["model"] or "cmdrnn"
    if kind not in cmdrnn.VARIANTS:
        raise UsageError(f"--model must be one of {sorted(cmdrnn.VARIANTS)}")
    mcfg = cmdrnn.CmdrnnConfig.for_variant(kind, ds.input_dim, **{**model_overrides(cfg, "cmdrnn"), "seed": int(cfg["seed"])})
    write_resolved(cfg, out, mcfg.to_dict())
    (X, Y), (Xt, Yt) = _cmdrnn_data(cfg, ds, mcfg.memory)
    model = cmdrnn.Cmdrnn(mcfg)
    model.scaler = ds.scaler
    trace = cmdrnn.train(model, (X, Y))
    rows = [("pretrain", e + 1, v) for e, v in enumerate(trace.pretrain_loss)]
    rows += [("train", e + 1, v) for e, v in enumerate(trace.epoch_loss)]
    _write_rows(out / "trace.csv", ["phase", "epoch", "loss"], rows)
    model.save(out / "checkpoint.json", variant=kind, run=_run_meta(cfg))
    preds = ds.scaler.unscale(model.predict_point(Xt))
    _write_predictions(out / "predictions.csv", preds, ds.scaler.unscale(Yt))
    print(f"test-rmse={evaluation.rmse(preds, ds.scaler.unscale(Yt))!r}")
    return EXIT_OK


def _vae_split(cfg: dict, ds: Dataset):
    train_ds, test_ds = split_random(ds, float(cfg["test_fraction"]), int(cfg["split_seed"]))
    labeled, _ = split_labeled(train_ds, float(cfg["labeled_fraction"]), int(cfg["seed"]))
    return train_ds, test_ds, labeled


def _train_predictor_step(model, kind: str, labeled: Dataset, out: Path) -> None:
    trainer = vae.train_m1 if kind == "m1" else vae.train_m2
    losses = trainer(model, labeled.rssi, labeled.positions)
    _write_rows(out / f"trace-{kind}.csv", ["epoch", "loss"], ((e + 1, v) for e, v in enumerate(losses)))


def cmd_train_vae(args, cfg) -> int:
    out = _out_dir(args)
    ds = load_dataset(cfg)
    mcfg = vae.VaeConfig(input_dim=ds.input_dim, **{**model_overrides(cfg, "vae"), "seed": int(cfg["seed"])})
    write_resolved(cfg, out, mcfg.to_dict())
    train_ds, test_ds, labeled = _vae_split(cfg, ds)
    model = vae.VaeModel(mcfg)
    model.scaler = ds.scaler
    trace = vae.train_unsupervised(model, train_ds.rssi)
    _write_rows(
        out / "trace.csv",
        ["epoch", "reconstruction", "kl", "total"],
        ((e + 1, r, k, t) for e, (r, k, t) in enumerate(zip(trace.epoch_reconstruction, trace.epoch_kl, trace.epoch_total))),
    )
    kind = cfg["model"]
    if kind is not None:
        if kind not in VAE_MODELS:
            raise UsageError("train-vae --model must be m1 or m2")
        _train_predictor_step(model, kind, labeled, out)
        preds = model.predict(test_ds.rssi, rng=Streams(mcfg.seed)[f"{kind}-eval"])
        _write_predictions(out / "predictions.csv", preds, test_ds.positions)
        print(f"test-rmse={evaluation.rmse(preds, test_ds.positions)!r}")
    model.save(out / "checkpoint.json", run=_run_meta(cfg))
    return EXIT_OK


def cmd_train_predictor(args, cfg) -> int:
    if cfg["checkpoint"] is None:
        raise UsageError("train-predictor needs --checkpoint (a VAE checkpoint)")
    cfg = _cfg_from_checkpoint(cfg, args)
    out = _out_dir(args)
    kind = cfg["model"] or "m2"
    if kind not in VAE_MODELS:
        raise UsageError("train-predictor --model must be m1 or m2")
    model = vae.VaeModel.load(cfg["checkpoint"])
    # predictor hyperparameters may be overridden at this stage
    pred_keys = {"predictor_hidden", "dropout", "lr", "sigma_y", "samples", "m2_input", "predictor_epochs", "predictor_steps", "batch_size"}
    updates = {k: cfg[k] for k in pred_keys if k in cfg}
    model.cfg = dataclasses.replace(model.cfg, **updates, seed=int(cfg["seed"]))
    model.streams = Streams(model.cfg.seed)
    write_resolved(cfg, out, model.cfg.to_dict())
    ds = load_dataset(cfg)
    _, test_ds, labeled = _vae_split(cfg, ds)
    _train_predictor_step(model, kind, labeled, out)
    preds = model.predict(test_ds.rssi, rng=Streams(model.cfg.seed)[f"{kind}-eval"])
    _write_predictions(out / "predictions.csv", preds, test_ds.positions)
    model.save(out / "checkpoint.json", run=_run_meta(cfg))
    print(f"test-rmse={evaluation.rmse(preds, test_ds.positions)!r}")
    return EXIT_OK


def _checkpoint_predictions(cfg: dict):
    """(model name, seed, predictions, truth) for the test split of a checkpoint."""
    doc = load_checkpoint(cfg["checkpoint"])
    ds = load_dataset(cfg)
    if doc["kind"] == "cmdrnn":
        model = cmdrnn.Cmdrnn.load(cfg["checkpoint"])
        if model.cfg.input_dim != ds.input_dim:
            raise DataError(f"checkpoint expects {model.cfg.input_dim} WAPs, data has {ds.input_dim}")
        _, (Xt, Yt) = _cmdrnn_data(cfg, ds, model.cfg.memory)
        unscale = ds.scaler.unscale
        return doc.get("variant", "cmdrnn"), model.cfg.seed, unscale(model.predict_point(Xt)), unscale(Yt)
    model = vae.VaeModel.load(cfg["checkpoint"])
    if model.predictor is None:
        raise UsageError("VAE checkpoint has no trained predictor; run train-predictor first")
    if model.cfg.input_dim != ds.input_dim:
        raise DataError(f"checkpoint expects {model.cfg.input_dim} WAPs, data has {ds.input_dim}")
    _, test_ds = split_random(ds, float(cfg["test_fraction"]), int(cfg["split_seed"]))
    preds = model.predict(test_ds.rssi, rng=Streams(model.cfg.seed)[f"{model.kind}-eval"])
    return model.kind, model.cfg.seed, preds, test_ds.positions


def cmd_predict(args, cfg) -> int:
    if cfg["checkpoint"] is None:
        raise UsageError("predict needs --checkpoint")
    cfg = _cfg_from_checkpoint(cfg, args)
    out = _out_dir(args)
    write_resolved(cfg, out)
    _, _, preds, truth = _checkpoint_predictions(cfg)
    _write_predictions(out / "predictions.csv", preds, truth)
    print(out / "predictions.csv")
    return EXIT_OK


def _models(cfg: dict) -> tuple[str, ...]:
    models = cfg["model"]
    if models is None:
        raise UsageError("--model is required")
    return models if isinstance(models, tuple) else (models,)


def _spec(cfg: dict, ds: Dataset, models: tuple[str, ...]) -> evaluation.ExperimentSpec:
    task = "recognition" if any(m in VAE_MODELS for m in models) else "next-location"
    if task == "recognition":
        fractions = cfg["fractions"] or (float(cfg["labeled_fraction"]),)
        overrides = model_overrides(cfg, "vae")
    else:
        fractions = (1.0,)
        overrides = model_overrides(cfg, "cmdrnn")
    try:
        return evaluation.ExperimentSpec(
            task=task,
            models=models,
            dataset=ds,
            seeds=seed_list(cfg),
            fractions=tuple(fractions),
            split_seed=int(cfg["split_seed"]),
            test_fraction=float(cfg["test_fraction"]),
            k=int(cfg["k"]),
            config=overrides,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _exit_for(reports) -> int:
    if any(r.failed for r in reports):
        failed = [f"{r.model}@{r.fraction:g}" for r in reports if r.failed]
        raise NumericalError(f"every seed failed for {', '.join(failed)}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    if cfg["checkpoint"] is not None:
        cfg = _cfg_from_checkpoint(cfg, args)
        out = _out_dir(args)
        write_resolved(cfg, out)
        name, seed, preds, truth = _checkpoint_predictions(cfg)
        if cfg["model"] is not None and cfg["model"] != name:
            raise UsageError(f"--model {cfg['model']} does not match checkpoint model {name}")
        doc = load_checkpoint(cfg["checkpoint"])
        report = evaluation.RunReport(
            model=name,
            task="next-location" if doc["kind"] == "cmdrnn" else "recognition",
            fraction=float(cfg["labeled_fraction"]) if doc["kind"] == "vae" else 1.0,
            config=doc["config"],
            per_seed=[evaluation.SeedResult(seed, rmse=evaluation.rmse(preds, truth))],
            provenance={"dataset": str(cfg["data"]), "split-seed": int(cfg["split_seed"]), "checkpoint": Path(cfg["checkpoint"]).name},
        )
        evaluation.write_reports([report], out)
        print(f"rmse={report.mean!r}")
        return EXIT_OK
    out = _out_dir(args)
    ds = load_dataset(cfg)
    spec = _spec(cfg, ds, _models(cfg))
    write_resolved(cfg, out)
    reports = evaluation.run_experiment(spec, jobs=args.jobs)
    evaluation.write_reports(reports, out)
    for r in reports:
        print(f"{r.model} fraction={r.fraction:g} mean={r.mean!r} std={r.std!r} seeds-ok={len(r.ok)}/{len(r.per_seed)}")
    return _exit_for(reports)


def cmd_sweep(args, cfg) -> int:
    out = _out_dir(args)
    if cfg["param"] is None or cfg["values"] is None:
        raise UsageError("sweep needs --param and --values")
    ds = load_dataset(cfg)
    spec = _spec(cfg, ds, _models({**cfg, "model": cfg["model"] or "cmdrnn"}))
    write_resolved(cfg, out)
    try:
        reports = evaluation.sweep(spec, cfg["param"], cfg["values"], jobs=args.jobs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    evaluation.write_reports(reports, out, "sweep-report")
    evaluation.write_sweep_csv(reports, out / "sweep.csv")
    for r in reports:
        print(f"{r.parameter}={r.value} mean={r.mean!r} std={r.std!r}")
    if all(r.failed for r in reports):
        raise NumericalError("every sweep value failed")
    print(f"best={evaluation.best_value(reports)}")
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    out = _out_dir(args)
    ds = load_dataset(cfg)
    spec = _spec(cfg, ds, _models({**cfg, "model": cfg["model"] or "cmdrnn"}))
    write_resolved(cfg, out)
    if cfg["compare"] == "optimizers":
        rows = evaluation.compare_optimizers(spec)
        # one learning rate for both; no separate Adam rate is assumed
        print(f"note: shared lr={spec.config.get('lr', cmdrnn.CmdrnnConfig.lr)!r} for every optimizer")
    elif cfg["compare"] == "feature-detectors":
        rows = evaluation.compare_feature_detectors(spec)
    else:
        raise UsageError("--compare must be 'optimizers' or 'feature-detectors'")
    evaluation.write_trace_csv(rows, out / f"compare-{cfg['compare']}.csv")
    ordering = evaluation.final_loss_ordering(rows)
    for rank, (label, loss) in enumerate(ordering, 1):
        print(f"rank={rank} label={label} final-loss={loss!r}")
    return EXIT_OK


def cmd_export_latent(args, cfg) -> int:
    if cfg["checkpoint"] is None:
        raise UsageError("export-latent needs --checkpoint (a VAE checkpoint)")
    cfg = _cfg_from_checkpoint(cfg, args)
    out = _out_dir(args)
    write_resolved(cfg, out)
    model = vae.VaeModel.load(cfg["checkpoint"])
    ds = load_dataset(cfg)
    if model.cfg.input_dim != ds.input_dim:
        raise DataError(f"checkpoint expects {model.cfg.input_dim} WAPs, data has {ds.input_dim}")
    vae.write_latent_csv(vae.export_latent(model, ds), out / "latent.csv", model.cfg.latent_dim)
    print(out / "latent.csv")
    return EXIT_OK


COMMANDS = {
    "synth-data": (cmd_synth_data, "write a synthetic corridor dataset as CSV"),
    "train-cmdrnn": (cmd_train_cmdrnn, "train a next-location model (any variant)"),
    "train-vae": (cmd_train_vae, "train the VAE, optionally followed by a predictor"),
    "train-predictor": (cmd_train_predictor, "train an M1/M2 predictor on a saved VAE"),
    "predict": (cmd_predict, "write predicted-vs-truth positions for a checkpoint"),
    "evaluate": (cmd_evaluate, "evaluate a checkpoint, or run a multi-seed experiment"),
    "sweep": (cmd_sweep, "sweep mixture-count or memory-length over seeds"),
    "compare": (cmd_compare, "loss traces for optimizers or feature detectors"),
    "export-latent": (cmd_export_latent, "write latent means with building/floor labels"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="probloc", description="Probabilistic indoor localization from WiFi fingerprints.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", default="probloc-out", help="output directory (default: %(default)s)")
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        p.add_argument("--jobs", type=int, default=1, help="parallel seeds (default: 1)")
        p.add_argument("--data", help=f"CSV path, or '{SYNTH}' for the synthetic corridor")
        p.add_argument("--schema", choices=("generic", "tampere", "ujiindoorloc"))
        p.add_argument("--model", help="model name; evaluate accepts a comma-separated list")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", help="a count N (seeds 0..N-1) or a comma-separated list")
        p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float)
        p.add_argument("--fractions", help="comma-separated labeled fractions")
        p.add_argument("--checkpoint")
        p.add_argument("--epochs", type=int)
        p.add_argument("--param", choices=sorted(evaluation.SWEEP_PARAMETERS))
        p.add_argument("--values", help="comma-separated sweep values")
        p.add_argument("--compare", choices=("optimizers", "feature-detectors"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"probloc-error code={code} kind={kind} message={text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        handler = COMMANDS[args.command][0]
        # overflow is reported once, as a NumericalError, not as numpy warnings
        with np.errstate(all="ignore"):
            return handler(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (ValueError, TypeError) as exc:
        # invalid model hyperparameters surface here
        return _fail(EXIT_USAGE, "usage", exc)


if __name__ == "__main__":
    sys.exit(main())
