"""Experiment runner: end-to-end training plus probes for each
configuration, with machine-readable JSON/CSV/PGM outputs.

Subcommands: ``run`` (one experiment/variant/seed), ``suite`` (cross
product of seeds and variants with an aggregate table), ``fetch-mnist``
(download the four canonical IDX files). Exit codes: 0 success, 1 run
error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import gzip
import json
import math
import os
import sys
import time
import urllib.request
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import (
    LorenzConfig, MnistConfig, SineConfig, ViewBatch,
    build_lorenz_dataset, gen_sine_batch, load_mnist_idx, split_vertical,
)
from .eval import (
    ProbeConfig, denormalize_to_u8, forecast_table, generative_decoder,
    linear_probe_classify, protocol_a, protocol_b, write_pgm,
)
from .jepa import BiJepaModel, ConstraintMode, train_step
from .nn import (
    build_conv_encoder, build_mlp_encoder, build_predictor, init_parameters,
)
from .optim import AdamW, EmaConfig
from .seeding import derive_seed, stream


class ConfigError(ValueError):
    """Invalid experiment/variant/override combination."""


_EXPERIMENTS = ("sine", "lorenz", "mnist")

# variant -> (constraint mode, is_classic)
_VARIANTS = {
    "bijepa-expressive": (ConstraintMode.EXPRESSIVE, False),
    "bijepa-unconstrained": (ConstraintMode.UNCONSTRAINED, False),
    "bijepa-restrictive": (ConstraintMode.RESTRICTIVE, False),
    "classic": (ConstraintMode.EXPRESSIVE, True),
}


@dataclass
class RunConfig:
    experiment: str
    variant: str
    alpha: float = 0.5
    seed: int = 0
    out_dir: str | None = None
    mnist_dir: str | None = None
    steps: int | None = None
    epochs: int | None = None
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    final_train_loss: float
    loss_history: list
    protocol_a_mse: float | None
    protocol_b_mse: float | None
    accuracy: float | None
    decoder_mse: float | None
    diverged: bool
    wall_time: float
    forecast: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls(**json.loads(text))


def _base_hyper(experiment: str) -> dict:
    if experiment == "sine":
        return {
            "lr": 1e-3, "steps": 2000, "batch": 64, "tau": 0.995,
            "enc_in": 10, "enc_hidden": 64, "emb_dim": 16, "pred_hidden": 64,
            "noise_std": 0.05,
            "probe_lr": 1e-3, "probe_steps": 2000,
            "probe_set_size": 1024, "test_batch": 64,
        }
    if experiment == "lorenz":
        return {
            "lr": 5e-4, "steps": 3000, "batch": 64, "tau": 0.995,
            "enc_in": 60, "enc_hidden": 128, "emb_dim": 32, "pred_hidden": 128,
            "integrator": "euler",
            "probe_lr": 1e-3, "probe_steps": 2000,
        }
    if experiment == "mnist":
        return {
            "lr": 1e-3, "epochs": 10, "batch": 256, "tau": 0.99,
            "emb_dim": 64, "pred_hidden": 128,
            "train_limit": 0,  # 0 = full train split
            # probes get a larger lr than the encoder: a 64->10 softmax
            # head needs weights of order 10 and will not plateau within
            # 10 epochs at 1e-3
            "probe_lr": 1e-2, "probe_epochs": 10, "probe_batch": 256,
        }
    raise ConfigError(f"unknown experiment {experiment!r}; choose from {_EXPERIMENTS}")


def effective_hyper(cfg: RunConfig) -> tuple[dict, ConstraintMode]:
    """Merge defaults, variant constraints, and user overrides into the
    fully explicit hyperparameter dict echoed by the report."""
    if cfg.experiment not in _EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {_EXPERIMENTS}")
    if cfg.variant not in _VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}; choose from {tuple(_VARIANTS)}")
    mode, is_classic = _VARIANTS[cfg.variant]
    if mode is ConstraintMode.UNCONSTRAINED and cfg.experiment != "sine":
        raise ConfigError(
            "the unconstrained variant is only defined for the sine experiment "
            "(its divergence study); pick expressive/restrictive/classic here")

    hyper = _base_hyper(cfg.experiment)
    hyper["weight_decay"] = mode.weight_decay
    hyper["alpha"] = 1.0 if is_classic else cfg.alpha
    if cfg.steps is not None:
        if "steps" not in hyper:
            raise ConfigError(f"--steps does not apply to {cfg.experiment}; use --epochs")
        hyper["steps"] = cfg.steps
    if cfg.epochs is not None:
        if "epochs" not in hyper:
            raise ConfigError(f"--epochs does not apply to {cfg.experiment}; use --steps")
        hyper["epochs"] = cfg.epochs
    for key, value in cfg.overrides.items():
        if key not in hyper:
            raise ConfigError(
                f"unknown override {key!r} for {cfg.experiment}; valid keys: "
                f"{sorted(hyper)}")
        hyper[key] = type_coerce(hyper[key], value, key)
    if not 0.0 <= hyper["alpha"] <= 1.0:
        raise ConfigError(f"alpha must lie in [0,1], got {hyper['alpha']}")
    return hyper, mode


def type_coerce(default, value, key: str):
    """Coerce an override onto its default's type."""
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"override {key} needs an integer, got {value!r}")
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"override {key} needs a number, got {value!r}")
    return value


def _build_model(cfg: RunConfig, hyper: dict, mode: ConstraintMode) -> BiJepaModel:
    alpha = hyper["alpha"]
    with_ln = mode.with_ln
    if cfg.experiment == "mnist":
        def enc_builder():
            return build_conv_encoder()
    else:
        def enc_builder():
            return build_mlp_encoder(hyper["enc_in"], hyper["enc_hidden"],
                                     hyper["emb_dim"], with_ln)
    encoder = enc_builder()
    init_parameters(encoder, derive_seed(cfg.seed, "init:encoder"))
    p_fwd = build_predictor(hyper["emb_dim"], hyper["pred_hidden"], with_ln)
    init_parameters(p_fwd, derive_seed(cfg.seed, "init:p-fwd"))
    p_bwd = None
    if alpha != 1.0:
        p_bwd = build_predictor(hyper["emb_dim"], hyper["pred_hidden"], with_ln)
        init_parameters(p_bwd, derive_seed(cfg.seed, "init:p-bwd"))
    return BiJepaModel.create(encoder, enc_builder, p_fwd, p_bwd,
                              alpha, EmaConfig(hyper["tau"]), mode)


def _train(model: BiJepaModel, opt: AdamW, batches, n_steps: int):
    """Drive train_step over a batch iterator; returns (history, diverged).

    History rows are [step, total, fwd, bwd, emb_norm]. A non-finite
    loss stops training immediately; a merely huge loss only flags the
    run and keeps recording (the divergence study needs the full trace).
    """
    model.train_mode()
    history = []
    diverged = False
    for step in range(n_steps):
        batch = next(batches)
        m = train_step(model, opt, batch.x, batch.y, step)
        history.append([step, m.total_loss, m.fwd_loss, m.bwd_loss,
                        m.mean_embedding_norm])
        diverged = diverged or m.diverged
        if not math.isfinite(m.total_loss):
            break
    return history, diverged


def _final_loss(history: list) -> float:
    tail = [row[1] for row in history[-100:] if math.isfinite(row[1])]
    return float(np.mean(tail)) if tail else float("nan")


def _sine_batches(cfg: SineConfig, rng):
    while True:
        yield gen_sine_batch(cfg, rng)


def _index_batches(rng, n: int, batch: int, drop_last: bool):
    while True:
        order = rng.permutation(n)
        end = n - batch + 1 if drop_last else n
        for start in range(0, max(end, 1), batch):
            yield order[start:start + batch]


@dataclass
class _Splits:
    probe: ViewBatch
    test: ViewBatch


@dataclass
class _MnistSplits:
    train: ViewBatch
    test: ViewBatch


def run(cfg: RunConfig) -> ExperimentReport:
    """Train one configuration end to end, run its probes, and write all
    artifacts when an output directory is configured."""
    t0 = time.perf_counter()
    hyper, mode = effective_hyper(cfg)
    model = _build_model(cfg, hyper, mode)
    opt = AdamW(model.trainable_parameters(), lr=hyper["lr"],
                weight_decay=hyper["weight_decay"])
    probe_cfg = ProbeConfig(kind="linear", lr=hyper["probe_lr"],
                            steps=hyper.get("probe_steps", 2000),
                            epochs=hyper.get("probe_epochs", 10),
                            batch=hyper.get("probe_batch", 256),
                            seed=derive_seed(cfg.seed, "probe"))

    proto_a = proto_b = acc = dec_mse = None
    forecast: list = []
    images = None

    if cfg.experiment == "sine":
        data_cfg = SineConfig(noise_std=hyper["noise_std"], batch=hyper["batch"])
        batches = _sine_batches(data_cfg, stream(cfg.seed, "data:sine"))
        history, diverged = _train(model, opt, batches, hyper["steps"])
        splits = _Splits(
            probe=gen_sine_batch(
                SineConfig(noise_std=hyper["noise_std"], batch=hyper["probe_set_size"]),
                stream(cfg.seed, "data:sine-probe")),
            test=gen_sine_batch(
                SineConfig(noise_std=hyper["noise_std"], batch=hyper["test_batch"]),
                stream(cfg.seed, "data:sine-test")),
        )
        ra = protocol_a(model, splits, probe_cfg)
        rb = protocol_b(model, splits, probe_cfg)
        proto_a, proto_b = ra.mse, rb.mse
        forecast = forecast_table(splits.test, ra, rb)

    elif cfg.experiment == "lorenz":
        data_cfg = LorenzConfig(integrator=hyper["integrator"])
        dataset = build_lorenz_dataset(data_cfg, cfg.seed)
        idx = _index_batches(stream(cfg.seed, "data:batches"),
                             dataset.train.size, hyper["batch"], drop_last=True)
        batches = (dataset.train.take(i) for i in idx)
        history, diverged = _train(model, opt, batches, hyper["steps"])
        ra = protocol_a(model, dataset, probe_cfg)
        rb = protocol_b(model, dataset, probe_cfg)
        proto_a, proto_b = ra.mse, rb.mse
        forecast = forecast_table(dataset.test, ra, rb)

    else:  # mnist
        data_cfg = MnistConfig(batch=hyper["batch"])
        train_views, test_views = _load_mnist_views(cfg, data_cfg, hyper["train_limit"])
        idx = _index_batches(stream(cfg.seed, "data:batches"),
                             train_views.size, hyper["batch"], drop_last=False)
        batches = (train_views.take(i) for i in idx)
        steps_per_epoch = math.ceil(train_views.size / hyper["batch"])
        history, diverged = _train(model, opt, batches,
                                   hyper["epochs"] * steps_per_epoch)
        mnist = _MnistSplits(train=train_views, test=test_views)
        racc = linear_probe_classify(model, mnist, probe_cfg)
        rdec = generative_decoder(model, mnist, probe_cfg,
                                  pixel_std=data_cfg.norm_std)
        acc, dec_mse = racc.accuracy, rdec.mse
        images = _triptychs(test_views, rdec.predictions, data_cfg)

    report = ExperimentReport(
        config=_echo_config(cfg, hyper, mode),
        final_train_loss=_final_loss(history),
        loss_history=history,
        protocol_a_mse=proto_a,
        protocol_b_mse=proto_b,
        accuracy=acc,
        decoder_mse=dec_mse,
        diverged=diverged,
        wall_time=time.perf_counter() - t0,
        forecast=forecast,
    )
    if images is not None:
        report._images = images
    if cfg.out_dir is not None:
        emit_outputs(report, cfg.out_dir)
    return report


def _echo_config(cfg: RunConfig, hyper: dict, mode: ConstraintMode) -> dict:
    echo = {
        "experiment": cfg.experiment,
        "variant": cfg.variant,
        "constraint_mode": mode.value,
        "seed": cfg.seed,
    }
    echo.update(sorted(hyper.items()))
    return echo


def resolve_mnist_dir(explicit: str | None) -> Path:
    """--mnist-dir flag, then BIJEPA_MNIST_DIR, then ./mnist-data."""
    for candidate in (explicit, os.environ.get("BIJEPA_MNIST_DIR"), "mnist-data"):
        if candidate:
            d = Path(candidate)
            if (d / "train-images-idx3-ubyte").exists():
                return d
    raise FileNotFoundError(
        "MNIST IDX files not found; pass --mnist-dir, set BIJEPA_MNIST_DIR, "
        "or run `bijepa fetch-mnist --out mnist-data`")


def _load_mnist_views(cfg: RunConfig, data_cfg: MnistConfig, train_limit: int):
    d = resolve_mnist_dir(cfg.mnist_dir)
    train_x, train_y = load_mnist_idx(d / "train-images-idx3-ubyte",
                                      d / "train-labels-idx1-ubyte", data_cfg)
    test_x, test_y = load_mnist_idx(d / "t10k-images-idx3-ubyte",
                                    d / "t10k-labels-idx1-ubyte", data_cfg)
    if train_limit:
        train_x, train_y = train_x[:train_limit], train_y[:train_limit]
    return (split_vertical(train_x, train_y, data_cfg),
            split_vertical(test_x, test_y, data_cfg))


def _triptychs(test_views: ViewBatch, generated: np.ndarray,
               data_cfg: MnistConfig, count: int = 8) -> list:
    """Per-sample image trio: context half, generated half, true half."""
    images = []
    n = min(count, test_views.size)
    for i in range(n):
        ctx = denormalize_to_u8(test_views.x.values[i, 0], data_cfg)
        gen = denormalize_to_u8(generated[i].reshape(28, 14), data_cfg)
        tru = denormalize_to_u8(test_views.y.values[i, 0], data_cfg)
        images.append((f"recon_{i:02d}_input.pgm", ctx))
        images.append((f"recon_{i:02d}_gen.pgm", gen))
        images.append((f"recon_{i:02d}_truth.pgm", tru))
    return images


def emit_outputs(report: ExperimentReport, out_dir) -> list[Path]:
    """Write report.json, loss.csv, forecast.csv, and any reconstruction
    images into out_dir. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "report.json"
    path.write_text(report.to_json(), encoding="utf-8")
    written.append(path)

    path = out / "loss.csv"
    lines = ["step,total,fwd,bwd,emb_norm"]
    for step, total, fwd, bwd, norm in report.loss_history:
        lines.append(f"{step},{total!r},{fwd!r},{bwd!r},{norm!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)

    if report.forecast:
        path = out / "forecast.csv"
        lines = ["sample,truth,proto_a,proto_b"]
        for rec in report.forecast:
            lines.append(f"{rec['sample']},{rec['truth']!r},"
                         f"{rec['proto_a']!r},{rec['proto_b']!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    for name, image in getattr(report, "_images", []) or []:
        path = out / name
        write_pgm(path, image)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# suite


def run_suite(seeds: list[int], variants: list[str], experiment: str,
              out_dir=None, mnist_dir=None, alpha: float = 0.5,
              overrides: dict | None = None, epochs: int | None = None,
              steps: int | None = None) -> dict:
    """Cross product of seeds and variants with per-variant means and
    ordering verdicts. Member failures are recorded, not fatal."""
    if not seeds:
        raise ConfigError("suite needs at least one seed")
    if not variants:
        raise ConfigError("suite needs at least one variant")
    for v in variants:
        # fail fast on config errors before any training runs
        effective_hyper(RunConfig(experiment, v, alpha=alpha, steps=steps,
                                  epochs=epochs, overrides=dict(overrides or {})))

    rows = []
    for variant in variants:
        for seed in seeds:
            member_out = None
            if out_dir is not None:
                member_out = str(Path(out_dir) / f"{experiment}-{variant}-s{seed}")
            cfg = RunConfig(experiment, variant, alpha=alpha, seed=seed,
                            out_dir=member_out, mnist_dir=mnist_dir,
                            steps=steps, epochs=epochs,
                            overrides=dict(overrides or {}))
            row = {"experiment": experiment, "variant": variant, "seed": seed,
                   "status": "ok", "error": "",
                   "final_train_loss": None, "protocol_a_mse": None,
                   "protocol_b_mse": None, "accuracy": None,
                   "decoder_mse": None, "diverged": None}
            try:
                report = run(cfg)
                row.update(
                    final_train_loss=report.final_train_loss,
                    protocol_a_mse=report.protocol_a_mse,
                    protocol_b_mse=report.protocol_b_mse,
                    accuracy=report.accuracy,
                    decoder_mse=report.decoder_mse,
                    diverged=report.diverged,
                )
            except Exception as exc:  # member failure recorded, suite continues
                row["status"] = "error"
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)

    metric_keys = ["final_train_loss", "protocol_a_mse", "protocol_b_mse",
                   "accuracy", "decoder_mse"]
    means: dict[str, dict] = {}
    for variant in variants:
        ok = [r for r in rows if r["variant"] == variant and r["status"] == "ok"]
        means[variant] = {
            k: (float(np.mean([r[k] for r in ok])) if ok and all(
                r[k] is not None for r in ok) else None)
            for k in metric_keys
        }
        means[variant]["n_ok"] = len(ok)

    verdicts = _suite_verdicts(rows, variants, experiment, seeds)
    result = {"experiment": experiment, "rows": rows, "means": means,
              "verdicts": verdicts}
    if out_dir is not None:
        _write_suite_csv(result, Path(out_dir), metric_keys)
    return result


def _paired(rows, variant, seed):
    for r in rows:
        if r["variant"] == variant and r["seed"] == seed and r["status"] == "ok":
            return r
    return None


def _suite_verdicts(rows, variants, experiment, seeds) -> dict:
    verdicts = {}
    if "bijepa-expressive" in variants and "classic" in variants:
        if experiment in ("sine", "lorenz"):
            wins = []
            for seed in seeds:
                b = _paired(rows, "bijepa-expressive", seed)
                c = _paired(rows, "classic", seed)
                if b and c and b["protocol_b_mse"] is not None:
                    wins.append(b["protocol_b_mse"] < c["protocol_b_mse"])
            verdicts["bijepa_beats_classic_protoB"] = (
                bool(wins) and sum(wins) * 2 > len(wins))
            verdicts["bijepa_beats_classic_protoB_per_seed"] = wins
        else:
            wins = []
            for seed in seeds:
                b = _paired(rows, "bijepa-expressive", seed)
                c = _paired(rows, "classic", seed)
                if b and c and b["accuracy"] is not None:
                    wins.append(b["accuracy"] > c["accuracy"])
            verdicts["bijepa_beats_classic_accuracy"] = (
                bool(wins) and sum(wins) * 2 > len(wins))
            verdicts["bijepa_beats_classic_accuracy_per_seed"] = wins
    return verdicts


def _write_suite_csv(result: dict, out: Path, metric_keys: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cols = ["experiment", "variant", "seed", "kind", "status", "error",
            *metric_keys, "diverged"]
    lines = [",".join(cols)]

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    for r in result["rows"]:
        lines.append(",".join(fmt(v) for v in [
            r["experiment"], r["variant"], r["seed"], "run", r["status"],
            r["error"].replace(",", ";"),
            *[r[k] for k in metric_keys], r["diverged"]]))
    for variant, m in result["means"].items():
        lines.append(",".join(fmt(v) for v in [
            result["experiment"], variant, "", "mean", f"n_ok={m['n_ok']}", "",
            *[m[k] for k in metric_keys], ""]))
    (out / "suite.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "verdicts.json").write_text(
        json.dumps(result["verdicts"], indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# MNIST fetch

_MNIST_FILES = {
    "train-images-idx3-ubyte": 47040016,
    "train-labels-idx1-ubyte": 60008,
    "t10k-images-idx3-ubyte": 7840016,
    "t10k-labels-idx1-ubyte": 10008,
}
_DEFAULT_MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def fetch_mnist(out_dir, base_url: str = _DEFAULT_MNIST_URL,
                expected_sizes: dict | None = None) -> list[Path]:
    """Download, decompress, and size-verify the four IDX files.

    Already-present files of the right size are left alone; failed or
    mismatched downloads never leave partial files behind.
    """
    expected_sizes = expected_sizes or _MNIST_FILES
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    placed = []
    for name, size in expected_sizes.items():
        dest = out / name
        if dest.exists() and dest.stat().st_size == size:
            placed.append(dest)
            continue
        url = base_url.rstrip("/") + "/" + name + ".gz"
        tmp = out / (name + ".part")
        try:
            with urllib.request.urlopen(url) as resp:
                blob = resp.read()
            try:
                blob = gzip.decompress(blob)
            except gzip.BadGzipFile:
                pass  # server provided the raw file
            if len(blob) != size:
                raise IOError(
                    f"{name}: got {len(blob)} bytes, expected {size}")
            tmp.write_bytes(blob)
            tmp.replace(dest)
            placed.append(dest)
        except Exception:
            tmp.unlink(missing_ok=True)
            raise
    return placed


# ---------------------------------------------------------------------------
# entry point


def _parse_set(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bijepa",
        description="Train bi-directional joint-embedding models and "
                    "reproduce the sine/Lorenz/MNIST experiment tables.")
    sub = p.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="train one configuration and run its probes")
    rp.add_argument("--experiment", required=True, choices=_EXPERIMENTS)
    rp.add_argument("--variant", required=True, choices=tuple(_VARIANTS))
    rp.add_argument("--alpha", type=float, default=0.5)
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--out", default=None)
    rp.add_argument("--mnist-dir", default=None)
    rp.add_argument("--steps", type=int, default=None)
    rp.add_argument("--epochs", type=int, default=None)
    rp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    sp = sub.add_parser("suite", help="run a seeds x variants cross product")
    sp.add_argument("--experiment", required=True, choices=_EXPERIMENTS)
    sp.add_argument("--variants", required=True,
                    help="comma-separated list, e.g. bijepa-expressive,classic")
    sp.add_argument("--seeds", required=True,
                    help="comma-separated integers, e.g. 0,1,2")
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--out", default=None)
    sp.add_argument("--mnist-dir", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    fp = sub.add_parser("fetch-mnist", help="download the four IDX files")
    fp.add_argument("--out", default="mnist-data")
    fp.add_argument("--base-url", default=_DEFAULT_MNIST_URL)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = RunConfig(args.experiment, args.variant, alpha=args.alpha,
                            seed=args.seed, out_dir=args.out,
                            mnist_dir=args.mnist_dir, steps=args.steps,
                            epochs=args.epochs, overrides=_parse_set(args.set))
            report = run(cfg)
            print(f"final_train_loss={report.final_train_loss:.6f} "
                  f"proto_a={report.protocol_a_mse} proto_b={report.protocol_b_mse} "
                  f"accuracy={report.accuracy} decoder_mse={report.decoder_mse} "
                  f"diverged={report.diverged}")
        elif args.command == "suite":
            seeds = [int(s) for s in args.seeds.split(",") if s != ""]
            variants = [v for v in args.variants.split(",") if v != ""]
            for v in variants:
                if v not in _VARIANTS:
                    raise ConfigError(f"unknown variant {v!r}")
            result = run_suite(seeds, variants, args.experiment, out_dir=args.out,
                               mnist_dir=args.mnist_dir, alpha=args.alpha,
                               overrides=_parse_set(args.set),
                               steps=args.steps, epochs=args.epochs)
            for variant, m in result["means"].items():
                print(f"{variant}: {m}")
            for name, value in result["verdicts"].items():
                print(f"{name}: {value}")
            if any(r["status"] != "ok" for r in result["rows"]):
                return 1
        else:
            placed = fetch_mnist(args.out, base_url=args.base_url)
            for path in placed:
                print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
