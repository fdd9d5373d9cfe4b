"""Config-driven experiment runs: classification, sparse autoencoder and
sparse denoising autoencoder on MNIST-style data.

A run loads and preprocesses the data, trains with one of the optimisers and
writes ``metrics.csv`` (one row per epoch, fixed header), ``timing.csv``, the
trained model as an ``LBN1`` container, the resolved configuration and, for
autoencoders, reconstruction grids as 8-bit PGM images.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import BPConfig, train_gd, train_isgd, train_sgd
from .blocks import BlockConfig, BlockSolver, train_admm, train_cd
from .data import DATASET_DIRS, Dataset, load_split, preprocess, subsample
from .lifted import LBNConfig, StepSizes, train_lbn, train_parallel
from .network import Layer, Network, forward, init_glorot, linear_activation_rate, preactivations, sparsity_rate
from .objective import ObjectiveSpec, Task
from .prox import Kind, ProxSpec

__all__ = [
    "ConfigError",
    "RunConfig",
    "PRESETS",
    "OPTIMIZERS",
    "METRICS_HEADER",
    "make_config",
    "parse_config_text",
    "run",
    "evaluate",
    "evaluate_file",
    "save_model",
    "load_model",
    "write_pgm",
    "read_pgm",
    "compare",
]

OPTIMIZERS = ("LBN-S", "LBN-D", "GD-BP", "SGD-BP", "ISGD-BP", "CD", "ADMM", "PARALLEL")
METRICS_HEADER = ["epoch", "train_objective", "val_objective", "train_acc", "val_acc",
                  "sparsity", "linear_rate_l1", "linear_rate_l2", "linear_rate_l3",
                  "wall_time_s"]
MODEL_MAGIC = b"LBN1"
MODEL_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Everything a run depends on. ``None`` for ``n_train``/``n_val`` keeps
    the whole split; ``acts`` are activation tags, where a bare ``"l1"`` takes
    its threshold from ``code_act_alpha`` (or ``alpha`` when unset)."""

    preset: str = ""
    task: str = "classification"
    dataset: str = "mnist"
    n_train: int | None = None
    n_val: int | None = None
    subsample_seed: int = 0
    optimizer: str = "LBN-S"
    epochs: int = 1
    batch_size: int | None = 100
    n_inner: int = 15
    tau_k: float = 0.0
    tau_w: float | None = None
    tau_b: float | None = None
    tau_x: float | None = None
    batch_scaled: bool = False
    anchor: str = "implicit"
    lr: float = 1e-3
    alpha: float = 0.0
    code_act_alpha: float | None = None
    lam: float = 1.0
    code_layer: int | None = None
    widths: tuple = (784, 784, 64, 64, 10)
    acts: tuple = ("relu", "relu", "relu", "zero")
    noise_std: float = 1e-3
    kink: float = 0.0
    workers: int = 4
    param_reg: float = 0.0
    delta: float = 1.0
    admm_iters: int = 50
    cd_iters: int = 50
    recon_count: int = 16
    wall_time: bool = False
    seed: int = 0
    out: str = ""

    def activations(self) -> list[ProxSpec]:
        out = []
        for tag in self.acts:
            if str(tag).strip().lower() == "l1":
                a = self.code_act_alpha if self.code_act_alpha is not None else self.alpha
                out.append(ProxSpec.l1(a))
            else:
                out.append(ProxSpec.parse(str(tag)))
        return out

    def objective(self) -> ObjectiveSpec:
        L = len(self.widths) - 1
        return ObjectiveSpec(lam=(self.lam,) * (L - 1), alpha=self.alpha,
                             code_layer=self.code_layer, task=self.task)

    def validate(self) -> "RunConfig":
        try:
            task = Task(self.task)
        except ValueError:
            raise ConfigError(f"unknown task {self.task!r}") from None
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.dataset not in DATASET_DIRS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if len(self.widths) < 2 or len(self.acts) != len(self.widths) - 1:
            raise ConfigError("need one activation per layer")
        try:
            acts = self.activations()
        except ValueError as exc:
            raise ConfigError(f"bad activation: {exc}") from None
        if self.widths[0] != 784:
            raise ConfigError("input width must be 784")
        if task is Task.CLASSIFICATION and self.widths[-1] != 10:
            raise ConfigError("classification needs 10 outputs")
        if task is not Task.CLASSIFICATION and self.widths[-1] != 784:
            raise ConfigError("autoencoders need 784 outputs")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.alpha > 0 and self.code_layer is None:
            raise ConfigError("alpha > 0 needs code_layer")
        if self.code_layer is not None and not 1 <= self.code_layer <= len(self.widths) - 2:
            raise ConfigError(f"code_layer {self.code_layer} is not a hidden layer")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.optimizer in ("GD-BP", "SGD-BP", "ISGD-BP") and not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.optimizer in ("SGD-BP", "ISGD-BP", "LBN-S") and self.batch_size is None:
            raise ConfigError(f"{self.optimizer} needs a batch size")
        if self.optimizer == "ADMM" and any(a.kind is Kind.SOFTMAX for a in acts):
            raise ConfigError("ADMM does not support softmax layers")
        if self.n_train is not None and self.n_train < 1:
            raise ConfigError("n_train must be positive")
        if self.lam <= 0 or self.tau_k < 0 or self.n_inner < 1 or self.workers < 1:
            raise ConfigError("lam > 0, tau_k >= 0, n_inner >= 1 and workers >= 1 required")
        if self.optimizer == "ISGD-BP" and self.tau_k <= 0:
            raise ConfigError("ISGD-BP needs tau_k > 0 (its anchor weight is 1 / tau_k)")
        if self.anchor not in ("implicit", "explicit"):
            raise ConfigError("anchor must be 'implicit' or 'explicit'")
        return self


_AE = dict(widths=(784, 784, 784, 784, 784), acts=("relu", "l1", "relu", "zero"), code_layer=2)
_CLS = dict(task="classification", widths=(784, 784, 64, 64, 10),
            acts=("relu", "relu", "relu", "zero"))
_SAE = dict(task="autoencoder", dataset="mnist", n_train=1000, alpha=0.09, epochs=100, **_AE)
_DAE1K = dict(task="denoising", dataset="fashion", n_train=1000, alpha=0.09, epochs=50,
              batch_size=20, n_inner=15, tau_k=0.5, **_AE)
_DAE10K = dict(task="denoising", dataset="fashion", n_train=10000, alpha=0.055, epochs=50,
               batch_size=200, n_inner=30, tau_k=1.0, **_AE)

PRESETS: dict[str, dict[str, Any]] = {
    "classification-mnist-lbn": dict(_CLS, dataset="mnist", optimizer="LBN-S", batch_size=100,
                                     n_inner=15, tau_k=100.0, epochs=100),
    "classification-mnist-sgd": dict(_CLS, dataset="mnist", optimizer="SGD-BP", batch_size=100,
                                     lr=1e-3, epochs=100),
    "classification-fmnist-lbn": dict(_CLS, dataset="fashion", optimizer="LBN-S",
                                      batch_size=100, n_inner=15, tau_k=100.0, epochs=100),
    "classification-fmnist-sgd": dict(_CLS, dataset="fashion", optimizer="SGD-BP",
                                      batch_size=100, lr=1e-3, epochs=100),
    "classification-mnist1k-lbn": dict(_CLS, dataset="mnist", n_train=1000, optimizer="LBN-S",
                                       batch_size=20, n_inner=15, tau_k=1.0, epochs=50),
    "sparse-ae-mnist1k-lbn-s": dict(_SAE, optimizer="LBN-S", batch_size=20, tau_k=1.0,
                                    n_inner=15, batch_scaled=True),
    "sparse-ae-mnist1k-lbn-d": dict(_SAE, optimizer="LBN-D", batch_size=None, tau_k=0.0,
                                    n_inner=15, batch_scaled=True),
    "sparse-ae-mnist1k-gd": dict(_SAE, optimizer="GD-BP", batch_size=None, lr=4e-2),
    "sparse-ae-mnist1k-sgd": dict(_SAE, optimizer="SGD-BP", batch_size=20, lr=3e-2),
    "denoise-fmnist1k-lbn": dict(_DAE1K, optimizer="LBN-S", batch_scaled=True),
    "denoise-fmnist1k-sgd": dict(_DAE1K, optimizer="SGD-BP", lr=1e-3),
    "denoise-fmnist1k-isgd": dict(_DAE1K, optimizer="ISGD-BP", lr=1e-3),
    "denoise-fmnist10k-lbn": dict(_DAE10K, optimizer="LBN-S", batch_scaled=True),
    "denoise-fmnist10k-sgd": dict(_DAE10K, optimizer="SGD-BP", lr=4e-4),
    "denoise-fmnist10k-isgd": dict(_DAE10K, optimizer="ISGD-BP", lr=4e-4),
}


# --------------------------------------------------------------------------
# configuration parsing

def _convert(name: str, text: str):
    f = {f.name: f for f in fields(RunConfig)}.get(name)
    if f is None:
        raise ConfigError(f"unknown config key {name!r}")
    text = text.strip()
    ann = str(f.type)
    if text.lower() in ("none", "null", "") and "None" in ann:
        return None
    try:
        if name in ("widths", "acts"):
            parts = [p.strip() for p in text.strip("()[]").split(",") if p.strip()]
            return tuple(int(p) for p in parts) if name == "widths" else tuple(parts)
        if ann.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ann.startswith("int"):
            return int(text)
        if ann.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _convert(key.strip(), value)
    return out


def parse_overrides(items) -> dict[str, Any]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = _convert(key.strip(), value)
    return out


def make_config(preset: str | None = None, config_text: str | None = None,
                overrides: dict | None = None, **kwargs) -> RunConfig:
    """Preset, then config file, then overrides, then keyword arguments."""
    values: dict[str, Any] = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        values.update(PRESETS[preset], preset=preset)
    if config_text:
        values.update(parse_config_text(config_text))
    values.update(overrides or {})
    values.update({k: v for k, v in kwargs.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    return RunConfig(**values).validate()


def config_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# data

def load_data(cfg: RunConfig, data_dir) -> tuple[Dataset, Dataset]:
    train_raw = load_split(data_dir, cfg.dataset, "train")
    val_raw = load_split(data_dir, cfg.dataset, "test")
    if cfg.n_train is not None:
        train_raw = subsample(train_raw, cfg.n_train, cfg.subsample_seed)
    if cfg.n_val is not None:
        val_raw = subsample(val_raw, cfg.n_val, cfg.subsample_seed)
    train = preprocess(train_raw, cfg.task, noise_std=cfg.noise_std, seed=cfg.seed)
    val = preprocess(val_raw, cfg.task, mean=train.mean, noise_std=cfg.noise_std,
                     seed=cfg.seed + 1)
    return train, val


# --------------------------------------------------------------------------
# metrics

def evaluate(net: Network, ds: Dataset, task, code_layer: int | None = None) -> dict:
    """Accuracy (classification), mean ``0.5||target - output||^2``, code
    sparsity (when a code layer is given) and per-layer linear rates."""
    task = Task(task)
    if ds.inputs.shape[1] != net.widths[0] or ds.targets.shape[1] != net.widths[-1]:
        raise ValueError(f"dataset shapes {ds.inputs.shape[1]}->{ds.targets.shape[1]} do not "
                         f"match network {net.widths[0]}->{net.widths[-1]}")
    zs, xs = preactivations(net, ds.inputs)
    out = xs[-1]
    res = {"mse": float(np.mean(0.5 * np.sum((ds.targets - out) ** 2, axis=1))),
           "accuracy": None, "sparsity": None,
           "linear_rates": [float(np.mean(z >= 0)) if la.act.kind is Kind.RELU else None
                            for la, z in zip(net.layers[:-1], zs[:-1])]}
    if task is Task.CLASSIFICATION:
        res["accuracy"] = float(np.mean(np.argmax(out, axis=1) == ds.labels))
    if code_layer is not None:
        res["sparsity"] = sparsity_rate(xs[code_layer - 1])
        res["code_l1"] = float(np.mean(np.abs(xs[code_layer - 1]).sum(axis=1)))
    return res


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


class _Recorder:
    def __init__(self, cfg: RunConfig, train: Dataset, val: Dataset):
        self.cfg, self.train, self.val = cfg, train, val
        self.t0 = time.perf_counter()
        self.times: list[tuple[int, float]] = []

    def __call__(self, state) -> dict:
        cfg = self.cfg
        tr = evaluate(state.net, self.train, cfg.task, cfg.code_layer)
        va = evaluate(state.net, self.val, cfg.task, cfg.code_layer)
        elapsed = time.perf_counter() - self.t0
        self.times.append((state.epoch, elapsed))
        obj = tr["mse"] + (cfg.alpha * tr["code_l1"] if cfg.alpha > 0 else 0.0)
        rates = (tr["linear_rates"] + [None] * 3)[:3]
        row = {"epoch": str(state.epoch), "train_objective": _fmt(obj),
               "val_objective": _fmt(va["mse"]), "train_acc": _fmt(tr["accuracy"]),
               "val_acc": _fmt(va["accuracy"]), "sparsity": _fmt(tr["sparsity"]),
               "wall_time_s": _fmt(elapsed) if cfg.wall_time else ""}
        for i, r in enumerate(rates, start=1):
            row[f"linear_rate_l{i}"] = _fmt(r)
        return row


# --------------------------------------------------------------------------
# model container

def save_model(path, net: Network, meta: dict | None = None, mean=None) -> None:
    """Write the ``LBN1`` container (little-endian)::

        b"LBN1" | u32 version | u32 L | u32 widths[L+1]
        per layer: u16 tag length | tag | f64 W (row-major, in x out) | f64 b
        u32 meta length | meta JSON | u32 mean length | f64 mean
    """
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<II", MODEL_VERSION, len(net)))
    buf.write(struct.pack(f"<{len(net) + 1}I", *net.widths))
    for la in net.layers:
        tag = str(la.act).encode()
        buf.write(struct.pack("<H", len(tag)) + tag)
        buf.write(np.ascontiguousarray(la.W, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(la.b, dtype="<f8").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)) + blob)
    mean = np.zeros(0) if mean is None else np.asarray(mean, dtype="<f8").ravel()
    buf.write(struct.pack("<I", mean.size) + mean.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> tuple[Network, dict, np.ndarray | None]:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not an LBN1 model file")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_f8(n):
        nonlocal pos
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(float)
        pos += 8 * n
        return arr

    try:
        version, L = take("<II")
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        widths = take(f"<{L + 1}I")
        layers = []
        for m_in, m_out in zip(widths[:-1], widths[1:]):
            (n,) = take("<H")
            tag = raw[pos:pos + n].decode()
            pos += n
            W = take_f8(m_in * m_out).reshape(m_in, m_out)
            layers.append(Layer(W, take_f8(m_out), ProxSpec.parse(tag)))
        (n,) = take("<I")
        meta = json.loads(raw[pos:pos + n].decode())
        pos += n
        (n,) = take("<I")
        mean = take_f8(n) if n else None
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: corrupt model file ({exc})") from None
    return Network(layers), meta, mean


# --------------------------------------------------------------------------
# images

def write_pgm(path, image) -> None:
    """8-bit binary PGM from a 2-D array in [0, 1] (values are clamped)."""
    img = np.rint(np.clip(np.asarray(image, dtype=float), 0, 1) * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def image_grid(rows: list[np.ndarray], shape=(28, 28), pad: int = 1) -> np.ndarray:
    """Tile row-stacked flat images into one grid (one grid row per entry)."""
    h, w = shape
    n = max(len(r) for r in rows)
    grid = np.ones((len(rows) * (h + pad) + pad, n * (w + pad) + pad))
    for i, r in enumerate(rows):
        for j, img in enumerate(r):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            grid[y:y + h, x:x + w] = img.reshape(shape)
    return grid


def _recon_grid(net: Network, ds: Dataset, k: int) -> np.ndarray:
    idx = np.arange(min(k, len(ds)))
    rows = [ds.clean[idx] + ds.mean]
    if ds.noisy_inputs is not None:
        rows.append(ds.noisy_inputs[idx] + ds.mean)
    rows.append(forward(net, ds.inputs[idx])[-1] + ds.mean)
    return image_grid(rows, ds.shape)


# --------------------------------------------------------------------------
# running

def _train(cfg: RunConfig, net: Network, train: Dataset, callback):
    spec = cfg.objective()
    x0, y = train.inputs, train.targets
    opt = cfg.optimizer
    if opt in ("LBN-S", "LBN-D", "PARALLEL"):
        steps = StepSizes(tau_w=cfg.tau_w, tau_b=cfg.tau_b, tau_x=cfg.tau_x, tau_k=cfg.tau_k,
                          n_inner=cfg.n_inner, batch_scaled=cfg.batch_scaled)
        lcfg = LBNConfig(epochs=cfg.epochs, batch_size=None if opt == "LBN-D" else cfg.batch_size,
                         steps=steps, seed=cfg.seed, param_reg=cfg.param_reg, anchor=cfg.anchor)
        if opt == "PARALLEL":
            return train_parallel(spec, net, x0, y, cfg.workers, lcfg, callback)
        return train_lbn(spec, net, x0, y, lcfg, callback)
    if opt in ("CD", "ADMM"):
        bcfg = BlockConfig(epochs=cfg.epochs, delta=cfg.delta, admm_iters=cfg.admm_iters,
                           solver=BlockSolver(theta_iters=cfg.cd_iters, x_iters=cfg.cd_iters))
        return (train_cd if opt == "CD" else train_admm)(spec, net, x0, y, bcfg, callback)
    bp = BPConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed,
                  alpha=cfg.alpha, code_layer=cfg.code_layer, kink=cfg.kink,
                  tau_k=cfg.tau_k if opt == "ISGD-BP" else 1.0, n_inner=cfg.n_inner)
    trainer = {"GD-BP": train_gd, "SGD-BP": train_sgd, "ISGD-BP": train_isgd}[opt]
    return trainer(net, x0, y, bp, callback)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def run(cfg: RunConfig, data_dir=None, out_dir=None, log=print) -> dict:
    """Train per ``cfg`` and write all artifacts into ``out_dir``.

    Returns a summary dict with the final metrics and artifact paths.
    """
    cfg.validate()
    out = Path(out_dir or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    train, val = load_data(cfg, data_dir)
    net = init_glorot(cfg.widths, cfg.activations(), cfg.seed)
    rec = _Recorder(cfg, train, val)

    def callback(state):
        row = rec(state)
        if log:
            log(" ".join(f"{k}={row[k]}" for k in ("epoch", "train_objective", "val_objective",
                                                   "val_acc", "sparsity") if row[k]))
        return row

    state = _train(cfg, net, train, callback)
    _write_csv(out / "metrics.csv", METRICS_HEADER, state.history)
    _write_csv(out / "timing.csv", ["epoch", "wall_time_s"],
               [{"epoch": e, "wall_time_s": repr(t)} for e, t in rec.times])
    (out / "config.txt").write_text(config_text(cfg))
    meta = {"task": cfg.task, "dataset": cfg.dataset, "code_layer": cfg.code_layer,
            "noise_std": cfg.noise_std, "seed": cfg.seed, "preset": cfg.preset}
    save_model(out / "model.lbn", state.net, meta, train.mean)
    paths = {"metrics": out / "metrics.csv", "model": out / "model.lbn"}
    if Task(cfg.task) is not Task.CLASSIFICATION:
        for name, ds in (("train", train), ("val", val)):
            p = out / f"recon_{name}.pgm"
            write_pgm(p, _recon_grid(state.net, ds, cfg.recon_count))
            paths[f"recon_{name}"] = p
    return {"final": state.history[-1] if state.history else None, "paths": paths,
            "state": state}


def evaluate_file(model_path, data_dir=None, split: str = "test") -> dict:
    """Load a saved model and evaluate it on a split of its dataset."""
    net, meta, mean = load_model(model_path)
    task = meta.get("task", "classification")
    raw = load_split(data_dir, meta.get("dataset", "mnist"), split)
    ds = preprocess(raw, task, mean=mean, noise_std=meta.get("noise_std", 1e-3),
                    seed=meta.get("seed", 0) + 1)
    return evaluate(net, ds, task, meta.get("code_layer"))


# --------------------------------------------------------------------------
# comparison

def _read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METRICS_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return list(reader)


def compare(run_dirs, out_dir) -> dict:
    """Merge the ``metrics.csv`` of several runs.

    Writes ``combined_long.csv`` (run, epoch, metric, value), a wide
    ``combined.csv`` over the union of epochs with empty cells where a run has
    no such epoch, and PNG line plots of the objectives and the sparsity.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = {}
    for d in run_dirs:
        d = Path(d)
        name = d.name
        k = 2
        while name in runs:
            name, k = f"{d.name}-{k}", k + 1
        runs[name] = _read_metrics(d / "metrics.csv" if d.is_dir() else d)
    metrics = METRICS_HEADER[1:]
    long_rows = [{"run": name, "epoch": r["epoch"], "metric": m, "value": r[m]}
                 for name, rows in runs.items() for r in rows for m in metrics if r[m] != ""]
    _write_csv(out / "combined_long.csv", ["run", "epoch", "metric", "value"], long_rows)
    epochs = sorted({int(r["epoch"]) for rows in runs.values() for r in rows})
    by_epoch = {name: {int(r["epoch"]): r for r in rows} for name, rows in runs.items()}
    header = ["epoch"] + [f"{name}:{m}" for name in runs for m in metrics]
    wide = []
    for e in epochs:
        row = {"epoch": str(e)}
        for name in runs:
            r = by_epoch[name].get(e, {})
            for m in metrics:
                row[f"{name}:{m}"] = r.get(m, "")
        wide.append(row)
    _write_csv(out / "combined.csv", header, wide)

    plots = {}
    for fname, cols, logy in (("objective.png", ("train_objective", "val_objective"), True),
                              ("sparsity.png", ("sparsity",), False),
                              ("accuracy.png", ("train_acc", "val_acc"), False)):
        fig, ax = plt.subplots(figsize=(6, 4))
        drawn = False
        for name, rows in runs.items():
            for c in cols:
                pts = [(int(r["epoch"]), float(r[c])) for r in rows if r[c] != ""]
                if pts:
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, label=f"{name} {c}")
                    drawn = True
        if drawn:
            if logy:
                ax.set_yscale("log")
            ax.set_xlabel("epoch")
            ax.legend(fontsize=7)
            fig.tight_layout()
            fig.savefig(out / fname)
            plots[fname] = out / fname
        plt.close(fig)
    return {"long": out / "combined_long.csv", "wide": out / "combined.csv", "plots": plots}
