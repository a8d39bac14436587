"""Mini-batch training: adaptive-gradient optimizer, per-space projection,
CSV metrics, checkpointing and early stopping on validation MRR.

Shuffling uses a counter-based generator keyed by (seed, epoch), so a run
resumed from a checkpoint continues exactly as the uninterrupted run would.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

from .data import TKGDataset
from .evaluation import RankingReport, evaluate
from .losses import LossWeights, PAPER_LOSS_WEIGHTS, total_loss
from .model import IMEModel, ModelDims, N_POOLED
from .tensor import backward, load_tensors, save_tensors

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "Adagrad",
    "ConfigError",
    "CheckpointError",
    "TrainingDiverged",
    "paper_config",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "METRICS_HEADER",
]

CHECKPOINT_VERSION = 1
EARLY_STOP_PATIENCE = 50  # evaluation intervals without a new best MRR
METRICS_HEADER = "epoch,step,task,sim,diff,stru,total,valid_mrr,valid_h1,valid_h3,valid_h10"


class ConfigError(ValueError):
    """Bad or unknown key, or unparseable value, in a config file."""


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; a diagnostic checkpoint was written."""


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.  Defaults follow the published full-scale
    configuration; `desk()` gives a small profile for laptop-scale runs."""

    dim: int = 500
    learning_rate: float = 0.1
    batch_size: int = 1000
    max_epochs: int = 200
    eval_interval: int = 10
    alpha: float = 0.4
    beta: float = 0.4
    gamma: float = 0.1
    seed: int = 0
    optimizer: str = "adagrad"
    data_dir: str = ""
    similarity_features: str = "shared"

    def __post_init__(self):
        if self.dim < 1 or self.batch_size < 1 or self.max_epochs < 0 or self.eval_interval < 1:
            raise ConfigError(f"non-positive size in config: {self}")
        if self.optimizer != "adagrad":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r} (available: adagrad)")
        if self.similarity_features not in ("shared", "specific"):
            raise ConfigError(f"similarity_features must be 'shared' or 'specific', got {self.similarity_features!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(dim=32, batch_size=128)
        base.update(overrides)
        return cls(**base)

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                if key in values:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
                values[key] = value
        kwargs: dict = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            try:
                if f.type == "int":
                    kwargs[f.name] = int(raw)
                elif f.type == "float":
                    kwargs[f.name] = float(raw)
                else:
                    kwargs[f.name] = raw
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {f.name}: {raw!r}") from exc
        return cls(**kwargs)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                fh.write(f"{f.name}={getattr(self, f.name)}\n")


def paper_config(dataset_name: str, data_dir: str = "") -> TrainConfig:
    """Full-scale configuration with the tuned loss weights for a benchmark."""
    alpha, beta, gamma = PAPER_LOSS_WEIGHTS[dataset_name.lower()]
    return TrainConfig(alpha=alpha, beta=beta, gamma=gamma, data_dir=data_dir)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adagrad:
    """Per-coordinate adaptive gradient descent with accumulated squared
    gradients; the update divides by their root plus a small constant."""

    EPS = 1e-10

    def __init__(self, params):
        self.accumulators = {p.name: np.zeros_like(p.data) for p in params}

    def step(self, params, lr: float) -> None:
        for p in params:
            acc = self.accumulators[p.name]
            acc += p.grad * p.grad
            p.data -= lr * p.grad / (np.sqrt(acc) + self.EPS)


# ---------------------------------------------------------------------------
# Train state and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    epoch: int = 0  # next epoch to run
    step: int = 0
    best_mrr: float = -1.0  # -1 marks "never evaluated"
    stale_evals: int = 0
    seed: int = 0


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # Counter-based bit generator keyed by (seed, epoch): shuffle order is a
    # pure function of the key, independent of call history.
    return np.random.Generator(np.random.Philox(key=np.array([seed, epoch, 0, 0], dtype=np.uint64)))


def _atomic_write_bytes(path, writer) -> None:
    tmp = f"{path}.tmp"
    writer(tmp)
    os.replace(tmp, path)


def save_checkpoint(model: IMEModel, optimizer: Adagrad, state: TrainState, config: TrainConfig, bin_path, manifest_path) -> None:
    arrays = {p.name: p.data for p in model.parameters()}
    for name, acc in optimizer.accumulators.items():
        arrays[f"adagrad.{name}"] = acc
    _atomic_write_bytes(bin_path, lambda tmp: save_tensors(tmp, arrays))

    dims = model.dims
    manifest = [
        ("format_version", CHECKPOINT_VERSION),
        ("dim", dims.dim),
        ("pos_dim", dims.pos_dim),
        ("n_pooled", N_POOLED),
        ("n_entities", dims.n_entities),
        ("n_relations", dims.n_relations),
        ("n_timestamps", dims.n_timestamps),
        ("alpha", repr(config.alpha)),
        ("beta", repr(config.beta)),
        ("gamma", repr(config.gamma)),
        ("similarity_features", config.similarity_features),
        ("learning_rate", repr(config.learning_rate)),
        ("batch_size", config.batch_size),
        ("max_epochs", config.max_epochs),
        ("eval_interval", config.eval_interval),
        ("optimizer", config.optimizer),
        ("data_dir", config.data_dir),
        ("seed", state.seed),
        ("epoch", state.epoch),
        ("step", state.step),
        ("best_mrr", repr(state.best_mrr)),
        ("stale_evals", state.stale_evals),
    ]

    def write_manifest(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            for key, value in manifest:
                fh.write(f"{key}={value}\n")

    _atomic_write_bytes(manifest_path, write_manifest)


def _read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"malformed manifest line {line!r} in {path}")
            out[key] = value
    return out


def load_checkpoint(bin_path, manifest_path) -> tuple[IMEModel, Adagrad, TrainState, TrainConfig]:
    manifest = _read_manifest(manifest_path)
    try:
        version = int(manifest["format_version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint format version {version} not supported (expected {CHECKPOINT_VERSION})")
        dims = ModelDims(
            dim=int(manifest["dim"]),
            n_entities=int(manifest["n_entities"]),
            n_relations=int(manifest["n_relations"]),
            n_timestamps=int(manifest["n_timestamps"]),
            pos_dim=int(manifest["pos_dim"]),
        )
        if int(manifest["n_pooled"]) != N_POOLED:
            raise CheckpointError(f"checkpoint pools {manifest['n_pooled']} features, this build pools {N_POOLED}")
        config = TrainConfig(
            dim=dims.dim,
            learning_rate=float(manifest["learning_rate"]),
            batch_size=int(manifest["batch_size"]),
            max_epochs=int(manifest["max_epochs"]),
            eval_interval=int(manifest["eval_interval"]),
            alpha=float(manifest["alpha"]),
            beta=float(manifest["beta"]),
            gamma=float(manifest["gamma"]),
            seed=int(manifest["seed"]),
            optimizer=manifest["optimizer"],
            data_dir=manifest["data_dir"],
            similarity_features=manifest["similarity_features"],
        )
        state = TrainState(
            epoch=int(manifest["epoch"]),
            step=int(manifest["step"]),
            best_mrr=float(manifest["best_mrr"]),
            stale_evals=int(manifest["stale_evals"]),
            seed=int(manifest["seed"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"manifest {manifest_path} is missing key {exc}") from exc

    try:
        arrays = load_tensors(bin_path)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc

    model = IMEModel(dims, seed=state.seed)
    optimizer = Adagrad(model.parameters())
    for p in model.parameters():
        for key, target in ((p.name, p.data), (f"adagrad.{p.name}", optimizer.accumulators[p.name])):
            if key not in arrays:
                raise CheckpointError(f"checkpoint {bin_path} is missing tensor {key!r}")
            if arrays[key].shape != target.shape:
                raise CheckpointError(
                    f"tensor {key!r} has shape {arrays[key].shape}, expected {target.shape} "
                    f"(manifest dims do not match the stored tensors)"
                )
            target[...] = arrays[key]
    return model, optimizer, state, config


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    out_dir: str
    epochs_run: int
    best_mrr: float
    checkpoint_path: str
    manifest_path: str
    metrics_path: str


def _metric_cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def _quads_to_arrays(quads) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not quads:
        raise ValueError("empty quadruple list")
    arr = np.asarray([[q.s, q.r, q.o, q.t] for q in quads], dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def train(config: TrainConfig, out_dir, resume=None, log=None) -> TrainResult:
    """Run the training loop; returns paths to the best checkpoint and logs.

    `resume` points at an existing manifest; training continues from its
    recorded epoch with identical results to an uninterrupted run.
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_bin = os.path.join(out_dir, "checkpoint.bin")
    ckpt_manifest = os.path.join(out_dir, "manifest.txt")
    last_bin = os.path.join(out_dir, "last.bin")
    last_manifest = os.path.join(out_dir, "last_manifest.txt")
    metrics_path = os.path.join(out_dir, "metrics.csv")

    dataset = TKGDataset.load(config.data_dir)
    vocab = dataset.vocab
    dims = ModelDims(config.dim, vocab.n_entities, 2 * vocab.n_relations, vocab.n_timestamps)

    if resume is not None:
        model, optimizer, state, saved = load_checkpoint(_sibling_bin(resume), resume)
        if saved != config:
            raise CheckpointError("resume config differs from the checkpoint's config; refusing to mix runs")
        if model.dims != dims:
            raise CheckpointError(f"checkpoint dims {model.dims} do not match dataset/config dims {dims}")
    else:
        model = IMEModel(dims, seed=config.seed)
        optimizer = Adagrad(model.parameters())
        state = TrainState(seed=config.seed)

    weights = config.weights()
    s_all, r_all, o_all, t_all = _quads_to_arrays(dataset.augmented("train"))
    valid_quads = dataset.augmented("valid")
    filter_index = dataset.filter_index()
    n_examples = s_all.size

    mode = "a" if resume is not None and os.path.exists(metrics_path) else "w"
    metrics = open(metrics_path, mode, encoding="utf-8")
    try:
        if mode == "w":
            metrics.write(METRICS_HEADER + "\n")

        for epoch in range(state.epoch, config.max_epochs):
            perm = _epoch_rng(state.seed, epoch).permutation(n_examples)
            sums = np.zeros(4)
            n_batches = 0
            for start in range(0, n_examples, config.batch_size):
                batch = perm[start : start + config.batch_size]
                model.zero_grad()
                total, breakdown = total_loss(
                    model, s_all[batch], r_all[batch], t_all[batch], o_all[batch],
                    weights, similarity_features=config.similarity_features,
                )
                if not np.isfinite(breakdown.total):
                    save_checkpoint(model, optimizer, state, config,
                                    os.path.join(out_dir, "diverged.bin"),
                                    os.path.join(out_dir, "diverged_manifest.txt"))
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {state.step}: {breakdown}"
                    )
                backward(total)
                optimizer.step(model.parameters(), config.learning_rate)
                model.bank.project()
                sums += (breakdown.task, breakdown.sim, breakdown.diff, breakdown.stru)
                n_batches += 1
                state.step += 1
            state.epoch = epoch + 1

            task_m, sim_m, diff_m, stru_m = sums / n_batches
            total_m = task_m + weights.alpha * sim_m + weights.beta * diff_m + weights.gamma * stru_m

            report: RankingReport | None = None
            if state.epoch % config.eval_interval == 0 or state.epoch == config.max_epochs:
                if valid_quads:
                    report = evaluate(model, valid_quads, filter_index)
                    if report.mrr > state.best_mrr:
                        state.best_mrr = report.mrr
                        state.stale_evals = 0
                        save_checkpoint(model, optimizer, state, config, ckpt_bin, ckpt_manifest)
                    else:
                        state.stale_evals += 1
                save_checkpoint(model, optimizer, state, config, last_bin, last_manifest)

            row = [
                str(state.epoch), str(state.step),
                repr(task_m), repr(sim_m), repr(diff_m), repr(stru_m), repr(total_m),
                _metric_cell(report.mrr if report else None),
                _metric_cell(report.hits1 if report else None),
                _metric_cell(report.hits3 if report else None),
                _metric_cell(report.hits10 if report else None),
            ]
            metrics.write(",".join(row) + "\n")
            metrics.flush()
            if log is not None:
                log(f"epoch {state.epoch}: total={total_m:.4f}"
                    + (f" valid_mrr={report.mrr:.4f}" if report else ""))

            if state.stale_evals >= EARLY_STOP_PATIENCE:
                break

        # A run that never produced a validation report still ships its
        # final parameters as the checkpoint.
        save_checkpoint(model, optimizer, state, config, last_bin, last_manifest)
        if not os.path.exists(ckpt_bin):
            save_checkpoint(model, optimizer, state, config, ckpt_bin, ckpt_manifest)
    finally:
        metrics.close()

    return TrainResult(
        out_dir=str(out_dir),
        epochs_run=state.epoch,
        best_mrr=state.best_mrr,
        checkpoint_path=ckpt_bin,
        manifest_path=ckpt_manifest,
        metrics_path=metrics_path,
    )


def _sibling_bin(manifest_path) -> str:
    """The tensor file stored alongside a manifest (manifest.txt -> checkpoint.bin)."""
    directory, name = os.path.split(str(manifest_path))
    if name == "manifest.txt":
        return os.path.join(directory, "checkpoint.bin")
    if name.endswith("_manifest.txt"):
        return os.path.join(directory, name[: -len("_manifest.txt")] + ".bin")
    raise CheckpointError(f"cannot infer tensor file for manifest {manifest_path!r}")
