"""Dataset ingestion, splitting, target standardization, the training
loop (Adam + one-cycle schedule), evaluation and prediction.

Training is deterministic given the seed: parameter init, the per-epoch
shuffle and batch assembly all draw from one seeded generator, and every
numeric op runs single-threaded through the tensor engine.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import hiergraph
from .hiergraph import HierGraph, Vocabulary, build_vocab
from .model import (
    ModelConfig,
    ModelParams,
    VocabMismatch,
    build_batch,
    forward,
    init_params,
    mae_loss,
)
from .smiles import SmilesParseError
from .rings import RingLimitExceeded
from .tensor import (
    OptimizerState,
    Tape,
    adam_step,
    backward,
    load_checkpoint,
    onecycle_lr,
    save_checkpoint,
)

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)

DESK_PROFILE = dict(L=4, d=128, C=4, d_p=16)
PAPER_PROFILE = dict(L=8, d=512, C=4, d_p=32)

#: candidate peak learning rates for the validation-selected sweep
MAX_LR_GRID = (1e-3, 5e-4, 1e-4, 5e-5)


class MissingColumn(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class OverlappingSplits(ValueError):
    pass


class SplitFileError(ValueError):
    pass


@dataclass
class Record:
    smiles: str
    y: tuple[float, ...]
    graph: HierGraph | None = None


@dataclass
class Dataset:
    records: list[Record]
    target_names: list[str]
    split_assignment: list[str] | None = None
    rejected: list[tuple[int, str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_targets(self) -> int:
        return len(self.target_names)

    def indices(self, split: str) -> list[int]:
        if split == "all" or self.split_assignment is None:
            return list(range(len(self.records)))
        return [i for i, s in enumerate(self.split_assignment) if s == split]

    def targets_matrix(self, idx: list[int]) -> np.ndarray:
        return np.asarray([self.records[i].y for i in idx], dtype=np.float64)


def load_csv(path, smiles_col: str, target_cols: list[str]) -> Dataset:
    """Read a CSV corpus; rows whose SMILES cannot be parsed into a
    hierarchical graph are dropped and logged with the reason."""
    records: list[Record] = []
    rejected: list[tuple[int, str, str]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in [smiles_col, *target_cols] if c not in header]
        if missing:
            raise MissingColumn(f"columns {missing} not in header {header}")
        for row_no, row in enumerate(reader, start=2):
            smiles = (row[smiles_col] or "").strip()
            try:
                y = tuple(float(row[c]) for c in target_cols)
                hiergraph.build_hier_graph(smiles, add_virtual=False)
            except (SmilesParseError, RingLimitExceeded, ValueError) as exc:
                rejected.append((row_no, smiles, str(exc)))
                log.info("dropped row %d (%s): %s", row_no, smiles, exc)
                continue
            records.append(Record(smiles=smiles, y=y))
    if not records:
        raise EmptyDataset(f"no usable rows in {path}")
    log.info("loaded %d records, dropped %d", len(records), len(rejected))
    return Dataset(records=records, target_names=list(target_cols),
                   rejected=rejected)


def dataset_from_graphs(graphs: list[HierGraph],
                        target_names: list[str] | None = None) -> Dataset:
    """Wrap prebuilt graphs (e.g. from a JSONL shard) as a Dataset."""
    if not graphs:
        raise EmptyDataset("no graphs supplied")
    n_t = {len(g.targets) if g.targets else 0 for g in graphs}
    if len(n_t) != 1:
        raise EmptyDataset("graphs carry inconsistent target widths")
    width = n_t.pop()
    if width == 0:
        raise EmptyDataset("graphs carry no target values")
    names = target_names or [f"y{i}" for i in range(width)]
    if len(names) != width:
        raise EmptyDataset(f"{len(names)} target names for {width} targets")
    records = [Record(smiles=g.atom_graph.source_smiles,
                      y=tuple(g.targets), graph=g) for g in graphs]
    return Dataset(records=records, target_names=names)


def _read_split_file(path, n_records: int) -> list[str]:
    assignment: list[str | None] = [None] * n_records
    current: str | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            token = raw.strip()
            if not token:
                continue
            if token in SPLIT_NAMES:
                current = token
                continue
            if current is None:
                raise SplitFileError(f"index {token!r} before any split header")
            try:
                idx = int(token)
            except ValueError as exc:
                raise SplitFileError(f"bad index line {token!r}") from exc
            if not 0 <= idx < n_records:
                raise IndexOutOfRange(
                    f"index {idx} outside dataset of {n_records} records")
            if assignment[idx] is not None:
                raise OverlappingSplits(f"index {idx} assigned twice")
            assignment[idx] = current
    unassigned = [i for i, s in enumerate(assignment) if s is None]
    if unassigned:
        raise SplitFileError(
            f"{len(unassigned)} records missing from the split file "
            f"(first: {unassigned[:5]})")
    return [s for s in assignment if s is not None]


def split_dataset(
    ds: Dataset,
    mode: str = "random",
    seed: int = 0,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    split_file=None,
) -> Dataset:
    """Assign train/val/test labels, either by seeded shuffle and a
    fraction cut or from an explicit index file (headers ``train``,
    ``val``, ``test``, each followed by 0-based indices one per line).
    """
    n = len(ds.records)
    if mode == "file":
        if split_file is None:
            raise SplitFileError("mode='file' needs a split file path")
        ds.split_assignment = _read_split_file(split_file, n)
        return ds
    if mode != "random":
        raise ValueError(f"unknown split mode {mode!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(math.floor(fractions[0] * n))
    n_val = int(math.floor(fractions[1] * n))
    assignment = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            assignment[idx] = "train"
        elif pos < n_train + n_val:
            assignment[idx] = "val"
        else:
            assignment[idx] = "test"
    ds.split_assignment = assignment
    return ds


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 100
    batch_size: int = 32
    max_lr: float = 1e-3
    seed: int = 0
    precision: str = "f32"  # "f32" | "f64"
    standardize_targets: bool | None = None  # None: on iff multi-task

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.max_lr < 1.0:
            raise ValueError("max_lr must lie in (0, 1)")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def resolve_standardize(self, n_targets: int) -> bool:
        if self.standardize_targets is None:
            return n_targets > 1
        return self.standardize_targets


@dataclass
class Standardization:
    mean: np.ndarray  # (T,)
    std: np.ndarray  # (T,); 1.0 where disabled

    def apply(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean) / self.std

    def invert(self, y: np.ndarray) -> np.ndarray:
        return y * self.std + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def identity(cls, n_targets: int) -> "Standardization":
        return cls(mean=np.zeros(n_targets), std=np.ones(n_targets))

    @classmethod
    def from_json(cls, obj: dict) -> "Standardization":
        return cls(mean=np.asarray(obj["mean"], dtype=np.float64),
                   std=np.asarray(obj["std"], dtype=np.float64))


def _fit_standardization(y_train: np.ndarray, enabled: bool) -> Standardization:
    n_targets = y_train.shape[1]
    if not enabled:
        return Standardization.identity(n_targets)
    mean = y_train.mean(axis=0)
    std = y_train.std(axis=0)
    for t in range(n_targets):
        if std[t] <= 0.0:
            log.warning("target %d has zero spread; standardization disabled "
                        "for that task", t)
            mean[t] = 0.0
            std[t] = 1.0
    return Standardization(mean=mean, std=std)


@dataclass
class TrainResult:
    params: ModelParams  # best-validation parameters
    vocab: Vocabulary
    config: TrainConfig
    standardization: Standardization
    target_names: list[str]
    metrics: list[dict]

    def save(self, directory) -> None:
        metadata = {
            "config": self.config.model.to_json(),
            "vocab": self.vocab.to_json(),
            "standardization": self.standardization.to_json(),
            "target_names": self.target_names,
        }
        save_checkpoint(directory, self.params.tensors, metadata)


def load_result(directory) -> TrainResult:
    """Rebuild a usable model from a checkpoint directory."""
    raw, manifest = load_checkpoint(directory)
    config = ModelConfig.from_json(manifest["config"])
    vocab = Vocabulary.from_json(manifest["vocab"])
    std = Standardization.from_json(manifest["standardization"])
    d_va = raw["atom_in.w"].shape[1]
    d_ea = raw["atom.0.edge.w"].shape[1]
    params = ModelParams(tensors=raw, config=config, d_va=d_va, d_ea=d_ea,
                         d_vr=vocab.d_vr, d_er=vocab.d_er)
    train_cfg = TrainConfig(model=config,
                            precision=manifest.get("precision", "f32"))
    return TrainResult(params=params, vocab=vocab, config=train_cfg,
                       standardization=std,
                       target_names=list(manifest["target_names"]),
                       metrics=[])


def _ensure_graphs(ds: Dataset, use_virtual: bool) -> None:
    for rec in ds.records:
        if rec.graph is None:
            rec.graph = hiergraph.build_hier_graph(
                rec.smiles, add_virtual=use_virtual)
        elif rec.graph.ring_graph.has_virtual != use_virtual:
            raise VocabMismatch(
                "prebuilt graphs disagree with config.use_virtual")


def _batches(idx: list[int], batch_size: int) -> list[list[int]]:
    return [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]


def _eval_mae(ds: Dataset, idx: list[int], params: ModelParams,
              vocab: Vocabulary, std: Standardization, batch_size: int,
              dtype) -> np.ndarray:
    """Per-task MAE in original units over the given records."""
    if not idx:
        return np.zeros(0)
    abs_err = np.zeros(len(ds.target_names))
    for chunk in _batches(idx, batch_size):
        graphs = [ds.records[i].graph for i in chunk]
        batch = build_batch(graphs, vocab, dtype=dtype)
        pred = forward(batch, params).data.astype(np.float64)
        y = ds.targets_matrix(chunk)
        abs_err += np.abs(std.invert(pred) - y).sum(axis=0)
    return abs_err / len(idx)


def train(ds: Dataset, config: TrainConfig) -> TrainResult:
    """Optimize on the training split; retain the best-validation model.

    Emits one metrics record per epoch: de-standardized train/val MAE
    per task and the learning rate at the epoch's last optimizer step.
    """
    if ds.split_assignment is None:
        raise ValueError("dataset must be split before training")
    model_cfg = replace(config.model, n_targets=ds.n_targets)
    config = replace(config, model=model_cfg)
    _ensure_graphs(ds, model_cfg.use_virtual)
    dtype = config.dtype

    train_idx = ds.indices("train")
    val_idx = ds.indices("val")
    if not train_idx:
        raise EmptyDataset("training split is empty")

    vocab = build_vocab(ds.records[i].graph for i in train_idx)
    y_train = ds.targets_matrix(train_idx)
    std = _fit_standardization(
        y_train, config.resolve_standardize(ds.n_targets))

    params = init_params(model_cfg, d_vr=vocab.d_vr, d_er=vocab.d_er,
                         seed=config.seed, dtype=dtype)
    state = OptimizerState()
    rng = np.random.default_rng(config.seed)

    steps_per_epoch = math.ceil(len(train_idx) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    step = 0
    metrics: list[dict] = []
    best_val = math.inf
    best_values = params.copy_values()

    for epoch in range(1, config.epochs + 1):
        order = [train_idx[i] for i in rng.permutation(len(train_idx))]
        abs_err = np.zeros(ds.n_targets)
        lr = 0.0
        for chunk in _batches(order, config.batch_size):
            graphs = [ds.records[i].graph for i in chunk]
            y = ds.targets_matrix(chunk)
            batch = build_batch(graphs, vocab, dtype=dtype,
                                targets=std.apply(y).astype(dtype))
            lr = onecycle_lr(step, total_steps, config.max_lr)
            with Tape() as tape:
                pred = forward(batch, params)
                loss = mae_loss(pred, batch.targets)
            grads = backward(tape, loss)
            adam_step(params.tensors, grads, state, lr)
            pred_orig = std.invert(pred.data.astype(np.float64))
            abs_err += np.abs(pred_orig - y).sum(axis=0)
            step += 1
        train_mae = abs_err / len(train_idx)
        val_mae = _eval_mae(ds, val_idx, params, vocab, std,
                            config.batch_size, dtype)
        metrics.append({
            "epoch": epoch,
            "train_mae": [float(v) for v in train_mae],
            "val_mae": [float(v) for v in val_mae],
            "lr": float(lr),
        })
        score = float(val_mae.mean()) if val_idx else float(train_mae.mean())
        if score < best_val:
            best_val = score
            best_values = params.copy_values()
        log.info("epoch %d train_mae=%s val_mae=%s lr=%.3g",
                 epoch, train_mae, val_mae, lr)

    params.load_values(best_values)
    return TrainResult(params=params, vocab=vocab, config=config,
                       standardization=std, target_names=list(ds.target_names),
                       metrics=metrics)


def sweep_max_lr(ds: Dataset, config: TrainConfig,
                 grid: tuple[float, ...] = MAX_LR_GRID
                 ) -> tuple[TrainResult, list[dict]]:
    """Train once per candidate peak rate; keep the best validation MAE.

    Returns the winning result plus one summary record per candidate.
    """
    best: TrainResult | None = None
    best_score = math.inf
    trials: list[dict] = []
    for max_lr in grid:
        result = train(ds, replace(config, max_lr=max_lr))
        last = result.metrics[-1]
        scores = [float(np.mean(m["val_mae"])) for m in result.metrics
                  if m["val_mae"]]
        score = min(scores) if scores else float(np.mean(last["train_mae"]))
        trials.append({"max_lr": max_lr, "best_val_mae": score,
                       "final_train_mae": last["train_mae"]})
        log.info("sweep max_lr=%g -> best val %.4f", max_lr, score)
        if score < best_score:
            best_score = score
            best = result
    assert best is not None
    return best, trials


def evaluate(result: TrainResult, ds: Dataset, split: str = "test") -> dict:
    """Per-task MAE in original units plus the out-of-vocabulary ring
    count encountered, over one split (or 'all')."""
    model_cfg = result.params.config
    _ensure_graphs(ds, model_cfg.use_virtual)
    idx = ds.indices(split)
    if not idx:
        raise EmptyDataset(f"split {split!r} has no records")
    if ds.n_targets != model_cfg.n_targets:
        raise VocabMismatch(
            f"dataset has {ds.n_targets} targets, checkpoint predicts "
            f"{model_cfg.n_targets}")
    oov = 0
    for i in idx:
        for ring in ds.records[i].graph.ring_graph.rings:
            if ring.signature not in result.vocab.ring_types:
                oov += 1
    mae = _eval_mae(ds, idx, result.params, result.vocab,
                    result.standardization,
                    batch_size=max(result.config.batch_size, 1),
                    dtype=result.config.dtype)
    return {"mae": [float(v) for v in mae], "oov_rings": oov,
            "count": len(idx)}


def predict(result: TrainResult, smiles_list: list[str]) -> list[dict]:
    """Row-wise predictions; unparseable rows get a status, not an abort."""
    model_cfg = result.params.config
    rows: list[dict] = []
    graphs: list[HierGraph] = []
    keep: list[int] = []
    for i, smiles in enumerate(smiles_list):
        rows.append({"smiles": smiles, "status": "ok", "values": None})
        try:
            graphs.append(hiergraph.build_hier_graph(
                smiles, add_virtual=model_cfg.use_virtual))
            keep.append(i)
        except (SmilesParseError, RingLimitExceeded) as exc:
            rows[i]["status"] = f"parse_error: {exc}"
    if graphs:
        batch = build_batch(graphs, result.vocab, dtype=result.config.dtype)
        pred = forward(batch, result.params).data.astype(np.float64)
        pred = result.standardization.invert(pred)
        for row_idx, values in zip(keep, pred):
            rows[row_idx]["values"] = [float(v) for v in values]
    return rows


def write_metrics(path, metrics: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in metrics:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")


def make_model_config(profile: str, **overrides) -> ModelConfig:
    """Named hyperparameter profiles: 'desk' for laptop-scale runs,
    'paper' for the full-size configuration."""
    profiles = {"desk": DESK_PROFILE, "paper": PAPER_PROFILE}
    if profile not in profiles:
        raise ValueError(f"unknown profile {profile!r}; use desk or paper")
    base = dict(profiles[profile])
    base.update(overrides)
    return ModelConfig(**base)
