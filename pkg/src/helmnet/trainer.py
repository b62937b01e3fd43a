"""Epoch loop, CSV logs, binary checkpoints and the experiment grid."""

from __future__ import annotations

import ast
import io
import itertools
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics
from .data import DEFAULT_RATIOS, DatasetSplit, batches, load_corpus, read_manifest, stratified_split
from .model import Model, ModelConfig, build
from .optim import SGDMomentum, softmax_cross_entropy

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "final"
    use_batchnorm: bool = False
    dropout_rate: float = 0.0
    image_size: int = 224
    batch_size: int = 32
    learning_rate: float = 0.02
    epochs: int = 60
    momentum: float = 0.9
    seed: int = 0
    data_root: str = ""
    manifest: str = ""
    ratios: tuple = DEFAULT_RATIOS
    max_train_samples: int = 0
    log_path: str = ""
    checkpoint_path: str = ""
    threads: int = 1

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.batch_size < 1 or self.epochs < 0 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1, epochs >= 0")
        self.model_config()  # validates variant and dropout

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.variant, self.use_batchnorm, self.dropout_rate,
                           input_size=self.image_size, init_seed=self.seed)

    def to_text(self, skip=()) -> str:
        lines = []
        for f in fields(self):
            if f.name in skip:
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        return cls.from_mapping({**parse_key_values(text), **overrides})

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(kinds[key], raw)
        return cls(**kwargs)


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(kind: str, raw):
    if not isinstance(raw, str):
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "tuple":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    wall_ms: int

    HEADER = "epoch,train_loss,train_acc,val_acc,wall_ms"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.train_loss:.8f},{self.train_accuracy:.4f},{self.val_accuracy:.4f},{self.wall_ms}"


# -- checkpoints -------------------------------------------------------------

MAGIC = b"HNET"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class BadVersion(CheckpointError):
    pass


class BadCRC(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    state: dict  # epoch, step, best_val_acc, best_epoch
    tensors: dict[str, np.ndarray]


def checkpoint_bytes(config: TrainConfig, state: dict, model: Model, optimizer: SGDMomentum) -> bytes:
    tensors = {}
    for name, p, _ in model.named_parameters():
        tensors[f"param/{name}"] = p
    for name, b in model.named_buffers():
        tensors[f"buffer/{name}"] = b
    for name, v in optimizer.velocity.items():
        tensors[f"velocity/{name}"] = v
    # thread count is a wall-time knob, not state; leaving it out keeps files comparable
    block = config.to_text(skip=("threads",)) + "".join(f"state.{k}={v!r}\n" for k, v in state.items())
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    raw = block.encode()
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)
    out.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        key = name.encode()
        out.write(struct.pack("<I", len(key)))
        out.write(key)
        out.write(struct.pack("<I", t.ndim))
        out.write(struct.pack(f"<{t.ndim}I", *t.shape))
        out.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, config: TrainConfig, state: dict, model: Model, optimizer: SGDMomentum):
    data = checkpoint_bytes(config, state, model, optimizer)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 12:
        raise BadCRC("checkpoint truncated")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise BadCRC("checkpoint CRC mismatch (corrupt or truncated file)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    pos = 8
    (n,) = struct.unpack_from("<I", body, pos)
    pos += 4
    block = body[pos:pos + n].decode()
    pos += n
    values = parse_key_values(block)
    state = {k[len("state."):]: ast.literal_eval(v) for k, v in values.items() if k.startswith("state.")}
    config = TrainConfig.from_mapping({k: v for k, v in values.items() if not k.startswith("state.")})
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + klen].decode()
        pos += klen
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * size
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} trailing bytes after tensors")
    return Checkpoint(config, state, tensors)


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def restore(ckpt: Checkpoint) -> tuple[Model, SGDMomentum]:
    """Rebuild model and optimizer exactly as they were saved."""
    cfg = ckpt.config
    model = build(cfg.model_config())
    for name, p, _ in model.named_parameters():
        p[...] = _take(ckpt, f"param/{name}", p.shape)
    for name, b in model.named_buffers():
        b[...] = _take(ckpt, f"buffer/{name}", b.shape)
    opt = SGDMomentum(cfg.learning_rate, cfg.momentum)
    for key, t in ckpt.tensors.items():
        if key.startswith("velocity/"):
            opt.velocity[key[len("velocity/"):]] = t.copy()
    model.set_step(int(ckpt.state.get("step", 0)))
    return model, opt


def _take(ckpt, key, shape):
    try:
        t = ckpt.tensors[key]
    except KeyError:
        raise CheckpointError(f"checkpoint lacks tensor {key}") from None
    if t.shape != tuple(shape):
        raise CheckpointError(f"tensor {key} has shape {t.shape}, model expects {tuple(shape)}")
    return t


# -- training ----------------------------------------------------------------


@dataclass
class FitResult:
    model: Model
    optimizer: SGDMomentum
    logs: list
    test_report: metrics.EvalReport
    val_report: metrics.EvalReport
    state: dict = field(default_factory=dict)


def load_split(config: TrainConfig) -> DatasetSplit:
    if config.manifest:
        return read_manifest(config.manifest, size=config.image_size)
    if not config.data_root:
        raise ValueError("config needs data_root or manifest")
    samples = load_corpus(config.data_root, size=config.image_size, threads=config.threads)
    return stratified_split(samples, config.ratios, config.seed)


def limit_train(split: DatasetSplit, n: int) -> list:
    """First ``n`` training samples, alternating classes so both are present."""
    if n <= 0 or n >= len(split.train):
        return split.train
    by_class = [[s for s in split.train if s.label == lab] for lab in (0, 1)]
    picked = [s for pair in itertools.zip_longest(*by_class) for s in pair if s is not None]
    return picked[:n]


def _best_path(path: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".best" + (p.suffix or ".hnet"))


def fit(config: TrainConfig, data: DatasetSplit | None = None, resume: Checkpoint | None = None) -> FitResult:
    split = data if data is not None else load_split(config)
    train = limit_train(split, config.max_train_samples)
    if not train or not split.validation:
        raise ValueError("training and validation subsets must be non-empty")
    if resume is not None:
        model, opt = restore(resume)
        state = dict(resume.state)
    else:
        model = build(config.model_config())
        opt = SGDMomentum(config.learning_rate, config.momentum)
        state = {"epoch": 0, "step": 0, "best_val_acc": -1.0, "best_epoch": 0}
    log_fh = None
    if config.log_path:
        fresh = resume is None or not Path(config.log_path).exists()
        log_fh = open(config.log_path, "w" if fresh else "a")
        if fresh:
            log_fh.write(EpochLog.HEADER + "\n")
    logs = []
    train_acc = val_acc = None
    try:
        for epoch in range(state["epoch"] + 1, config.epochs + 1):
            t0 = time.perf_counter()
            loss_sum, seen = 0.0, 0
            for b, batch in enumerate(batches(train, config.batch_size, config.seed, epoch)):
                model.set_step(state["step"])
                logits = model.forward(batch.inputs, train=True)
                out = softmax_cross_entropy(logits, batch.labels)
                if not np.isfinite(out.loss):
                    raise NumericalError(f"non-finite loss {out.loss} at epoch {epoch}, batch {b}")
                model.backward(out.logit_grad)
                opt.step(model.named_parameters())
                state["step"] += 1
                loss_sum += out.loss * len(batch.labels)
                seen += len(batch.labels)
            train_acc = metrics.accuracy(model, train, config.batch_size)
            val_acc = metrics.accuracy(model, split.validation, config.batch_size)
            entry = EpochLog(epoch, loss_sum / seen, train_acc, val_acc,
                             int(1000 * (time.perf_counter() - t0)))
            logs.append(entry)
            state["epoch"] = epoch
            log.info("epoch %d loss %.4f train %.2f val %.2f", epoch, entry.train_loss, train_acc, val_acc)
            if log_fh:
                log_fh.write(entry.csv_row() + "\n")
                log_fh.flush()
            if val_acc > state["best_val_acc"]:
                state["best_val_acc"], state["best_epoch"] = val_acc, epoch
                if config.checkpoint_path:
                    save_checkpoint(_best_path(config.checkpoint_path), config, state, model, opt)
            if config.checkpoint_path:
                save_checkpoint(config.checkpoint_path, config, state, model, opt)
    finally:
        if log_fh:
            log_fh.close()
    if config.checkpoint_path and not logs and resume is None:
        save_checkpoint(config.checkpoint_path, config, state, model, opt)
    if train_acc is None:
        train_acc = metrics.accuracy(model, train, config.batch_size)
        val_acc = metrics.accuracy(model, split.validation, config.batch_size)
    reports = {}
    for name, subset in (("val", split.validation), ("test", split.test)):
        if subset:
            _, cm = metrics.evaluate(model, subset, config.batch_size)
            reports[name] = metrics.report(cm, train_acc, val_acc)
    return FitResult(model, opt, logs, reports.get("test"), reports["val"], state)


# -- experiment grid ---------------------------------------------------------

GRID_HEADER = "experiment,precision,recall,f1,accuracy,overfitting_degree,train_acc,val_acc,status"


def sub_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


def experiment_name(cfg: TrainConfig) -> str:
    bn = "bn" if cfg.use_batchnorm else "no-bn"
    return f"{cfg.variant}/{bn}/dropout-{cfg.dropout_rate:g}"


def parse_grid(text: str) -> dict:
    """``key=v1,v2,...`` lines for variant, use_batchnorm and dropout_rate."""
    raw = parse_key_values(text)
    kinds = {"variant": "str", "use_batchnorm": "bool", "dropout_rate": "float"}
    grid = {}
    for key, value in raw.items():
        if key not in kinds:
            raise ValueError(f"grid key {key!r} not one of {sorted(kinds)}")
        grid[key] = [_coerce(kinds[key], v.strip()) for v in value.split(",") if v.strip()]
    return grid


def run_experiment_grid(base: TrainConfig, grid: dict, data: DatasetSplit | None = None) -> str:
    """Fit every cell of the grid; return the results as CSV text.

    Metrics are percentages on the test subset (validation when the test
    subset is empty). A failing cell is recorded and the grid continues.
    """
    keys = [k for k in ("variant", "use_batchnorm", "dropout_rate") if grid.get(k)]
    out = [GRID_HEADER]
    if not keys or any(not grid[k] for k in grid):
        return "\n".join(out) + "\n"
    split = None
    for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        try:
            cfg = replace(base, **dict(zip(keys, combo)), seed=sub_seed(base.seed, i),
                          log_path="", checkpoint_path="")
        except ValueError as exc:
            out.append(f"cell-{i},,,,,,,,error: {exc}")
            continue
        name = experiment_name(cfg)
        try:
            if split is None:
                split = data if data is not None else load_split(base)
            res = fit(cfg, data=split)
            r = res.test_report or res.val_report
            out.append(f"{name},{100 * r.precision:.2f},{100 * r.recall:.2f},{100 * r.f1:.2f},"
                       f"{100 * r.accuracy:.2f},{r.overfitting_degree:.2f},{r.train_accuracy:.2f},"
                       f"{r.val_accuracy:.2f},ok")
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.exception("grid cell %s failed", name)
            out.append(f"{name},,,,,,,,error: {str(exc).replace(',', ';')}")
    return "\n".join(out) + "\n"
