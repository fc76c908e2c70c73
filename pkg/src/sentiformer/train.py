"""Deterministic training: truncated-normal init, AdamW, batching, checkpoints."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor as T
from .data import to_arrays
from .errors import FormatError, NumericError, UsageError
from .model import ModelConfig, ModelParams, build_params
from .tensor import Tensor


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    weight_decay: float = 0.01
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_std: float = 0.02
    init_trunc: float = 0.04
    save_interval: int = 0  # epochs between checkpoints; 0 = final only

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise UsageError("batch_size and epochs must be >= 1")
        return self


def truncated_normal(rng, shape, std, trunc):
    """Normal(0, std^2) with rejection resampling outside +-trunc."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        mask = np.abs(out) > trunc
        n_bad = int(mask.sum())
        if not n_bad:
            return out
        out[mask] = rng.normal(0.0, std, size=n_bad)


def init_params(model_cfg: ModelConfig, train_cfg: TrainConfig, dtype=T.SINGLE) -> ModelParams:
    """Build parameters deterministically from the seed. Linear weights and
    learned tokens are truncated-normal; biases and positional embeddings are
    zero; layer-norm scales are one."""
    rng = np.random.default_rng(train_cfg.seed)

    def init(kind, shape):
        if kind == "weight":
            return truncated_normal(rng, shape, train_cfg.init_std, train_cfg.init_trunc)
        if kind == "zero":
            return np.zeros(shape)
        if kind == "one":
            return np.ones(shape)
        raise UsageError(f"unknown init kind {kind!r}")

    return build_params(model_cfg, init, dtype=dtype)


class AdamWState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0


def adamw_step(params: ModelParams, state: AdamWState, cfg: TrainConfig) -> None:
    """Decoupled weight decay, bias-corrected moments; zeroes grads afterward."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if cfg.weight_decay:
            p.data *= 1.0 - cfg.learning_rate * cfg.weight_decay
        mhat = m / c1
        vhat = v / c2
        p.data -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)).astype(p.dtype)
        p.zero_grad()


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, config JSON, then named arrays


_MAGIC = b"SFCK"
_VERSION = 1
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_TAG_DTYPES = {0: np.dtype("float32"), 1: np.dtype("float64")}


def save_checkpoint(params: ModelParams, model_cfg: ModelConfig, path) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    cfg_blob = json.dumps(model_cfg.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    entries = list(params.items())
    buf.write(struct.pack("<I", len(entries)))
    for name, t in entries:
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", _DTYPE_TAGS[t.data.dtype]))
        buf.write(struct.pack("<B", t.data.ndim))
        for extent in t.data.shape:
            buf.write(struct.pack("<I", extent))
        buf.write(np.ascontiguousarray(t.data).astype(t.data.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return b


def load_checkpoint(path):
    """Returns (params, model_config); arrays round-trip bit-exactly."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise FormatError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg = ModelConfig.from_dict(json.loads(_read_exact(fh, cfg_len, "config")))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        params = ModelParams(cfg)
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
            if tag not in _TAG_DTYPES:
                raise FormatError(f"unknown dtype tag {tag} for {name!r}")
            dtype = _TAG_DTYPES[tag]
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "shape"))[0] for _ in range(ndim)
            )
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            raw = _read_exact(fh, n_bytes, f"payload of {name!r}")
            arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
            params.register(name, Tensor(arr.copy(), requires_grad=True))
        if fh.read(1):
            raise FormatError("trailing bytes after final checkpoint entry")
    return params, cfg


# ---------------------------------------------------------------------------
# training loop


def _macro_f1(confusion: np.ndarray) -> float:
    scores = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def format_metrics_header(has_eval: bool) -> str:
    cols = ["epoch", "loss", "accuracy", "macro_f1"]
    if has_eval:
        cols += ["eval_accuracy", "eval_macro_f1"]
    return ",".join(cols)


def format_metrics_row(rec: dict, has_eval: bool) -> str:
    fields = [str(rec["epoch"]), repr(rec["loss"]), repr(rec["accuracy"]), repr(rec["macro_f1"])]
    if has_eval:
        fields += [repr(rec["eval_accuracy"]), repr(rec["eval_macro_f1"])]
    return ",".join(fields)


def train(dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, eval_dataset=None,
          out_dir=None, log=None, params: ModelParams | None = None):
    """Seeded training loop; returns (params, per-epoch metrics records).

    With out_dir set, writes metrics.csv, checkpoints at the save interval,
    and model.ckpt at the end.
    """
    from . import evaluate as E  # local import to avoid a cycle

    model_cfg.validate()
    train_cfg.validate()
    if not dataset:
        raise UsageError("training dataset is empty")
    arrays = to_arrays(dataset)
    M._check_labels(arrays["labels"], model_cfg.n_classes, arrays["ids"])
    n = len(dataset)
    if params is None:
        params = init_params(model_cfg, train_cfg)
    state = AdamWState()
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))

    metrics = []
    has_eval = eval_dataset is not None
    lines = ["# ablation: " + (",".join(sorted(model_cfg.ablation)) or "none"),
             format_metrics_header(has_eval)]
    for epoch in range(1, train_cfg.epochs + 1):
        perm = rng.permutation(n)
        total_loss = 0.0
        confusion = np.zeros((model_cfg.n_classes, model_cfg.n_classes), dtype=np.int64)
        for start in range(0, n, train_cfg.batch_size):
            idx = perm[start:start + train_cfg.batch_size]
            ev = Tensor(arrays["e_v"][idx])
            ec = Tensor(arrays["e_c"][idx])
            ep = Tensor(arrays["e_p"][idx])
            labels = arrays["labels"][idx]
            logits, _ = M.forward_parts(ev, ec, ep, params, model_cfg)
            loss = M.cross_entropy_from_logits(logits, labels)
            T.backward(loss)
            adamw_step(params, state, train_cfg)
            total_loss += float(loss.data) * len(idx)
            preds = logits.data.argmax(axis=-1)
            np.add.at(confusion, (labels, preds), 1)
        rec = {
            "epoch": epoch,
            "loss": total_loss / n,
            "accuracy": float(np.trace(confusion) / n),
            "macro_f1": _macro_f1(confusion),
            "n_steps": state.step,
        }
        if has_eval:
            report = E.evaluate(params, eval_dataset, model_cfg)
            rec["eval_accuracy"] = report.accuracy
            rec["eval_macro_f1"] = report.macro_f1
        metrics.append(rec)
        line = format_metrics_row(rec, has_eval)
        lines.append(line)
        if log is not None:
            log(line)
        if out_dir is not None and train_cfg.save_interval and epoch % train_cfg.save_interval == 0:
            save_checkpoint(params, model_cfg, f"{out_dir}/model-epoch{epoch}.ckpt")

    if out_dir is not None:
        with open(f"{out_dir}/metrics.csv", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        save_checkpoint(params, model_cfg, f"{out_dir}/model.ckpt")
    return params, metrics
