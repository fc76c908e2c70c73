"""The SentiFormer network.

Three stages over precomputed 512-d encoder outputs:
  1. unified embedding: per-stream FC, expansion to L x d_h, one transformer
     layer per stream;
  2. adaptive relevance learning: N cascaded transformer layers on the image
     stream, with per-step attention from the image stream into the layer-1
     caption/prompt embeddings accumulated into a residual metadata token;
  3. cross-modal fusion: M blocks attending from the metadata-derived target
     stream (extra token prepended) into the fixed vision-derived source
     stream, followed by a linear classification head on the token row.

Every ablation from the configuration flags reroutes the forward pass here.
All functions accept a leading batch axis on the activations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, DimensionError, UsageError
from .tensor import Tensor

ABLATION_FLAGS = frozenset(
    {"no_vision", "no_caption", "no_prompt", "mlp_unified", "mlp_adaptive", "mlp_fusion"}
)

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    d_e: int = 512
    d_h: int = 128
    d_k: int = 16
    d_s: int = 64
    n_classes: int = 8
    depth_adaptive: int = 4
    depth_fusion: int = 6
    heads_self: int = 8
    heads_cross: int = 2
    ablation: set = field(default_factory=set)

    def validate(self) -> "ModelConfig":
        if self.heads_self * self.d_k != self.d_h:
            raise UsageError(
                f"heads_self*d_k must equal d_h: {self.heads_self}*{self.d_k} != {self.d_h}"
            )
        if self.heads_cross * self.d_s != self.d_h:
            raise UsageError(
                f"heads_cross*d_s must equal d_h: {self.heads_cross}*{self.d_s} != {self.d_h}"
            )
        if self.depth_adaptive < 1 or self.depth_fusion < 1:
            raise UsageError("adaptive and fusion depths must be >= 1")
        if self.n_classes < 2:
            raise UsageError("n_classes must be >= 2")
        unknown = set(self.ablation) - ABLATION_FLAGS
        if unknown:
            raise UsageError(f"unknown ablation flags: {sorted(unknown)}")
        return self

    @property
    def use_caption(self) -> bool:
        return "no_caption" not in self.ablation

    @property
    def use_prompt(self) -> bool:
        return "no_prompt" not in self.ablation

    def to_dict(self) -> dict:
        return {
            "d_e": self.d_e,
            "d_h": self.d_h,
            "d_k": self.d_k,
            "d_s": self.d_s,
            "n_classes": self.n_classes,
            "depth_adaptive": self.depth_adaptive,
            "depth_fusion": self.depth_fusion,
            "heads_self": self.heads_self,
            "heads_cross": self.heads_cross,
            "ablation": sorted(self.ablation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["ablation"] = set(d.get("ablation", []))
        return cls(**d).validate()


@dataclass
class UnifiedStates:
    h_v: Tensor
    h_c: Tensor | None
    h_p: Tensor | None


@dataclass
class AdaptiveStates:
    h_v: Tensor
    h_m: Tensor
    layer_index: int


class ModelParams:
    """Named registry of trainable tensors; names are stable across save/load."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._store: dict[str, Tensor] = {}

    def register(self, name: str, t: Tensor) -> None:
        if name in self._store:
            raise UsageError(f"parameter {name!r} registered twice")
        self._store[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def names(self):
        return list(self._store)

    def items(self):
        return self._store.items()

    def tensors(self):
        return list(self._store.values())

    def zero_grads(self) -> None:
        for t in self._store.values():
            t.zero_grad()

    def n_params(self) -> int:
        return sum(t.size for t in self._store.values())


# ---------------------------------------------------------------------------
# parameter construction


def _active_streams(cfg: ModelConfig):
    streams = ["v"]
    if cfg.use_caption:
        streams.append("c")
    if cfg.use_prompt:
        streams.append("p")
    return streams


def build_params(cfg: ModelConfig, init, dtype=T.SINGLE) -> ModelParams:
    """Construct the parameter registry for a configuration.

    init(kind, shape) -> ndarray, kind in {"weight", "zero", "one"}.
    Registration order is fixed so a seeded initializer is deterministic.
    """
    cfg.validate()
    params = ModelParams(cfg)

    def reg(name, kind, *shape):
        params.register(name, Tensor(init(kind, shape).astype(dtype), requires_grad=True))

    def reg_transformer_layer(prefix):
        reg(f"{prefix}.ln1.g", "one", cfg.d_h)
        reg(f"{prefix}.ln1.b", "zero", cfg.d_h)
        for i in range(cfg.heads_self):
            reg(f"{prefix}.attn.h{i}.wq", "weight", cfg.d_h, cfg.d_k)
            reg(f"{prefix}.attn.h{i}.wk", "weight", cfg.d_h, cfg.d_k)
            reg(f"{prefix}.attn.h{i}.wv", "weight", cfg.d_h, cfg.d_k)
        reg(f"{prefix}.attn.wo", "weight", cfg.d_h, cfg.d_h)
        reg_fc_block(prefix)

    def reg_fc_block(prefix):
        reg(f"{prefix}.ln2.g", "one", cfg.d_h)
        reg(f"{prefix}.ln2.b", "zero", cfg.d_h)
        reg(f"{prefix}.fc.w", "weight", cfg.d_h, cfg.d_h)
        reg(f"{prefix}.fc.b", "zero", cfg.d_h)

    streams = _active_streams(cfg)

    if "mlp_unified" in cfg.ablation:
        h = mlp_hidden_width(cfg, "unified")
        for s in streams:
            reg(f"mlp_unified.{s}.w1", "weight", cfg.d_e, h)
            reg(f"mlp_unified.{s}.b1", "zero", h)
            reg(f"mlp_unified.{s}.w2", "weight", h, cfg.n_classes * cfg.d_h)
            reg(f"mlp_unified.{s}.b2", "zero", cfg.n_classes * cfg.d_h)
    else:
        for s in streams:
            reg(f"unified.{s}.fc.w", "weight", cfg.d_e, cfg.d_h)
            reg(f"unified.{s}.fc.b", "zero", cfg.d_h)
            reg(f"unified.{s}.expand.w", "weight", cfg.n_classes, 1)
            reg(f"unified.{s}.expand.b", "zero", cfg.n_classes, cfg.d_h)
            reg_transformer_layer(f"unified.{s}.layer")

    if "mlp_adaptive" in cfg.ablation:
        h = mlp_hidden_width(cfg, "adaptive")
        reg("mlp_adaptive.w1", "weight", 3 * cfg.d_h, h)
        reg("mlp_adaptive.b1", "zero", h)
        reg("mlp_adaptive.w2", "weight", h, 2 * cfg.d_h)
        reg("mlp_adaptive.b2", "zero", 2 * cfg.d_h)
    else:
        for j in range(1, cfg.depth_adaptive + 1):
            reg_transformer_layer(f"adaptive.layer{j}")
        for s in ("c", "p"):
            if (s == "c" and not cfg.use_caption) or (s == "p" and not cfg.use_prompt):
                continue
            for i in range(cfg.heads_self):
                reg(f"adaptive.attn.{s}.h{i}.wq", "weight", cfg.d_h, cfg.d_k)
                reg(f"adaptive.attn.{s}.h{i}.wk", "weight", cfg.d_h, cfg.d_k)
                reg(f"adaptive.attn.{s}.h{i}.wv", "weight", cfg.d_h, cfg.d_k)
        if cfg.use_caption or cfg.use_prompt:
            reg("adaptive.wo", "weight", cfg.d_h, cfg.d_h)
        reg("adaptive.token", "weight", cfg.n_classes, cfg.d_h)

    if "mlp_fusion" in cfg.ablation:
        h = mlp_hidden_width(cfg, "fusion")
        reg("mlp_fusion.w1", "weight", 2 * cfg.d_h, h)
        reg("mlp_fusion.b1", "zero", h)
        reg("mlp_fusion.w2", "weight", h, cfg.d_h)
        reg("mlp_fusion.b2", "zero", cfg.d_h)
    else:
        reg("fusion.extra_token", "weight", 1, cfg.d_h)
        reg("fusion.pos_s", "zero", cfg.n_classes + 1, cfg.d_h)
        reg("fusion.pos_t", "zero", cfg.n_classes + 1, cfg.d_h)
        for m in range(1, cfg.depth_fusion + 1):
            prefix = f"fusion.block{m}"
            reg(f"{prefix}.ln0.g", "one", cfg.d_h)
            reg(f"{prefix}.ln0.b", "zero", cfg.d_h)
            for i in range(cfg.heads_cross):
                reg(f"{prefix}.self.h{i}.wq", "weight", cfg.d_h, cfg.d_s)
                reg(f"{prefix}.self.h{i}.wk", "weight", cfg.d_h, cfg.d_s)
                reg(f"{prefix}.self.h{i}.wv", "weight", cfg.d_h, cfg.d_s)
            reg(f"{prefix}.ln1.g", "one", cfg.d_h)
            reg(f"{prefix}.ln1.b", "zero", cfg.d_h)
            for i in range(cfg.heads_cross):
                reg(f"{prefix}.attn.h{i}.wq", "weight", cfg.d_h, cfg.d_s)
                reg(f"{prefix}.attn.h{i}.wk", "weight", cfg.d_h, cfg.d_s)
                reg(f"{prefix}.attn.h{i}.wv", "weight", cfg.d_h, cfg.d_s)
            reg_fc_block(prefix)

    reg("head.w", "weight", cfg.d_h, cfg.n_classes)
    reg("head.b", "zero", cfg.n_classes)
    return params


# ---------------------------------------------------------------------------
# parameter counting and MLP-substitute sizing


def _fc_block_param_count(d: int) -> int:
    return 2 * d + d * d + d


def transformer_layer_param_count(cfg: ModelConfig) -> int:
    d = cfg.d_h
    return 2 * d + cfg.heads_self * 3 * d * cfg.d_k + d * d + _fc_block_param_count(d)


def module_param_count(cfg: ModelConfig, module_id: str) -> int:
    """Parameter count of the transformer realization of one stage."""
    d, L = cfg.d_h, cfg.n_classes
    if module_id == "unified":
        per_stream = cfg.d_e * d + d + L + L * d + transformer_layer_param_count(cfg)
        return per_stream * len(_active_streams(cfg))
    if module_id == "adaptive":
        n_meta = int(cfg.use_caption) + int(cfg.use_prompt)
        total = cfg.depth_adaptive * transformer_layer_param_count(cfg)
        total += n_meta * cfg.heads_self * 3 * d * cfg.d_k
        if n_meta:
            total += d * d
        total += L * d
        return total
    if module_id == "fusion":
        per_block = 4 * d + 2 * cfg.heads_cross * 3 * d * cfg.d_s + _fc_block_param_count(d)
        return cfg.depth_fusion * per_block + d + 2 * (L + 1) * d
    raise UsageError(f"unknown module_id {module_id!r}")


def mlp_hidden_width(cfg: ModelConfig, module_id: str) -> int:
    """Solve the hidden width so the two-layer substitute matches the replaced
    module's parameter count (the match is asserted to be within 5%)."""
    d, L = cfg.d_h, cfg.n_classes
    target = module_param_count(cfg, module_id)
    if module_id == "unified":
        per_stream = target / len(_active_streams(cfg))
        h = (per_stream - L * d) / (cfg.d_e + 1 + L * d)
    elif module_id == "adaptive":
        h = (target - 2 * d) / (3 * d + 1 + 2 * d)
    else:
        h = (target - d) / (2 * d + 1 + d)
    return max(1, round(h))


def mlp_substitute_param_count(cfg: ModelConfig, module_id: str) -> int:
    d, L = cfg.d_h, cfg.n_classes
    h = mlp_hidden_width(cfg, module_id)
    if module_id == "unified":
        return len(_active_streams(cfg)) * (cfg.d_e * h + h + h * L * d + L * d)
    if module_id == "adaptive":
        return 3 * d * h + h + h * 2 * d + 2 * d
    return 2 * d * h + h + h * d + d


# ---------------------------------------------------------------------------
# forward pieces


def _multihead(q_input: Tensor, kv: Tensor, weights, n_heads: int, head_dim: int) -> Tensor:
    """Scaled dot-product attention with all heads stacked into one batch axis;
    weights is ((wq head tensors), (wk ...), (wv ...)). Heads are projected by
    one concatenated matmul each and the results concatenated back along the
    feature axis."""
    inv = 1.0 / math.sqrt(head_dim)
    wq, wk, wv = (w[0] if len(w) == 1 else T.concat(w, axis=-1) for w in weights)
    q = T.split_heads(T.matmul(q_input, wq), n_heads)
    k = T.split_heads(T.matmul(kv, wk), n_heads)
    v = T.split_heads(T.matmul(kv, wv), n_heads)
    scores = T.scale(T.matmul(q, T.transpose(k)), inv)
    return T.merge_heads(T.matmul(T.softmax_rows(scores), v))


def _head_weights(params: ModelParams, prefix: str, n_heads: int):
    return tuple(tuple(params[f"{prefix}.h{i}.{name}"] for i in range(n_heads))
                 for name in ("wq", "wk", "wv"))


def _self_attention(xn: Tensor, params: ModelParams, prefix: str, cfg: ModelConfig) -> Tensor:
    heads = _multihead(xn, xn, _head_weights(params, prefix, cfg.heads_self),
                       cfg.heads_self, cfg.d_k)
    return T.matmul(heads, params[f"{prefix}.wo"])


def _fc_block(y: Tensor, params: ModelParams, prefix: str) -> Tensor:
    yn = T.layer_norm(y, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], LN_EPS)
    return T.gelu(T.add(T.matmul(yn, params[f"{prefix}.fc.w"]), params[f"{prefix}.fc.b"]))


def transformer_layer(x: Tensor, params: ModelParams, prefix: str, cfg: ModelConfig) -> Tensor:
    """Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.))."""
    xn = T.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], LN_EPS)
    y = T.add(x, _self_attention(xn, params, f"{prefix}.attn", cfg))
    return T.add(y, _fc_block(y, params, prefix))


def adaptive_attention(query: Tensor, kv: Tensor, params: ModelParams, stream: str,
                       cfg: ModelConfig) -> Tensor:
    """Per-head bilinear attention of the image stream into one metadata stream:
    Softmax(Q Wq Wk^T K^T / sqrt(d_k)) (V Wv), heads concatenated."""
    weights = _head_weights(params, f"adaptive.attn.{stream}", cfg.heads_self)
    return _multihead(query, kv, weights, cfg.heads_self, cfg.d_k)


def unified_embed(e: Tensor, stream: str, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """FC to d_h, expand to L x d_h with the learned column weight, one
    transformer layer. e has shape (n, d_e)."""
    if e.shape[-1] != cfg.d_e:
        raise DimensionError(f"stream {stream!r}: expected vectors of length {cfg.d_e}, got {e.shape[-1]}")
    h0 = T.add(T.matmul(e, params[f"unified.{stream}.fc.w"]), params[f"unified.{stream}.fc.b"])
    h0 = T.reshape(h0, (e.shape[0], 1, cfg.d_h))
    expanded = T.add(T.matmul(params[f"unified.{stream}.expand.w"], h0),
                     params[f"unified.{stream}.expand.b"])
    return transformer_layer(expanded, params, f"unified.{stream}.layer", cfg)


def adaptive_step(h_v: Tensor, h_c1, h_p1, h_m: Tensor, params: ModelParams,
                  cfg: ModelConfig, j: int):
    """One adaptive-learning step. Keys/values are always the layer-1 metadata
    embeddings; the query is the current image stream. The metadata token
    update is residual; with both metadata streams dropped it is the identity."""
    if not 1 <= j <= cfg.depth_adaptive:
        raise UsageError(f"adaptive step index {j} outside [1, {cfg.depth_adaptive}]")
    h_v_next = transformer_layer(h_v, params, f"adaptive.layer{j}", cfg)
    terms = []
    if h_c1 is not None:
        terms.append(adaptive_attention(h_v, h_c1, params, "c", cfg))
    if h_p1 is not None:
        terms.append(adaptive_attention(h_v, h_p1, params, "p", cfg))
    if terms:
        summed = T.add(terms[0], terms[1]) if len(terms) == 2 else terms[0]
        h_m_next = T.add(h_m, T.matmul(summed, params["adaptive.wo"]))
    else:
        h_m_next = h_m
    return h_v_next, h_m_next


def adaptive_learning(u: UnifiedStates, params: ModelParams, cfg: ModelConfig):
    h_v = u.h_v
    h_m = params["adaptive.token"]
    for j in range(1, cfg.depth_adaptive + 1):
        h_v, h_m = adaptive_step(h_v, u.h_c, u.h_p, h_m, params, cfg, j)
    return h_v, h_m


def _cross_attention(q_input: Tensor, kv: Tensor, params: ModelParams, prefix: str,
                     cfg: ModelConfig) -> Tensor:
    """heads_cross heads of dim d_s, queries from q_input, keys/values from kv,
    heads concatenated with no output projection."""
    weights = _head_weights(params, prefix, cfg.heads_cross)
    return _multihead(q_input, kv, weights, cfg.heads_cross, cfg.d_s)


def _cross_block(xt: Tensor, xs: Tensor, params: ModelParams, prefix: str,
                 cfg: ModelConfig) -> Tensor:
    """Decoder-style pre-norm block: target self-attention (lets the head token
    gather the rest of the target sequence), then attention into the source,
    then the FC sub-block.  Without the self-attention step the classified head
    row could never see the metadata rows of the target stream."""
    xtn0 = T.layer_norm(xt, params[f"{prefix}.ln0.g"], params[f"{prefix}.ln0.b"], LN_EPS)
    xt = T.add(xt, _cross_attention(xtn0, xtn0, params, f"{prefix}.self", cfg))
    xtn = T.layer_norm(xt, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], LN_EPS)
    xt = T.add(xt, _cross_attention(xtn, xs, params, f"{prefix}.attn", cfg))
    return T.add(xt, _fc_block(xt, params, prefix))


def cross_modal_fuse(h_v_final: Tensor, h_m_final: Tensor, params: ModelParams,
                     cfg: ModelConfig) -> Tensor:
    """Prepend the shared extra token to both streams, add positional
    embeddings, then run M blocks attending target -> source. The source
    stream is fixed at its block-0 value."""
    he = params["fusion.extra_token"]
    n = h_v_final.shape[0]
    xs = T.add(T.concat([T.tile_leading(he, n), h_v_final], axis=-2), params["fusion.pos_s"])
    if h_m_final.data.ndim == 2:
        xt = T.add(T.concat([he, h_m_final], axis=-2), params["fusion.pos_t"])
    else:
        xt = T.add(T.concat([T.tile_leading(he, n), h_m_final], axis=-2), params["fusion.pos_t"])
    for m in range(1, cfg.depth_fusion + 1):
        xt = _cross_block(xt, xs, params, f"fusion.block{m}", cfg)
    return xt


def classify_logits(x_fused: Tensor, params: ModelParams) -> Tensor:
    token = T.select_row(x_fused, 0)
    return T.add(T.matmul(token, params["head.w"]), params["head.b"])


def classify(x_fused: Tensor, params: ModelParams) -> Tensor:
    """Probability distribution over classes from the extra-token row."""
    return T.softmax_rows(classify_logits(x_fused, params))


# ---------------------------------------------------------------------------
# MLP substitutes (parameter-scale-matched ablations)


def mlp_substitute(module_id: str, params: ModelParams, cfg: ModelConfig, *inputs):
    """Dispatch to the two-layer substitute for one replaced stage."""
    if f"mlp_{module_id}" not in cfg.ablation:
        raise UsageError(f"mlp_{module_id} flag is not set in the configuration")
    if module_id == "unified":
        (e, stream), = inputs
        w1, b1 = params[f"mlp_unified.{stream}.w1"], params[f"mlp_unified.{stream}.b1"]
        w2, b2 = params[f"mlp_unified.{stream}.w2"], params[f"mlp_unified.{stream}.b2"]
        hid = T.gelu(T.add(T.matmul(e, w1), b1))
        out = T.add(T.matmul(hid, w2), b2)
        return T.reshape(out, (e.shape[0], cfg.n_classes, cfg.d_h))
    if module_id == "adaptive":
        h_v1, h_c1, h_p1 = inputs
        x = T.concat([h_v1, h_c1, h_p1], axis=-1)
        hid = T.gelu(T.add(T.matmul(x, params["mlp_adaptive.w1"]), params["mlp_adaptive.b1"]))
        y = T.add(T.matmul(hid, params["mlp_adaptive.w2"]), params["mlp_adaptive.b2"])
        return T.slice_last(y, 0, cfg.d_h), T.slice_last(y, cfg.d_h, 2 * cfg.d_h)
    if module_id == "fusion":
        h_v_final, h_m_final = inputs
        x = T.concat([h_v_final, h_m_final], axis=-1)
        hid = T.gelu(T.add(T.matmul(x, params["mlp_fusion.w1"]), params["mlp_fusion.b1"]))
        rows = T.add(T.matmul(hid, params["mlp_fusion.w2"]), params["mlp_fusion.b2"])
        token = T.mean_rows(rows)
        return T.concat([token, rows], axis=-2)
    raise UsageError(f"unknown module_id {module_id!r}")


# ---------------------------------------------------------------------------
# full forward and loss


def _zeros_like_stream(n: int, cfg: ModelConfig, dtype) -> Tensor:
    return Tensor(np.zeros((n, cfg.n_classes, cfg.d_h), dtype=dtype))


def forward_parts(e_v: Tensor, e_c, e_p, params: ModelParams, cfg: ModelConfig):
    """Run the network on a batch; returns (logits, fused extra-token tensor).

    e_v/e_c/e_p: (n, d_e) tensors; dropped streams may be None.
    """
    n = e_v.shape[0]
    dtype = e_v.dtype
    if "no_vision" in cfg.ablation:
        e_v = Tensor(np.zeros((n, cfg.d_e), dtype=dtype))

    if "mlp_unified" in cfg.ablation:
        h_v1 = mlp_substitute("unified", params, cfg, (e_v, "v"))
        h_c1 = mlp_substitute("unified", params, cfg, (e_c, "c")) if cfg.use_caption else None
        h_p1 = mlp_substitute("unified", params, cfg, (e_p, "p")) if cfg.use_prompt else None
    else:
        h_v1 = unified_embed(e_v, "v", params, cfg)
        h_c1 = unified_embed(e_c, "c", params, cfg) if cfg.use_caption else None
        h_p1 = unified_embed(e_p, "p", params, cfg) if cfg.use_prompt else None

    if "mlp_adaptive" in cfg.ablation:
        zc = h_c1 if h_c1 is not None else _zeros_like_stream(n, cfg, dtype)
        zp = h_p1 if h_p1 is not None else _zeros_like_stream(n, cfg, dtype)
        h_v_final, h_m_final = mlp_substitute("adaptive", params, cfg, h_v1, zc, zp)
    else:
        h_v_final, h_m_final = adaptive_learning(UnifiedStates(h_v1, h_c1, h_p1), params, cfg)

    if "mlp_fusion" in cfg.ablation:
        if h_m_final.data.ndim == 2:
            h_m_final = T.tile_leading(h_m_final, n)
        fused = mlp_substitute("fusion", params, cfg, h_v_final, h_m_final)
    else:
        fused = cross_modal_fuse(h_v_final, h_m_final, params, cfg)

    logits = classify_logits(fused, params)
    return logits, T.select_row(fused, 0)


def forward(e_v, e_c, e_p, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Batch of sentiment distributions, shape (n, L)."""
    logits, _ = forward_parts(e_v, e_c, e_p, params, cfg)
    return T.softmax_rows(logits)


def _check_labels(labels, n_classes, ids=None):
    labels = np.asarray(labels)
    bad = np.nonzero((labels < 0) | (labels >= n_classes))[0]
    if bad.size:
        i = int(bad[0])
        ident = ids[i] if ids is not None else f"index {i}"
        raise DataError(f"label {int(labels[i])} out of range [0, {n_classes}) for sample {ident}")
    return labels


def cross_entropy(p_batch: Tensor, labels, ids=None) -> Tensor:
    """Mean negative log-likelihood from probability rows (inference-side)."""
    labels = _check_labels(labels, p_batch.shape[-1], ids)
    n = p_batch.shape[0]
    picked = p_batch.data[np.arange(n), labels]
    return Tensor(np.asarray(-np.log(picked).mean(), dtype=p_batch.dtype))


def cross_entropy_from_logits(logits: Tensor, labels, ids=None) -> Tensor:
    """Training loss: fused log-softmax NLL on logits."""
    labels = _check_labels(labels, logits.shape[-1], ids)
    return T.cross_entropy_logits(logits, labels)
