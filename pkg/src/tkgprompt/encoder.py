"""A small bidirectional transformer encoder trained by masked-token prediction.

Pure numpy with hand-derived gradients. Architecture (pre-LayerNorm)::

    x = tok_emb[ids] + pos_emb[:T]
    for each layer:
        x = x + Attn(LN1(x))
        x = x + FF(LN2(x))          # FF = W2 gelu(W1 . + b1) + b2
    logits = LN_f(x) @ tok_emb.T + out_bias

Padding keys are excluded from every softmax, and padding queries produce a
zero attention context. Parameters live in a flat ``dict[str, ndarray]``.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

Params = dict[str, np.ndarray]

LN_EPS = 1e-5
_NEG = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    ff_dim: int = 256
    max_seq_len: int = 256
    mask_ratio: float = 0.30
    dropout: float = 0.0
    position_init: str = "sinusoidal"  # or "random"

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.layers, self.heads, self.model_dim, self.ff_dim, self.max_seq_len) < 1:
            raise ValueError("model sizes must be positive")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.position_init not in ("sinusoidal", "random"):
            raise ValueError(f"unknown position_init {self.position_init!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


# --- parameters ------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.model_dim, cfg.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_seq_len, d),
    }
    for i in range(cfg.layers):
        p = f"layer{i}."
        shapes.update(
            {
                p + "ln1.gain": (d,),
                p + "ln1.bias": (d,),
                p + "attn.wq": (d, d),
                p + "attn.bq": (d,),
                p + "attn.wk": (d, d),
                p + "attn.bk": (d,),
                p + "attn.wv": (d, d),
                p + "attn.bv": (d,),
                p + "attn.wo": (d, d),
                p + "attn.bo": (d,),
                p + "ln2.gain": (d,),
                p + "ln2.bias": (d,),
                p + "ff.w1": (d, f),
                p + "ff.b1": (f,),
                p + "ff.w2": (f, d),
                p + "ff.b2": (d,),
            }
        )
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["out_bias"] = (cfg.vocab_size,)
    return shapes


def sinusoid_table(length: int, dim: int, scale: float = 0.02) -> np.ndarray:
    """Sine/cosine position table with per-entry standard deviation ``scale``.

    Used only as a starting point for the learned position embeddings: a
    fixed offset between two positions is then a rotation, which makes
    attention by relative distance easy to pick up from little data.
    """
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return table * scale * math.sqrt(2.0)


def init_params(
    cfg: ModelConfig,
    entity_inits: Mapping[int, np.ndarray] | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> Params:
    """Embeddings ~ N(0, 0.02^2), weights ~ N(0, 1/fan_in), biases 0, gains 1.

    Position embeddings start from :func:`sinusoid_table` unless
    ``cfg.position_init`` is ``"random"``.

    ``entity_inits`` maps token ids to vectors that overwrite embedding rows.
    """
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("tok_emb", "pos_emb"):
            value = rng.normal(0.0, 0.02, shape)
        elif leaf == "gain":
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        params[name] = value.astype(dtype)
    if cfg.position_init == "sinusoidal":
        params["pos_emb"] = sinusoid_table(cfg.max_seq_len, cfg.model_dim).astype(dtype)
    for token_id, vec in (entity_inits or {}).items():
        vec = np.asarray(vec)
        if vec.shape != (cfg.model_dim,):
            raise ValueError(f"entity init for token {token_id} has shape {vec.shape}, expected ({cfg.model_dim},)")
        params["tok_emb"][token_id] = vec
    return params


# --- building blocks -------------------------------------------------------------


def layer_norm(x, gain, bias):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd)


def layer_norm_backward(dy, gain, cache):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axes)
    dbias = dy.sum(axes)
    dxhat = dy * gain
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgain, dbias


def gelu(u):
    th = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u * u))
    return 0.5 * u * (1.0 + th), th


def gelu_backward(du_out, u, th):
    dth = (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return du_out * (0.5 * (1.0 + th) + 0.5 * u * dth)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


# --- forward / backward ----------------------------------------------------------


def _split_heads(x, heads):
    b, t, d = x.shape
    return np.ascontiguousarray(x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)


def encode(params: Params, cfg: ModelConfig, ids: np.ndarray, pad_mask: np.ndarray, rng=None, keep_cache=True):
    """Final hidden states ``(B, T, D)`` plus the cache needed by :func:`encode_backward`.

    ``pad_mask`` is True at real tokens. Dropout is active only when ``rng`` is given.
    """
    ids = np.asarray(ids)
    b, t = ids.shape
    if t > cfg.max_seq_len:
        raise ValueError(f"sequence length {t} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")
    keys = pad_mask[:, None, None, :]
    qmask = pad_mask[:, None, :, None].astype(params["tok_emb"].dtype)
    scale = 1.0 / math.sqrt(cfg.head_dim)

    x, emb_drop = _dropout(params["tok_emb"][ids] + params["pos_emb"][:t], cfg.dropout, rng)
    layers = []
    for i in range(cfg.layers):
        p = f"layer{i}."
        a, ln1 = layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
        q = _split_heads(a @ params[p + "attn.wq"] + params[p + "attn.bq"], cfg.heads)
        k = _split_heads(a @ params[p + "attn.wk"] + params[p + "attn.bk"], cfg.heads)
        v = _split_heads(a @ params[p + "attn.wv"] + params[p + "attn.bv"], cfg.heads)
        scores = np.where(keys, (q @ k.transpose(0, 1, 3, 2)) * scale, _NEG)
        probs = softmax(scores)
        attn = probs * qmask
        ctx = _merge_heads(attn @ v)
        attn_out, drop1 = _dropout(ctx @ params[p + "attn.wo"] + params[p + "attn.bo"], cfg.dropout, rng)
        x = x + attn_out

        f_in, ln2 = layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        u = f_in @ params[p + "ff.w1"] + params[p + "ff.b1"]
        g, th = gelu(u)
        ff_out, drop2 = _dropout(g @ params[p + "ff.w2"] + params[p + "ff.b2"], cfg.dropout, rng)
        x = x + ff_out
        if keep_cache:
            layers.append(dict(a=a, ln1=ln1, q=q, k=k, v=v, probs=probs, ctx=ctx, drop1=drop1,
                               f_in=f_in, ln2=ln2, u=u, g=g, th=th, drop2=drop2))
        else:
            layers.append(dict(probs=attn))
    h, lnf = layer_norm(x, params["final_ln.gain"], params["final_ln.bias"])
    cache = dict(ids=ids, qmask=qmask, emb_drop=emb_drop, layers=layers, lnf=lnf, scale=scale)
    return h, cache


def encode_backward(params: Params, cfg: ModelConfig, dh: np.ndarray, cache) -> Params:
    grads: Params = {name: np.zeros_like(v) for name, v in params.items()}
    dx, grads["final_ln.gain"], grads["final_ln.bias"] = layer_norm_backward(dh, params["final_ln.gain"], cache["lnf"])
    qmask, scale = cache["qmask"], cache["scale"]
    for i in reversed(range(cfg.layers)):
        p = f"layer{i}."
        c = cache["layers"][i]
        # feed-forward branch
        dff = dx if c["drop2"] is None else dx * c["drop2"]
        grads[p + "ff.w2"] = _outer_sum(c["g"], dff)
        grads[p + "ff.b2"] = dff.sum((0, 1))
        du = gelu_backward(dff @ params[p + "ff.w2"].T, c["u"], c["th"])
        grads[p + "ff.w1"] = _outer_sum(c["f_in"], du)
        grads[p + "ff.b1"] = du.sum((0, 1))
        df_in = du @ params[p + "ff.w1"].T
        d_ln2, grads[p + "ln2.gain"], grads[p + "ln2.bias"] = layer_norm_backward(df_in, params[p + "ln2.gain"], c["ln2"])
        dx = dx + d_ln2
        # attention branch
        dattn = dx if c["drop1"] is None else dx * c["drop1"]
        grads[p + "attn.wo"] = _outer_sum(c["ctx"], dattn)
        grads[p + "attn.bo"] = dattn.sum((0, 1))
        dctx = _split_heads(dattn @ params[p + "attn.wo"].T, cfg.heads)
        probs = c["probs"]
        attn = probs * qmask
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dprobs = (dctx @ c["v"].transpose(0, 1, 3, 2)) * qmask
        dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True)) * scale
        dq = dscores @ c["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"]
        da = np.zeros_like(dx)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = _merge_heads(dproj)
            grads[p + f"attn.w{name}"] = _outer_sum(c["a"], dproj)
            grads[p + f"attn.b{name}"] = dproj.sum((0, 1))
            da += dproj @ params[p + f"attn.w{name}"].T
        d_ln1, grads[p + "ln1.gain"], grads[p + "ln1.bias"] = layer_norm_backward(da, params[p + "ln1.gain"], c["ln1"])
        dx = dx + d_ln1
    if cache["emb_drop"] is not None:
        dx = dx * cache["emb_drop"]
    ids = cache["ids"]
    t = ids.shape[1]
    np.add.at(grads["tok_emb"], ids.ravel(), dx.reshape(-1, dx.shape[-1]))
    grads["pos_emb"][:t] = dx.sum(0)
    return grads


def _outer_sum(a, b):
    """sum over batch and time of a[..., i] * b[..., j]."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def output_logits(params: Params, h: np.ndarray) -> np.ndarray:
    return h @ params["tok_emb"].T + params["out_bias"]


@dataclass
class MaskedBatch:
    input_ids: np.ndarray  # (B, T) with [MASK] substituted
    pad_mask: np.ndarray  # (B, T) True at real tokens
    masked: np.ndarray  # (B, T) True where a prediction is required
    targets: np.ndarray  # (B, T) original ids at masked positions, -1 elsewhere


def forward(params: Params, cfg: ModelConfig, batch: MaskedBatch) -> np.ndarray:
    h, _ = encode(params, cfg, batch.input_ids, batch.pad_mask, keep_cache=False)
    return output_logits(params, h)


def attention_maps(params: Params, cfg: ModelConfig, ids: np.ndarray, pad_mask: np.ndarray) -> list[np.ndarray]:
    """Per-layer attention weights ``(B, heads, T, T)`` for export."""
    _, cache = encode(params, cfg, ids, pad_mask, keep_cache=False)
    return [layer["probs"] for layer in cache["layers"]]


def mlm_loss(logits: np.ndarray, batch: MaskedBatch) -> float:
    if not batch.masked.any():
        raise ValueError("nothing to predict: no masked positions")
    logp = log_softmax(logits[batch.masked].astype(np.float64))
    tgt = batch.targets[batch.masked]
    return float(-logp[np.arange(len(tgt)), tgt].mean())


def loss_and_grad(params: Params, cfg: ModelConfig, batch: MaskedBatch, rng=None) -> tuple[float, Params]:
    """Masked-token cross-entropy and its exact gradient w.r.t. every parameter.

    Logits are only materialized at masked positions.
    """
    if not batch.masked.any():
        raise ValueError("nothing to predict: no masked positions")
    h, cache = encode(params, cfg, batch.input_ids, batch.pad_mask, rng=rng)
    hm = h[batch.masked]
    logits = output_logits(params, hm)
    tgt = batch.targets[batch.masked]
    n = len(tgt)
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), tgt].astype(np.float64).mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), tgt] -= 1.0
    dlogits /= n
    dh = np.zeros_like(h)
    dh[batch.masked] = dlogits @ params["tok_emb"]
    grads = encode_backward(params, cfg, dh, cache)
    grads["tok_emb"] += dlogits.T @ hm
    grads["out_bias"] = dlogits.sum(0)
    return loss, grads


backward = loss_and_grad


# --- masking -------------------------------------------------------------------


def apply_random_mask(ids: np.ndarray, length: int, ratio: float, rng: np.random.Generator, mask_id: int):
    """Mask each of the first ``length`` tokens independently with probability ``ratio``.

    If the draw masks nothing, one uniformly chosen position is masked
    instead, so every row has a prediction target. Returns
    ``(input_ids, masked, targets)`` for one row.
    """
    if length < 1:
        raise ValueError("cannot mask an all-padding sequence")
    ids = np.asarray(ids)
    masked = np.zeros(len(ids), dtype=bool)
    masked[:length] = rng.random(length) < ratio
    if not masked.any():
        masked[rng.integers(length)] = True
    inputs = np.where(masked, mask_id, ids)
    targets = np.where(masked, ids, -1)
    return inputs, masked, targets


def make_batch(rows, pad_id: int, max_len: int | None = None) -> MaskedBatch:
    """Stack ``(input_ids, masked, targets, length)`` rows, padding to the longest length."""
    t = max(r[3] for r in rows)
    if max_len is not None:
        t = min(t, max_len)
    b = len(rows)
    inputs = np.full((b, t), pad_id, dtype=np.int64)
    masked = np.zeros((b, t), dtype=bool)
    targets = np.full((b, t), -1, dtype=np.int64)
    pad_mask = np.zeros((b, t), dtype=bool)
    for i, (inp, msk, tgt, n) in enumerate(rows):
        inputs[i, :n] = inp[:n]
        masked[i, :n] = msk[:n]
        targets[i, :n] = tgt[:n]
        pad_mask[i, :n] = True
    return MaskedBatch(inputs, pad_mask, masked, targets)


# --- optimizer ------------------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 5e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def adamw_step(params: Params, grads: Params, state: OptimizerState) -> tuple[Params, OptimizerState]:
    """One AdamW update in place. Weight decay is decoupled and skips 1-D parameters."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    b1, b2 = state.betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if p.ndim > 1 and state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# --- checkpoints -----------------------------------------------------------------


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab_digest: str
    params: Params
    optimizer: OptimizerState
    meta: dict


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> str:
    """Write a deterministic zip of ``.npy`` arrays plus ``meta.json``; returns its sha256."""
    opt = ckpt.optimizer
    meta = {
        "config": asdict(ckpt.config),
        "vocab_digest": ckpt.vocab_digest,
        "optimizer": {"lr": opt.lr, "weight_decay": opt.weight_decay, "betas": list(opt.betas),
                      "eps": opt.eps, "step": opt.step},
        "meta": ckpt.meta,
    }
    entries = [("meta.json", json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))]
    for prefix, arrays in (("param", ckpt.params), ("adam_m", opt.m), ("adam_v", opt.v)):
        entries += [(f"{prefix}/{name}.npy", _npy_bytes(arrays[name])) for name in sorted(arrays)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in entries:
            zf.writestr(zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0)), data)
    tmp.replace(path)
    return file_digest(path)


def load_checkpoint(path: str | Path, vocab_digest: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        groups: dict[str, Params] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for name in zf.namelist():
            if name.endswith(".npy"):
                prefix, _, leaf = name.partition("/")
                groups[prefix][leaf[: -len(".npy")]] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
    if vocab_digest is not None and meta["vocab_digest"] != vocab_digest:
        raise CheckpointError("vocabulary hash mismatch: checkpoint was trained with a different vocabulary")
    o = meta["optimizer"]
    opt = OptimizerState(o["lr"], o["weight_decay"], tuple(o["betas"]), o["eps"], o["step"],
                         groups["adam_m"], groups["adam_v"])
    return Checkpoint(ModelConfig(**meta["config"]), meta["vocab_digest"], groups["param"], opt, meta["meta"])


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
