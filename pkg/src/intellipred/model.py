"""Binaural intelligibility prediction head.

Pipeline per ear channel, with one parameter set shared by both ears::

    features [L, t, d]
      -> average-pool time by ``downsample_factor``     [L, t', d]
      -> linear projection + temporal positions          [L, t', P]
      -> temporal CLS pooling (binaural blocks)          [L, P]
      -> append projected audiogram + layer embeddings   [L+1, P]
      -> layer CLS pooling (binaural blocks)             [P]

The two channel vectors are averaged, projected to a scalar, squashed by a
sigmoid and scaled to [0, 100].

Internally both ears travel together as a leading axis of size 2, so a
block's cross-attention for channel 0 reads channel 1 and vice versa by
flipping that axis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, ValidationError
from .tensor import RngStream, Tensor

AUDIOGRAM_SIZE = 8
MASK_VALUE = -1e9


@dataclass(frozen=True)
class HeadConfig:
    num_layers: int
    feature_dim: int
    proj_dim: int = 384
    downsample_factor: int = 20
    temporal_blocks: int = 2
    layer_blocks: int = 2
    heads: int = 6
    ffn_dim: int | None = None      # None: 4 x proj_dim
    dropout_p: float = 0.1
    binaural_cross_attention: bool = True
    max_positions: int = 512
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_dim is None and isinstance(self.proj_dim, (int, np.integer)):
            object.__setattr__(self, "ffn_dim", 4 * int(self.proj_dim))
        for name in (
            "num_layers", "feature_dim", "proj_dim", "downsample_factor",
            "temporal_blocks", "layer_blocks", "heads", "ffn_dim", "max_positions",
        ):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"HeadConfig.{name} must be a positive integer, got {value!r}")
        if self.proj_dim % self.heads:
            raise ConfigError(f"proj_dim {self.proj_dim} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if not self.layer_norm_eps > 0:
            raise ConfigError("layer_norm_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.proj_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown HeadConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "HeadConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------- parameters


def _block_shapes(prefix: str, cfg: HeadConfig) -> list[tuple[str, tuple[int, ...]]]:
    P, F = cfg.proj_dim, cfg.ffn_dim
    out = [(f"{prefix}.ln_self.gain", (P,)), (f"{prefix}.ln_self.bias", (P,))]
    out += _attn_shapes(f"{prefix}.self_attn", P)
    if cfg.binaural_cross_attention:
        out += [
            (f"{prefix}.ln_cross.gain", (P,)), (f"{prefix}.ln_cross.bias", (P,)),
            (f"{prefix}.ln_cross_kv.gain", (P,)), (f"{prefix}.ln_cross_kv.bias", (P,)),
        ]
        out += _attn_shapes(f"{prefix}.cross_attn", P)
    out += [
        (f"{prefix}.ln_ffn.gain", (P,)), (f"{prefix}.ln_ffn.bias", (P,)),
        (f"{prefix}.ffn.fc1.weight", (P, F)), (f"{prefix}.ffn.fc1.bias", (F,)),
        (f"{prefix}.ffn.fc2.weight", (F, P)), (f"{prefix}.ffn.fc2.bias", (P,)),
    ]
    return out


def _attn_shapes(prefix: str, P: int) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for proj in "qkvo":
        out += [(f"{prefix}.{proj}.weight", (P, P)), (f"{prefix}.{proj}.bias", (P,))]
    return out


def parameter_shapes(cfg: HeadConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter name and shape, in canonical order."""
    P, L = cfg.proj_dim, cfg.num_layers
    shapes = [
        ("proj.weight", (cfg.feature_dim, P)),
        ("temporal.pos", (cfg.max_positions, P)),
        ("temporal.cls", (P,)),
    ]
    for i in range(cfg.temporal_blocks):
        shapes += _block_shapes(f"temporal.blocks.{i}", cfg)
    shapes += [
        ("temporal.norm.gain", (P,)), ("temporal.norm.bias", (P,)),
        ("audiogram.weight", (AUDIOGRAM_SIZE, P)),
        ("layer.embed", (L + 1, P)),
        ("layer.cls", (P,)),
    ]
    for i in range(cfg.layer_blocks):
        shapes += _block_shapes(f"layer.blocks.{i}", cfg)
    shapes += [
        ("layer.norm.gain", (P,)), ("layer.norm.bias", (P,)),
        ("out.weight", (P, 1)), ("out.bias", (1,)),
    ]
    return shapes


def parameter_count(cfg: HeadConfig) -> int:
    """Closed-form number of scalars in the head."""
    P, F, L, d = cfg.proj_dim, cfg.ffn_dim, cfg.num_layers, cfg.feature_dim
    attn = 4 * (P * P + P)
    block = 2 * P + attn + 2 * P + (P * F + F) + (F * P + P)
    if cfg.binaural_cross_attention:
        block += 4 * P + attn
    return (
        d * P + cfg.max_positions * P + P          # projection, positions, temporal CLS
        + cfg.temporal_blocks * block + 2 * P       # temporal blocks + norm
        + AUDIOGRAM_SIZE * P + (L + 1) * P + P      # audiogram, layer embeddings, layer CLS
        + cfg.layer_blocks * block + 2 * P          # layer blocks + norm
        + P + 1                                     # output
    )


class HeadParams:
    """Named parameter tensors, one set shared by both binaural channels."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        """Copies of the parameter values."""
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "HeadParams":
        return HeadParams.from_arrays({k: t.data.astype(dtype) for k, t in self.tensors.items()})

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "HeadParams":
        return cls({k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in arrays.items()})


def init_params(cfg: HeadConfig, rng: RngStream, dtype=np.float32) -> HeadParams:
    """Truncated-normal (std 0.02) weights and embeddings; LN gains 1, all biases 0."""
    arrays = {}
    for name, shape in parameter_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            value = np.ones(shape)
        elif leaf == "bias":
            value = np.zeros(shape)
        else:
            value = rng.truncated_normal(shape, std=0.02)
        arrays[name] = value.astype(dtype)
    return HeadParams.from_arrays(arrays)


def check_params(params: HeadParams, cfg: HeadConfig) -> None:
    expected = dict(parameter_shapes(cfg))
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ShapeError(f"parameters do not match config: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, config needs {shape}")


# ---------------------------------------------------------------- inputs


def validate_audiogram(audiogram, what: str = "audiogram") -> np.ndarray:
    a = np.asarray(audiogram, dtype=np.float64)
    if a.shape != (AUDIOGRAM_SIZE,):
        raise ValidationError([f"{what} must have exactly {AUDIOGRAM_SIZE} thresholds, got shape {a.shape}"])
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValidationError([f"{what} thresholds must be finite and >= 0, got {a.tolist()}"])
    return a


@dataclass
class BinauralInput:
    left: np.ndarray
    right: np.ndarray
    audiogram_left: np.ndarray
    audiogram_right: np.ndarray | None = None

    def __post_init__(self):
        self.left = np.asarray(self.left)
        self.right = np.asarray(self.right)
        if self.left.ndim != 3:
            raise ShapeError(f"features must be [layers, time, dim], got shape {self.left.shape}")
        if self.left.shape != self.right.shape:
            raise ShapeError(f"left features {self.left.shape} and right features {self.right.shape} differ")
        if self.left.shape[1] < 1:
            raise ShapeError("features need at least one time frame")
        self.audiogram_left = validate_audiogram(self.audiogram_left, "audiogram_left")
        if self.audiogram_right is None:
            self.audiogram_right = self.audiogram_left.copy()
        else:
            self.audiogram_right = validate_audiogram(self.audiogram_right, "audiogram_right")

    def swapped(self) -> "BinauralInput":
        return BinauralInput(self.right, self.left, self.audiogram_right, self.audiogram_left)


def downsample_time(x: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool the time axis (second to last) in windows of ``factor`` frames.

    The trailing partial window is averaged over its true length.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ConfigError(f"downsample factor must be an integer >= 1, got {factor!r}")
    x = np.asarray(x)
    t = x.shape[-2]
    if t < 1:
        raise ShapeError("cannot downsample an empty time axis")
    n_out = -(-t // factor)
    pad = n_out * factor - t
    full = t // factor
    head = x[..., : full * factor, :]
    out_shape = x.shape[:-2] + (n_out, x.shape[-1])
    out = np.empty(out_shape, dtype=np.result_type(x.dtype, np.float32))
    if full:
        out[..., :full, :] = head.reshape(x.shape[:-2] + (full, factor, x.shape[-1])).mean(axis=-2)
    if pad:
        out[..., full, :] = x[..., full * factor :, :].mean(axis=-2)
    return out


@dataclass
class Batch:
    """Both channels stacked on axis 0 and right-padded in time.

    features: [2, B, L, T', d]; lengths: [B] valid frames; audiograms: [2, B, 8].
    """

    features: np.ndarray
    lengths: np.ndarray
    audiograms: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[1]


@dataclass
class PreparedInput:
    left: np.ndarray    # downsampled [L, t', d]
    right: np.ndarray
    audiogram_left: np.ndarray
    audiogram_right: np.ndarray


def prepare(inp: BinauralInput, factor: int) -> PreparedInput:
    return PreparedInput(
        downsample_time(inp.left, factor),
        downsample_time(inp.right, factor),
        inp.audiogram_left,
        inp.audiogram_right,
    )


def collate(items: Sequence[PreparedInput], dtype=np.float32) -> Batch:
    if not items:
        raise ValueError("cannot collate an empty batch")
    L, _, d = items[0].left.shape
    lengths = np.array([it.left.shape[1] for it in items])
    feats = np.zeros((2, len(items), L, lengths.max(), d), dtype=dtype)
    auds = np.zeros((2, len(items), AUDIOGRAM_SIZE), dtype=dtype)
    for i, it in enumerate(items):
        if it.left.shape[0] != L or it.left.shape[2] != d:
            raise ShapeError(f"batch item {i} has shape {it.left.shape}, expected [{L}, *, {d}]")
        n = lengths[i]
        feats[0, i, :, :n] = it.left
        feats[1, i, :, :n] = it.right
        auds[0, i] = it.audiogram_left
        auds[1, i] = it.audiogram_right
    return Batch(feats, lengths, auds)


# ---------------------------------------------------------------- probing


class ForwardProbe:
    """Optional observer for a forward pass.

    Records per-channel intermediate shapes and attention weights, and can
    rewrite the opposite-channel input of any cross-attention sub-layer via
    ``cross_source(stage, block_index, x_other) -> x_other``.
    """

    def __init__(self, cross_source: Callable[[str, int, Tensor], Tensor] | None = None):
        self.cross_source = cross_source
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.attention: dict[str, np.ndarray] = {}
        self.cross_calls = 0

    def shape(self, name: str, shape: tuple[int, ...]) -> None:
        self.shapes[name] = tuple(int(s) for s in shape)


# ---------------------------------------------------------------- building blocks


def _ln(x: Tensor, p: HeadParams, prefix: str, cfg: HeadConfig) -> Tensor:
    return T.layer_norm(x, p[prefix + ".gain"], p[prefix + ".bias"], cfg.layer_norm_eps)


def _lin(x: Tensor, p: HeadParams, prefix: str) -> Tensor:
    return T.linear(x, p[prefix + ".weight"], p[prefix + ".bias"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    lead, s, width = x.shape[:-2], x.shape[-2], x.shape[-1]
    x = T.reshape(x, lead + (s, heads, width // heads))
    n = len(lead)
    return T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    lead, h, s, dh = x.shape[:-3], x.shape[-3], x.shape[-2], x.shape[-1]
    n = len(lead)
    x = T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return T.reshape(x, lead + (s, h * dh))


def attention(
    q_in: Tensor,
    kv_in: Tensor,
    p: HeadParams,
    prefix: str,
    heads: int,
    mask: np.ndarray | None = None,
    probe: ForwardProbe | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention over the second-to-last axis.

    ``mask`` is additive and must broadcast to [..., heads, S_q, S_k].
    """
    q = _split_heads(_lin(q_in, p, prefix + ".q"), heads)
    k = _split_heads(_lin(kv_in, p, prefix + ".k"), heads)
    v = _split_heads(_lin(kv_in, p, prefix + ".v"), heads)
    scores = T.scale(T.matmul(q, T.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = T.add(scores, Tensor(mask.astype(scores.dtype)))
    weights = T.softmax(scores, axis=-1)
    if probe is not None:
        probe.attention[prefix] = weights.data
    return _lin(_merge_heads(T.matmul(weights, v)), p, prefix + ".o")


def _swap_last(ndim: int) -> tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


def _stacked_block(
    x: Tensor,
    p: HeadParams,
    cfg: HeadConfig,
    stage: str,
    index: int,
    mask: np.ndarray | None,
    training: bool,
    rng: RngStream | None,
    probe: ForwardProbe | None,
) -> Tensor:
    """One binaural block on channel-stacked input [2, ..., S, P]."""
    prefix = f"{stage}.blocks.{index}"
    pdrop = cfg.dropout_p
    h = x
    normed = _ln(h, p, prefix + ".ln_self", cfg)
    a = attention(normed, normed, p, prefix + ".self_attn", cfg.heads, mask, probe)
    h = T.add(h, T.dropout(a, pdrop, training, rng))
    if cfg.binaural_cross_attention:
        other = T.flip(x, 0)
        if probe is not None:
            probe.cross_calls += 1
            if probe.cross_source is not None:
                other = probe.cross_source(stage, index, other)
        c = attention(
            _ln(h, p, prefix + ".ln_cross", cfg),
            _ln(other, p, prefix + ".ln_cross_kv", cfg),
            p, prefix + ".cross_attn", cfg.heads, mask, probe,
        )
        h = T.add(h, T.dropout(c, pdrop, training, rng))
    f = T.gelu(_lin(_ln(h, p, prefix + ".ln_ffn", cfg), p, prefix + ".ffn.fc1"))
    f = _lin(f, p, prefix + ".ffn.fc2")
    return T.add(h, T.dropout(f, pdrop, training, rng))


def _prepend_cls(x: Tensor, cls: Tensor) -> Tensor:
    lead, width = x.shape[:-2], x.shape[-1]
    token = T.broadcast_to(T.reshape(cls, (1,) * len(lead) + (1, width)), lead + (1, width))
    return T.concat([token, x], axis=-2)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _stack(a, b, dtype) -> Tensor:
    a, b = _as_tensor(a, dtype), _as_tensor(b, dtype)
    if a.shape != b.shape:
        raise ShapeError(f"left {a.shape} and right {b.shape} shapes differ")
    return T.concat([T.reshape(a, (1,) + a.shape), T.reshape(b, (1,) + b.shape)], axis=0)


# ---------------------------------------------------------------- pipeline stages


def project(x, params: HeadParams) -> Tensor:
    """Project features [..., t', d] to [..., t', P] and add temporal position embeddings."""
    x = _as_tensor(x, params.dtype)
    t = x.shape[-2]
    pos = params["temporal.pos"]
    if t > pos.shape[0]:
        raise ShapeError(f"{t} downsampled frames exceed max_positions {pos.shape[0]}")
    return T.add(T.linear(x, params["proj.weight"]), T.index(pos, slice(0, t)))


def binaural_block(
    x_self,
    x_other,
    params: HeadParams,
    cfg: HeadConfig,
    stage: str = "temporal",
    index: int = 0,
    training: bool = False,
    rng: RngStream | None = None,
    probe: ForwardProbe | None = None,
) -> Tensor:
    """Apply block ``index`` of ``stage`` to ``x_self`` [.., s, P], cross-attending to ``x_other``."""
    x = _stack(x_self, x_other, params.dtype)
    return T.index(_stacked_block(x, params, cfg, stage, index, None, training, rng, probe), 0)


def _temporal_stacked(x: Tensor, lengths, p, cfg, training, rng, probe) -> Tensor:
    # x: [2, B, L, t', P] -> [2, B, L, P]
    _, B, L, t, P = x.shape
    seq = _prepend_cls(T.reshape(x, (2, B * L, t, P)), p["temporal.cls"])
    mask = None
    if lengths is not None and np.any(np.asarray(lengths) < t):
        valid = np.arange(t + 1)[None, :] <= np.repeat(np.asarray(lengths), L)[:, None]
        mask = np.where(valid, 0.0, MASK_VALUE)[None, :, None, None, :]
    for i in range(cfg.temporal_blocks):
        seq = _stacked_block(seq, p, cfg, "temporal", i, mask, training, rng, probe)
    pooled = _ln(T.index(seq, (slice(None), slice(None), 0)), p, "temporal.norm", cfg)
    return T.reshape(pooled, (2, B, L, P))


def temporal_pool(
    left,
    right,
    params: HeadParams,
    cfg: HeadConfig,
    lengths=None,
    training: bool = False,
    rng: RngStream | None = None,
    probe: ForwardProbe | None = None,
) -> tuple[Tensor, Tensor]:
    """Pool projected sequences [(B,) L, t', P] per layer into [(B,) L, P] for each channel."""
    x = _stack(left, right, params.dtype)
    unbatched = x.ndim == 4
    if unbatched:
        x = T.reshape(x, (2, 1) + x.shape[1:])
    out = _temporal_stacked(x, lengths, params, cfg, training, rng, probe)
    if unbatched:
        out = T.reshape(out, (2,) + out.shape[2:])
    return T.index(out, 0), T.index(out, 1)


def append_audiogram(pooled, audiogram, params: HeadParams) -> Tensor:
    """Append the projected audiogram as row L and add layer-index embeddings: [(B,) L+1, P]."""
    pooled = _as_tensor(pooled, params.dtype)
    aud = np.asarray(getattr(audiogram, "data", audiogram))
    rows = aud.reshape(-1, AUDIOGRAM_SIZE) if aud.ndim > 1 else aud[None]
    for r in rows:
        validate_audiogram(r)
    aud_t = _as_tensor(aud, params.dtype)
    projected = T.linear(aud_t, params["audiogram.weight"])
    projected = T.reshape(projected, projected.shape[:-1] + (1, projected.shape[-1]))
    stacked = T.concat([pooled, projected], axis=-2)
    embed = params["layer.embed"]
    if stacked.shape[-2] != embed.shape[0]:
        raise ShapeError(f"{stacked.shape[-2] - 1} layers given, config expects {embed.shape[0] - 1}")
    return T.add(stacked, embed)


def _layer_stacked(x: Tensor, p, cfg, training, rng, probe) -> Tensor:
    # x: [2, B, L+1, P] -> [2, B, P]
    seq = _prepend_cls(x, p["layer.cls"])
    for i in range(cfg.layer_blocks):
        seq = _stacked_block(seq, p, cfg, "layer", i, None, training, rng, probe)
    return _ln(T.index(seq, (slice(None), slice(None), 0)), p, "layer.norm", cfg)


def layer_pool(
    left,
    right,
    params: HeadParams,
    cfg: HeadConfig,
    training: bool = False,
    rng: RngStream | None = None,
    probe: ForwardProbe | None = None,
) -> tuple[Tensor, Tensor]:
    """CLS-pool the layer axis of [(B,) L+1, P] to [(B,) P] for each channel."""
    x = _stack(left, right, params.dtype)
    unbatched = x.ndim == 3
    if unbatched:
        x = T.reshape(x, (2, 1) + x.shape[1:])
    out = _layer_stacked(x, params, cfg, training, rng, probe)
    if unbatched:
        out = T.reshape(out, (2,) + out.shape[2:])
    return T.index(out, 0), T.index(out, 1)


@dataclass
class HeadOutput:
    logits: Tensor       # [B]
    probability: Tensor  # [B], in (0, 1)

    @property
    def predictions(self) -> np.ndarray:
        return 100.0 * self.probability.data


def head_forward(
    batch: Batch,
    params: HeadParams,
    cfg: HeadConfig,
    training: bool = False,
    rng: RngStream | None = None,
    probe: ForwardProbe | None = None,
) -> HeadOutput:
    """Full head on a collated batch."""
    _, B, L, t, d = batch.features.shape
    if L != cfg.num_layers or d != cfg.feature_dim:
        raise ShapeError(
            f"features have {L} layers x {d} dims, model expects "
            f"{cfg.num_layers} layers x {cfg.feature_dim} dims"
        )
    if training and cfg.dropout_p > 0 and rng is None:
        raise ConfigError("training-mode forward needs an RngStream")
    P = cfg.proj_dim
    feats = Tensor(batch.features.astype(params.dtype, copy=False))
    x = project(feats, params)
    pooled = _temporal_stacked(x, batch.lengths, params, cfg, training, rng, probe)
    layers = append_audiogram(pooled, batch.audiograms, params)
    channels = _layer_stacked(layers, params, cfg, training, rng, probe)
    merged = T.mean(channels, axis=0)
    logits = T.reshape(T.linear(merged, params["out.weight"], params["out.bias"]), (B,))
    if probe is not None:
        probe.shape("downsampled", (L, t, d))
        probe.shape("projected", (L, t, P))
        probe.shape("temporal_pooled", pooled.shape[2:])
        probe.shape("with_audiogram", layers.shape[2:])
        probe.shape("layer_pooled", channels.shape[2:])
    return HeadOutput(logits, T.sigmoid(logits))


def predict(
    inp: BinauralInput,
    params: HeadParams,
    cfg: HeadConfig,
    mode: str = "eval",
    rng: RngStream | None = None,
    probe: ForwardProbe | None = None,
) -> float:
    """Predicted intelligibility in (0, 100) for one binaural input."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if inp.left.shape[0] != cfg.num_layers or inp.left.shape[2] != cfg.feature_dim:
        raise ShapeError(
            f"input features {inp.left.shape} do not match config "
            f"(num_layers={cfg.num_layers}, feature_dim={cfg.feature_dim})"
        )
    batch = collate([prepare(inp, cfg.downsample_factor)], params.dtype)
    out = head_forward(batch, params, cfg, training=(mode == "train"), rng=rng, probe=probe)
    return float(out.predictions[0])


def predict_prepared(
    items: Sequence[PreparedInput],
    params: HeadParams,
    cfg: HeadConfig,
    batch_size: int = 64,
) -> np.ndarray:
    """Eval-mode predictions for already downsampled inputs, in input order."""
    out = np.empty(len(items), dtype=np.float64)
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        res = head_forward(collate(chunk, params.dtype), params, cfg, training=False)
        out[start : start + len(chunk)] = res.predictions
    return out


def predict_many(
    inputs: Sequence[BinauralInput],
    params: HeadParams,
    cfg: HeadConfig,
    batch_size: int = 64,
) -> np.ndarray:
    return predict_prepared([prepare(i, cfg.downsample_factor) for i in inputs], params, cfg, batch_size)
