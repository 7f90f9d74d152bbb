"""Cross-attention-only forecaster with AR/MA patch features and gated queries.

Shapes use S for the flattened (batch * channel) axis: every channel is an
independent series that shares all weights with the others.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from typing import BinaryIO

import numpy as np

from . import autograd as ag
from .autograd import ParameterRegistry, Tensor
from .data import SeriesWindow, normalize_window, patchify
from .layers import LayerNorm, Linear
from .vfe import VarmaFeatureExtractor, VfeConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    patch_len: int = 24
    d_model: int = 128
    n_layers: int = 3
    n_heads: int = 4
    p: int = 2
    q: int = 2
    alpha: float = 0.3
    beta: float = 0.3
    mask_rate: float = 0.25
    ffn_width: int = 256
    ve_atten: bool = True
    train_alpha: bool = False
    seed: int = 2021

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if min(self.lookback, self.horizon, self.patch_len, self.d_model,
               self.n_layers, self.n_heads, self.ffn_width) < 1:
            raise ConfigError("lookback, horizon, patch_len, d_model, n_layers, n_heads and "
                              "ffn_width must all be positive")
        if self.horizon % self.patch_len:
            raise ConfigError(f"horizon {self.horizon} must be divisible by patch_len {self.patch_len}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")
        if (self.p or self.q) and self.d_model % 2:
            raise ConfigError(f"d_model {self.d_model} must be even when the AR/MA extractor is on")
        if self.p < 0 or self.q < 0:
            raise ConfigError("p and q must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate must lie in [0, 1), got {self.mask_rate}")

    @property
    def n_patches(self) -> int:
        return -(-self.lookback // self.patch_len)

    @property
    def n_queries(self) -> int:
        return self.horizon // self.patch_len

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# functional pieces


def embed(patches: Tensor, z_varma: Tensor | None, w_p: Linear, pe: Tensor, alpha) -> Tensor:
    """Token embedding E = W_P(x) + alpha * Z_VARMA + PE; used as both keys and values.

    ``alpha`` may be a float or a scalar Parameter. ``z_varma=None`` means no
    AR/MA term at all.
    """
    e = w_p(patches)
    if z_varma is not None:
        if z_varma.shape != e.shape:
            raise ag.ShapeError("embed", e.shape, z_varma.shape)
        term = ag.mul(z_varma, alpha) if isinstance(alpha, Tensor) else ag.scale(z_varma, alpha)
        e = ag.add(e, term)
    return ag.add(e, pe)


class GateNetwork:
    """Two affine maps D -> D with a GELU between them."""

    def __init__(self, registry: ParameterRegistry, name: str, d_model: int,
                 rng: np.random.Generator) -> None:
        self.fc1 = Linear(registry, f"{name}.fc1", d_model, d_model, rng)
        self.fc2 = Linear(registry, f"{name}.fc2", d_model, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


def temporal_gate(keys: Tensor, proj_gate: GateNetwork) -> Tensor:
    """G = sigmoid(Proj_gate(mean of keys over the patch axis)); (S, N, D) -> (S, D)."""
    return ag.sigmoid(proj_gate(ag.mean(keys, axis=-2)))


def gate_queries(queries, gate, beta: float) -> Tensor:
    """Q' = beta * (Q * G) + (1 - beta) * Q with G broadcast over query positions.

    ``queries`` is (S, M, D); ``gate`` is (S, D).
    """
    queries, gate = ag.as_tensor(queries), ag.as_tensor(gate)
    g = ag.reshape(gate, gate.shape[:-1] + (1, gate.shape[-1]))
    # written as Q + beta * (Q*G - Q) so that beta=0 and G=1 reproduce Q bit for bit
    return ag.add(queries, ag.scale(ag.sub(ag.mul(queries, g), queries), beta))


class CrossAttention:
    def __init__(self, registry: ParameterRegistry, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator) -> None:
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(registry, f"{name}.q", d_model, d_model, rng)
        self.k = Linear(registry, f"{name}.k", d_model, d_model, rng)
        self.v = Linear(registry, f"{name}.v", d_model, d_model, rng)
        self.o = Linear(registry, f"{name}.o", d_model, d_model, rng)
        self.last_weights: np.ndarray | None = None

    def _heads(self, x: Tensor) -> Tensor:
        s, n, _ = x.shape
        return ag.transpose(ag.reshape(x, (s, n, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        qh = self._heads(self.q(queries))                     # (S, H, M, dh)
        kh = ag.transpose(self._heads(self.k(keys)), (0, 1, 3, 2))  # (S, H, dh, N)
        vh = self._heads(self.v(values))                      # (S, H, N, dh)
        weights = ag.softmax(ag.scale(ag.matmul(qh, kh), 1.0 / math.sqrt(self.d_head)))
        self.last_weights = weights.data
        ctx = ag.transpose(ag.matmul(weights, vh), (0, 2, 1, 3))
        s, m = ctx.shape[0], ctx.shape[1]
        return self.o(ag.reshape(ctx, (s, m, self.n_heads * self.d_head)))


class FeedForward:
    def __init__(self, registry: ParameterRegistry, name: str, d_model: int, width: int,
                 rng: np.random.Generator) -> None:
        self.fc1 = Linear(registry, f"{name}.fc1", d_model, width, rng)
        self.fc2 = Linear(registry, f"{name}.fc2", width, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class DecoderLayer:
    """Gate queries, cross-attend, add & norm, FFN, add & norm."""

    def __init__(self, registry: ParameterRegistry, name: str, cfg: ModelConfig,
                 rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.gate = GateNetwork(registry, f"{name}.gate", cfg.d_model, rng) if cfg.ve_atten else None
        self.attn = CrossAttention(registry, f"{name}.attn", cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(registry, f"{name}.norm1", cfg.d_model)
        self.ffn = FeedForward(registry, f"{name}.ffn", cfg.d_model, cfg.ffn_width, rng)
        self.norm2 = LayerNorm(registry, f"{name}.norm2", cfg.d_model)

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor,
                 mask: np.ndarray | None = None) -> Tensor:
        """``mask`` is an (S, M, 1) 0/1 array applied to the attention read (training only)."""
        if self.gate is not None:
            queries = gate_queries(queries, temporal_gate(keys, self.gate), self.cfg.beta)
        read = self.attn(queries, keys, values)
        if mask is not None:
            read = ag.mul(read, mask)
        x = self.norm1(ag.add(queries, read))
        return self.norm2(ag.add(x, self.ffn(x)))


# ---------------------------------------------------------------------------
# full model


class VARMAformer:
    def __init__(self, cfg: ModelConfig) -> None:
        cfg.validate()
        self.cfg = cfg
        self.params = ParameterRegistry()
        self.training = False
        rng = np.random.default_rng(cfg.seed)
        self.mask_rng = np.random.default_rng([cfg.seed, 1])
        reg, D = self.params, cfg.d_model

        self.vfe = None
        if cfg.p or cfg.q:
            self.vfe = VarmaFeatureExtractor(VfeConfig(cfg.p, cfg.q, cfg.patch_len, D), reg, rng)
        self.w_p = Linear(reg, "embed.w_p", cfg.patch_len, D, rng)
        self.pe = reg.add("embed.pe", rng.normal(0.0, 0.02, size=(cfg.n_patches, D)))
        self.alpha = reg.add("embed.alpha", np.array(cfg.alpha)) if cfg.train_alpha else cfg.alpha
        self.q_dummy = reg.add("queries.dummy", rng.standard_normal((cfg.n_queries, D)))
        self.q_in = Linear(reg, "queries.linear", D, D, rng)
        self.layers = [DecoderLayer(reg, f"decoder.{i}", cfg, rng) for i in range(cfg.n_layers)]
        self.head = Linear(reg, "head", D, cfg.patch_len, rng)

    # -- modes ---------------------------------------------------------
    def train(self) -> "VARMAformer":
        self.training = True
        return self

    def eval(self) -> "VARMAformer":
        self.training = False
        return self

    # -- forward -------------------------------------------------------
    def patch_inputs(self, x: np.ndarray):
        """Normalize (B, C, L) look-backs and cut them into (B*C, N, P) patches."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[-1] != self.cfg.lookback:
            raise ConfigError(f"expected input (B, C, {self.cfg.lookback}), got {x.shape}")
        xn, mu, sigma = normalize_window(x)
        patches = patchify(xn, self.cfg.patch_len).patches
        b, c = x.shape[:2]
        return patches.reshape(b * c, self.cfg.n_patches, self.cfg.patch_len), mu, sigma

    def encode(self, patches: Tensor) -> Tensor:
        z = self.vfe(patches) if self.vfe is not None else None
        return embed(patches, z, self.w_p, self.pe, self.alpha)

    def initial_queries(self, s: int) -> Tensor:
        q = self.q_in(self.q_dummy)
        return ag.broadcast_to(q, (s,) + q.shape)

    def _mask(self, s: int) -> np.ndarray | None:
        if not self.training or self.cfg.mask_rate <= 0.0:
            return None
        keep = self.mask_rng.random((s, self.cfg.n_queries, 1)) >= self.cfg.mask_rate
        return keep.astype(ag.get_default_dtype())

    def forward_normalized(self, x: np.ndarray):
        """Forecast on the instance-normalized scale: returns ((B, C, T) tensor, mu, sigma)."""
        patches_np, mu, sigma = self.patch_inputs(x)
        patches = Tensor(patches_np)
        kv = self.encode(patches)
        queries = self.initial_queries(patches.shape[0])
        for layer in self.layers:
            queries = layer(queries, kv, kv, self._mask(patches.shape[0]))
        out = self.head(queries)  # (S, M, P)
        b, c = np.shape(x)[:2]
        return ag.reshape(out, (b, c, self.cfg.horizon)), mu, sigma

    def __call__(self, x: np.ndarray) -> Tensor:
        """(B, C, L) raw look-backs -> (B, C, T) forecasts in the input scale."""
        out, mu, sigma = self.forward_normalized(x)
        dtype = out.dtype
        return ag.add(ag.mul(out, sigma[..., None].astype(dtype)), mu[..., None].astype(dtype))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Graph-free evaluation-mode forecast."""
        was = self.training
        self.training = False
        try:
            with ag.no_grad():
                return np.array(self(x).data, dtype=np.float64)
        finally:
            self.training = was

    def attention_weights(self) -> list[np.ndarray]:
        return [layer.attn.last_weights for layer in self.layers]


def forecast(window: SeriesWindow, model: VARMAformer) -> np.ndarray:
    """Forecast a single (C, L) window; returns (C, T) in the window's scale."""
    lb = np.asarray(window.lookback)
    if lb.ndim != 2 or lb.shape[1] != model.cfg.lookback:
        raise ConfigError(f"window look-back {lb.shape} does not match L={model.cfg.lookback}")
    if window.target is not None and np.shape(window.target)[-1] not in (0, model.cfg.horizon):
        raise ConfigError(f"window horizon {np.shape(window.target)[-1]} does not match "
                          f"T={model.cfg.horizon}")
    return model.predict(lb[None])[0]


class CrossAttentionBaseline:
    """The plain cross-attention forecaster (no AR/MA features, no query gate).

    Reads the shared weights of ``model`` and ignores its extractor, alpha and
    gate networks.
    """

    def __init__(self, model: VARMAformer) -> None:
        self.model = model

    def predict(self, x: np.ndarray) -> np.ndarray:
        m = self.model
        with ag.no_grad():
            patches_np, mu, sigma = m.patch_inputs(x)
            patches = Tensor(patches_np)
            kv = ag.add(m.w_p(patches), m.pe)
            q = m.initial_queries(patches.shape[0])
            for layer in m.layers:
                read = layer.attn(q, kv, kv)
                h = layer.norm1(ag.add(q, read))
                q = layer.norm2(ag.add(h, layer.ffn(h)))
            out = m.head(q).data.reshape(np.shape(x)[0], np.shape(x)[1], m.cfg.horizon)
        return out * sigma[..., None] + mu[..., None]


# ---------------------------------------------------------------------------
# checkpoints: b"VMF1" | u32 len | config JSON | u32 count | records
# record: u32 name len | name utf-8 | u32 ndim | u32 dims... | float64 LE data

MAGIC = b"VMF1"


def save_checkpoint(model: VARMAformer, path) -> None:
    with open(path, "wb") as fh:
        _write_checkpoint(fh, model.cfg.to_dict(), model.params.state_dict())


def _write_checkpoint(fh: BinaryIO, config: dict, arrays: dict[str, np.ndarray]) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {buf[:4]!r})")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (clen,) = struct.unpack("<I", take(4))
    config = json.loads(take(clen).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
    return config, arrays


def load_checkpoint(path) -> VARMAformer:
    config, arrays = read_checkpoint(path)
    model = VARMAformer(ModelConfig.from_dict(config))
    model.params.load_state_dict(arrays)
    return model
