"""Independent references: synthetic process generators, a scalar-loop forward pass, baselines.

``reference_forward`` deliberately shares no code with the tensor engine or the
model module; it works on plain Python floats and lists.

Noise is drawn from numpy's PCG64 generator (``numpy.random.default_rng(seed)``)
via ``standard_normal``, so a given seed reproduces the same series anywhere
numpy's PCG64 stream is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .data import Dataset, WindowSet

MAX_REFERENCE_CELLS = 4096


class NonStationaryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# synthetic series


@dataclass
class SyntheticSpec:
    """``phi``/``theta`` entries are scalars (applied to every channel) or C x C matrices."""

    kind: str = "ar"  # ar | varma | sine-plus-noise
    phi: Sequence = (0.5, 0.3)
    theta: Sequence = ()
    noise_std: float = 0.1
    length: int = 10_000
    channels: int = 1
    seed: int = 0
    burn_in: int = 200
    initial: float = 0.0
    period: float = 24.0
    amplitude: float = 1.0
    name: str = ""

    def coefficient_matrices(self):
        c = self.channels
        phis = [np.asarray(f, dtype=np.float64) * (np.eye(c) if np.ndim(f) == 0 else 1.0)
                for f in self.phi]
        thetas = [np.asarray(t, dtype=np.float64) * (np.eye(c) if np.ndim(t) == 0 else 1.0)
                  for t in self.theta]
        for m in phis + thetas:
            if m.shape != (c, c):
                raise ValueError(f"coefficient matrix shape {m.shape} does not match {c} channels")
        return phis, thetas


def companion_radius(phis: Sequence[np.ndarray]) -> float:
    """Spectral radius of the VAR companion matrix (0 when there are no AR lags)."""
    if not phis:
        return 0.0
    c, p = phis[0].shape[0], len(phis)
    comp = np.zeros((c * p, c * p))
    comp[:c, :] = np.hstack(phis)
    comp[c:, :-c] = np.eye(c * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def generate(spec: SyntheticSpec) -> Dataset:
    """Simulate the requested process; the first ``burn_in`` steps are discarded."""
    if spec.length < 1 or spec.channels < 1:
        raise ValueError("length and channels must be positive")
    rng = np.random.default_rng(spec.seed)
    c = spec.channels
    if spec.kind == "sine-plus-noise":
        t = np.arange(spec.length, dtype=np.float64)[:, None]
        phase = 2.0 * np.pi * np.arange(c) / max(c, 1)
        values = spec.amplitude * np.sin(2.0 * np.pi * t / spec.period + phase)
        if spec.noise_std:
            values = values + spec.noise_std * rng.standard_normal((spec.length, c))
    elif spec.kind in ("ar", "varma"):
        phis, thetas = spec.coefficient_matrices()
        if spec.kind == "ar" and thetas:
            raise ValueError("kind 'ar' takes no theta coefficients; use 'varma'")
        rho = companion_radius(phis)
        if rho >= 1.0:
            raise NonStationaryError(f"AR part is not stationary (companion spectral radius {rho:.4f})")
        values = _simulate(phis, thetas, spec, rng)
    else:
        raise ValueError(f"unknown synthetic kind {spec.kind!r}")
    stamps = pd.date_range("2000-01-01", periods=spec.length, freq="h").to_numpy()
    name = spec.name or f"synthetic-{spec.kind}"
    return Dataset(name, values, [f"x{i}" for i in range(c)], "1h", stamps)


def _simulate(phis, thetas, spec: SyntheticSpec, rng) -> np.ndarray:
    c, p, q = spec.channels, len(phis), len(thetas)
    total = spec.length + spec.burn_in
    noise = spec.noise_std * rng.standard_normal((total, c)) if spec.noise_std else np.zeros((total, c))
    x = np.zeros((total, c))
    if c == 1:
        # scalar fast path
        a = [float(m[0, 0]) for m in phis]
        b = [float(m[0, 0]) for m in thetas]
        e = noise[:, 0].tolist()
        xs = [0.0] * total
        xs[0] = spec.initial + e[0]
        for t in range(1, total):
            acc = e[t]
            for i in range(min(p, t)):
                acc += a[i] * xs[t - 1 - i]
            for j in range(min(q, t)):
                acc += b[j] * e[t - 1 - j]
            xs[t] = acc
        x[:, 0] = xs
    else:
        x[0] = spec.initial + noise[0]
        for t in range(1, total):
            acc = noise[t].copy()
            for i in range(min(p, t)):
                acc += phis[i] @ x[t - 1 - i]
            for j in range(min(q, t)):
                acc += thetas[j] @ noise[t - 1 - j]
            x[t] = acc
    return x[spec.burn_in:]


def ar2_autocorrelation(phi1: float, phi2: float, lags: int) -> list[float]:
    """Theoretical AR(2) autocorrelations rho_0..rho_lags from the Yule-Walker recursion."""
    rho = [1.0, phi1 / (1.0 - phi2)]
    for _ in range(2, lags + 1):
        rho.append(phi1 * rho[-1] + phi2 * rho[-2])
    return rho[:lags + 1]


def ar2_variance(phi1: float, phi2: float, noise_std: float) -> float:
    return ((1.0 - phi2) * noise_std ** 2
            / ((1.0 + phi2) * ((1.0 - phi2) ** 2 - phi1 ** 2)))


# ---------------------------------------------------------------------------
# scalar-loop reference forward pass


def _vecmat(v: list, w: list, b: list | None = None) -> list:
    """Row vector times (in, out) matrix, plus optional bias."""
    out = []
    for j in range(len(w[0])):
        acc = 0.0
        for i in range(len(v)):
            acc += v[i] * w[i][j]
        if b is not None:
            acc += b[j]
        out.append(acc)
    return out


def _gelu(x: float) -> float:
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x * x * x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _layer_norm(v: list, gamma: list, beta: list, eps: float = 1e-5) -> list:
    n = len(v)
    m = sum(v) / n
    var = sum((a - m) * (a - m) for a in v) / n
    s = math.sqrt(var + eps)
    return [(v[i] - m) / s * gamma[i] + beta[i] for i in range(n)]


def _softmax(v: list) -> list:
    top = max(v)
    ex = [math.exp(a - top) for a in v]
    tot = sum(ex)
    return [a / tot for a in ex]


def reference_forward(lookback, params: dict, cfg) -> np.ndarray:
    """Forecast one (C, L) window with nested scalar loops.

    ``params`` maps parameter names to arrays (a model's ``state_dict()``);
    ``cfg`` is a ModelConfig or a dict with the same keys.
    """
    cfg = dict(cfg if isinstance(cfg, dict) else cfg.to_dict())
    L, T, P, D = cfg["lookback"], cfg["horizon"], cfg["patch_len"], cfg["d_model"]
    H, p, q = cfg["n_heads"], cfg["p"], cfg["q"]
    beta = cfg["beta"]
    N = -(-L // P)
    M = T // P
    rows = [[float(v) for v in row] for row in np.asarray(lookback, dtype=np.float64)]
    C = len(rows)
    if C * N * D > MAX_REFERENCE_CELLS:
        raise ValueError(f"config too large for the reference path: C*N*D={C * N * D} "
                         f"> {MAX_REFERENCE_CELLS}")
    if any(len(r) != L for r in rows):
        raise ValueError("look-back length does not match config")
    W = {k: np.asarray(v, dtype=np.float64).tolist() for k, v in params.items()}
    alpha = float(params["embed.alpha"]) if cfg.get("train_alpha") else cfg["alpha"]
    dh = D // H

    result = []
    for c in range(C):
        series = rows[c]
        mu = sum(series) / L
        sigma = max(math.sqrt(sum((v - mu) ** 2 for v in series) / L), 1e-5)
        xn = [(v - mu) / sigma for v in series]
        xn = xn + [xn[-1]] * (N * P - L)
        patches = [xn[i * P:(i + 1) * P] for i in range(N)]

        # AR / MA features
        zv = None
        if p or q:
            zv = []
            for t in range(N):
                half = D // 2
                z_ar = [0.0] * half
                z_ma = [0.0] * half
                if p:
                    vec = []
                    for i in range(1, p + 1):
                        w = W[f"vfe.phi.{i}"]
                        vec += [w * a for a in patches[t - i]] if t - i >= 0 else [0.0] * P
                    z_ar = _vecmat(vec, W["vfe.proj_ar.weight"], W["vfe.proj_ar.bias"])
                if q:
                    vec = []
                    for j in range(1, q + 1):
                        w = W[f"vfe.theta.{j}"]
                        s = t - j
                        if s >= 1:
                            vec += [w * (patches[s][k] - patches[s - 1][k]) for k in range(P)]
                        else:
                            vec += [0.0] * P
                    z_ma = _vecmat(vec, W["vfe.proj_ma.weight"], W["vfe.proj_ma.bias"])
                zv.append(_vecmat(z_ar + z_ma, W["vfe.fuse.weight"], W["vfe.fuse.bias"]))

        E = []
        for t in range(N):
            e = _vecmat(patches[t], W["embed.w_p.weight"], W["embed.w_p.bias"])
            for d in range(D):
                if zv is not None:
                    e[d] += alpha * zv[t][d]
                e[d] += W["embed.pe"][t][d]
            E.append(e)

        Q = [_vecmat(W["queries.dummy"][m], W["queries.linear.weight"], W["queries.linear.bias"])
             for m in range(M)]

        for layer in range(cfg["n_layers"]):
            pre = f"decoder.{layer}"
            if cfg["ve_atten"]:
                kbar = [sum(E[t][d] for t in range(N)) / N for d in range(D)]
                h = [_gelu(a) for a in _vecmat(kbar, W[f"{pre}.gate.fc1.weight"], W[f"{pre}.gate.fc1.bias"])]
                g = [_sigmoid(a) for a in _vecmat(h, W[f"{pre}.gate.fc2.weight"], W[f"{pre}.gate.fc2.bias"])]
                Q = [[beta * Q[m][d] * g[d] + (1.0 - beta) * Q[m][d] for d in range(D)]
                     for m in range(M)]
            qs = [_vecmat(Q[m], W[f"{pre}.attn.q.weight"], W[f"{pre}.attn.q.bias"]) for m in range(M)]
            ks = [_vecmat(E[t], W[f"{pre}.attn.k.weight"], W[f"{pre}.attn.k.bias"]) for t in range(N)]
            vs = [_vecmat(E[t], W[f"{pre}.attn.v.weight"], W[f"{pre}.attn.v.bias"]) for t in range(N)]
            newQ = []
            for m in range(M):
                ctx = [0.0] * D
                for hd in range(H):
                    lo = hd * dh
                    scores = []
                    for t in range(N):
                        acc = 0.0
                        for k in range(dh):
                            acc += qs[m][lo + k] * ks[t][lo + k]
                        scores.append(acc / math.sqrt(dh))
                    wts = _softmax(scores)
                    for k in range(dh):
                        ctx[lo + k] = sum(wts[t] * vs[t][lo + k] for t in range(N))
                read = _vecmat(ctx, W[f"{pre}.attn.o.weight"], W[f"{pre}.attn.o.bias"])
                x = _layer_norm([Q[m][d] + read[d] for d in range(D)],
                                W[f"{pre}.norm1.gamma"], W[f"{pre}.norm1.beta"])
                hid = [_gelu(a) for a in _vecmat(x, W[f"{pre}.ffn.fc1.weight"], W[f"{pre}.ffn.fc1.bias"])]
                f = _vecmat(hid, W[f"{pre}.ffn.fc2.weight"], W[f"{pre}.ffn.fc2.bias"])
                newQ.append(_layer_norm([x[d] + f[d] for d in range(D)],
                                        W[f"{pre}.norm2.gamma"], W[f"{pre}.norm2.beta"]))
            Q = newQ

        out = []
        for m in range(M):
            out += _vecmat(Q[m], W["head.weight"], W["head.bias"])
        result.append([v * sigma + mu for v in out])
    return np.array(result)


# ---------------------------------------------------------------------------
# naive baselines


def persistence(lookback: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed value: (..., L) -> (..., T)."""
    lookback = np.asarray(lookback, dtype=np.float64)
    return np.repeat(lookback[..., -1:], horizon, axis=-1)


class PersistenceBaseline:
    def __init__(self, horizon: int) -> None:
        self.horizon = horizon

    def predict(self, x: np.ndarray) -> np.ndarray:
        return persistence(x, self.horizon)


@dataclass
class LinearBaseline:
    """Per-channel least-squares map from the look-back (plus intercept) to the horizon."""

    coef: list = field(default_factory=list)  # per channel, (L + 1, T)

    def fit(self, windows: WindowSet) -> "LinearBaseline":
        n, c, L = windows.x.shape
        self.coef = []
        for ch in range(c):
            A = np.hstack([windows.x[:, ch, :], np.ones((n, 1))])
            sol, *_ = np.linalg.lstsq(A, windows.y[:, ch, :], rcond=None)
            self.coef.append(sol)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [np.hstack([x[:, ch, :], np.ones((x.shape[0], 1))]) @ self.coef[ch]
               for ch in range(x.shape[1])]
        return np.stack(out, axis=1)
