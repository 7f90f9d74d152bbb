"""Self-check suites run by ``varmaformer verify``."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .data import denormalize, normalize_window, patchify
from .model import ModelConfig, VARMAformer, gate_queries
from .oracle import reference_forward

GRAD_TOL = 1e-3
ORACLE_TOL = 1e-8
ROUND_TRIP_TOL = 1e-6
SOFTMAX_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: list[str] = field(default_factory=list)
    max_error: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def record(self, label: str, error: float, tol: float) -> None:
        self.checks += 1
        self.max_error = max(self.max_error, float(error))
        if not error <= tol:
            self.failures.append(f"{label}: error {error:.3e} > {tol:.1e}")


def tiny_config(seed: int = 0, **overrides) -> ModelConfig:
    base = dict(lookback=8, horizon=4, patch_len=2, d_model=8, n_layers=1, n_heads=1,
                ffn_width=16, p=2, q=2, alpha=0.3, beta=0.3, mask_rate=0.0, seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


def model_gradient_error(seed: int, batch: int = 2, channels: int = 2) -> float:
    """Worst relative error of backprop vs central differences on the tiny model."""
    model = VARMAformer(tiny_config(seed, train_alpha=True))
    rng = np.random.default_rng(10_000 + seed)
    x = rng.standard_normal((batch, channels, model.cfg.lookback))
    y = rng.standard_normal((batch, channels, model.cfg.horizon))
    return ag.gradcheck(lambda: ag.mse_loss(model(x), y), model.params.trainable())


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    r = rng.standard_normal
    return {
        "add": (lambda a, b: ag.add(a, b), [r((3, 4)), r((4,))]),
        "sub": (lambda a, b: ag.sub(a, b), [r((2, 3)), r((2, 1))]),
        "mul": (lambda a, b: ag.mul(a, b), [r((2, 3, 4)), r((3, 1))]),
        "scale": (lambda a: ag.scale(a, -1.7), [r((5,))]),
        "matmul": (lambda a, b: ag.matmul(a, b), [r((2, 3, 4)), r((4, 5))]),
        "linear": (lambda x, w, b: ag.linear(x, w, b), [r((2, 3, 4)), r((4, 5)), r((5,))]),
        "concat": (lambda a, b: ag.concat([a, b], axis=-1), [r((2, 3)), r((2, 2))]),
        "slice": (lambda a: ag.getitem(a, (slice(None), slice(1, 3))), [r((3, 4))]),
        "shift": (lambda a: ag.shift(a, 1, axis=1), [r((2, 4, 3))]),
        "mean": (lambda a: ag.mean(a, axis=1), [r((3, 4, 2))]),
        "sum": (lambda a: ag.sum_(a, axis=0), [r((3, 4))]),
        "sigmoid": (lambda a: ag.sigmoid(a), [r((3, 4))]),
        "softmax": (lambda a: ag.softmax(a), [r((3, 5))]),
        "layer_norm": (lambda a, g, b: ag.layer_norm(a, g, b), [r((3, 6)), r((6,)), r((6,))]),
        "gelu": (lambda a: ag.gelu(a), [r((4, 3))]),
        "reshape": (lambda a: ag.reshape(a, (6, 2)), [r((3, 4))]),
        "transpose": (lambda a: ag.transpose(a, (1, 0, 2)), [r((2, 3, 4))]),
        "broadcast_to": (lambda a: ag.broadcast_to(a, (3, 2, 4)), [r((2, 4))]),
    }


def op_gradient_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (fn, arrays) in _op_cases(rng).items():
        leaves = [ag.Tensor(a, requires_grad=True) for a in arrays]
        weights = ag.Tensor(rng.standard_normal(fn(*leaves).shape))
        # weighted sum makes every output element matter
        errors[name] = ag.gradcheck(lambda: ag.sum_(ag.mul(fn(*leaves), weights)), leaves)
    return errors


def gradient_suite(model_seeds: int = 3) -> SuiteResult:
    res = SuiteResult("gradient")
    for name, err in op_gradient_errors().items():
        res.record(f"op {name}", err, GRAD_TOL)
    for seed in range(model_seeds):
        res.record(f"model seed {seed}", model_gradient_error(seed), GRAD_TOL)
    return res


def random_tiny_configs(count: int, seed: int = 0) -> list[ModelConfig]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        P = int(rng.integers(1, 4))
        heads = int(rng.choice([1, 2]))
        out.append(ModelConfig(
            lookback=int(rng.integers(P + 1, 4 * P + 3)),
            horizon=P * int(rng.integers(1, 4)),
            patch_len=P,
            d_model=4 * heads,
            n_layers=int(rng.integers(1, 3)),
            n_heads=heads,
            ffn_width=int(rng.integers(2, 9)),
            p=int(rng.integers(0, 3)),
            q=int(rng.integers(0, 3)),
            alpha=float(rng.uniform()),
            beta=float(rng.uniform()),
            mask_rate=0.0,
            ve_atten=bool(rng.integers(0, 2)),
            train_alpha=bool(rng.integers(0, 2)),
            seed=int(rng.integers(0, 2**31)),
        ))
    return out


def oracle_suite(count: int = 20) -> SuiteResult:
    res = SuiteResult("oracle")
    for i, cfg in enumerate(random_tiny_configs(count)):
        model = VARMAformer(cfg)
        rng = np.random.default_rng(i)
        x = rng.normal(2.0, 3.0, size=(int(rng.integers(1, 4)), cfg.lookback))
        fast = model.predict(x[None])[0]
        slow = reference_forward(x, model.params.state_dict(), cfg)
        res.record(f"config {i}", float(np.max(np.abs(fast - slow))), ORACLE_TOL)
    return res


def shape_suite() -> SuiteResult:
    res = SuiteResult("shape-grid")
    for L, T, P, C in [(8, 4, 2, 1), (10, 6, 3, 2), (96, 96, 24, 3), (96, 192, 24, 1), (7, 5, 5, 2)]:
        cfg = ModelConfig(lookback=L, horizon=T, patch_len=P, d_model=8, n_heads=2, n_layers=1,
                          ffn_width=8)
        out = VARMAformer(cfg).predict(np.random.default_rng(0).standard_normal((2, C, L)))
        ok = out.shape == (2, C, T) and bool(np.all(np.isfinite(out)))
        res.record(f"L={L} T={T} P={P} C={C}", 0.0 if ok else np.inf, 0.0)
    return res


def normalization_suite() -> SuiteResult:
    res = SuiteResult("normalization")
    rng = np.random.default_rng(0)
    for i in range(10):
        x = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), size=(3, 96))
        xn, mu, sigma = normalize_window(x)
        res.record(f"round trip {i}", float(np.max(np.abs(denormalize(xn, mu, sigma) - x))),
                   ROUND_TRIP_TOL)
    for L in (1, 5, 17, 96, 256):
        x = rng.standard_normal(L)
        worst = max(float(np.max(np.abs(patchify(x, P).unpatchify() - x))) for P in range(1, L + 1))
        res.record(f"patchify L={L}", worst, 0.0)
    return res


def identity_suite() -> SuiteResult:
    res = SuiteResult("identities")
    rng = np.random.default_rng(0)
    q = rng.standard_normal((3, 4, 8))
    g = rng.uniform(size=(3, 8))
    res.record("beta=0 keeps Q", float(np.max(np.abs(gate_queries(q, g, 0.0).data - q))), 0.0)
    res.record("G=1 keeps Q", float(np.max(np.abs(gate_queries(q, np.ones((3, 8)), 0.7).data - q))), 0.0)
    model = VARMAformer(ModelConfig(lookback=16, horizon=8, patch_len=4, d_model=8, n_heads=2,
                                    n_layers=2, ffn_width=8))
    model.predict(rng.standard_normal((2, 2, 16)) * 5)
    worst = max(float(np.max(np.abs(w.sum(axis=-1) - 1.0))) for w in model.attention_weights())
    res.record("attention rows sum to 1", worst, SOFTMAX_TOL)
    return res


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "gradient": gradient_suite,
    "oracle": oracle_suite,
    "shape-grid": shape_suite,
    "normalization": normalization_suite,
    "identities": identity_suite,
}


def run_all(names=None) -> list[SuiteResult]:
    return [SUITES[n]() for n in (names or SUITES)]


def format_report(results: list[SuiteResult]) -> str:
    buf = io.StringIO()
    buf.write("# schema-version: 1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "checks", "passed", "failed", "max_error"])
    for r in results:
        w.writerow([r.name, r.checks, r.checks - len(r.failures), len(r.failures),
                    f"{r.max_error:.3e}"])
    return buf.getvalue()
