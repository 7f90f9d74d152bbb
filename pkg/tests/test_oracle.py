import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

from varmaformer.data import make_windows
from varmaformer.model import VARMAformer
from varmaformer.oracle import (MAX_REFERENCE_CELLS, LinearBaseline, NonStationaryError,
                                PersistenceBaseline, SyntheticSpec, ar2_autocorrelation,
                                ar2_variance, companion_radius, generate, persistence,
                                reference_forward)
from varmaformer.verify import random_tiny_configs, tiny_config


def test_noiseless_ar1_decays_geometrically():
    ds = generate(SyntheticSpec(kind="ar", phi=(0.9,), noise_std=0.0, length=50, burn_in=0,
                                initial=1.0))
    np.testing.assert_allclose(ds.values[:, 0], 0.9 ** np.arange(50), rtol=1e-12)


def test_ar2_lag1_autocorrelation():
    x = generate(SyntheticSpec(kind="ar", phi=(0.5, 0.3), noise_std=1.0, length=100_000, seed=3)).values[:, 0]
    x = x - x.mean()
    rho1 = float(np.dot(x[1:], x[:-1]) / np.dot(x, x))
    assert ar2_autocorrelation(0.5, 0.3, 1)[1] == pytest.approx(0.5 / 0.7, abs=1e-12)
    assert abs(rho1 - 0.714) < 0.05


def test_ar2_variance_closed_form():
    # independent route: stationary covariance of the companion system
    A = np.array([[0.5, 0.3], [1.0, 0.0]])
    Q = np.diag([0.04, 0.0])
    lyap = solve_discrete_lyapunov(A, Q)[0, 0]
    assert ar2_variance(0.5, 0.3, 0.2) == pytest.approx(lyap, rel=1e-12)
    x = generate(SyntheticSpec(kind="ar", phi=(0.5, 0.3), noise_std=0.2, length=100_000, seed=5)).values
    assert abs(x.var() / lyap - 1.0) < 0.05


def test_generation_is_seeded():
    spec = SyntheticSpec(kind="varma", phi=(0.5,), theta=(0.4,), length=300, channels=2, seed=7)
    assert np.array_equal(generate(spec).values, generate(spec).values)
    other = SyntheticSpec(kind="varma", phi=(0.5,), theta=(0.4,), length=300, channels=2, seed=8)
    assert not np.array_equal(generate(spec).values, generate(other).values)


def test_scalar_and_matrix_paths_agree():
    one = generate(SyntheticSpec(kind="varma", phi=(0.5, 0.3), theta=(0.4,), length=500, seed=2))
    mat = generate(SyntheticSpec(kind="varma", phi=(np.array([[0.5]]), np.array([[0.3]])),
                                 theta=(np.array([[0.4]]),), length=500, seed=2))
    np.testing.assert_allclose(one.values, mat.values, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("phi", [(1.0,), (0.7, 0.4), (np.array([[1.2, 0.0], [0.0, 0.1]]),)])
def test_non_stationary_rejected(phi):
    channels = 2 if np.ndim(phi[0]) == 2 else 1
    with pytest.raises(NonStationaryError):
        generate(SyntheticSpec(kind="ar", phi=phi, channels=channels))


def test_companion_radius_ar1():
    assert companion_radius([np.array([[0.9]])]) == pytest.approx(0.9)


def test_noiseless_sine():
    ds = generate(SyntheticSpec(kind="sine-plus-noise", noise_std=0.0, length=100, period=24, amplitude=2.0))
    np.testing.assert_allclose(ds.values[:, 0], 2.0 * np.sin(2 * np.pi * np.arange(100) / 24), atol=1e-12)


def test_persistence_on_constant_series():
    x = np.full((4, 2, 10), 3.5)
    np.testing.assert_array_equal(PersistenceBaseline(5).predict(x) - 3.5, 0.0)
    np.testing.assert_array_equal(persistence(np.arange(4.0), 2), [3.0, 3.0])


def test_linear_baseline_on_noiseless_ar1():
    ds = generate(SyntheticSpec(kind="ar", phi=(0.9,), noise_std=0.0, length=400, burn_in=0, initial=5.0))
    train_w = make_windows(ds.values, range(0, 300), 8, 4)
    test_w = make_windows(ds.values, range(300, 400), 8, 4)
    err = LinearBaseline().fit(train_w).predict(test_w.x) - test_w.y
    assert float(np.mean(err ** 2)) < 1e-6


# ---------------------------------------------------------------------------
# scalar-loop forward pass


@pytest.mark.parametrize("cfg_index", range(3))
@pytest.mark.parametrize("seed", range(3))
def test_reference_matches_fast_path(cfg_index, seed):
    cfg = random_tiny_configs(3, seed=100 + cfg_index)[cfg_index].replace(seed=seed)
    model = VARMAformer(cfg)
    x = np.random.default_rng(seed).normal(1.0, 2.0, size=(2, cfg.lookback))
    fast = model.predict(x[None])[0]
    slow = reference_forward(x, model.params.state_dict(), cfg)
    assert np.max(np.abs(fast - slow)) <= 1e-8


def test_zero_parameters_forecast_mean(rng):
    cfg = tiny_config(0)
    model = VARMAformer(cfg)
    state = {k: np.zeros_like(v) for k, v in model.params.state_dict().items()}
    model.params.load_state_dict(state)
    x = rng.normal(3.0, 2.0, size=(2, cfg.lookback))
    mu = np.broadcast_to(x.mean(axis=1, keepdims=True), (2, cfg.horizon))
    np.testing.assert_allclose(model.predict(x[None])[0], mu, rtol=0, atol=1e-12)
    np.testing.assert_allclose(reference_forward(x, state, cfg), mu, rtol=0, atol=1e-12)


def test_gate_identity_in_both_paths(rng):
    closed = VARMAformer(tiny_config(2, beta=0.0))
    state = closed.params.state_dict()
    state["decoder.0.gate.fc2.weight"][:] = 0.0
    state["decoder.0.gate.fc2.bias"][:] = 1000.0  # sigmoid saturates to exactly 1
    closed.params.load_state_dict(state)
    opened = VARMAformer(tiny_config(2, beta=1.0))
    opened.params.load_state_dict(state)
    x = rng.standard_normal((2, 8))
    a, b = closed.predict(x[None])[0], opened.predict(x[None])[0]
    assert np.array_equal(a, b)
    assert np.array_equal(reference_forward(x, state, closed.cfg), reference_forward(x, state, opened.cfg))


def test_reference_size_ceiling():
    cfg = tiny_config(0, lookback=64 * 8, patch_len=2, d_model=16)
    with pytest.raises(ValueError, match="too large"):
        reference_forward(np.zeros((2, cfg.lookback)), {}, cfg)
    assert MAX_REFERENCE_CELLS == 4096
