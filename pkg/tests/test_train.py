import numpy as np
import pytest

from varmaformer import autograd as ag
from varmaformer.autograd import ParameterRegistry, Tensor
from varmaformer.data import WindowSet
from varmaformer.model import VARMAformer
from varmaformer.oracle import SyntheticSpec, generate
from varmaformer.train import (Adam, MetricRow, TrainConfig, TrainingDiverged, evaluate,
                               format_rows, mean_rows, metrics, parameter_digest, train)
from varmaformer.verify import tiny_config
from varmaformer.data import make_windows


class Slope:
    """y = w * x with a single scalar weight."""

    def __init__(self, w0=0.0):
        self.params = ParameterRegistry()
        self.w = self.params.add("w", np.array(w0))

    def train(self):
        return self

    def eval(self):
        return self

    def __call__(self, x):
        return ag.mul(Tensor(x), self.w)

    def predict(self, x):
        with ag.no_grad():
            return self(x).data


class Constant:
    def __init__(self, value=np.nan):
        self.params = ParameterRegistry()
        self.b = self.params.add("b", np.array(0.0))
        self.value = value

    def train(self):
        return self

    def eval(self):
        return self

    def __call__(self, x):
        return ag.add(ag.mul(Tensor(np.full(np.shape(x), self.value)), 1.0), self.b)

    def predict(self, x):
        return self(x).data


def line_windows(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, size=(n, 1, 1))
    return WindowSet(x, 2.0 * x, np.arange(n))


def tiny_windows(n=64, seed=0):
    ds = generate(SyntheticSpec(kind="ar", phi=(0.5, 0.3), length=n + 11, seed=seed, channels=2))
    return make_windows(ds.values, range(0, len(ds)), 8, 4)


def test_learns_slope():
    model = Slope()
    cfg = TrainConfig(batch_size=8, max_epochs=200, patience=200, learning_rate=0.05, lr_decay=1.0)
    train(model, line_windows(64, 0), line_windows(32, 1), cfg)
    assert abs(float(model.w.data) - 2.0) < 1e-2


def test_tiny_model_loss_decreases():
    train_set, val_set = tiny_windows(64, 0), tiny_windows(32, 1)
    assert len(train_set) == 64
    losses = []
    cfg = TrainConfig(batch_size=16, max_epochs=20, patience=20, learning_rate=1e-3)
    train(VARMAformer(tiny_config(0)), train_set, val_set, cfg,
          on_epoch=lambda rec: losses.append(rec.train_mse))
    assert len(losses) == 20
    assert all(b < a for a, b in zip(losses[:5], losses[1:5]))


def test_patience_zero_runs_one_epoch():
    res = train(Slope(), line_windows(16, 0), line_windows(8, 1), TrainConfig(max_epochs=10, patience=0))
    assert len(res.history) == 1 and res.best_epoch == 1


def test_best_parameters_restored():
    model = Slope(2.0)
    cfg = TrainConfig(batch_size=4, max_epochs=3, patience=3, learning_rate=0.5, lr_decay=1.0)
    res = train(model, line_windows(16, 0), line_windows(8, 1), cfg)
    best = res.history[res.best_epoch - 1].val_mse
    assert evaluate(model, line_windows(8, 1))["mse"] == pytest.approx(best, abs=1e-15)


def test_lr_halves_on_bad_epoch():
    model = Slope(2.0)  # already optimal, so every epoch after the first is non-improving
    cfg = TrainConfig(batch_size=4, max_epochs=4, patience=4, learning_rate=0.1)
    res = train(model, line_windows(16, 0), line_windows(8, 1), cfg)
    lrs = [rec.lr for rec in res.history]
    assert lrs[0] == 0.1
    for a, b in zip(lrs, lrs[1:]):
        assert b in (a, a * 0.5)


def test_divergence_reports_epoch():
    with pytest.raises(TrainingDiverged) as err:
        train(Constant(), line_windows(8, 0), line_windows(4, 1), TrainConfig(max_epochs=3, patience=3))
    assert err.value.epoch == 1


def test_evaluate_perfect_predictor():
    w = line_windows(20, 0)
    res = evaluate(Slope(2.0), w)
    assert res["mse"] == 0.0 and res["mae"] == 0.0 and res["n_samples"] == 20


def test_zero_predictor_mse_is_target_power(rng):
    y = rng.standard_normal((5000, 1, 1))
    res = evaluate(Slope(0.0), WindowSet(y, y, np.arange(5000)))
    assert res["mse"] == pytest.approx(float(np.mean(y ** 2)), rel=1e-12)
    assert res["mse"] == pytest.approx(1.0, abs=0.05)


def test_evaluate_empty_set():
    with pytest.raises(ValueError, match="empty"):
        evaluate(Slope(), WindowSet(np.zeros((0, 1, 1)), np.zeros((0, 1, 1)), np.zeros(0)))


def test_metrics_definition():
    m = metrics(np.array([[1.0, -1.0]]), np.array([[0.0, 1.0]]))
    assert m["mse"] == 2.5 and m["mae"] == 1.5


def test_zero_gradient_step_keeps_parameters():
    reg = ParameterRegistry()
    p = reg.add("p", np.array([1.0, -2.0]))
    opt = Adam(reg.trainable())
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_sized():
    reg = ParameterRegistry()
    p = reg.add("p", np.array([0.0, 0.0]))
    opt = Adam(reg.trainable(), lr=0.01)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)


def test_evaluation_leaves_parameters_untouched(rng):
    model = VARMAformer(tiny_config(0, mask_rate=0.3))
    before = parameter_digest(model)
    evaluate(model, tiny_windows(16, 0))
    assert parameter_digest(model) == before


def test_training_is_seed_deterministic():
    def run():
        model = VARMAformer(tiny_config(1))
        res = train(model, tiny_windows(32, 0), tiny_windows(16, 1),
                    TrainConfig(batch_size=8, max_epochs=3, patience=3, seed=9))
        return parameter_digest(model), [r.train_mse for r in res.history]

    assert run() == run()


@pytest.mark.parametrize("kwargs", [dict(batch_size=0), dict(max_epochs=0), dict(patience=-1),
                                    dict(learning_rate=0.0), dict(loss="mae")])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_rows_and_means():
    rows = [MetricRow("d", 96, "all", s, 3, "test", m, 0.5, 1.25) for s, m in ((0, 1.0), (1, 3.0))]
    means = mean_rows(rows)
    assert len(means) == 1 and means[0].seed == "mean" and means[0].mse == 2.0
    text = format_rows(rows + means)
    lines = text.splitlines()
    assert lines[0] == "# schema-version: 1"
    assert lines[1] == "dataset,horizon,ablation,seed,epoch,split,mse,mae,wall_time_s"
    assert lines[2] == "d,96,all,0,3,test,1,0.5,1.250"
    assert lines[4] == "d,96,all,mean,,test,2,0.5,"
