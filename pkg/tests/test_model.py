import json
import sys

import numpy as np
import pytest

from shapclust.core import Dataset
from shapclust.errors import ConfigError, DataError, NumericError
from shapclust.metrics import fmt
from shapclust.model import (
    MLP,
    PROBABILITY,
    REGRESSION,
    ExternalPredictor,
    FunctionPredictor,
    MlpSpec,
    class_display_names,
    classification_report,
    dataset_loss,
    init_mlp,
    load_predictor,
    loss_and_grad,
    multiclass_report,
    predict,
    train_mlp,
)

XOR_X = Dataset(("a", "b"), [[0, 0], [0, 1], [1, 0], [1, 1]])
XOR_Y = Dataset(("y",), [[0], [1], [1], [0]])
XOR_SPEC = MlpSpec(hidden=(8,), output_names=("y",), epochs=2000, learning_rate=0.1,
                   batch_size=4, seed=3)


@pytest.fixture(scope="module")
def xor_net():
    return train_mlp(XOR_X, XOR_Y, XOR_SPEC)


def test_xor_is_learned(xor_net):
    p = xor_net.predict_batch(XOR_X.rows)[:, 0]
    assert np.mean((p >= 0.5) == (XOR_Y.rows[:, 0] == 1)) >= 0.99
    assert predict(xor_net, [0.0, 0.0])["y"] < 0.5


def test_parameter_count_order():
    spec = MlpSpec(hidden=(64, 32), output_names=tuple(f"o{i}" for i in range(7)),
                   output_kinds=(PROBABILITY,) * 6 + (REGRESSION,))
    net = init_mlp(129, spec)
    assert net.n_params == 129 * 64 + 64 + 64 * 32 + 32 + 32 * 7 + 7
    assert 1e4 <= net.n_params < 1e5


def test_zero_epochs_returns_initialization():
    spec = MlpSpec(hidden=(4,), epochs=0, seed=9)
    net = train_mlp(XOR_X, XOR_Y, spec)
    np.testing.assert_array_equal(net.flat_params(), init_mlp(2, spec).flat_params())


def test_training_is_bitwise_deterministic():
    a = train_mlp(XOR_X, XOR_Y, MlpSpec(hidden=(5,), epochs=50, seed=4))
    b = train_mlp(XOR_X, XOR_Y, MlpSpec(hidden=(5,), epochs=50, seed=4))
    assert a.flat_params().tobytes() == b.flat_params().tobytes()
    c = train_mlp(XOR_X, XOR_Y, MlpSpec(hidden=(5,), epochs=50, seed=5))
    assert a.flat_params().tobytes() != c.flat_params().tobytes()


def _numeric_grad(net, X, Y, w, h=1e-5):
    theta = net.flat_params()
    g = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        net.set_flat_params(t)
        up, _, _ = loss_and_grad(net, X, Y, w)
        t[i] -= 2 * h
        net.set_flat_params(t)
        down, _, _ = loss_and_grad(net, X, Y, w)
        g[i] = (up - down) / (2 * h)
    net.set_flat_params(theta)
    return g


@pytest.mark.parametrize("activation", ["relu", "tanh"])
@pytest.mark.parametrize("seed", range(3))
def test_gradient_check(activation, seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(hidden=(5, 4), output_names=("p", "q", "r"),
                   output_kinds=(PROBABILITY, PROBABILITY, REGRESSION),
                   loss_weights=(1.0, 0.5, 0.01), activation=activation, seed=seed)
    net = init_mlp(3, spec)
    for b in net.biases:
        b += rng.normal(0, 0.3, b.shape)
    X = rng.normal(size=(7, 3))
    Y = np.column_stack([rng.integers(0, 2, 7), rng.integers(0, 2, 7), rng.normal(0, 5, 7)])
    _, gW, gb = loss_and_grad(net, X, Y, spec.loss_weights)
    analytic = np.concatenate([a.ravel() for pair in zip(gW, gb) for a in pair])
    numeric = _numeric_grad(net, X, Y, spec.loss_weights)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert rel <= 1e-4


def test_loss_decreases_on_separable_toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(float)[:, None]
    data, tg = Dataset(("a", "b"), X), Dataset(("y",), y)
    losses = []
    for epochs in range(0, 101, 10):
        spec = MlpSpec(hidden=(4,), epochs=epochs, learning_rate=0.005, batch_size=40, seed=1)
        losses.append(dataset_loss(train_mlp(data, tg, spec), data, tg, spec))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_raises_numeric_error():
    X = Dataset(("a",), [[1e200], [-1e200]])
    Y = Dataset(("y",), [[1.0], [0.0]])
    spec = MlpSpec(hidden=(3,), output_kinds=(REGRESSION,), epochs=5, learning_rate=10.0, seed=0)
    with pytest.raises(NumericError, match="epoch"):
        train_mlp(X, Y, spec)


def test_spec_validation():
    with pytest.raises(ConfigError):
        MlpSpec(hidden=(0,))
    with pytest.raises(ConfigError):
        MlpSpec(output_names=("a", "b"), output_kinds=(PROBABILITY,))
    with pytest.raises(ConfigError):
        MlpSpec(output_kinds=("softmax",))
    with pytest.raises(ConfigError):
        MlpSpec(learning_rate=0.0)
    assert MlpSpec(output_names=("h", "rul"), output_kinds=(PROBABILITY, REGRESSION)).loss_weights == (1.0, 0.01)


def test_missing_target_column():
    with pytest.raises(DataError):
        train_mlp(XOR_X, XOR_Y, MlpSpec(output_names=("z",)))


def test_predictor_contract(xor_net):
    X = np.random.default_rng(0).random((6, 2))
    a = xor_net.predict_batch(X)
    assert a.shape == (6, 1)
    np.testing.assert_array_equal(a, xor_net.predict_batch(X))
    np.testing.assert_array_equal(a[3], xor_net.predict_batch(X[3:4])[0])
    with pytest.raises(DataError):
        xor_net.predict_batch(np.zeros((1, 3)))
    with pytest.raises(DataError):
        xor_net.output_index("nope")


def test_non_finite_output_rejected():
    p = FunctionPredictor(lambda X: np.full(X.shape[0], np.nan), 1)
    with pytest.raises(NumericError):
        p.predict_batch([[0.0]])


def test_json_round_trip(xor_net):
    doc = json.loads(json.dumps(xor_net.to_json()))
    back = load_predictor(doc)
    assert isinstance(back, MLP)
    np.testing.assert_array_equal(back.flat_params(), xor_net.flat_params())
    with pytest.raises(DataError):
        load_predictor({"kind": "forest"})


def test_external_predictor(tmp_path):
    script = tmp_path / "model.py"
    script.write_text(
        "import sys, csv\n"
        "for r in csv.reader(sys.stdin):\n"
        "    print(2 * float(r[0]) + float(r[1]))\n"
    )
    p = ExternalPredictor([sys.executable, str(script)], 2, ["y"])
    np.testing.assert_allclose(p.predict_batch([[1, 2], [3, 4]])[:, 0], [4, 10])
    bad = ExternalPredictor([sys.executable, "-c", "import sys; sys.exit(3)"], 2, ["y"])
    with pytest.raises(DataError, match="exited 3"):
        bad.predict_batch([[1, 2]])


def test_report_perfect_and_constant():
    data = Dataset(("x",), [[0.0], [1.0], [0.0], [1.0]])
    targets = Dataset(("fan_failure",), [[0.0], [1.0], [0.0], [1.0]])
    perfect = FunctionPredictor(lambda X: X[:, 0], 1, ["fan_failure"], [PROBABILITY])
    rows = classification_report(perfect, data, targets)
    assert [r.prediction for r in rows] == ["No Fan Failure", "Fan Failure"]
    assert all(fmt(v) == "1.00" for r in rows for v in (r.precision, r.recall, r.f1))
    zero = FunctionPredictor(lambda X: 0 * X[:, 0], 1, ["fan_failure"], [PROBABILITY])
    pos = classification_report(zero, data, targets)[1]
    assert fmt(pos.recall) == "0.00" and pos.precision is None


def test_health_state_row_names():
    assert class_display_names("health_state") == ("Unhealthy", "Healthy")
    assert class_display_names("hpt_failure") == ("No HPT Failure", "HPT Failure")
    row = classification_report(
        FunctionPredictor(lambda X: X[:, 0], 1, ["health_state"], [PROBABILITY]),
        Dataset(("x",), [[0.0], [1.0]]),
        Dataset(("health_state",), [[0.0], [1.0]]),
    )[0]
    line = f"{row.prediction} {fmt(row.precision)} {fmt(row.recall)} {fmt(row.f1)}"
    assert line == "Unhealthy 1.00 1.00 1.00"


def test_multiclass_report():
    p = FunctionPredictor(lambda X: np.column_stack([X[:, 0], 1 - X[:, 0]]), 1,
                          ["class_F", "class_N"], [PROBABILITY] * 2)
    data = Dataset(("x",), [[1.0], [0.0], [0.0]])
    rows = multiclass_report(p, data, ["F", "N", "F"], ["class_F", "class_N"])
    assert [(r.prediction, r.support) for r in rows] == [("F", 2), ("N", 1)]
    assert rows[0].precision == 1.0 and rows[0].recall == 0.5
