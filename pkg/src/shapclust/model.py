"""Black-box predictors and a small multi-head feed-forward network.

The network trains with plain minibatch SGD + momentum on a weighted sum of
binary cross-entropy (probability heads) and the asymmetric PHM RUL score
(regression heads).
"""

from __future__ import annotations

import csv
import io
import logging
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import SCHEMA_VERSION, Dataset
from .errors import ConfigError, DataError, NumericError
from .metrics import NASA_EARLY, NASA_LATE, prf1

log = logging.getLogger(__name__)

PROBABILITY = "probability"
REGRESSION = "regression"


class Predictor:
    """Maps an (n, n_features) batch to (n, n_outputs). Must be deterministic."""

    n_features: int
    output_names: tuple[str, ...]
    output_kinds: tuple[str, ...]

    def _raw(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(
                f"predictor expects {self.n_features} features, got {X.shape[1]}"
            )
        out = np.array(self._raw(X), dtype=float).reshape(X.shape[0], len(self.output_names))
        if not np.all(np.isfinite(out)):
            raise NumericError("predictor produced non-finite outputs")
        probs = np.array([k == PROBABILITY for k in self.output_kinds])
        if probs.any():
            out[:, probs] = np.clip(out[:, probs], 0.0, 1.0)
        return out

    def output_index(self, name: str) -> int:
        try:
            return self.output_names.index(name)
        except ValueError:
            raise DataError(
                f"unknown output {name!r}; available: {list(self.output_names)}"
            ) from None

    def predict_output(self, X, name: str) -> np.ndarray:
        return self.predict_batch(X)[:, self.output_index(name)]


def predict(p: Predictor, x) -> dict[str, float]:
    """Evaluate a single feature vector; returns {output name: value}."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("predict takes a single feature vector; use predict_batch")
    return dict(zip(p.output_names, p.predict_batch(x[None, :])[0].tolist()))


class FunctionPredictor(Predictor):
    """Wrap a vectorized callable f(X) -> (n,) or (n, n_outputs)."""

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        n_features: int,
        output_names: Sequence[str] = ("y",),
        output_kinds: Optional[Sequence[str]] = None,
    ):
        self.fn = fn
        self.n_features = int(n_features)
        self.output_names = tuple(output_names)
        self.output_kinds = tuple(output_kinds or [REGRESSION] * len(self.output_names))

    def _raw(self, X):
        return self.fn(X)


class ExternalPredictor(Predictor):
    """Any executable reading CSV feature rows on stdin and writing one CSV
    output row per input row on stdout."""

    def __init__(
        self,
        command,
        n_features: int,
        output_names: Sequence[str],
        output_kinds: Optional[Sequence[str]] = None,
        timeout: float = 600.0,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.n_features = int(n_features)
        self.output_names = tuple(output_names)
        self.output_kinds = tuple(output_kinds or [REGRESSION] * len(self.output_names))
        self.timeout = timeout

    def _raw(self, X):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in X:
            w.writerow([f"{v:.17g}" for v in row])
        proc = subprocess.run(
            self.command,
            input=buf.getvalue(),
            capture_output=True,
            text=True,
            timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise DataError(
                f"external predictor exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        rows = [r for r in csv.reader(io.StringIO(proc.stdout)) if r]
        if len(rows) != X.shape[0]:
            raise DataError(
                f"external predictor returned {len(rows)} rows for {X.shape[0]} inputs"
            )
        try:
            return np.array([[float(v) for v in r] for r in rows])
        except ValueError as exc:
            raise DataError(f"external predictor output is not numeric: {exc}") from None


# --------------------------------------------------------------------------
# feed-forward network


@dataclass
class MlpSpec:
    hidden: Sequence[int] = (64, 32)
    output_names: Sequence[str] = ("y",)
    output_kinds: Sequence[str] = (PROBABILITY,)
    loss_weights: Optional[Sequence[float]] = None
    activation: str = "relu"
    epochs: int = 200
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.output_names = tuple(self.output_names)
        self.output_kinds = tuple(self.output_kinds)
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if len(self.output_names) != len(self.output_kinds):
            raise ConfigError("output_names and output_kinds differ in length")
        bad = set(self.output_kinds) - {PROBABILITY, REGRESSION}
        if bad:
            raise ConfigError(f"unknown output kinds {sorted(bad)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.loss_weights is None:
            # RUL score grows exponentially in the error; 0.01 keeps it on the
            # same footing as a cross-entropy term.
            self.loss_weights = tuple(
                1.0 if k == PROBABILITY else 0.01 for k in self.output_kinds
            )
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if len(self.loss_weights) != len(self.output_kinds):
            raise ConfigError("loss_weights must have one entry per output")
        if any(w < 0 for w in self.loss_weights):
            raise ConfigError("loss weights must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(float)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP(Predictor):
    def __init__(
        self,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        output_names: Sequence[str],
        output_kinds: Sequence[str],
        activation: str = "relu",
        feature_names: Optional[Sequence[str]] = None,
    ):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.output_names = tuple(output_names)
        self.output_kinds = tuple(output_kinds)
        self.activation = activation
        self.n_features = self.weights[0].shape[0]
        self.feature_names = None if feature_names is None else tuple(feature_names)
        self._prob = np.array([k == PROBABILITY for k in self.output_kinds])

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def logits(self, X: np.ndarray) -> np.ndarray:
        act, _ = ACTIVATIONS[self.activation]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = act(h @ W + b)
        return h @ self.weights[-1] + self.biases[-1]

    def _raw(self, X):
        z = self.logits(X)
        if self._prob.any():
            z[:, self._prob] = _sigmoid(z[:, self._prob])
        return z

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    def set_flat_params(self, theta: np.ndarray) -> None:
        k = 0
        for i in range(len(self.weights)):
            for arrs in (self.weights, self.biases):
                a = arrs[i]
                arrs[i] = theta[k : k + a.size].reshape(a.shape).copy()
                k += a.size

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "mlp",
            "activation": self.activation,
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "outputs": [
                {"name": n, "kind": k} for n, k in zip(self.output_names, self.output_kinds)
            ],
            "layers": [
                {"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MLP":
        if doc.get("schema_version") != SCHEMA_VERSION or doc.get("kind") != "mlp":
            raise DataError("not a schema_version 1 MLP document")
        return cls(
            [np.array(layer["W"], dtype=float) for layer in doc["layers"]],
            [np.array(layer["b"], dtype=float) for layer in doc["layers"]],
            [o["name"] for o in doc["outputs"]],
            [o["kind"] for o in doc["outputs"]],
            doc.get("activation", "relu"),
            doc.get("feature_names"),
        )


def init_mlp(n_features: int, spec: MlpSpec, feature_names=None) -> MLP:
    rng = np.random.default_rng(spec.seed)
    widths = [n_features, *spec.hidden, len(spec.output_names)]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, spec.output_names, spec.output_kinds, spec.activation, feature_names)


def head_losses(z: np.ndarray, Y: np.ndarray, kinds) -> tuple[np.ndarray, np.ndarray]:
    """Per-element loss and d(loss)/d(logit) for every head."""
    loss = np.empty_like(z)
    grad = np.empty_like(z)
    for k, kind in enumerate(kinds):
        zk, yk = z[:, k], Y[:, k]
        if kind == PROBABILITY:
            # BCE on logits: softplus(z) - y*z
            loss[:, k] = np.logaddexp(0.0, zk) - yk * zk
            grad[:, k] = _sigmoid(zk) - yk
        else:
            d = zk - yk
            early = d < 0
            loss[:, k] = np.where(early, np.expm1(-d / NASA_EARLY), np.expm1(d / NASA_LATE))
            grad[:, k] = np.where(
                early, -np.exp(-d / NASA_EARLY) / NASA_EARLY, np.exp(d / NASA_LATE) / NASA_LATE
            )
    return loss, grad


def loss_and_grad(net: MLP, X: np.ndarray, Y: np.ndarray, loss_weights) -> tuple[float, list, list]:
    """Mean weighted loss over the batch, with gradients per layer."""
    act, act_grad = ACTIVATIONS[net.activation]
    pre, hs = [], [X]
    h = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ W + b
        pre.append(z)
        h = act(z)
        hs.append(h)
    z = h @ net.weights[-1] + net.biases[-1]
    w = np.asarray(loss_weights, dtype=float)
    per, dz = head_losses(z, Y, net.output_kinds)
    n = X.shape[0]
    loss = float((per * w).sum() / n)
    delta = dz * w / n
    gW = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        gW[layer] = hs[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * act_grad(pre[layer - 1])
    return loss, gW, gb


def train_mlp(train: Dataset, targets: Dataset, spec: MlpSpec) -> MLP:
    """Deterministic for a fixed spec.seed. Inputs should already be scaled."""
    X = train.rows
    if targets.n_samples != train.n_samples:
        raise DataError(
            f"targets have {targets.n_samples} rows but training data has {train.n_samples}"
        )
    try:
        cols = [targets.feature_names.index(n) for n in spec.output_names]
    except ValueError:
        raise DataError(
            f"target table lacks one of {list(spec.output_names)}; has {list(targets.feature_names)}"
        ) from None
    Y = targets.rows[:, cols]
    net = init_mlp(train.n_features, spec, train.feature_names)
    rng = np.random.default_rng([spec.seed, 1])
    vW = [np.zeros_like(W) for W in net.weights]
    vb = [np.zeros_like(b) for b in net.biases]
    n = X.shape[0]
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            loss, gW, gb = loss_and_grad(net, X[idx], Y[idx], spec.loss_weights)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            total += loss * idx.size
            for i in range(len(net.weights)):
                vW[i] = spec.momentum * vW[i] - spec.learning_rate * gW[i]
                vb[i] = spec.momentum * vb[i] - spec.learning_rate * gb[i]
                net.weights[i] = net.weights[i] + vW[i]
                net.biases[i] = net.biases[i] + vb[i]
        if epoch % 50 == 0 or epoch == spec.epochs - 1:
            log.debug("epoch %d loss %.6g", epoch, total / n)
    return net


def dataset_loss(net: MLP, data: Dataset, targets: Dataset, spec: MlpSpec) -> float:
    cols = [targets.feature_names.index(n) for n in spec.output_names]
    loss, _, _ = loss_and_grad(net, data.rows, targets.rows[:, cols], spec.loss_weights)
    return loss


def load_predictor(doc: dict) -> Predictor:
    kind = doc.get("kind")
    if kind == "mlp":
        return MLP.from_json(doc)
    if kind == "external":
        return ExternalPredictor(
            doc["command"],
            doc["n_features"],
            [o["name"] for o in doc["outputs"]],
            [o["kind"] for o in doc["outputs"]],
        )
    raise DataError(f"unknown predictor kind {kind!r}")


# --------------------------------------------------------------------------
# reports


@dataclass
class ReportRow:
    prediction: str
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    support: int
    group: str = ""


def class_display_names(output: str) -> tuple[str, str]:
    """(negative, positive) row labels for a binary output."""
    if output == "health_state":
        # N-CMAPSS health state: 1 healthy, 0 unhealthy
        return "Unhealthy", "Healthy"
    if output.endswith("_failure"):
        comp = output[: -len("_failure")].upper()
        comp = "Fan" if comp == "FAN" else comp
        return f"No {comp} Failure", f"{comp} Failure"
    return f"not {output}", output


def classification_report(
    p: Predictor,
    test: Dataset,
    targets: Dataset,
    threshold: float = 0.5,
    outputs: Optional[Sequence[str]] = None,
) -> list[ReportRow]:
    """Both classes of every binary probability output, Table-3 style."""
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must be in (0, 1), got {threshold}")
    if outputs is None:
        outputs = [
            n
            for n, k in zip(p.output_names, p.output_kinds)
            if k == PROBABILITY and n in targets.feature_names
        ]
    preds = p.predict_batch(test.rows)
    rows = []
    for name in outputs:
        prob = preds[:, p.output_index(name)]
        truth = targets.column(name) >= 0.5
        yhat = prob >= threshold
        neg, pos = class_display_names(name)
        for label, pred_c, true_c in ((neg, ~yhat, ~truth), (pos, yhat, truth)):
            pr, rc, f1 = prf1(pred_c, true_c)
            rows.append(ReportRow(label, pr, rc, f1, int(true_c.sum()), group=name))
    return rows


def multiclass_report(
    p: Predictor, data: Dataset, true_labels: Sequence[str], class_outputs: Sequence[str]
) -> list[ReportRow]:
    """One row per class, predicted class = argmax over one-vs-rest heads."""
    idx = [p.output_index(o) for o in class_outputs]
    pred = np.asarray(class_outputs)[np.argmax(p.predict_batch(data.rows)[:, idx], axis=1)]
    truth = np.asarray(list(true_labels), dtype=object)
    rows = []
    for o in class_outputs:
        cls_name = o[len("class_") :] if o.startswith("class_") else o
        pr, rc, f1 = prf1(pred == o, truth == cls_name)
        rows.append(ReportRow(cls_name, pr, rc, f1, int((truth == cls_name).sum())))
    return rows
