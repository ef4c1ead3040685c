"""Concentration forecasting: a small trainable network and a baseline.

Predicts the grid-mean PM10 concentration a fixed number of steps ahead
from the current mean concentration plus four weather variables. Two
predictors share one contract (a `predict(ForecastInput) -> float`
method): a persistence baseline that simply repeats the current value,
and a 5-8-1 tanh network trained with mini-batch gradient descent on
min-max normalised data.

Training is written out explicitly (forward, backward, update) so the
gradients can be checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_FEATURES = 5

FORMAT_HEADER = "pm10sim-mlp"
FORMAT_VERSION = "v1"


class ForecasterError(ValueError):
    """Invalid forecaster input, configuration or model file."""


@dataclass(frozen=True)
class ForecastInput:
    """Features at one step: grid-mean concentration plus weather."""

    concentration: float
    wind_speed: float
    temperature: float
    humidity: float
    rainfall: float

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.concentration, self.wind_speed, self.temperature, self.humidity, self.rainfall]
        )


@dataclass
class Normalizer:
    """Per-feature min-max scaling to [0, 1], plus target scaling.

    A degenerate feature (max == min) maps to 0 instead of dividing by
    zero; its information content is nil either way.
    """

    in_min: np.ndarray
    in_max: np.ndarray
    target_min: float
    target_max: float

    @classmethod
    def fit(cls, inputs: np.ndarray, targets: np.ndarray) -> "Normalizer":
        if inputs.ndim != 2 or inputs.shape[1] != N_FEATURES:
            raise ForecasterError(f"expected (n, {N_FEATURES}) inputs, got {inputs.shape}")
        return cls(
            in_min=inputs.min(axis=0),
            in_max=inputs.max(axis=0),
            target_min=float(targets.min()),
            target_max=float(targets.max()),
        )

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.in_max - self.in_min
        scaled = np.where(span > 0.0, (x - self.in_min) / np.where(span > 0.0, span, 1.0), 0.0)
        return scaled

    def transform_target(self, y):
        span = self.target_max - self.target_min
        if span <= 0.0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return (y - self.target_min) / span

    def inverse_target(self, y_scaled: float) -> float:
        span = self.target_max - self.target_min
        if span <= 0.0:
            return self.target_min
        return self.target_min + y_scaled * span


@dataclass
class MLPParams:
    """Weights of the 5-n_hidden-1 network (tanh hidden, identity output)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "MLPParams":
        return MLPParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def validate(self) -> None:
        nh = self.w1.shape[0]
        if self.w1.shape != (nh, N_FEATURES):
            raise ForecasterError(f"w1 must be ({nh}, {N_FEATURES}), got {self.w1.shape}")
        if self.b1.shape != (nh,):
            raise ForecasterError(f"b1 must be ({nh},), got {self.b1.shape}")
        if self.w2.shape != (1, nh):
            raise ForecasterError(f"w2 must be (1, {nh}), got {self.w2.shape}")
        if self.b2.shape != (1,):
            raise ForecasterError(f"b2 must be (1,), got {self.b2.shape}")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ForecasterError("model parameters must be finite")


def init_mlp(n_hidden: int = 8, seed: int = 0) -> MLPParams:
    """Seeded uniform initialisation scaled by layer fan-in/out."""
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (N_FEATURES + n_hidden))
    s2 = np.sqrt(6.0 / (n_hidden + 1))
    return MLPParams(
        w1=rng.uniform(-s1, s1, size=(n_hidden, N_FEATURES)),
        b1=np.zeros(n_hidden),
        w2=rng.uniform(-s2, s2, size=(1, n_hidden)),
        b2=np.zeros(1),
    )


def forward(model: MLPParams, x: Sequence[float]) -> float:
    """Network output for one normalised feature vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (N_FEATURES,):
        raise ForecasterError(f"input must have {N_FEATURES} features, got shape {x.shape}")
    hidden = np.tanh(model.w1 @ x + model.b1)
    return float(model.w2 @ hidden + model.b2)


def _forward_batch(model: MLPParams, inputs: np.ndarray):
    hidden = np.tanh(inputs @ model.w1.T + model.b1)
    out = hidden @ model.w2.T + model.b2
    return out[:, 0], hidden


def batch_loss(model: MLPParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared error of the network over a batch."""
    out, _ = _forward_batch(model, inputs)
    return float(np.mean((out - targets) ** 2))


@dataclass
class Gradients:
    """Loss gradients, shaped like the parameters they belong to."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()]
        )


def backprop_grads(model: MLPParams, inputs: np.ndarray, targets: np.ndarray) -> Gradients:
    """Exact MSE gradients over a batch, by reverse accumulation."""
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ForecasterError("backprop needs a non-empty (n, 5) batch")
    n = inputs.shape[0]
    out, hidden = _forward_batch(model, inputs)
    d_out = 2.0 * (out - targets) / n            # (n,)
    g_w2 = d_out[None, :] @ hidden               # (1, h)
    g_b2 = np.array([d_out.sum()])
    d_hidden = d_out[:, None] * model.w2         # (n, h)
    d_pre = d_hidden * (1.0 - hidden**2)         # tanh'
    g_w1 = d_pre.T @ inputs                      # (h, 5)
    g_b1 = d_pre.sum(axis=0)
    return Gradients(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def finite_diff_grads(
    model: MLPParams, inputs: np.ndarray, targets: np.ndarray, eps: float = 1e-5
) -> Gradients:
    """Central-difference gradients; the oracle for `backprop_grads`."""
    if eps <= 0.0:
        raise ForecasterError(f"eps must be > 0, got {eps}")
    work = model.copy()
    grads = Gradients(
        w1=np.zeros_like(model.w1),
        b1=np.zeros_like(model.b1),
        w2=np.zeros_like(model.w2),
        b2=np.zeros_like(model.b2),
    )
    for name in ("w1", "b1", "w2", "b2"):
        param = getattr(work, name)
        grad = getattr(grads, name)
        flat_p = param.ravel()
        flat_g = grad.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            up = batch_loss(work, inputs, targets)
            flat_p[i] = orig - eps
            down = batch_loss(work, inputs, targets)
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * eps)
    return grads


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0.0:
            raise ForecasterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ForecasterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ForecasterError(f"batch_size must be >= 1, got {self.batch_size}")


def train(
    model: MLPParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainingConfig | None = None,
) -> tuple[MLPParams, list[float]]:
    """Mini-batch SGD on normalised data. Returns (trained model, loss/epoch).

    Deterministic for a given config seed: the shuffle order is the only
    randomness. The input model is not modified.
    """
    config = config or TrainingConfig()
    config.validate()
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = inputs.shape[0]
    if n == 0:
        raise ForecasterError("training dataset is empty")
    if n < config.batch_size:
        raise ForecasterError(
            f"dataset size {n} is below batch_size {config.batch_size}"
        )
    rng = np.random.default_rng(config.seed)
    work = model.copy()
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            g = backprop_grads(work, inputs[idx], targets[idx])
            work.w1 -= config.learning_rate * g.w1
            work.b1 -= config.learning_rate * g.b1
            work.w2 -= config.learning_rate * g.w2
            work.b2 -= config.learning_rate * g.b2
        losses.append(batch_loss(work, inputs, targets))
    return work, losses


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


class PersistencePredictor:
    """Baseline: the forecast h steps ahead is the current concentration."""

    def predict(self, inp: ForecastInput) -> float:
        return inp.concentration


@dataclass
class MLPPredictor:
    """Trained network plus the normaliser it was fitted with."""

    model: MLPParams
    normalizer: Normalizer

    def predict(self, inp: ForecastInput) -> float:
        x = self.normalizer.transform(inp.to_vector())
        raw = self.normalizer.inverse_target(forward(self.model, x))
        return max(0.0, raw)


def build_training_set(records: Sequence, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Supervised pairs from a simulation trace.

    Row t pairs the features at step t with the mean concentration at
    step t + horizon. Records need `concentration_ugm3` and `climate`
    attributes (engine StepRecord shape).
    """
    n = len(records)
    if horizon < 1:
        raise ForecasterError(f"horizon must be >= 1, got {horizon}")
    if n <= horizon:
        raise ForecasterError(
            f"trace of {n} steps is too short for horizon {horizon}; need more than {horizon}"
        )
    inputs = np.empty((n - horizon, N_FEATURES))
    targets = np.empty(n - horizon)
    for t in range(n - horizon):
        rec = records[t]
        c = rec.climate
        inputs[t] = (
            rec.concentration_ugm3,
            c.wind_speed,
            c.temperature,
            c.humidity,
            c.rainfall,
        )
        targets[t] = records[t + horizon].concentration_ugm3
    return inputs, targets


def fit_predictor(
    records: Sequence,
    horizon: int,
    n_hidden: int = 8,
    config: TrainingConfig | None = None,
) -> tuple[MLPPredictor, list[float]]:
    """Normalise a trace-derived dataset and train a fresh network on it."""
    config = config or TrainingConfig()
    inputs, targets = build_training_set(records, horizon)
    norm = Normalizer.fit(inputs, targets)
    x = norm.transform(inputs)
    y = norm.transform_target(targets)
    model = init_mlp(n_hidden=n_hidden, seed=config.seed)
    trained, losses = train(model, x, y, config)
    return MLPPredictor(model=trained, normalizer=norm), losses


# ---------------------------------------------------------------------------
# Model persistence: versioned flat text, exact round-trip
# ---------------------------------------------------------------------------


def _fmt(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values.ravel())


def serialize_predictor(predictor: MLPPredictor) -> str:
    """Flat text model format; floats printed to full round-trip precision."""
    m = predictor.model
    n = predictor.normalizer
    lines = [
        f"{FORMAT_HEADER} {FORMAT_VERSION}",
        f"layers {N_FEATURES} {m.n_hidden} 1",
        "w1 " + _fmt(m.w1),
        "b1 " + _fmt(m.b1),
        "w2 " + _fmt(m.w2),
        "b2 " + _fmt(m.b2),
        "in_min " + _fmt(n.in_min),
        "in_max " + _fmt(n.in_max),
        f"target {n.target_min!r} {n.target_max!r}",
    ]
    return "\n".join(lines) + "\n"


def parse_predictor(text: str) -> MLPPredictor:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != [FORMAT_HEADER, FORMAT_VERSION]:
        raise ForecasterError(
            f"not a {FORMAT_HEADER} {FORMAT_VERSION} model file"
        )
    fields: dict[str, list[str]] = {}
    for ln in lines[1:]:
        parts = ln.split()
        fields[parts[0]] = parts[1:]
    try:
        n_in, n_hidden, n_out = (int(v) for v in fields["layers"])
        if n_in != N_FEATURES or n_out != 1:
            raise ForecasterError(f"unsupported layer sizes {n_in}-{n_hidden}-{n_out}")

        def arr(key: str, shape: tuple) -> np.ndarray:
            vals = np.array([float(v) for v in fields[key]])
            if vals.size != int(np.prod(shape)):
                raise ForecasterError(f"model field {key} has wrong length")
            return vals.reshape(shape)

        model = MLPParams(
            w1=arr("w1", (n_hidden, N_FEATURES)),
            b1=arr("b1", (n_hidden,)),
            w2=arr("w2", (1, n_hidden)),
            b2=arr("b2", (1,)),
        )
        t_min, t_max = (float(v) for v in fields["target"])
        norm = Normalizer(
            in_min=arr("in_min", (N_FEATURES,)),
            in_max=arr("in_max", (N_FEATURES,)),
            target_min=t_min,
            target_max=t_max,
        )
    except KeyError as exc:
        raise ForecasterError(f"model file missing field {exc.args[0]!r}") from None
    model.validate()
    return MLPPredictor(model=model, normalizer=norm)
