"""Federated learning pieces: a tanh/softmax MLP trained with Adam, FedAvg, partitioning.

Weights of layer ``l`` form a ``(fan_in + 1) x fan_out`` matrix; the extra
row multiplies a constant-1 column appended to the layer input, so biases
need no separate bookkeeping. The loss is the squared Frobenius distance
between one-hot labels and softmax outputs, divided by the sample count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .schema import NUM_DAYS, NUM_HOURS, NUM_SEVERITIES, VOCABULARIES
from .selection import Tier

DEFAULT_HIDDEN = (128, 64)


@dataclass
class ModelParams:
    layers: list[np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.layers])

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].shape[0] - 1] + [w.shape[1] for w in self.layers]


def init_model(layer_widths: Sequence[int], seed: int) -> ModelParams:
    widths = list(layer_widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError("need at least input and output widths, all positive")
    if widths[-1] != NUM_SEVERITIES:
        raise ValueError(f"output width must be {NUM_SEVERITIES}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        layers.append(rng.uniform(-bound, bound, (fan_in + 1, fan_out)))
    return ModelParams(layers)


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def forward(model: ModelParams, features: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns the input to every layer (bias column included) and the softmax output."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] + 1 != model.layers[0].shape[0]:
        raise ValueError(f"expected {model.layers[0].shape[0] - 1} features, got shape {x.shape}")
    inputs = []
    for i, w in enumerate(model.layers):
        xb = _with_bias(x)
        inputs.append(xb)
        z = xb @ w
        x = softmax(z) if i == len(model.layers) - 1 else np.tanh(z)
    return inputs, x


def local_loss(outputs: np.ndarray, labels: np.ndarray, eta_n: int | None = None) -> float:
    if outputs.shape != labels.shape:
        raise ValueError("outputs and labels differ in shape")
    eta_n = outputs.shape[0] if eta_n is None else eta_n
    return float(np.sum((labels - outputs) ** 2)) / max(eta_n, 1)


def gradient(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> list[np.ndarray]:
    inputs, out = forward(model, features)
    eta = features.shape[0]
    d_out = 2.0 * (out - labels) / eta
    # softmax Jacobian applied row-wise
    delta = out * (d_out - np.sum(d_out * out, axis=1, keepdims=True))
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = inputs[i].T @ delta
        if i:
            act = inputs[i][:, :-1]  # tanh output of the previous layer
            delta = (delta @ model.layers[i][:-1].T) * (1.0 - act ** 2)
    return grads


# --- Adam ---------------------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    kappa0: float = 0.01
    beta_p: float = 0.9
    beta_q: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta_p < 1 and 0 <= self.beta_q < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0 or self.kappa0 <= 0:
            raise ValueError("epsilon and kappa0 must be positive")


@dataclass
class AdamState:
    p: list[np.ndarray]
    q: list[np.ndarray]
    config: AdamConfig = field(default_factory=AdamConfig)
    tau: int = 0

    @classmethod
    def zeros_like(cls, weights: Sequence[np.ndarray], config: AdamConfig | None = None) -> "AdamState":
        return cls([np.zeros_like(w) for w in weights], [np.zeros_like(w) for w in weights],
                   config or AdamConfig())


def adam_step(state: AdamState, grads: Sequence[np.ndarray],
              weights: Sequence[np.ndarray]) -> tuple[AdamState, list[np.ndarray]]:
    c = state.config
    bp, bq = c.beta_p, c.beta_q
    kappa = c.kappa0 * math.sqrt(1.0 - bq ** (state.tau + 1)) / (1.0 - bp ** (state.tau + 1))
    new_p, new_q, new_w = [], [], []
    for p, q, g, w in zip(state.p, state.q, grads, weights):
        p = bp * p + (1.0 - bp) * g
        q = bq * q + (1.0 - bq) * g * g
        new_p.append(p)
        new_q.append(q)
        new_w.append(w - kappa * p / (np.sqrt(q) + c.epsilon))
    return AdamState(new_p, new_q, c, state.tau + 1), new_w


def local_train(model: ModelParams, features: np.ndarray, labels: np.ndarray, tau_th: int,
                batch_size: int = 32, seed: int = 0,
                adam: AdamConfig | None = None) -> tuple[ModelParams, AdamState]:
    """Runs ``tau_th`` Adam steps from the global model on reshuffled mini-batches."""
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty shard")
    rng = np.random.default_rng(seed)
    weights = [w.copy() for w in model.layers]
    state = AdamState.zeros_like(weights, adam)
    batch_size = max(1, min(batch_size, n))
    order = np.empty(0, dtype=np.int64)
    while state.tau < tau_th:
        if order.size < batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        idx, order = order[:batch_size], order[batch_size:]
        g = gradient(ModelParams(weights), features[idx], labels[idx])
        state, weights = adam_step(state, g, weights)
    return ModelParams(weights), state


def steps_for_epochs(n_samples: int, epochs: int, batch_size: int) -> int:
    return epochs * math.ceil(n_samples / max(1, batch_size))


# --- aggregation ----------------------------------------------------------------

def fed_avg(models: Sequence[ModelParams], etas: Sequence[float]) -> ModelParams:
    if not models:
        raise ValueError("no models to aggregate")
    etas = np.asarray(etas, dtype=float)
    if etas.shape != (len(models),) or np.any(etas <= 0):
        raise ValueError("need one positive sample count per model")
    shapes = [w.shape for w in models[0].layers]
    if any([w.shape for w in m.layers] != shapes for m in models[1:]):
        raise ValueError("model shapes differ")
    if len(models) == 1:
        return models[0].copy()
    total = etas.sum()
    layers = [sum(e * m.layers[i] for e, m in zip(etas, models)) / total for i in range(len(shapes))]
    return ModelParams(layers)


def global_loss(local_losses: Sequence[float], N: int | None = None) -> float:
    if len(local_losses) == 0:
        raise ValueError("no local losses")
    if N is not None and N != len(local_losses):
        raise ValueError("N must equal the number of losses")
    return float(np.mean(local_losses))


def accuracy(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax output matches the label (class index or one-hot)."""
    if features.shape[0] == 0:
        return 0.0
    _, out = forward(model, features)
    y = labels if labels.ndim == 1 else np.argmax(labels, axis=1)
    return float(np.mean(np.argmax(out, axis=1) == y))


# --- data encoding and partitioning ---------------------------------------------

@dataclass
class EncodedData:
    features: np.ndarray  # one-hot encoded rows
    labels: np.ndarray  # one-hot severity
    day: np.ndarray  # 1..7
    location: np.ndarray  # 1..L

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def subset(self, idx) -> "EncodedData":
        return EncodedData(self.features[idx], self.labels[idx], self.day[idx], self.location[idx])


def encode_accidents(records, num_locations: int) -> EncodedData:
    """One-hot encode location, weekday, hour and the three road conditions."""
    blocks = [num_locations, NUM_DAYS, NUM_HOURS] + [len(VOCABULARIES[k]) for k in
                                                     ("light", "weather", "road_surface")]
    offsets = np.concatenate([[0], np.cumsum(blocks)[:-1]])
    n = len(records)
    cols = np.array([[r.location_id - 1, r.day_category - 1, r.hour_category, r.light, r.weather,
                      r.road_surface] for r in records], dtype=np.int64).reshape(n, len(blocks))
    if n and np.any(cols[:, 0] >= num_locations):
        raise ValueError("location_id exceeds num_locations")
    X = np.zeros((n, int(sum(blocks))))
    X[np.arange(n)[:, None], cols + offsets[None, :]] = 1.0
    sev = np.array([r.severity for r in records], dtype=np.int64)
    G = np.eye(NUM_SEVERITIES)[sev] if n else np.zeros((0, NUM_SEVERITIES))
    return EncodedData(X, G, cols[:, 1] + 1, cols[:, 0] + 1)


DEFAULT_TIER_WEIGHTS = {Tier.HIGH: 5.0, Tier.MEDIUM: 2.0, Tier.LOW: 1.0}


def _split_sizes(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer sizes, each at least one, proportional to ``weights`` (largest remainder)."""
    k = weights.size
    rest = total - k
    share = weights / weights.sum() * rest
    sizes = np.floor(share).astype(int)
    short = rest - sizes.sum()
    if short:
        order = np.lexsort((np.arange(k), -(share - sizes)))
        sizes[order[:short]] += 1
    return sizes + 1


def partition_data(labels: np.ndarray, tiers: Sequence[Tier], mode: str = "iid", seed: int = 0,
                   tier_weights: dict | None = None) -> list[np.ndarray]:
    """Assign dataset rows to vehicles; returns one index array per vehicle.

    ``iid``: a random permutation cut into pieces sized by tier weight.
    ``noniid``: the rows are randomly split into one subset per tier (sized by
    the tier's total weight), each subset is sorted by label and cut into
    contiguous pieces for that tier's vehicles, so most shards see only one
    or two severities.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = np.argmax(labels, axis=1)
    n, k = labels.size, len(tiers)
    if n == 0:
        raise ValueError("empty dataset")
    if k > n:
        raise ValueError(f"{k} vehicles but only {n} samples")
    tw = {Tier(t): float(w) for t, w in (tier_weights or DEFAULT_TIER_WEIGHTS).items()}
    weights = np.array([tw[Tier(t)] for t in tiers])
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if mode == "iid":
        bounds = np.concatenate([[0], np.cumsum(_split_sizes(n, weights))])
        return [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(k)]
    if mode != "noniid":
        raise ValueError("mode must be 'iid' or 'noniid'")
    present = [t for t in Tier if any(Tier(x) == t for x in tiers)]
    members = {t: [i for i, x in enumerate(tiers) if Tier(x) == t] for t in present}
    tier_tot = np.array([weights[members[t]].sum() for t in present])
    # each tier needs at least one row per member
    counts = np.array([len(members[t]) for t in present])
    extra = _split_sizes(n - counts.sum() + len(present), tier_tot) - 1
    sub_sizes = counts + extra
    bounds = np.concatenate([[0], np.cumsum(sub_sizes)])
    shards: list[np.ndarray] = [None] * k
    for ti, t in enumerate(present):
        sub = perm[bounds[ti]:bounds[ti + 1]]
        sub = sub[np.argsort(labels[sub], kind="stable")]
        sizes = _split_sizes(sub.size, weights[members[t]])
        cuts = np.concatenate([[0], np.cumsum(sizes)])
        for j, sv in enumerate(members[t]):
            shards[sv] = sub[cuts[j]:cuts[j + 1]]
    return shards


# --- checkpoints ------------------------------------------------------------------

def save_model(model: ModelParams, path) -> None:
    """Text checkpoint: layer count, then per layer ``rows cols`` and row-major weights."""
    with open(path, "w") as fh:
        fh.write(f"{len(model.layers)}\n")
        for w in model.layers:
            fh.write(f"{w.shape[0]} {w.shape[1]}\n")
            fh.write(" ".join(repr(float(x)) for x in w.ravel()) + "\n")


def load_model(path) -> ModelParams:
    with open(path) as fh:
        count = int(fh.readline())
        layers = []
        for _ in range(count):
            r, c = map(int, fh.readline().split())
            layers.append(np.array([float(x) for x in fh.readline().split()]).reshape(r, c))
    return ModelParams(layers)
