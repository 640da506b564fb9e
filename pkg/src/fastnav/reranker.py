"""Candidate reranker: six trajectory statistics through BN -> FC -> BN -> Tanh -> FC.

Trained with a pairwise cross-entropy loss on (qualified, unqualified)
candidate pairs using plain minibatch SGD with classical momentum. The
backward pass is written out by hand and checked against central finite
differences by :func:`grad_check`.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .signals import SignalTrace

if TYPE_CHECKING:
    from .nav_graph import Episode
    from .search import SearchConfig
    from .signals import Scorer

log = logging.getLogger(__name__)

FEATURE_NAMES = ("sum_logit", "mean_logit", "sum_log_prob", "mean_log_prob", "pm_final", "speaker")
N_FEATURES = len(FEATURE_NAMES)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_VERSION = 1

PARAM_NAMES = (
    "bn1.gamma", "bn1.beta", "fc1.weight", "fc1.bias",
    "bn2.gamma", "bn2.beta", "fc2.weight", "fc2.bias",
)
BUFFER_NAMES = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")


class TrainingError(RuntimeError):
    pass


def extract_features(trace: SignalTrace) -> np.ndarray:
    if not trace.steps:
        raise ValueError("cannot featurize an empty trace (zero-step start candidate)")
    if trace.speaker is None:
        raise ValueError("trace is not a completed trajectory (no speaker score)")
    logits = trace.chosen_logits
    logps = trace.chosen_log_probs
    n = len(logits)
    s_l = sum(logits)
    s_p = sum(logps)
    out = np.array([s_l, s_l / n, s_p, s_p / n, trace.final_pm, trace.speaker], dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite features {out}")
    return out


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-2
    momentum: float = 0.6
    batch: int = 256
    epochs: int = 50


DESK = Hyper()
PUBLISHED = Hyper(lr=5e-5, momentum=0.6, batch=3600, epochs=30)
PROFILES = {"desk": DESK, "paper": PUBLISHED}


@dataclass
class RerankerModel:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    hyper: Hyper = DESK
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> RerankerModel:
        return copy.deepcopy(self)


def init_model(seed: int = 0, hyper: Hyper = DESK) -> RerankerModel:
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(N_FEATURES)
    d = N_FEATURES
    params = {
        "bn1.gamma": np.ones(d),
        "bn1.beta": np.zeros(d),
        "fc1.weight": rng.uniform(-bound, bound, size=(d, d)),
        "fc1.bias": rng.uniform(-bound, bound, size=d),
        "bn2.gamma": np.ones(d),
        "bn2.beta": np.zeros(d),
        "fc2.weight": rng.uniform(-bound, bound, size=(1, d)),
        "fc2.bias": rng.uniform(-bound, bound, size=1),
    }
    buffers = {
        "bn1.running_mean": np.zeros(d),
        "bn1.running_var": np.ones(d),
        "bn2.running_mean": np.zeros(d),
        "bn2.running_var": np.ones(d),
    }
    return RerankerModel(params, buffers, hyper, {k: np.zeros_like(v) for k, v in params.items()})


def _bn_forward(x, gamma, beta, rm, rv, train):
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
    else:
        mu, var = rm, rv
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mu, var)


def _bn_backward(dy, gamma, cache):
    xhat, inv_std, _, _ = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def _forward(model: RerankerModel, x: np.ndarray, train: bool, update_stats: bool):
    p, b = model.params, model.buffers
    h0, c1 = _bn_forward(x, p["bn1.gamma"], p["bn1.beta"], b["bn1.running_mean"], b["bn1.running_var"], train)
    h1 = h0 @ p["fc1.weight"].T + p["fc1.bias"]
    h2, c2 = _bn_forward(h1, p["bn2.gamma"], p["bn2.beta"], b["bn2.running_mean"], b["bn2.running_var"], train)
    h3 = np.tanh(h2)
    out = (h3 @ p["fc2.weight"].T + p["fc2.bias"])[:, 0]
    if train and update_stats:
        n = x.shape[0]
        for name, (_, _, mu, var) in (("bn1", c1), ("bn2", c2)):
            b[f"{name}.running_mean"] = (1 - BN_MOMENTUM) * b[f"{name}.running_mean"] + BN_MOMENTUM * mu
            b[f"{name}.running_var"] = (1 - BN_MOMENTUM) * b[f"{name}.running_var"] + BN_MOMENTUM * var * n / (n - 1)
    return out, (h0, c1, h1, c2, h3)


def _backward(model: RerankerModel, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
    p = model.params
    h0, c1, h1, c2, h3 = cache
    g = {}
    d = dout[:, None]
    g["fc2.weight"] = d.T @ h3
    g["fc2.bias"] = d.sum(axis=0)
    dh3 = d @ p["fc2.weight"]
    dh2 = dh3 * (1.0 - h3**2)
    dh1, g["bn2.gamma"], g["bn2.beta"] = _bn_backward(dh2, p["bn2.gamma"], c2)
    g["fc1.weight"] = dh1.T @ h0
    g["fc1.bias"] = dh1.sum(axis=0)
    dh0 = dh1 @ p["fc1.weight"]
    _, g["bn1.gamma"], g["bn1.beta"] = _bn_backward(dh0, p["bn1.gamma"], c1)
    return g


def forward(model: RerankerModel, batch: Sequence[np.ndarray] | np.ndarray, mode: str = "eval") -> np.ndarray:
    """Score each row of ``batch``. Train mode normalizes by batch statistics and updates running stats."""
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {x.shape[1]}")
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode forward needs at least 2 rows for batch statistics")
        return _forward(model, x, True, True)[0]
    if mode != "eval":
        raise ValueError(f"unknown mode {mode!r}")
    return _forward(model, x, False, False)[0]


# ---------------------------------------------------------------------------
# loss


def pairwise_loss(s1: float, s2: float) -> float:
    """``log(1 + exp(-(s1 - s2)))``, evaluated without overflow."""
    x = s1 - s2
    if x > 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


def pairwise_loss_grad(s1: float, s2: float) -> float:
    """Derivative of :func:`pairwise_loss` in ``s1``; the ``s2`` derivative is its negation."""
    x = s1 - s2
    if x >= 0:
        e = math.exp(-x)
        return -e / (1.0 + e)
    return -1.0 / (1.0 + math.exp(x))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _batch_loss(model, q, u, update_stats):
    n = q.shape[0]
    s, cache = _forward(model, np.vstack([q, u]), True, update_stats)
    diff = s[:n] - s[n:]
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    d1 = -_sigmoid(-diff) / n
    return loss, np.concatenate([d1, -d1]), cache


@dataclass(frozen=True)
class RankPair:
    qualified: np.ndarray
    unqualified: np.ndarray


def _stack(pairs: Sequence[RankPair] | tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        return np.asarray(pairs[0], float), np.asarray(pairs[1], float)
    q = np.array([p.qualified for p in pairs], dtype=float).reshape(-1, N_FEATURES)
    u = np.array([p.unqualified for p in pairs], dtype=float).reshape(-1, N_FEATURES)
    return q, u


def train(
    model: RerankerModel,
    pairs: Sequence[RankPair] | tuple[np.ndarray, np.ndarray],
    hyper: Hyper | None = None,
    seed: int = 0,
) -> tuple[RerankerModel, list[float]]:
    """Minibatch SGD with momentum; returns a trained copy and the per-epoch mean loss."""
    q, u = _stack(pairs)
    n = q.shape[0]
    if n == 0:
        raise ValueError("no training pairs")
    hyper = hyper or model.hyper
    model = model.copy()
    model.hyper = hyper
    for k, v in model.params.items():
        model.velocity.setdefault(k, np.zeros_like(v))
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hyper.batch):
            idx = order[lo : lo + hyper.batch]
            loss, dout, cache = _batch_loss(model, q[idx], u[idx], update_stats=True)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss!r} at epoch {epoch}, batch starting {lo}")
            grads = _backward(model, dout, cache)
            for k, gk in grads.items():
                v = model.velocity[k] = hyper.momentum * model.velocity[k] - hyper.lr * gk
                model.params[k] = model.params[k] + v
            total += loss * len(idx)
        curve.append(total / n)
    return model, curve


def pairwise_accuracy(model: RerankerModel, pairs: Sequence[RankPair] | tuple[np.ndarray, np.ndarray]) -> float:
    q, u = _stack(pairs)
    return float(np.mean(forward(model, q) > forward(model, u)))


# ---------------------------------------------------------------------------
# gradient verification


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float
    max_abs_analytic: dict[str, float] = field(default_factory=dict)
    max_abs_numeric: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.per_param.items() if v > self.tolerance]

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    model: RerankerModel,
    batch: Sequence[RankPair] | tuple[np.ndarray, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare backprop against central differences on every parameter entry.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries whose true gradient is zero (biases cancelled by a following
    batch norm) from dividing rounding noise by rounding noise.
    """
    q, u = _stack(batch)
    if 2 * q.shape[0] < 2:
        raise ValueError("grad_check needs a batch of at least 2 rows")
    model = model.copy()
    _, dout, cache = _batch_loss(model, q, u, update_stats=False)
    analytic = _backward(model, dout, cache)
    per_param, amax, nmax = {}, {}, {}
    for name in PARAM_NAMES:
        theta = model.params[name]
        num = np.zeros_like(theta)
        for ix in np.ndindex(theta.shape):
            old = theta[ix]
            theta[ix] = old + h
            lp = _batch_loss(model, q, u, False)[0]
            theta[ix] = old - h
            lm = _batch_loss(model, q, u, False)[0]
            theta[ix] = old
            num[ix] = (lp - lm) / (2 * h)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        per_param[name] = float(np.max(np.abs(a - num) / denom))
        amax[name] = float(np.max(np.abs(a)))
        nmax[name] = float(np.max(np.abs(num)))
    return GradCheckReport(max(per_param.values()), per_param, tolerance, amax, nmax)


def random_batch(seed: int, n_pairs: int = 8) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n_pairs, N_FEATURES)), rng.normal(size=(n_pairs, N_FEATURES))


# ---------------------------------------------------------------------------
# training data from search


@dataclass(frozen=True)
class CacheRow:
    episode_id: str
    features: np.ndarray
    qualified: bool


def build_training_cache(
    episodes: Iterable[tuple[str, Episode]],
    scorer: Scorer,
    search_config: SearchConfig,
) -> list[CacheRow]:
    """Run explore search per episode and dump its candidate pool with 3 m qualification labels."""
    from dataclasses import replace

    from .search import fast_navigate

    if search_config.strategy != "explore" or search_config.stop != "max_expansions":
        raise ValueError("training cache needs an explore search with a max_expansions budget")
    cfg = replace(search_config, global_fusion=None)
    rows = []
    for eid, ep in episodes:
        result = fast_navigate(ep, scorer, cfg)
        for cand in result.candidates:
            if not cand.trace.steps:
                continue
            rows.append(CacheRow(eid, extract_features(cand.trace), ep.dist_to_goal(cand.endpoint) < ep.success_radius))
    return rows


def make_pairs(rows: Sequence[CacheRow]) -> list[RankPair]:
    by_ep: dict[str, list[CacheRow]] = {}
    for r in rows:
        by_ep.setdefault(r.episode_id, []).append(r)
    pairs = []
    for eid, group in by_ep.items():
        good = [r for r in group if r.qualified]
        bad = [r for r in group if not r.qualified]
        if not good or not bad:
            log.debug("episode %s contributes no pairs (%d qualified, %d unqualified)", eid, len(good), len(bad))
            continue
        pairs.extend(RankPair(g.features, b.features) for g in good for b in bad)
    return pairs


def write_cache_csv(rows: Sequence[CacheRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FEATURE_NAMES, "label", "episode_id"])
        for r in rows:
            w.writerow([*(format(float(x), ".17g") for x in r.features), int(r.qualified), r.episode_id])


def read_cache_csv(path: str | Path) -> list[CacheRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            CacheRow(
                row["episode_id"],
                np.array([float(row[k]) for k in FEATURE_NAMES]),
                row["label"] == "1",
            )
            for row in reader
        ]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: RerankerModel, path: str | Path) -> None:
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "hyper": {"lr": model.hyper.lr, "momentum": model.hyper.momentum,
                  "batch": model.hyper.batch, "epochs": model.hyper.epochs},
        "params": {k: model.params[k].tolist() for k in PARAM_NAMES},
        "buffers": {k: model.buffers[k].tolist() for k in BUFFER_NAMES},
    }
    # json writes floats with repr, which round-trips every double exactly
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> RerankerModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('schema_version')!r}")
    params = {k: np.array(doc["params"][k], dtype=float) for k in PARAM_NAMES}
    buffers = {k: np.array(doc["buffers"][k], dtype=float) for k in BUFFER_NAMES}
    if np.any(buffers["bn1.running_var"] <= 0) or np.any(buffers["bn2.running_var"] <= 0):
        raise ValueError("running variance must be positive")
    hyper = Hyper(**doc["hyper"])
    return RerankerModel(params, buffers, hyper, {k: np.zeros_like(v) for k, v in params.items()})
