"""Perception classifiers with hand-written gradients, abduction strategies,
inconsistency minimisation (Rand/MaxP/MinD/Avg) and TL-risk minimisation."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .datagen import TrainingView, make_rng
from .kb import CandidateSet, KnowledgeBase
from .probmatrix import ProbMatrix

FLOOR = 1e-12
METHODS = ("rand", "maxp", "mind", "avg", "tl")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# classifier


class Classifier:
    """Linear softmax model or a one-hidden-layer MLP mapping R^d -> R^c."""

    def __init__(
        self,
        dim: int,
        num_classes: int,
        arch: str = "linear",
        hidden: int = 64,
        activation: str = "relu",
        seed: int = 0,
        init_scale: float | None = None,
    ):
        if arch not in ("linear", "mlp"):
            raise ValueError(f"unknown architecture {arch!r}")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.dim, self.num_classes = dim, num_classes
        self.arch, self.hidden, self.activation = arch, hidden, activation
        rng = make_rng(seed, 7)
        # default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases;
        # init_scale=s switches to N(0, s^2) weights with zero biases (s=0: all zeros)
        shapes = {"W": (dim, num_classes), "b": (num_classes,)} if arch == "linear" else {
            "W1": (dim, hidden), "b1": (hidden,), "W2": (hidden, num_classes), "b2": (num_classes,)
        }
        fan_in = {"W": dim, "b": dim, "W1": dim, "b1": dim, "W2": hidden, "b2": hidden}
        self.params = {}
        for name, shape in shapes.items():
            if init_scale is None:
                bound = 1.0 / np.sqrt(fan_in[name])
                self.params[name] = rng.uniform(-bound, bound, size=shape)
            elif name.startswith("W"):
                self.params[name] = init_scale * rng.standard_normal(shape)
            else:
                self.params[name] = np.zeros(shape)

    @classmethod
    def random(cls, dim: int, num_classes: int, rng: np.random.Generator, scale: float = 1.0) -> "Classifier":
        """Linear classifier with i.i.d. N(0, scale^2) weights and biases."""
        h = cls(dim, num_classes)
        h.params["W"] = scale * rng.standard_normal((dim, num_classes))
        h.params["b"] = scale * rng.standard_normal(num_classes)
        return h

    def copy(self) -> "Classifier":
        h = object.__new__(Classifier)
        h.__dict__.update(self.__dict__)
        h.params = {k: v.copy() for k, v in self.params.items()}
        return h

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input")
        p = self.params
        if self.arch == "linear":
            return x @ p["W"] + p["b"], (x,)
        pre = x @ p["W1"] + p["b1"]
        act = np.maximum(pre, 0.0) if self.activation == "relu" else np.tanh(pre)
        return act @ p["W2"] + p["b2"], (x, pre, act)

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        if self.arch == "linear":
            (x,) = cache
            return {"W": x.T @ dlogits, "b": dlogits.sum(axis=0)}
        x, pre, act = cache
        dact = dlogits @ p["W2"].T
        dpre = dact * (pre > 0) if self.activation == "relu" else dact * (1.0 - act**2)
        return {
            "W1": x.T @ dpre,
            "b1": dpre.sum(axis=0),
            "W2": act.T @ dlogits,
            "b2": dlogits.sum(axis=0),
        }

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def probs(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return predict_from_probs(self.probs(x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_from_probs(g: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest class index
    return np.argmax(g, axis=-1)


def forward(h: Classifier, x: np.ndarray) -> np.ndarray:
    return h.logits(x)


def predict(h: Classifier, x: np.ndarray) -> np.ndarray:
    return h.predict(x)


def _softmax_backward(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    return g * (dg - np.sum(dg * g, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# losses
#
# Each *_grad function returns (mean loss, dL/dlogits) for a batch.


def mixture_nll_grad(g: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss -log(sum_j weights_ij g_ij), floored, averaged over rows.

    One-hot weights give cross-entropy; columns of Q~ give the TL loss.
    """
    q = np.sum(weights * g, axis=1)
    ok = q > FLOOR
    qc = np.where(ok, q, FLOOR)
    loss = -np.log(qc)
    dg = np.where(ok[:, None], -weights / qc[:, None], 0.0)
    n = len(g)
    return float(loss.mean()), _softmax_backward(g, dg) / n


def soft_ce_grad(g: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss -sum_j targets_ij log g_ij (each log floored), averaged over rows."""
    ok = g > FLOOR
    gc = np.where(ok, g, FLOOR)
    loss = -np.sum(targets * np.log(gc), axis=1)
    dg = np.where(ok, -targets / gc, 0.0)
    n = len(g)
    return float(loss.mean()), _softmax_backward(g, dg) / n


def ce_loss(g: np.ndarray, y: int) -> float:
    """-log g_y with g_y floored at 1e-12."""
    return float(-np.log(max(float(g[y]), FLOOR)))


def seq_loss(h: Classifier, X: np.ndarray, Y) -> float:
    """Mean cross-entropy of a label sequence over positions."""
    g = h.probs(X)
    return float(np.mean([ce_loss(g[k], y) for k, y in enumerate(Y)]))


def tl_loss(h: Classifier, x: np.ndarray, column: int, Q: ProbMatrix | np.ndarray) -> float:
    """-log(Q~[:, column] . g(x)), floored."""
    Qf = Q.as_float() if isinstance(Q, ProbMatrix) else np.asarray(Q, dtype=float)
    g = h.probs(np.atleast_2d(x))[0]
    return float(-np.log(max(float(Qf[:, column] @ g), FLOOR)))


def loss_and_grad(h: Classifier, x: np.ndarray, kind: str, target) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean loss and parameter gradients.

    kind: ``ce`` (target: int labels), ``soft`` (target: (n, c) label
    distributions), ``tl`` (target: (Qf, columns)).
    """
    logits, cache = h.forward(x)
    g = softmax(logits)
    if kind == "ce":
        loss, dz = mixture_nll_grad(g, np.eye(h.num_classes)[np.asarray(target)])
    elif kind == "soft":
        loss, dz = soft_ce_grad(g, np.asarray(target, dtype=float))
    elif kind == "tl":
        Qf, cols = target
        loss, dz = mixture_nll_grad(g, Qf[:, cols].T)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return loss, h.backward(cache, dz)


# ---------------------------------------------------------------------------
# abduction


def abduce(strategy: str, S: CandidateSet | np.ndarray, probs: np.ndarray, preds, rng=None) -> tuple[int, ...]:
    """Pick one candidate for a single sequence.

    maxp: largest sum of log-probabilities; mind: smallest Hamming distance to
    ``preds``; rand: uniform. Ties go to the lexicographically first candidate.
    """
    cands = S.as_array() if isinstance(S, CandidateSet) else np.asarray(S)
    idx = abduce_batch(strategy, cands, np.asarray(probs)[None], np.asarray(preds)[None], rng)[0]
    return tuple(int(v) for v in cands[idx])


def abduce_batch(strategy: str, cands: np.ndarray, probs: np.ndarray, preds: np.ndarray, rng=None) -> np.ndarray:
    """Vectorised :func:`abduce` for n sequences of one concept.

    cands: (r, m) sorted candidates; probs: (n, m, c); preds: (n, m).
    Returns candidate indices, shape (n,).
    """
    n, m = preds.shape
    r = len(cands)
    if r == 1:
        return np.zeros(n, dtype=np.int64)
    if strategy == "rand":
        if rng is None:
            raise ValueError("rand abduction needs an rng")
        return rng.integers(r, size=n)
    if strategy == "maxp":
        logp = np.log(np.maximum(probs, FLOOR))
        score = np.zeros((n, r))
        for k in range(m):
            score += logp[:, k, :][:, cands[:, k]]
        return np.argmax(score, axis=1)
    if strategy == "mind":
        dist = np.zeros((n, r), dtype=np.int64)
        for k in range(m):
            dist += preds[:, k, None] != cands[None, :, k]
        return np.argmin(dist, axis=1)
    raise ValueError(f"unknown abduction strategy {strategy!r}")


def candidate_marginals(cs: CandidateSet, num_classes: int) -> np.ndarray:
    """(m, c) per-position label distribution over equiprobable candidates."""
    arr = cs.as_array()
    out = np.zeros((cs.arity, num_classes))
    for k in range(cs.arity):
        out[k] = np.bincount(arr[:, k], minlength=num_classes)
    return out / len(cs)


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: Adam) -> Adam:
    state.step(params, grads)
    return state


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    method: str = "tl"
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    arch: str = "linear"
    hidden: int = 64
    activation: str = "relu"
    init_scale: float | None = None

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs and batch_size must be >= 1, learning_rate >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class TrainReport:
    method: str
    seed: int
    epochs: int
    final_accuracy: float
    perm_max_accuracy: float
    loss_curve: list[float]
    wall_ms: int
    config: dict = field(default_factory=dict)

    def to_json(self, timing: bool = True) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "epochs": self.epochs,
            "final_accuracy": self.final_accuracy,
            "perm_max_accuracy": self.perm_max_accuracy,
            "loss_curve": self.loss_curve,
            "wall_ms": self.wall_ms if timing else 0,
            "config": self.config,
        }


def _require_view(view):
    if not isinstance(view, TrainingView):
        raise TypeError("learners take a TrainingView (labels hidden); call dataset.training_view()")


def _minibatch_pass(h, opt, x, kind, target, batch_size, rng) -> float:
    n = len(x)
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if kind == "tl":
            Qf, cols = target
            batch_target = (Qf, cols[idx])
        else:
            batch_target = target[idx]
        loss, grads = loss_and_grad(h, x[idx], kind, batch_target)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite {kind} loss")
        opt.step(h.params, grads)
        total += loss * len(idx)
    return total / n


def abduce_view(h: Classifier, view: TrainingView, strategy: str, rng) -> tuple[np.ndarray, np.ndarray]:
    """Instances and abduced labels for every record (one outer step of the
    inconsistency-minimisation loop)."""
    xs, ys = [], []
    kb = view.kb
    for cid, (_, X) in view.groups().items():
        cs = kb.candidates(cid)
        cands = cs.as_array()
        n, m, d = X.shape
        flat = X.reshape(n * m, d)
        g = h.probs(flat).reshape(n, m, -1)
        pick = abduce_batch(strategy, cands, g, predict_from_probs(g), rng)
        xs.append(flat)
        ys.append(cands[pick].reshape(-1))
    return np.concatenate(xs), np.concatenate(ys)


def _avg_targets(view: TrainingView) -> tuple[np.ndarray, np.ndarray]:
    xs, ts = [], []
    kb = view.kb
    for cid, (_, X) in view.groups().items():
        marg = candidate_marginals(kb.candidates(cid), kb.num_classes)
        n, m, d = X.shape
        xs.append(X.reshape(n * m, d))
        ts.append(np.tile(marg, (n, 1)))
    return np.concatenate(xs), np.concatenate(ts)


def tl_pairs(view: TrainingView, Q: ProbMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Expand each sequence into (instance, target-location column) pairs."""
    xs, cols = [], []
    Qf = Q.as_float()
    for cid, (_, X) in view.groups().items():
        n, m, d = X.shape
        col = np.array([Q.column_index(cid, k) for k in range(m)])
        for k, o in enumerate(col):
            if not np.any(Qf[:, o] > 0):
                raise TrainingError(f"column ({cid}, {k}) of the probability matrix is all zero")
        xs.append(X.reshape(n * m, d))
        cols.append(np.tile(col, n))
    return np.concatenate(xs), np.concatenate(cols)


def nesy_epoch(h: Classifier, view: TrainingView, strategy: str, opt: Adam, cfg: TrainConfig, rng) -> float:
    """One outer iteration: re-abduce labels with the current model, then one
    minibatch pass over the instance/label pairs."""
    _require_view(view)
    if strategy == "avg":
        x, t = _avg_targets(view)
        return _minibatch_pass(h, opt, x, "soft", t, cfg.batch_size, rng)
    x, y = abduce_view(h, view, strategy, rng)
    return _minibatch_pass(h, opt, x, "ce", y, cfg.batch_size, rng)


def tl_epoch(h: Classifier, view: TrainingView, Q: ProbMatrix, opt: Adam, cfg: TrainConfig, rng, pairs=None) -> float:
    _require_view(view)
    x, cols = pairs if pairs is not None else tl_pairs(view, Q)
    return _minibatch_pass(h, opt, x, "tl", (Q.as_float(), cols), cfg.batch_size, rng)


def supervised_epoch(h: Classifier, x: np.ndarray, y: np.ndarray, opt: Adam, cfg: TrainConfig, rng) -> float:
    """Plain cross-entropy pass; reference for the TL identity reduction."""
    return _minibatch_pass(h, opt, x, "ce", np.asarray(y), cfg.batch_size, rng)


def make_classifier(view: TrainingView, cfg: TrainConfig) -> Classifier:
    d = view.features[0].shape[1]
    return Classifier(d, view.kb.num_classes, cfg.arch, cfg.hidden, cfg.activation, seed=cfg.seed, init_scale=cfg.init_scale)


def train(view: TrainingView, cfg: TrainConfig, Q: ProbMatrix | None = None) -> tuple[Classifier, list[float]]:
    """Train a fresh classifier with ``cfg.method``; TL needs ``Q``."""
    _require_view(view)
    h = make_classifier(view, cfg)
    opt = Adam(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)
    rng = make_rng(cfg.seed, 11)
    losses = []
    if cfg.method == "tl":
        if Q is None:
            raise ValueError("TL training needs the probability matrix")
        pairs = tl_pairs(view, Q)
        for _ in range(cfg.epochs):
            losses.append(tl_epoch(h, view, Q, opt, cfg, rng, pairs))
    else:
        for _ in range(cfg.epochs):
            losses.append(nesy_epoch(h, view, cfg.method, opt, cfg, rng))
    return h, losses


# ---------------------------------------------------------------------------
# checks and evaluation


def grad_check(h: Classifier, loss_fn: Callable[[Classifier], tuple[float, dict]], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must be in [1e-7, 1e-3]")
    _, analytic = loss_fn(h)
    worst = 0.0
    for name, p in h.params.items():
        a = analytic[name]
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + epsilon
            up = loss_fn(h)[0]
            p[i] = old - epsilon
            down = loss_fn(h)[0]
            p[i] = old
            num = (up - down) / (2 * epsilon)
            err = abs(a[i] - num) / (abs(a[i]) + abs(num) + 1e-12)
            worst = max(worst, err)
    return worst


def permutation_max_accuracy(pred: np.ndarray, y: np.ndarray, num_classes: int) -> float:
    """Best accuracy over relabellings of the predictions (exact assignment)."""
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (pred, y), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return float(conf[rows, cols].sum() / len(y))


def evaluate(h: Classifier, x: np.ndarray, y: np.ndarray) -> dict[str, float]:
    pred = h.predict(x)
    y = np.asarray(y)
    return {
        "accuracy": float(np.mean(pred == y)),
        "perm_max_accuracy": permutation_max_accuracy(pred, y, h.num_classes),
    }


def timed_train(view: TrainingView, cfg: TrainConfig, Q, x_test, y_test) -> tuple[Classifier, TrainReport]:
    t0 = time.perf_counter()
    h, losses = train(view, cfg, Q)
    ev = evaluate(h, x_test, y_test)
    wall = int(round((time.perf_counter() - t0) * 1000))
    return h, TrainReport(
        cfg.method, cfg.seed, cfg.epochs, ev["accuracy"], ev["perm_max_accuracy"], losses, wall, cfg.to_json()
    )
