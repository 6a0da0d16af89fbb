"""Task heads, training losses and evaluation metrics for the five tasks.

Precoders travel as 2*n_t reals, (re, im) interleaved per antenna, the same
layout the dataset uses.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, EvaluationError
from .instructions import TaskSpec
from .layers import Linear
from .numerics import Tensor, cross_entropy, exp, from_interleaved, getitem, log_softmax, mean, tsum

log = logging.getLogger(__name__)

FOCAL_GAMMA = 2.0

METRIC_KINDS = ("cdf90_m", "accuracy", "sgcs", "top1", "rmse_db")
_UNIT_INTERVAL = ("accuracy", "sgcs", "top1")


class TaskHead(Linear):
    """A single affine layer from the backbone feature to the task output."""

    def __init__(self, spec: TaskSpec, d_model: int, gen: np.random.Generator, dtype=np.float32):
        super().__init__(d_model, spec.out_dim, gen, dtype, std=0.02, name=f"head.{spec.task_id}")
        self.spec = spec


# -- losses ---------------------------------------------------------------------

def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return mean(diff * diff)


def sgcs_loss(pred: Tensor, label) -> Tensor:
    """Mean of 1 - |p^H w|^2 / (|p|^2 |w|^2); ``pred`` is (B, 2 n_t) interleaved, ``label`` complex (B, n_t).

    A row with zero predicted norm scores SGCS 0 (loss 1) instead of NaN.
    """
    w = np.asarray(label)
    if pred.ndim != 2 or w.ndim != 2 or pred.shape[1] != 2 * w.shape[1] or pred.shape[0] != w.shape[0]:
        raise DimensionError(f"sgcs: prediction {pred.shape} vs label {w.shape}")
    dt = pred.dtype
    wr, wi = w.real.astype(dt), w.imag.astype(dt)
    pr, pi = pred[:, 0::2], pred[:, 1::2]
    re = tsum(pr * wr + pi * wi, axis=1)
    im = tsum(pr * wi - pi * wr, axis=1)
    num = re * re + im * im
    pn = tsum(pred * pred, axis=1)
    wn = np.sum(np.abs(w) ** 2, axis=1).astype(dt)
    zero = pn.data == 0
    if np.any(zero):
        log.debug("sgcs loss: %d zero-norm predictions scored as SGCS 0", int(zero.sum()))
        # num is exactly 0 on those rows, so a unit denominator gives SGCS 0
        pn = pn + zero.astype(dt)
    return 1.0 - mean(num / (pn * wn))


def focal_loss(logits: Tensor, targets, gamma: float = FOCAL_GAMMA) -> Tensor:
    """Mean of -(1 - p_t)^gamma log p_t; gamma = 0 is plain cross-entropy."""
    targets = np.asarray(targets, dtype=np.int64)
    if gamma == 0:
        return cross_entropy(logits, targets)
    logp_t = getitem(log_softmax(logits), (np.arange(len(targets)), targets))
    weight = (1.0 - exp(logp_t)) ** gamma
    return -mean(weight * logp_t)


def task_loss(spec: TaskSpec, pred: Tensor, target) -> Tensor:
    """Dispatch on the task's loss kind; targets are already in training units."""
    kind = spec.loss
    if kind == "mse":
        return mse_loss(pred, target)
    if kind == "cross_entropy":
        return cross_entropy(pred, target)
    if kind == "sgcs":
        return sgcs_loss(pred, target)
    if kind == "focal":
        return focal_loss(pred, target)
    raise ValueError(f"unknown loss kind {kind!r}")


# -- metrics --------------------------------------------------------------------

def sgcs(p, w) -> np.ndarray:
    """Row-wise SGCS of complex vectors; zero rows score 0."""
    p = np.atleast_2d(np.asarray(p, dtype=np.complex128))
    w = np.atleast_2d(np.asarray(w, dtype=np.complex128))
    num = np.abs(np.sum(p.conj() * w, axis=1)) ** 2
    den = np.sum(np.abs(p) ** 2, axis=1) * np.sum(np.abs(w) ** 2, axis=1)
    out = np.zeros(len(num))
    ok = den > 0
    out[ok] = np.minimum(num[ok] / den[ok], 1.0)
    return out


def cdf90(errors) -> float:
    """Order statistic at index ceil(0.9 N) - 1 of the ascending errors."""
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise EvaluationError("CDF90 of an empty error set")
    return float(e[(9 * e.size + 9) // 10 - 1])


def accuracy(logits, labels) -> float:
    logits = np.asarray(logits)
    if len(logits) == 0:
        raise EvaluationError("accuracy of an empty set")
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, np.float64).ravel(), np.asarray(target, np.float64).ravel()
    if pred.size == 0:
        raise EvaluationError("RMSE of an empty set")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


@dataclass(frozen=True)
class MetricReport:
    task_id: str
    metric: str
    value: float
    n_samples: int
    config: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.metric not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.metric!r}")
        v = self.value
        if not np.isfinite(v) or v < 0 or (self.metric in _UNIT_INTERVAL and v > 1):
            raise EvaluationError(f"{self.metric} value {v} out of range")

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_task(spec: TaskSpec, pred: np.ndarray, labels: dict, config: str = "", seed: int = 0) -> MetricReport:
    """Metric for one task from raw head outputs.

    ``labels`` holds what the conversion needs: ``position`` (meters) and
    ``side_length`` for positioning, ``los``, ``precoder``, ``beam_index``,
    and ``path_loss_db`` with ``pl_mean`` / ``pl_std`` for path loss.
    """
    pred = np.asarray(pred, dtype=np.float64)
    n = len(pred)
    if n == 0:
        raise EvaluationError(f"no samples to evaluate for {spec.task_id}")
    kind = spec.metric
    if kind == "cdf90_m":
        err = np.linalg.norm(pred * labels["side_length"] - labels["position"], axis=1)
        value = cdf90(err)
    elif kind == "accuracy":
        value = accuracy(pred, labels["los"].astype(np.int64))
    elif kind == "sgcs":
        value = float(np.mean(sgcs(from_interleaved(pred), labels["precoder"])))
    elif kind == "top1":
        value = accuracy(pred, labels["beam_index"])
    elif kind == "rmse_db":
        db = pred[:, 0] * labels["pl_std"] + labels["pl_mean"]
        value = rmse(db, labels["path_loss_db"])
    else:
        raise ValueError(f"unknown metric kind {kind!r}")
    return MetricReport(spec.task_id, kind, value, n, config, seed)


def random_sgcs_expectation(n_t: int) -> float:
    """E[SGCS] between a fixed unit vector and a uniformly random one in C^n_t."""
    return 1.0 / n_t
