"""Quality-prediction objectives and metrics.

Training side: a differentiable Pearson-correlation loss and a
soft-rank Spearman loss (pairwise sigmoid comparisons at temperature tau),
mixed by a weight alpha.  Evaluation side: hard SRCC over average-tie
ranks, raw PLCC, and PLCC after remapping predictions through a fitted
4-parameter logistic curve.

All losses map into [0, 1] and are differentiable in the predictions; the
evaluation metrics are plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, concat, mul, reshape, sigmoid, sqrt, sub, tmean, tsum

__all__ = [
    "DegenerateInputError",
    "FitConvergenceError",
    "Logistic4",
    "plcc",
    "srcc",
    "soft_rank",
    "plcc_loss",
    "srcc_loss",
    "total_loss",
    "fit_logistic4",
    "logistic4_apply",
    "rank_average_ties",
]


class DegenerateInputError(ValueError):
    """Correlation is undefined (constant vector, mismatched lengths...)."""


class FitConvergenceError(RuntimeError):
    """Logistic fit hit the iteration cap; carries the best iterate."""

    def __init__(self, message: str, best: "Logistic4", mapped_plcc: float):
        super().__init__(message)
        self.best = best
        self.mapped_plcc = mapped_plcc


def _check_pair(x: np.ndarray, y: np.ndarray, op: str) -> None:
    if x.ndim != 1 or y.ndim != 1:
        raise DegenerateInputError(f"{op} expects 1D vectors, got {x.shape} and {y.shape}")
    if len(x) != len(y):
        raise DegenerateInputError(f"{op} length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise DegenerateInputError(f"{op} needs at least 2 samples, got {len(x)}")


def _is_constant(v: np.ndarray) -> bool:
    return bool(np.ptp(v) == 0.0)


def _pearson_graph(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable Pearson correlation of two 1D tensors."""
    xm = sub(x, tmean(x))
    ym = sub(y, tmean(y))
    num = tsum(mul(xm, ym))
    den = sqrt(mul(tsum(mul(xm, xm)), tsum(mul(ym, ym))))
    return num / den


def plcc(x, y) -> Tensor:
    """Pearson linear correlation coefficient, differentiable in x.

    Raises on constant input, where the correlation is undefined.
    """
    x, y = as_tensor(x), as_tensor(y)
    _check_pair(x.data, y.data, "plcc")
    if _is_constant(x.data):
        raise DegenerateInputError("plcc undefined: first vector is constant")
    if _is_constant(y.data):
        raise DegenerateInputError("plcc undefined: second vector is constant")
    return _pearson_graph(x, y)


def rank_average_ties(v) -> np.ndarray:
    """Ascending ranks 1..n with tied values averaged."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average-tie ranks.

    Equals 1 - 6*sum(d^2)/(n(n^2-1)) on tie-free data.  Not differentiable;
    use ``srcc_loss`` for training.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    _check_pair(x, y, "srcc")
    rx, ry = rank_average_ties(x), rank_average_ties(y)
    if _is_constant(rx):
        raise DegenerateInputError("srcc undefined: first vector is all-tied")
    if _is_constant(ry):
        raise DegenerateInputError("srcc undefined: second vector is all-tied")
    rxm, rym = rx - rx.mean(), ry - ry.mean()
    return float((rxm @ rym) / np.sqrt((rxm @ rxm) * (rym @ rym)))


def soft_rank(s, tau: float) -> Tensor:
    """Differentiable descending ranks from pairwise sigmoid comparisons.

    r_i = 1 + sum_{j != i} sigmoid((s_j - s_i) / tau): the largest score
    gets a rank near 1.  Each r_i lies strictly inside (1, n), and
    sum(r) = n(n+1)/2 exactly by pairwise antisymmetry.
    """
    if tau <= 0:
        raise ValueError(f"soft_rank temperature must be positive, got {tau}")
    s = as_tensor(s)
    if s.ndim != 1:
        raise DegenerateInputError(f"soft_rank expects a 1D vector, got shape {s.shape}")
    n = s.shape[0]
    col = reshape(s, (n, 1))
    row = reshape(s, (1, n))
    pair = sigmoid(sub(row, col) / tau)  # pair[i, j] = sigma((s_j - s_i)/tau)
    return tsum(pair, axis=1) + 0.5  # the j == i term contributes exactly 0.5


def plcc_loss(pred, mos) -> Tensor:
    """(1 - Pearson(pred, mos)) / 2, in [0, 1], differentiable in pred."""
    return (1.0 - plcc(pred, mos)) * 0.5


def srcc_loss(pred, mos, tau: float = 0.1) -> Tensor:
    """Soft-rank Spearman loss in [0, 1], differentiable in pred.

    Predictions are normalized to unit standard deviation before the
    pairwise comparisons so tau means the same thing at any score scale;
    targets use exact descending average-tie ranks.
    """
    pred, mos_t = as_tensor(pred), as_tensor(mos)
    _check_pair(pred.data, mos_t.data, "srcc_loss")
    if _is_constant(mos_t.data):
        raise DegenerateInputError("srcc_loss undefined: targets are all tied")
    if _is_constant(pred.data):
        raise DegenerateInputError("srcc_loss undefined: predictions are constant")
    centered = sub(pred, tmean(pred))
    std = sqrt(tmean(mul(centered, centered)))
    soft = soft_rank(centered / std, tau)
    n = len(mos_t.data)
    hard_desc = (n + 1.0) - rank_average_ties(mos_t.data)
    return (1.0 - _pearson_graph(soft, Tensor(hard_desc))) * 0.5


def total_loss(pred, mos, alpha: float = 0.5, tau: float = 0.1) -> Tensor:
    """alpha * plcc_loss + (1 - alpha) * srcc_loss."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return plcc_loss(pred, mos)
    if alpha == 0.0:
        return srcc_loss(pred, mos, tau)
    return alpha * plcc_loss(pred, mos) + (1.0 - alpha) * srcc_loss(pred, mos, tau)


# -- 4-parameter logistic remapping ------------------------------------------


@dataclass(frozen=True)
class Logistic4:
    """f(x) = (b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2."""

    b1: float
    b2: float
    b3: float
    b4: float

    def __post_init__(self):
        if self.b4 == 0.0:
            raise ValueError("logistic scale b4 must be nonzero")


def _stable_expit(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def logistic4_apply(params: Logistic4, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = _stable_expit((x - params.b3) / abs(params.b4))
    return (params.b1 - params.b2) * s + params.b2


def _pearson_np(x: np.ndarray, y: np.ndarray) -> float:
    xm, ym = x - x.mean(), y - y.mean()
    den = np.sqrt((xm @ xm) * (ym @ ym))
    if den == 0.0:
        raise DegenerateInputError("correlation undefined on constant vector")
    return float((xm @ ym) / den)


def _l4_jacobian(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4 = b
    a = abs(b4)
    u = (x - b3) / a
    s = _stable_expit(u)
    ds = s * (1.0 - s)
    J = np.empty((len(x), 4))
    J[:, 0] = s
    J[:, 1] = 1.0 - s
    J[:, 2] = -(b1 - b2) * ds / a
    J[:, 3] = -(b1 - b2) * ds * u / a * np.sign(b4)
    return J


def fit_logistic4(
    pred,
    mos,
    max_iter: int = 500,
    ftol: float = 1e-13,
    gtol: float = 1e-10,
) -> tuple[Logistic4, float]:
    """Least-squares 4-parameter logistic fit of mos against pred.

    Damped Gauss-Newton (Levenberg-style lambda adaptation) starting from
    b1 = max(mos), b2 = min(mos), b3 = mean(pred), b4 = std(pred).  Returns
    the fitted curve (b4 canonicalized positive) and the Pearson correlation
    between the remapped predictions and mos.  Raises FitConvergenceError
    carrying the best iterate if the iteration cap is hit first.
    """
    x = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    y = np.asarray(mos.data if isinstance(mos, Tensor) else mos, dtype=np.float64)
    _check_pair(x, y, "fit_logistic4")
    if len(x) < 5:
        raise DegenerateInputError(f"fit_logistic4 needs >= 5 points, got {len(x)}")
    if _is_constant(x):
        raise DegenerateInputError("fit_logistic4 undefined for constant predictions")

    b = np.array([y.max(), y.min(), x.mean(), x.std()], dtype=np.float64)
    if b[3] == 0.0:  # unreachable given the constant check, but keep b4 legal
        b[3] = 1.0

    def cost_of(beta):
        r = logistic4_apply(Logistic4(*beta), x) - y
        return r, float(r @ r)

    r, cost = cost_of(b)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        J = _l4_jacobian(x, b)
        g = J.T @ r
        if np.abs(g).max() <= gtol:
            converged = True
            break
        H = J.T @ J
        try:
            step = np.linalg.solve(H + lam * np.eye(4), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = b + step
        if trial[3] == 0.0:
            trial[3] = np.finfo(float).tiny
        r_trial, cost_trial = cost_of(trial)
        if cost_trial < cost:
            drop = cost - cost_trial
            b, r, cost = trial, r_trial, cost_trial
            lam = max(lam * 0.3, 1e-12)
            if drop <= ftol * max(cost, 1.0) or cost <= 1e-22 * len(x):
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e14:
                converged = True  # damping exhausted: local minimum
                break

    fitted = Logistic4(b[0], b[1], b[2], abs(b[3]))
    mapped = _pearson_np(logistic4_apply(fitted, x), y)
    if not converged:
        raise FitConvergenceError(
            f"logistic fit did not converge in {max_iter} iterations", fitted, mapped
        )
    return fitted, mapped
