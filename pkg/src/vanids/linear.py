"""Multinomial logistic regression fit by limited-memory quasi-Newton descent.

Used as the stacking meta-learner. Binary problems run through the same
softmax formulation as multiclass ones so stacking has a single code path.
The solver keeps 10 curvature pairs and backtracks along an Armijo line
search; the L2 penalty applies to weights only, never the bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class SolveConfig:
    max_iter: int = 1000
    tolerance: float = 1e-6
    l2_penalty: float = 1.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be non-negative")

    def to_dict(self) -> dict:
        return {"max_iter": self.max_iter, "tolerance": self.tolerance,
                "l2_penalty": self.l2_penalty}

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        return cls(**d)


@dataclass
class LogisticModel:
    weights: np.ndarray  # (n_classes, d)
    bias: np.ndarray  # (n_classes,)
    n_iter_used: int = 0
    converged: bool = False

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "n_iter_used": self.n_iter_used,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            bias=np.asarray(d["bias"], dtype=np.float64),
            n_iter_used=int(d["n_iter_used"]),
            converged=bool(d["converged"]),
        )


def objective_and_gradient(
    theta: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """L2-regularized multinomial cross-entropy (summed over rows) and its
    gradient, both over the packed parameter vector [W.ravel(), b]."""
    n, d = X.shape
    k = Y.shape[1]
    W = theta[: k * d].reshape(k, d)
    b = theta[k * d :]
    margins = X @ W.T + b
    lse = logsumexp(margins, axis=1)
    loss = float(lse.sum() - (margins * Y).sum() + 0.5 * l2 * (W**2).sum())
    P = np.exp(margins - lse[:, None])
    delta = P - Y
    grad_w = delta.T @ X + l2 * W
    grad_b = delta.sum(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


def _lbfgs_direction(grad, s_list, y_list):
    """Two-loop recursion with implicit H0 = gamma * I."""
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / (y @ s)
        beta = rho * (y @ q)
        q += (a - beta) * s
    return -q


def fit_logistic(X: np.ndarray, y: np.ndarray, config: SolveConfig | None = None) -> LogisticModel:
    """Minimize the regularized cross-entropy from a zero initialization.

    Stops when the gradient max-norm drops below the tolerance (converged) or
    max_iter quasi-Newton steps were taken. The objective never increases
    across accepted steps.
    """
    config = config or SolveConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree on the number of rows")
    if X.shape[0] < 2:
        raise ValueError("need at least two rows")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least two classes present")
    k = int(y.max()) + 1
    n, d = X.shape
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1.0

    theta = np.zeros(k * d + k)
    loss, grad = objective_and_gradient(theta, X, Y, config.l2_penalty)

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    n_iter = 0
    converged = np.abs(grad).max() < config.tolerance
    while not converged and n_iter < config.max_iter:
        direction = _lbfgs_direction(grad, s_list, y_list)
        slope = grad @ direction
        if slope >= 0:  # curvature information went stale
            s_list.clear()
            y_list.clear()
            direction = -grad
            slope = grad @ direction

        step = 1.0
        while step > 1e-14:
            cand = theta + step * direction
            new_loss, new_grad = objective_and_gradient(cand, X, Y, config.l2_penalty)
            if new_loss <= loss + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break  # no acceptable step along this direction

        s = cand - theta
        yv = new_grad - grad
        if s @ yv > 1e-10:
            s_list.append(s)
            y_list.append(yv)
            if len(s_list) > 10:
                s_list.pop(0)
                y_list.pop(0)
        theta, loss, grad = cand, new_loss, new_grad
        n_iter += 1
        converged = np.abs(grad).max() < config.tolerance

    W = theta[: k * d].reshape(k, d)
    b = theta[k * d :]
    return LogisticModel(weights=W, bias=b, n_iter_used=n_iter, converged=bool(converged))


def predict_proba(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    """softmax(XW^T + b); rows sum to 1 within 1e-12."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.weights.shape[1]:
        raise ValueError(
            f"expected {model.weights.shape[1]} features, got {X.shape[1]}"
        )
    margins = X @ model.weights.T + model.bias
    margins -= margins.max(axis=1, keepdims=True)
    e = np.exp(margins)
    return e / e.sum(axis=1, keepdims=True)


def predict(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    return predict_proba(model, X).argmax(axis=1)
