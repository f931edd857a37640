"""Implicit-feedback matrix factorization: confidence, loss, user solve, item gradient.

The item matrix is stored ``M x F`` (one row per item) everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.sparse as sp


class SingularSystemError(np.linalg.LinAlgError):
    """The per-user normal equations have no unique solution."""


@dataclass(frozen=True)
class HyperParams:
    n_factors: int = 5
    reg: float = 1e-6
    learning_rate: float = 1e-3
    confidence_alpha: float = 40.0
    epochs: int = 20
    inner_steps: int = 20
    epsilon: float = 2.5
    updates_per_epoch: int = 100

    def __post_init__(self):
        if self.n_factors < 1:
            raise ValueError("n_factors must be >= 1")
        if self.reg < 0:
            raise ValueError("reg must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.confidence_alpha < 0:
            raise ValueError("confidence_alpha must be non-negative")
        if self.epochs < 0 or self.inner_steps < 1:
            raise ValueError("epochs must be >= 0 and inner_steps >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.updates_per_epoch < 1:
            raise ValueError("updates_per_epoch (k) must be >= 1")

    def replace(self, **changes) -> HyperParams:
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def confidence(r, alpha: float):
    """``c_ui = 1 + alpha * r_ui``; works elementwise on arrays."""
    return 1 + alpha * r


def _as_items(user_row, n_items: int) -> np.ndarray:
    """Accept a dense 0/1 vector, a sparse row, or an index array of interacted items."""
    if sp.issparse(user_row):
        return np.asarray(user_row.tocoo().col if user_row.shape[0] == 1 else user_row.tocoo().row)
    row = np.asarray(user_row)
    if row.dtype == bool or (row.ndim == 1 and len(row) == n_items and row.dtype.kind == "f"):
        return np.flatnonzero(row)
    return row.astype(np.int64)


def _check_solvable(A: np.ndarray) -> None:
    cond = np.linalg.cond(A)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1e14):
        raise SingularSystemError("user normal equations are singular; use reg > 0")


def update_user_embedding(V: np.ndarray, user_row, hp: HyperParams) -> np.ndarray:
    """Closed-form ``x_u = (V^T C^u V + reg I)^-1 V^T C^u p(u)``.

    Uses ``V^T C^u V = V^T V + alpha * V_I^T V_I`` over the interacted items ``I``.
    """
    items = _as_items(user_row, V.shape[0])
    if len(items) == 0:
        return np.zeros(V.shape[1])
    alpha = hp.confidence_alpha
    Vi = V[items]
    A = V.T @ V + alpha * (Vi.T @ Vi) + hp.reg * np.eye(V.shape[1])
    b = (1 + alpha) * Vi.sum(axis=0)
    _check_solvable(A)
    return np.linalg.solve(A, b)


def update_user_embeddings(V: np.ndarray, R: sp.csr_matrix, hp: HyperParams) -> np.ndarray:
    """Batched closed-form solve for every row of the binary matrix ``R``."""
    n_items, F = V.shape
    alpha = hp.confidence_alpha
    outer = (V[:, :, None] * V[:, None, :]).reshape(n_items, F * F)
    A = (R @ outer).reshape(-1, F, F) * alpha
    A += V.T @ V + hp.reg * np.eye(F)
    b = (1 + alpha) * (R @ V)
    _check_solvable(A)
    return np.linalg.solve(A, b[:, :, None])[:, :, 0]


def item_gradient(x_u: np.ndarray, V: np.ndarray, user_row, hp: HyperParams) -> np.ndarray:
    """Dense ``M x F`` matrix with rows ``f(u,i) = c_ui (p_ui - x_u.v_i) x_u``."""
    p = np.zeros(V.shape[0])
    p[_as_items(user_row, V.shape[0])] = 1.0
    c = confidence(p, hp.confidence_alpha)
    return (c * (p - V @ x_u))[:, None] * x_u[None, :]


def item_gradient_sum(X: np.ndarray, V: np.ndarray, R: sp.csr_matrix, hp: HyperParams) -> np.ndarray:
    """``sum_u f(u, .)`` over all users without materializing the N x M residuals."""
    alpha = hp.confidence_alpha
    coo = R.tocoo()
    s = np.einsum("nf,nf->n", X[coo.row], V[coo.col])
    # observed pairs: c=(1+alpha), p=1; unobserved: c=1, p=0
    w = sp.csr_matrix(((1 + alpha) * (1 - s) + s, (coo.col, coo.row)), shape=(V.shape[0], X.shape[0]))
    return w @ X - V @ (X.T @ X)


def implicit_loss(X: np.ndarray, V: np.ndarray, ds, hp: HyperParams) -> float:
    """Confidence-weighted squared error over ALL (u, i) pairs plus L2 on X and V."""
    alpha = hp.confidence_alpha
    users, items = ds.users, ds.items
    s = np.einsum("nf,nf->n", X[users], V[items])
    # sum over all pairs of s^2, then correct the observed entries
    all_sq = float(np.sum((X.T @ X) * (V.T @ V)))
    observed = float(np.sum((1 + alpha) * (1 - s) ** 2 - s**2))
    reg = hp.reg * (float(np.sum(X * X)) + float(np.sum(V * V)))
    return all_sq + observed + reg


def score(x_u: np.ndarray, v_i: np.ndarray) -> float:
    if len(x_u) != len(v_i):
        raise ValueError("embedding lengths differ")
    return float(np.dot(x_u, v_i))
