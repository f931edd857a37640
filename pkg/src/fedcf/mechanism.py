"""Randomized binary response on item-gradient cells.

Each report picks one cell of the clipped ``M x F`` gradient uniformly at
random and transmits only a sign; the server decodes it as ``+B`` or ``-B``
with ``B = (e^eps + 1) / (e^eps - 1) * M * F``, which makes the decoded
matrix an unbiased estimate of the clipped gradient.

Cells are linearized row-major: ``cell_index = item * F + factor``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

REPORT_STRUCT = struct.Struct("<IB")
REPORT_BYTES = REPORT_STRUCT.size


class ContractError(ValueError):
    """An input violates the mechanism's preconditions."""


@dataclass(frozen=True)
class PerturbedReport:
    """The only thing a client uploads: a cell and a sign. No user identifier."""

    cell_index: int
    sign: bool

    def to_bytes(self) -> bytes:
        return REPORT_STRUCT.pack(self.cell_index, 1 if self.sign else 0)

    @classmethod
    def from_bytes(cls, buf: bytes) -> PerturbedReport:
        cell, sign = REPORT_STRUCT.unpack(buf)
        if sign not in (0, 1):
            raise ContractError(f"invalid sign byte {sign:#04x}")
        return cls(cell, bool(sign))


@dataclass(frozen=True)
class MechanismParams:
    epsilon: float
    n_items: int
    n_factors: int
    k: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_items < 1 or self.n_factors < 1 or self.k < 1:
            raise ContractError("n_items, n_factors and k must be >= 1")

    @property
    def dim(self) -> int:
        return self.n_items * self.n_factors

    @property
    def scale(self) -> float:
        return scale_constant(self)


def clip_to_unit(grad: np.ndarray) -> np.ndarray:
    """Elementwise clamp to ``[-1, 1]``."""
    return np.clip(grad, -1.0, 1.0)


def scale_constant(params: MechanismParams) -> float:
    eps = params.epsilon
    if not eps > 0:
        raise ContractError("epsilon must be positive")
    # (e^eps + 1) / (e^eps - 1) == 1 / tanh(eps / 2), stable for small and large eps
    return params.dim / math.tanh(eps / 2)


def bernoulli_prob(x, eps: float):
    """``Pr[sign = +] = (x (e^eps - 1) + e^eps + 1) / (2 e^eps + 2)``.

    ``Pr[sign = -]`` is ``bernoulli_prob(-x, eps)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1) or np.any(np.isnan(x)):
        raise ContractError("bernoulli_prob needs x in [-1, 1]; clip first")
    # same ratio divided through by e^eps: no overflow, and a sum of
    # nonnegative terms keeps relative error at a few ulps even near 0
    d = math.exp(-eps)
    p = ((1 + x) + (1 - x) * d) / (2 * (1 + d))
    return float(p) if p.ndim == 0 else p


def sample_cells(rng: np.random.Generator, n_items: int, n_factors: int, k: int):
    """Draw ``k`` (item, factor, uniform) triples, with replacement.

    Shared by the dense-gradient path and the simulation fast path so both
    consume a client's generator identically.
    """
    items = rng.integers(0, n_items, size=k)
    factors = rng.integers(0, n_factors, size=k)
    u = rng.random(k)
    return items, factors, u


def perturb_cells(values: np.ndarray, u: np.ndarray, eps: float) -> np.ndarray:
    """Signs for already-clipped cell values given uniforms ``u``.

    ``u`` is compared against the less likely outcome's probability so that
    ``1 - p`` is never formed by cancellation.
    """
    p_pos = bernoulli_prob(values, eps)
    p_neg = bernoulli_prob(-values, eps)
    return np.where(p_pos <= 0.5, u < p_pos, u >= p_neg)


def perturb_k(grad: np.ndarray, params: MechanismParams, rng: np.random.Generator) -> list[PerturbedReport]:
    """``k`` independent reports on the clipped gradient; duplicate cells are possible."""
    clipped = clip_to_unit(grad)
    items, factors, u = sample_cells(rng, params.n_items, params.n_factors, params.k)
    signs = perturb_cells(clipped[items, factors], u, params.epsilon)
    cells = items * params.n_factors + factors
    return [PerturbedReport(int(c), bool(s)) for c, s in zip(cells, signs)]


def perturb_once(clipped: np.ndarray, params: MechanismParams, rng: np.random.Generator) -> PerturbedReport:
    if np.any(np.abs(clipped) > 1):
        raise ContractError("perturb_once expects a gradient already clipped to [-1, 1]")
    items, factors, u = sample_cells(rng, params.n_items, params.n_factors, 1)
    sign = perturb_cells(clipped[items, factors], u, params.epsilon)[0]
    return PerturbedReport(int(items[0] * params.n_factors + factors[0]), bool(sign))


def decode_report(r: PerturbedReport, params: MechanismParams) -> sp.coo_matrix:
    if not 0 <= r.cell_index < params.dim:
        raise ContractError(f"cell index {r.cell_index} outside [0, {params.dim})")
    i, f = divmod(r.cell_index, params.n_factors)
    value = params.scale if r.sign else -params.scale
    return sp.coo_matrix(([value], ([i], [f])), shape=(params.n_items, params.n_factors))


def privacy_budget(params: MechanismParams) -> float:
    """User-level budget per epoch under sequential composition of ``k`` reports."""
    return params.k * params.epsilon
