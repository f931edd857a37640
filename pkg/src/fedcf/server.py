"""Server side: report aggregation, item-matrix updates, state and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mechanism import REPORT_BYTES, MechanismParams
from .mf import HyperParams
from .proxy import AnonymousReportBatch

CHECKPOINT_MAGIC = b"FMF1"
FLOAT_BYTES = 4
PAPER_TUPLE_BYTES = 4
INIT_SCALE = 0.01


class AggregationError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int | None, trace=None):
        self.epoch = epoch
        self.trace = trace or []
        super().__init__(f"item matrix became non-finite at epoch {epoch}")


@dataclass(frozen=True, eq=False)
class CellCounts:
    pos: np.ndarray
    neg: np.ndarray

    @property
    def total(self) -> int:
        return int(self.pos.sum() + self.neg.sum())


def count_reports(batch: AnonymousReportBatch, dim: int) -> CellCounts:
    cells = batch.cells.astype(np.int64)
    if len(cells) and (cells.min() < 0 or cells.max() >= dim):
        raise AggregationError(f"report cell outside [0, {dim})")
    pos = np.bincount(cells[batch.signs], minlength=dim)
    neg = np.bincount(cells[~batch.signs], minlength=dim)
    return CellCounts(pos, neg)


def aggregate(batch: AnonymousReportBatch, n_clients: int, mech: MechanismParams) -> np.ndarray:
    """Mean of the decoded reports: ``B (pos - neg) / (N k)`` per cell.

    Integer counts make the result independent of report order.
    """
    expected = n_clients * mech.k
    if len(batch) != expected:
        raise AggregationError(f"batch holds {len(batch)} reports, expected N*k = {expected}")
    counts = count_reports(batch, mech.dim)
    diff = (counts.pos - counts.neg).astype(np.float64)
    return (mech.scale * diff / expected).reshape(mech.n_items, mech.n_factors)


def apply_update(V: np.ndarray, grad: np.ndarray, hp: HyperParams, epoch: int | None = None) -> np.ndarray:
    """``inner_steps`` iterations of ``V <- V - lr (grad + 2 reg V)`` with a fixed ``grad``."""
    if V.shape != grad.shape:
        raise ValueError(f"shape mismatch {V.shape} vs {grad.shape}")
    V = V.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(hp.inner_steps):
            V -= hp.learning_rate * (grad + 2 * hp.reg * V)
    if not np.all(np.isfinite(V)):
        raise DivergenceError(epoch)
    return V


def init_item_matrix(n_items: int, n_factors: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng((seed, 0x5EED))
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_items, n_factors))


@dataclass(eq=False)
class ServerState:
    """Everything the server holds. User embeddings are never part of it."""

    item_matrix: np.ndarray
    epoch: int
    hp: HyperParams
    mech: MechanismParams
    rng_seed: int
    metric_trace: list = field(default_factory=list)

    @classmethod
    def initial(cls, n_items: int, hp: HyperParams, seed: int) -> ServerState:
        mech = MechanismParams(hp.epsilon, n_items, hp.n_factors, hp.updates_per_epoch)
        return cls(init_item_matrix(n_items, hp.n_factors, seed), 0, hp, mech, seed)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "rng_seed": self.rng_seed,
            "hp": asdict(self.hp),
            "mech": asdict(self.mech),
            "item_matrix": self.item_matrix.tolist(),
            "metric_trace": [m.to_row() if hasattr(m, "to_row") else m for m in self.metric_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def save_checkpoint(V: np.ndarray, path: str | Path) -> None:
    """``FMF1`` magic, u32 M, u32 F, then M*F little-endian float64, row-major."""
    M, F = V.shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", M, F))
        fh.write(np.ascontiguousarray(V, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an FMF1 checkpoint")
    M, F = struct.unpack_from("<II", buf, 4)
    body = buf[12:]
    if len(body) != M * F * 8:
        raise ValueError(f"checkpoint body has {len(body)} bytes, expected {M * F * 8}")
    return np.frombuffer(body, dtype="<f8").reshape(M, F).copy()


@dataclass(frozen=True)
class CommCost:
    """Per-user traffic. ``upload`` uses 4 bytes per report; ``upload_wire`` the 5-byte encoding."""

    download_per_epoch: int
    upload_per_epoch: int
    upload_wire_per_epoch: int
    upload_bits_per_epoch: int
    epochs: int

    @property
    def download_total(self) -> int:
        return self.download_per_epoch * self.epochs

    @property
    def upload_total(self) -> int:
        return self.upload_per_epoch * self.epochs

    @property
    def upload_wire_total(self) -> int:
        return self.upload_wire_per_epoch * self.epochs


def comm_cost(hp: HyperParams, n_items: int) -> CommCost:
    k = hp.updates_per_epoch
    return CommCost(
        download_per_epoch=n_items * hp.n_factors * FLOAT_BYTES,
        upload_per_epoch=k * PAPER_TUPLE_BYTES,
        upload_wire_per_epoch=k * REPORT_BYTES,
        upload_bits_per_epoch=k * (32 + 1),
        epochs=hp.epochs,
    )
