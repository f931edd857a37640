"""Federated epoch loop: clients, proxy and server wired together in one process.

Randomness is derived from the master seed only. Client ``u`` in epoch ``t``
draws from ``default_rng((seed, CLIENT_STREAM, u, t))``; the proxy shuffle
from ``default_rng((seed, PROXY_STREAM, t))``. Results therefore do not
depend on the order in which clients are simulated.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import InteractionDataset
from .evaluation import DEFAULT_KS, TaskSet, hit_ratio
from .mechanism import MechanismParams, PerturbedReport, clip_to_unit, perturb_cells, perturb_k, sample_cells
from .mf import HyperParams, implicit_loss, item_gradient, item_gradient_sum, update_user_embeddings
from .proxy import ClientMessage, strip_and_shuffle
from .server import (
    FLOAT_BYTES,
    DivergenceError,
    ServerState,
    aggregate,
    apply_update,
    comm_cost,
)

logger = logging.getLogger(__name__)

CLIENT_STREAM = 1
PROXY_STREAM = 2
RANDOM_MODEL_STREAM = 3


class Mode(str, enum.Enum):
    LDP = "ldp"
    NONPRIVATE = "nonprivate"
    RANDOM = "random"


def client_rng(seed: int, client_id: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, CLIENT_STREAM, client_id, epoch))


def client_loss_gradient(x_u: np.ndarray, V: np.ndarray, items_u, hp: HyperParams) -> np.ndarray:
    """Descent direction for ``V`` from one client: ``-f(u, .)``.

    ``f`` is minus half the derivative of the client's loss term, so the
    server's ``V - lr * grad`` step only descends if clients report ``-f``.
    """
    return -item_gradient(x_u, V, items_u, hp)


def client_reports(
    x_u: np.ndarray, V: np.ndarray, items_u, hp: HyperParams, mech: MechanismParams, rng: np.random.Generator
) -> list[PerturbedReport]:
    """Reference per-client path: dense gradient, clip, ``k`` reports."""
    return perturb_k(client_loss_gradient(x_u, V, items_u, hp), mech, rng)


def simulate_clients(
    V: np.ndarray,
    X: np.ndarray,
    train: InteractionDataset,
    hp: HyperParams,
    mech: MechanismParams,
    seed: int,
    epoch: int,
) -> list[ClientMessage]:
    """Every client's ``k`` reports, evaluating the gradient only at sampled cells.

    Consumes each client generator exactly like :func:`client_reports`.
    """
    n, k, F = train.n_users, mech.k, mech.n_factors
    items = np.empty(n * k, dtype=np.int64)
    factors = np.empty(n * k, dtype=np.int64)
    u = np.empty(n * k)
    for c in range(n):
        sl = slice(c * k, (c + 1) * k)
        items[sl], factors[sl], u[sl] = sample_cells(client_rng(seed, c, epoch), mech.n_items, F, k)

    owners = np.repeat(np.arange(n), k)
    p = train.contains(owners, items).astype(np.float64)
    s = np.einsum("nf,nf->n", X[owners], V[items])
    g = -(1 + hp.confidence_alpha * p) * (p - s) * X[owners, factors]
    signs = perturb_cells(clip_to_unit(g), u, mech.epsilon)
    cells = (items * F + factors).astype(np.uint32)
    return [ClientMessage(c, epoch, cells[c * k : (c + 1) * k], signs[c * k : (c + 1) * k]) for c in range(n)]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    hr: dict[int, float]
    loss: float
    upload_bytes: int
    download_bytes: int

    def to_row(self) -> dict:
        row = {"epoch": self.epoch}
        row.update({f"hr_at_{K}": v for K, v in sorted(self.hr.items())})
        row.update(loss=self.loss, upload_bytes=self.upload_bytes, download_bytes=self.download_bytes)
        return row


class Evaluator:
    """Clients re-solve their embeddings against ``V`` and rank their test item."""

    def __init__(self, train: InteractionDataset, tasks: TaskSet, Ks: Sequence[int] = DEFAULT_KS):
        self.train = train
        self.tasks = tasks
        self.Ks = tuple(Ks)

    def __call__(self, V: np.ndarray, hp: HyperParams, X: np.ndarray | None = None):
        if X is None:
            X = update_user_embeddings(V, self.train.matrix, hp)
        metrics = hit_ratio(self.tasks, X, V, self.Ks)
        return metrics, implicit_loss(X, V, self.train, hp)


def _traffic(mode: Mode, hp: HyperParams, n_items: int) -> tuple[int, int]:
    cost = comm_cost(hp, n_items)
    if mode is Mode.LDP:
        return cost.upload_per_epoch, cost.download_per_epoch
    if mode is Mode.NONPRIVATE:
        return n_items * hp.n_factors * FLOAT_BYTES, cost.download_per_epoch
    return 0, 0


def run_epoch(
    state: ServerState,
    train: InteractionDataset,
    evaluator: Evaluator | None = None,
    mode: Mode = Mode.LDP,
) -> ServerState:
    """One federated round. Returns a new state; ``state`` is not modified."""
    hp, mech, V = state.hp, state.mech, state.item_matrix
    if state.epoch >= hp.epochs:
        raise ValueError(f"epoch {state.epoch} >= configured epochs {hp.epochs}")
    epoch = state.epoch
    X = update_user_embeddings(V, train.matrix, hp)

    if mode is Mode.LDP:
        messages = simulate_clients(V, X, train, hp, mech, state.rng_seed, epoch)
        batch = strip_and_shuffle(messages, np.random.default_rng((state.rng_seed, PROXY_STREAM, epoch)))
        grad = aggregate(batch, train.n_users, mech)
    elif mode is Mode.NONPRIVATE:
        grad = -item_gradient_sum(X, V, train.matrix, hp) / train.n_users
    else:
        raise ValueError(f"mode {mode} does not train")

    try:
        V_new = apply_update(V, grad, hp, epoch=epoch)
    except DivergenceError as exc:
        exc.trace = list(state.metric_trace)
        raise
    trace = list(state.metric_trace)
    if evaluator is not None:
        metrics, loss = evaluator(V_new, hp)
        up, down = _traffic(mode, hp, mech.n_items)
        trace.append(EpochRecord(epoch + 1, metrics.hr, loss, up, down))
        logger.debug("epoch %d hr=%s loss=%.6g", epoch + 1, metrics.hr, loss)
    return replace(state, item_matrix=V_new, epoch=epoch + 1, metric_trace=trace)


@dataclass
class TrainingResult:
    item_matrix: np.ndarray
    user_embeddings: np.ndarray = field(repr=False)
    trace: list[EpochRecord]
    state: ServerState


def random_model(n_users: int, n_items: int, n_factors: int, seed: int):
    rng = np.random.default_rng((seed, RANDOM_MODEL_STREAM))
    return rng.standard_normal((n_users, n_factors)), rng.standard_normal((n_items, n_factors))


def run_training(
    train: InteractionDataset,
    hp: HyperParams,
    seed: int,
    mode: Mode | str = Mode.LDP,
    evaluator: Evaluator | None = None,
    on_epoch: Callable[[ServerState], None] | None = None,
) -> TrainingResult:
    """Run ``hp.epochs`` rounds. On divergence the raised error carries the partial trace."""
    mode = Mode(mode)
    state = ServerState.initial(train.n_items, hp, seed)
    if mode is Mode.RANDOM:
        X, V = random_model(train.n_users, train.n_items, hp.n_factors, seed)
        trace = []
        if evaluator is not None:
            metrics, loss = evaluator(V, hp, X=X)
            trace.append(EpochRecord(0, metrics.hr, loss, 0, 0))
        state = replace(state, item_matrix=V, metric_trace=trace)
        return TrainingResult(V, X, trace, state)

    logger.info(
        "training mode=%s epsilon=%g k=%d user-level budget per epoch=%g",
        mode.value, hp.epsilon, hp.updates_per_epoch, hp.epsilon * hp.updates_per_epoch,
    )
    for _ in range(hp.epochs):
        state = run_epoch(state, train, evaluator, mode)
        if on_epoch is not None:
            on_epoch(state)
    X = update_user_embeddings(state.item_matrix, train.matrix, hp)
    return TrainingResult(state.item_matrix, X, state.metric_trace, state)


def run_training_nonprivate(train: InteractionDataset, hp: HyperParams, seed: int, evaluator: Evaluator | None = None) -> TrainingResult:
    """Baseline where the server receives and averages exact, unclipped gradients."""
    return run_training(train, hp, seed, Mode.NONPRIVATE, evaluator)
