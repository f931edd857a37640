"""In-process stand-in for the anonymizing proxy.

Client messages carry an id; the batch handed to the server does not have a
field that could hold one.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .mechanism import REPORT_BYTES, REPORT_STRUCT, PerturbedReport


class ProxyError(ValueError):
    pass


def _report_arrays(reports: Sequence[PerturbedReport]):
    cells = np.fromiter((r.cell_index for r in reports), dtype=np.uint32, count=len(reports))
    signs = np.fromiter((r.sign for r in reports), dtype=bool, count=len(reports))
    return cells, signs


@dataclass(frozen=True, eq=False)
class ClientMessage:
    client_id: int
    epoch: int
    cells: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_reports(cls, client_id: int, epoch: int, reports: Sequence[PerturbedReport]) -> ClientMessage:
        return cls(client_id, epoch, *_report_arrays(reports))

    @property
    def reports(self) -> list[PerturbedReport]:
        return [PerturbedReport(int(c), bool(s)) for c, s in zip(self.cells, self.signs)]

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True, eq=False)
class AnonymousReportBatch:
    """All reports of one epoch, in shuffled order, without attribution."""

    __slots__ = ("epoch", "cells", "signs")

    epoch: int
    cells: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_reports(cls, epoch: int, reports: Sequence[PerturbedReport]) -> AnonymousReportBatch:
        return cls(epoch, *_report_arrays(reports))

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[PerturbedReport]:
        for c, s in zip(self.cells, self.signs):
            yield PerturbedReport(int(c), bool(s))

    @property
    def reports(self) -> list[PerturbedReport]:
        return list(self)

    def permuted(self, perm: np.ndarray) -> AnonymousReportBatch:
        return AnonymousReportBatch(self.epoch, self.cells[perm], self.signs[perm])

    def to_bytes(self) -> bytes:
        """Debug dump: u32 epoch, u32 count, then one wire-encoded record per report."""
        out = bytearray(struct.pack("<II", self.epoch, len(self)))
        for c, s in zip(self.cells, self.signs):
            out += REPORT_STRUCT.pack(int(c), int(s))
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> AnonymousReportBatch:
        epoch, n = struct.unpack_from("<II", buf)
        body = buf[8:]
        if len(body) != n * REPORT_BYTES:
            raise ProxyError(f"expected {n} records, got {len(body)} bytes")
        reports = [PerturbedReport.from_bytes(body[j : j + REPORT_BYTES]) for j in range(0, len(body), REPORT_BYTES)]
        return cls.from_reports(epoch, reports)


def strip_and_shuffle(messages: Sequence[ClientMessage], rng: np.random.Generator) -> AnonymousReportBatch:
    """Drop client metadata, pool every report, and apply a uniform permutation."""
    if not messages:
        raise ProxyError("no messages to forward")
    epochs = {m.epoch for m in messages}
    if len(epochs) != 1:
        raise ProxyError(f"messages from mixed epochs {sorted(epochs)}")
    cells = np.concatenate([m.cells for m in messages]).astype(np.uint32, copy=False)
    signs = np.concatenate([m.signs for m in messages])
    perm = rng.permutation(len(cells))
    return AnonymousReportBatch(epochs.pop(), cells[perm], signs[perm])
