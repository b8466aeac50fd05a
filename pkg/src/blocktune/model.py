"""Core domain model: transactions, committing nodes, block limits, and the
assignment objective.

An assignment maps every transaction to exactly one block (stored as a
block index per transaction, so the one-block-per-transaction rule holds by
construction). A feasible assignment keeps every block within the
per-block transaction cap ``ub`` and the per-block byte cap ``cb``. The
quantity being minimized is the total processing time: the sum over blocks
of the slowest committing node's predicted storing time plus latency for
that block's composition.

Performance predictors are duck-typed: anything exposing a truthy
``fitted`` attribute plus ``predict_f_batch(points)`` and
``predict_g_batch(points)`` over (k, 3) arrays with columns
(tx_count, block_bytes, bandwidth) works, which lets tests plug in
analytic stubs.

All types are immutable after construction and safe to share between
concurrent evaluators; every operation here is a pure function of its
inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstraintViolationError,
    EmptyInstanceError,
    InfeasibleInstanceError,
    MalformedAssignmentError,
    PredictorNotFittedError,
)

TX_COUNT_CAP = "tx-count-cap"
BLOCK_BYTE_CAP = "block-byte-cap"


@dataclass(frozen=True)
class Transaction:
    """One transaction awaiting placement; ``size_bytes`` must be >= 1."""

    id: int
    size_bytes: int

    def __post_init__(self):
        if self.size_bytes < 1:
            raise InfeasibleInstanceError(
                f"transaction {self.id}: size_bytes must be >= 1, got {self.size_bytes}")


@dataclass(frozen=True)
class NodeProfile:
    """A committing node with a strictly positive bandwidth in bytes/second."""

    id: int
    bandwidth_bytes_per_sec: float

    def __post_init__(self):
        if not self.bandwidth_bytes_per_sec > 0:
            raise InfeasibleInstanceError(
                f"node {self.id}: bandwidth must be > 0, got {self.bandwidth_bytes_per_sec}")


@dataclass(frozen=True)
class BlockLimits:
    """Block formation limits.

    ``lb`` is the minimum per-block transaction count used only to derive
    the candidate block count, ``ub`` caps transactions per block, and
    ``cb`` caps block bytes.
    """

    lb: int
    ub: int
    cb: int

    def __post_init__(self):
        if self.lb < 1 or self.ub < 1 or self.cb < 1:
            raise InfeasibleInstanceError(
                f"limits must be positive, got lb={self.lb} ub={self.ub} cb={self.cb}")
        if self.lb > self.ub:
            raise InfeasibleInstanceError(
                f"lb={self.lb} exceeds ub={self.ub}")


def derive_block_count(n: int, lb: int) -> int:
    """Candidate block count: one spare block beyond the ceil(n / lb) needed."""
    return math.ceil(n / lb) + 1


@dataclass(frozen=True)
class ProblemInstance:
    """An immutable tuning problem: transactions, nodes, and limits.

    Construction rejects instances that cannot possibly be packed: the
    block count times the per-block caps must cover the transaction count
    and total bytes, and every single transaction must fit under ``cb``.
    """

    transactions: tuple
    nodes: tuple
    limits: BlockLimits
    nb: int = field(init=False)

    def __post_init__(self):
        txs = tuple(self.transactions)
        nodes = tuple(self.nodes)
        object.__setattr__(self, "transactions", txs)
        object.__setattr__(self, "nodes", nodes)
        if not txs:
            raise EmptyInstanceError("instance needs at least one transaction")
        if not nodes:
            raise InfeasibleInstanceError("instance needs at least one committing node")
        ids = [t.id for t in txs]
        if ids != list(range(len(txs))):
            raise InfeasibleInstanceError(
                "transaction ids must be unique and contiguous from 0")
        node_ids = [nd.id for nd in nodes]
        if node_ids != list(range(len(nodes))):
            raise InfeasibleInstanceError("node ids must be unique and contiguous from 0")

        sizes = np.array([t.size_bytes for t in txs], dtype=np.int64)
        bandwidths = np.array([nd.bandwidth_bytes_per_sec for nd in nodes], dtype=np.float64)
        sizes.flags.writeable = False
        bandwidths.flags.writeable = False
        object.__setattr__(self, "_sizes", sizes)
        object.__setattr__(self, "_bandwidths", bandwidths)

        n = len(txs)
        nb = derive_block_count(n, self.limits.lb)
        object.__setattr__(self, "nb", nb)

        max_size = int(sizes.max())
        if max_size > self.limits.cb:
            raise InfeasibleInstanceError(
                f"largest transaction ({max_size} bytes) exceeds the block byte cap "
                f"cb={self.limits.cb}")
        if nb * self.limits.ub < n:
            raise InfeasibleInstanceError(
                f"{nb} blocks of at most {self.limits.ub} transactions cannot hold "
                f"all {n} transactions")
        if nb * self.limits.cb < int(sizes.sum()):
            raise InfeasibleInstanceError(
                f"{nb} blocks of at most {self.limits.cb} bytes cannot hold "
                f"{int(sizes.sum())} total bytes")

    @property
    def n(self) -> int:
        return len(self.transactions)

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def sizes(self) -> np.ndarray:
        """Transaction sizes in bytes, indexed by transaction id (read-only)."""
        return self._sizes

    @property
    def bandwidths(self) -> np.ndarray:
        """Node bandwidths in bytes/second, indexed by node id (read-only)."""
        return self._bandwidths


class AssignmentMatrix:
    """A transaction-to-block assignment, stored as one block index per
    transaction.

    The equivalent binary block-by-transaction matrix (rows = blocks,
    columns = transactions) is reconstructible via
    :meth:`to_binary_matrix`; its column sums are 1 by construction.
    """

    __slots__ = ("block_of", "nb")

    def __init__(self, block_of, nb: int):
        arr = np.asarray(block_of, dtype=np.int64).copy()
        if arr.ndim != 1:
            raise MalformedAssignmentError("assignment must be a flat index vector")
        if arr.size and (arr.min() < 0 or arr.max() >= nb):
            raise MalformedAssignmentError(
                f"block indices must lie in [0, {nb}), got range "
                f"[{arr.min()}, {arr.max()}]")
        arr.flags.writeable = False
        self.block_of = arr
        self.nb = nb

    def __len__(self) -> int:
        return self.block_of.size

    def __eq__(self, other) -> bool:
        return (isinstance(other, AssignmentMatrix) and self.nb == other.nb
                and np.array_equal(self.block_of, other.block_of))

    def __hash__(self):
        return hash((self.nb, self.block_of.tobytes()))

    def to_binary_matrix(self) -> np.ndarray:
        """The (nb, n) 0/1 matrix with entry (j, i) = 1 iff tx i is in block j."""
        y = np.zeros((self.nb, self.block_of.size), dtype=np.int8)
        y[self.block_of, np.arange(self.block_of.size)] = 1
        return y


@dataclass(frozen=True)
class Violation:
    """One constraint breach: which rule, which block, observed vs. allowed."""

    constraint: str
    block: int
    observed: int
    allowed: int

    def describe(self) -> str:
        return (f"block {self.block}: {self.constraint} violated "
                f"({self.observed} > {self.allowed})")


@dataclass(frozen=True)
class ConstraintReport:
    """Every violation found in an assignment; empty means feasible."""

    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_lines(self):
        if self.ok:
            return ["feasible: all blocks within caps"]
        return [v.describe() for v in self.violations]

    def to_dict(self) -> dict:
        return {
            "feasible": self.ok,
            "violations": [
                {"constraint": v.constraint, "block": v.block,
                 "observed": v.observed, "allowed": v.allowed}
                for v in self.violations
            ],
        }


@dataclass(frozen=True)
class BlockCostVector:
    """Per-block processing times in seconds; zero exactly for empty blocks."""

    t: tuple

    @property
    def total(self) -> float:
        return float(sum(self.t))


def _check_length(instance: ProblemInstance, assignment: AssignmentMatrix):
    if len(assignment) != instance.n:
        raise MalformedAssignmentError(
            f"assignment covers {len(assignment)} transactions, instance has {instance.n}")
    if assignment.nb != instance.nb:
        raise MalformedAssignmentError(
            f"assignment was built for {assignment.nb} blocks, instance has {instance.nb}")


def block_stats(instance: ProblemInstance, assignment: AssignmentMatrix):
    """Per-block transaction counts and byte sums as two length-nb arrays."""
    _check_length(instance, assignment)
    counts = np.bincount(assignment.block_of, minlength=instance.nb)
    byte_sums = np.bincount(assignment.block_of,
                            weights=instance.sizes.astype(np.float64),
                            minlength=instance.nb).astype(np.int64)
    return counts, byte_sums


def block_metrics(instance: ProblemInstance, assignment: AssignmentMatrix, j: int):
    """(transaction count, byte sum) of block ``j``."""
    if not 0 <= j < instance.nb:
        raise IndexError(f"block index {j} out of range [0, {instance.nb})")
    counts, byte_sums = block_stats(instance, assignment)
    return int(counts[j]), int(byte_sums[j])


def validate_assignment(instance: ProblemInstance,
                        assignment: AssignmentMatrix) -> ConstraintReport:
    """Check every block against both caps; reports all violations, not just
    the first."""
    counts, byte_sums = block_stats(instance, assignment)
    violations = []
    for j in range(instance.nb):
        if counts[j] > instance.limits.ub:
            violations.append(Violation(TX_COUNT_CAP, j, int(counts[j]),
                                        instance.limits.ub))
        if byte_sums[j] > instance.limits.cb:
            violations.append(Violation(BLOCK_BYTE_CAP, j, int(byte_sums[j]),
                                        instance.limits.cb))
    return ConstraintReport(tuple(violations))


def _require_fitted(predictor):
    if not getattr(predictor, "fitted", False):
        raise PredictorNotFittedError("performance predictor has not been fitted")


def _feature_rows(counts, byte_sums, bandwidths):
    """(blocks*nodes, 3) feature rows, block-major then node order."""
    k = counts.size
    m = bandwidths.size
    rows = np.empty((k * m, 3), dtype=np.float64)
    rows[:, 0] = np.repeat(counts.astype(np.float64), m)
    rows[:, 1] = np.repeat(byte_sums.astype(np.float64), m)
    rows[:, 2] = np.tile(bandwidths, k)
    return rows


def block_cost_vector(instance: ProblemInstance, assignment: AssignmentMatrix,
                      predictor) -> BlockCostVector:
    """Processing time of every block: the slowest node's f + g, 0 if empty."""
    _require_fitted(predictor)
    counts, byte_sums = block_stats(instance, assignment)
    t = np.zeros(instance.nb, dtype=np.float64)
    nonempty = np.flatnonzero(counts > 0)
    if nonempty.size:
        rows = _feature_rows(counts[nonempty], byte_sums[nonempty],
                             instance.bandwidths)
        per_node = (np.asarray(predictor.predict_f_batch(rows), dtype=np.float64)
                    + np.asarray(predictor.predict_g_batch(rows), dtype=np.float64))
        t[nonempty] = per_node.reshape(nonempty.size, instance.m).max(axis=1)
    return BlockCostVector(tuple(float(x) for x in t))


def block_processing_time(instance: ProblemInstance, assignment: AssignmentMatrix,
                          j: int, predictor) -> float:
    """Processing time of block ``j``: 0 when empty, else the maximum over
    committing nodes of predicted storing time plus latency."""
    if not 0 <= j < instance.nb:
        raise IndexError(f"block index {j} out of range [0, {instance.nb})")
    _require_fitted(predictor)
    counts, byte_sums = block_stats(instance, assignment)
    if counts[j] == 0:
        return 0.0
    rows = _feature_rows(counts[j:j + 1], byte_sums[j:j + 1], instance.bandwidths)
    per_node = (np.asarray(predictor.predict_f_batch(rows), dtype=np.float64)
                + np.asarray(predictor.predict_g_batch(rows), dtype=np.float64))
    return float(per_node.max())


def total_processing_time(instance: ProblemInstance, assignment: AssignmentMatrix,
                          predictor) -> float:
    """The optimization objective: sum of per-block processing times.

    Raises if the assignment violates a cap; callers repair first.
    """
    report = validate_assignment(instance, assignment)
    if not report.ok:
        raise ConstraintViolationError(
            "assignment is infeasible: " + "; ".join(report.to_lines()))
    return block_cost_vector(instance, assignment, predictor).total


def recommended_block_size(assignment: AssignmentMatrix) -> int:
    """The block size to configure: the largest per-block transaction count."""
    if len(assignment) == 0:
        raise EmptyInstanceError("cannot recommend a block size with no transactions")
    counts = np.bincount(assignment.block_of, minlength=assignment.nb)
    return int(counts.max())


def throughput_estimate(n: int, total_time: float) -> float:
    """Transactions per second implied by processing ``n`` transactions in
    ``total_time`` seconds."""
    if total_time <= 0:
        raise ValueError(f"total_time must be > 0, got {total_time}")
    return n / total_time
