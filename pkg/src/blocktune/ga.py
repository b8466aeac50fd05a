"""Genetic search over transaction-to-block assignments.

Candidates are encoded as block-index vectors (one gene per transaction),
so the one-block-per-transaction rule is structural and the search space
is exactly the set of such vectors. Feasibility against the per-block
count and byte caps is restored by a repair pass after every variation
step, never through fitness penalties, keeping the fitness landscape
identical to the objective being minimized.

Runs are fully deterministic: identical (instance, predictor, config)
produce bit-identical results. Fitness evaluations within a generation are
pure and independent; results are always merged in population-index order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    BlocktuneError,
    EnumerationBudgetError,
    InfeasibleInstanceError,
    InternalInvariantError,
    PredictorNotFittedError,
)
from .model import (
    AssignmentMatrix,
    ProblemInstance,
    recommended_block_size,
    total_processing_time,
)


@dataclass(frozen=True)
class GaConfig:
    """Search hyperparameters; fixed documented defaults, all overridable.

    ``mutation_rate`` defaults to 2/n per transaction with a floor of 0.01
    when left as None.
    """

    population_size: int = 100
    max_generations: int = 200
    crossover_rate: float = 0.9
    mutation_rate: float | None = None
    tournament_size: int = 3
    elitism_count: int = 2
    stagnation_limit: int = 40
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise BlocktuneError("population_size must be >= 2")
        if not 0 <= self.elitism_count < self.population_size:
            raise BlocktuneError("elitism_count must be in [0, population_size)")
        if not 0 <= self.crossover_rate <= 1:
            raise BlocktuneError("crossover_rate must be in [0, 1]")
        if self.mutation_rate is not None and not 0 <= self.mutation_rate <= 1:
            raise BlocktuneError("mutation_rate must be in [0, 1]")
        if self.tournament_size < 1:
            raise BlocktuneError("tournament_size must be >= 1")

    def effective_mutation_rate(self, n: int) -> float:
        if self.mutation_rate is not None:
            return self.mutation_rate
        return max(0.01, 2.0 / n)

    @classmethod
    def from_dict(cls, d: dict) -> "GaConfig":
        return cls(**d)


class Chromosome:
    """A feasible assignment plus its memoized fitness.

    Chromosomes are never mutated in place; variation operators return new
    ones, so a cached fitness can never go stale.
    """

    __slots__ = ("assignment", "cached_fitness")

    def __init__(self, assignment: AssignmentMatrix, cached_fitness: float | None = None):
        self.assignment = assignment
        self.cached_fitness = cached_fitness

    def __eq__(self, other) -> bool:
        return isinstance(other, Chromosome) and self.assignment == other.assignment

    def __hash__(self):
        return hash(self.assignment)


@dataclass(frozen=True)
class GaResult:
    """Outcome of one search run, carrying everything needed to reproduce it."""

    best: Chromosome
    best_fitness: float
    recommended_block_size: int
    fitness_history: tuple
    generations_run: int
    seed_used: int
    extrapolation_queries: int = 0
    total_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "best_fitness": self.best_fitness,
            "recommended_block_size": self.recommended_block_size,
            "block_of": self.best.assignment.block_of.tolist(),
            "fitness_history": list(self.fitness_history),
            "generations_run": self.generations_run,
            "seed_used": self.seed_used,
            "extrapolation_queries": self.extrapolation_queries,
            "total_queries": self.total_queries,
        }


def _check_instance_feasible(instance: ProblemInstance):
    # ProblemInstance construction already enforces these; repeated here so
    # search entry points fail loudly even on hand-built instances.
    if instance.nb * instance.limits.ub < instance.n:
        raise InfeasibleInstanceError("not enough block capacity for all transactions")
    if int(instance.sizes.max()) > instance.limits.cb:
        raise InfeasibleInstanceError("a transaction exceeds the block byte cap")


def _greedy_repack(instance: ProblemInstance):
    """Deterministic from-scratch packing: transactions by descending size
    (ids break ties) into the feasible block with the lowest byte load.
    Returns None when even that fails."""
    sizes = instance.sizes
    nb, ub, cb = instance.nb, instance.limits.ub, instance.limits.cb
    order = np.lexsort((np.arange(instance.n), -sizes))
    arr = np.empty(instance.n, dtype=np.int64)
    counts = np.zeros(nb, dtype=np.int64)
    loads = np.zeros(nb, dtype=np.int64)
    for i in order:
        s = int(sizes[i])
        ok = (counts + 1 <= ub) & (loads + s <= cb)
        cands = np.flatnonzero(ok)
        if cands.size == 0:
            return None
        d = int(cands[np.argmin(loads[cands])])
        arr[i] = d
        counts[d] += 1
        loads[d] += s
    return arr


def _repair_array(instance: ProblemInstance, arr: np.ndarray) -> np.ndarray:
    ok = _kernels.repair_assignment(arr, instance.sizes, instance.nb,
                                    instance.limits.ub, instance.limits.cb)
    if not ok:
        # The local-move loop can wedge when both caps are tight at once;
        # a from-scratch repack still satisfies the repair contract.
        repacked = _greedy_repack(instance)
        if repacked is None:
            raise InternalInvariantError(
                "repair could not place a transaction although the instance "
                "passed its capacity checks")
        arr[:] = repacked
    return arr


def repair(instance: ProblemInstance, assignment: AssignmentMatrix) -> AssignmentMatrix:
    """Return a feasible assignment, moving transactions out of overloaded
    blocks; already-feasible input comes back unchanged."""
    arr = _repair_array(instance, assignment.block_of.copy())
    if np.array_equal(arr, assignment.block_of):
        return assignment
    return AssignmentMatrix(arr, instance.nb)


def fitness(chromosome: Chromosome, instance: ProblemInstance, predictor) -> float:
    """Total processing time of the chromosome's assignment, memoized."""
    if chromosome.cached_fitness is None:
        chromosome.cached_fitness = total_processing_time(
            instance, chromosome.assignment, predictor)
    return chromosome.cached_fitness


def select(population, config: GaConfig, rng: np.random.Generator) -> Chromosome:
    """Tournament selection: lowest fitness among ``tournament_size`` distinct
    uniform draws wins, ties broken by the lower population index."""
    if not population:
        raise BlocktuneError("cannot select from an empty population")
    k = min(config.tournament_size, len(population))
    draws = rng.choice(len(population), size=k, replace=False)
    best = None
    for idx in sorted(int(i) for i in draws):
        fit = population[idx].cached_fitness
        if fit is None:
            raise BlocktuneError("selection requires evaluated chromosomes")
        if best is None or fit < population[best].cached_fitness:
            best = idx
    return population[best]


def crossover(instance: ProblemInstance, parent_a: Chromosome, parent_b: Chromosome,
              rng: np.random.Generator):
    """Uniform per-transaction exchange: each gene swaps between the children
    with probability 0.5; both children are repaired."""
    swap = rng.random(instance.n) < 0.5
    a = parent_a.assignment.block_of
    b = parent_b.assignment.block_of
    child_a = np.where(swap, b, a)
    child_b = np.where(swap, a, b)
    return (Chromosome(AssignmentMatrix(_repair_array(instance, child_a), instance.nb)),
            Chromosome(AssignmentMatrix(_repair_array(instance, child_b), instance.nb)))


def mutate(instance: ProblemInstance, chromosome: Chromosome, mutation_rate: float,
           rng: np.random.Generator) -> Chromosome:
    """Reassign each transaction to a uniformly random block with probability
    ``mutation_rate``, then repair."""
    hit = rng.random(instance.n) < mutation_rate
    if not hit.any():
        return chromosome
    arr = chromosome.assignment.block_of.copy()
    arr[hit] = rng.integers(0, instance.nb, size=int(hit.sum()))
    if np.array_equal(arr, chromosome.assignment.block_of):
        return chromosome
    return Chromosome(AssignmentMatrix(_repair_array(instance, arr), instance.nb))


def initialize_population(instance: ProblemInstance, predictor, config: GaConfig):
    """Build ``population_size`` feasible chromosomes: transactions assigned
    in a random order to uniformly random blocks, then repaired. Member
    seeds derive deterministically from the config seed."""
    _check_instance_feasible(instance)
    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.population_size)
    population = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        order = rng.permutation(instance.n)
        arr = np.empty(instance.n, dtype=np.int64)
        arr[order] = rng.integers(0, instance.nb, size=instance.n)
        population.append(
            Chromosome(AssignmentMatrix(_repair_array(instance, arr), instance.nb)))
    return population


def _population_fitness(instance: ProblemInstance, predictor, matrix: np.ndarray):
    """Objective for every row of ``matrix`` (pop, n) in one batched pass.

    Returns (fitness vector, extrapolating query count, total query count).
    Rows must already be feasible.
    """
    pop = matrix.shape[0]
    nb = instance.nb
    m = instance.m
    flat = (matrix + (np.arange(pop) * nb)[:, None]).ravel()
    counts = np.bincount(flat, minlength=pop * nb)
    byte_sums = np.bincount(flat, weights=np.broadcast_to(
        instance.sizes.astype(np.float64), matrix.shape).ravel(),
        minlength=pop * nb)

    nonempty = np.flatnonzero(counts > 0)
    rows = np.empty((nonempty.size * m, 3), dtype=np.float64)
    rows[:, 0] = np.repeat(counts[nonempty].astype(np.float64), m)
    rows[:, 1] = np.repeat(byte_sums[nonempty], m)
    rows[:, 2] = np.tile(instance.bandwidths, nonempty.size)

    per_node = (np.asarray(predictor.predict_f_batch(rows), dtype=np.float64)
                + np.asarray(predictor.predict_g_batch(rows), dtype=np.float64))
    block_time = per_node.reshape(nonempty.size, m).max(axis=1)

    fit = np.zeros(pop, dtype=np.float64)
    np.add.at(fit, nonempty // nb, block_time)

    extrapolating = 0
    if hasattr(predictor, "extrapolation_mask"):
        extrapolating = int(predictor.extrapolation_mask(rows).sum())
    return fit, extrapolating, rows.shape[0]


def run(instance: ProblemInstance, predictor, config: GaConfig = GaConfig()) -> GaResult:
    """Full generational loop with elitism and stagnation-based stopping.

    Per-generation best fitness is non-increasing; the returned best
    chromosome is feasible and carries the recommended block size (its
    largest per-block transaction count).
    """
    if not getattr(predictor, "fitted", False):
        raise PredictorNotFittedError("predictor has not been fitted")
    population = initialize_population(instance, predictor, config)
    matrix = np.stack([c.assignment.block_of for c in population])
    fit, extra, total_q = _population_fitness(instance, predictor, matrix)

    rng = np.random.default_rng(np.random.SeedSequence((config.rng_seed, 1)))
    mutation_rate = config.effective_mutation_rate(instance.n)

    best_idx = int(np.argmin(fit))
    best_arr = matrix[best_idx].copy()
    best_fit = float(fit[best_idx])
    history = [best_fit]
    stagnant = 0
    generations_run = 0

    for _ in range(config.max_generations):
        order = np.argsort(fit, kind="stable")
        # Elites are appended last: on fitness ties the lower index wins a
        # tournament, so putting fresh children first lets equally-good
        # offspring keep drifting across fitness plateaus.
        elite_rows = [matrix[i].copy() for i in order[:config.elitism_count]]
        next_rows = []

        k = min(config.tournament_size, matrix.shape[0])

        def _tournament():
            draws = np.sort(rng.choice(matrix.shape[0], size=k, replace=False))
            winner = draws[0]
            for idx in draws[1:]:
                if fit[idx] < fit[winner]:
                    winner = idx
            return winner

        n_children = config.population_size - config.elitism_count
        while len(next_rows) < n_children:
            pa = matrix[_tournament()]
            pb = matrix[_tournament()]
            if rng.random() < config.crossover_rate:
                swap = rng.random(instance.n) < 0.5
                ca = np.where(swap, pb, pa)
                cb = np.where(swap, pa, pb)
            else:
                ca = pa.copy()
                cb = pb.copy()
            for child in (ca, cb):
                if len(next_rows) >= n_children:
                    break
                hit = rng.random(instance.n) < mutation_rate
                if hit.any():
                    child = child.copy()
                    child[hit] = rng.integers(0, instance.nb, size=int(hit.sum()))
                next_rows.append(_repair_array(instance, child.copy()))

        matrix = np.stack(next_rows + elite_rows)
        fit, gen_extra, gen_q = _population_fitness(instance, predictor, matrix)
        extra += gen_extra
        total_q += gen_q
        generations_run += 1

        gen_best = int(np.argmin(fit))
        if fit[gen_best] < best_fit:
            best_fit = float(fit[gen_best])
            best_arr = matrix[gen_best].copy()
            stagnant = 0
        else:
            stagnant += 1
        history.append(best_fit)
        if stagnant >= config.stagnation_limit:
            break

    best_assignment = AssignmentMatrix(best_arr, instance.nb)
    best = Chromosome(best_assignment, best_fit)
    return GaResult(
        best=best,
        best_fitness=best_fit,
        recommended_block_size=recommended_block_size(best_assignment),
        fitness_history=tuple(history),
        generations_run=generations_run,
        seed_used=config.rng_seed,
        extrapolation_queries=extra,
        total_queries=total_q,
    )


def brute_force_optimum(instance: ProblemInstance, predictor,
                        budget: int = 10_000_000):
    """Exhaustively enumerate all block-index vectors and return the
    minimum-fitness feasible assignment (ties go to the lexicographically
    smallest vector).

    Refuses instances where nb ** n exceeds ``budget``.
    """
    _check_instance_feasible(instance)
    n, nb = instance.n, instance.nb
    total = nb ** n
    if total > budget:
        raise EnumerationBudgetError(
            f"{nb}^{n} = {total} assignments exceed the enumeration budget {budget}")

    place = nb ** np.arange(n - 1, -1, -1, dtype=np.int64)
    sizes = instance.sizes
    best_fit = np.inf
    best_arr = None
    chunk = 1 << 14
    for start in range(0, total, chunk):
        ks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        cand = (ks[:, None] // place) % nb
        rows = ks.size
        flat = (cand + (np.arange(rows) * nb)[:, None]).ravel()
        counts = np.bincount(flat, minlength=rows * nb).reshape(rows, nb)
        byte_sums = np.bincount(flat, weights=np.broadcast_to(
            sizes.astype(np.float64), cand.shape).ravel(),
            minlength=rows * nb).reshape(rows, nb)
        feasible = ((counts <= instance.limits.ub).all(axis=1)
                    & (byte_sums <= instance.limits.cb).all(axis=1))
        if not feasible.any():
            continue
        fit, _, _ = _population_fitness(instance, predictor, cand[feasible])
        local = int(np.argmin(fit))
        if fit[local] < best_fit:
            best_fit = float(fit[local])
            best_arr = cand[feasible][local].copy()
    if best_arr is None:
        raise InfeasibleInstanceError("no feasible assignment exists")
    return AssignmentMatrix(best_arr, nb), best_fit
