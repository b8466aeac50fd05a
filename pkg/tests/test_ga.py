"""Genetic search: feasibility under all operators, determinism, and
near-optimality against exhaustive enumeration."""

import numpy as np
import pytest

from blocktune.errors import (
    BlocktuneError,
    EnumerationBudgetError,
    InfeasibleInstanceError,
)
from blocktune.ga import (
    Chromosome,
    GaConfig,
    brute_force_optimum,
    crossover,
    fitness,
    initialize_population,
    mutate,
    repair,
    run,
    select,
)
from blocktune.model import (
    AssignmentMatrix,
    recommended_block_size,
    total_processing_time,
    validate_assignment,
)

from conftest import StubPredictor, affine_stub, make_instance, random_instance


def small_config(seed=0, pop=30, gens=60):
    return GaConfig(population_size=pop, max_generations=gens,
                    stagnation_limit=25, rng_seed=seed)


class TestInitializePopulation:
    def test_single_transaction(self):
        inst = make_instance([100])
        pop = initialize_population(inst, affine_stub(), small_config())
        assert len(pop) == 30
        for chromo in pop:
            assert len(chromo.assignment) == 1
            assert validate_assignment(inst, chromo.assignment).ok

    def test_same_seed_identical(self):
        inst = make_instance([50, 60, 70, 80], lb=2)
        a = initialize_population(inst, affine_stub(), small_config(seed=9))
        b = initialize_population(inst, affine_stub(), small_config(seed=9))
        assert a == b

    def test_different_seed_differs(self):
        inst = make_instance([50, 60, 70, 80] * 3, lb=2)
        a = initialize_population(inst, affine_stub(), small_config(seed=1))
        b = initialize_population(inst, affine_stub(), small_config(seed=2))
        assert a != b

    def test_always_feasible_on_random_instances(self, rng):
        for _ in range(25):
            inst = random_instance(rng)
            pop = initialize_population(inst, affine_stub(),
                                        GaConfig(population_size=10, rng_seed=1))
            for chromo in pop:
                assert validate_assignment(inst, chromo.assignment).ok


class TestFitness:
    def test_delegates_and_caches(self):
        inst = make_instance([100, 200], lb=1)
        stub = affine_stub()
        chromo = Chromosome(AssignmentMatrix([0, 1], inst.nb))
        value = fitness(chromo, inst, stub)
        assert value == pytest.approx(total_processing_time(
            inst, chromo.assignment, stub))
        assert chromo.cached_fitness == value
        assert fitness(chromo, inst, stub) == value

    def test_never_below_brute_force(self, rng):
        stub = affine_stub()
        for seed in range(5):
            sizes = rng.integers(50, 500, size=5).tolist()
            inst = make_instance(sizes, lb=2, ub=4)
            _, best = brute_force_optimum(inst, stub)
            result = run(inst, stub, small_config(seed=seed, pop=20, gens=30))
            assert result.best_fitness >= best - 1e-12


class TestSelect:
    def _population(self, inst, stub, values):
        pop = []
        for i, v in enumerate(values):
            c = Chromosome(AssignmentMatrix([i % inst.nb], inst.nb))
            c.cached_fitness = v
            pop.append(c)
        return pop

    def test_full_tournament_returns_best(self):
        inst = make_instance([10])
        pop = self._population(inst, affine_stub(), [5.0, 1.0, 3.0, 2.0])
        config = GaConfig(population_size=4, tournament_size=4, rng_seed=0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert select(pop, config, rng) is pop[1]

    def test_population_of_one(self):
        inst = make_instance([10])
        pop = self._population(inst, affine_stub(), [2.0])
        assert select(pop, GaConfig(population_size=4, rng_seed=0),
                      np.random.default_rng(1)) is pop[0]

    def test_tie_breaks_by_lower_index(self):
        inst = make_instance([10])
        pop = self._population(inst, affine_stub(), [1.0, 1.0, 1.0, 1.0])
        config = GaConfig(population_size=4, tournament_size=4, rng_seed=0)
        assert select(pop, config, np.random.default_rng(3)) is pop[0]

    def test_selection_pressure(self):
        inst = make_instance([10])
        pop = self._population(inst, affine_stub(), [1.0] + [2.0] * 9)
        config = GaConfig(population_size=10, tournament_size=3, rng_seed=0)
        rng = np.random.default_rng(7)
        hits = sum(select(pop, config, rng) is pop[0] for _ in range(10_000))
        # P(best in a 3-of-10 tournament without replacement) = 0.3
        assert hits > 0.25 * 10_000


class TestCrossover:
    def test_identical_parents_identical_children(self):
        inst = make_instance([10, 20, 30], lb=1)
        parent = Chromosome(AssignmentMatrix([0, 1, 2], inst.nb))
        a, b = crossover(inst, parent, parent, np.random.default_rng(0))
        assert a.assignment == parent.assignment
        assert b.assignment == parent.assignment

    def test_genes_come_from_parents(self):
        inst = make_instance([10, 20, 30, 40, 50], lb=1)
        pa = Chromosome(AssignmentMatrix([0, 0, 1, 1, 2], inst.nb))
        pb = Chromosome(AssignmentMatrix([2, 1, 0, 2, 0], inst.nb))
        rng = np.random.default_rng(11)
        for _ in range(20):
            a, b = crossover(inst, pa, pb, rng)
            for child in (a, b):
                genes = child.assignment.block_of
                pair = np.stack([pa.assignment.block_of, pb.assignment.block_of])
                assert ((genes == pair[0]) | (genes == pair[1])).all()
                # complementary swap: each position is exchanged or not
            np.testing.assert_array_equal(
                np.sort(np.stack([a.assignment.block_of, b.assignment.block_of]), axis=0),
                np.sort(np.stack([pa.assignment.block_of, pb.assignment.block_of]), axis=0))

    def test_children_always_feasible(self, rng):
        stub = affine_stub()
        for _ in range(20):
            inst = random_instance(rng, n_max=30)
            pop = initialize_population(inst, stub, GaConfig(population_size=4,
                                                             rng_seed=5))
            a, b = crossover(inst, pop[0], pop[1], rng)
            assert validate_assignment(inst, a.assignment).ok
            assert validate_assignment(inst, b.assignment).ok


class TestMutate:
    def test_rate_zero_unchanged(self):
        inst = make_instance([10, 20, 30], lb=1)
        chromo = Chromosome(AssignmentMatrix([0, 1, 2], inst.nb))
        out = mutate(inst, chromo, 0.0, np.random.default_rng(0))
        assert out is chromo

    def test_rate_one_stays_feasible_and_uniform(self):
        # nb = ceil(n/lb)+1 >= 2 always, so the one-block case cannot be
        # built; with every gene redrawn the result must still be feasible.
        inst = make_instance([10, 10, 10, 10], lb=2, ub=4)
        chromo = Chromosome(AssignmentMatrix([0, 0, 0, 0], inst.nb))
        seen = set()
        rng = np.random.default_rng(13)
        for _ in range(50):
            out = mutate(inst, chromo, 1.0, rng)
            assert validate_assignment(inst, out.assignment).ok
            seen.add(tuple(out.assignment.block_of.tolist()))
        assert len(seen) > 10

    def test_output_always_feasible(self, rng):
        for _ in range(20):
            inst = random_instance(rng, n_max=30)
            pop = initialize_population(inst, affine_stub(),
                                        GaConfig(population_size=3, rng_seed=3))
            out = mutate(inst, pop[0], 0.5, rng)
            assert validate_assignment(inst, out.assignment).ok


class TestRepair:
    def test_feasible_input_returned_unchanged(self):
        inst = make_instance([100, 200], lb=1)
        assign = AssignmentMatrix([0, 1], inst.nb)
        assert repair(inst, assign) is assign

    def test_single_forced_move(self):
        # nb = ceil(2/1)+1 = 3; ub = 1 forces one transaction out of block 0;
        # the larger one moves to the lowest-loaded (lowest-index) block.
        inst = make_instance([100, 80], lb=1, ub=1)
        assert inst.nb == 3
        out = repair(inst, AssignmentMatrix([0, 0], inst.nb))
        np.testing.assert_array_equal(out.block_of, [1, 0])

    def test_only_offending_transactions_move(self, rng):
        for _ in range(30):
            inst = random_instance(rng, n_max=25)
            arr = rng.integers(0, inst.nb, size=inst.n)
            before = AssignmentMatrix(arr, inst.nb)
            counts = np.bincount(arr, minlength=inst.nb)
            loads = np.bincount(arr, weights=inst.sizes.astype(float),
                                minlength=inst.nb)
            bad = set(np.flatnonzero((counts > inst.limits.ub)
                                     | (loads > inst.limits.cb)).tolist())
            out = repair(inst, before)
            assert validate_assignment(inst, out).ok
            moved = np.flatnonzero(out.block_of != before.block_of)
            if not bad:
                assert moved.size == 0


class TestRun:
    def test_single_transaction(self):
        inst = make_instance([100])
        stub = affine_stub()
        result = run(inst, stub, small_config())
        assert result.recommended_block_size == 1
        expected = total_processing_time(inst, result.best.assignment, stub)
        assert result.best_fitness == pytest.approx(expected)

    def test_determinism_bit_identical(self):
        inst = make_instance([50, 120, 80, 200, 30, 150], lb=2, ub=4)
        stub = affine_stub()
        config = small_config(seed=77)
        a = run(inst, stub, config)
        b = run(inst, stub, config)
        assert a.best_fitness == b.best_fitness
        assert a.best.assignment == b.best.assignment
        assert a.fitness_history == b.fitness_history
        assert a.generations_run == b.generations_run

    def test_history_non_increasing_and_min(self):
        inst = make_instance([60, 70, 80, 90, 110], lb=2, ub=4)
        result = run(inst, affine_stub(), small_config(seed=3))
        hist = np.array(result.fitness_history)
        assert (np.diff(hist) <= 0).all()
        assert result.best_fitness == hist.min() == hist[-1]

    def test_near_optimal_on_small_instances(self, rng):
        stub = affine_stub()
        wins = 0
        runs = 40
        for i in range(runs):
            n = int(rng.integers(4, 9))
            sizes = rng.integers(50, 400, size=n).tolist()
            lb = (n + 2) // 3
            ub = int(rng.integers(lb, n + 1))
            nb = -(-n // lb) + 1
            while nb * ub < n:
                ub += 1
            inst = make_instance(sizes, lb=lb, ub=ub, cb=sum(sizes))
            assert inst.nb <= 4
            _, optimum = brute_force_optimum(inst, stub)
            result = run(inst, stub,
                         GaConfig(population_size=60, max_generations=150,
                                  stagnation_limit=50, rng_seed=1000 + i))
            if result.best_fitness <= optimum * 1.05 + 1e-12:
                wins += 1
        assert wins >= int(0.95 * runs)

    def test_recommendation_bounds(self, rng):
        stub = affine_stub()
        for _ in range(10):
            inst = random_instance(rng, n_max=20)
            result = run(inst, stub, small_config(seed=5, pop=16, gens=20))
            rec = result.recommended_block_size
            assert -(-inst.n // inst.nb) <= rec <= min(inst.limits.ub, inst.n)

    def test_stagnation_stops_early(self):
        inst = make_instance([100])
        config = GaConfig(population_size=8, max_generations=500,
                          stagnation_limit=5, rng_seed=0)
        result = run(inst, affine_stub(), config)
        assert result.generations_run <= 10

    def test_infeasible_instance_rejected_before_search(self):
        inst = make_instance([100, 200, 300], lb=1, ub=2)
        stub = affine_stub()
        object.__setattr__(inst.limits, "ub", 0)
        with pytest.raises(InfeasibleInstanceError):
            initialize_population(inst, stub, small_config())

    def test_unfitted_predictor_rejected(self):
        inst = make_instance([100])
        stub = affine_stub()
        stub.fitted = False
        from blocktune.errors import PredictorNotFittedError
        with pytest.raises(PredictorNotFittedError):
            run(inst, stub, small_config())


class TestBruteForce:
    def test_single_transaction_palette(self):
        inst = make_instance([100])
        stub = StubPredictor(lambda c, b, w: np.where(c > 0, 1.0, 0.0),
                             lambda c, b, w: np.zeros_like(c))
        assignment, value = brute_force_optimum(inst, stub)
        assert value == pytest.approx(1.0)
        # lexicographically smallest among the nb equal options
        assert assignment.block_of.tolist() == [0]

    def test_relabeling_symmetry(self):
        stub = affine_stub()
        inst = make_instance([100, 150, 200], lb=2)
        assignment, value = brute_force_optimum(inst, stub)
        perm = np.array([1, 0, 2] + list(range(3, inst.nb)))[:inst.nb]
        relabeled = AssignmentMatrix(perm[assignment.block_of], inst.nb)
        assert total_processing_time(inst, relabeled, stub) == pytest.approx(value)

    def test_matches_hand_enumeration(self):
        # three transactions, lb = 2 -> nb = ceil(3/2) + 1 = 3 blocks
        f = lambda c, b, w: 0.05 + 0.02 * c * c
        g = lambda c, b, w: b / w
        stub = StubPredictor(f, g)
        inst = make_instance([100, 200, 300], bandwidths=(1e4,), lb=2, ub=2)
        import itertools
        best = None
        for combo in itertools.product(range(inst.nb), repeat=3):
            counts = np.bincount(combo, minlength=inst.nb)
            loads = np.bincount(combo, weights=np.array([100., 200., 300.]),
                                minlength=inst.nb)
            if (counts > 2).any() or (loads > inst.limits.cb).any():
                continue
            value = sum(0.05 + 0.02 * c * c + l / 1e4
                        for c, l in zip(counts, loads) if c > 0)
            if best is None or value < best[1] - 1e-15:
                best = (combo, value)
        assignment, value = brute_force_optimum(inst, stub)
        assert value == pytest.approx(best[1])

    def test_budget_refusal(self):
        inst = make_instance([10] * 12, lb=2, ub=12)
        with pytest.raises(EnumerationBudgetError):
            brute_force_optimum(inst, affine_stub(), budget=1000)

    def test_ga_never_better(self, rng):
        stub = affine_stub()
        for seed in range(5):
            sizes = rng.integers(20, 300, size=6).tolist()
            inst = make_instance(sizes, lb=3, ub=5)
            _, optimum = brute_force_optimum(inst, stub)
            result = run(inst, stub, small_config(seed=seed, pop=20, gens=40))
            assert result.best_fitness >= optimum - 1e-12


def test_config_validation():
    with pytest.raises(BlocktuneError):
        GaConfig(population_size=1)
    with pytest.raises(BlocktuneError):
        GaConfig(elitism_count=10, population_size=10)
    with pytest.raises(BlocktuneError):
        GaConfig(crossover_rate=1.5)
    assert GaConfig().effective_mutation_rate(1000) == pytest.approx(0.01)
    assert GaConfig().effective_mutation_rate(10) == pytest.approx(0.2)
    assert GaConfig(mutation_rate=0.3).effective_mutation_rate(10) == pytest.approx(0.3)
