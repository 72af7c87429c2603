import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from formopt.design import (
    Design,
    OverlapError,
    add_benchmark_runs,
    augment_followup,
    generate_space_filling,
    min_pairwise_distance,
    randomize_order,
    round_and_repair,
    sample_feasible_point,
    sample_feasible_points,
    ternary_coordinates,
)
from formopt.study import Factor, ResponseSpec, StudyDefinition, as_fraction, new_table


def slab_centroid_grid_oracle(study, step=0.01):
    """Brute-force grid integration of the mixture slab centroid at the given step."""
    mix = study.mixture_factors
    units = int(round(1.0 / step))
    bounds = [(int(round(f.low / step)), int(round(f.high / step))) for f in mix]
    total = np.zeros(len(mix))
    count = 0
    rest = bounds[1:]

    def walk(i, remaining, prefix):
        nonlocal count, total
        if i == len(rest):
            lo, hi = bounds[0] if False else (0, 0)
            return
    # enumerate all but the last coordinate; the last is forced
    ranges = [range(lo, hi + 1) for lo, hi in bounds[:-1]]
    lo_last, hi_last = bounds[-1]
    for combo in itertools.product(*ranges):
        last = units - sum(combo)
        if lo_last <= last <= hi_last:
            total += np.array(list(combo) + [last], dtype=float) * step
            count += 1
    return total / count


def feasible(study, row, tol=1e-9):
    for f in study.factors:
        v = row[f.name]
        if f.is_level_based:
            if v not in f.levels:
                return False
        elif not (f.low - tol <= v <= f.high + tol):
            return False
    mix = study.mixture_factors
    if mix:
        if abs(sum(row[f.name] for f in mix) - 1.0) > 1e-6:
            return False
    return True


class TestFeasibleSampling:
    def test_forced_vertex(self):
        study = StudyDefinition("forced", "2024-01-01", (
            Factor("A", "mixture", 0.4, 0.9, 0.01),
            Factor("B", "mixture", 0.6, 0.95, 0.01),
        ), (ResponseSpec("y"),))
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = sample_feasible_point(study, rng)
            assert p["A"] == pytest.approx(0.4)
            assert p["B"] == pytest.approx(0.6)

    def test_worked_bounds_respected(self, lnp_study):
        rng = np.random.default_rng(1)
        for p in sample_feasible_points(lnp_study, 200, rng):
            assert feasible(lnp_study, p)
            assert 0.01 <= p["PEG"] <= 0.05

    def test_mean_matches_grid_centroid(self, lnp_study):
        rng = np.random.default_rng(7)
        pts = sample_feasible_points(lnp_study, 10_000, rng)
        mix = [f.name for f in lnp_study.mixture_factors]
        sample = np.array([[p[m] for m in mix] for p in pts])
        centroid = slab_centroid_grid_oracle(lnp_study, step=0.01)
        se = sample.std(axis=0, ddof=1) / math.sqrt(len(sample))
        for j, name in enumerate(mix):
            assert abs(sample[:, j].mean() - centroid[j]) < 3 * se[j] + 2e-3, name


class TestSpaceFilling:
    def test_worked_run_size(self, lnp_study):
        design = generate_space_filling(lnp_study, 23, seed=7)
        assert design.table.n_rows == 23
        for i in range(23):
            assert feasible(lnp_study, design.table.factor_row(i))

    def test_single_run_near_centroid(self, lnp_study):
        design = generate_space_filling(lnp_study, 1, seed=3)
        row = design.table.factor_row(0)
        centroid = slab_centroid_grid_oracle(lnp_study, step=0.01)
        for j, f in enumerate(lnp_study.mixture_factors):
            assert abs(row[f.name] - centroid[j]) < 0.1

    def test_deterministic(self, lnp_study):
        a = generate_space_filling(lnp_study, 23, seed=11)
        b = generate_space_filling(lnp_study, 23, seed=11)
        assert a.table.factors == b.table.factors
        assert a.table.run_ids == b.table.run_ids

    def test_beats_best_of_uniform_random(self, lnp_study):
        rng = np.random.default_rng(2024)
        wins = 0
        trials = 25
        for t in range(trials):
            design = generate_space_filling(lnp_study, 23, seed=1000 + t)
            rows = [design.table.factor_row(i) for i in range(23)]
            fff_dist = min_pairwise_distance(lnp_study, rows)
            best_random = 0.0
            for _ in range(100):
                rand_rows = sample_feasible_points(lnp_study, 23, rng)
                best_random = max(best_random, min_pairwise_distance(lnp_study, rand_rows))
            if fff_dist > best_random:
                wins += 1
        assert wins >= round(0.95 * trials)

    def test_categorical_levels_balanced(self, lnp_study):
        design = generate_space_filling(lnp_study, 23, seed=5)
        counts = {}
        for v in design.table.factors["Ionizable Lipid Type"]:
            counts[v] = counts.get(v, 0) + 1
        assert sorted(counts.values()) == [7, 8, 8]

    def test_block_labels_round_robin(self):
        study = StudyDefinition("blocked", "2024-02-01", (
            Factor("A", "mixture", 0.1, 0.9, 0.01),
            Factor("B", "mixture", 0.1, 0.9, 0.01),
            Factor("Day", "blocking", levels=("D1", "D2")),
        ), (ResponseSpec("y"),))
        design = generate_space_filling(study, 6, seed=1)
        assert design.table.factors["Day"] == ["D1", "D2", "D1", "D2", "D1", "D2"]

    def test_too_many_runs_for_grid(self):
        study = StudyDefinition("tiny", "2024-01-01", (
            Factor("A", "mixture", 0.0, 1.0, 0.5),
            Factor("B", "mixture", 0.0, 1.0, 0.5),
        ), (ResponseSpec("y"),))
        with pytest.raises(ValueError, match="distinct feasible"):
            generate_space_filling(study, 50, seed=0)


class TestRoundAndRepair:
    def test_raw_figure_row_repairs_to_exact_sum(self, lnp_study):
        table = new_table(lnp_study)
        table.append_row("r1", {
            "PEG": 0.0419548, "Helper": 0.243548, "Ionizable": 0.4536548,
            "Cholesterol": 0.2608424, "Ionizable Lipid Type": "H103",
            "N_P_ratio": 8.4312589, "flow rate": 2.75615,
        })
        design = round_and_repair(Design(lnp_study, table, seed=0))
        row = design.table.factor_row(0)
        total = sum(as_fraction(row[f.name]) for f in lnp_study.mixture_factors)
        assert total == Fraction(1)
        assert feasible(lnp_study, row)
        # each lipid moved by at most rounding + (m-1) repair steps
        raw = {"PEG": 0.0419548, "Helper": 0.243548, "Ionizable": 0.4536548,
               "Cholesterol": 0.2608424}
        for name, v in raw.items():
            assert abs(row[name] - v) <= 0.0001 / 2 + 3 * 0.0001 + 1e-12

    def test_on_grid_benchmark_unchanged(self, lnp_study, benchmark_settings):
        table = new_table(lnp_study)
        table.append_row("r1", benchmark_settings)
        design = round_and_repair(Design(lnp_study, table, seed=0))
        row = design.table.factor_row(0)
        for name in ("PEG", "Helper", "Ionizable", "Cholesterol"):
            assert row[name] == pytest.approx(benchmark_settings[name], abs=1e-12)

    def test_thirds_repair_within_one_step(self):
        study = StudyDefinition("thirds", "2024-01-01", (
            Factor("A", "mixture", 0.0, 1.0, 0.01),
            Factor("B", "mixture", 0.0, 1.0, 0.01),
            Factor("C", "mixture", 0.0, 1.0, 0.01),
        ), (ResponseSpec("y"),))
        table = new_table(study)
        third = 1.0 / 3.0
        table.append_row("r1", {"A": third, "B": third, "C": third})
        design = round_and_repair(Design(study, table, seed=0))
        row = design.table.factor_row(0)
        values = sorted(round(row[n], 2) for n in "ABC")
        assert values in ([0.33, 0.33, 0.34], [0.32, 0.34, 0.34])
        assert values == [0.33, 0.33, 0.34]
        assert sum(as_fraction(row[n]) for n in "ABC") == Fraction(1)

    def test_never_crosses_bounds_and_sum_exact(self, lnp_study):
        rng = np.random.default_rng(17)
        pts = sample_feasible_points(lnp_study, 200, rng)
        table = new_table(lnp_study)
        for i, p in enumerate(pts):
            table.append_row(f"r{i}", p)
        design = round_and_repair(Design(lnp_study, table, seed=0))
        assert design.infeasible_rows == []
        for i in range(design.table.n_rows):
            row = design.table.factor_row(i)
            assert feasible(lnp_study, row, tol=1e-12)
            total = sum(as_fraction(row[f.name]) for f in lnp_study.mixture_factors)
            assert total == Fraction(1)


class TestBenchmarks:
    def test_replicated_benchmark(self, lnp_study, benchmark_settings):
        design = generate_space_filling(lnp_study, 5, seed=1)
        out = add_benchmark_runs(design, [benchmark_settings], notes=["benchmark"],
                                 replicates=[2])
        assert out.table.n_rows == 7
        assert out.table.notes[-2:] == ["benchmark", "benchmark"]
        assert out.table.factor_row(5) == out.table.factor_row(6)
        assert out.table.exclude[-2:] == [False, False]

    def test_zero_benchmarks_unchanged(self, lnp_study):
        design = generate_space_filling(lnp_study, 5, seed=1)
        out = add_benchmark_runs(design, [])
        assert out.table.n_rows == 5
        assert out.table.factors == design.table.factors

    def test_out_of_range_flagged(self, lnp_study, benchmark_settings):
        bad = dict(benchmark_settings, PEG=0.08, Helper=0.26)
        design = generate_space_filling(lnp_study, 3, seed=1)
        out = add_benchmark_runs(design, [bad], notes=["legacy control"])
        assert out.table.exclude[-1] is True
        assert "outside factor range" in out.table.notes[-1]


class TestRandomize:
    def test_bijection(self, lnp_study):
        design = generate_space_filling(lnp_study, 12, seed=2)
        out = randomize_order(design, seed=99)
        key = lambda t, i: tuple(t.factors[n][i] for n in t.factor_names)
        before = sorted(key(design.table, i) for i in range(12))
        after = sorted(key(out.table, i) for i in range(12))
        assert before == after

    def test_fixed_seed_reproducible(self, lnp_study):
        design = generate_space_filling(lnp_study, 12, seed=2)
        a = randomize_order(design, seed=5)
        b = randomize_order(design, seed=5)
        assert a.table.factors == b.table.factors

    def test_run_ids_regenerated(self, lnp_study):
        design = generate_space_filling(lnp_study, 3, seed=2)
        out = randomize_order(design, seed=5)
        assert out.table.run_ids == ["02SEP22-LNP-1", "02SEP22-LNP-2", "02SEP22-LNP-3"]

    def test_uniform_over_permutations(self):
        study = StudyDefinition("perm", "2024-01-01", (
            Factor("A", "mixture", 0.0, 1.0, 0.05),
            Factor("B", "mixture", 0.0, 1.0, 0.05),
        ), (ResponseSpec("y"),))
        table = new_table(study)
        for i, a in enumerate((0.1, 0.2, 0.3, 0.4)):
            table.append_row(f"r{i}", {"A": a, "B": 1 - a})
        design = Design(study, table, seed=0)
        counts: dict[tuple, int] = {}
        n_shuffles = 10_000
        for s in range(n_shuffles):
            out = randomize_order(design, seed=s)
            key = tuple(out.table.factors["A"])
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 24
        p = 1.0 / 24.0
        sigma = math.sqrt(n_shuffles * p * (1 - p))
        for key, c in counts.items():
            assert abs(c - n_shuffles * p) < 5 * sigma, key


class TestAugment:
    def test_identical_region_replays_anchors(self, lnp_study):
        prior = generate_space_filling(lnp_study, 10, seed=4)
        out = augment_followup(prior, lnp_study, n_new=6, anchors=2, seed=9)
        assert out.table.n_rows == 8
        prior_rows = {tuple(round(prior.table.factors[n][i], 9) if isinstance(prior.table.factors[n][i], float)
                            else prior.table.factors[n][i] for n in prior.table.factor_names)
                      for i in range(10)}
        anchor_rows = [i for i in range(out.table.n_rows)
                       if "anchor" in out.table.notes[i]]
        assert len(anchor_rows) == 2
        for i in anchor_rows:
            key = tuple(round(out.table.factors[n][i], 9) if isinstance(out.table.factors[n][i], float)
                        else out.table.factors[n][i] for n in out.table.factor_names)
            assert key in prior_rows

    def test_disjoint_region_errors(self, lnp_study):
        shifted = StudyDefinition("next", "2024-03-01", (
            Factor("PEG", "mixture", 0.01, 0.05, 0.0001),
            Factor("Helper", "mixture", 0.1, 0.6, 0.0001),
            Factor("Ionizable", "mixture", 0.1, 0.6, 0.0001),
            Factor("Cholesterol", "mixture", 0.1, 0.6, 0.0001),
            Factor("Ionizable Lipid Type", "categorical", levels=("H101", "H102", "H103")),
            Factor("N_P_ratio", "continuous", 20.0, 30.0, 1.0),
            Factor("flow rate", "continuous", 1.0, 3.0, 1.0),
        ), lnp_study.responses)
        prior = generate_space_filling(lnp_study, 8, seed=4)
        with pytest.raises(OverlapError):
            augment_followup(prior, shifted, n_new=5, anchors=2, seed=1)

    def test_overlapping_region_anchors_inside_new_bounds(self, lnp_study):
        narrowed = StudyDefinition("next", "2024-03-01", (
            Factor("PEG", "mixture", 0.01, 0.05, 0.0001),
            Factor("Helper", "mixture", 0.2, 0.6, 0.0001),
            Factor("Ionizable", "mixture", 0.1, 0.5, 0.0001),
            Factor("Cholesterol", "mixture", 0.1, 0.6, 0.0001),
            Factor("Ionizable Lipid Type", "categorical", levels=("H101", "H102", "H103")),
            Factor("N_P_ratio", "continuous", 8.0, 14.0, 1.0),
            Factor("flow rate", "continuous", 1.0, 3.0, 1.0),
        ), lnp_study.responses)
        prior = generate_space_filling(lnp_study, 30, seed=4)
        out = augment_followup(prior, narrowed, n_new=6, anchors=3, seed=2)
        for i in range(out.table.n_rows):
            assert feasible(narrowed, out.table.factor_row(i))


class TestTernary:
    def test_benchmark_projection(self, lnp_study, benchmark_settings):
        table = new_table(lnp_study)
        table.append_row("r1", benchmark_settings)
        coords = ternary_coordinates(table, lnp_study, pair=("Ionizable", "Helper"))
        (a, b, rest), = coords[("Ionizable", "Helper")]
        assert (a, b) == (0.33, 0.33)
        assert rest == pytest.approx(0.34)

    def test_coordinates_sum_to_one(self, lnp_study):
        design = generate_space_filling(lnp_study, 8, seed=6)
        coords = ternary_coordinates(design.table, lnp_study)
        for triples in coords.values():
            for a, b, rest in triples:
                assert a + b + rest == pytest.approx(1.0)

    def test_four_lipids_give_six_pairings(self, lnp_study):
        design = generate_space_filling(lnp_study, 4, seed=6)
        coords = ternary_coordinates(design.table, lnp_study)
        assert len(coords) == 6

    def test_non_mixture_pair_rejected(self, lnp_study):
        design = generate_space_filling(lnp_study, 4, seed=6)
        with pytest.raises(ValueError):
            ternary_coordinates(design.table, lnp_study, pair=("PEG", "flow rate"))
