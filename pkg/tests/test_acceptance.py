"""Acceptance suite: one test per release criterion, each printing a PASS line
with its wall-clock time. Tolerances are pinned here, not calibrated later."""

import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from formopt.archive import StudyArchive, study_from_json
from formopt.cli import main as cli_main
from formopt.design import (
    add_benchmark_runs,
    generate_space_filling,
    min_pairwise_distance,
    round_and_repair,
    sample_feasible_points,
)
from formopt.model import (
    aicc,
    build_candidate_effects,
    code_row,
    coded_space,
    decode_row,
    design_matrix,
    fit_wls,
    forward_selection,
    lasso_path,
)
from formopt.profiler import (
    DesirabilitySpec,
    maximize_desirability,
    midrank_cumulative,
    overall_desirability,
    random_table,
)
from formopt.study import as_fraction, max_run_heuristic, min_run_heuristic, new_table
from formopt.svem import fractional_weights, svem_fit, svem_fit_classical_equivalent

from conftest import BENCHMARK


def report(name: str, started: float) -> None:
    print(f"\nACCEPTANCE {name}: PASS ({time.monotonic() - started:.1f}s)")


def test_heuristics_match_published_run_sizes(lnp_study):
    started = time.monotonic()
    assert min_run_heuristic(lnp_study) == 19
    assert max_run_heuristic(lnp_study) == 34
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    report("heuristics 19/34 under 1s", started)


def test_design_feasibility_100_seeds(lnp_study):
    started = time.monotonic()
    for seed in range(100):
        design = round_and_repair(generate_space_filling(lnp_study, 23, seed=seed))
        table = design.table
        assert table.n_rows == 23
        assert not design.infeasible_rows
        for i in range(23):
            row = table.factor_row(i)
            for f in lnp_study.factors:
                if f.is_level_based:
                    assert row[f.name] in f.levels
                else:
                    assert f.low - 1e-12 <= row[f.name] <= f.high + 1e-12
            total = sum(as_fraction(row[f.name]) for f in lnp_study.mixture_factors)
            assert total == Fraction(1)
    design = round_and_repair(generate_space_filling(lnp_study, 23, seed=1))
    with_benchmark = add_benchmark_runs(design, [dict(BENCHMARK)],
                                        notes=["benchmark"], replicates=[2])
    assert with_benchmark.table.n_rows == 25
    assert with_benchmark.table.factor_row(23) == with_benchmark.table.factor_row(24)
    assert with_benchmark.table.exclude[23] is False
    elapsed = time.monotonic() - started
    assert elapsed < 30.0
    report(f"design feasibility 100 seeds in {elapsed:.1f}s", started)


def test_space_filling_beats_best_of_random(lnp_study):
    started = time.monotonic()
    rng = np.random.default_rng(314159)
    wins = 0
    trials = 100
    for t in range(trials):
        design = generate_space_filling(lnp_study, 23, seed=20_000 + t)
        rows = [design.table.factor_row(i) for i in range(23)]
        fff = min_pairwise_distance(lnp_study, rows)
        best_random = 0.0
        for _ in range(100):
            best_random = max(best_random, min_pairwise_distance(
                lnp_study, sample_feasible_points(lnp_study, 23, rng)))
        wins += fff > best_random
    assert wins >= 95, f"space-filling won only {wins}/100 trials"
    report(f"space filling beats best-of-100 random in {wins}/100 trials", started)


def test_pseudo_component_coding(lnp_study):
    started = time.monotonic()
    space = coded_space(lnp_study)
    assert space.mixture_denominator == pytest.approx(0.69, abs=0.0)
    coded = code_row(space, dict(BENCHMARK))
    assert coded["PEG"] == pytest.approx(0.0, abs=1e-15)
    decoded = decode_row(space, coded)
    for name, value in BENCHMARK.items():
        if isinstance(value, float):
            assert decoded[name] == pytest.approx(value, abs=1e-12)
    report("pseudo-component coding exact", started)


def test_base_learners_match_oracles():
    started = time.monotonic()
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(20), rng.normal(size=(20, 4))])
    y = rng.normal(size=20)
    w = rng.uniform(0.5, 2.0, 20)
    fit = fit_wls(X, y, w)
    beta_oracle = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y))
    assert np.abs(fit.coefficients - beta_oracle).max() < 1e-7

    results = lasso_path(X, y, w, lambdas=np.array([1e-12]))
    assert np.abs(results[0][1].dense(5) - beta_oracle).max() < 1e-4
    auto = lasso_path(X, y, w)
    assert auto[0][1].effect_indices == [0]

    assert aicc(10.0, 20, 2) == pytest.approx(20 * math.log(0.5) + 6 + 1.5, abs=1e-9)
    report("base learners vs oracles", started)


@pytest.fixture(scope="module")
def fitted_table(lnp_study):
    design = generate_space_filling(lnp_study, 23, seed=42)
    table = design.table
    rng = np.random.default_rng(17)
    space = coded_space(lnp_study)
    for i in range(table.n_rows):
        coded = code_row(space, table.factor_row(i))
        bump = {"H101": 1.0, "H102": 3.0, "H103": 0.0}[coded["Ionizable Lipid Type"]]
        table.responses["Potency"][i] = (55 + 25 * coded["Helper"] - 12 * coded["Ionizable"]
                                         + bump + rng.normal(0, 2.0))
        table.responses["Size"][i] = 100 - 20 * coded["Helper"] + rng.normal(0, 2.0)
    return table


def test_svem_reduction_oracle(lnp_study, fitted_table):
    started = time.monotonic()
    effects = build_candidate_effects(lnp_study)
    space = coded_space(lnp_study)
    degenerate = svem_fit_classical_equivalent(effects, space, fitted_table, "Potency")
    X, y, _, _ = design_matrix(effects, space, fitted_table, "Potency")
    classical = forward_selection(X, y, np.ones(len(y)), score="aicc")
    assert degenerate.members[0].effect_indices == classical.effect_indices
    assert np.abs(degenerate.members[0].coefficients - classical.coefficients).max() < 1e-10
    report("single-member all-ones ensemble equals classical forward selection", started)


def test_svem_determinism_and_weight_law(lnp_study, fitted_table):
    started = time.monotonic()
    effects = build_candidate_effects(lnp_study)
    space = coded_space(lnp_study)
    a = svem_fit(effects, space, fitted_table, "Potency", samples=200, seed=99)
    b = svem_fit(effects, space, fitted_table, "Potency", samples=200, seed=99)
    for fa, fb in zip(a.members, b.members):
        assert fa.effect_indices == fb.effect_indices
        assert np.array_equal(fa.coefficients, fb.coefficients)

    weights = fractional_weights(10_000, seed=123)
    assert abs(weights.train.mean() - 1.0) < 3.0 / math.sqrt(10_000)
    assert np.corrcoef(weights.train, weights.valid)[0, 1] < -0.5
    report("ensemble determinism and fractional-weight law", started)


def test_desirability_engine(lnp_study):
    started = time.monotonic()
    # closed-form oracle computed from the defining expression
    oracle = math.exp((math.log(0.9) + 0.2 * math.log(0.5)) / 1.2)
    assert overall_desirability([0.9, 0.5], [1.0, 0.2]) == pytest.approx(oracle, abs=1e-5)

    # analytic concave quadratic with a known interior maximizer
    from formopt.study import Factor, ResponseSpec, StudyDefinition
    from test_profiler import make_exact_model

    quad_study = StudyDefinition("quad", "2024-05-01", (
        Factor("A", "mixture", 0.05, 0.9, 1e-6),
        Factor("B", "mixture", 0.05, 0.9, 1e-6),
        Factor("C", "mixture", 0.05, 0.9, 1e-6),
        Factor("t", "continuous", 0.0, 1.0, 1e-6),
    ), (ResponseSpec("y", goal="maximize", importance=1.0),))

    def truth(coded):
        return 10.0 - (coded["A"] - 0.45) ** 2 - (coded["B"] - 0.35) ** 2 \
            - 0.5 * (coded["t"] - 0.2) ** 2

    quad_model = make_exact_model(quad_study, truth)
    target = {"A": 0.05 + 0.45 * 0.85, "B": 0.05 + 0.35 * 0.85, "t": 0.6}
    specs = [DesirabilitySpec("y", "maximize", low=8.0, high=10.5)]
    for seed in range(10):
        recipe = maximize_desirability({"y": quad_model}, specs, quad_study,
                                       seed=seed, n_starts=1500, n_refine=8)
        for name, value in target.items():
            assert recipe.settings[name] == pytest.approx(value, abs=1e-3), (seed, name)

    # locked optimum never beats the unlocked one (the conditional-optimum rule)
    def typed(coded):
        bump = {"H101": 0.1, "H102": 0.3, "H103": 0.0}[coded["Ionizable Lipid Type"]]
        return 0.4 * coded["Helper"] + bump

    typed_model = make_exact_model(lnp_study, typed, response="Potency")
    typed_specs = [DesirabilitySpec("Potency", "maximize", low=0.0, high=1.0)]
    free = maximize_desirability({"Potency": typed_model}, typed_specs, lnp_study,
                                 seed=3, n_starts=800, n_refine=5)
    locked = maximize_desirability({"Potency": typed_model}, typed_specs, lnp_study,
                                   locks={"Ionizable Lipid Type": "H103"},
                                   seed=3, n_starts=800, n_refine=5)
    assert locked.desirability <= free.desirability + 1e-9
    report("desirability engine: closed form, quadratic fixture, lock ordering", started)


def test_random_table_50000(lnp_study, fitted_table):
    started = time.monotonic()
    effects = build_candidate_effects(lnp_study)
    space = coded_space(lnp_study)
    models = {name: svem_fit(effects, space, fitted_table, name, samples=50, seed=5)
              for name in ("Potency", "Size")}
    specs = [DesirabilitySpec("Potency", "maximize", low=40, high=90, importance=1.0),
             DesirabilitySpec("Size", "minimize", low=70, high=110, importance=0.2)]
    rt = random_table(models, specs, lnp_study, n=50_000, seed=3)
    assert rt.n_rows == 50_000
    top = int(np.argmax(rt.desirability))
    assert round(float(rt.cumulative_probability[top]), 4) == 1.0
    values = rt.desirability
    perm = np.random.default_rng(0).permutation(len(values))
    direct = midrank_cumulative(values)
    assert np.allclose(midrank_cumulative(values[perm]), direct[perm])
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    report(f"random table 50,000 rows in {elapsed:.1f}s", started)


def test_method_comparison_directional():
    started = time.monotonic()
    from formopt.sim import SimConfig, builtin_generators, run_benchmark, summarize_benchmark

    gen = builtin_generators()
    effects = build_candidate_effects(gen.study)
    config = SimConfig()  # sizes 16/24/36, all methods, 30 replicates, seed 0
    results = run_benchmark(gen, config)
    for r in results:
        if r.available:
            assert 0.0 <= r.percent <= 100.0

    # the full model cannot be fit until the run size reaches the effect count
    for size in config.sizes:
        assert size < len(effects)
        cells = [r for r in results if r.method == "full" and r.size == size]
        assert cells and all(not r.available for r in cells)

    summary = summarize_benchmark(results)
    for size in config.sizes:
        test = next(o for o in summary.orderings
                    if o.size == size and o.better == "svem-forward")
        assert test.mean_difference > 0, f"size {size}: ensemble not ahead"
        assert test.p_value < 0.05, (
            f"size {size}: svem vs forward p={test.p_value:.4f}")
    # forward vs full comparisons apply only where full is fittable: nowhere
    # at these sizes, so the full-model clause is exercised by the NA check
    elapsed = time.monotonic() - started
    assert elapsed < 900.0
    report(f"method comparison directional in {elapsed / 60:.1f} min", started)


def test_workflow_round_trip(tmp_path):
    started = time.monotonic()
    from formopt.sim import builtin_generators
    from formopt.study import table_from_csv, table_to_csv

    gen = builtin_generators()
    runner = CliRunner()
    archive_dir = tmp_path / "archive"
    study_path = tmp_path / "study.json"
    from formopt.archive import study_to_json
    study_path.write_text(json.dumps(study_to_json(gen.study)))

    def run(*args):
        result = runner.invoke(cli_main, list(args), catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return json.loads(result.output.strip().splitlines()[-1])

    run("--archive", str(archive_dir), "study", "init", str(study_path))
    run("--archive", str(archive_dir), "design", "generate", "--n", "23",
        "--seed", "7", "--benchmark", json.dumps(BENCHMARK),
        "--benchmark-replicates", "2")

    # simulated readouts from the generating functions plus noise
    level_cols = {f.name for f in gen.study.factors if f.is_level_based}
    table = table_from_csv((archive_dir / "design.csv").read_text(),
                           [f.name for f in gen.study.factors],
                           [r.name for r in gen.study.responses], level_cols)
    rng = np.random.default_rng(2)
    for i in range(table.n_rows):
        row = table.factor_row(i)
        for name in ("Potency", "Size"):
            table.responses[name][i] = (gen.truths[name](row)
                                        + rng.normal(0, gen.noise_sd[name]))
    data_path = tmp_path / "data.csv"
    data_path.write_text(table_to_csv(table))
    run("--archive", str(archive_dir), "data", "import", str(data_path))

    weightings = [("max potency (1.0), min size (0.2)", 0.2),
                  ("max potency (size ignored)", 0.0),
                  ("max potency (1.0), min size (1.0)", 1.0)]

    def optimize_batch(tag: str, seed: int):
        for label, size_weight in weightings:
            args = ["--archive", str(archive_dir), "profile", "optimize",
                    "--weights", "Potency=1.0", "--label", f"{label} [{tag}]",
                    "--starts", "600", "--refine", "5", "--seed", str(seed)]
            if size_weight == 0.0:
                args += ["--goal", "Size=none"]
            else:
                args += ["--weights", f"Size={size_weight}"]
            run(*args)

    run("--archive", str(archive_dir), "fit", "--method", "svem-lasso",
        "--samples", "30", "--seed", "3")
    optimize_batch("svem-lasso", 13)

    run("--archive", str(archive_dir), "fit", "--method", "svem-forward",
        "--samples", "100", "--seed", "3")
    optimize_batch("svem-forward", 11)

    for level in ("H101", "H103"):
        run("--archive", str(archive_dir), "profile", "optimize",
            "--weights", "Potency=1.0", "--weights", "Size=0.2",
            "--lock", f"Ionizable Lipid Type={level}",
            "--label", f"{level} best: max potency (1.0), min size (0.2)",
            "--starts", "600", "--refine", "5", "--seed", "17")

    # the confirmation table: 6 candidates + 2 conditional optima
    # + benchmark control + best prior run = 10 rows
    out = run("--archive", str(archive_dir), "profile", "candidates")
    assert out["rows"] == 10
    text = (archive_dir / "candidates.csv").read_text()
    assert "benchmark control" in text
    assert "best run from first experiment" in text
    assert "H103 best" in text

    # archives round-trip byte-identically
    archive = StudyArchive.load(archive_dir)
    first = tmp_path / "copy1"
    second = tmp_path / "copy2"
    archive.save_all(first)
    StudyArchive.load(first).save_all(second)
    names = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert names == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    report("workflow round trip to the confirmation table", started)
