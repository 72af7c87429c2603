"""Command-line client: thin compositions of the core operations over a study
archive directory. Errors exit non-zero with a machine-readable JSON object on
stderr."""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .archive import StudyArchive, study_from_json, study_to_json
from .design import (
    add_benchmark_runs,
    augment_followup,
    generate_space_filling,
    randomize_order,
    round_and_repair,
)
from .model import build_candidate_effects, coded_space
from .profiler import (
    best_prior_runs,
    default_specs,
    export_candidates,
    maximize_desirability,
    profiler_trace,
    random_table,
    random_table_csv_rows,
    remember_setting,
)
from .study import (
    average_assay_columns,
    concat_experiments,
    max_run_heuristic,
    min_run_heuristic,
    table_from_csv,
    table_to_csv,
    validate_study,
)
from .svem import svem_fit


def fail(code: str, message: str, **extra) -> None:
    payload = {"error": code, "message": message}
    payload.update(extra)
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SystemExit:
            raise
        except Exception as exc:
            fail(type(exc).__name__, str(exc))
    return wrapper


def load_archive(archive_dir: str) -> StudyArchive:
    return StudyArchive.load(archive_dir)


def parse_weights(pairs: tuple[str, ...]) -> dict[str, float]:
    out: dict[str, float] = {}
    for pair in pairs:
        name, _, value = pair.rpartition("=")
        if not name:
            fail("BadOption", f"expected name=value, got {pair!r}")
        out[name] = float(value)
    return out


def parse_locks(pairs: tuple[str, ...]) -> dict:
    out: dict = {}
    for pair in pairs:
        name, _, value = pair.rpartition("=")
        if not name:
            fail("BadOption", f"expected factor=value, got {pair!r}")
        try:
            out[name] = float(value)
        except ValueError:
            out[name] = value
    return out


@click.group()
@click.option("--archive", "archive_dir", default=".", show_default=True,
              help="Study archive directory.")
@click.pass_context
def main(ctx, archive_dir):
    """Mixture-process formulation workbench."""
    ctx.obj = archive_dir


# ---------------------------------------------------------------------------
# study


@main.group()
def study():
    """Study definition operations."""


@study.command("validate")
@click.argument("study_json", type=click.Path(exists=True))
@guarded
def study_validate(study_json):
    data = json.loads(Path(study_json).read_text())
    report = validate_study(study_from_json(data))
    click.echo(json.dumps({"valid": report.ok, "violations": report.to_json()}))
    if not report.ok:
        sys.exit(1)


@study.command("heuristics")
@click.argument("study_json", type=click.Path(exists=True))
@guarded
def study_heuristics(study_json):
    definition = study_from_json(json.loads(Path(study_json).read_text()))
    click.echo(json.dumps({"min": min_run_heuristic(definition),
                           "max": max_run_heuristic(definition)}))


@study.command("init")
@click.argument("study_json", type=click.Path(exists=True))
@click.pass_obj
@guarded
def study_init(archive_dir, study_json):
    """Install a study definition into the archive."""
    definition = study_from_json(json.loads(Path(study_json).read_text()))
    report = validate_study(definition)
    if not report.ok:
        fail("InvalidStudy", "study definition is invalid",
             violations=report.to_json())
    archive = load_archive(archive_dir)
    archive.directory = Path(archive_dir)
    archive.save_study(definition, "study installed")
    click.echo(json.dumps({"ok": True, "revision": archive.revision}))


# ---------------------------------------------------------------------------
# design


@main.group()
def design():
    """Space-filling design construction."""


@design.command("generate")
@click.option("--n", required=True, type=int)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--oversample", default=50, type=int, show_default=True)
@click.option("--benchmark", "benchmarks", multiple=True,
              help="JSON factor settings for a control run; repeatable.")
@click.option("--benchmark-replicates", default=2, type=int, show_default=True,
              help="Replicates for the first benchmark recipe.")
@click.option("--randomize/--no-randomize", default=True, show_default=True)
@click.pass_obj
@guarded
def design_generate(archive_dir, n, seed, oversample, benchmarks,
                    benchmark_replicates, randomize):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    result = generate_space_filling(definition, n, seed, oversample)
    result = round_and_repair(result)
    if benchmarks:
        recipes = [json.loads(b) for b in benchmarks]
        replicates = [benchmark_replicates] + [1] * (len(recipes) - 1)
        result = add_benchmark_runs(result, recipes,
                                    notes=["benchmark"] * len(recipes),
                                    replicates=replicates)
    if randomize:
        result = randomize_order(result, seed + 1)
    archive.save_design(result, f"design generated n={n} seed={seed}")
    click.echo(json.dumps({"rows": result.table.n_rows,
                           "design": str(archive.path('design.csv')),
                           "revision": archive.revision}))


@design.command("augment")
@click.option("--prior", "prior_dir", required=True, type=click.Path(exists=True),
              help="Archive directory of the prior experiment.")
@click.option("--study", "study_json", required=True, type=click.Path(exists=True),
              help="Follow-up study definition JSON.")
@click.option("--n", required=True, type=int)
@click.option("--anchors", default=3, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.pass_obj
@guarded
def design_augment(archive_dir, prior_dir, study_json, n, anchors, seed):
    prior = load_archive(prior_dir)
    if prior.design is None:
        fail("MissingArtifact", "prior archive has no design.csv")
    new_def = study_from_json(json.loads(Path(study_json).read_text()))
    result = augment_followup(prior.design, new_def, n, anchors, seed)
    archive = load_archive(archive_dir)
    archive.directory = Path(archive_dir)
    archive.save_study(new_def, "follow-up study installed")
    archive.save_design(result, f"augmented design n={n} anchors={anchors}")
    click.echo(json.dumps({"rows": result.table.n_rows,
                           "revision": archive.revision}))


# ---------------------------------------------------------------------------
# data


@main.group()
def data():
    """Result-table operations."""


@data.command("import")
@click.argument("csv_path", type=click.Path(exists=True))
@click.pass_obj
@guarded
def data_import(archive_dir, csv_path):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    level_cols = {f.name for f in definition.factors if f.is_level_based}
    table = table_from_csv(Path(csv_path).read_text(),
                           [f.name for f in definition.factors],
                           [r.name for r in definition.responses], level_cols)
    archive.save_data(table, f"data imported from {csv_path}")
    click.echo(json.dumps({"rows": table.n_rows, "revision": archive.revision}))


@data.command("average")
@click.option("--columns", required=True, help="Comma-separated assay columns.")
@click.option("--out", required=True, help="Name of the averaged column.")
@click.pass_obj
@guarded
def data_average(archive_dir, columns, out):
    archive = load_archive(archive_dir)
    table = archive.require_data()
    result = average_assay_columns(table, [c.strip() for c in columns.split(",")], out)
    archive.save_data(result, f"assay average -> {out}")
    click.echo(json.dumps({"rows": result.n_rows, "revision": archive.revision}))


@data.command("concat")
@click.argument("csv_paths", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--labels", default=None, help="Comma-separated source labels.")
@click.option("--source-column", default="Source", show_default=True)
@click.pass_obj
@guarded
def data_concat(archive_dir, csv_paths, labels, source_column):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    level_cols = {f.name for f in definition.factors if f.is_level_based}
    tables = [table_from_csv(Path(p).read_text(),
                             [f.name for f in definition.factors],
                             [r.name for r in definition.responses], level_cols)
              for p in csv_paths]
    label_list = ([s.strip() for s in labels.split(",")] if labels else None)
    merged = concat_experiments(tables, source_column, label_list)
    archive.save_data(merged, f"concatenated {len(tables)} tables")
    click.echo(json.dumps({"rows": merged.n_rows, "revision": archive.revision}))


# ---------------------------------------------------------------------------
# fit


@main.command("fit")
@click.option("--response", default=None, help="Default: every response.")
@click.option("--method", default="svem-forward", show_default=True,
              type=click.Choice(["svem-forward", "svem-lasso", "forward-aicc", "full"]))
@click.option("--samples", default=200, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--force-mixture-mains", is_flag=True, default=False)
@click.option("--transform", default=None,
              type=click.Choice(["identity", "log", "logit"]))
@click.pass_obj
@guarded
def fit(archive_dir, response, method, samples, seed, force_mixture_mains, transform):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    table = archive.require_data()
    effects = build_candidate_effects(definition)
    space = coded_space(definition)
    names = [response] if response else [r.name for r in definition.responses]
    out = {}
    for name in names:
        spec = definition.response(name)
        model = svem_fit(effects, space, table, name,
                         response_transform=transform or spec.transform,
                         method=method, samples=samples, seed=seed,
                         force_mixture_mains=force_mixture_mains)
        archive.save_model(model)
        out[name] = {"members": len(model.members), "skipped": model.skipped_members,
                     "path": str(archive.path("models"))}
    click.echo(json.dumps({"models": out, "revision": archive.revision}))


# ---------------------------------------------------------------------------
# profile


@main.group()
def profile():
    """Prediction profiler operations."""


@profile.command("trace")
@click.option("--settings", required=True, help="JSON factor settings.")
@click.option("--factor", required=True)
@click.option("--grid", default=21, type=int, show_default=True)
@click.option("--weights", "weight_pairs", multiple=True, help="name=w; repeatable.")
@click.pass_obj
@guarded
def profile_trace(archive_dir, settings, factor, grid, weight_pairs):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    models = archive.require_models()
    table = archive.require_data()
    specs = default_specs(definition, table,
                          weights=parse_weights(weight_pairs) or None)
    trace = profiler_trace(models, specs, definition, json.loads(settings),
                           factor, grid)
    click.echo(json.dumps(trace.to_json()))


@profile.command("optimize")
@click.option("--weights", "weight_pairs", multiple=True, help="name=w; repeatable.")
@click.option("--goal", "goal_pairs", multiple=True,
              help="name=maximize|minimize|target|none; repeatable.")
@click.option("--lock", "lock_pairs", multiple=True, help="factor=value; repeatable.")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--label", default=None)
@click.option("--remember/--no-remember", default=True, show_default=True)
@click.option("--starts", default=5000, type=int, show_default=True)
@click.option("--refine", default=20, type=int, show_default=True)
@click.pass_obj
@guarded
def profile_optimize(archive_dir, weight_pairs, goal_pairs, lock_pairs, seed, label,
                     remember, starts, refine):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    models = archive.require_models()
    table = archive.require_data()
    goals = {}
    for pair in goal_pairs:
        name, _, value = pair.rpartition("=")
        goals[name] = value
    specs = default_specs(definition, table,
                          weights=parse_weights(weight_pairs) or None,
                          goals=goals or None)
    locks = parse_locks(lock_pairs)
    recipe = maximize_desirability(models, specs, definition, locks=locks, seed=seed,
                                   n_starts=starts, n_refine=refine,
                                   label=label or "optimum",
                                   model_tag=next(iter(models.values())).method)
    if remember:
        archive.save_store(remember_setting(archive.store, recipe),
                           f"remembered setting: {recipe.label}")
    click.echo(json.dumps({"candidate": recipe.to_json(),
                           "revision": archive.revision}))


@profile.command("random-table")
@click.option("--n", default=50_000, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--weights", "weight_pairs", multiple=True, help="name=w; repeatable.")
@click.pass_obj
@guarded
def profile_random_table(archive_dir, n, seed, weight_pairs):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    models = archive.require_models()
    table = archive.require_data()
    specs = default_specs(definition, table,
                          weights=parse_weights(weight_pairs) or None)
    rt = random_table(models, specs, definition, n=n, seed=seed)
    header, rows = random_table_csv_rows(rt, definition)
    lines = [",".join(header) + "\n"]
    for row in rows:
        lines.append(",".join(str(c) for c in row) + "\n")
    archive.save_random_table_csv("".join(lines), f"random table n={n}")
    click.echo(json.dumps({"rows": rt.n_rows,
                           "path": str(archive.path("random_table.csv")),
                           "revision": archive.revision}))


@profile.command("candidates")
@click.option("--include-benchmark/--no-benchmark", default=True, show_default=True)
@click.option("--include-best-prior/--no-best-prior", default=True, show_default=True)
@click.option("--prior-count", default=1, type=int, show_default=True)
@click.option("--replicates", default=1, type=int, show_default=True)
@click.pass_obj
@guarded
def profile_candidates(archive_dir, include_benchmark, include_best_prior,
                       prior_count, replicates):
    archive = load_archive(archive_dir)
    definition = archive.require_study()
    benchmarks = []
    prior = []
    if archive.data is not None:
        specs = default_specs(definition, archive.data)
        if include_benchmark:
            for i in range(archive.data.n_rows):
                if "benchmark" in archive.data.notes[i].lower():
                    row = archive.data.factor_row(i)
                    row["_label"] = "benchmark control"
                    if not any(all(row[f.name] == b[f.name] for f in definition.factors)
                               for b in benchmarks):
                        benchmarks.append(row)
        if include_best_prior:
            prior = best_prior_runs(definition, archive.data, specs, k=prior_count)
    table = export_candidates(archive.store, definition,
                              models=archive.models or None,
                              benchmarks=benchmarks, prior_rows=prior,
                              replicates=replicates)
    archive.save_candidates_csv(table)
    click.echo(json.dumps({"rows": table.n_rows,
                           "path": str(archive.path("candidates.csv")),
                           "revision": archive.revision}))


# ---------------------------------------------------------------------------
# sim


@main.group()
def sim():
    """Method-comparison simulation."""


@sim.command("run")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="JSON config (sizes, methods, replicates, seed, ...).")
@click.option("--out", default="sim_results.csv", show_default=True)
@click.pass_obj
@guarded
def sim_run(archive_dir, config_path, out):
    from .sim import SimConfig, builtin_generators, results_csv, run_benchmark

    config = SimConfig()
    if config_path:
        config = SimConfig.from_json(json.loads(Path(config_path).read_text()))
    results = run_benchmark(builtin_generators(), config)
    Path(out).write_text(results_csv(results))
    click.echo(json.dumps({"rows": len(results), "path": out}))


@sim.command("summarize")
@click.argument("results_path", type=click.Path(exists=True))
@click.option("--out", default="sim_summary.csv", show_default=True)
@guarded
def sim_summarize(results_path, out):
    from .sim import results_from_csv, summarize_benchmark, summary_csv

    results = results_from_csv(Path(results_path).read_text())
    summary = summarize_benchmark(results)
    Path(out).write_text(summary_csv(summary))
    ordering = [{"size": o.size, "better": o.better, "worse": o.worse,
                 "p": o.p_value, "significant": o.significant}
                for o in summary.orderings]
    click.echo(json.dumps({"path": out, "orderings": ordering}))


# ---------------------------------------------------------------------------
# serve


@main.command("serve")
@click.option("--port", default=8000, type=int, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_obj
@guarded
def serve(archive_dir, port, host):
    """Run the HTTP/JSON service over the archive."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(archive_dir), host=host, port=port)


if __name__ == "__main__":
    main()
