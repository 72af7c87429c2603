"""HTTP/JSON service over a study archive.

Every JSON response carries the archive revision id; writers accept an
optional expected revision and answer 409 when it is stale. Validation
problems answer 400 with the violation report; missing artifacts answer 404.
"""

from __future__ import annotations

import threading
from typing import Any, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .archive import (
    MissingArtifactError,
    StaleRevisionError,
    StudyArchive,
    study_from_json,
    study_to_json,
)
from .design import Design, add_benchmark_runs, generate_space_filling, randomize_order, round_and_repair, ternary_coordinates, ternary_pairings
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
from .study import table_to_csv, table_from_csv, validate_study
from .svem import svem_fit


class StudyPayload(BaseModel):
    study: dict
    revision: Optional[int] = None


class BenchmarkPayload(BaseModel):
    settings: dict
    note: str = "benchmark"
    replicates: int = 1


class DesignRequest(BaseModel):
    n: int = Field(gt=0)
    seed: int = 0
    oversample: int = 50
    benchmarks: list[BenchmarkPayload] = Field(default_factory=list)
    randomize_seed: Optional[int] = None
    revision: Optional[int] = None


class DataPayload(BaseModel):
    csv: str
    revision: Optional[int] = None


class FitRequest(BaseModel):
    response: Optional[str] = None       # default: every response
    method: str = "svem-forward"
    samples: int = 200
    seed: int = 0
    force_mixture_mains: bool = False
    transform: Optional[str] = None      # default: per-response declared transform
    revision: Optional[int] = None


class TraceRequest(BaseModel):
    settings: dict
    factor: str
    grid: int = 21
    weights: dict[str, float] = Field(default_factory=dict)


class OptimizeRequest(BaseModel):
    weights: dict[str, float] = Field(default_factory=dict)
    goals: dict[str, str] = Field(default_factory=dict)
    locks: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    label: Optional[str] = None
    remember: bool = False
    n_starts: int = 5000
    n_refine: int = 20
    revision: Optional[int] = None


class RandomTableRequest(BaseModel):
    seed: int = 0
    weights: dict[str, float] = Field(default_factory=dict)
    revision: Optional[int] = None


def create_app(archive_dir: str) -> FastAPI:
    app = FastAPI(title="formopt service")
    lock = threading.Lock()
    state: dict[str, Any] = {"archive": StudyArchive.load(archive_dir)}

    def archive() -> StudyArchive:
        return state["archive"]

    def reload_archive() -> None:
        state["archive"] = StudyArchive.load(archive_dir)

    def fail(exc: Exception):
        if isinstance(exc, StaleRevisionError):
            raise HTTPException(status_code=409, detail=str(exc))
        if isinstance(exc, MissingArtifactError):
            raise HTTPException(status_code=404, detail=str(exc))
        raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/study")
    def get_study():
        a = archive()
        if a.study is None:
            raise HTTPException(status_code=404, detail="no study defined")
        return {"revision": a.revision, "study": study_to_json(a.study)}

    @app.put("/study")
    def put_study(payload: StudyPayload):
        with lock:
            a = archive()
            try:
                a.check_revision(payload.revision)
                study = study_from_json(payload.study)
            except (StaleRevisionError, KeyError, TypeError, ValueError) as exc:
                fail(exc if isinstance(exc, StaleRevisionError)
                     else ValueError(f"malformed study: {exc}"))
            report = validate_study(study)
            if not report.ok:
                raise HTTPException(status_code=400,
                                    detail={"violations": report.to_json()})
            a.save_study(study)
            return {"revision": a.revision, "ok": True}

    @app.post("/design")
    def post_design(req: DesignRequest):
        with lock:
            a = archive()
            try:
                a.check_revision(req.revision)
                study = a.require_study()
                design = generate_space_filling(study, req.n, req.seed, req.oversample)
                design = round_and_repair(design)
                if req.benchmarks:
                    design = add_benchmark_runs(
                        design,
                        [b.settings for b in req.benchmarks],
                        notes=[b.note for b in req.benchmarks],
                        replicates=[b.replicates for b in req.benchmarks])
                if req.randomize_seed is not None:
                    design = randomize_order(design, req.randomize_seed)
                a.save_design(design, f"design generated n={req.n} seed={req.seed}")
            except Exception as exc:
                fail(exc)
            return {"revision": a.revision, "n_rows": design.table.n_rows,
                    "report": design.report(), "csv": table_to_csv(design.table)}

    @app.get("/design")
    def get_design():
        a = archive()
        if a.design is None:
            raise HTTPException(status_code=404, detail="no design generated")
        return {"revision": a.revision, "report": a.design.report(),
                "csv": table_to_csv(a.design.table)}

    @app.put("/data")
    def put_data(payload: DataPayload):
        with lock:
            a = archive()
            try:
                a.check_revision(payload.revision)
                study = a.require_study()
                level_cols = {f.name for f in study.factors if f.is_level_based}
                table = table_from_csv(payload.csv,
                                       [f.name for f in study.factors],
                                       [r.name for r in study.responses],
                                       level_cols)
                a.save_data(table, f"data imported rows={table.n_rows}")
            except Exception as exc:
                fail(exc)
            return {"revision": a.revision, "n_rows": table.n_rows}

    @app.post("/fit")
    def post_fit(req: FitRequest):
        with lock:
            a = archive()
            try:
                a.check_revision(req.revision)
                study = a.require_study()
                table = a.require_data()
                effects = build_candidate_effects(study)
                space = coded_space(study)
                names = ([req.response] if req.response
                         else [r.name for r in study.responses])
                fitted = {}
                for name in names:
                    spec = study.response(name)
                    transform = req.transform or spec.transform
                    model = svem_fit(effects, space, table, name,
                                     response_transform=transform,
                                     method=req.method, samples=req.samples,
                                     seed=req.seed,
                                     force_mixture_mains=req.force_mixture_mains)
                    a.save_model(model)
                    fitted[name] = {"method": model.method,
                                    "members": len(model.members),
                                    "skipped": model.skipped_members,
                                    "transform": model.transform}
            except Exception as exc:
                fail(exc)
            return {"revision": a.revision, "models": fitted}

    @app.get("/models")
    def get_models():
        a = archive()
        return {"revision": a.revision,
                "models": {name: {"method": m.method, "samples": m.samples,
                                  "members": len(m.members), "transform": m.transform,
                                  "effects": len(m.effects)}
                           for name, m in a.models.items()}}

    @app.post("/profiler/trace")
    def post_trace(req: TraceRequest):
        a = archive()
        try:
            study = a.require_study()
            models = a.require_models()
            table = a.require_data()
            specs = default_specs(study, table, weights=req.weights or None)
            trace = profiler_trace(models, specs, study, req.settings, req.factor,
                                   req.grid)
        except Exception as exc:
            fail(exc)
        return {"revision": a.revision, "trace": trace.to_json()}

    @app.post("/profiler/optimize")
    def post_optimize(req: OptimizeRequest):
        with lock:
            a = archive()
            try:
                a.check_revision(req.revision)
                study = a.require_study()
                models = a.require_models()
                table = a.require_data()
                specs = default_specs(study, table, weights=req.weights or None,
                                      goals=req.goals or None)
                recipe = maximize_desirability(
                    models, specs, study, locks=req.locks, seed=req.seed,
                    n_starts=req.n_starts, n_refine=req.n_refine,
                    label=req.label or "optimum",
                    model_tag=next(iter(models.values())).method)
                if req.remember:
                    a.save_store(remember_setting(a.store, recipe),
                                 f"remembered setting: {recipe.label}")
            except Exception as exc:
                fail(exc)
            return {"revision": a.revision, "candidate": recipe.to_json()}

    @app.post("/random-table")
    def post_random_table(req: RandomTableRequest | None = None,
                          n: int = Query(default=50_000, gt=0)):
        req = req or RandomTableRequest()
        with lock:
            a = archive()
            try:
                a.check_revision(req.revision)
                study = a.require_study()
                models = a.require_models()
                table = a.require_data()
                specs = default_specs(study, table, weights=req.weights or None)
                rt = random_table(models, specs, study, n=n, seed=req.seed)
                header, rows = random_table_csv_rows(rt, study)
                lines = [",".join(header) + "\n"]
                for row in rows:
                    lines.append(",".join(str(c) for c in row) + "\n")
                text = "".join(lines)
                a.save_random_table_csv(text, f"random table n={n}")
                state["random_table"] = (a.revision, rt)
            except Exception as exc:
                fail(exc)

            def stream():
                yield from lines

            return StreamingResponse(stream(), media_type="text/csv",
                                     headers={"X-Archive-Revision": str(a.revision),
                                              "X-Row-Count": str(rt.n_rows)})

    @app.get("/candidates")
    def get_candidates(include_benchmark: bool = True, include_best_prior: bool = True,
                       prior_count: int = 1):
        a = archive()
        try:
            study = a.require_study()
            benchmarks = []
            prior = []
            if a.data is not None:
                specs = default_specs(study, a.data)
                if include_benchmark:
                    for i in range(a.data.n_rows):
                        if "benchmark" in a.data.notes[i].lower():
                            row = a.data.factor_row(i)
                            row["_label"] = "benchmark control"
                            if not any(all(row[f.name] == b[f.name]
                                           for f in study.factors) for b in benchmarks):
                                benchmarks.append(row)
                if include_best_prior and any(v is not None for col in
                                              a.data.responses.values() for v in col):
                    prior = best_prior_runs(study, a.data, specs, k=prior_count)
            table = export_candidates(a.store, study, models=a.models or None,
                                      benchmarks=benchmarks, prior_rows=prior)
        except Exception as exc:
            fail(exc)
        return {"revision": a.revision, "csv": table_to_csv(table),
                "rows": [table.row(i) for i in range(table.n_rows)]}

    @app.get("/ternary")
    def get_ternary(pair: Optional[str] = None, max_points: int = 10_000):
        a = archive()
        try:
            study = a.require_study()
            cached = state.get("random_table")
            if cached is not None and cached[0] == a.revision:
                rt = cached[1]
            else:
                rt = None
            pairs = ternary_pairings(study)
            if pair:
                names = tuple(p.strip() for p in pair.split(","))
                if len(names) != 2:
                    raise ValueError("pair must be 'A,B'")
                pairs = [names]
            if rt is not None:
                stride = max(1, rt.n_rows // max_points)
                idx = list(range(0, rt.n_rows, stride))
                payload = {}
                for a_name, b_name in pairs:
                    if (a_name, b_name) in rt.ternary:
                        coords = rt.ternary[(a_name, b_name)][idx]
                    elif (b_name, a_name) in rt.ternary:
                        coords = rt.ternary[(b_name, a_name)][idx][:, [1, 0, 2]]
                    else:
                        raise ValueError(f"({a_name}, {b_name}) are not mixture factors")
                    payload["|".join((a_name, b_name))] = {
                        "a": coords[:, 0].tolist(), "b": coords[:, 1].tolist(),
                        "others": coords[:, 2].tolist()}
                color = {
                    "Desirability": rt.desirability[idx].tolist(),
                    "CumulativeProbability": rt.cumulative_probability[idx].tolist()}
                for name, values in rt.predictions.items():
                    color[f"Predicted {name}"] = values[idx].tolist()
                levels = {}
                for f in study.categorical_factors:
                    levels[f.name] = [rt.settings[i][f.name] for i in idx]
                return {"revision": a.revision, "source": "random-table",
                        "pairs": payload, "color": color, "levels": levels}
            table = a.data if a.data is not None else (
                a.design.table if a.design is not None else None)
            if table is None:
                raise MissingArtifactError("no random table, data, or design to project")
            coords = ternary_coordinates(table, study,
                                         pair=pairs[0] if pair else None)
            payload = {}
            for key, triples in coords.items():
                payload["|".join(key)] = {
                    "a": [t[0] for t in triples], "b": [t[1] for t in triples],
                    "others": [t[2] for t in triples]}
            return {"revision": a.revision, "source": "table", "pairs": payload}
        except Exception as exc:
            fail(exc)

    @app.post("/reload")
    def post_reload():
        with lock:
            reload_archive()
        return {"revision": archive().revision}

    return app
