"""Single-study archive directory: definitions, design, data, fitted models,
candidates, and the random table, with an action log and a revision counter
for optimistic concurrency.

Layout:
    study.json
    design.csv, design-report.json
    data.csv, data.meta.json
    models/<response>.json
    candidates.csv
    random_table.csv
    revision.json
    log.txt            (ISO date-stamped actions, append-only)

Every writer is deterministic given in-memory state (sorted JSON keys, fixed
decimal formatting), so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .design import Design
from .profiler import CandidateRecipe, SettingsStore
from .study import (
    DataTable,
    Factor,
    ResponseSpec,
    StudyDefinition,
    table_from_csv,
    table_to_csv,
)
from .svem import EnsembleModel


class ArchiveError(RuntimeError):
    pass


class MissingArtifactError(ArchiveError):
    pass


class StaleRevisionError(ArchiveError):
    pass


def study_to_json(study: StudyDefinition) -> dict:
    factors = []
    for f in study.factors:
        entry: dict = {"name": f.name, "role": f.role}
        if f.is_level_based:
            entry["levels"] = list(f.levels)
        else:
            entry.update({"low": f.low, "high": f.high, "granularity": f.granularity})
        factors.append(entry)
    responses = []
    for r in study.responses:
        entry = {"name": r.name, "goal": r.goal, "importance": r.importance,
                 "transform": r.transform}
        if r.target is not None:
            entry["target"] = r.target
        if r.bounded01:
            entry["bounded01"] = True
        responses.append(entry)
    return {"name": study.name, "date": study.date, "factors": factors,
            "responses": responses}


def study_from_json(data: dict) -> StudyDefinition:
    factors = []
    for f in data["factors"]:
        if f["role"] in ("categorical", "blocking"):
            factors.append(Factor(f["name"], f["role"], levels=tuple(f["levels"])))
        else:
            factors.append(Factor(f["name"], f["role"], low=f["low"], high=f["high"],
                                  granularity=f.get("granularity", 0.01)))
    responses = tuple(
        ResponseSpec(r["name"], goal=r.get("goal", "maximize"),
                     importance=r.get("importance", 1.0),
                     transform=r.get("transform", "identity"),
                     target=r.get("target"), bounded01=r.get("bounded01", False))
        for r in data["responses"])
    return StudyDefinition(name=data["name"], date=data["date"],
                           factors=tuple(factors), responses=responses)


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def recipe_to_json(recipe: CandidateRecipe) -> dict:
    return recipe.to_json()


def recipe_from_json(data: dict) -> CandidateRecipe:
    return CandidateRecipe(label=data["label"], settings=data["settings"],
                           predictions=data["predictions"],
                           desirability=data["desirability"],
                           model_tag=data.get("model_tag", ""),
                           weights=data.get("weights", {}))


@dataclass
class StudyArchive:
    directory: Path
    study: StudyDefinition | None = None
    design: Design | None = None
    data: DataTable | None = None
    models: dict[str, EnsembleModel] = field(default_factory=dict)
    store: SettingsStore = field(default_factory=SettingsStore)
    revision: int = 0

    # -- path helpers ------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.directory / name

    # -- loading -----------------------------------------------------------

    @classmethod
    def load(cls, directory: str | Path) -> "StudyArchive":
        directory = Path(directory)
        archive = cls(directory=directory)
        if archive.path("revision.json").exists():
            archive.revision = json.loads(archive.path("revision.json").read_text())["revision"]
        if archive.path("study.json").exists():
            archive.study = study_from_json(json.loads(archive.path("study.json").read_text()))
        if archive.study is not None:
            level_cols = {f.name for f in archive.study.factors if f.is_level_based}
            factor_names = [f.name for f in archive.study.factors]
            response_names = [r.name for r in archive.study.responses]
            if archive.path("design.csv").exists():
                table = table_from_csv(archive.path("design.csv").read_text(),
                                       factor_names, response_names, level_cols)
                report = {}
                if archive.path("design-report.json").exists():
                    report = json.loads(archive.path("design-report.json").read_text())
                archive.design = Design(study=archive.study, table=table,
                                        seed=report.get("seed", 0),
                                        method=report.get("method", "fast-flexible-filling"),
                                        oversample=report.get("oversample", 50))
            if archive.path("data.csv").exists():
                meta = {}
                if archive.path("data.meta.json").exists():
                    meta = json.loads(archive.path("data.meta.json").read_text())
                responses = meta.get("responses", response_names)
                archive.data = table_from_csv(archive.path("data.csv").read_text(),
                                              factor_names, responses, level_cols)
        models_dir = archive.path("models")
        if models_dir.exists():
            for path in sorted(models_dir.glob("*.json")):
                model = EnsembleModel.from_json(json.loads(path.read_text()))
                archive.models[model.response] = model
        if archive.path("candidates.json").exists():
            payload = json.loads(archive.path("candidates.json").read_text())
            archive.store = SettingsStore(
                recipes=[recipe_from_json(r) for r in payload["recipes"]])
        return archive

    # -- saving ------------------------------------------------------------

    def log(self, action: str) -> None:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        with self.path("log.txt").open("a") as fh:
            fh.write(f"{stamp} {action}\n")

    def bump(self, action: str) -> None:
        self.revision += 1
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("revision.json").write_text(_dump_json({"revision": self.revision}))
        self.log(action)

    def check_revision(self, expected: int | None) -> None:
        if expected is not None and expected != self.revision:
            raise StaleRevisionError(
                f"archive revision is {self.revision}, caller expected {expected}")

    def save_study(self, study: StudyDefinition, action: str = "study saved") -> None:
        self.study = study
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("study.json").write_text(_dump_json(study_to_json(study)))
        self.bump(action)

    def save_design(self, design: Design, action: str = "design saved") -> None:
        self.design = design
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("design.csv").write_text(table_to_csv(design.table))
        self.path("design-report.json").write_text(_dump_json(design.report()))
        self.bump(action)

    def save_data(self, table: DataTable, action: str = "data saved") -> None:
        self.data = table
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("data.csv").write_text(table_to_csv(table))
        meta = {"factors": table.factor_names, "responses": table.response_names,
                "display": {}}
        self.path("data.meta.json").write_text(_dump_json(meta))
        self.bump(action)

    def save_model(self, model: EnsembleModel, action: str | None = None) -> None:
        self.models[model.response] = model
        models_dir = self.path("models")
        models_dir.mkdir(parents=True, exist_ok=True)
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in model.response)
        (models_dir / f"{safe}.json").write_text(_dump_json(model.to_json()))
        self.bump(action or f"model fitted: {model.response}")

    def save_store(self, store: SettingsStore, action: str = "candidates updated") -> None:
        self.store = store
        self.directory.mkdir(parents=True, exist_ok=True)
        payload = {"recipes": [recipe_to_json(r) for r in store.recipes]}
        self.path("candidates.json").write_text(_dump_json(payload))
        self.bump(action)

    def save_candidates_csv(self, table: DataTable,
                            action: str = "candidate table exported") -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("candidates.csv").write_text(table_to_csv(table))
        self.bump(action)

    def save_random_table_csv(self, text: str, action: str = "random table generated") -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path("random_table.csv").write_text(text)
        self.bump(action)

    # -- round trip --------------------------------------------------------

    ARTIFACTS = ("study.json", "design.csv", "design-report.json", "data.csv",
                 "data.meta.json", "candidates.json", "candidates.csv",
                 "random_table.csv", "revision.json", "log.txt")

    def save_all(self, target: str | Path | None = None) -> Path:
        """Write every loaded artifact to target (default: in place) without
        bumping the revision; used for archival copies and round-trip checks."""
        target = Path(target) if target is not None else self.directory
        target.mkdir(parents=True, exist_ok=True)
        if self.study is not None:
            (target / "study.json").write_text(_dump_json(study_to_json(self.study)))
        if self.design is not None:
            (target / "design.csv").write_text(table_to_csv(self.design.table))
            (target / "design-report.json").write_text(_dump_json(self.design.report()))
        if self.data is not None:
            (target / "data.csv").write_text(table_to_csv(self.data))
            meta = {"factors": self.data.factor_names,
                    "responses": self.data.response_names, "display": {}}
            (target / "data.meta.json").write_text(_dump_json(meta))
        if self.models:
            (target / "models").mkdir(exist_ok=True)
            for model in self.models.values():
                safe = "".join(c if c.isalnum() or c in "-_" else "_"
                               for c in model.response)
                (target / "models" / f"{safe}.json").write_text(_dump_json(model.to_json()))
        if self.store.recipes:
            payload = {"recipes": [recipe_to_json(r) for r in self.store.recipes]}
            (target / "candidates.json").write_text(_dump_json(payload))
        (target / "revision.json").write_text(_dump_json({"revision": self.revision}))
        if target != self.directory:
            for name in ("candidates.csv", "random_table.csv", "log.txt"):
                src = self.path(name)
                if src.exists():
                    shutil.copyfile(src, target / name)
        return target

    # -- conveniences ------------------------------------------------------

    def require_study(self) -> StudyDefinition:
        if self.study is None:
            raise MissingArtifactError("no study.json in the archive")
        return self.study

    def require_data(self) -> DataTable:
        if self.data is None:
            raise MissingArtifactError("no data.csv in the archive")
        return self.data

    def require_models(self) -> dict[str, EnsembleModel]:
        if not self.models:
            raise MissingArtifactError("no fitted models in the archive")
        return self.models
