"""Record a real service session into a JSON fixture for the frontend tests.

Runs the full workflow in a temporary archive (study -> design -> simulated
data -> fit), then captures endpoint payloads with the test client.
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from formopt.archive import StudyArchive, study_from_json  # noqa: E402
from formopt.design import add_benchmark_runs, generate_space_filling, round_and_repair  # noqa: E402
from formopt.model import build_candidate_effects, coded_space  # noqa: E402
from formopt.service import create_app  # noqa: E402
from formopt.svem import svem_fit  # noqa: E402

STUDY = {
    "name": "LNP",
    "date": "2022-09-02",
    "factors": [
        {"name": "PEG", "role": "mixture", "low": 0.01, "high": 0.05, "granularity": 0.0001},
        {"name": "Helper", "role": "mixture", "low": 0.1, "high": 0.6, "granularity": 0.0001},
        {"name": "Ionizable", "role": "mixture", "low": 0.1, "high": 0.6, "granularity": 0.0001},
        {"name": "Cholesterol", "role": "mixture", "low": 0.1, "high": 0.6, "granularity": 0.0001},
        {"name": "Ionizable Lipid Type", "role": "categorical",
         "levels": ["H101", "H102", "H103"]},
        {"name": "N_P_ratio", "role": "continuous", "low": 6.0, "high": 14.0, "granularity": 1.0},
        {"name": "flow rate", "role": "continuous", "low": 1.0, "high": 3.0, "granularity": 1.0},
    ],
    "responses": [
        {"name": "Potency", "goal": "maximize", "importance": 1.0, "transform": "identity"},
        {"name": "Size", "goal": "minimize", "importance": 0.2, "transform": "identity"},
    ],
}

BENCHMARK = {"PEG": 0.01, "Helper": 0.33, "Ionizable": 0.33, "Cholesterol": 0.33,
             "Ionizable Lipid Type": "H101", "N_P_ratio": 10.0, "flow rate": 1.0}


def build_archive(directory: Path) -> None:
    study = study_from_json(STUDY)
    archive = StudyArchive(directory=directory)
    archive.save_study(study)
    design = round_and_repair(generate_space_filling(study, 23, seed=7))
    design = add_benchmark_runs(design, [BENCHMARK], notes=["benchmark"], replicates=[2])
    archive.save_design(design)
    table = design.table.copy()
    rng = np.random.default_rng(11)
    for i in range(table.n_rows):
        row = table.factor_row(i)
        bump = {"H101": 2.0, "H102": 6.0, "H103": 0.0}[row["Ionizable Lipid Type"]]
        table.responses["Potency"][i] = (
            50 + 40 * row["Helper"] + 220 * row["PEG"] - 18 * row["Ionizable"]
            + bump + 0.8 * (row["N_P_ratio"] - 10) * row["Helper"] + rng.normal(0, 2))
        table.responses["Size"][i] = (
            120 - 40 * row["Helper"] - 160 * row["PEG"] + rng.normal(0, 2))
    archive.save_data(table)
    effects = build_candidate_effects(study)
    space = coded_space(study)
    for response in ("Potency", "Size"):
        archive.save_model(svem_fit(effects, space, table, response,
                                    samples=60, seed=3))


def record(directory: Path) -> dict:
    client = TestClient(create_app(str(directory)))
    session: dict = {}
    session["study"] = client.get("/study").json()
    session["models"] = client.get("/models").json()
    session["trace_ionizable"] = client.post("/profiler/trace", json={
        "settings": BENCHMARK, "factor": "Ionizable", "grid": 11}).json()
    session["trace_type"] = client.post("/profiler/trace", json={
        "settings": BENCHMARK, "factor": "Ionizable Lipid Type"}).json()
    session["optimize"] = client.post("/profiler/optimize", json={
        "weights": {"Potency": 1.0, "Size": 0.2}, "seed": 5,
        "n_starts": 600, "n_refine": 5}).json()
    session["optimize_locked"] = client.post("/profiler/optimize", json={
        "weights": {"Potency": 1.0, "Size": 0.2},
        "locks": {"Ionizable Lipid Type": "H103"}, "seed": 5,
        "n_starts": 600, "n_refine": 5}).json()
    client.post("/random-table?n=3000", json={"seed": 2})
    session["ternary"] = client.get("/ternary").json()
    return session


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures" / "session.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        build_archive(Path(tmp) / "archive")
        session = record(Path(tmp) / "archive")
    out.write_text(json.dumps(session, indent=1, sort_keys=True))
    print(f"recorded session -> {out}")


if __name__ == "__main__":
    main()
