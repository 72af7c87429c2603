"""Desirability functions, response traces, constrained maximization,
remembered settings, and the big random prediction table.

Desirability per response is a [0,1] ramp (maximize/minimize) or triangle
(target); the overall score is the importance-weighted geometric mean.
Optimization enumerates categorical level combinations and polishes the best
random starts with a renormalizing pattern search on the mixture slab.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .design import sample_feasible_points, ternary_pairings
from .model import code_row
from .study import DataTable, Factor, ResponseSpec, StudyDefinition, snap_to_granularity
from .svem import EnsembleModel, predict_rows


@dataclass(frozen=True)
class DesirabilitySpec:
    name: str
    goal: str                 # maximize | minimize | target | none
    low: float = 0.0          # anchor on the response scale
    high: float = 1.0
    target: float | None = None
    importance: float = 1.0


def default_specs(study: StudyDefinition, table: DataTable,
                  weights: dict[str, float] | None = None,
                  goals: dict[str, str] | None = None) -> list[DesirabilitySpec]:
    """Anchors default to the observed response range on the training table."""
    specs = []
    for r in study.responses:
        values = [v for v in table.responses.get(r.name, []) if v is not None]
        if values:
            low, high = min(values), max(values)
            if high <= low:
                high = low + 1.0
        else:
            low, high = 0.0, 1.0
        goal = (goals or {}).get(r.name, r.goal)
        importance = (weights or {}).get(r.name, r.importance)
        specs.append(DesirabilitySpec(name=r.name, goal=goal, low=low, high=high,
                                      target=r.target, importance=importance))
    return specs


def desirability(value: float, spec: DesirabilitySpec) -> float:
    """Clamped ramp / triangle score in [0, 1]."""
    lo, hi = spec.low, spec.high
    if spec.goal == "maximize":
        if value <= lo:
            return 0.0
        if value >= hi:
            return 1.0
        return (value - lo) / (hi - lo)
    if spec.goal == "minimize":
        if value <= lo:
            return 1.0
        if value >= hi:
            return 0.0
        return (hi - value) / (hi - lo)
    if spec.goal == "target":
        t = spec.target if spec.target is not None else (lo + hi) / 2
        if value <= lo or value >= hi:
            return 0.0
        if value <= t:
            return (value - lo) / (t - lo) if t > lo else 1.0
        return (hi - value) / (hi - t) if hi > t else 1.0
    if spec.goal == "none":
        return 1.0
    raise ValueError(f"unknown goal {spec.goal!r}")


def overall_desirability(d: list[float], weights: list[float]) -> float:
    """Importance-weighted geometric mean; any zero component zeroes the whole."""
    total = sum(weights)
    if total <= 0:
        raise ValueError("at least one positive importance weight required")
    acc = 0.0
    for di, wi in zip(d, weights):
        if wi == 0:
            continue
        if di <= 0.0:
            return 0.0
        acc += wi * math.log(di)
    return math.exp(acc / total)


def _desirability_matrix(values: np.ndarray, spec: DesirabilitySpec) -> np.ndarray:
    lo, hi = spec.low, spec.high
    if spec.goal == "maximize":
        return np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    if spec.goal == "minimize":
        return np.clip((hi - values) / (hi - lo), 0.0, 1.0)
    if spec.goal == "target":
        t = spec.target if spec.target is not None else (lo + hi) / 2
        up = (values - lo) / (t - lo) if t > lo else np.ones_like(values)
        down = (hi - values) / (hi - t) if hi > t else np.ones_like(values)
        return np.clip(np.minimum(up, down), 0.0, 1.0)
    return np.ones_like(values)


class DesirabilityEngine:
    """Batched overall-desirability evaluation over fitted response models."""

    def __init__(self, models: dict[str, EnsembleModel], specs: list[DesirabilitySpec]):
        self.specs = [s for s in specs if s.goal != "none" and s.importance > 0]
        if not self.specs:
            raise ValueError("at least one response with an active goal is required")
        missing = [s.name for s in self.specs if s.name not in models]
        if missing:
            raise ValueError(f"no fitted model for: {', '.join(missing)}")
        self.models = models

    def predictions(self, rows: list[dict]) -> dict[str, np.ndarray]:
        from .model import effect_matrix
        from .response import inverse_transform

        cache: dict[tuple, np.ndarray] = {}
        out: dict[str, np.ndarray] = {}
        for s in self.specs:
            m = self.models[s.name]
            key = (id(m.effects), id(m.space))
            X = cache.get(key)
            if X is None:
                X = effect_matrix(m.effects, m.space, rows)
                cache[key] = X
            out[s.name] = inverse_transform(X @ m.mean_coefficients, m.transform)
        return out

    def overall(self, rows: list[dict]) -> np.ndarray:
        preds = self.predictions(rows)
        total_w = sum(s.importance for s in self.specs)
        log_acc = np.zeros(len(rows))
        dead = np.zeros(len(rows), dtype=bool)
        for s in self.specs:
            d = _desirability_matrix(preds[s.name], s)
            dead |= d <= 0.0
            with np.errstate(divide="ignore"):
                log_acc += s.importance * np.where(d > 0, np.log(np.maximum(d, 1e-300)), 0.0)
        out = np.exp(log_acc / total_w)
        out[dead] = 0.0
        return out


# ---------------------------------------------------------------------------
# Traces


def renormalize_mixture(study: StudyDefinition, settings: dict, name: str,
                        value: float, frozen: set[str] | None = None) -> dict | None:
    """Hold one mixture factor at value and rescale the others proportionally,
    clipping to bounds and redistributing; None when infeasible. Factors in
    frozen keep their current values (locked companions)."""
    frozen = frozen or set()
    mix = [f for f in study.mixture_factors if f.name != name and f.name not in frozen]
    factor = study.factor(name)
    if value < factor.low - 1e-12 or value > factor.high + 1e-12:
        return None
    frozen_total = sum(settings[f.name] for f in study.mixture_factors
                       if f.name in frozen and f.name != name)
    rest_target = 1.0 - value - frozen_total
    lows = np.array([f.low for f in mix])
    highs = np.array([f.high for f in mix])
    if rest_target < lows.sum() - 1e-12 or rest_target > highs.sum() + 1e-12:
        return None
    current = np.array([settings[f.name] for f in mix], dtype=float)
    if current.sum() <= 0:
        current = lows + 1e-9
    v = current * (rest_target / current.sum())
    for _ in range(8 * max(len(mix), 1)):
        clipped = np.clip(v, lows, highs)
        resid = rest_target - clipped.sum()
        if abs(resid) < 1e-12:
            break
        room = (highs - clipped) if resid > 0 else (clipped - lows)
        free = room > 1e-15
        if not free.any():
            return None
        clipped[free] += resid * room[free] / room[free].sum()
        v = clipped
    else:
        return None
    out = dict(settings)
    out[name] = value
    for f, val in zip(mix, np.clip(v, lows, highs)):
        out[f.name] = float(val)
    return out


@dataclass
class Trace:
    factor: str
    grid: list
    responses: dict[str, list]
    desirability: list
    feasible: list[bool]

    def to_json(self) -> dict:
        return {"factor": self.factor, "grid": self.grid, "responses": self.responses,
                "desirability": self.desirability, "feasible": self.feasible}


def profiler_trace(models: dict[str, EnsembleModel], specs: list[DesirabilitySpec],
                   study: StudyDefinition, base: dict, factor: str,
                   grid_size: int = 21) -> Trace:
    """Predicted responses and overall desirability along one factor sweep,
    all other factors held at the base settings (mixture companions
    renormalized proportionally)."""
    f = study.factor(factor)
    engine = DesirabilityEngine(models, specs)
    if f.is_level_based:
        grid: list = list(f.levels)
        rows = [dict(base, **{factor: level}) for level in f.levels]
        feasible = [True] * len(rows)
    else:
        grid = list(np.linspace(f.low, f.high, grid_size))
        rows, feasible = [], []
        for v in grid:
            if f.role == "mixture":
                row = renormalize_mixture(study, base, factor, float(v))
            else:
                row = dict(base, **{factor: float(v)})
            feasible.append(row is not None)
            rows.append(row if row is not None else dict(base))
    preds = engine.predictions(rows)
    overall = engine.overall(rows)
    responses = {name: [float(v) if feasible[i] else None for i, v in enumerate(col)]
                 for name, col in preds.items()}
    return Trace(factor=factor, grid=grid, responses=responses,
                 desirability=[float(v) if feasible[i] else None
                               for i, v in enumerate(overall)],
                 feasible=feasible)


# ---------------------------------------------------------------------------
# Maximization


@dataclass
class CandidateRecipe:
    label: str
    settings: dict
    predictions: dict[str, float]
    desirability: float
    model_tag: str
    weights: dict[str, float]

    def to_json(self) -> dict:
        return {"label": self.label, "settings": self.settings,
                "predictions": self.predictions, "desirability": self.desirability,
                "model_tag": self.model_tag, "weights": self.weights}


def _check_locks(study: StudyDefinition, locks: dict) -> None:
    for name, value in locks.items():
        f = study.factor(name)
        if f.is_level_based:
            if value not in f.levels:
                raise ValueError(f"lock {name}={value!r} is not a level of {f.levels}")
        else:
            if not (f.low - 1e-9 <= float(value) <= f.high + 1e-9):
                raise ValueError(f"lock {name}={value} outside [{f.low}, {f.high}]")
    mix = study.mixture_factors
    pinned = [f for f in mix if f.name in locks]
    if pinned:
        pinned_sum = sum(float(locks[f.name]) for f in pinned)
        free = [f for f in mix if f.name not in locks]
        lo = pinned_sum + sum(f.low for f in free)
        hi = pinned_sum + sum(f.high for f in free)
        if lo > 1.0 + 1e-9 or hi < 1.0 - 1e-9:
            raise ValueError("locked mixture values leave no feasible slab")


def _pattern_search(engine: DesirabilityEngine, study: StudyDefinition,
                    starts: list[dict], locks: dict, seed: int,
                    tol_fraction: float = 1e-6) -> tuple[dict, float]:
    """Batched coordinate pattern search. Mixture moves renormalize the free
    companions; steps halve on stall down to tol_fraction of each range."""
    frozen_mix = {f.name for f in study.mixture_factors if f.name in locks}
    mix = [f for f in study.mixture_factors if f.name not in locks]
    cont = [f for f in study.continuous_factors if f.name not in locks]
    movable: list[Factor] = mix + cont
    states = [dict(s) for s in starts]
    values = engine.overall(states)
    if not movable:
        best = int(np.argmax(values))
        return states[best], float(values[best])
    steps = {f.name: 0.25 * f.span() for f in movable}
    floor = {f.name: tol_fraction * f.span() for f in movable}
    for _ in range(5000):
        probes: list[dict] = []
        owners: list[int] = []
        for i, state in enumerate(states):
            for f in movable:
                h = steps[f.name]
                for direction in (+1, -1):
                    v = state[f.name] + direction * h
                    if f.role == "mixture":
                        row = renormalize_mixture(study, state, f.name, v, frozen_mix)
                        if row is None:
                            continue
                    else:
                        if v < f.low - 1e-12 or v > f.high + 1e-12:
                            continue
                        row = dict(state, **{f.name: float(v)})
                    probes.append(row)
                    owners.append(i)
        if not probes:
            break
        scores = engine.overall(probes)
        improved = False
        for i, row, score in zip(owners, probes, scores):
            if score > values[i] + 1e-15:
                values[i] = score
                states[i] = row
                improved = True
        if not improved:
            if all(steps[f.name] <= floor[f.name] for f in movable):
                break
            for f in movable:
                steps[f.name] = max(steps[f.name] / 2, floor[f.name])
    best = int(np.argmax(values))
    return states[best], float(values[best])


def maximize_desirability(models: dict[str, EnsembleModel], specs: list[DesirabilitySpec],
                          study: StudyDefinition, locks: dict | None = None, seed: int = 0,
                          n_starts: int = 5000, n_refine: int = 20,
                          label: str = "optimum", model_tag: str = "",
                          round_result: bool = True) -> CandidateRecipe:
    """Best feasible recipe under the goals, weights, and locks.

    Per unlocked categorical level combination: n_starts feasible random
    draws, the best n_refine polished by pattern search; the winner is rounded
    to factor granularity (with mixture sum repair) and rescored.
    """
    locks = dict(locks or {})
    _check_locks(study, locks)
    engine = DesirabilityEngine(models, specs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7_771]))

    cats = study.categorical_factors
    free_cats = [f for f in cats if f.name not in locks]
    combos = list(itertools.product(*[f.levels for f in free_cats])) or [()]

    numeric_pins = {name: v for name, v in locks.items()
                    if not study.factor(name).is_level_based}
    best_row: dict | None = None
    best_value = -1.0
    for combo in combos:
        pins = dict(numeric_pins)
        pins.update({f.name: level for f, level in zip(free_cats, combo)})
        pins.update({name: v for name, v in locks.items()
                     if study.factor(name).is_level_based})
        for f in study.blocking_factors:
            pins.setdefault(f.name, f.levels[-1])  # reference level: no block shift
        starts = sample_feasible_points(study, n_starts, rng, pins)
        values = engine.overall(starts)
        top = np.argsort(values)[::-1][:n_refine]
        refined, value = _pattern_search(engine, study, [starts[int(i)] for i in top],
                                         locks, seed)
        if value > best_value:
            best_value = value
            best_row = refined

    assert best_row is not None
    if round_result:
        best_row = _round_recipe(study, best_row)
        best_value = float(engine.overall([best_row])[0])
    predictions = {name: float(predict_rows(models[name], [best_row], check_bounds=False)[0])
                   for name in models}
    return CandidateRecipe(label=label, settings=best_row, predictions=predictions,
                           desirability=best_value, model_tag=model_tag,
                           weights={s.name: s.importance for s in specs})


def _round_recipe(study: StudyDefinition, row: dict) -> dict:
    from .design import Design, round_and_repair
    from .study import new_table

    table = new_table(study)
    table.append_row("opt", {f.name: row[f.name] for f in study.factors})
    repaired = round_and_repair(Design(study, table, seed=0))
    return repaired.table.factor_row(0)


def weight_sensitivity(models: dict[str, EnsembleModel], specs: list[DesirabilitySpec],
                       study: StudyDefinition, weight_grid: list[dict[str, float]],
                       seed: int = 0, **kwargs) -> list[CandidateRecipe]:
    """Re-run the optimizer across a grid of importance weightings, one
    candidate per grid point."""
    out = []
    for i, weights in enumerate(weight_grid):
        adjusted = [replace(s, importance=weights.get(s.name, s.importance)) for s in specs]
        label = ", ".join(f"{k}={v:g}" for k, v in weights.items())
        out.append(maximize_desirability(models, adjusted, study, seed=seed + i,
                                         label=f"weights {label}", **kwargs))
    return out


# ---------------------------------------------------------------------------
# Remembered settings and candidate export


@dataclass
class SettingsStore:
    recipes: list[CandidateRecipe] = field(default_factory=list)

    def labels(self) -> list[str]:
        return [r.label for r in self.recipes]


def remember_setting(store: SettingsStore, recipe: CandidateRecipe,
                     label: str | None = None) -> SettingsStore:
    label = label or recipe.label
    if label in store.labels():
        raise ValueError(f"duplicate remembered-setting label {label!r}")
    out = SettingsStore(recipes=list(store.recipes))
    out.recipes.append(replace(recipe, label=label))
    return out


def best_prior_runs(study: StudyDefinition, table: DataTable,
                    specs: list[DesirabilitySpec], k: int = 1) -> list[dict]:
    """Rows of the experiment ranked by the overall desirability of their
    observed responses."""
    active = [s for s in specs if s.goal != "none" and s.importance > 0]
    scored = []
    for i in range(table.n_rows):
        if table.exclude[i]:
            continue
        d, w = [], []
        usable = True
        for s in active:
            v = table.responses[s.name][i]
            if v is None:
                usable = False
                break
            d.append(desirability(v, s))
            w.append(s.importance)
        if usable:
            scored.append((overall_desirability(d, w), i))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [dict(table.factor_row(i), _run_id=table.run_ids[i], _score=score)
            for score, i in scored[:k]]


def export_candidates(store: SettingsStore, study: StudyDefinition,
                      models: dict[str, EnsembleModel] | None = None,
                      benchmarks: list[dict] | None = None,
                      prior_rows: list[dict] | None = None,
                      replicates: int = 1) -> DataTable:
    """Confirmation-run candidate table: remembered optima first, then
    benchmark controls and the best prior runs. Columns follow (label,
    generating model, factors..., predicted responses, desirability)."""
    factor_names = [f.name for f in study.factors]
    table = DataTable(factor_names=["Optimal Candidate", "Generating Model"] + factor_names,
                      response_names=[f"Predicted {r.name}" for r in study.responses]
                      + ["Desirability"])

    def add(label: str, tag: str, settings: dict, predictions: dict[str, float] | None,
            desirability_value: float | None):
        for _ in range(max(1, replicates)):
            values = {"Optimal Candidate": label, "Generating Model": tag}
            values.update({name: settings[name] for name in factor_names})
            responses = {}
            for r in study.responses:
                pred = None if predictions is None else predictions.get(r.name)
                responses[f"Predicted {r.name}"] = pred
            responses["Desirability"] = desirability_value
            table.append_row(f"c{table.n_rows + 1}", values, responses)

    for recipe in store.recipes:
        add(recipe.label, recipe.model_tag, recipe.settings, recipe.predictions,
            recipe.desirability)
    for bench in benchmarks or []:
        predictions = None
        if models:
            predictions = {name: float(predict_rows(m, [bench], check_bounds=False)[0])
                           for name, m in models.items()}
        add(bench.get("_label", "benchmark control"), "", bench, predictions, None)
    for row in prior_rows or []:
        predictions = None
        if models:
            predictions = {name: float(predict_rows(m, [row], check_bounds=False)[0])
                           for name, m in models.items()}
        add(row.get("_label", "best run from first experiment"), "", row,
            predictions, row.get("_score"))
    return table


# ---------------------------------------------------------------------------
# Random prediction table


@dataclass
class RandomTable:
    settings: list[dict]
    predictions: dict[str, np.ndarray]
    desirability: np.ndarray
    cumulative_probability: np.ndarray
    ternary: dict[tuple[str, str], np.ndarray]
    seed: int

    @property
    def n_rows(self) -> int:
        return len(self.settings)


def midrank_cumulative(values: np.ndarray) -> np.ndarray:
    """Midrank plotting positions (rank - 1/2)/n, ties averaged."""
    n = len(values)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(n)
    sorted_vals = values[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # positions i..j share the average of their (k + 0.5) plotting ranks
        avg = (i + j) / 2 + 0.5
        ranks[order[i:j + 1]] = avg
        i = j + 1
    return ranks / n


def random_table(models: dict[str, EnsembleModel], specs: list[DesirabilitySpec],
                 study: StudyDefinition, n: int = 50_000, seed: int = 0) -> RandomTable:
    """n uniform feasible draws (no rounding) with per-response predictions,
    overall desirability, its midrank cumulative probability, and the ternary
    pairing coordinates."""
    engine = DesirabilityEngine(models, specs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424_242]))
    pins = {f.name: f.levels[-1] for f in study.blocking_factors} or None
    rows = sample_feasible_points(study, n, rng, pins)
    predictions = {name: predict_rows(m, rows, check_bounds=False)
                   for name, m in models.items()}
    overall = engine.overall(rows)
    cum = midrank_cumulative(overall)
    ternary: dict[tuple[str, str], np.ndarray] = {}
    if len(study.mixture_factors) >= 3:
        for a, b in ternary_pairings(study):
            xa = np.array([r[a] for r in rows])
            xb = np.array([r[b] for r in rows])
            ternary[(a, b)] = np.column_stack([xa, xb, 1.0 - xa - xb])
    return RandomTable(settings=rows, predictions=predictions, desirability=overall,
                       cumulative_probability=cum, ternary=ternary, seed=seed)


def random_table_csv_rows(rt: RandomTable, study: StudyDefinition):
    """Header + row iterator for the CSV export (factors..., predictions,
    desirability, cumulative probability)."""
    from .study import format_number

    factor_names = [f.name for f in study.factors]
    response_names = list(rt.predictions.keys())
    header = factor_names + [f"Predicted {n}" for n in response_names] + [
        "Desirability", "CumulativeProbability"]

    def rows():
        for i, settings in enumerate(rt.settings):
            row = [format_number(settings[n]) if not isinstance(settings[n], str)
                   else settings[n] for n in factor_names]
            row += [format_number(float(rt.predictions[n][i])) for n in response_names]
            row.append(format_number(float(rt.desirability[i])))
            row.append(format_number(round(float(rt.cumulative_probability[i]), 4)))
            yield row

    return header, rows()
