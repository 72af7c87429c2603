"""Space-filling design generation over the mixture slab x process space.

Designs are built by clustering an oversampled cloud of feasible candidate
points and keeping one representative per cluster, then rounded to factor
granularity with an exact sum-to-one repair for the mixture factors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from datetime import date as _date
from fractions import Fraction

import numpy as np

from .study import (
    DataTable,
    Factor,
    StudyDefinition,
    as_fraction,
    new_table,
    require_valid,
    snap_to_granularity,
)

DEFAULT_OVERSAMPLE = 50
MAX_OVERSAMPLE = 2000
REJECTION_BUDGET = 10_000


class SamplingError(RuntimeError):
    """Raised when rejection sampling cannot hit the feasible slab."""


class OverlapError(ValueError):
    """Raised when a follow-up region does not overlap the prior region."""


@dataclass
class Design:
    study: StudyDefinition
    table: DataTable
    seed: int
    method: str = "fast-flexible-filling"
    oversample: int = DEFAULT_OVERSAMPLE
    infeasible_rows: list[int] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "oversample": self.oversample,
            "n_runs": self.table.n_rows,
            "granularity": {f.name: f.granularity for f in self.study.factors
                            if not f.is_level_based},
            "date": self.study.date,
        }


def _mixture_arrays(study: StudyDefinition):
    mix = study.mixture_factors
    lows = np.array([f.low for f in mix])
    highs = np.array([f.high for f in mix])
    return mix, lows, highs


def _require_feasible_slab(study: StudyDefinition) -> None:
    mix = study.mixture_factors
    if not mix:
        return
    lows = sum(f.low for f in mix)
    highs = sum(f.high for f in mix)
    # equality is the degenerate slab that collapses to a single vertex
    if lows > 1.0 + 1e-12 or highs < 1.0 - 1e-12:
        raise SamplingError(f"infeasible mixture slab: sum of lows {lows}, sum of highs {highs}")


def sample_feasible_points(study: StudyDefinition, n: int, rng: np.random.Generator,
                           pins: dict | None = None) -> list[dict]:
    """Draw n points uniformly over the feasible region.

    Mixture coordinates are uniform on the slab {lows <= x <= highs, sum x = 1}
    via flat-Dirichlet draws with rejection against the bounds; continuous
    factors are uniform in range; categorical factors uniform over levels.
    Pinned factors are held at the given value.
    """
    _require_feasible_slab(study)
    pins = pins or {}
    mix, lows, highs = _mixture_arrays(study)
    free_ix = [i for i, f in enumerate(mix) if f.name not in pins]
    pinned_total = sum(pins[f.name] for f in mix if f.name in pins)

    points: list[dict] = []
    if mix:
        free_lows = lows[free_ix]
        free_highs = highs[free_ix]
        remaining = 1.0 - pinned_total
        if free_ix:
            if not (free_lows.sum() <= remaining + 1e-12 and remaining <= free_highs.sum() + 1e-12):
                raise SamplingError("pinned mixture values leave no feasible slab")
        samples = np.empty((0, len(free_ix)))
        if len(free_ix) == 0:
            samples = np.empty((n, 0))
        elif abs(free_lows.sum() - remaining) <= 1e-12:
            samples = np.tile(free_lows, (n, 1))  # forced vertex
        elif abs(free_highs.sum() - remaining) <= 1e-12:
            samples = np.tile(free_highs, (n, 1))  # forced vertex
        elif len(free_ix) == 1:
            samples = np.full((n, 1), remaining)
        else:
            batches = []
            got = 0
            drawn = 0
            budget = REJECTION_BUDGET * n
            while got < n:
                batch = max(n - got, 1) * 8
                if drawn + batch > budget:
                    batch = budget - drawn
                    if batch <= 0:
                        raise SamplingError(
                            "feasible-slab rejection sampling failed after "
                            f"{drawn} draws; review the mixture bounds")
                g = rng.dirichlet(np.ones(len(free_ix)), size=batch) * remaining
                drawn += batch
                ok = np.all((g >= free_lows - 1e-12) & (g <= free_highs + 1e-12), axis=1)
                kept = g[ok]
                got += len(kept)
                batches.append(kept)
            samples = np.concatenate(batches)[:n]
    for k in range(n):
        point: dict = {}
        if mix:
            j = 0
            for i, f in enumerate(mix):
                if f.name in pins:
                    point[f.name] = float(pins[f.name])
                else:
                    point[f.name] = float(samples[k, j])
                    j += 1
        for f in study.continuous_factors:
            if f.name in pins:
                point[f.name] = float(pins[f.name])
            else:
                point[f.name] = float(rng.uniform(f.low, f.high))
        for f in study.categorical_factors + study.blocking_factors:
            if f.name in pins:
                point[f.name] = pins[f.name]
            else:
                point[f.name] = f.levels[int(rng.integers(len(f.levels)))]
        points.append(point)
    return points


def sample_feasible_point(study: StudyDefinition, rng: np.random.Generator,
                          pins: dict | None = None) -> dict:
    return sample_feasible_points(study, 1, rng, pins)[0]


def standardize_rows(study: StudyDefinition, rows: list[dict]) -> np.ndarray:
    """Numeric coordinates for distance work: mixture as-is, continuous scaled
    to [0,1], categorical one-hot scaled so a level mismatch contributes 1."""
    cols: list[np.ndarray] = []
    for f in study.mixture_factors:
        cols.append(np.array([r[f.name] for r in rows], dtype=float))
    for f in study.continuous_factors:
        v = np.array([r[f.name] for r in rows], dtype=float)
        cols.append((v - f.low) / (f.high - f.low))
    for f in study.categorical_factors:
        for level in f.levels:
            cols.append(np.array([1.0 if r[f.name] == level else 0.0 for r in rows])
                        / math.sqrt(2.0))
    if not cols:
        return np.zeros((len(rows), 0))
    return np.column_stack(cols)


def min_pairwise_distance(study: StudyDefinition, rows: list[dict]) -> float:
    x = standardize_rows(study, rows)
    if len(rows) < 2:
        return math.inf
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    iu = np.triu_indices(len(rows), k=1)
    return float(np.sqrt(d2[iu].min()))


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 60) -> np.ndarray:
    """Plain Lloyd's algorithm with greedy k-means++ seeding; returns labels."""
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = x[int(rng.integers(n))]
            break
        probs = d2 / total
        pick = int(rng.choice(n, p=probs))
        centers[j] = x[pick]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = dist.argmin(axis=1)
        if np.array_equal(new_labels, labels) and _ > 0:
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:  # re-seed an empty cluster at the farthest point
                far = dist.min(axis=1).argmax()
                centers[j] = x[far]
                labels[far] = j
    return labels


def _project_mixture(values: np.ndarray, lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
    """Renormalize to sum one, then clip-and-redistribute against the bounds."""
    v = values.copy()
    s = v.sum()
    if s <= 0:
        v = lows + (1 - lows.sum()) / len(v)
    else:
        v = v / s
    for _ in range(8 * len(v)):
        clipped = np.clip(v, lows, highs)
        resid = 1.0 - clipped.sum()
        if abs(resid) < 1e-12:
            return clipped
        if resid > 0:
            room = highs - clipped
        else:
            room = clipped - lows
        free = room > 1e-15
        if not free.any():
            return clipped
        share = room[free] / room[free].sum()
        clipped[free] += resid * share
        v = clipped
    return np.clip(v, lows, highs)


def _count_feasible_grid_points(study: StudyDefinition, cap: int) -> int | None:
    """Distinct feasible settings at granularity, capped; None when uncountable cheaply.

    Only the equal-granularity mixture case is counted exactly (DP over integer
    compositions); other cases are treated as effectively unlimited.
    """
    mix = study.mixture_factors
    per_level = 1
    for f in study.continuous_factors:
        per_level *= int(round(f.span() / f.granularity)) + 1
        if per_level > cap:
            return None
    for f in study.categorical_factors:
        per_level *= len(f.levels)
        if per_level > cap:
            return None
    if not mix:
        return per_level
    gran = {f.granularity for f in mix}
    if len(gran) != 1:
        return None
    g = as_fraction(gran.pop())
    total_units = Fraction(1) - sum(as_fraction(f.low) for f in mix)
    if total_units % g != 0:
        return 0
    t = int(total_units / g)
    if t > 100_000:
        return None
    spans = [int(round(f.span() / float(g))) for f in mix]
    # DP over components; counts capped to avoid big integers
    counts = [1] + [0] * t
    for span in spans:
        acc = list(itertools.accumulate(counts))
        nxt = [0] * (t + 1)
        for s in range(t + 1):
            lo = s - span - 1
            nxt[s] = acc[s] - (acc[lo] if lo >= 0 else 0)
            if nxt[s] > cap:
                nxt[s] = cap + 1
        counts = nxt
    mixture_count = min(counts[t], cap + 1)
    return mixture_count * per_level


def _stratum_budgets(n: int, combos: list[tuple], rng: np.random.Generator) -> list[int]:
    base = n // len(combos)
    budgets = [base] * len(combos)
    extra = n - base * len(combos)
    for i in rng.permutation(len(combos))[:extra]:
        budgets[int(i)] += 1
    return budgets


def generate_space_filling(study: StudyDefinition, n: int, seed: int,
                           oversample: int = DEFAULT_OVERSAMPLE) -> Design:
    """Fast-flexible-filling style design: cluster oversampled feasible points
    and emit one representative per cluster.

    Categorical factors are handled by stratification: the run budget is split
    across level combinations as evenly as possible and clustering happens
    within each stratum. Deterministic given (study, n, seed, oversample).
    """
    require_valid(study)
    if n < 1:
        raise ValueError("n must be >= 1")
    oversample = max(2, min(int(oversample), MAX_OVERSAMPLE))
    distinct = _count_feasible_grid_points(study, cap=max(n, 4096))
    if distinct is not None and n > distinct:
        raise ValueError(f"{n} runs exceed the {distinct} distinct feasible points at granularity")

    rng = np.random.default_rng(np.random.SeedSequence([seed, n, oversample]))
    cat_factors = study.categorical_factors
    combos: list[tuple] = list(itertools.product(*[f.levels for f in cat_factors])) or [()]
    budgets = _stratum_budgets(n, combos, rng)

    mix, lows, highs = _mixture_arrays(study)
    rows: list[dict] = []
    restarts = 6
    for combo, budget in zip(combos, budgets):
        if budget == 0:
            continue
        pins = {f.name: level for f, level in zip(cat_factors, combo)}
        candidates = sample_feasible_points(study, budget * oversample, rng, pins or None)
        coords = standardize_rows(study, candidates)
        best_reps: list[dict] | None = None
        best_sep = -1.0
        for _ in range(restarts):
            labels = _kmeans(coords, budget, rng)
            reps: list[dict] = []
            for j in range(budget):
                members = [candidates[i] for i in range(len(candidates)) if labels[i] == j]
                if not members:
                    members = [candidates[int(rng.integers(len(candidates)))]]
                rep: dict = {}
                if mix:
                    centroid = np.array([[m[f.name] for f in mix] for m in members]).mean(axis=0)
                    centroid = _project_mixture(centroid, lows, highs)
                    for f, v in zip(mix, centroid):
                        rep[f.name] = float(v)
                for f in study.continuous_factors:
                    rep[f.name] = float(np.mean([m[f.name] for m in members]))
                for f, level in zip(cat_factors, combo):
                    rep[f.name] = level
                for f in study.blocking_factors:
                    rep[f.name] = f.levels[0]
                reps.append(rep)
            sep = min_pairwise_distance(study, reps)
            if sep > best_sep:
                best_sep = sep
                best_reps = reps
        rows.extend(best_reps or [])

    order = rng.permutation(len(rows))
    table = new_table(study)
    for i, k in enumerate(order):
        table.append_row(_run_id(study, i + 1), rows[int(k)])
    design = Design(study=study, table=table, seed=seed, oversample=oversample)
    _assign_blocks(design)
    return design


def _run_id(study: StudyDefinition, row_number: int) -> str:
    """date-name-rownumber run labels, e.g. 02SEP22-LNP-1."""
    try:
        d = _date.fromisoformat(study.date)
        stamp = d.strftime("%d%b%y").upper()
    except ValueError:
        stamp = study.date
    name = "".join(study.name.split())
    middle = f"-{name}" if name else ""
    return f"{stamp}{middle}-{row_number}"


def _assign_blocks(design: Design) -> None:
    """Round-robin block labels over the (already randomized) row order so
    factor settings stay balanced across days."""
    for f in design.study.blocking_factors:
        col = design.table.factors[f.name]
        for i in range(design.table.n_rows):
            col[i] = f.levels[i % len(f.levels)]


# ---------------------------------------------------------------------------
# Rounding and sum repair


def _round_row_mixture(study: StudyDefinition, row: dict,
                       granularity: dict[str, float]) -> tuple[dict, bool]:
    mix = study.mixture_factors
    units: dict[str, int] = {}
    fracs: dict[str, Fraction] = {}
    for f in mix:
        g = as_fraction(granularity[f.name])
        span_units = int(round(f.span() / granularity[f.name]))
        u = round((row[f.name] - f.low) / granularity[f.name])
        u = min(max(u, 0), span_units)
        units[f.name] = u
        fracs[f.name] = as_fraction(f.low) + u * g
    target = Fraction(1)
    steps_taken = {f.name: 0 for f in mix}
    max_steps = max(len(mix) - 1, 1)
    for _ in range(16 * len(mix)):
        residual = target - sum(fracs.values())
        if residual == 0:
            break
        direction = 1 if residual > 0 else -1
        best: Factor | None = None
        best_dist = -1.0
        for f in mix:
            g = as_fraction(granularity[f.name])
            if g > abs(residual):
                continue
            if steps_taken[f.name] >= max_steps:
                continue
            new_val = fracs[f.name] + direction * g
            if new_val < as_fraction(f.low) or new_val > as_fraction(f.high):
                continue
            # farthest from its bound in the needed direction
            dist = (f.high - float(fracs[f.name])) if direction > 0 else (float(fracs[f.name]) - f.low)
            if dist > best_dist:
                best_dist = dist
                best = f
        if best is None:
            # allow more steps on a single component before giving up
            if all(steps_taken[f.name] >= max_steps for f in mix):
                max_steps += 1
                continue
            return {f.name: float(fracs[f.name]) for f in mix}, False
        fracs[best.name] += direction * as_fraction(granularity[best.name])
        steps_taken[best.name] += 1
    else:
        return {f.name: float(fracs[f.name]) for f in mix}, False
    return {f.name: float(fracs[f.name]) for f in mix}, True


def round_and_repair(design: Design, granularity: dict[str, float] | None = None) -> Design:
    """Round every factor to its granularity and repair mixture sums to exactly one.

    Repair adjusts, one granularity step at a time, the component farthest from
    its bound in the needed direction, never crossing bounds. Rows that cannot
    be repaired within bounds are flagged infeasible.
    """
    study = design.study
    gran = {f.name: f.granularity for f in study.factors if not f.is_level_based}
    if granularity:
        gran.update(granularity)
    table = design.table.copy()
    infeasible: list[int] = []
    for i in range(table.n_rows):
        row = {name: table.factors[name][i] for name in table.factor_names}
        fixed, ok = _round_row_mixture(study, row, gran)
        for name, v in fixed.items():
            table.factors[name][i] = v
        if not ok:
            infeasible.append(i)
            table.exclude[i] = True
            if "infeasible" not in table.notes[i]:
                table.notes[i] = (table.notes[i] + "; " if table.notes[i] else "") + "infeasible after rounding"
        for f in study.continuous_factors:
            v = snap_to_granularity(row[f.name], f.low, gran[f.name])
            table.factors[f.name][i] = min(max(v, f.low), f.high)
    return Design(study=study, table=table, seed=design.seed, method=design.method,
                  oversample=design.oversample, infeasible_rows=infeasible)


# ---------------------------------------------------------------------------
# Benchmarks, randomization, augmentation


def _in_bounds(study: StudyDefinition, settings: dict) -> bool:
    for f in study.factors:
        v = settings[f.name]
        if f.is_level_based:
            if v not in f.levels:
                return False
        elif not (f.low - 1e-9 <= v <= f.high + 1e-9):
            return False
    if study.mixture_factors:
        total = sum(settings[f.name] for f in study.mixture_factors)
        if abs(total - 1.0) > 1e-6:
            return False
    return True


def add_benchmark_runs(design: Design, recipes: list[dict], notes: list[str] | None = None,
                       replicates: list[int] | None = None) -> Design:
    """Append benchmark control rows. Replicate rows are exact duplicates.
    Out-of-range benchmarks are kept but flagged for exclusion from analysis."""
    study = design.study
    notes = notes or ["benchmark"] * len(recipes)
    replicates = replicates or [1] * len(recipes)
    table = design.table.copy()
    for recipe, note, reps in zip(recipes, notes, replicates):
        feasible = _in_bounds(study, recipe)
        for _ in range(max(1, reps)):
            table.append_row(
                f"{_run_id(study, table.n_rows + 1)}",
                {f.name: recipe[f.name] for f in study.factors},
                note=note if feasible else f"{note}; outside factor range",
                exclude=not feasible,
            )
    return Design(study=study, table=table, seed=design.seed, method=design.method,
                  oversample=design.oversample, infeasible_rows=list(design.infeasible_rows))


def randomize_order(design: Design, seed: int) -> Design:
    """Uniform random permutation of the rows; run ids are regenerated as
    date-name-rownumber labels."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, design.table.n_rows]))
    order = rng.permutation(design.table.n_rows)
    old = design.table
    table = DataTable(factor_names=list(old.factor_names),
                      response_names=list(old.response_names))
    if old.source is not None:
        table.source = []
    for i, k in enumerate(order):
        k = int(k)
        table.run_ids.append(_run_id(design.study, i + 1))
        for name in old.factor_names:
            table.factors[name].append(old.factors[name][k])
        for name in old.response_names:
            table.responses[name].append(old.responses[name][k])
        table.notes.append(old.notes[k])
        if old.source is not None:
            table.source.append(old.source[k])
        table.exclude.append(old.exclude[k])
    out = Design(study=design.study, table=table, seed=design.seed, method=design.method,
                 oversample=design.oversample)
    _assign_blocks(out)
    return out


def _regions_overlap(prior: StudyDefinition, new: StudyDefinition) -> bool:
    for f_new in new.factors:
        try:
            f_old = prior.factor(f_new.name)
        except KeyError:
            continue
        if f_new.is_level_based:
            if not set(f_new.levels) & set(f_old.levels):
                return False
        else:
            if f_new.low > f_old.high or f_new.high < f_old.low:
                return False
    if new.mixture_factors and prior.mixture_factors:
        lows = sum(max(new.factor(f.name).low, f.low) for f in prior.mixture_factors
                   if any(g.name == f.name for g in new.mixture_factors))
        highs = sum(min(new.factor(f.name).high, f.high) for f in prior.mixture_factors
                    if any(g.name == f.name for g in new.mixture_factors))
        if lows > 1.0 or highs < 1.0:
            return False
    return True


def augment_followup(prior: Design, new_study: StudyDefinition, n_new: int,
                     anchors: int = 3, seed: int = 0) -> Design:
    """Space-filling runs over the follow-up region plus anchor rows replayed
    from the prior experiment (maximin-distance selection among prior rows
    that lie inside the new region), in randomized order."""
    require_valid(new_study)
    if not _regions_overlap(prior.study, new_study):
        raise OverlapError("no overlap with the prior region: a new study must be designed")

    fresh = generate_space_filling(new_study, n_new, seed)
    eligible: list[int] = []
    for i in range(prior.table.n_rows):
        settings = {name: prior.table.factors[name][i] for name in prior.table.factor_names
                    if name in {f.name for f in new_study.factors}}
        if len(settings) == len(new_study.factors) and _in_bounds(new_study, settings):
            eligible.append(i)

    chosen: list[int] = []
    if eligible and anchors > 0:
        prior_rows = [{name: prior.table.factors[name][i] for name in prior.table.factor_names}
                      for i in eligible]
        new_rows = [fresh.table.factor_row(i) for i in range(fresh.table.n_rows)]
        coords_prior = standardize_rows(new_study, prior_rows)
        coords_new = standardize_rows(new_study, new_rows)
        pool = list(range(len(eligible)))
        anchor_coords: list[np.ndarray] = []
        for _ in range(min(anchors, len(eligible))):
            best, best_score = pool[0], -1.0
            for idx in pool:
                ref = coords_new if not anchor_coords else np.vstack([coords_new, *anchor_coords])
                score = float(np.sqrt(((ref - coords_prior[idx]) ** 2).sum(axis=1)).min())
                if score > best_score:
                    best, best_score = idx, score
            pool.remove(best)
            anchor_coords.append(coords_prior[best][None, :])
            chosen.append(eligible[best])

    table = fresh.table
    for row_i in chosen:
        table.append_row(
            _run_id(new_study, table.n_rows + 1),
            {f.name: prior.table.factors[f.name][row_i] for f in new_study.factors},
            note="anchor from prior experiment",
        )
    out = Design(study=new_study, table=table, seed=seed, method="fff+anchors",
                 oversample=fresh.oversample)
    return randomize_order(out, seed + 1)


# ---------------------------------------------------------------------------
# Ternary projection


def ternary_pairings(study: StudyDefinition) -> list[tuple[str, str]]:
    names = [f.name for f in study.mixture_factors]
    return list(itertools.combinations(names, 2))


def ternary_coordinates(table: DataTable, study: StudyDefinition,
                        pair: tuple[str, str] | None = None) -> dict[tuple[str, str], list[tuple]]:
    """(a, b, others) triples per row; all pairings when pair is unspecified."""
    mixture_names = [f.name for f in study.mixture_factors]
    if len(mixture_names) < 3:
        raise ValueError("ternary projection needs >= 3 mixture factors")
    if pair is not None:
        if pair[0] not in mixture_names or pair[1] not in mixture_names:
            raise ValueError(f"{pair} are not mixture factors")
        pairs = [tuple(pair)]
    else:
        pairs = ternary_pairings(study)
    out: dict[tuple[str, str], list[tuple]] = {}
    for a, b in pairs:
        triples = []
        for i in range(table.n_rows):
            xa = table.factors[a][i]
            xb = table.factors[b][i]
            triples.append((xa, xb, 1.0 - xa - xb))
        out[(a, b)] = triples
    return out
