"""Study definitions, run-size heuristics, and data-table utilities.

A study couples a factor list (mixture / continuous / categorical / blocking)
with response goals. The single persistent artifact of a study is the
DataTable holding one row per experimental run.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from decimal import Decimal

MIXTURE_SUM_TOL = 1e-6

FACTOR_ROLES = ("mixture", "continuous", "categorical", "blocking")
GOALS = ("maximize", "minimize", "target", "none")
TRANSFORMS = ("identity", "log", "logit")


class SchemaError(ValueError):
    """Raised when tables or studies are structurally incompatible."""


class InvalidStudyError(ValueError):
    """Raised by operations that require a valid study definition."""


@dataclass(frozen=True)
class Factor:
    name: str
    role: str
    low: float = 0.0
    high: float = 1.0
    granularity: float = 0.01
    levels: tuple[str, ...] = ()

    @property
    def is_level_based(self) -> bool:
        return self.role in ("categorical", "blocking")

    def span(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class ResponseSpec:
    name: str
    goal: str = "maximize"
    importance: float = 1.0
    transform: str = "identity"
    target: float | None = None
    bounded01: bool = False


@dataclass(frozen=True)
class StudyDefinition:
    name: str
    date: str  # ISO-8601 date stamp
    factors: tuple[Factor, ...]
    responses: tuple[ResponseSpec, ...]

    def factor(self, name: str) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    def response(self, name: str) -> ResponseSpec:
        for r in self.responses:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def mixture_factors(self) -> list[Factor]:
        return [f for f in self.factors if f.role == "mixture"]

    @property
    def continuous_factors(self) -> list[Factor]:
        return [f for f in self.factors if f.role == "continuous"]

    @property
    def categorical_factors(self) -> list[Factor]:
        return [f for f in self.factors if f.role == "categorical"]

    @property
    def blocking_factors(self) -> list[Factor]:
        return [f for f in self.factors if f.role == "blocking"]


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.where}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, where: str, message: str) -> None:
        self.violations.append(Violation(where, message))

    def to_json(self) -> list[dict]:
        return [{"where": v.where, "message": v.message} for v in self.violations]


def _granularity_divides_span(f: Factor) -> bool:
    ratio = f.span() / f.granularity
    return abs(ratio - round(ratio)) <= 1e-9 * max(1.0, abs(ratio))


def validate_study(study: StudyDefinition) -> ValidationReport:
    """Collect every invariant violation; an empty report means the study is valid."""
    report = ValidationReport()
    names = [f.name for f in study.factors]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        report.add("factors", f"duplicate factor names: {', '.join(dupes)}")

    for f in study.factors:
        if f.role not in FACTOR_ROLES:
            report.add(f.name, f"unknown role {f.role!r}")
            continue
        if f.is_level_based:
            if len(set(f.levels)) < 2:
                report.add(f.name, "needs >= 2 distinct levels")
            continue
        if f.role == "mixture" and not (0.0 <= f.low < f.high <= 1.0):
            report.add(f.name, f"mixture bounds must satisfy 0 <= low < high <= 1, got ({f.low}, {f.high})")
        if f.role == "continuous" and not (f.low < f.high):
            report.add(f.name, f"continuous bounds must satisfy low < high, got ({f.low}, {f.high})")
        if f.granularity <= 0:
            report.add(f.name, f"granularity must be positive, got {f.granularity}")
        elif f.low < f.high and not _granularity_divides_span(f):
            report.add(f.name, f"granularity {f.granularity} does not divide span {f.span()}")

    mixture = study.mixture_factors
    if mixture:
        if len(mixture) < 2:
            report.add("factors", "needs >= 2 mixture factors")
        lows = sum(f.low for f in mixture)
        highs = sum(f.high for f in mixture)
        if lows >= 1.0:
            report.add("factors", f"sum of mixture lows must be < 1, got {lows}")
        if highs <= 1.0:
            report.add("factors", f"sum of mixture highs must be > 1, got {highs}")

    for r in study.responses:
        if r.goal not in GOALS:
            report.add(r.name, f"unknown goal {r.goal!r}")
        if r.importance < 0:
            report.add(r.name, f"importance must be >= 0, got {r.importance}")
        if r.goal == "target" and (r.target is None or not math.isfinite(r.target)):
            report.add(r.name, "target goal requires a finite target value")
        if r.transform == "logit" and not r.bounded01:
            report.add(r.name, "logit transform requires a response declared bounded in (0,1)")
        if r.transform not in TRANSFORMS:
            report.add(r.name, f"unknown transform {r.transform!r}")

    return report


def require_valid(study: StudyDefinition) -> None:
    report = validate_study(study)
    if not report.ok:
        raise InvalidStudyError("; ".join(str(v) for v in report.violations))


def min_run_heuristic(study: StudyDefinition) -> int:
    """Smallest recommended run count: 3 per mixture factor, 2 per continuous
    process factor, 1 per categorical level. Blocking factors are excluded."""
    require_valid(study)
    n = 3 * len(study.mixture_factors)
    n += 2 * len(study.continuous_factors)
    n += sum(len(f.levels) for f in study.categorical_factors)
    return n


def second_order_term_count(study: StudyDefinition) -> int:
    """Count of terms in the second-order mixture-process model.

    Includes mixture mains, mixture x mixture pairs, mixture x process
    products (continuous factors and categorical dummy columns), process x
    process pairs, and squares of continuous factors. Non-mixture main
    effects are excluded: the mixture sum-to-one identity makes them linear
    combinations of the mixture x process products. Blocking factors are
    excluded entirely.
    """
    m = len(study.mixture_factors)
    c = len(study.continuous_factors)
    dummies = [len(f.levels) - 1 for f in study.categorical_factors]
    d = sum(dummies)

    p = m                            # mixture mains
    p += m * (m - 1) // 2            # mixture x mixture pairs
    p += m * c                       # mixture x continuous
    p += m * d                       # mixture x categorical dummies
    p += c * (c - 1) // 2            # continuous x continuous pairs
    p += c * d                       # continuous x categorical dummies
    for i in range(len(dummies)):    # categorical x categorical dummy pairs
        for j in range(i + 1, len(dummies)):
            p += dummies[i] * dummies[j]
    p += c                           # squares of continuous factors
    return p


def max_run_heuristic(study: StudyDefinition) -> int:
    """Largest recommended run count: one more than the second-order model term count."""
    require_valid(study)
    return second_order_term_count(study) + 1


# ---------------------------------------------------------------------------
# DataTable


@dataclass
class DataTable:
    """Runs x (factors, responses, notes, source). Operations are copy-on-write."""

    factor_names: list[str]
    response_names: list[str]
    run_ids: list[str] = field(default_factory=list)
    factors: dict[str, list] = field(default_factory=dict)
    responses: dict[str, list] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    source: list[str] | None = None
    exclude: list[bool] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name in self.factor_names:
            self.factors.setdefault(name, [])
        for name in self.response_names:
            self.responses.setdefault(name, [])

    @property
    def n_rows(self) -> int:
        return len(self.run_ids)

    def copy(self) -> "DataTable":
        return DataTable(
            factor_names=list(self.factor_names),
            response_names=list(self.response_names),
            run_ids=list(self.run_ids),
            factors={k: list(v) for k, v in self.factors.items()},
            responses={k: list(v) for k, v in self.responses.items()},
            notes=list(self.notes),
            source=None if self.source is None else list(self.source),
            exclude=list(self.exclude),
        )

    def append_row(self, run_id: str, factor_values: dict, response_values: dict | None = None,
                   note: str = "", source: str | None = None, exclude: bool = False) -> None:
        self.run_ids.append(run_id)
        for name in self.factor_names:
            self.factors[name].append(factor_values[name])
        for name in self.response_names:
            value = None if response_values is None else response_values.get(name)
            self.responses[name].append(value)
        self.notes.append(note)
        if source is not None and self.source is None:
            self.source = [""] * (self.n_rows - 1)
        if self.source is not None:
            self.source.append(source if source is not None else "")
        self.exclude.append(exclude)

    def row(self, i: int) -> dict:
        r: dict = {"run_id": self.run_ids[i], "note": self.notes[i], "exclude": self.exclude[i]}
        for name in self.factor_names:
            r[name] = self.factors[name][i]
        for name in self.response_names:
            r[name] = self.responses[name][i]
        if self.source is not None:
            r["source"] = self.source[i]
        return r

    def factor_row(self, i: int) -> dict:
        return {name: self.factors[name][i] for name in self.factor_names}


def new_table(study: StudyDefinition) -> DataTable:
    return DataTable(
        factor_names=[f.name for f in study.factors],
        response_names=[r.name for r in study.responses],
    )


def format_number(x) -> str:
    """Fixed formatting for CSV cells: up to six decimals, trailing zeros trimmed.

    Idempotent under parse/format so archive round trips are byte-stable.
    """
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return "1" if x else "0"
    v = float(x)
    if math.isnan(v):
        return ""
    s = f"{v:.6f}".rstrip("0").rstrip(".")
    return s if s not in ("", "-0") else "0"


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return float(s)
    except ValueError:
        return s


def table_to_csv(table: DataTable) -> str:
    """Serialize with a header row; mixture factors stay as fractions of 1."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["RunID"] + table.factor_names + table.response_names + ["Notes"]
    if table.source is not None:
        header.append("Source")
    header.append("Exclude")
    writer.writerow(header)
    for i in range(table.n_rows):
        row = [table.run_ids[i]]
        for name in table.factor_names:
            row.append(format_number(table.factors[name][i]))
        for name in table.response_names:
            row.append(format_number(table.responses[name][i]))
        row.append(table.notes[i])
        if table.source is not None:
            row.append(table.source[i])
        row.append("1" if table.exclude[i] else "0")
        writer.writerow(row)
    return buf.getvalue()


def table_from_csv(text: str, factor_names: list[str], response_names: list[str],
                   level_factors: set[str] | None = None) -> DataTable:
    """Parse a table written by table_to_csv. Columns in level_factors stay text."""
    level_factors = level_factors or set()
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise SchemaError("empty CSV")
    header = rows[0]
    missing = [c for c in ["RunID"] + factor_names + response_names if c not in header]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}")
    idx = {c: header.index(c) for c in header}
    has_source = "Source" in idx
    table = DataTable(factor_names=list(factor_names), response_names=list(response_names))
    if has_source:
        table.source = []
    for raw in rows[1:]:
        if not raw:
            continue
        table.run_ids.append(raw[idx["RunID"]])
        for name in factor_names:
            cell = raw[idx[name]]
            table.factors[name].append(cell if name in level_factors else _parse_cell(cell))
        for name in response_names:
            table.responses[name].append(_parse_cell(raw[idx[name]]))
        table.notes.append(raw[idx["Notes"]] if "Notes" in idx else "")
        if has_source:
            table.source.append(raw[idx["Source"]])
        table.exclude.append(raw[idx["Exclude"]] == "1" if "Exclude" in idx else False)
    return table


# ---------------------------------------------------------------------------
# Table operations


def average_assay_columns(table: DataTable, columns: list[str], out: str) -> DataTable:
    """Per-row arithmetic mean of assay columns, skipping missing values."""
    for c in columns:
        if c not in table.responses:
            raise KeyError(f"unknown column {c!r}")
    result = table.copy()
    values = []
    for i in range(table.n_rows):
        present = [table.responses[c][i] for c in columns if table.responses[c][i] is not None]
        values.append(sum(present) / len(present) if present else None)
    if out not in result.response_names:
        result.response_names.append(out)
    result.responses[out] = values
    return result


def concat_experiments(tables: list[DataTable], source_column: str = "Source",
                       labels: list[str] | None = None) -> DataTable:
    """Row union of compatible tables with a per-origin source label.

    Run ids stay unique (suffixed on collision). Factor bound metadata is a
    study-level concern; widen with merge_study_definitions.
    """
    if not tables:
        raise SchemaError("no tables to concatenate")
    first = tables[0]
    for t in tables[1:]:
        if t.factor_names != first.factor_names:
            raise SchemaError(
                f"incompatible factor schemas: {t.factor_names} vs {first.factor_names}")
    labels = labels or [f"experiment-{i + 1}" for i in range(len(tables))]
    if len(labels) != len(tables):
        raise SchemaError("one source label per table required")

    response_names: list[str] = []
    for t in tables:
        for name in t.response_names:
            if name not in response_names:
                response_names.append(name)

    merged = DataTable(factor_names=list(first.factor_names), response_names=response_names)
    merged.source = []
    seen: set[str] = set()
    for t, label in zip(tables, labels):
        for i in range(t.n_rows):
            run_id = t.run_ids[i]
            if run_id in seen:
                k = 2
                while f"{run_id}.{k}" in seen:
                    k += 1
                run_id = f"{run_id}.{k}"
            seen.add(run_id)
            merged.run_ids.append(run_id)
            for name in merged.factor_names:
                merged.factors[name].append(t.factors[name][i])
            for name in response_names:
                col = t.responses.get(name)
                merged.responses[name].append(col[i] if col is not None else None)
            merged.notes.append(t.notes[i])
            merged.source.append(label)
            merged.exclude.append(t.exclude[i])
    return merged


def filter_by_source(table: DataTable, label: str) -> DataTable:
    if table.source is None:
        raise SchemaError("table has no source column")
    result = DataTable(factor_names=list(table.factor_names),
                       response_names=list(table.response_names))
    result.source = []
    for i in range(table.n_rows):
        if table.source[i] == label:
            result.run_ids.append(table.run_ids[i])
            for name in table.factor_names:
                result.factors[name].append(table.factors[name][i])
            for name in table.response_names:
                result.responses[name].append(table.responses[name][i])
            result.notes.append(table.notes[i])
            result.source.append(label)
            result.exclude.append(table.exclude[i])
    return result


def merge_study_definitions(defs: list[StudyDefinition], name: str | None = None) -> StudyDefinition:
    """Widen factor bounds to the union of ranges across studies (combined range)."""
    if not defs:
        raise SchemaError("no studies to merge")
    first = defs[0]
    for d in defs[1:]:
        if [f.name for f in d.factors] != [f.name for f in first.factors]:
            raise SchemaError("mismatched factor names")
        if [f.role for f in d.factors] != [f.role for f in first.factors]:
            raise SchemaError("mismatched factor roles")
    factors = []
    for i, f in enumerate(first.factors):
        if f.is_level_based:
            levels = list(f.levels)
            for d in defs[1:]:
                for lv in d.factors[i].levels:
                    if lv not in levels:
                        levels.append(lv)
            factors.append(replace(f, levels=tuple(levels)))
        else:
            low = min(d.factors[i].low for d in defs)
            high = max(d.factors[i].high for d in defs)
            gran = min(d.factors[i].granularity for d in defs)
            factors.append(replace(f, low=low, high=high, granularity=gran))
    return StudyDefinition(name=name or first.name, date=first.date,
                           factors=tuple(factors), responses=first.responses)


def with_block_factor(study: StudyDefinition, name: str, levels: list[str]) -> StudyDefinition:
    """Append a blocking factor (e.g. the experiment-id source column) to a study."""
    block = Factor(name=name, role="blocking", levels=tuple(levels))
    return replace(study, factors=study.factors + (block,))


# ---------------------------------------------------------------------------
# Benchmark-shift consistency check


@dataclass
class RecipeShift:
    factor_settings: dict
    old_run_ids: list[str]
    new_run_ids: list[str]
    deltas: dict[str, float | None]
    ratios: dict[str, float | None]
    flagged: dict[str, bool]


@dataclass
class ShiftReport:
    matches: list[RecipeShift]
    noise_estimate: float | None

    @property
    def any_flagged(self) -> bool:
        return any(any(m.flagged.values()) for m in self.matches)


def _recipes_match(a: dict, b: dict, study: StudyDefinition, tol: dict[str, float]) -> bool:
    for f in study.factors:
        va, vb = a[f.name], b[f.name]
        if f.is_level_based:
            if va != vb:
                return False
        else:
            if va is None or vb is None or abs(va - vb) > tol[f.name]:
                return False
    return True


def _replicate_noise(tables: list[DataTable], study: StudyDefinition,
                     tol: dict[str, float], response: str) -> float | None:
    """Pooled within-group standard deviation over replicate groups of each table."""
    ss = 0.0
    dof = 0
    for t in tables:
        used: set[int] = set()
        for i in range(t.n_rows):
            if i in used:
                continue
            group = [i]
            for j in range(i + 1, t.n_rows):
                if j in used:
                    continue
                if _recipes_match(t.factor_row(i), t.factor_row(j), study, tol):
                    group.append(j)
            used.update(group)
            values = [t.responses[response][k] for k in group
                      if t.responses[response][k] is not None]
            if len(values) >= 2:
                mean = sum(values) / len(values)
                ss += sum((v - mean) ** 2 for v in values)
                dof += len(values) - 1
    if dof == 0:
        return None
    return math.sqrt(ss / dof)


def benchmark_shift_check(old: DataTable, new: DataTable, study: StudyDefinition,
                          tolerance: dict[str, float] | float | None = None,
                          noise_estimate: float | None = None) -> ShiftReport:
    """Compare per-response readouts for recipes repeated across the two tables.

    The per-response delta is (new mean - old mean); its ratio to the
    replicate-based noise estimate is reported and |delta| > 3x noise flags
    the recipe. Default match tolerance is one granularity step per factor.
    """
    if isinstance(tolerance, dict):
        tol = {f.name: tolerance.get(f.name, f.granularity) for f in study.factors}
    elif tolerance is not None:
        tol = {f.name: float(tolerance) for f in study.factors}
    else:
        tol = {f.name: f.granularity * (1 + 1e-9) for f in study.factors}

    responses = [r for r in old.response_names if r in new.response_names]

    # group matched pairs by old-row recipe
    matches: list[RecipeShift] = []
    matched_old: set[int] = set()
    for i in range(old.n_rows):
        if i in matched_old:
            continue
        new_rows = [j for j in range(new.n_rows)
                    if _recipes_match(old.factor_row(i), new.factor_row(j), study, tol)]
        if not new_rows:
            continue
        old_rows = [k for k in range(old.n_rows)
                    if _recipes_match(old.factor_row(i), old.factor_row(k), study, tol)]
        matched_old.update(old_rows)
        matches.append(RecipeShift(
            factor_settings=old.factor_row(i),
            old_run_ids=[old.run_ids[k] for k in old_rows],
            new_run_ids=[new.run_ids[j] for j in new_rows],
            deltas={}, ratios={}, flagged={},
        ))
        for resp in responses:
            olds = [old.responses[resp][k] for k in old_rows if old.responses[resp][k] is not None]
            news = [new.responses[resp][j] for j in new_rows if new.responses[resp][j] is not None]
            if not olds or not news:
                matches[-1].deltas[resp] = None
                matches[-1].ratios[resp] = None
                matches[-1].flagged[resp] = False
                continue
            delta = sum(news) / len(news) - sum(olds) / len(olds)
            matches[-1].deltas[resp] = delta

    if not matches:
        raise ValueError("no matched recipes between the two tables")

    for resp in responses:
        sigma = noise_estimate
        if sigma is None:
            sigma = _replicate_noise([old, new], study, tol, resp)
        for m in matches:
            delta = m.deltas.get(resp)
            if delta is None or sigma is None or sigma == 0:
                m.ratios[resp] = None if delta is None or sigma in (None, 0) else None
                m.flagged[resp] = bool(delta is not None and sigma == 0 and abs(delta) > 0)
                if sigma == 0 and delta is not None:
                    m.ratios[resp] = math.inf if delta != 0 else 0.0
                continue
            m.ratios[resp] = delta / sigma
            m.flagged[resp] = abs(delta) > 3 * sigma

    overall_noise = noise_estimate
    if overall_noise is None and responses:
        overall_noise = _replicate_noise([old, new], study, tol, responses[0])
    return ShiftReport(matches=matches, noise_estimate=overall_noise)


# ---------------------------------------------------------------------------
# Granularity helpers shared with the design module


def as_fraction(x: float) -> Fraction:
    return Fraction(Decimal(repr(x)))


def snap_to_granularity(value: float, low: float, granularity: float) -> float:
    """Round to the granularity grid anchored at the factor's lower bound."""
    steps = round((value - low) / granularity)
    return float(as_fraction(low) + steps * as_fraction(granularity))
