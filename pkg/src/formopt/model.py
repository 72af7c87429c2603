"""Factor coding, candidate-effect expansion, and the base learners.

Mixture factors are coded as pseudo-components z_i = (x_i - L_i)/(1 - sum L),
continuous factors affinely to [-1, 1], categorical factors as reference-level
dummies. The candidate effect list covers degree-3 factorial terms plus
continuous squares, their products with other non-mixture mains, and the
asymmetric-blending cubic terms z_i z_j (z_i - z_j) for each mixture pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .study import DataTable, Factor, StudyDefinition, require_valid

PIVOT_TOL = 1e-10


class RankDeficiencyError(ValueError):
    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"column {column} is linearly dependent on the others")


@dataclass(frozen=True)
class CodedFactorSpace:
    mixture_names: tuple[str, ...]
    mixture_lows: tuple[float, ...]
    mixture_highs: tuple[float, ...]
    mixture_denominator: float
    continuous_names: tuple[str, ...]
    continuous_mid: tuple[float, ...]
    continuous_half: tuple[float, ...]
    level_names: tuple[str, ...]          # categorical and blocking factors
    levels: tuple[tuple[str, ...], ...]
    granularity: dict[str, float] = field(hash=False, default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mixture": {"names": list(self.mixture_names), "lows": list(self.mixture_lows),
                        "highs": list(self.mixture_highs),
                        "denominator": self.mixture_denominator},
            "continuous": {"names": list(self.continuous_names),
                           "mid": list(self.continuous_mid), "half": list(self.continuous_half)},
            "levels": {name: list(lv) for name, lv in zip(self.level_names, self.levels)},
            "granularity": dict(self.granularity),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CodedFactorSpace":
        return cls(
            mixture_names=tuple(data["mixture"]["names"]),
            mixture_lows=tuple(data["mixture"]["lows"]),
            mixture_highs=tuple(data["mixture"]["highs"]),
            mixture_denominator=data["mixture"]["denominator"],
            continuous_names=tuple(data["continuous"]["names"]),
            continuous_mid=tuple(data["continuous"]["mid"]),
            continuous_half=tuple(data["continuous"]["half"]),
            level_names=tuple(data["levels"].keys()),
            levels=tuple(tuple(v) for v in data["levels"].values()),
            granularity=dict(data.get("granularity", {})),
        )


def coded_space(study: StudyDefinition) -> CodedFactorSpace:
    mix = study.mixture_factors
    cont = study.continuous_factors
    lev = study.categorical_factors + study.blocking_factors
    return CodedFactorSpace(
        mixture_names=tuple(f.name for f in mix),
        mixture_lows=tuple(f.low for f in mix),
        mixture_highs=tuple(f.high for f in mix),
        mixture_denominator=1.0 - sum(f.low for f in mix),
        continuous_names=tuple(f.name for f in cont),
        continuous_mid=tuple((f.low + f.high) / 2 for f in cont),
        continuous_half=tuple((f.high - f.low) / 2 for f in cont),
        level_names=tuple(f.name for f in lev),
        levels=tuple(f.levels for f in lev),
        granularity={f.name: f.granularity for f in study.factors if not f.is_level_based},
    )


def code_row(space: CodedFactorSpace, row: dict, check_bounds: bool = True) -> dict:
    """Numeric coded values for one factor-settings row.

    Bounds are enforced with a tolerance of one granularity step so control
    runs sitting on an edge still code cleanly.
    """
    coded: dict = {}
    for name, low, high in zip(space.mixture_names, space.mixture_lows, space.mixture_highs):
        if check_bounds:
            tol = space.granularity.get(name, 0.0) + 1e-12
            if row[name] < low - tol or row[name] > high + tol:
                raise ValueError(f"{name}={row[name]} outside [{low}, {high}]")
        coded[name] = (row[name] - low) / space.mixture_denominator
    for name, mid, half in zip(space.continuous_names, space.continuous_mid, space.continuous_half):
        c = (row[name] - mid) / half
        if check_bounds:
            tol = space.granularity.get(name, 0.0) / half + 1e-12
            if c < -1.0 - tol or c > 1.0 + tol:
                raise ValueError(f"{name}={row[name]} outside the coded range")
        coded[name] = c
    for name, levels in zip(space.level_names, space.levels):
        value = row[name]
        if check_bounds and value not in levels:
            raise ValueError(f"{name}={value!r} is not one of {levels}")
        coded[name] = value
    return coded


def decode_row(space: CodedFactorSpace, coded: dict) -> dict:
    row: dict = {}
    for name, low in zip(space.mixture_names, space.mixture_lows):
        row[name] = coded[name] * space.mixture_denominator + low
    for name, mid, half in zip(space.continuous_names, space.continuous_mid, space.continuous_half):
        row[name] = coded[name] * half + mid
    for name in space.level_names:
        row[name] = coded[name]
    return row


# ---------------------------------------------------------------------------
# Effects


@dataclass(frozen=True)
class Effect:
    """A model column: kind plus operand tokens.

    Operand tokens are (factor, exponent) for numeric factors and
    (factor, level) for dummy columns. The asymmetric-blending cubic uses kind
    "scheffe-cubic" with two mixture operands meaning z_a z_b (z_a - z_b).
    """

    kind: str
    operands: tuple[tuple[str, object], ...] = ()

    @property
    def key(self) -> str:
        if self.kind == "intercept":
            return "Intercept"
        if self.kind == "scheffe-cubic":
            (a, _), (b, _) = self.operands
            return f"{a}*{b}*({a}-{b})"
        parts = []
        for name, token in self.operands:
            if isinstance(token, int):
                parts.append(name if token == 1 else f"{name}^{token}")
            else:
                parts.append(f"{name}[{token}]")
        return "*".join(parts)

    def to_json(self) -> list:
        return [self.kind, [[n, t] for n, t in self.operands]]

    @classmethod
    def from_json(cls, data: list) -> "Effect":
        kind, ops = data
        return cls(kind, tuple((n, t if isinstance(t, str) else int(t)) for n, t in ops))


def _dummy_tokens(factor: Factor) -> list[tuple[str, str]]:
    return [(factor.name, level) for level in factor.levels[:-1]]


def build_candidate_effects(study: StudyDefinition) -> list[Effect]:
    """Full candidate list: intercept, mains, two- and three-way products of
    distinct study factors, continuous squares, products of those squares with
    other non-mixture mains, asymmetric-blending mixture cubics, and block
    dummies (mains only). Pure quadratic mixture terms are excluded."""
    require_valid(study)
    mix = study.mixture_factors
    cont = study.continuous_factors
    cats = study.categorical_factors
    blocks = study.blocking_factors

    effects: list[Effect] = [Effect("intercept")]

    mains: list[tuple[str, list[tuple[str, object]]]] = []
    for f in mix:
        mains.append(("mixture", [(f.name, 1)]))
    for f in cont:
        mains.append(("continuous", [(f.name, 1)]))
    for f in cats:
        for token in _dummy_tokens(f):
            mains.append(("categorical", [token]))

    for kind, ops in mains:
        effects.append(Effect(f"{kind}-main", tuple(ops)))

    # two- and three-way products over distinct factors (blocking excluded)
    study_factors = list(mix) + list(cont) + list(cats)

    def factor_columns(f: Factor) -> list[list[tuple[str, object]]]:
        if f.role == "categorical":
            return [[token] for token in _dummy_tokens(f)]
        return [[(f.name, 1)]]

    n = len(study_factors)
    for i in range(n):
        for j in range(i + 1, n):
            for a in factor_columns(study_factors[i]):
                for b in factor_columns(study_factors[j]):
                    effects.append(Effect("two-way", tuple(a + b)))
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                for a in factor_columns(study_factors[i]):
                    for b in factor_columns(study_factors[j]):
                        for c in factor_columns(study_factors[k]):
                            effects.append(Effect("three-way", tuple(a + b + c)))

    # partial cubic block: squares of continuous factors and square x other
    # non-mixture mains
    non_mix_mains: list[list[tuple[str, object]]] = []
    for f in cont:
        non_mix_mains.append([(f.name, 1)])
    for f in cats:
        for token in _dummy_tokens(f):
            non_mix_mains.append([token])
    for f in cont:
        effects.append(Effect("continuous-square", ((f.name, 2),)))
        for other in non_mix_mains:
            if other == [(f.name, 1)]:
                continue
            effects.append(Effect("partial-cubic", tuple([(f.name, 2)] + other)))

    for i in range(len(mix)):
        for j in range(i + 1, len(mix)):
            effects.append(Effect("scheffe-cubic", ((mix[i].name, 1), (mix[j].name, 1))))

    for f in blocks:
        for token in _dummy_tokens(f):
            effects.append(Effect("block", (token,)))

    return effects


def _coded_columns(space: CodedFactorSpace, rows: list[dict]) -> dict:
    """Vectorized coded columns for a batch of factor-setting rows."""
    cols: dict = {}
    for name, low in zip(space.mixture_names, space.mixture_lows):
        x = np.array([r[name] for r in rows], dtype=float)
        cols[name] = (x - low) / space.mixture_denominator
    for name, mid, half in zip(space.continuous_names, space.continuous_mid, space.continuous_half):
        x = np.array([r[name] for r in rows], dtype=float)
        cols[name] = (x - mid) / half
    for name, levels in zip(space.level_names, space.levels):
        values = [r[name] for r in rows]
        for level in levels:
            cols[(name, level)] = np.array([1.0 if v == level else 0.0 for v in values])
    return cols


def effect_matrix(effects: list[Effect], space: CodedFactorSpace, rows: list[dict]) -> np.ndarray:
    """n x p numeric expansion of the candidate effects, stable column order."""
    cols = _coded_columns(space, rows)
    n = len(rows)
    out = np.empty((n, len(effects)))
    for j, e in enumerate(effects):
        if e.kind == "intercept":
            out[:, j] = 1.0
            continue
        if e.kind == "scheffe-cubic":
            (a, _), (b, _) = e.operands
            za, zb = cols[a], cols[b]
            out[:, j] = za * zb * (za - zb)
            continue
        acc = np.ones(n)
        for name, token in e.operands:
            if isinstance(token, str):
                acc = acc * cols[(name, token)]
            else:
                acc = acc * cols[name] ** token
        out[:, j] = acc
    return out


def design_matrix(effects: list[Effect], space: CodedFactorSpace, table: DataTable,
                  response: str, weights: np.ndarray | None = None):
    """Numeric (X, y, w, row_indices) with missing-response and excluded rows dropped."""
    usable = [i for i in range(table.n_rows)
              if table.responses[response][i] is not None and not table.exclude[i]]
    if not usable:
        raise ValueError(f"no usable rows for response {response!r}")
    rows = [table.factor_row(i) for i in usable]
    X = effect_matrix(effects, space, rows)
    y = np.array([table.responses[response][i] for i in usable], dtype=float)
    if weights is None:
        w = np.ones(len(usable))
    else:
        w = np.asarray(weights, dtype=float)[usable]
    return X, y, w, usable


# ---------------------------------------------------------------------------
# Weighted least squares and model scores


@dataclass
class LinearFit:
    effect_indices: list[int]
    coefficients: np.ndarray
    sse: float
    n: int

    @property
    def k(self) -> int:
        return len(self.effect_indices)

    def coefficient_map(self, effects: list[Effect]) -> dict[str, float]:
        return {effects[i].key: float(c) for i, c in zip(self.effect_indices, self.coefficients)}

    def dense(self, p: int) -> np.ndarray:
        beta = np.zeros(p)
        beta[self.effect_indices] = self.coefficients
        return beta


def fit_wls(X: np.ndarray, y: np.ndarray, w: np.ndarray,
            effect_indices: list[int] | None = None) -> LinearFit:
    """Minimize sum w_i (y_i - x_i beta)^2 by QR on the weight-scaled system.

    Raises RankDeficiencyError naming the offending column when the selected
    columns are linearly dependent (relative pivot below 1e-10).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if effect_indices is None:
        effect_indices = list(range(X.shape[1]))
    sub = X[:, effect_indices]
    sw = np.sqrt(w)
    A = sub * sw[:, None]
    b = y * sw
    q, r = np.linalg.qr(A)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0 or (diag <= PIVOT_TOL * scale).any():
        if scale == 0.0:
            raise RankDeficiencyError(effect_indices[0])
        bad = int(np.argmax(diag <= PIVOT_TOL * scale))
        raise RankDeficiencyError(effect_indices[bad])
    beta = np.linalg.solve(r, q.T @ b)
    resid = y - sub @ beta
    sse = float(w @ resid**2)
    return LinearFit(effect_indices=list(effect_indices), coefficients=beta,
                     sse=max(sse, 0.0), n=len(y))


def fit_full(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> LinearFit:
    """All candidate columns at once; linearly dependent columns are dropped
    (pivoted QR) rather than rejected, since the full set is aliased by the
    mixture sum-to-one identity."""
    from scipy.linalg import qr as scipy_qr

    X = np.asarray(X, dtype=float)
    sw = np.sqrt(np.asarray(w, dtype=float))
    A = X * sw[:, None]
    _, r, piv = scipy_qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    rank = int((diag > max(scale, 1e-300) * PIVOT_TOL).sum())
    keep = sorted(int(j) for j in piv[:rank])
    return fit_wls(X, y, w, keep)


def aicc(sse: float, n: int, k: int) -> float:
    """Sample-size corrected information criterion with the error variance
    counted as a parameter (p = k + 1). Returns +inf when n <= k + 2 so the
    model is never preferred, and -inf (flagged perfect fit) when sse <= 0."""
    p = k + 1
    if sse <= 0.0:
        return -math.inf
    if n <= k + 2:
        return math.inf
    return n * math.log(sse / n) + 2 * p + 2 * p * (p + 1) / (n - p - 1)


# ---------------------------------------------------------------------------
# Forward selection


def _weighted_sse(X: np.ndarray, y: np.ndarray, w: np.ndarray, fit: LinearFit) -> float:
    resid = y - X[:, fit.effect_indices] @ fit.coefficients
    return float(w @ resid**2)


def forward_selection(X: np.ndarray, y: np.ndarray, w_train: np.ndarray,
                      score: str = "aicc", forced: list[int] | None = None,
                      w_valid: np.ndarray | None = None,
                      max_terms: int | None = None) -> LinearFit:
    """Greedy forward path on train-weighted SSE; returns the path point that
    minimizes the requested score.

    score="aicc" evaluates each path point on unweighted data (the single-shot
    selection method); score="validation" evaluates the validation-weighted
    SSE of the train-weight fit (the ensemble member rule). Ties go to the
    earlier, smaller model. The path stops at rank exhaustion, at n rows, or
    at max_terms coefficients when given.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w_train, dtype=float)
    n, p = X.shape
    forced = list(forced) if forced else [0]
    limit = n if max_terms is None else min(n, max(max_terms, len(forced)))

    G = (X * w[:, None]).T @ X
    bvec = (X * w[:, None]).T @ y
    yy = float(w @ y**2)

    active: list[int] = []
    L = np.zeros((0, 0))
    V = np.zeros((0, p))        # L^-1 G[active, :]
    u = np.zeros(0)             # L^-1 b[active]
    diag = np.diag(G).copy()

    def try_add(j: int) -> tuple[float, float] | None:
        s = diag[j] - (V[:, j] @ V[:, j] if len(active) else 0.0)
        if s <= PIVOT_TOL * max(diag[j], 1e-300):
            return None
        r = bvec[j] - (V[:, j] @ u if len(active) else 0.0)
        return s, r

    def add(j: int, s: float, r: float) -> None:
        nonlocal L, V, u
        root = math.sqrt(s)
        k = len(active)
        newL = np.zeros((k + 1, k + 1))
        newL[:k, :k] = L
        if k:
            newL[k, :k] = V[:, j]
        newL[k, k] = root
        newV = np.empty((k + 1, p))
        if k:
            newV[:k] = V
            newV[k] = (G[j] - V[:, j] @ V) / root
        else:
            newV[0] = G[j] / root
        L, V = newL, newV
        u = np.append(u, r / root)
        active.append(j)

    # forced columns first (intercept is always forced)
    for j in forced:
        got = try_add(j)
        if got is None:
            raise RankDeficiencyError(j, f"forced column {j} is linearly dependent")
        add(j, *got)

    path: list[LinearFit] = []

    def snapshot() -> LinearFit:
        beta = np.linalg.solve(L.T, u) if len(active) else np.zeros(0)
        sse = max(yy - float(u @ u), 0.0)
        return LinearFit(effect_indices=list(active), coefficients=beta, sse=sse, n=n)

    path.append(snapshot())
    candidates = [j for j in range(p) if j not in active]
    while candidates and len(active) < limit:
        if len(active):
            s_all = diag[candidates] - np.einsum("ij,ij->j", V[:, candidates], V[:, candidates])
            r_all = bvec[candidates] - u @ V[:, candidates]
        else:
            s_all = diag[candidates]
            r_all = bvec[candidates]
        ok = s_all > PIVOT_TOL * np.maximum(diag[candidates], 1e-300)
        if not ok.any():
            break
        gain = np.where(ok, r_all**2 / np.where(ok, s_all, 1.0), -np.inf)
        pick = int(np.argmax(gain))
        if not np.isfinite(gain[pick]):
            break
        j = candidates[pick]
        add(j, float(s_all[pick]), float(r_all[pick]))
        candidates.remove(j)
        path.append(snapshot())

    if score == "aicc":
        ones = np.ones(n)
        scores = []
        for fit in path:
            sse_unweighted = _weighted_sse(X, y, ones, fit)
            scores.append(aicc(sse_unweighted, n, fit.k))
    elif score == "validation":
        if w_valid is None:
            raise ValueError("validation score requires validation weights")
        scores = [_weighted_sse(X, y, np.asarray(w_valid, dtype=float), fit) for fit in path]
    else:
        raise ValueError(f"unknown score {score!r}")

    best = 0
    for i in range(1, len(path)):
        if scores[i] < scores[best]:
            best = i
    return path[best]


# ---------------------------------------------------------------------------
# Lasso coordinate descent


def lasso_path(X: np.ndarray, y: np.ndarray, w: np.ndarray,
               lambdas: np.ndarray | None = None, n_lambdas: int = 100,
               tol: float = 1e-7, max_sweeps: int = 1000) -> list[tuple[float, LinearFit]]:
    """Coordinate descent along a descending geometric lambda grid.

    Columns are standardized to unit weighted variance internally; the
    intercept (column 0 by convention) is unpenalized and coefficients are
    reported on the original scale. Objective per point:
        (1 / (2 sum w)) * sum_i w_i (y_i - x_i beta)^2 + lambda * sum_j |beta_j|
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all() and np.isfinite(w).all()):
        raise ValueError("non-finite inputs")
    n, p = X.shape
    unpen = {0}
    sw = w / w.sum()

    mean = sw @ X
    Xc = X - mean
    scale = np.sqrt(sw @ Xc**2)
    penalized = [j for j in range(p) if j not in unpen and scale[j] > 1e-12]
    Xs = np.zeros_like(Xc)
    for j in penalized:
        Xs[:, j] = Xc[:, j] / scale[j]
    ybar = float(sw @ y)
    yc = y - ybar

    corr = np.abs(Xs.T @ (w * yc)) / w.sum()
    lam_max = float(corr[penalized].max()) if penalized else 0.0
    if lambdas is None:
        if lam_max <= 0:
            lambdas = np.array([0.0])
        else:
            lambdas = lam_max * np.logspace(0, -4, n_lambdas)
    else:
        lambdas = np.asarray(lambdas, dtype=float)

    beta = np.zeros(p)          # coefficients on the standardized scale
    results: list[tuple[float, LinearFit]] = []
    r = yc.copy()
    wsum = w.sum()
    Xw = Xs * w[:, None]
    tol_scaled = tol * max(float(np.sqrt(sw @ yc**2)), 1.0)

    def sweep(coords, lam) -> float:
        delta_max = 0.0
        for j in coords:
            rho = Xw[:, j] @ r / wsum + beta[j]
            new = math.copysign(max(abs(rho) - lam, 0.0), rho)
            d = new - beta[j]
            if d != 0.0:
                np.subtract(r, d * Xs[:, j], out=r)
                beta[j] = new
                delta_max = max(delta_max, abs(d))
        return delta_max

    for lam in lambdas:
        if lam >= lam_max * (1 - 1e-12) and not beta.any():
            pass  # threshold identity: every penalized coefficient stays 0
        else:
            # converge on the warm-started active set, then run a full pass as
            # the KKT check; new activations restart the cycle
            for _ in range(40):
                active = [j for j in penalized if beta[j] != 0.0]
                for _ in range(max_sweeps):
                    if sweep(active, lam) < tol_scaled:
                        break
                if sweep(penalized, lam) < tol_scaled:
                    break
        # back to original scale; intercept recovers the centering terms
        coef = np.zeros(p)
        for j in penalized:
            coef[j] = beta[j] / scale[j]
        intercept = ybar - float(mean @ coef)
        coef[0] = intercept
        resid = y - X @ coef
        sse = float(w @ resid**2)
        selected = [0] + [j for j in penalized if coef[j] != 0.0]
        fit = LinearFit(effect_indices=sorted(set(selected)),
                        coefficients=coef[sorted(set(selected))], sse=sse, n=n)
        results.append((float(lam), fit))
    return results
