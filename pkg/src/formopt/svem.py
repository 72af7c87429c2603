"""Fractional-random-weight bootstrap ensembles over the base learners.

Each ensemble member reweights the runs with anti-correlated train/validation
weight pairs (-ln u, -ln(1-u)), fits the base learner under the train weights,
picks the path point with the smallest validation-weighted error, and the
ensemble predicts with the average of the member models on the transformed
response scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    CodedFactorSpace,
    Effect,
    LinearFit,
    RankDeficiencyError,
    design_matrix,
    effect_matrix,
    fit_full,
    forward_selection,
    lasso_path,
)
from .response import inverse_transform, transform
from .study import DataTable, StudyDefinition

METHODS = ("svem-forward", "svem-lasso", "forward-aicc", "full")


@dataclass
class WeightPair:
    train: np.ndarray
    valid: np.ndarray
    seed: object


def fractional_weights(n: int, seed) -> WeightPair:
    """Anti-correlated exponential pairs: one uniform draw u per row gives
    train weight -ln(u) and validation weight -ln(1-u)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, size=n)
    u = np.clip(u, 1e-15, 1.0 - 1e-15)
    return WeightPair(train=-np.log(u), valid=-np.log1p(-u), seed=seed)


@dataclass
class EnsembleModel:
    response: str
    transform: str
    method: str
    effects: list[Effect]
    space: CodedFactorSpace
    members: list[LinearFit]
    seed: int
    samples: int
    skipped_members: int = 0
    train_rows: list[int] = field(default_factory=list)
    _mean_beta: np.ndarray | None = None

    @property
    def mean_coefficients(self) -> np.ndarray:
        if self._mean_beta is None:
            p = len(self.effects)
            acc = np.zeros(p)
            for fit in self.members:
                acc += fit.dense(p)
            self._mean_beta = acc / len(self.members)
        return self._mean_beta

    def to_json(self) -> dict:
        return {
            "response": self.response,
            "transform": self.transform,
            "method": self.method,
            "seed": self.seed,
            "samples": self.samples,
            "skipped_members": self.skipped_members,
            "effects": [e.to_json() for e in self.effects],
            "coding": self.space.to_json(),
            "members": [
                {"effects": fit.effect_indices,
                 "coefficients": [float(c) for c in fit.coefficients],
                 "sse": fit.sse, "n": fit.n}
                for fit in self.members
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EnsembleModel":
        return cls(
            response=data["response"],
            transform=data["transform"],
            method=data["method"],
            effects=[Effect.from_json(e) for e in data["effects"]],
            space=CodedFactorSpace.from_json(data["coding"]),
            members=[LinearFit(effect_indices=list(m["effects"]),
                               coefficients=np.array(m["coefficients"]),
                               sse=m["sse"], n=m["n"]) for m in data["members"]],
            seed=data["seed"],
            samples=data["samples"],
            skipped_members=data.get("skipped_members", 0),
        )


def member_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def svem_fit(effects: list[Effect], space: CodedFactorSpace, table: DataTable,
             response: str, response_transform: str = "identity",
             method: str = "svem-forward", samples: int = 200, seed: int = 0,
             force_mixture_mains: bool = False, lambda_points: int = 100) -> EnsembleModel:
    """Fit a self-validated ensemble (or one of the single-shot baselines).

    svem-forward / svem-lasso draw a fresh fractional weight pair per member
    and keep the path point with the smallest validation-weighted SSE.
    forward-aicc and full are single-member classical fits on unit weights.
    Mixture main effects ride along unforced unless force_mixture_mains is
    set; the intercept is always forced.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    X, y_raw, _, rows = design_matrix(effects, space, table, response)
    if len(rows) < 6:
        raise ValueError(f"need at least 6 usable rows, have {len(rows)}")
    y = transform(y_raw, response_transform)
    n = len(y)

    forced = [0]
    if force_mixture_mains:
        forced += [j for j, e in enumerate(effects) if e.kind == "mixture-main"]

    if method in ("forward-aicc", "full"):
        ones = np.ones(n)
        if method == "forward-aicc":
            fit = forward_selection(X, y, ones, score="aicc", forced=forced)
        else:
            if n < len(effects):
                raise ValueError(
                    f"full model needs n >= {len(effects)} runs, have {n}")
            fit = fit_full(X, y, ones)
        return EnsembleModel(response=response, transform=response_transform,
                             method=method, effects=effects, space=space,
                             members=[fit], seed=seed, samples=1, train_rows=rows)

    # The anti-correlated weights give every row a soft half-membership in
    # each role, so a member's coefficient budget is capped at the effective
    # training size n/2. Uncapped paths would reach k = n, interpolate every
    # row, and zero out the validation error they are selected by.
    member_cap = max(len(forced) + 1, n // 2)
    members: list[LinearFit] = []
    skipped = 0
    for m in range(samples):
        fit = None
        for attempt in range(2):
            ss = member_seed(seed, m if attempt == 0 else samples + m)
            weights = fractional_weights(n, ss)
            try:
                if method == "svem-forward":
                    fit = forward_selection(X, y, weights.train, score="validation",
                                            forced=forced, w_valid=weights.valid,
                                            max_terms=member_cap)
                else:
                    path = lasso_path(X, y, weights.train, n_lambdas=lambda_points,
                                      tol=1e-4, max_sweeps=300)
                    best, best_score = None, math.inf
                    for lam, candidate in path:
                        if candidate.k > member_cap:
                            continue
                        resid = y - X[:, candidate.effect_indices] @ candidate.coefficients
                        score = float(weights.valid @ resid**2)
                        if score < best_score:
                            best, best_score = candidate, score
                    fit = best if best is not None else None
                break
            except RankDeficiencyError:
                fit = None
        if fit is None:
            skipped += 1
            continue
        members.append(fit)
    if not members:
        raise RuntimeError("every ensemble member failed; check the candidate effects")
    return EnsembleModel(response=response, transform=response_transform,
                         method=method, effects=effects, space=space, members=members,
                         seed=seed, samples=samples, skipped_members=skipped,
                         train_rows=rows)


def svem_fit_classical_equivalent(effects, space, table, response,
                                  response_transform: str = "identity", seed: int = 0,
                                  force_mixture_mains: bool = False) -> EnsembleModel:
    """Degenerate one-member ensemble: all-ones weights with AICc member
    scoring, which reproduces the single-shot forward selection exactly."""
    X, y_raw, _, rows = design_matrix(effects, space, table, response)
    y = transform(y_raw, response_transform)
    n = len(y)
    forced = [0]
    if force_mixture_mains:
        forced += [j for j, e in enumerate(effects) if e.kind == "mixture-main"]
    fit = forward_selection(X, y, np.ones(n), score="aicc", forced=forced)
    return EnsembleModel(response=response, transform=response_transform,
                         method="svem-forward", effects=effects, space=space,
                         members=[fit], seed=seed, samples=1, train_rows=rows)


# ---------------------------------------------------------------------------
# Prediction


def predict_rows(model: EnsembleModel, rows: list[dict], check_bounds: bool = True) -> np.ndarray:
    """Ensemble prediction on the original response scale for a batch of rows.

    Member predictions are averaged on the transformed scale; the average of
    linear members equals the mean-coefficient model, which is what we
    evaluate.
    """
    if check_bounds:
        from .model import code_row
        for r in rows:
            code_row(model.space, r)
    X = effect_matrix(model.effects, model.space, rows)
    transformed = X @ model.mean_coefficients
    return inverse_transform(transformed, model.transform)


def predict(model: EnsembleModel, row: dict, check_bounds: bool = True) -> float:
    return float(predict_rows(model, [row], check_bounds)[0])


@dataclass
class ActualByPredicted:
    pairs: list[tuple[float, float]]
    correlation: float | None
    outlier_rows: list[int]
    constant_predictions: bool = False


def actual_by_predicted(model: EnsembleModel, table: DataTable) -> ActualByPredicted:
    """(actual, predicted) pairs on the original scale plus their Pearson
    correlation; rows with residuals beyond three residual standard
    deviations are flagged."""
    usable = [i for i in range(table.n_rows)
              if table.responses[model.response][i] is not None and not table.exclude[i]]
    if len(usable) < 3:
        raise ValueError("need at least 3 usable rows for a correlation")
    rows = [table.factor_row(i) for i in usable]
    predicted = predict_rows(model, rows, check_bounds=False)
    actual = np.array([table.responses[model.response][i] for i in usable])
    pairs = [(float(a), float(p)) for a, p in zip(actual, predicted)]

    if np.std(predicted) < 1e-12 * max(1.0, float(np.abs(predicted).max())):
        return ActualByPredicted(pairs, None, [], constant_predictions=True)
    corr = float(np.corrcoef(actual, predicted)[0, 1])
    resid = actual - predicted
    sd = float(resid.std(ddof=1)) if len(resid) > 1 else 0.0
    outliers = [usable[i] for i in range(len(resid)) if sd > 0 and abs(resid[i]) > 3 * sd]
    return ActualByPredicted(pairs, corr, outliers)
