"""Response-distribution diagnostics and transforms.

Positive unbounded responses are compared under normal and lognormal fits;
proportion responses bounded in (0,1) under normal and beta fits. The better
small-sample-corrected information score picks the modeling transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, polygamma

from scipy.special import digamma


@dataclass
class DistributionFit:
    family: str
    params: dict[str, float]
    loglik: float
    aicc: float


def aicc_from_loglik(loglik: float, n: int, p: int) -> float:
    if n <= p + 1:
        return math.inf
    return -2.0 * loglik + 2 * p + 2 * p * (p + 1) / (n - p - 1)


def fit_normal(values: np.ndarray) -> DistributionFit:
    n = len(values)
    mu = float(values.mean())
    sigma2 = float(((values - mu) ** 2).mean())
    if sigma2 <= 0:
        sigma2 = 1e-300
    loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
    return DistributionFit("normal", {"mu": mu, "sigma": math.sqrt(sigma2)},
                           loglik, aicc_from_loglik(loglik, n, 2))


def fit_lognormal(values: np.ndarray) -> DistributionFit:
    if (values <= 0).any():
        raise ValueError("lognormal fit requires strictly positive values")
    logs = np.log(values)
    base = fit_normal(logs)
    loglik = base.loglik - float(logs.sum())  # Jacobian of the log map
    return DistributionFit(
        "lognormal",
        {"mu_log": base.params["mu"], "sigma_log": base.params["sigma"]},
        loglik, aicc_from_loglik(loglik, len(values), 2))


def _beta_loglik(values: np.ndarray, a: float, b: float) -> float:
    return float((a - 1) * np.log(values).sum() + (b - 1) * np.log1p(-values).sum()
                 - len(values) * betaln(a, b))


def fit_beta(values: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> DistributionFit:
    """Newton iterations on the digamma score equations, method-of-moments start."""
    if (values <= 0).any() or (values >= 1).any():
        raise ValueError("beta fit requires values strictly inside (0, 1)")
    n = len(values)
    mean = float(values.mean())
    var = float(values.var())
    var = min(max(var, 1e-12), mean * (1 - mean) - 1e-12)
    scale = mean * (1 - mean) / var - 1.0
    a = max(mean * scale, 1e-3)
    b = max((1 - mean) * scale, 1e-3)
    mean_log = float(np.log(values).mean())
    mean_log1m = float(np.log1p(-values).mean())
    for _ in range(max_iter):
        common = digamma(a + b)
        g = np.array([common - digamma(a) + mean_log,
                      common - digamma(b) + mean_log1m])
        tri = polygamma(1, a + b)
        H = np.array([[tri - polygamma(1, a), tri],
                      [tri, tri - polygamma(1, b)]])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        new_a, new_b = a - step[0], b - step[1]
        shrink = 1.0
        while (new_a <= 0 or new_b <= 0) and shrink > 1e-8:
            shrink /= 2
            new_a, new_b = a - shrink * step[0], b - shrink * step[1]
        a, b = max(new_a, 1e-8), max(new_b, 1e-8)
        if max(abs(g[0]), abs(g[1])) < tol:
            break
    loglik = _beta_loglik(values, a, b)
    return DistributionFit("beta", {"alpha": a, "beta": b},
                           loglik, aicc_from_loglik(loglik, n, 2))


@dataclass
class TransformRecommendation:
    transform: str
    fits: list[DistributionFit]

    def to_json(self) -> dict:
        return {
            "transform": self.transform,
            "fits": [{"family": f.family, "params": f.params,
                      "loglik": f.loglik, "aicc": f.aicc} for f in self.fits],
        }


def recommend_transform(values, bounded01: bool = False) -> TransformRecommendation:
    """log when the lognormal fit wins for positive responses; logit when the
    beta fit wins for (0,1) responses; identity otherwise or on ties."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    v = v[np.isfinite(v)]
    if len(v) < 5:
        raise ValueError("need at least 5 finite values")
    normal = fit_normal(v)
    if bounded01:
        if (v <= 0).any() or (v >= 1).any():
            raise ValueError("bounded responses must lie strictly inside (0, 1) for the logit")
        beta = fit_beta(v)
        pick = "logit" if beta.aicc < normal.aicc - 1e-9 else "identity"
        return TransformRecommendation(pick, [normal, beta])
    if (v <= 0).any():
        # lognormal undefined; nothing to compare against
        return TransformRecommendation("identity", [normal])
    lognormal = fit_lognormal(v)
    pick = "log" if lognormal.aicc < normal.aicc - 1e-9 else "identity"
    return TransformRecommendation(pick, [normal, lognormal])


# ---------------------------------------------------------------------------
# Transforms


def transform(values, kind: str):
    x = np.asarray(values, dtype=float)
    if kind == "identity":
        return x.copy()
    if kind == "log":
        if (x <= 0).any():
            raise ValueError("log transform requires positive values")
        return np.log(x)
    if kind == "logit":
        if (x <= 0).any() or (x >= 1).any():
            raise ValueError("logit transform requires values strictly inside (0, 1)")
        return np.log(x / (1.0 - x))
    raise ValueError(f"unknown transform {kind!r}")


def inverse_transform(values, kind: str):
    x = np.asarray(values, dtype=float)
    if kind == "identity":
        return x.copy()
    if kind == "log":
        return np.exp(x)
    if kind == "logit":
        return 1.0 / (1.0 + np.exp(-x))
    raise ValueError(f"unknown transform {kind!r}")
