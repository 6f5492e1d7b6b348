"""Reference samplers and goodness-of-fit tests for count data."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from ..regvar import DomainError


@dataclass
class TestReport:
    name: str
    statistic: float
    p_value: float | None
    passed: bool
    diagnostics: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def mixed_poisson_reference(alpha: float, u: float, i_alpha_samples, rng: np.random.Generator) -> np.ndarray:
    """One ``Poisson(u**(-alpha-1) * I)`` draw per mixing value ``I``."""
    if not u > 0:
        raise DomainError("u must be positive")
    i_alpha = np.asarray(i_alpha_samples, dtype=float)
    if i_alpha.size == 0:
        raise DomainError("need at least one mixing sample")
    if np.any(i_alpha <= 0):
        raise DomainError("mixing values must be positive")
    return rng.poisson(u ** (-alpha - 1.0) * i_alpha)


def _merge_bins(counts_a, counts_b, min_expected):
    """Greedy left-to-right merge of value cells until every expected count is large enough."""
    na, nb = counts_a.sum(), counts_b.sum()
    total = na + nb
    need = min_expected * total / min(na, nb)  # pooled cell size giving expected >= min_expected
    bins_a, bins_b = [], []
    acc_a = acc_b = 0
    for ca, cb in zip(counts_a, counts_b):
        acc_a += ca
        acc_b += cb
        if acc_a + acc_b >= need:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
            acc_a = acc_b = 0
    if acc_a + acc_b:
        if bins_a:
            bins_a[-1] += acc_a
            bins_b[-1] += acc_b
        else:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
    return np.array(bins_a), np.array(bins_b)


def two_sample_test(a, b, alpha_level: float = 0.01, min_expected: float = 5.0) -> TestReport:
    """Chi-square homogeneity test on pooled-value bins.

    Cells are the distinct pooled values in increasing order, merged from
    the left until each cell's expected count under homogeneity is at least
    ``min_expected`` in both samples.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size < 200 or b.size < 200:
        raise DomainError("two_sample_test needs at least 200 observations per sample")
    pooled = np.concatenate([a, b])
    values = np.unique(pooled)
    diag = {"n_a": int(a.size), "n_b": int(b.size), "mean_a": float(a.mean()), "mean_b": float(b.mean())}
    if values.size == 1:
        diag["note"] = "degenerate pooled sample (single value)"
        return TestReport("two-sample-chi2", 0.0, 1.0, True, diag)
    ca = np.array([np.count_nonzero(a == v) for v in values]) if values.size < 64 else _bincount_on(a, values)
    cb = np.array([np.count_nonzero(b == v) for v in values]) if values.size < 64 else _bincount_on(b, values)
    ba, bb = _merge_bins(ca, cb, min_expected)
    diag["bins"] = int(ba.size)
    if ba.size < 2:
        diag["note"] = "all values merged into one cell"
        return TestReport("two-sample-chi2", 0.0, 1.0, True, diag)
    table = np.vstack([ba, bb]).astype(float)
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    dof = ba.size - 1
    p = float(sps.chi2.sf(stat, dof))
    diag["dof"] = dof
    diag["min_expected"] = float(expected.min())
    return TestReport("two-sample-chi2", stat, p, p > alpha_level, diag)


def _bincount_on(x, values):
    idx = np.searchsorted(values, x)
    return np.bincount(idx, minlength=values.size)


def dispersion_test(samples, alpha_level: float = 0.01) -> TestReport:
    """Index of dispersion ``var/mean`` against the Poisson value 1.

    Under the Poisson null ``(m-1) D`` is approximately chi-square with
    ``m-1`` degrees of freedom, so ``D`` is approximately normal with mean 1
    and variance ``2/(m-1)``; the p-value is two-sided.
    """
    x = np.asarray(samples, dtype=float)
    m = x.size
    if m < 500:
        raise DomainError("dispersion_test needs at least 500 observations")
    mean = float(x.mean())
    diag = {"n": int(m), "mean": mean}
    if mean == 0.0:
        diag["note"] = "undefined dispersion: zero mean"
        return TestReport("dispersion", math.nan, None, False, diag)
    var = float(x.var(ddof=1))
    d = var / mean
    z = (d - 1.0) / math.sqrt(2.0 / (m - 1))
    p = float(2.0 * sps.norm.sf(abs(z)))
    diag.update(variance=var, z=z)
    return TestReport("dispersion", d, p, p > alpha_level, diag)
