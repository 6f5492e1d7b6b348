"""Infinite occupancy engines: fixed-n and Poissonized allocation."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .regvar import DomainError


class NonSummableError(ValueError):
    """Power-law exponent that does not give a probability distribution."""


class OverflowBudgetError(ValueError):
    """Expected number of balls in the residual mass exceeds the budget."""


class OverflowBudgetWarning(UserWarning):
    pass


# Bernoulli numbers B2, B4, B6 for the Euler-Maclaurin tail of sum j^-beta
_EM_TERMS = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0)
_EM_START = 1000


def _em_tail(beta: float, n: int) -> float:
    """``sum_{j > n} j**-beta`` by Euler-Maclaurin at ``n`` (n large)."""
    n = float(n)
    total = n ** (1.0 - beta) / (beta - 1.0) - 0.5 * n ** (-beta)
    # - sum_k B_2k/(2k)! f^(2k-1)(n), f = x^-beta
    fact = 1.0
    deriv_coef = 1.0
    order = 0
    for k, b in enumerate(_EM_TERMS, start=1):
        # f^(m)(x) = (-1)^m beta (beta+1) ... (beta+m-1) x^(-beta-m)
        while order < 2 * k - 1:
            deriv_coef *= -(beta + order)
            order += 1
        fact = math.factorial(2 * k)
        total -= b / fact * deriv_coef * n ** (-beta - order)
    return total


def power_tail_sum(beta: float, k: int) -> float:
    """``sum_{j > k} j**-beta`` for ``beta > 1`` (direct head, Euler-Maclaurin tail)."""
    if not beta > 1:
        raise NonSummableError(f"sum j^-beta diverges for beta={beta}")
    if k >= _EM_START:
        return _em_tail(beta, k)
    head = np.arange(_EM_START, k, -1, dtype=float) ** (-beta)  # ascending magnitude
    return math.fsum(head) + _em_tail(beta, _EM_START)


def zeta_sum(beta: float) -> float:
    """``Z = sum_{j >= 1} j**-beta``."""
    return power_tail_sum(beta, 0)


@dataclass(frozen=True, eq=False)
class PowerLawFrequencies:
    """Deterministic frequencies ``p_j = j**-beta / Z`` truncated after ``K`` boxes.

    Probabilities are generated on demand, so very large ``K`` costs no
    memory until :attr:`probs` is read.
    """

    beta: float
    K: int
    Z: float
    residual_mass: float

    @property
    def probs(self) -> np.ndarray:
        return np.arange(1, self.K + 1, dtype=float) ** (-self.beta) / self.Z

    @property
    def sorted_view(self) -> np.ndarray:
        return self.probs

    def prob(self, j):
        return np.asarray(j, dtype=float) ** (-self.beta) / self.Z

    def __len__(self):
        return self.K

    @property
    def alpha_star(self) -> float:
        return 1.0 / self.beta

    @property
    def ell_star(self) -> float:
        """Constant slowly varying factor of ``rho*``: ``Z**(-1/beta)``."""
        return self.Z ** (-1.0 / self.beta)


def power_law_frequencies(beta: float, tail_tol: float) -> PowerLawFrequencies:
    """Smallest truncation ``K`` whose residual mass is at most ``tail_tol``."""
    if not beta > 1:
        raise NonSummableError(f"sum j^-beta diverges for beta={beta}")
    if not 0 < tail_tol < 1:
        raise DomainError(f"tail_tol must lie in (0, 1), got {tail_tol}")
    Z = zeta_sum(beta)
    return _truncate(beta, Z, lambda k: power_tail_sum(beta, k) / Z <= tail_tol)


def _log_tail_bound(b: float, k: int) -> float:
    """``ln`` of an upper bound on ``sum_{j > k} j**-b``: first term plus integral."""
    return -b * math.log(k + 1) + math.log1p((k + 1) / (b - 1.0))


def power_law_for_counts(beta: float, t: float, r_min: int, tol: float = 1e-6) -> PowerLawFrequencies:
    """Truncation that cannot affect counts ``>= r_min`` at intensity ``t``.

    Uses ``P(Poisson(lam) >= r) <= lam**r / r!`` (also valid for binomial
    counts with ``n p = lam``), so the expected number of omitted boxes
    reaching ``r_min`` is at most ``(t/Z)**r / r! * sum_{j>K} j**(-beta r)``.
    ``K`` is the smallest truncation that brings this below ``tol``.
    """
    if not beta > 1:
        raise NonSummableError(f"sum j^-beta diverges for beta={beta}")
    if r_min < 1:
        raise DomainError("r_min must be positive")
    Z = zeta_sum(beta)
    log_pref = r_min * math.log(t / Z) - math.lgamma(r_min + 1)
    log_tol = math.log(tol)
    return _truncate(beta, Z, lambda k: log_pref + _log_tail_bound(beta * r_min, k) <= log_tol)


def omitted_relevance(freqs: PowerLawFrequencies, t: float, r_min: int) -> float:
    """Upper bound on the expected number of omitted boxes with count ``>= r_min``."""
    log_pref = r_min * math.log(t / freqs.Z) - math.lgamma(r_min + 1)
    return math.exp(min(log_pref + _log_tail_bound(freqs.beta * r_min, freqs.K), 700.0))


def _truncate(beta, Z, ok):
    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > 1 << 40:
            raise DomainError("truncation search did not terminate")
    lo = hi // 2
    if ok(lo):
        hi = lo
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
    return PowerLawFrequencies(beta=beta, K=hi, Z=Z, residual_mass=power_tail_sum(beta, hi) / Z)


def rho_star(freqs: PowerLawFrequencies, x) -> int:
    """``#{j <= K : p_j >= x}`` from the closed form ``floor((Z x)**(-1/beta))``."""
    if not x > 0:
        raise DomainError("rho*(x) needs x > 0")
    guess = math.floor((freqs.Z * x) ** (-1.0 / freqs.beta))
    j = min(max(guess, 0), freqs.K)
    # repair rounding at exact box frequencies
    while j < freqs.K and freqs.prob(j + 1) >= x:
        j += 1
    while j > 0 and freqs.prob(j) < x:
        j -= 1
    return int(j)


FIXED_N = "fixed-n"
POISSONIZED = "poissonized"


@dataclass(frozen=True, eq=False)
class OccupancyCounts:
    """Per-box counts ``Z_k`` plus balls that fell into the residual mass."""

    counts: np.ndarray
    overflow: int
    mode: str
    size: float  # n for fixed-n, t for poissonized

    def __post_init__(self):
        self.counts.setflags(write=False)


def _probs_and_residual(freqs):
    return np.asarray(freqs.probs, dtype=float), float(freqs.residual_mass)


def allocate_fixed(
    freqs,
    n: int,
    rng: np.random.Generator,
    strict: bool = True,
    overflow_budget: float = 0.1,
) -> OccupancyCounts:
    """Drop ``n`` balls: a multinomial on ``(p_1, ..., p_K, residual)``.

    The draw is numpy's multinomial, which is the sequential conditional
    binomial scheme ``Z_k ~ Bin(n - sum_{i<k} Z_i, p_k / (1 - sum_{i<k} p_i))``
    in a single O(K) pass that stops once all balls are placed.

    Raises:
        OverflowBudgetError: in strict mode when ``residual_mass * n`` exceeds
            ``overflow_budget``; outside strict mode a warning is issued.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be a positive integer")
    probs, residual = _probs_and_residual(freqs)
    expected_overflow = residual * n
    if expected_overflow > overflow_budget:
        msg = f"expected overflow {expected_overflow:.3g} balls exceeds budget {overflow_budget}"
        if strict:
            raise OverflowBudgetError(msg)
        warnings.warn(msg, OverflowBudgetWarning, stacklevel=2)
    pvals = np.append(probs, max(residual, 0.0))
    # guard the sum check in numpy against last-ulp excess
    excess = math.fsum(probs) - 1.0
    if excess > 0:
        pvals[:-1] /= 1.0 + excess
        pvals[-1] = 0.0
    draw = rng.multinomial(n, pvals)
    return OccupancyCounts(counts=draw[:-1].astype(np.int64), overflow=int(draw[-1]), mode=FIXED_N, size=n)


def allocate_poissonized(freqs, t: float, rng: np.random.Generator) -> OccupancyCounts:
    """Independent ``Z_k ~ Poisson(p_k t)``; the residual bucket is drawn and reported."""
    if not t > 0:
        raise DomainError("t must be positive")
    probs, residual = _probs_and_residual(freqs)
    counts = rng.poisson(probs * t).astype(np.int64)
    overflow = int(rng.poisson(residual * t))
    return OccupancyCounts(counts=counts, overflow=overflow, mode=POISSONIZED, size=float(t))


@dataclass(frozen=True, eq=False)
class CountProfile:
    """``r -> K_r`` for occupied boxes; the overflow bucket is kept apart."""

    values: np.ndarray  # distinct positive counts, ascending
    multiplicity: np.ndarray  # K_r for each value
    overflow: int
    mode: str
    size: float
    _suffix: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        suffix = np.cumsum(self.multiplicity[::-1])[::-1] if len(self.multiplicity) else np.zeros(0, dtype=np.int64)
        object.__setattr__(self, "_suffix", suffix)

    @property
    def by_count(self) -> dict[int, int]:
        return {int(r): int(k) for r, k in zip(self.values, self.multiplicity)}

    @property
    def total_occupied(self) -> int:
        return int(self.multiplicity.sum())

    def exactly(self, r) -> int:
        i = np.searchsorted(self.values, r)
        if i < len(self.values) and self.values[i] == r:
            return int(self.multiplicity[i])
        return 0

    def at_least(self, r) -> int:
        i = np.searchsorted(self.values, r, side="left")
        return int(self._suffix[i]) if i < len(self._suffix) else 0

    def balls(self) -> int:
        return int(np.dot(self.values, self.multiplicity))

    def to_csv(self, path=None, seed=None) -> str:
        """``r,K_n_r`` rows under a ``#`` metadata line; returns the text."""
        buf = io.StringIO()
        size = int(self.size) if self.mode == FIXED_N else self.size
        key = "n" if self.mode == FIXED_N else "t"
        buf.write(f"# mode={self.mode} {key}={size!r} overflow={self.overflow} seed={seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "K_n_r"])
        for r, k in zip(self.values, self.multiplicity):
            w.writerow([int(r), int(k)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def count_profile(counts: OccupancyCounts) -> CountProfile:
    z = np.asarray(counts.counts)
    occupied = z[z > 0]
    values, mult = np.unique(occupied, return_counts=True)
    return CountProfile(
        values=values.astype(np.int64),
        multiplicity=mult.astype(np.int64),
        overflow=counts.overflow,
        mode=counts.mode,
        size=counts.size,
    )
