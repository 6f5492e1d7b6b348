"""Truncated simulation of drift-free subordinators.

Jumps below a truncation level ``epsilon`` are dropped (no drift
compensation). The remaining jumps form a compound Poisson process of rate
``nu_bar(epsilon)`` whose sizes are drawn by inverting the tail.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .regvar import DomainError, RegVarTail, LEVY_TAIL, stable_tail


class TruncationRequiredError(ValueError):
    """Infinite-activity tail evaluated without a positive truncation level."""


class DegenerateStopError(ValueError):
    """Stopping tolerance that would never (or always) stop."""


class EmptyPathError(ValueError):
    """Operation needs at least one simulated jump."""


@dataclass(frozen=True)
class SubordinatorSpec:
    """Levy tail ``nu_bar`` plus its generalized inverse."""

    tail: RegVarTail
    inverse_tail: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.tail.role != LEVY_TAIL:
            raise DomainError("subordinator needs a Levy tail")

    @property
    def alpha(self) -> float:
        return self.tail.alpha

    def nu_bar(self, y):
        return self.tail(y)

    def laplace_exponent(self, s: float, epsilon: float = 0.0) -> float:
        """``Phi_eps(s) = int_{[eps, inf)} (1 - e^{-s y}) nu(dy)``.

        Integrated by parts into ``(1 - e^{-s eps}) nu_bar(eps) + s int_eps^inf e^{-s y} nu_bar(y) dy``
        and evaluated by quadrature in ``ln y``.
        """
        head = 0.0
        if epsilon > 0:
            head = -math.expm1(-s * epsilon) * float(self.nu_bar(epsilon))
        lo = math.log(epsilon) if epsilon > 0 else -math.inf

        def integrand(u):
            y = math.exp(u)
            return s * math.exp(-s * y) * float(self.nu_bar(y)) * y

        upper = math.log(60.0 / s)
        if lo == -math.inf:
            lo_eff = -200.0
        else:
            lo_eff = lo
        pieces = [lo_eff] + [v for v in (math.log(1e-6 / s), math.log(1.0 / s)) if lo_eff < v < upper] + [upper]
        body = sum(
            integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
            for a, b in zip(pieces[:-1], pieces[1:])
        )
        return head + body

    def ignored_mass(self, epsilon: float) -> float:
        """Per-unit-time mass of dropped jumps, ``int_0^eps y nu(dy)``."""
        # int_0^eps y nu(dy) = int_0^eps nu_bar(y) dy - eps nu_bar(eps)
        val, _ = integrate.quad(
            lambda u: float(self.nu_bar(math.exp(u))) * math.exp(u), -400.0, math.log(epsilon),
            epsabs=0.0, epsrel=1e-11, limit=400,
        )
        return val - epsilon * float(self.nu_bar(epsilon))


def _bisect_inverse(tail: RegVarTail, levels: np.ndarray) -> np.ndarray:
    """Generalized inverse of ``nu_bar`` by vectorized bisection on ``ln y``."""
    levels = np.asarray(levels, dtype=float)
    ell1 = float(tail.ell(1.0))
    out = np.empty_like(levels)
    # y >= 1: nu_bar(y) = ell(1) y^-alpha exactly
    big = levels <= ell1
    out[big] = (ell1 / levels[big]) ** (1.0 / tail.alpha)
    small = ~big
    if np.any(small):
        lv = levels[small]
        lo = np.full(lv.shape, -1.0)
        # widen until nu_bar(lo) >= level
        while True:
            bad = tail(np.exp(lo)) < lv
            if not np.any(bad):
                break
            lo[bad] *= 2.0
        hi = np.zeros(lv.shape)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = tail(np.exp(mid)) >= lv
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= 1e-13):
                break
        out[small] = np.exp(lo)
    return out


def regvar_subordinator(tail: RegVarTail) -> SubordinatorSpec:
    """Subordinator with ``nu_bar = tail``; exact inverse when ``ell`` is constant."""
    if tail.ell.kind == "const":
        c, alpha = tail.ell.c, tail.alpha

        def inverse(level):
            return (c / np.asarray(level, dtype=float)) ** (1.0 / alpha)

    else:

        def inverse(level):
            return _bisect_inverse(tail, level)

    return SubordinatorSpec(tail, inverse)


def stable_subordinator(alpha: float) -> SubordinatorSpec:
    """alpha-stable subordinator, ``nu_bar(y) = y**-alpha / Gamma(1 - alpha)``."""
    return regvar_subordinator(stable_tail(alpha))


@dataclass(frozen=True, eq=False)
class SubordinatorPath:
    """Jump record of a truncated subordinator up to the stopping index."""

    epochs: np.ndarray
    jumps: np.ndarray
    running: np.ndarray
    epsilon: float
    stop_mass: float
    rate: float = math.nan

    def __post_init__(self):
        for arr in (self.epochs, self.jumps, self.running):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.jumps)

    def to_csv(self, path) -> None:
        """Dump ``k, tau_k, j_k, S_k`` for debugging."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "tau_k", "j_k", "S_k"])
            for k, (tau, j, s) in enumerate(zip(self.epochs, self.jumps, self.running), start=1):
                w.writerow([k, repr(float(tau)), repr(float(j)), repr(float(s))])


def simulate_path(
    spec: SubordinatorSpec,
    epsilon: float,
    stop_tol: float,
    rng: np.random.Generator,
    block: int = 4096,
) -> SubordinatorPath:
    """Simulate jumps of size ``>= epsilon`` until ``exp(-S) < stop_tol``.

    Epochs are partial sums of i.i.d. exponentials with mean
    ``1 / nu_bar(epsilon)``; jump sizes are ``inverse_tail(nu_bar(epsilon) * U)``
    with ``U`` uniform on ``(0, 1]``.
    """
    if not epsilon > 0:
        raise TruncationRequiredError("infinite Levy measure: epsilon must be positive")
    if not 0 < stop_tol < 1:
        raise DegenerateStopError(f"stop_tol must lie in (0, 1), got {stop_tol}")
    rate = float(spec.nu_bar(epsilon))
    if not (rate > 0 and math.isfinite(rate)):
        raise TruncationRequiredError(f"nu_bar(epsilon) = {rate} is not a finite positive rate")
    level = -math.log(stop_tol)

    epochs_parts, jumps_parts, running_parts = [], [], []
    tau0, s0 = 0.0, 0.0
    size = block
    while True:
        gaps = rng.exponential(1.0 / rate, size)
        u = 1.0 - rng.random(size)
        jumps = np.maximum(spec.inverse_tail(rate * u), epsilon)
        epochs = np.cumsum(np.concatenate(([tau0], gaps)))[1:]
        # sequential accumulation keeps running[k] == running[k-1] + jumps[k] in floating point
        running = np.cumsum(np.concatenate(([s0], jumps)))[1:]
        hit = np.flatnonzero(running > level)
        if hit.size:
            stop = hit[0] + 1
            epochs_parts.append(epochs[:stop])
            jumps_parts.append(jumps[:stop])
            running_parts.append(running[:stop])
            break
        epochs_parts.append(epochs)
        jumps_parts.append(jumps)
        running_parts.append(running)
        tau0, s0 = epochs[-1], running[-1]
        size = min(size * 2, 1 << 20)

    running = np.concatenate(running_parts)
    return SubordinatorPath(
        epochs=np.concatenate(epochs_parts),
        jumps=np.concatenate(jumps_parts),
        running=running,
        epsilon=float(epsilon),
        stop_mass=math.exp(-running[-1]),
        rate=rate,
    )


def coarsen(path: SubordinatorPath, epsilon: float) -> SubordinatorPath:
    """Restrict a path to jumps ``>= epsilon``.

    Thinning a Poisson point process by jump size gives exactly the
    coarser truncation on the same randomness, which is what the refinement
    cross-check needs.
    """
    if epsilon < path.epsilon:
        raise DomainError("coarsening level must not be below the path's truncation level")
    keep = path.jumps >= epsilon
    if not np.any(keep):
        raise EmptyPathError("no jumps survive coarsening")
    jumps = path.jumps[keep]
    running = np.cumsum(jumps)
    return SubordinatorPath(
        epochs=path.epochs[keep].copy(),
        jumps=jumps.copy(),
        running=running,
        epsilon=float(epsilon),
        stop_mass=math.exp(-running[-1]),
        rate=math.nan,
    )


@dataclass(frozen=True, eq=False)
class FrequencyVector:
    """Box frequencies in path order plus the unsimulated residual mass."""

    probs: np.ndarray
    residual_mass: float
    sorted_view: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs <= 0):
            raise DomainError("frequencies must be positive")
        object.__setattr__(self, "probs", probs)
        if self.sorted_view is None:
            object.__setattr__(self, "sorted_view", np.sort(probs)[::-1].copy())
        self.probs.setflags(write=False)
        self.sorted_view.setflags(write=False)

    def __len__(self):
        return len(self.probs)

    def total(self) -> float:
        return math.fsum(self.probs) + self.residual_mass


def frequencies(path: SubordinatorPath) -> FrequencyVector:
    """Box frequencies ``p_k = exp(-S(tau_{k-1})) - exp(-S(tau_k))``.

    Computed as ``exp(-S_{k-1}) * (-expm1(-(S_k - S_{k-1})))``, which equals
    the telescoping difference without cancellation for tiny jumps.
    """
    if len(path) == 0:
        raise EmptyPathError("path has no jumps")
    prev = np.concatenate(([0.0], path.running[:-1]))
    inc = path.running - prev
    probs = np.exp(-prev) * -np.expm1(-inc)
    # underflow for jumps far beyond the stopping level is impossible: S stops right after crossing it
    return FrequencyVector(probs=probs, residual_mass=path.stop_mass)


def rho(freqs: FrequencyVector, x):
    """Counting function ``#{k : p_k >= x}``; vectorized in ``x``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise DomainError("rho(x) needs x > 0")
    asc = freqs.sorted_view[::-1]
    out = len(asc) - np.searchsorted(asc, x_arr, side="left")
    return int(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class PathSummary:
    exp_functional: float
    bias_bound: float
    n_jumps: int
    truncation_bias: float = math.nan


def exp_functional(path: SubordinatorPath, alpha: float, spec: SubordinatorSpec | None = None) -> PathSummary:
    """Estimate ``I_alpha = int_0^inf exp(-alpha S(tau)) d tau`` up to the last jump.

    ``bias_bound`` is the conditional mean of the discarded remainder,
    ``stop_mass**alpha / Phi_eps(alpha)``. ``truncation_bias`` estimates how
    much the dropped small jumps inflate the value: they act like a drift of
    rate ``m = int_0^eps y nu(dy)``, which to first order lowers the integral
    by ``alpha * m * int tau exp(-alpha S(tau)) d tau``. Both need ``spec``
    and are ``nan`` without it.
    """
    if len(path) == 0:
        raise EmptyPathError("path has no jumps")
    tau = path.epochs
    gaps = np.diff(tau)
    weights = np.exp(-alpha * path.running[:-1])
    body = math.fsum(gaps * weights)
    value = float(tau[0]) + body
    bias = trunc = math.nan
    if spec is not None:
        bias = path.stop_mass**alpha / spec.laplace_exponent(alpha, path.epsilon)
        moment = 0.5 * float(tau[0]) ** 2 + math.fsum(0.5 * (tau[1:] ** 2 - tau[:-1] ** 2) * weights)
        trunc = alpha * spec.ignored_mass(path.epsilon) * moment
    return PathSummary(exp_functional=value, bias_bound=bias, n_jumps=len(path), truncation_bias=trunc)
