"""Regular-variation primitives.

Slowly varying factors, regularly varying tails, the moderate-part
threshold solver and the small-count constants ``c_r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gammaln

ArrayLike = Union[float, np.ndarray]


class DomainError(ValueError):
    """Argument outside the domain of a regular-variation primitive."""


class InfeasibleThresholdError(ValueError):
    """The threshold equation has no root in ``[1, t]``."""


@dataclass(frozen=True)
class SlowlyVaryingSpec:
    """A slowly varying function ``ell`` on ``[1, inf)``.

    Two families are supported: ``const`` (``ell(x) = c``) and ``logpow``
    (``ell(x) = (offset + ln x)**p``). Below ``x = 1`` the function is
    continued by the constant ``ell(1)``, which keeps it locally bounded and
    positive on ``(0, inf)``.
    """

    kind: str = "const"
    c: float = 1.0
    p: float = 0.0
    offset: float = 1.0

    def __post_init__(self):
        if self.kind == "const":
            if not (self.c > 0 and math.isfinite(self.c)):
                raise DomainError(f"constant slowly varying factor needs c > 0, got {self.c}")
        elif self.kind == "logpow":
            if not self.offset >= 1:
                raise DomainError(f"log-power offset must be >= 1, got {self.offset}")
            if not math.isfinite(self.p):
                raise DomainError("log-power exponent must be finite")
        else:
            raise DomainError(f"unknown slowly varying kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float) -> "SlowlyVaryingSpec":
        return cls(kind="const", c=float(c))

    @classmethod
    def log_power(cls, p: float, offset: float = 1.0) -> "SlowlyVaryingSpec":
        return cls(kind="logpow", p=float(p), offset=float(offset))

    @classmethod
    def parse(cls, text: str) -> "SlowlyVaryingSpec":
        """Parse ``const:c`` or ``logpow:p[,offset]``."""
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        try:
            if kind == "const":
                return cls.constant(float(rest))
            if kind == "logpow":
                parts = [float(v) for v in rest.split(",")]
                if len(parts) == 1:
                    return cls.log_power(parts[0])
                if len(parts) == 2:
                    return cls.log_power(parts[0], parts[1])
        except ValueError as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"cannot parse slowly varying spec {text!r}") from exc
        raise DomainError(f"cannot parse slowly varying spec {text!r}")

    def to_string(self) -> str:
        if self.kind == "const":
            return f"const:{self.c!r}"
        return f"logpow:{self.p!r},{self.offset!r}"

    def log_arg(self, x: ArrayLike) -> ArrayLike:
        """``offset + ln(max(x, 1))``, the base of the log-power family."""
        return self.offset + np.log(np.maximum(x, 1.0))

    def __call__(self, x: ArrayLike) -> ArrayLike:
        if self.kind == "const":
            return self.c * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else self.c
        return self.log_arg(x) ** self.p

    def log(self, x: ArrayLike) -> ArrayLike:
        if self.kind == "const":
            return math.log(self.c) * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else math.log(self.c)
        return self.p * np.log(self.log_arg(x))

    def elasticity(self, x: ArrayLike) -> ArrayLike:
        """``x ell'(x) / ell(x)``; zero below ``x = 1`` and for constants."""
        if self.kind == "const":
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        out = self.p / self.log_arg(x)
        return np.where(np.asarray(x) >= 1.0, out, 0.0) if np.ndim(x) else (out if x >= 1.0 else 0.0)


LEVY_TAIL = "levy-tail"
COUNTING_FUNCTION = "counting-function"


@dataclass(frozen=True)
class RegVarTail:
    """Tail ``y -> y**(-alpha) * ell(1/y)`` regularly varying at zero."""

    alpha: float
    ell: SlowlyVaryingSpec
    role: str = LEVY_TAIL

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.role not in (LEVY_TAIL, COUNTING_FUNCTION):
            raise DomainError(f"unknown tail role {self.role!r}")
        ell = self.ell
        # y**-alpha * ell(1/y) must decrease on (0, 1]; only p < 0 can break it
        if ell.kind == "logpow" and ell.p < 0 and self.alpha * ell.offset <= -ell.p:
            raise DomainError("log-power tail is not monotone: need alpha * offset > -p")

    def __call__(self, y: ArrayLike) -> ArrayLike:
        y = np.asarray(y, dtype=float) if np.ndim(y) else float(y)
        return y ** (-self.alpha) * self.ell(1.0 / y)


def stable_tail(alpha: float) -> RegVarTail:
    """Levy tail of the alpha-stable subordinator, ``y**-alpha / Gamma(1-alpha)``."""
    if not 0 < alpha < 1:
        raise DomainError(f"stable preset needs alpha in (0, 1), got {alpha}")
    return RegVarTail(alpha, SlowlyVaryingSpec.constant(math.exp(-gammaln(1.0 - alpha))))


def levy_tail(tail: RegVarTail, y: float) -> float:
    """Evaluate ``nu([y, inf)) = y**-alpha * ell(1/y)``."""
    if tail.role != LEVY_TAIL:
        raise DomainError("levy_tail needs a tail with role 'levy-tail'")
    if not y > 0:
        raise DomainError(f"Levy tail is defined for y > 0, got {y}")
    return float(tail(y))


def _threshold_log_residual(alpha, ell, log_t, log_r):
    # ln(alpha t^alpha ell(t/r) / r^(alpha+1))
    return math.log(alpha) + alpha * log_t + float(ell.log(math.exp(log_t - log_r))) - (alpha + 1.0) * log_r


def threshold_residual(alpha: float, ell: SlowlyVaryingSpec, t: float, r: float) -> float:
    """Left side of the threshold equation ``alpha t^alpha ell(t/r) / r^(alpha+1)``."""
    return math.exp(_threshold_log_residual(alpha, ell, math.log(t), math.log(r)))


def solve_threshold(alpha: float, ell: SlowlyVaryingSpec, t: float) -> float:
    """Solve ``alpha t^alpha ell(t/r) / r^(alpha+1) = 1`` for ``r`` in ``[1, t]``.

    Bisection on ``ln r``; the residual is driven to machine precision and
    checked against ``1e-12``.

    Raises:
        InfeasibleThresholdError: if the residual does not change sign on
            ``[1, t]``.
    """
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not t > 1:
        raise InfeasibleThresholdError(f"t must exceed 1, got {t}")
    log_t = math.log(t)
    lo, hi = 0.0, log_t
    f_lo = _threshold_log_residual(alpha, ell, log_t, lo)
    f_hi = _threshold_log_residual(alpha, ell, log_t, hi)
    if f_lo == 0.0:
        return 1.0
    if f_hi == 0.0:
        return float(t)
    if f_lo < 0 or f_hi > 0:
        raise InfeasibleThresholdError(
            f"no sign change of the threshold equation on [1, {t:g}] (alpha={alpha}, ell={ell.to_string()})"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = _threshold_log_residual(alpha, ell, log_t, mid)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
    # pick the endpoint with the smaller residual
    best = min((lo, hi), key=lambda v: abs(_threshold_log_residual(alpha, ell, log_t, v)))
    r = math.exp(best)
    resid = threshold_residual(alpha, ell, t, r)
    if abs(resid - 1.0) > 1e-12:
        raise InfeasibleThresholdError(f"bisection stalled with residual {resid - 1.0:.3e}")
    return r


def naive_threshold(alpha: float, ell: SlowlyVaryingSpec, t: float) -> float:
    """Threshold from ``alpha t^alpha ell(t) / r^(1+alpha) = 1`` (closed form).

    Agrees with :func:`solve_threshold` when ``ell`` is constant and in
    general differs from it by a slowly varying factor.
    """
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    return float(math.exp((math.log(alpha) + alpha * math.log(t) + float(ell.log(t))) / (alpha + 1.0)))


def small_count_constant(alpha: float, r) -> ArrayLike:
    """``c_r = (-1)**(r-1) binom(alpha, r) = alpha Gamma(r-alpha) / (Gamma(1-alpha) Gamma(r+1))``.

    Evaluated in log-gamma space; accepts an integer or an integer array.
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    r_arr = np.asarray(r)
    if np.any(r_arr < 1):
        raise DomainError("r must be a positive integer")
    out = np.exp(math.log(alpha) + gammaln(r_arr - alpha) - gammaln(1.0 - alpha) - gammaln(r_arr + 1.0))
    return float(out) if np.ndim(r) == 0 else out


@dataclass(frozen=True)
class GrowthFunction:
    """Integer-valued growth function ``t -> floor(g(t))``.

    Kinds:
        ``power``: ``scale * t**theta``.
        ``power-log``: ``scale * t**theta * (ln t)**p``.
        ``constant``: ``scale`` (classical fixed-index case).
        ``threshold-r``: ``scale * r(t)`` with ``r`` from :func:`solve_threshold`
            for ``(alpha, ell)``.
    """

    kind: str
    theta: float = 0.0
    p: float = 0.0
    scale: float = 1.0
    alpha: float | None = None
    ell: SlowlyVaryingSpec | None = None

    def __post_init__(self):
        if self.kind not in ("power", "power-log", "constant", "threshold-r"):
            raise DomainError(f"unknown growth kind {self.kind!r}")
        if not self.scale > 0:
            raise DomainError("growth scale must be positive")
        if self.kind in ("power", "power-log") and not 0 < self.theta < 1:
            raise DomainError(f"growth exponent must lie in (0, 1), got {self.theta}")
        if self.kind == "threshold-r" and (self.alpha is None or self.ell is None):
            raise DomainError("threshold-r growth needs alpha and ell")

    @classmethod
    def power(cls, theta: float, scale: float = 1.0) -> "GrowthFunction":
        return cls("power", theta=theta, scale=scale)

    @classmethod
    def power_log(cls, theta: float, p: float, scale: float = 1.0) -> "GrowthFunction":
        return cls("power-log", theta=theta, p=p, scale=scale)

    @classmethod
    def constant(cls, value: float) -> "GrowthFunction":
        return cls("constant", scale=value)

    @classmethod
    def threshold(cls, alpha: float, ell: SlowlyVaryingSpec, scale: float = 1.0) -> "GrowthFunction":
        return cls("threshold-r", alpha=alpha, ell=ell, scale=scale)

    @classmethod
    def parse(cls, text: str, alpha: float | None = None, ell: SlowlyVaryingSpec | None = None) -> "GrowthFunction":
        """Parse ``pow:theta[*scale]``, ``powlog:theta,p``, ``const:c`` or ``r[*u]``."""
        text = text.strip()
        try:
            if text == "r" or text.startswith("r*"):
                scale = float(text[2:]) if text.startswith("r*") else 1.0
                return cls.threshold(alpha, ell, scale)
            kind, _, rest = text.partition(":")
            if kind == "pow":
                theta, _, scale = rest.partition("*")
                return cls.power(float(theta), float(scale) if scale else 1.0)
            if kind == "powlog":
                theta, p = (float(v) for v in rest.split(","))
                return cls.power_log(theta, p)
            if kind == "const":
                return cls.constant(float(rest))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"cannot parse growth function {text!r}") from exc
        raise DomainError(f"cannot parse growth function {text!r}")

    def to_string(self) -> str:
        if self.kind == "power":
            return f"pow:{self.theta!r}" if self.scale == 1 else f"pow:{self.theta!r}*{self.scale!r}"
        if self.kind == "power-log":
            return f"powlog:{self.theta!r},{self.p!r}"
        if self.kind == "constant":
            return f"const:{self.scale!r}"
        return "r" if self.scale == 1 else f"r*{self.scale!r}"

    def value(self, t: float) -> float:
        """Unfloored value ``g(t)``."""
        if self.kind == "power":
            return self.scale * t**self.theta
        if self.kind == "power-log":
            return self.scale * t**self.theta * math.log(t) ** self.p
        if self.kind == "constant":
            return self.scale
        return self.scale * solve_threshold(self.alpha, self.ell, t)


def growth_eval(g: GrowthFunction, t: float) -> int:
    """Return ``floor(g(t))``, which must be at least 1."""
    if not t >= 1:
        raise DomainError(f"growth functions are evaluated at t >= 1, got {t}")
    v = g.value(t)
    # guard against 99.99999999999999 style representation error of exact integers
    out = math.floor(v + 1e-9 * max(1.0, abs(v)))
    if out < 1:
        raise DomainError(f"growth function {g.to_string()} is below 1 at t={t:g}")
    return int(out)
