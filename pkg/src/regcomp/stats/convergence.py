"""Pathwise-paired convergence reports for the occupancy limit laws."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..occupancy import OverflowBudgetWarning, allocate_fixed, allocate_poissonized, count_profile
from ..regvar import DomainError, GrowthFunction, growth_eval, small_count_constant
from ..subordinator import exp_functional, frequencies, regvar_subordinator, rho, simulate_path
from .config import ExperimentConfig
from .replication import resolve_threads, stream

TARGETS = ("thm-main2", "thm-main3", "lln-kn", "lln-knr", "rho-pathwise", "to-zero")
_NEEDS_GROWTH = ("thm-main2", "thm-main3", "to-zero")


@dataclass(frozen=True)
class RatioRow:
    path: int
    n: float
    r: int
    statistic: float
    normalized: float
    target: float
    ratio: float
    flagged: bool
    note: str = ""


@dataclass(frozen=True, eq=False)
class RatioReport:
    """Rows ``(path, n, r, statistic, normalized, target, ratio, flagged)``.

    ``ratio`` is ``normalized / target``; for ``to-zero`` it is the indicator
    ``K == 0`` against target 1.
    """

    target: str
    rows: tuple
    metadata: dict

    def final_rows(self) -> list[RatioRow]:
        """Rows at the largest grid point, one per (path, r)."""
        n_max = max(row.n for row in self.rows)
        return [row for row in self.rows if row.n == n_max]

    def fraction_within(self, tol: float, r: int | None = None) -> float:
        """Share of final rows with ``|ratio - 1| <= tol``; flagged rows count as misses."""
        rows = [row for row in self.final_rows() if r is None or row.r == r]
        hits = sum(1 for row in rows if not row.flagged and abs(row.ratio - 1.0) <= tol)
        return hits / len(rows)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        names = list(RatioRow.__dataclass_fields__)
        w.writerow(names)
        for row in self.rows:
            d = asdict(row)
            w.writerow([repr(d[k]) if isinstance(d[k], float) else d[k] for k in names])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _indices(target, n, growth, r_values):
    if target in _NEEDS_GROWTH:
        return [growth_eval(growth, n)]
    if target == "lln-knr":
        return list(r_values)
    return [1]


def convergence_report(
    target: str,
    config: ExperimentConfig,
    n_grid,
    growth: GrowthFunction | str | None = None,
    r_values=(1, 2, 3),
) -> RatioReport:
    """Track a normalized statistic along ``n_grid`` on each of ``config.replications`` paths.

    Each path is simulated once, fine enough for the largest grid point, and
    its frequencies are reused with a fresh allocation per grid point (fixed
    or Poissonized per ``config.allocation``). The target is built from the
    same path's ``I_alpha``. ``rho-pathwise`` reads the grid as ``1/x`` and
    needs no allocation.

    Grid points where the truncation level exceeds ``kappa * r / n`` or the
    expected overflow exceeds the budget are flagged, not dropped.
    """
    if target not in TARGETS:
        raise DomainError(f"unknown target {target!r}; choose from {TARGETS}")
    if config.model == "powerlaw":
        raise DomainError("convergence reports need a regenerative model")
    if isinstance(growth, str):
        alpha0, ell0 = config.index_params()
        growth = GrowthFunction.parse(growth, alpha0, ell0)
    if target in _NEEDS_GROWTH and growth is None:
        raise DomainError(f"target {target} needs a growth function")
    grid = sorted(float(n) for n in n_grid)
    if not grid or grid[0] < 1:
        raise DomainError("n_grid must be nonempty with entries >= 1")
    fixed = config.allocation == "fixed"
    if fixed and any(n != int(n) for n in grid):
        raise DomainError("fixed-n grids need integer n")

    tail = config.tail()
    alpha, ell = tail.alpha, tail.ell
    spec = regvar_subordinator(tail)
    plan = [(n, _indices(target, n, growth, r_values)) for n in grid]
    if config.epsilon is not None:
        epsilon = config.epsilon
    else:
        epsilon = config.kappa * min(min(rs) / n for n, rs in plan)
    stop_tol = config.resolved_stop_tol(grid[-1])
    gamma_norm = math.gamma(1.0 - alpha)

    def one_path(i):
        path = simulate_path(spec, epsilon, stop_tol, stream(config.master_seed, i, 0))
        freqs = frequencies(path)
        i_alpha = exp_functional(path, alpha).exp_functional
        rows = []
        for j, (n, rs) in enumerate(plan, start=1):
            overflow_mass = freqs.residual_mass * n
            prof = None
            if target != "rho-pathwise":
                rng = stream(config.master_seed, i, j)
                if fixed:
                    # budget breaches are flagged per row below
                    occ = _quiet_fixed(freqs, int(n), rng)
                else:
                    occ = allocate_poissonized(freqs, n, rng)
                prof = count_profile(occ)
            for r in rs:
                notes = []
                if epsilon > config.kappa * r / n * (1 + 1e-12):
                    notes.append("epsilon above kappa*r/n")
                if overflow_mass > config.overflow_budget:
                    notes.append("overflow budget exceeded")
                stat, norm, tgt = _statistic(target, prof, freqs, n, r, alpha, ell, gamma_norm, i_alpha)
                ratio = norm / tgt
                rows.append(RatioRow(i, n, r, stat, norm, tgt, ratio, bool(notes), "; ".join(notes)))
        return rows

    m = config.replications
    workers = resolve_threads(config.threads, m)
    if workers == 1:
        per_path = [one_path(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_path = list(pool.map(one_path, range(m)))
    rows = tuple(row for rows in per_path for row in rows)
    meta = {
        "target": target,
        "config": config.to_dict(),
        "n_grid": grid,
        "growth": growth.to_string() if growth is not None else None,
        "r_values": list(r_values) if target == "lln-knr" else None,
        "epsilon": epsilon,
        "stop_tol": stop_tol,
    }
    return RatioReport(target=target, rows=rows, metadata=meta)


def _quiet_fixed(freqs, n, rng):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverflowBudgetWarning)
        return allocate_fixed(freqs, n, rng, strict=False)


def _statistic(target, prof, freqs, n, r, alpha, ell, gamma_norm, i_alpha):
    """``(raw statistic, normalized statistic, target)`` for one grid point."""
    if target == "thm-main2":
        k = prof.exactly(r)
        return float(k), r ** (alpha + 1) * k / (n**alpha * float(ell(n / r))), alpha * i_alpha
    if target == "thm-main3":
        k = prof.at_least(r)
        return float(k), r**alpha * k / (n**alpha * float(ell(n / r))), i_alpha
    if target == "to-zero":
        k = prof.exactly(r)
        return float(k), 1.0 if k == 0 else 0.0, 1.0
    scale = gamma_norm * n**alpha * float(ell(n))
    if target == "lln-kn":
        k = prof.total_occupied
        return float(k), k / scale, i_alpha
    if target == "lln-knr":
        k = prof.exactly(r)
        return float(k), k / scale, small_count_constant(alpha, r) * i_alpha
    # rho-pathwise: x = 1/n
    k = rho(freqs, 1.0 / n)
    return float(k), k / (n**alpha * float(ell(n))), i_alpha
