"""Seeded, parallel replication of occupancy experiments."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..occupancy import (
    OverflowBudgetError,
    OverflowBudgetWarning,
    allocate_fixed,
    allocate_poissonized,
    count_profile,
    omitted_relevance,
    power_law_for_counts,
    power_law_frequencies,
)
from ..subordinator import exp_functional, frequencies, regvar_subordinator, simulate_path
from .config import DEFAULT_RELEVANCE_TOL, ExperimentConfig, Record


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(master_seed, *key)``; pure in its arguments."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


def resolve_threads(threads: int, jobs: int) -> int:
    n = (os.cpu_count() or 1) if threads == 0 else threads
    return max(1, min(n, jobs))


@dataclass(frozen=True, eq=False)
class ReplicationTable:
    """One row per replication; columns are numpy arrays keyed by name."""

    columns: tuple
    data: dict
    indices: dict  # record label -> evaluated r
    metadata: dict

    def __len__(self):
        return len(self.data["index"])

    def __getitem__(self, name) -> np.ndarray:
        return self.data[name]

    def counts(self, label: str) -> np.ndarray:
        return self.data[f"K[{label}]"]

    def to_csv(self, path=None) -> str:
        """CSV text under a ``#`` JSON metadata line; also written to ``path`` if given."""
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        cols = [self.data[c] for c in self.columns]
        for i in range(len(self)):
            w.writerow([_cell(c[i]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _cell(v):
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return v


class _Plan:
    """Per-experiment constants shared by every replication."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.records: list[Record] = cfg.parsed_records()
        self.r = [rec.index(cfg.size) for rec in self.records]
        self.r_min = min(self.r)
        self.fixed = cfg.allocation == "fixed"
        if cfg.model == "powerlaw":
            if cfg.tail_tol is not None:
                self.freqs = power_law_frequencies(cfg.beta, cfg.tail_tol)
                self.relevance = None
            else:
                self.freqs = power_law_for_counts(cfg.beta, cfg.size, self.r_min, DEFAULT_RELEVANCE_TOL)
                self.relevance = omitted_relevance(self.freqs, cfg.size, self.r_min)
            self.spec = None
        else:
            self.tail = cfg.tail()
            self.spec = regvar_subordinator(self.tail)
            self.epsilon = cfg.resolved_epsilon()
            self.stop_tol = cfg.resolved_stop_tol()
            self.phi = self.spec.laplace_exponent(self.tail.alpha, self.epsilon)

    def check_powerlaw_budget(self):
        """Strict-mode overflow check for the deterministic power-law frequencies."""
        cfg = self.cfg
        if self.relevance is not None:
            excess, what = self.relevance, "expected omitted boxes reaching the smallest recorded count"
        else:
            excess, what = self.freqs.residual_mass * cfg.size, "expected overflow balls"
        if excess > cfg.overflow_budget:
            msg = f"{what} {excess:.3g} exceeds budget {cfg.overflow_budget}"
            if cfg.strict:
                raise OverflowBudgetError(msg)
            warnings.warn(msg, OverflowBudgetWarning, stacklevel=3)

    def allocate(self, freqs, rng):
        cfg = self.cfg
        if not self.fixed:
            if self.spec is not None and cfg.strict and freqs.residual_mass * cfg.size > cfg.overflow_budget:
                raise OverflowBudgetError(
                    f"expected overflow {freqs.residual_mass * cfg.size:.3g} balls exceeds budget {cfg.overflow_budget}"
                )
            return allocate_poissonized(freqs, cfg.size, rng)
        if self.spec is None:
            # record-aware truncation: the budget is on omitted relevant boxes, checked up front
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", OverflowBudgetWarning)
                return allocate_fixed(freqs, int(cfg.size), rng, strict=False)
        return allocate_fixed(freqs, int(cfg.size), rng, strict=cfg.strict, overflow_budget=cfg.overflow_budget)

    def conditional_mean(self, probs, rec: Record, r: int) -> float:
        """``E[count | frequencies]`` for one record."""
        size = self.cfg.size
        if self.fixed:
            n = int(size)
            if rec.kind == "total":
                return math.fsum(-np.expm1(n * np.log1p(-probs)))
            dist = sps.binom(n, probs)
        else:
            if rec.kind == "total":
                return math.fsum(-np.expm1(-size * probs))
            dist = sps.poisson(size * probs)
        vals = dist.pmf(r) if rec.kind == "exact" else dist.sf(r - 1)
        return math.fsum(vals)

    def run(self, i: int) -> dict:
        cfg = self.cfg
        rng = stream(cfg.master_seed, i)
        row = {"index": i, "seed": f"{cfg.master_seed}:{i}"}
        if self.spec is not None:
            path = simulate_path(self.spec, self.epsilon, self.stop_tol, rng)
            freqs = frequencies(path)
            summary = exp_functional(path, self.tail.alpha)
            row["I_alpha"] = summary.exp_functional
            row["I_bias_bound"] = path.stop_mass**self.tail.alpha / self.phi
            row["n_jumps"] = summary.n_jumps
        else:
            freqs = self.freqs
            row["n_boxes"] = freqs.K
        occ = self.allocate(freqs, rng)
        prof = count_profile(occ)
        probs = np.asarray(freqs.probs) if cfg.conditional_means else None
        for rec, r in zip(self.records, self.r):
            if rec.kind == "total":
                k = prof.total_occupied
            elif rec.kind == "exact":
                k = prof.exactly(r)
            else:
                k = prof.at_least(r)
            row[f"K[{rec.label}]"] = k
            if probs is not None:
                row[f"E[{rec.label}]"] = self.conditional_mean(probs, rec, r)
        row["overflow"] = occ.overflow
        return row


def run_replications(cfg: ExperimentConfig) -> ReplicationTable:
    """Run ``cfg.replications`` independent replications.

    Replication ``i`` draws everything from the stream ``(master_seed, i)``:
    for the regenerative models a fresh subordinator path supplies both the
    box frequencies and ``I_alpha`` before the balls are allocated, so the
    counts and ``I_alpha`` in a row are paired.

    Raises:
        OverflowBudgetError: strict mode and the expected number of balls
            (or relevant boxes) lost to truncation exceeds the budget.
    """
    plan = _Plan(cfg)
    if plan.spec is None:
        plan.check_powerlaw_budget()
    m = cfg.replications
    workers = resolve_threads(cfg.threads, m)
    if workers == 1:
        rows = [plan.run(i) for i in range(m)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(plan.run, range(m)))

    columns = ["index", "seed"]
    for rec in plan.records:
        columns.append(f"K[{rec.label}]")
        if cfg.conditional_means:
            columns.append(f"E[{rec.label}]")
    columns.append("overflow")
    columns += ["I_alpha", "I_bias_bound", "n_jumps"] if plan.spec is not None else ["n_boxes"]
    data = {}
    for c in columns:
        vals = [row[c] for row in rows]
        data[c] = np.array(vals, dtype=object if c == "seed" else None)
    indices = {rec.label: r for rec, r in zip(plan.records, plan.r)}
    meta = {"config": cfg.to_dict(), "r": indices}
    if plan.spec is not None:
        meta.update(epsilon=plan.epsilon, stop_tol=plan.stop_tol)
    else:
        meta.update(K=plan.freqs.K, residual_mass=plan.freqs.residual_mass)
    return ReplicationTable(columns=tuple(columns), data=data, indices=indices, metadata=meta)


def exp_functional_samples(cfg: ExperimentConfig, m: int, master_seed: int) -> np.ndarray:
    """``m`` values of ``I_alpha`` from fresh paths on streams ``(master_seed, i)``.

    Uses the truncation and stopping rules of ``cfg``; meant as an
    independent mixing sample for :func:`mixed_poisson_reference`.
    """
    plan = _Plan(cfg)
    if plan.spec is None:
        raise ValueError("power-law model has no exponential functional")
    alpha = plan.tail.alpha

    def one(i):
        path = simulate_path(plan.spec, plan.epsilon, plan.stop_tol, stream(master_seed, i))
        return exp_functional(path, alpha).exp_functional

    workers = resolve_threads(cfg.threads, m)
    if workers == 1:
        return np.array([one(i) for i in range(m)])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, range(m))))
