"""Experiment configuration: validation, defaults and JSON round-trip."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from ..regvar import DomainError, GrowthFunction, RegVarTail, SlowlyVaryingSpec, stable_tail

MODELS = ("stable", "regvar", "powerlaw")
ALLOCATIONS = ("fixed", "poissonized")
DEFAULT_KAPPA = 1e-2
DEFAULT_OVERFLOW_BUDGET = 0.1
DEFAULT_RELEVANCE_TOL = 1e-6


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.problems))


@dataclass(frozen=True)
class Record:
    """A count to record per replication.

    ``kind`` is ``exact`` (``K_{n,r}``), ``atleast`` (``K_{n,>=r}``) or
    ``total`` (``K_n``); ``growth`` gives ``r`` as a function of ``n``.
    """

    kind: str
    growth: GrowthFunction | None = None
    label: str = ""

    def index(self, size: float) -> int:
        from ..regvar import growth_eval

        return 1 if self.kind == "total" else growth_eval(self.growth, size)


def parse_record(text: str, alpha: float, ell: SlowlyVaryingSpec) -> Record:
    """``r-star``, ``r-star*u``, ``exact:G``, ``atleast:G`` or ``total``."""
    text = text.strip()
    if text == "total":
        return Record("total", None, text)
    if text == "r-star" or text.startswith("r-star*"):
        u = float(text[len("r-star*"):]) if "*" in text else 1.0
        return Record("exact", GrowthFunction.threshold(alpha, ell, u), text)
    kind, _, rest = text.partition(":")
    if kind in ("exact", "atleast") and rest:
        return Record(kind, GrowthFunction.parse(rest, alpha, ell), text)
    raise DomainError(f"cannot parse record {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model, allocation, recorded counts and replication plan."""

    model: str
    allocation: str = "fixed"
    size: float = 0.0  # n (fixed) or t (poissonized)
    alpha: float | None = None
    ell: str | None = None  # const:c | logpow:p[,offset]; required for regvar
    beta: float | None = None
    kappa: float = DEFAULT_KAPPA
    epsilon: float | None = None
    stop_tol: float | None = None
    tail_tol: float | None = None
    records: tuple = ("r-star",)
    replications: int = 100
    master_seed: int = 0
    strict: bool = True
    overflow_budget: float = DEFAULT_OVERFLOW_BUDGET
    threads: int = 0
    conditional_means: bool = False

    # -- derived quantities -------------------------------------------------
    def tail(self) -> RegVarTail:
        if self.model == "stable":
            return stable_tail(self.alpha)
        if self.model == "regvar":
            return RegVarTail(self.alpha, SlowlyVaryingSpec.parse(self.ell))
        raise DomainError("power-law model has no Levy tail")

    def index_params(self) -> tuple[float, SlowlyVaryingSpec]:
        """``(alpha, ell)`` of the counting function driving the threshold."""
        if self.model == "powerlaw":
            from ..occupancy import zeta_sum

            return 1.0 / self.beta, SlowlyVaryingSpec.constant(zeta_sum(self.beta) ** (-1.0 / self.beta))
        tail = self.tail()
        return tail.alpha, tail.ell

    def parsed_records(self) -> list[Record]:
        alpha, ell = self.index_params()
        return [parse_record(r, alpha, ell) for r in self.records]

    def min_index(self, size: float | None = None) -> int:
        size = self.size if size is None else size
        return min(rec.index(size) for rec in self.parsed_records())

    def resolved_epsilon(self, size: float | None = None) -> float:
        size = self.size if size is None else size
        if self.epsilon is not None:
            return self.epsilon
        return self.kappa * self.min_index(size) / size

    def resolved_stop_tol(self, size: float | None = None) -> float:
        size = self.size if size is None else size
        return self.stop_tol if self.stop_tol is not None else 1e-3 / size

    # -- (de)serialization --------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["records"] = list(self.records)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes).to_dict())


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def validate(raw: dict) -> ExperimentConfig:
    """Build a config from a plain mapping, collecting every problem before failing."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    for key in raw:
        if key not in _FIELDS:
            problems.append((key, "unknown field"))
    values = {k: v for k, v in raw.items() if k in _FIELDS}

    model = values.get("model")
    if model is None:
        problems.append(("model", "required"))
    elif model not in MODELS:
        problems.append(("model", f"must be one of {MODELS}"))
    alloc = values.get("allocation", "fixed")
    if alloc not in ALLOCATIONS:
        problems.append(("allocation", f"must be one of {ALLOCATIONS}"))

    def number(name, positive=True, integer=False, allow_none=True):
        v = values.get(name)
        if v is None:
            return None if allow_none else problems.append((name, "required"))
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            problems.append((name, "must be a finite number"))
            return None
        if integer and float(v) != int(v):
            problems.append((name, "must be an integer"))
        if positive and v <= 0:
            problems.append((name, "must be positive"))
        return v

    size = number("size", allow_none=False)
    if size is not None and alloc == "fixed" and float(size) != int(size):
        problems.append(("size", "fixed-n allocation needs an integer n"))
    for name in ("kappa", "epsilon", "tail_tol", "overflow_budget"):
        number(name)
    stop_tol = number("stop_tol")
    if stop_tol is not None and stop_tol >= 1:
        problems.append(("stop_tol", "must be below 1"))
    number("replications", integer=True, allow_none=False) if "replications" in values else None
    number("threads", positive=False, integer=True)
    seed = values.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        problems.append(("master_seed", "must be a nonnegative integer"))
    for name in ("strict", "conditional_means"):
        if name in values and not isinstance(values[name], bool):
            problems.append((name, "must be true or false"))

    if model in ("stable", "regvar"):
        alpha = number("alpha", allow_none=False)
        if alpha is not None and not 0 < alpha < 1:
            problems.append(("alpha", "must lie in (0, 1)"))
        if model == "regvar":
            if values.get("ell") is None:
                problems.append(("ell", "required for the regvar model"))
            else:
                try:
                    SlowlyVaryingSpec.parse(values["ell"])
                except (DomainError, AttributeError) as exc:
                    problems.append(("ell", str(exc)))
        if values.get("beta") is not None:
            problems.append(("beta", "only used by the powerlaw model"))
    elif model == "powerlaw":
        beta = number("beta", allow_none=False)
        if beta is not None and beta <= 1:
            problems.append(("beta", "must exceed 1 (non-summable otherwise)"))
        for name in ("alpha", "ell"):
            if values.get(name) is not None:
                problems.append((name, "not used by the powerlaw model"))

    records = values.get("records", ["r-star"])
    if isinstance(records, str) or not isinstance(records, (list, tuple)) or not records:
        problems.append(("records", "must be a nonempty list of record strings"))
        records = []
    values["records"] = tuple(records)

    if problems:
        raise ConfigError(problems)
    for name in ("size", "alpha", "beta", "kappa", "epsilon", "stop_tol", "tail_tol", "overflow_budget"):
        if values.get(name) is not None:
            values[name] = float(values[name])
    for name in ("replications", "threads"):
        if values.get(name) is not None:
            values[name] = int(values[name])
    cfg = ExperimentConfig(**values)

    # checks that need the assembled config
    try:
        recs = cfg.parsed_records()
        for rec in recs:
            rec.index(cfg.size)
    except (DomainError, ValueError) as exc:
        raise ConfigError([("records", str(exc))]) from exc
    if cfg.model != "powerlaw" and cfg.epsilon is not None and cfg.strict:
        limit = cfg.kappa * cfg.min_index() / cfg.size
        if cfg.epsilon > limit * (1 + 1e-12):
            raise ConfigError([("epsilon", f"exceeds kappa * r/n = {limit:.3g}")])
    return cfg


def load_config_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge ``overrides`` (non-None values win) over ``raw`` and validate."""
    merged = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    return validate(merged)
