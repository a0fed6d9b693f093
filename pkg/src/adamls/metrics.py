"""Utility function over confidence and response time, plus run summaries.

Per-request utility is a weighted sum of two piecewise terms: the confidence
term rewards c inside [C_min, C_max] with c itself, and the response term
rewards r inside [R_min, R_max] with r itself. Outside the bounds each term
contributes a penalty scaled by p_ev (confidence) or p_dv (response time).
Boundary values belong to the in-range branch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ValidationError

# (w_e, w_d) pairs used by default for utility sweeps.
DEFAULT_WEIGHT_GRID = ((0.0, 1.0), (0.25, 0.75), (0.5, 0.5), (0.75, 0.25), (1.0, 0.0))


@dataclass(frozen=True)
class UtilityParams:
    """Weights, QoS bounds, and penalty multipliers for the utility.

    raw_violation_signs keeps the raw positive sign on confidence-violation
    branches instead of normalizing them into penalties; the default negates
    them so every violation reduces utility.
    """

    w_e: float = 0.5
    w_d: float = 0.5
    c_min: float = 0.5
    c_max: float = 1.0
    r_min: float = 0.1
    r_max: float = 1.0
    p_ev: float = 1.0
    p_dv: float = 1.0
    raw_violation_signs: bool = False

    def __post_init__(self) -> None:
        if self.c_min > self.c_max:
            raise ValidationError("c_min must be <= c_max")
        if self.r_min > self.r_max:
            raise ValidationError("r_min must be <= r_max")
        if self.p_ev < 0.0 or self.p_dv < 0.0:
            raise ValidationError("penalty multipliers must be >= 0")
        if self.w_e < 0.0 or self.w_d < 0.0:
            raise ValidationError("weights must be >= 0")


@dataclass(frozen=True)
class RunSummary:
    """Aggregate view of one simulation run."""

    policy: str
    request_count: int
    switch_count: int
    avg_c: float
    avg_r: float
    avg_s_cpu: float
    r_penalties: int
    c_penalties: int
    utilities: tuple[tuple[float, float, float], ...]  # (w_e, w_d, total)


def utility_confidence_term(c: float, params: UtilityParams) -> float:
    if params.c_min <= c <= params.c_max:
        return c
    if c > params.c_max:
        value = (c - params.c_max) * params.p_ev
    else:
        value = (params.c_min - c) * params.p_ev
    return value if params.raw_violation_signs else -value


def utility_response_term(r: float, params: UtilityParams) -> float:
    if params.r_min <= r <= params.r_max:
        return r
    if r > params.r_max:
        return (params.r_max - r) * params.p_dv
    return (r - params.r_min) * params.p_dv


def utility_per_request(c: float, r: float, params: UtilityParams) -> float:
    return params.w_e * utility_confidence_term(c, params) + params.w_d * utility_response_term(
        r, params
    )


def total_utility(records, params: UtilityParams) -> float:
    """Sum of per-request utilities, each completion counted once."""
    total = 0.0
    count = 0
    for rec in records:
        total += utility_per_request(rec.c, rec.r, params)
        count += 1
    if count == 0:
        raise ValidationError("total_utility: no records")
    return total


def count_penalties(records, params: UtilityParams) -> tuple[int, int]:
    """Counts of completions with r resp. c outside their closed QoS ranges."""
    n_r = n_c = 0
    for rec in records:
        if not params.r_min <= rec.r <= params.r_max:
            n_r += 1
        if not params.c_min <= rec.c <= params.c_max:
            n_c += 1
    return n_r, n_c


def summarize(
    records,
    event_log,
    weight_grid=DEFAULT_WEIGHT_GRID,
    params: UtilityParams = UtilityParams(),
    policy: str = "",
) -> RunSummary:
    """Aggregate one run: KPI averages, penalty and switch counts, utilities."""
    records = list(records)
    if not records:
        raise ValidationError("summarize: no records")
    n = len(records)
    switch_count = sum(1 for ev in event_log if ev.event == "SWITCH")
    n_r, n_c = count_penalties(records, params)
    utilities = tuple(
        (w_e, w_d, total_utility(records, replace(params, w_e=w_e, w_d=w_d)))
        for w_e, w_d in weight_grid
    )
    return RunSummary(
        policy=policy,
        request_count=n,
        switch_count=switch_count,
        avg_c=sum(r.c for r in records) / n,
        avg_r=sum(r.r for r in records) / n,
        avg_s_cpu=sum(r.s_cpu for r in records) / n,
        r_penalties=n_r,
        c_penalties=n_c,
        utilities=utilities,
    )
