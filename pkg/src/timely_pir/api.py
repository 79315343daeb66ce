"""Metric-level entry point shared by the CLI and library users."""

from __future__ import annotations

from .average import solve_avg
from .model import Solution, SystemConfig, normalize_metric
from .peak import solve_peak


def solve(config: SystemConfig, metric: str = "peak") -> Solution:
    """Optimal operating point for ``metric`` ("peak" or "avg"/"average")."""
    if normalize_metric(metric) == "peak":
        return solve_peak(config)
    return solve_avg(config)
