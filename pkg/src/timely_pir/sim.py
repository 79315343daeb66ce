"""Monte Carlo simulation of the zero-wait retrieval loop.

Each epoch draws one scheme from the mixture, then one delay per downloaded
bit from each server; the epoch length is their sum.  Under zero wait the age
during epoch ``j`` climbs from ``T_{j-1}`` to ``T_{j-1} + T_j``, so the peak of
epoch ``j`` is ``T_{j-1} + T_j`` and the area under the sawtooth is
``T_{j-1} T_j + T_j^2 / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfigError
from .model import MixturePolicy, Number, ServerStats, SystemConfig, to_number

__all__ = ["DelayDistribution", "SimResult", "fit_distributions", "sample_epoch", "run",
           "epoch_lengths", "RNG_ALGORITHM", "FAMILIES"]

RNG_ALGORITHM = "numpy.random.PCG64"
FAMILIES = ("deterministic", "exponential", "gamma", "shifted-exponential")
_CHUNK = 1 << 16


def _same(a, b) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=0.0)


@dataclass(frozen=True)
class DelayDistribution:
    """Per-bit delay law matched to a target mean and variance."""

    family: str
    mean: Number
    variance: Number

    def __post_init__(self):
        mean, var = to_number(self.mean), to_number(self.variance)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)
        if self.family not in FAMILIES:
            raise InvalidConfigError(f"unknown delay family {self.family!r}; choose from {FAMILIES}")
        if not mean > 0 or var < 0:
            raise InvalidConfigError("delay mean must be positive and variance non-negative")
        if self.family == "deterministic" and var != 0:
            raise InvalidConfigError("deterministic delays need variance 0")
        if self.family == "exponential" and not _same(var, mean * mean):
            raise InvalidConfigError(f"exponential delays need variance = mean^2 = {mean * mean}")
        if self.family == "gamma" and not var > 0:
            raise InvalidConfigError("gamma delays need positive variance")
        if self.family == "shifted-exponential" and not (0 < var and var <= mean * mean):
            raise InvalidConfigError("shifted-exponential delays need 0 < variance <= mean^2")

    @classmethod
    def fit(cls, stats: ServerStats, family: Optional[str] = None) -> "DelayDistribution":
        """Moment-matched law; gamma by default, deterministic when the variance is 0."""
        if family is None:
            family = "deterministic" if stats.sigma2 == 0 else "gamma"
        return cls(family, stats.mu, stats.sigma2)

    @property
    def params(self) -> dict:
        m, v = float(self.mean), float(self.variance)
        if self.family == "deterministic":
            return {"value": m}
        if self.family == "exponential":
            return {"scale": m}
        if self.family == "gamma":
            return {"shape": m * m / v, "scale": v / m}
        sd = math.sqrt(v)
        return {"shift": m - sd, "scale": sd}

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        p = self.params
        if self.family == "deterministic":
            return np.full(size, p["value"])
        if self.family == "exponential":
            return rng.exponential(p["scale"], size)
        if self.family == "gamma":
            return rng.gamma(p["shape"], p["scale"], size)
        return p["shift"] + rng.exponential(p["scale"], size)


def fit_distributions(config: SystemConfig, family=None) -> list:
    """One fitted law per server; ``family`` may be a name or a per-server list."""
    if family is None or isinstance(family, str):
        family = [family] * config.num_servers
    if len(family) != config.num_servers:
        raise InvalidConfigError("need one delay family per server")
    return [DelayDistribution.fit(s, f) for s, f in zip(config.servers, family)]


def _integral_components(policy: MixturePolicy) -> np.ndarray:
    rows = []
    for comp in policy.components:
        row = []
        for v in comp.d:
            if isinstance(v, float):
                if not v.is_integer():
                    raise InvalidConfigError(f"fractional allocation {comp.d}; simulate a mixture")
                v = int(v)
            elif Fraction(v).denominator != 1:
                raise InvalidConfigError(f"fractional allocation {comp.d}; simulate a mixture")
            row.append(int(v))
        rows.append(row)
    return np.array(rows, dtype=np.int64)


def _check_dists(dists, n):
    if len(dists) != n:
        raise InvalidConfigError(f"{len(dists)} delay laws for {n} servers")


def sample_epoch(policy: MixturePolicy, dists: Sequence[DelayDistribution],
                 rng: np.random.Generator) -> float:
    """One epoch length: pick a scheme, then add up one delay per downloaded bit."""
    comps = _integral_components(policy)
    _check_dists(dists, comps.shape[1])
    probs = np.array([float(p) for p in policy.probabilities])
    k = int(rng.choice(len(probs), p=probs / probs.sum())) if len(probs) > 1 else 0
    return float(sum(dists[n].sample(rng, int(comps[k, n])).sum()
                     for n in range(comps.shape[1]) if comps[k, n] > 0))


def epoch_lengths(policy: MixturePolicy, dists: Sequence[DelayDistribution],
                  num_epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised equivalent of calling :func:`sample_epoch` ``num_epochs`` times."""
    comps = _integral_components(policy)
    _check_dists(dists, comps.shape[1])
    probs = np.array([float(p) for p in policy.probabilities])
    probs = probs / probs.sum()
    out = np.empty(num_epochs)
    for start in range(0, num_epochs, _CHUNK):
        size = min(_CHUNK, num_epochs - start)
        if len(probs) > 1:
            which = rng.choice(len(probs), size=size, p=probs)
        else:
            which = np.zeros(size, dtype=np.int64)
        T = np.zeros(size)
        for k in range(len(probs)):
            idx = np.flatnonzero(which == k)
            if idx.size == 0:
                continue
            for n, bits in enumerate(comps[k]):
                if bits > 0:
                    T[idx] += dists[n].sample(rng, (idx.size, int(bits))).sum(axis=1)
        out[start:start + size] = T
    return out


@dataclass(frozen=True)
class SimResult:
    num_epochs: int
    empirical_peak: float
    empirical_avg: float
    peak_stderr: float
    avg_stderr: float
    mean_epoch: float
    seed: int
    rng_algorithm: str = RNG_ALGORITHM

    def z_scores(self, peak_target, avg_target) -> tuple:
        def z(est, target, se):
            diff = est - float(target)
            if se > 0:
                return diff / se
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return (z(self.empirical_peak, peak_target, self.peak_stderr),
                z(self.empirical_avg, avg_target, self.avg_stderr))


def _long_run_variance(e: np.ndarray) -> float:
    """Variance of the mean of a 1-dependent sequence (lag-1 Newey-West, unit weight)."""
    n = e.size
    if n < 2:
        return math.inf
    c = e - e.mean()
    g0 = float(c @ c) / n
    g1 = float(c[1:] @ c[:-1]) / n
    v = g0 + 2 * g1
    if v < 0:
        v = g0
    return v / n


def run(policy: MixturePolicy, config: SystemConfig, dists: Optional[Sequence] = None,
        num_epochs: int = 100_000, seed: int = 0) -> SimResult:
    """Simulate ``num_epochs`` epochs; the first is warm-up and is not scored.

    ``empirical_avg`` is total sawtooth area over total elapsed time, so its
    standard error comes from the ratio residual ``A_j - avg * T_j``.
    """
    if num_epochs < 2:
        raise InvalidConfigError("need at least two epochs")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise InvalidConfigError(f"seed must be a non-negative integer, got {seed!r}")
    if dists is None:
        dists = fit_distributions(config)
    _check_dists(dists, config.num_servers)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    T = epoch_lengths(policy, dists, num_epochs, rng)
    prev, cur = T[:-1], T[1:]
    peaks = prev + cur
    areas = prev * cur + 0.5 * cur * cur
    mean_T = float(cur.mean())
    peak = float(peaks.mean())
    avg = float(areas.sum() / cur.sum())
    resid = areas - avg * cur
    return SimResult(num_epochs=num_epochs, empirical_peak=peak, empirical_avg=avg,
                     peak_stderr=math.sqrt(_long_run_variance(peaks)),
                     avg_stderr=math.sqrt(_long_run_variance(resid)) / mean_T,
                     mean_epoch=mean_T, seed=int(seed))
