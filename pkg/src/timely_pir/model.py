"""Value types and the closed-form age formulas used by every solver.

Quantities stay as :class:`fractions.Fraction` whenever the inputs are
rational, so corner-point answers come out exact.  Floats only appear once a
square root enters (average-age optimisation) or when the caller passes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .errors import InvalidConfigError

Number = Union[Fraction, float, int]

#: Relative tolerance used for float bookkeeping checks (simplex sums, equal means).
FLOAT_RTOL = 1e-12


def to_number(value) -> Number:
    """Coerce ints, decimal strings and ``"p/q"`` strings to Fraction; keep floats."""
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidConfigError(f"non-finite value {value!r}")
        return value
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidConfigError(f"cannot parse number {value!r}") from exc
    # numpy scalars and the like
    return float(value)


def is_exact(values: Iterable[Number]) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in values)


def _dot(a: Sequence[Number], b: Sequence[Number]) -> Number:
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


@dataclass(frozen=True)
class ServerStats:
    """Per-bit delay statistics of one server: mean ``mu`` and variance ``sigma2``."""

    mu: Number
    sigma2: Number = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "mu", to_number(self.mu))
        object.__setattr__(self, "sigma2", to_number(self.sigma2))
        if not self.mu > 0:
            raise InvalidConfigError(f"mean delay must be positive, got {self.mu}")
        if self.sigma2 < 0:
            raise InvalidConfigError(f"delay variance must be non-negative, got {self.sigma2}")


def pir_capacity(num_servers: int, num_messages: int) -> Fraction:
    """Symmetric PIR capacity ``(1 + 1/N + ... + 1/N^(M-1))^-1``."""
    if num_servers < 1 or num_messages < 1:
        raise ValueError("N and M must be positive")
    total = sum(Fraction(1, num_servers**k) for k in range(num_messages))
    return 1 / total


@dataclass(frozen=True)
class SystemConfig:
    num_servers: int
    num_messages: int
    message_size: Number
    servers: tuple
    r_min: Number

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(self.servers))
        object.__setattr__(self, "message_size", to_number(self.message_size))
        object.__setattr__(self, "r_min", to_number(self.r_min))
        n, m = self.num_servers, self.num_messages
        if not isinstance(n, int) or n < 1:
            raise InvalidConfigError(f"N must be a positive integer, got {n!r}")
        if m not in (2, 3):
            raise InvalidConfigError(f"M must be 2 or 3, got {m!r}")
        if len(self.servers) != n:
            raise InvalidConfigError(f"expected {n} server entries, got {len(self.servers)}")
        if not all(isinstance(s, ServerStats) for s in self.servers):
            raise InvalidConfigError("servers must be ServerStats instances")
        if not self.message_size > 0:
            raise InvalidConfigError("message size L must be positive")
        cap = pir_capacity(n, m)
        if self.r_min < Fraction(1, m) or self.r_min > cap:
            raise InvalidConfigError(
                f"r_min={self.r_min} outside [1/{m}, C_PIR={cap}] for N={n}, M={m}"
            )

    @property
    def mu(self) -> tuple:
        return tuple(s.mu for s in self.servers)

    @property
    def sigma2(self) -> tuple:
        return tuple(s.sigma2 for s in self.servers)

    @property
    def capacity(self) -> Fraction:
        return pir_capacity(self.num_servers, self.num_messages)

    @property
    def d_max(self) -> Number:
        """Largest expected total download allowed by the rate floor."""
        return self.message_size / self.r_min

    def with_r_min(self, r_min) -> "SystemConfig":
        return SystemConfig(self.num_servers, self.num_messages, self.message_size,
                            self.servers, r_min)

    def permuted(self, order: Sequence[int]) -> "SystemConfig":
        """Config with servers reordered so that new server ``k`` is old server ``order[k]``."""
        return SystemConfig(self.num_servers, self.num_messages, self.message_size,
                            [self.servers[i] for i in order], self.r_min)

    @classmethod
    def build(cls, mu, sigma2=None, *, L, r_min, M=3) -> "SystemConfig":
        if sigma2 is None:
            sigma2 = [0] * len(mu)
        if len(mu) != len(sigma2):
            raise InvalidConfigError("mu and sigma2 differ in length")
        servers = [ServerStats(m, s) for m, s in zip(mu, sigma2)]
        return cls(len(servers), M, L, servers, r_min)


@dataclass(frozen=True)
class DownloadAllocation:
    """Bits downloaded from each server per epoch."""

    d: tuple

    def __post_init__(self):
        vals = tuple(to_number(v) for v in self.d)
        if not vals:
            raise ValueError("allocation needs at least one server")
        if any(v < 0 for v in vals):
            raise ValueError(f"download sizes must be non-negative, got {vals}")
        object.__setattr__(self, "d", vals)

    @property
    def total(self) -> Number:
        return sum(self.d, Fraction(0))

    @property
    def tau(self) -> tuple:
        """Traffic ratio d / D."""
        D = self.total
        if D == 0:
            raise ValueError("empty allocation has no traffic ratio")
        return tuple(v / D for v in self.d)

    def is_integral(self) -> bool:
        return all(Fraction(v).denominator == 1 for v in self.d)

    def permuted(self, order: Sequence[int]) -> "DownloadAllocation":
        return DownloadAllocation(tuple(self.d[i] for i in order))

    def __len__(self):
        return len(self.d)

    def __iter__(self):
        return iter(self.d)


@dataclass(frozen=True)
class MixturePolicy:
    """Stochastic time sharing: component ``k`` is used in an epoch with probability ``p_k``."""

    components: tuple
    probabilities: tuple

    def __post_init__(self):
        comps = tuple(c if isinstance(c, DownloadAllocation) else DownloadAllocation(c)
                      for c in self.components)
        probs = tuple(to_number(p) for p in self.probabilities)
        if not comps or len(comps) != len(probs):
            raise ValueError("need one probability per component")
        if len({len(c) for c in comps}) != 1:
            raise ValueError("components differ in server count")
        if any(p < 0 for p in probs):
            raise ValueError(f"negative probability in {probs}")
        total = sum(probs, Fraction(0))
        if is_exact(probs):
            if total != 1:
                raise ValueError(f"probabilities sum to {total}, not 1")
        elif abs(total - 1) > 1e-9:
            raise ValueError(f"probabilities sum to {float(total)!r}, not 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def single(cls, alloc: DownloadAllocation) -> "MixturePolicy":
        return cls((alloc,), (Fraction(1),))

    @property
    def expected_allocation(self) -> DownloadAllocation:
        n = len(self.components[0])
        return DownloadAllocation(tuple(
            sum((p * c.d[i] for c, p in zip(self.components, self.probabilities)), Fraction(0))
            for i in range(n)))

    @property
    def expected_total(self) -> Number:
        return sum((p * c.total for c, p in zip(self.components, self.probabilities)),
                   Fraction(0))

    def is_integral(self) -> bool:
        return all(c.is_integral() for c in self.components)

    def permuted(self, order: Sequence[int]) -> "MixturePolicy":
        return MixturePolicy(tuple(c.permuted(order) for c in self.components),
                             self.probabilities)


@dataclass(frozen=True)
class Solution:
    """Optimal operating point for one metric.

    ``objective`` is the age achieved by actually running ``mixture``.  For the
    peak metric it coincides with ``ideal_objective`` (the formula evaluated on
    the expected allocation); for the average metric time sharing costs a
    little, and both numbers are kept.
    """

    metric: str
    allocation: DownloadAllocation
    mixture: MixturePolicy
    objective: Number
    ideal_objective: Number
    achieved_rate: Number
    branch: str = ""
    notes: tuple = field(default_factory=tuple)

    @property
    def time_sharing_gap(self) -> float:
        return float(self.objective - self.ideal_objective)


def _check(stats: Sequence[ServerStats], d) -> tuple:
    vec = d.d if isinstance(d, DownloadAllocation) else tuple(d)
    if len(stats) != len(vec):
        raise ValueError(f"{len(stats)} servers but allocation has {len(vec)} entries")
    return vec


def epoch_mean(stats: Sequence[ServerStats], d) -> Number:
    """Expected epoch length ``mu . d``."""
    vec = _check(stats, d)
    return _dot([s.mu for s in stats], vec)


def epoch_variance(stats: Sequence[ServerStats], d) -> Number:
    vec = _check(stats, d)
    return _dot([s.sigma2 for s in stats], vec)


def epoch_second_moment(stats: Sequence[ServerStats], d) -> Number:
    """``E[T^2] = sigma . d + (mu . d)^2``."""
    m = epoch_mean(stats, d)
    return epoch_variance(stats, d) + m * m


def peak_aoi(stats: Sequence[ServerStats], d) -> Number:
    m = epoch_mean(stats, d)
    if m == 0:
        raise ValueError("empty policy: no bits are downloaded")
    return 2 * m


def avg_aoi(stats: Sequence[ServerStats], d) -> Number:
    """Time-average age ``(3/2) mu.d + (1/2) sigma.d / mu.d``."""
    m = epoch_mean(stats, d)
    if m == 0:
        raise ValueError("empty policy: no bits are downloaded")
    return Fraction(3, 2) * m + epoch_variance(stats, d) / (2 * m)


def mixture_moments(policy: MixturePolicy, stats: Sequence[ServerStats]) -> tuple:
    """First and second moment of the epoch length under time sharing."""
    first = Fraction(0)
    second = Fraction(0)
    for comp, p in zip(policy.components, policy.probabilities):
        first += p * epoch_mean(stats, comp)
        second += p * epoch_second_moment(stats, comp)
    return first, second


def mixture_peak_aoi(policy: MixturePolicy, stats: Sequence[ServerStats]) -> Number:
    first, _ = mixture_moments(policy, stats)
    if first == 0:
        raise ValueError("empty policy: no bits are downloaded")
    return 2 * first


def mixture_avg_aoi(policy: MixturePolicy, stats: Sequence[ServerStats]) -> Number:
    """Renewal-reward average age ``E[T] + E[T^2] / (2 E[T])`` of a mixture."""
    first, second = mixture_moments(policy, stats)
    if first == 0:
        raise ValueError("empty policy: no bits are downloaded")
    return first + second / (2 * first)


def metric_value(metric: str, stats, d) -> Number:
    if metric == "peak":
        return peak_aoi(stats, d)
    if metric == "average":
        return avg_aoi(stats, d)
    raise ValueError(f"unknown metric {metric!r}")


def normalize_metric(name: str) -> str:
    key = name.lower()
    if key in ("peak", "paoi"):
        return "peak"
    if key in ("avg", "average", "aaoi"):
        return "average"
    raise ValueError(f"unknown metric {name!r}; use peak or avg")
