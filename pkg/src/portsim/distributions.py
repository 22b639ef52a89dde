"""Service, dwell and interval time distributions sampled by inverse transform."""

from __future__ import annotations

import math
from dataclasses import dataclass

FAMILIES = ("Constant", "Exponential", "Triangular", "Uniform")

_PARAMS = {
    "Constant": ("value",),
    "Exponential": ("mean",),
    "Triangular": ("min", "mode", "max"),
    "Uniform": ("min", "max"),
}


@dataclass(frozen=True)
class DistributionSpec:
    family: str
    params: tuple[float, ...]

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        family = d.get("family")
        if family not in _PARAMS:
            raise ValueError(f"unknown distribution family {family!r}")
        names = _PARAMS[family]
        missing = [n for n in names if n not in d]
        if missing:
            raise ValueError(f"{family} distribution is missing {', '.join(missing)}")
        spec = cls(family, tuple(float(d[n]) for n in names))
        spec.check()
        return spec

    @classmethod
    def constant(cls, value: float) -> "DistributionSpec":
        return cls("Constant", (float(value),))

    @classmethod
    def exponential(cls, mean: float) -> "DistributionSpec":
        return cls("Exponential", (float(mean),))

    def to_dict(self) -> dict:
        return {"family": self.family, **dict(zip(_PARAMS[self.family], self.params))}

    def check(self) -> None:
        p = self.params
        if any(not math.isfinite(x) for x in p):
            raise ValueError(f"{self.family} parameters must be finite")
        if self.family == "Constant" and p[0] < 0:
            raise ValueError("constant time must be >= 0")
        if self.family == "Exponential" and p[0] <= 0:
            raise ValueError("exponential mean must be > 0")
        if self.family == "Triangular" and not 0 <= p[0] <= p[1] <= p[2]:
            raise ValueError("triangular needs 0 <= min <= mode <= max")
        if self.family == "Uniform" and not 0 <= p[0] <= p[1]:
            raise ValueError("uniform needs 0 <= min <= max")

    @property
    def mean(self) -> float:
        p = self.params
        if self.family == "Triangular":
            return sum(p) / 3.0
        if self.family == "Uniform":
            return 0.5 * (p[0] + p[1])
        return p[0]

    @property
    def lower_bound(self) -> float:
        """Smallest value a sample can take."""
        return {"Constant": self.params[0], "Exponential": 0.0}.get(self.family, self.params[0])

    def sampler(self, rand):
        """Zero-argument callable drawing from this distribution with ``rand()`` uniforms."""
        p = self.params
        if self.family == "Constant":
            value = p[0]
            return lambda: value
        if self.family == "Exponential":
            mean = p[0]
            log = math.log
            return lambda: -mean * log(1.0 - rand())
        if self.family == "Uniform":
            lo, width = p[0], p[1] - p[0]
            return lambda: lo + width * rand()
        a, c, b = p
        if b == a:
            return lambda: a
        split = (c - a) / (b - a)
        left, right = (b - a) * (c - a), (b - a) * (b - c)
        sqrt = math.sqrt

        def triangular():
            u = rand()
            if u < split:
                return a + sqrt(u * left)
            return b - sqrt((1.0 - u) * right)

        return triangular

    def sample(self, rng) -> float:
        return self.sampler(rng.random)()
