"""Basis expansion of raw covariates and tolerance construction.

A basis is an ordered list of terms over covariate columns. Each term is one
of ``raw(j)``, ``power(j, p)`` or ``interaction(j, k)``. Terms can be written
as strings against a list of column names: ``"x3"``, ``"x3^2"``, ``"x1*x4"``.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Term:
    """A single basis function over covariate columns.

    ``kind`` is ``"raw"``, ``"power"`` or ``"interaction"``. ``cols`` holds the
    referenced column indices and ``power`` the exponent for power terms.
    """

    kind: str
    cols: tuple[int, ...]
    power: int = 1

    def __post_init__(self):
        if self.kind == "raw":
            if len(self.cols) != 1:
                raise ValueError("raw term takes exactly one column")
        elif self.kind == "power":
            if len(self.cols) != 1 or self.power < 2:
                raise ValueError("power term takes one column and an exponent >= 2")
        elif self.kind == "interaction":
            if len(self.cols) != 2 or self.cols[0] == self.cols[1]:
                raise ValueError("interaction term takes two distinct columns")
        else:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if min(self.cols) < 0:
            raise ValueError("column indices must be nonnegative")

    def key(self) -> tuple:
        # interactions are symmetric, so x1*x2 and x2*x1 are the same term
        if self.kind == "interaction":
            return (self.kind, tuple(sorted(self.cols)), self.power)
        return (self.kind, self.cols, self.power)

    def label(self, names: Sequence[str] | None = None) -> str:
        def nm(j):
            return names[j] if names is not None else f"c{j}"

        if self.kind == "raw":
            return nm(self.cols[0])
        if self.kind == "power":
            return f"{nm(self.cols[0])}^{self.power}"
        return f"{nm(self.cols[0])}*{nm(self.cols[1])}"


def raw(j: int) -> Term:
    return Term("raw", (j,))


def power(j: int, p: int) -> Term:
    return Term("power", (j,), p)


def interaction(j: int, k: int) -> Term:
    return Term("interaction", (j, k))


@dataclass(frozen=True)
class BasisSpec:
    """Ordered, duplicate-free list of basis terms.

    There is never an intercept term; the normalization constraint of the
    weighting problem plays that role.
    """

    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        keys = [t.key() for t in self.terms]
        if len(set(keys)) != len(keys):
            raise ValueError("basis has duplicate terms")

    def __len__(self):
        return len(self.terms)

    def max_column(self) -> int:
        return max((max(t.cols) for t in self.terms), default=-1)

    def validate(self, d: int) -> None:
        if self.max_column() >= d:
            raise IndexError(
                f"basis term references column {self.max_column()} "
                f"but only {d} covariate columns exist"
            )

    def labels(self, names: Sequence[str] | None = None) -> list[str]:
        return [t.label(names) for t in self.terms]

    @classmethod
    def main_terms(cls, d: int) -> "BasisSpec":
        return cls(tuple(raw(j) for j in range(d)))

    @classmethod
    def parse(cls, text: str | Sequence[str], names: Sequence[str]) -> "BasisSpec":
        """Build a spec from term strings such as ``"x1,x2^2,x1*x3"``."""
        if isinstance(text, str):
            items = [s.strip() for s in text.split(",") if s.strip()]
        else:
            items = [s.strip() for s in text]
        return cls(tuple(parse_term(s, names) for s in items))


_POWER_RE = re.compile(r"^(.+?)\^(\d+)$")


def parse_term(text: str, names: Sequence[str]) -> Term:
    lookup = {n: i for i, n in enumerate(names)}

    def col(name: str) -> int:
        name = name.strip()
        if name not in lookup:
            raise KeyError(f"unknown covariate {name!r} in basis term {text!r}")
        return lookup[name]

    text = text.strip()
    if "*" in text:
        parts = text.split("*")
        if len(parts) != 2:
            raise ValueError(f"only two-way interactions are supported: {text!r}")
        return interaction(col(parts[0]), col(parts[1]))
    m = _POWER_RE.match(text)
    if m:
        p = int(m.group(2))
        return raw(col(m.group(1))) if p == 1 else power(col(m.group(1)), p)
    return raw(col(text))


def expand(X: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Evaluate every basis term row-wise, returning an ``n x K`` matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    spec.validate(X.shape[1])
    out = np.empty((X.shape[0], len(spec)))
    for k, t in enumerate(spec.terms):
        if t.kind == "raw":
            out[:, k] = X[:, t.cols[0]]
        elif t.kind == "power":
            out[:, k] = X[:, t.cols[0]] ** t.power
        else:
            out[:, k] = X[:, t.cols[0]] * X[:, t.cols[1]]
    return out


class ZeroSpreadWarning(UserWarning):
    """A target spread was zero and an absolute tolerance was used instead."""


def standardized_tolerances(multiplier: float, spreads) -> np.ndarray:
    """Per-term tolerances ``multiplier * spread``.

    ``spreads`` may be a :class:`~onestep.data.TargetProfile` or an array of
    target standard deviations. Where a spread is zero the tolerance falls back
    to ``multiplier`` itself (an absolute tolerance) and a
    :class:`ZeroSpreadWarning` is emitted.
    """
    if multiplier < 0 or not np.isfinite(multiplier):
        raise ValueError("tolerance multiplier must be a finite nonnegative number")
    s = getattr(spreads, "spreads", spreads)
    if s is None:
        raise ValueError("profile has no spreads; standardized tolerances need them")
    s = np.asarray(s, dtype=float)
    deltas = multiplier * s
    zero = s == 0
    if zero.any():
        names = getattr(spreads, "names", None)
        which = [names[i] for i in np.flatnonzero(zero)] if names else list(np.flatnonzero(zero))
        warnings.warn(
            f"zero target spread for {which}; using absolute tolerance {multiplier}",
            ZeroSpreadWarning,
            stacklevel=2,
        )
        deltas[zero] = multiplier
    return deltas
