"""Hyperparameter domains, grid construction and configuration enumeration."""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ArityError, CapacityError, ConfigError, DomainError
from .expr import eval_number

KINDS = ("integer", "real", "nominal")


def geometric_grid(lo: float, hi: float, m: int, integerize: bool = False) -> list:
    """``m`` geometrically spaced points from ``lo`` to ``hi``.

    With ``integerize`` every point is floored and consecutive duplicates are
    dropped, so the result may be shorter than ``m``. The ratio is always
    computed from the exact endpoints.

    >>> geometric_grid(1, 9384 ** 0.5, 7, integerize=True)
    [1, 2, 4, 9, 21, 45, 96]
    """
    if m < 2:
        raise ArityError(f"geometric grid needs m >= 2, got {m}")
    if lo <= 0:
        raise DomainError(f"geometric grid needs lo > 0, got {lo}")
    if not hi > lo:
        raise DomainError(f"geometric grid needs hi > lo, got lo={lo}, hi={hi}")
    ratio = hi / lo
    values = [lo * ratio ** (k / (m - 1)) for k in range(m)]
    values[-1] = float(hi)
    if not integerize:
        values[0] = float(lo)
        return values
    out: list[int] = []
    for v in values:
        # guard against 2.9999999 style representation error before flooring
        f = math.floor(v + 1e-9 * max(1.0, abs(v)))
        if not out or f != out[-1]:
            out.append(f)
    return out


def linear_grid(lo: float, hi: float, m: int, integerize: bool = False) -> list:
    if m < 2:
        raise ArityError(f"linear grid needs m >= 2, got {m}")
    if not hi > lo:
        raise DomainError(f"linear grid needs hi > lo, got lo={lo}, hi={hi}")
    values = [lo + (hi - lo) * k / (m - 1) for k in range(m)]
    if not integerize:
        return [float(v) for v in values]
    out: list[int] = []
    for v in values:
        f = math.floor(v + 1e-9 * max(1.0, abs(v)))
        if not out or f != out[-1]:
            out.append(f)
    return out


@dataclass(frozen=True)
class HyperParam:
    name: str
    kind: str
    grid: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        grid = tuple(self.grid)
        if not grid:
            raise ConfigError(f"{self.name}: empty grid")
        if self.kind == "integer":
            if any(isinstance(v, bool) or float(v) != int(v) for v in grid):
                raise ConfigError(f"{self.name}: integer grid holds non-integers {grid}")
            grid = tuple(int(v) for v in grid)
        elif self.kind == "real":
            grid = tuple(float(v) for v in grid)
            if not all(math.isfinite(v) for v in grid):
                raise ConfigError(f"{self.name}: real grid holds non-finite values")
        if self.kind == "nominal":
            if len(set(grid)) != len(grid):
                raise ConfigError(f"{self.name}: nominal values must be distinct")
        elif any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"{self.name}: grid must be strictly increasing, got {grid}")
        object.__setattr__(self, "grid", grid)

    def __len__(self):
        return len(self.grid)

    def level(self, value) -> int:
        """Index of ``value`` in the grid (numeric grids compare with tolerance)."""
        if self.kind == "nominal":
            try:
                return self.grid.index(value)
            except ValueError:
                raise DomainError(f"{value!r} not in grid of {self.name}") from None
        for i, g in enumerate(self.grid):
            if g == value or math.isclose(g, float(value), rel_tol=1e-9, abs_tol=1e-12):
                return i
        raise DomainError(f"{value!r} not in grid of {self.name}")


@dataclass(frozen=True)
class Configuration:
    values: Mapping[str, object]
    index: int

    def __getitem__(self, name):
        return self.values[name]

    def as_dict(self) -> dict:
        return dict(self.values)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple
    _radix: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.params)
        names = [p.name for p in params]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate hyperparameter names: {dupes}")
        object.__setattr__(self, "params", params)
        strides = []
        stride = 1
        for p in reversed(params):
            strides.append(stride)
            stride *= len(p)
        object.__setattr__(self, "_radix", tuple(reversed(strides)))

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def size(self) -> int:
        return math.prod(len(p) for p in self.params)

    def __len__(self):
        return self.size

    def __getitem__(self, name: str) -> HyperParam:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def config_at(self, index: int) -> Configuration:
        if not 0 <= index < self.size:
            raise IndexError(index)
        values = {}
        rest = index
        for p, stride in zip(self.params, self._radix):
            level, rest = divmod(rest, stride)
            values[p.name] = p.grid[level]
        return Configuration(values, index)

    def index_of(self, assignment: Mapping[str, object]) -> int:
        missing = set(self.names) - set(assignment)
        if missing:
            raise DomainError(f"assignment lacks {sorted(missing)}")
        return sum(p.level(assignment[p.name]) * s for p, s in zip(self.params, self._radix))

    def configuration(self, assignment: Mapping[str, object]) -> Configuration:
        index = self.index_of(assignment)
        return self.config_at(index)

    def contains(self, assignment: Mapping[str, object]) -> bool:
        try:
            self.index_of(assignment)
        except DomainError:
            return False
        return True

    def enumerate(self) -> Iterator[Configuration]:
        """All configurations, last-declared parameter varying fastest."""
        for index, combo in enumerate(itertools.product(*(p.grid for p in self.params))):
            yield Configuration(dict(zip(self.names, combo)), index)

    def sample(self, n: int, seed: int) -> list[Configuration]:
        """``n`` distinct configurations drawn uniformly without replacement."""
        if n > self.size:
            raise CapacityError(f"cannot sample {n} distinct configurations from a space of size {self.size}")
        if n < 0:
            raise CapacityError("sample size must be nonnegative")
        rng = np.random.default_rng(seed)
        picks = rng.choice(self.size, size=n, replace=False)
        return [self.config_at(int(i)) for i in picks]

    def restrict(self, name: str, values: Sequence) -> "SearchSpace":
        params = [HyperParam(p.name, p.kind, tuple(values)) if p.name == name else p for p in self.params]
        return SearchSpace(tuple(params))


_DESCRIPTOR = re.compile(r"^\s*(linear|geometric|log|range|multiples)\s*\((.*)\)\s*$", re.S)


def _split_args(text: str) -> list[str]:
    args, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            args.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    args.append(cur)
    return [a.strip() for a in args if a.strip()]


def resolve_grid(descriptor, kind: str) -> list:
    """Turn a grid descriptor into an explicit list.

    Accepts an explicit list or one of ``linear(lo,hi,m)``,
    ``geometric(lo,hi,m)``, ``log(lo,hi,m)``, ``range(lo,hi,step)``
    (inclusive) and ``multiples(base,k)``. Arguments may be arithmetic
    expressions using ``sqrt``.
    """
    if isinstance(descriptor, (list, tuple)):
        return list(descriptor)
    if not isinstance(descriptor, str):
        return [descriptor]
    match = _DESCRIPTOR.match(descriptor)
    if not match:
        raise ConfigError(f"unrecognised grid descriptor {descriptor!r}")
    fn, raw = match.groups()
    args = [eval_number(a) for a in _split_args(raw)]
    integer = kind == "integer"
    if fn in ("linear", "geometric", "log"):
        if len(args) != 3:
            raise ConfigError(f"{fn}() takes (lo, hi, m), got {descriptor!r}")
        lo, hi, m = args
        builder = linear_grid if fn == "linear" else geometric_grid
        return builder(lo, hi, int(m), integerize=integer)
    if fn == "range":
        if len(args) not in (2, 3):
            raise ConfigError(f"range() takes (lo, hi[, step]), got {descriptor!r}")
        lo, hi = args[0], args[1]
        step = args[2] if len(args) == 3 else 1
        if step <= 0:
            raise DomainError("range step must be positive")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        values = [lo + k * step for k in range(count)]
        return [int(round(v)) for v in values] if integer else [float(v) for v in values]
    base, k = args
    return [int(base) * j if integer else base * j for j in range(1, int(k) + 1)]


def build_space(spec: Sequence) -> SearchSpace:
    """Build a space from ``(name, kind, grid descriptor)`` triples or dicts."""
    params = []
    for item in spec:
        if isinstance(item, Mapping):
            try:
                name, kind, grid = item["name"], item.get("kind", "real"), item["grid"]
            except KeyError as exc:
                raise ConfigError(f"space entry missing field {exc}") from None
        else:
            name, kind, grid = item
        values = resolve_grid(grid, kind)
        if not values:
            raise ConfigError(f"{name}: empty grid")
        params.append(HyperParam(name, kind, tuple(values)))
    return SearchSpace(tuple(params))


def space_to_spec(space: SearchSpace) -> list[dict]:
    return [{"name": p.name, "kind": p.kind, "grid": list(p.grid)} for p in space.params]
