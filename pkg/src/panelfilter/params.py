"""Parameter layouts, vectors and scale transforms for panel models.

A parameter vector holds one shared block followed by one block per unit:

    [ shared_0 .. shared_{p-1} | unit1_0 .. unit1_{q-1} | unit2_0 .. ]

Each coordinate carries a transform tag mapping the natural scale to an
unconstrained estimation scale:

* ``identity`` -- no change.
* ``log`` -- positive values, mapped through the natural logarithm.
* ``logit`` -- values in (0, 1), mapped through log(p / (1 - p)).
* ``simplex:<group>`` -- a contiguous block of positive values summing to 1,
  mapped through log-ratios against the last block element.  The last slot of
  a block is redundant on the estimation scale and is pinned at 0 so that the
  flat length is the same on both scales; it is never perturbed or estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, LayoutError

NATURAL = "natural"
ESTIMATION = "estimation"

_SCALAR_TRANSFORMS = ("identity", "log", "logit")


@dataclass(frozen=True)
class ParamSpec:
    """One named parameter coordinate.

    ``ivp`` marks initial-value parameters, which the iterated filter perturbs
    only at the start of their own unit's data pass.
    """

    name: str
    transform: str = "identity"
    ivp: bool = False

    def __post_init__(self):
        if self.transform not in _SCALAR_TRANSFORMS and not self.transform.startswith("simplex:"):
            raise LayoutError(f"unknown transform {self.transform!r} for parameter {self.name!r}")


def _find_simplex_blocks(specs: Sequence[ParamSpec], where: str) -> list[tuple[int, int]]:
    """(start, length) of each simplex block; blocks must be contiguous runs."""
    blocks: list[tuple[int, int]] = []
    seen: set[str] = set()
    i = 0
    while i < len(specs):
        tr = specs[i].transform
        if tr.startswith("simplex:"):
            if tr in seen:
                raise LayoutError(f"simplex group {tr!r} is not contiguous in {where} block")
            j = i
            while j < len(specs) and specs[j].transform == tr:
                j += 1
            if j - i < 2:
                raise LayoutError(f"simplex group {tr!r} needs at least 2 members")
            seen.add(tr)
            blocks.append((i, j - i))
            i = j
        else:
            i += 1
    return blocks


@dataclass(frozen=True)
class ParamLayout:
    """Shared/unit-specific parameter structure of a panel model."""

    shared: tuple[ParamSpec, ...]
    specific: tuple[ParamSpec, ...]
    n_units: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n_units < 1:
            raise LayoutError("n_units must be >= 1")
        object.__setattr__(self, "shared", tuple(self.shared))
        object.__setattr__(self, "specific", tuple(self.specific))
        names = [s.name for s in self.shared] + [s.name for s in self.specific]
        if len(set(names)) != len(names):
            raise LayoutError("parameter names must be unique within a layout")
        _find_simplex_blocks(self.shared, "shared")
        _find_simplex_blocks(self.specific, "specific")

    # -- basic geometry ----------------------------------------------------

    @property
    def n_shared(self) -> int:
        return len(self.shared)

    @property
    def n_specific(self) -> int:
        return len(self.specific)

    @property
    def dim(self) -> int:
        return self.n_shared + self.n_units * self.n_specific

    def unit_block(self, u: int) -> slice:
        """Flat slice of unit ``u``'s specific block (0-based unit index)."""
        self._check_unit(u)
        start = self.n_shared + u * self.n_specific
        return slice(start, start + self.n_specific)

    def unit_indices(self, u: int) -> np.ndarray:
        """Flat indices of the (shared, psi_u) sub-vector used by unit ``u``."""
        key = ("unit_indices", u)
        if key not in self._cache:
            self._check_unit(u)
            blk = self.unit_block(u)
            self._cache[key] = np.concatenate(
                [np.arange(self.n_shared), np.arange(blk.start, blk.stop)]
            ).astype(np.intp)
        return self._cache[key]

    def _check_unit(self, u: int) -> None:
        if not 0 <= u < self.n_units:
            raise LayoutError(f"unit index {u} outside 0..{self.n_units - 1}")

    @property
    def names(self) -> tuple[str, ...]:
        key = "names"
        if key not in self._cache:
            out = [s.name for s in self.shared]
            for u in range(self.n_units):
                out.extend(f"{s.name}[{u + 1}]" for s in self.specific)
            self._cache[key] = tuple(out)
        return self._cache[key]

    def name_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown parameter name {name!r}") from None

    @property
    def unit_param_names(self) -> tuple[str, ...]:
        """Names of the (shared, psi_u) sub-vector, in sub-vector order."""
        return tuple(s.name for s in self.shared) + tuple(s.name for s in self.specific)

    # -- per-coordinate metadata over the flat vector ------------------------

    def _flat_specs(self) -> list[ParamSpec]:
        key = "flat_specs"
        if key not in self._cache:
            specs = list(self.shared)
            for _ in range(self.n_units):
                specs.extend(self.specific)
            self._cache[key] = specs
        return self._cache[key]

    def flat_transforms(self) -> tuple[str, ...]:
        return tuple(s.transform for s in self._flat_specs())

    def simplex_blocks(self) -> list[tuple[int, int]]:
        """(start, length) of every simplex block in flat indexing."""
        key = "simplex_blocks"
        if key not in self._cache:
            blocks = list(_find_simplex_blocks(self.shared, "shared"))
            spec_blocks = _find_simplex_blocks(self.specific, "specific")
            for u in range(self.n_units):
                off = self.n_shared + u * self.n_specific
                blocks.extend((off + s, ln) for s, ln in spec_blocks)
            self._cache[key] = blocks
        return self._cache[key]

    def ivp_mask(self) -> np.ndarray:
        key = "ivp_mask"
        if key not in self._cache:
            self._cache[key] = np.array([s.ivp for s in self._flat_specs()], dtype=bool)
        return self._cache[key]

    def estimable_mask(self) -> np.ndarray:
        """False on redundant simplex slots (the pinned last member of a block)."""
        key = "estimable_mask"
        if key not in self._cache:
            mask = np.ones(self.dim, dtype=bool)
            for start, length in self.simplex_blocks():
                mask[start + length - 1] = False
            self._cache[key] = mask
        return self._cache[key]

    # -- vectorized transforms ----------------------------------------------

    def _codes(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays of log- and logit-tagged coordinates."""
        key = "codes"
        if key not in self._cache:
            trs = self.flat_transforms()
            log_ix = np.array([i for i, t in enumerate(trs) if t == "log"], dtype=np.intp)
            logit_ix = np.array([i for i, t in enumerate(trs) if t == "logit"], dtype=np.intp)
            self._cache[key] = (log_ix, logit_ix)
        return self._cache[key]

    def to_estimation(self, values: np.ndarray) -> np.ndarray:
        """Natural -> estimation scale, vectorized over leading axes."""
        values = np.asarray(values, dtype=float)
        self._check_len(values)
        out = values.copy()
        log_ix, logit_ix = self._codes()
        if log_ix.size:
            v = values[..., log_ix]
            self._require(v > 0, log_ix, "log transform needs positive values")
            out[..., log_ix] = np.log(v)
        if logit_ix.size:
            v = values[..., logit_ix]
            self._require((v > 0) & (v < 1), logit_ix, "logit transform needs values in (0, 1)")
            out[..., logit_ix] = np.log(v) - np.log1p(-v)
        for start, length in self.simplex_blocks():
            w = values[..., start:start + length]
            self._require(w > 0, np.arange(start, start + length),
                          "simplex transform needs positive values")
            out[..., start:start + length - 1] = np.log(w[..., :-1]) - np.log(w[..., -1:])
            out[..., start + length - 1] = 0.0
        return out

    def from_estimation(self, values: np.ndarray) -> np.ndarray:
        """Estimation -> natural scale, vectorized over leading axes."""
        values = np.asarray(values, dtype=float)
        self._check_len(values)
        out = values.copy()
        log_ix, logit_ix = self._codes()
        if log_ix.size:
            out[..., log_ix] = np.exp(values[..., log_ix])
        if logit_ix.size:
            z = values[..., logit_ix]
            out[..., logit_ix] = 1.0 / (1.0 + np.exp(-z))
        for start, length in self.simplex_blocks():
            z = values[..., start:start + length - 1]
            e = np.exp(z)
            denom = 1.0 + e.sum(axis=-1, keepdims=True)
            out[..., start:start + length - 1] = e / denom
            out[..., start + length - 1] = (1.0 / denom)[..., 0]
        return out

    def _check_len(self, values: np.ndarray) -> None:
        if values.shape[-1] != self.dim:
            raise LayoutError(
                f"vector of length {values.shape[-1]} does not match layout dimension {self.dim}"
            )

    def _require(self, ok, idx, msg: str) -> None:
        if bool(np.all(ok)):
            return
        bad = np.asarray(~np.asarray(ok))
        bad_cols = bad.reshape(-1, bad.shape[-1]).any(axis=0)
        name = self.names[int(np.asarray(idx)[np.nonzero(bad_cols)[0][0]])]
        raise DomainError(f"{msg}: parameter {name!r}")


@dataclass(frozen=True)
class ParamVector:
    """A flat parameter vector bound to a layout, tagged with its scale."""

    layout: ParamLayout
    values: np.ndarray
    scale: str = NATURAL

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] != self.layout.dim:
            raise LayoutError(
                f"values of shape {values.shape} do not match layout dimension {self.layout.dim}"
            )
        if self.scale not in (NATURAL, ESTIMATION):
            raise LayoutError(f"unknown scale {self.scale!r}")
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.layout.name_index(name)])

    def replace(self, **by_name: float) -> "ParamVector":
        values = self.values.copy()
        for name, val in by_name.items():
            values[self.layout.name_index(name)] = val
        return ParamVector(self.layout, values, self.scale)

    def unit_params(self, u: int) -> np.ndarray:
        """The (shared, psi_u) sub-vector used by unit ``u``'s densities."""
        return self.values[self.layout.unit_indices(u)]


def flatten(params: ParamVector) -> np.ndarray:
    """Flat array of values in layout order (copy)."""
    return params.values.copy()


def unflatten(values: Iterable[float], layout: ParamLayout, scale: str = NATURAL) -> ParamVector:
    """Rebuild a ParamVector from a flat array; inverse of :func:`flatten`."""
    values = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if values.shape != (layout.dim,):
        raise LayoutError(f"flat array of shape {values.shape} does not match layout dimension {layout.dim}")
    return ParamVector(layout, values, scale)


def to_estimation_scale(params: ParamVector) -> ParamVector:
    if params.scale == ESTIMATION:
        return params
    return ParamVector(params.layout, params.layout.to_estimation(params.values), ESTIMATION)


def from_estimation_scale(params: ParamVector) -> ParamVector:
    if params.scale == NATURAL:
        return params
    return ParamVector(params.layout, params.layout.from_estimation(params.values), NATURAL)
