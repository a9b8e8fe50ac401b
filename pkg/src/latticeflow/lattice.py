"""Scalar phi^4 fields on a periodic two-dimensional square lattice.

Configurations are stored flattened in row-major order,
``values[x + L * y] = phi(x, y)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROVENANCES = ("mcmc", "flow", "prior")


@dataclass(frozen=True)
class ActionParams:
    """Couplings of the lattice action: mass term ``M^2`` and quartic ``lambda``.

    The defaults put the 8x8 lattice close to criticality with ``<phi^2>``
    near one.
    """

    mass_squared: float = -0.14
    quartic: float = 0.02

    def __post_init__(self):
        if not (math.isfinite(self.mass_squared) and math.isfinite(self.quartic)):
            raise ValueError("couplings must be finite")
        if self.quartic < 0:
            raise ValueError(f"quartic coupling must be >= 0, got {self.quartic}")


@dataclass
class FieldConfig:
    side_length: int
    values: np.ndarray

    def __post_init__(self):
        if int(self.side_length) < 1:
            raise ValueError("side_length must be positive")
        self.side_length = int(self.side_length)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.side_length**2:
            raise ValueError(
                f"expected {self.side_length ** 2} values for L={self.side_length}, "
                f"got {self.values.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def as_grid(self) -> np.ndarray:
        """Return the field as an ``(L, L)`` array indexed ``[y, x]``."""
        return self.values.reshape(self.side_length, self.side_length)


@dataclass
class Ensemble:
    """A set of configurations on one lattice size, stored as an ``(N, L^2)`` array."""

    side_length: int
    samples: np.ndarray
    provenance: str = "mcmc"
    params: ActionParams | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.side_length = int(self.side_length)
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] == 0:
            raise ValueError("ensemble must hold at least one configuration")
        if samples.shape[1] != self.side_length**2:
            raise ValueError(
                f"configurations have {samples.shape[1]} sites, expected "
                f"{self.side_length ** 2} for L={self.side_length}"
            )
        if not np.all(np.isfinite(samples)):
            raise ValueError("ensemble contains non-finite values")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.samples = np.ascontiguousarray(samples)

    @classmethod
    def from_configs(cls, configs: Sequence[FieldConfig], provenance="mcmc", params=None):
        if len(configs) == 0:
            raise ValueError("ensemble must hold at least one configuration")
        sizes = {c.side_length for c in configs}
        if len(sizes) != 1:
            raise ValueError(f"lattice sizes differ within ensemble: {sorted(sizes)}")
        return cls(sizes.pop(), np.stack([c.values for c in configs]), provenance, params)

    def __len__(self):
        return self.samples.shape[0]

    def __getitem__(self, i) -> FieldConfig:
        return FieldConfig(self.side_length, self.samples[i])

    def configs(self) -> list[FieldConfig]:
        return [self[i] for i in range(len(self))]


def _as_batch(phi, side_length=None):
    """Coerce a config, ensemble, or raw array into ``(batch, L, L)``."""
    if isinstance(phi, FieldConfig):
        return phi.values.reshape(1, phi.side_length, phi.side_length)
    if isinstance(phi, Ensemble):
        L = phi.side_length
        return phi.samples.reshape(-1, L, L)
    arr = np.asarray(phi, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if side_length is None:
        side_length = math.isqrt(arr.shape[-1])
    if arr.shape[-1] != side_length**2:
        raise ValueError(f"last axis of length {arr.shape[-1]} is not a square lattice")
    return arr.reshape(-1, side_length, side_length)


def action_batch(phi, params: ActionParams) -> np.ndarray:
    """Vectorised action for an ``(N, L^2)`` array of configurations."""
    grid = _as_batch(phi)
    kinetic = 0.0
    for axis in (1, 2):
        diff = grid - np.roll(grid, -1, axis=axis)
        kinetic = kinetic + 0.5 * np.sum(diff * diff, axis=(1, 2))
    sq = grid * grid
    potential = np.sum(0.5 * params.mass_squared * sq + params.quartic * sq * sq, axis=(1, 2))
    return kinetic + potential


def action(config: FieldConfig, params: ActionParams) -> float:
    """Euclidean action with forward-difference kinetic term and periodic wrap."""
    return float(action_batch(config, params)[0])


def action_gradient(config: FieldConfig, params: ActionParams) -> np.ndarray:
    grid = config.as_grid()
    lap = 4.0 * grid
    for axis in (0, 1):
        lap = lap - np.roll(grid, 1, axis=axis) - np.roll(grid, -1, axis=axis)
    grad = lap + params.mass_squared * grid + 4.0 * params.quartic * grid**3
    return grad.reshape(-1)


def _check_ensemble(ensemble: Ensemble):
    if not isinstance(ensemble, Ensemble):
        raise TypeError("expected an Ensemble")
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")


def two_point(ensemble: Ensemble) -> np.ndarray:
    """Two-point function ``C(r)``, r = 0..L-1, averaged over sites, axes and samples."""
    _check_ensemble(ensemble)
    grid = _as_batch(ensemble)
    n, L, _ = grid.shape
    out = np.empty(L)
    for r in range(L):
        acc = np.sum(grid * np.roll(grid, -r, axis=1)) + np.sum(grid * np.roll(grid, -r, axis=2))
        out[r] = acc / (n * L * L * 2)
    return out


def moments(ensemble: Ensemble) -> dict:
    _check_ensemble(ensemble)
    sq = ensemble.samples**2
    return {"phi2": float(np.mean(sq)), "phi4": float(np.mean(sq * sq))}


def moment_errors(ensemble: Ensemble) -> dict:
    """Naive standard errors of the moments, treating configurations as independent."""
    sq = ensemble.samples**2
    per_cfg2 = sq.mean(axis=1)
    per_cfg4 = (sq * sq).mean(axis=1)
    n = len(ensemble)
    if n < 2:
        return {"phi2": float("nan"), "phi4": float("nan")}
    return {
        "phi2": float(per_cfg2.std(ddof=1) / math.sqrt(n)),
        "phi4": float(per_cfg4.std(ddof=1) / math.sqrt(n)),
    }


def histogram(values, bins: int, range: tuple[float, float]):
    """Density histogram with left-closed bins; out-of-range values clamp to the end bins.

    Returns ``(bin_edges, density)`` with ``sum(density * width) == 1``.
    """
    bins = int(bins)
    lo, hi = float(range[0]), float(range[1])
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not lo < hi:
        raise ValueError("histogram range must satisfy lo < hi")
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("no values to histogram")
    edges = np.linspace(lo, hi, bins + 1)
    width = (hi - lo) / bins
    idx = np.floor((values - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return edges, counts / (values.size * width)


def field_histogram(ensemble: Ensemble, bins: int = 50, range=(-3.5, 3.5)):
    _check_ensemble(ensemble)
    return histogram(ensemble.samples, bins, range)


# --- file formats ---------------------------------------------------------


def write_ensemble(path, ensemble: Ensemble, params: ActionParams | None = None):
    params = params or ensemble.params or ActionParams()
    path = Path(path)
    with path.open("w") as fh:
        fh.write(
            f"L={ensemble.side_length} N={len(ensemble)} "
            f"params={params.mass_squared!r},{params.quartic!r} "
            f"provenance={ensemble.provenance}\n"
        )
        for row in ensemble.samples:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")
    return path


def _parse_header(line: str) -> dict:
    fields = dict(tok.split("=", 1) for tok in line.split())
    missing = {"L", "N", "params", "provenance"} - fields.keys()
    if missing:
        raise ValueError(f"ensemble header missing {sorted(missing)}")
    return fields


def read_ensemble(path) -> Ensemble:
    with Path(path).open() as fh:
        header = _parse_header(fh.readline())
        rows = [np.array(line.split(), dtype=np.float64) for line in fh if line.strip()]
    L, n = int(header["L"]), int(header["N"])
    m2, lam = (float(v) for v in header["params"].split(","))
    if len(rows) != n:
        raise ValueError(f"header declares N={n} but file holds {len(rows)} configurations")
    if any(r.size != L * L for r in rows):
        raise ValueError(f"every configuration must have {L * L} values")
    return Ensemble(L, np.stack(rows), header["provenance"], ActionParams(m2, lam))


def write_csv(path, header: Iterable[str], rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_two_point_csv(path, corr):
    return write_csv(path, ("r", "C"), ((r, c) for r, c in enumerate(corr)))


def write_moments_csv(path, mom: dict):
    return write_csv(path, ("name", "value"), sorted(mom.items()))


def write_histogram_csv(path, edges, density):
    return write_csv(
        path, ("bin_left", "bin_right", "density"), zip(edges[:-1], edges[1:], density)
    )
