"""Single-site Metropolis sampling of p(phi) ~ exp(-S[phi]).

Random numbers come from numpy's ``Philox`` bit generator (a counter-based
generator, Salmon et al. 2011) so a given seed reproduces the same chain on
every platform. One generator stream is used per chain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .lattice import ActionParams, Ensemble, FieldConfig

log = logging.getLogger(__name__)

TUNE_INTERVAL = 100
TUNE_FACTOR = 1.1
TARGET_ACCEPTANCE = (0.4, 0.6)
_BLOCK = 256


@dataclass(frozen=True)
class McmcConfig:
    params: ActionParams = field(default_factory=ActionParams)
    side_length: int = 8
    proposal_width: float = 1.0
    n_therm: int = 10_000
    n_samples: int = 10_000
    thin: int = 10
    seed: int = 0
    tune: bool = True

    def __post_init__(self):
        if self.side_length < 1:
            raise ValueError("side_length must be positive")
        if not self.proposal_width > 0:
            raise ValueError("proposal_width must be > 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_therm < 0:
            raise ValueError("n_therm must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "McmcConfig":
        d = dict(d)
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed - {"mass_squared", "quartic"}
        if unknown:
            raise ValueError(f"unknown mcmc config keys: {sorted(unknown)}")
        params = d.pop("params", None)
        if isinstance(params, dict):
            params = ActionParams(**params)
        elif params is None:
            params = ActionParams(
                d.pop("mass_squared", ActionParams.mass_squared),
                d.pop("quartic", ActionParams.quartic),
            )
        return cls(params=params, **d)

    def to_dict(self) -> dict:
        return {
            "params": {"mass_squared": self.params.mass_squared, "quartic": self.params.quartic},
            "side_length": self.side_length,
            "proposal_width": self.proposal_width,
            "n_therm": self.n_therm,
            "n_samples": self.n_samples,
            "thin": self.thin,
            "seed": self.seed,
            "tune": self.tune,
        }


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@numba.njit(cache=True)
def _sweeps(phi, L, m2, lam, width, uniforms):
    """Run ``len(uniforms)`` raster sweeps in place; returns accepted counts per sweep."""
    n_sweeps = uniforms.shape[0]
    V = L * L
    accepted = np.zeros(n_sweeps, dtype=np.int64)
    kin = 2.0 if L > 1 else 0.0
    for k in range(n_sweeps):
        acc = 0
        for y in range(L):
            for x in range(L):
                i = x + L * y
                old = phi[i]
                new = old + width * (2.0 * uniforms[k, i, 0] - 1.0)
                if L > 1:
                    nsum = (
                        phi[(x + 1) % L + L * y]
                        + phi[(x - 1 + L) % L + L * y]
                        + phi[x + L * ((y + 1) % L)]
                        + phi[x + L * ((y - 1 + L) % L)]
                    )
                else:
                    nsum = 0.0
                o2 = old * old
                n2 = new * new
                dS = (kin + 0.5 * m2) * (n2 - o2) - (new - old) * nsum + lam * (n2 * n2 - o2 * o2)
                if dS <= 0.0 or uniforms[k, i, 1] < math.exp(-dS):
                    phi[i] = new
                    acc += 1
        accepted[k] = acc
    return accepted


def metropolis_sweep(config: FieldConfig, mcmc: McmcConfig, rng: np.random.Generator):
    """One raster-order Metropolis sweep; returns ``(new_config, acceptance_rate)``."""
    if config.side_length != mcmc.side_length:
        raise ValueError("config lattice size does not match McmcConfig.side_length")
    L = config.side_length
    phi = config.values.copy()
    u = rng.random((1, L * L, 2))
    acc = _sweeps(phi, L, mcmc.params.mass_squared, mcmc.params.quartic, mcmc.proposal_width, u)
    return FieldConfig(L, phi), acc[0] / (L * L)


def _run_sweeps(phi, cfg, width, rng, n_sweeps, record_every=0):
    """Advance ``phi`` by ``n_sweeps``; optionally record a copy every ``record_every`` sweeps."""
    L = cfg.side_length
    V = L * L
    m2, lam = cfg.params.mass_squared, cfg.params.quartic
    stored = []
    total_acc = 0
    done = 0
    while done < n_sweeps:
        if record_every:
            chunk = min(record_every, n_sweeps - done)
        else:
            chunk = min(_BLOCK, n_sweeps - done)
        u = rng.random((chunk, V, 2))
        total_acc += int(_sweeps(phi, L, m2, lam, width, u).sum())
        done += chunk
        if record_every:
            stored.append(phi.copy())
    return stored, total_acc / max(1, n_sweeps * V)


def thermalize(phi, cfg: McmcConfig, rng):
    """Thermalize in place, tuning the proposal width toward 40-60% acceptance."""
    width = cfg.proposal_width
    done = 0
    while done < cfg.n_therm:
        chunk = min(TUNE_INTERVAL, cfg.n_therm - done)
        _, rate = _run_sweeps(phi, cfg, width, rng, chunk)
        done += chunk
        if cfg.tune and chunk == TUNE_INTERVAL:
            if rate > TARGET_ACCEPTANCE[1]:
                width *= TUNE_FACTOR
            elif rate < TARGET_ACCEPTANCE[0]:
                width /= TUNE_FACTOR
    return width


def run_chain(mcmc: McmcConfig) -> Ensemble:
    """Hot start, thermalize, then store one configuration every ``thin`` sweeps."""
    rng = make_rng(mcmc.seed)
    V = mcmc.side_length**2
    phi = rng.standard_normal(V)
    width = thermalize(phi, mcmc, rng)
    stored, rate = _run_sweeps(phi, mcmc, width, rng, mcmc.n_samples * mcmc.thin, mcmc.thin)
    log.info("mcmc: L=%d width=%.4f acceptance=%.3f", mcmc.side_length, width, rate)
    return Ensemble(
        mcmc.side_length,
        np.stack(stored),
        "mcmc",
        mcmc.params,
        {"proposal_width": width, "acceptance_rate": rate, "seed": mcmc.seed},
    )


def run_chains(mcmc: McmcConfig, seeds) -> Ensemble:
    """Independent chains merged in seed order."""
    parts = [run_chain(replace(mcmc, seed=s)) for s in sorted(seeds)]
    return Ensemble(
        mcmc.side_length, np.concatenate([p.samples for p in parts]), "mcmc", mcmc.params
    )


def autocorrelation(series) -> np.ndarray:
    """Normalised autocorrelation function rho(t) for t = 0..n-1."""
    x = np.asarray(series, dtype=np.float64)
    x = x - x.mean()
    n = x.size
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n]
    if acov[0] <= 0.0:
        raise ValueError("series is constant; autocorrelation undefined")
    return acov / acov[0]


def autocorrelation_time(series, window_factor: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window.

    ``tau = 1/2 + sum_{t=1}^{T} rho(t)`` where ``T`` is the first lag with
    ``T >= window_factor * tau(T)``.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size < 100:
        raise ValueError("need at least 100 points to estimate an autocorrelation time")
    if np.ptp(x) == 0.0:
        raise ValueError("series is constant; autocorrelation undefined")
    rho = autocorrelation(x)
    taus = 0.5 + np.cumsum(rho[1:])
    lags = np.arange(1, x.size)
    ok = lags >= window_factor * taus
    if not ok.any():
        raise ValueError("autocorrelation window never closed; chain too short")
    tau = float(taus[np.argmax(ok)])
    if not tau > 0.0:
        raise ValueError(f"non-decaying autocorrelation (tau={tau:.3g}); estimate undefined")
    return tau
