"""Ensemble comparison: moments, histograms, two-point functions, effective action."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowModel
from .lattice import (
    ActionParams,
    Ensemble,
    action_batch,
    histogram,
    moment_errors,
    moments,
    two_point,
    write_csv,
)

DEFAULT_EVAL_SAMPLES = 500


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def width(self):
        return np.diff(self.edges)


def histogram_distance(h1: Histogram, h2: Histogram) -> float:
    """L1 distance between two densities on identical bins, in [0, 2]."""
    if h1.edges.shape != h2.edges.shape or not np.array_equal(h1.edges, h2.edges):
        raise ValueError("histograms must share identical bin edges")
    return float(np.sum(np.abs(h1.density - h2.density) * h1.width))


def _shared_range(a, b):
    lo = float(min(np.min(a), np.min(b)))
    hi = float(max(np.max(a), np.max(b)))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def paired_histograms(ref_values, gen_values, bins):
    rng = _shared_range(ref_values, gen_values)
    return (
        Histogram(*histogram(ref_values, bins, rng)),
        Histogram(*histogram(gen_values, bins, rng)),
    )


def _ols(x, y):
    x_c, y_c = x - x.mean(), y - y.mean()
    slope = float(np.dot(x_c, y_c) / np.dot(x_c, x_c))
    return slope, float(y.mean() - slope * x.mean())


def seff_correlation(model: FlowModel, ensemble: Ensemble, params: ActionParams):
    """Pairs ``(S_eff, S)`` per configuration and a linear fit of S on S_eff.

    The fit dict also carries the reverse regression (S_eff on S) since the
    natural direction is ambiguous.
    """
    if len(ensemble) < 3:
        raise ValueError("need at least 3 configurations to fit")
    s_eff = -model.log_prob(ensemble.samples)
    s = action_batch(ensemble.samples, params)
    return np.column_stack([s_eff, s]), fit_pairs(s_eff, s)


def fit_pairs(s_eff, s) -> dict:
    s_eff, s = np.asarray(s_eff, float), np.asarray(s, float)
    if s_eff.size < 3:
        raise ValueError("need at least 3 pairs to fit")
    if np.ptp(s_eff) == 0 or np.ptp(s) == 0:
        raise ValueError("degenerate ensemble: zero variance in S or S_eff")
    slope, intercept = _ols(s_eff, s)
    rev_slope, rev_intercept = _ols(s, s_eff)
    return {
        "slope": slope,
        "intercept": intercept,
        "pearson_r": float(np.corrcoef(s_eff, s)[0, 1]),
        "slope_seff_on_s": rev_slope,
        "intercept_seff_on_s": rev_intercept,
    }


@dataclass
class DiagnosticsReport:
    moments_ref: dict
    moments_gen: dict
    moment_errors_ref: dict
    moment_errors_gen: dict
    action_hist_ref: Histogram
    action_hist_gen: Histogram
    field_hist_ref: Histogram
    field_hist_gen: Histogram
    two_point_ref: np.ndarray
    two_point_gen: np.ndarray
    seff_pairs: np.ndarray | None = None
    fit: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def action_hist_distance(self) -> float:
        return histogram_distance(self.action_hist_ref, self.action_hist_gen)

    @property
    def field_hist_distance(self) -> float:
        return histogram_distance(self.field_hist_ref, self.field_hist_gen)

    @property
    def c0_ratio(self) -> float:
        return float(self.two_point_gen[0] / self.two_point_ref[0])

    def summary(self) -> dict:
        return {
            "moments_ref": self.moments_ref,
            "moments_gen": self.moments_gen,
            "moment_errors_ref": self.moment_errors_ref,
            "moment_errors_gen": self.moment_errors_gen,
            "field_hist_distance": self.field_hist_distance,
            "action_hist_distance": self.action_hist_distance,
            "c0_ratio": self.c0_ratio,
            "fit": self.fit,
            **self.extra,
        }

    def to_dict(self) -> dict:
        def h(x):
            return {"edges": x.edges.tolist(), "density": x.density.tolist()}

        out = self.summary()
        out.update(
            {
                "action_hist_ref": h(self.action_hist_ref),
                "action_hist_gen": h(self.action_hist_gen),
                "field_hist_ref": h(self.field_hist_ref),
                "field_hist_gen": h(self.field_hist_gen),
                "two_point_ref": self.two_point_ref.tolist(),
                "two_point_gen": self.two_point_gen.tolist(),
                "seff_pairs": None if self.seff_pairs is None else self.seff_pairs.tolist(),
            }
        )
        return out

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1))
        L = len(self.two_point_ref)
        write_csv(
            out / "two_point.csv",
            ("r", "C_ref", "C_gen"),
            zip(range(L), self.two_point_ref, self.two_point_gen),
        )
        for name, ref, gen in (
            ("action_hist.csv", self.action_hist_ref, self.action_hist_gen),
            ("field_hist.csv", self.field_hist_ref, self.field_hist_gen),
        ):
            write_csv(
                out / name,
                ("bin_left", "bin_right", "density_ref", "density_gen"),
                zip(ref.edges[:-1], ref.edges[1:], ref.density, gen.density),
            )
        rows = [(f"{k}_ref", v) for k, v in sorted(self.moments_ref.items())]
        rows += [(f"{k}_gen", v) for k, v in sorted(self.moments_gen.items())]
        write_csv(out / "moments.csv", ("name", "value"), rows)
        if self.seff_pairs is not None:
            write_csv(out / "seff_pairs.csv", ("S_eff", "S"), self.seff_pairs)
        return out


def compare_ensembles(
    ref: Ensemble,
    gen: Ensemble,
    params: ActionParams,
    bins: int = 50,
    model: FlowModel | None = None,
) -> DiagnosticsReport:
    """Evaluate every diagnostic on one fixed pair of ensembles."""
    if ref.side_length != gen.side_length:
        raise ValueError("ensembles live on different lattice sizes")
    s_ref = action_batch(ref.samples, params)
    s_gen = action_batch(gen.samples, params)
    ah_ref, ah_gen = paired_histograms(s_ref, s_gen, bins)
    fh_ref, fh_gen = paired_histograms(ref.samples, gen.samples, bins)
    pairs = fit = None
    if model is not None:
        pairs, fit = seff_correlation(model, gen, params)
    return DiagnosticsReport(
        moments(ref),
        moments(gen),
        moment_errors(ref),
        moment_errors(gen),
        ah_ref,
        ah_gen,
        fh_ref,
        fh_gen,
        two_point(ref),
        two_point(gen),
        pairs,
        fit,
        {"params": asdict(params), "n_ref": len(ref), "n_gen": len(gen)},
    )
