"""Finite-difference checks of every analytic gradient on toy problem sizes.

Relative error of a gradient tensor is ``max|g - g_fd| / max(max|g_fd|, 1e-12)``
with central differences of step ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tape
from .flow import FlowModel, log_q
from .lattice import ActionParams, FieldConfig, action, action_gradient
from .quantum import quantum_loss, run_circuit
from .training import LossWeights, ReferenceStats, batch_loss


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel. error {self.max_rel_error:.3e} (tol {self.tolerance:.0e})"


def rel_error(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12))


def numeric_grad(f, x: np.ndarray, h=1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_params(loss_fn, params, h=1e-5, corrupt=False) -> float:
    """Worst relative error over ``params`` of tape gradients vs central differences."""
    for p in params:
        p.zero_grad()
    root = loss_fn()
    root.tape.backward(root)
    analytic = [p.grad.copy() for p in params]
    if corrupt and analytic:
        analytic[0] = analytic[0] * 1.5 + 1e-3
    worst = 0.0
    for p, g in zip(params, analytic):
        fd = numeric_grad(lambda: float(loss_fn().value), p.value, h)
        worst = max(worst, rel_error(g, fd))
    for p in params:
        p.zero_grad()
    return worst


def perturb(params, rng, scale=0.3):
    """Move zero-initialised weights off zero so every path carries gradient."""
    for p in params:
        p.value = p.value + scale * rng.standard_normal(p.shape)


def _primitive_cases(rng):
    x = Param(rng.standard_normal(8), "x")
    y = Param(rng.standard_normal(8), "y")
    pos = Param(rng.uniform(0.5, 2.0, 8), "pos")
    W = Param(rng.standard_normal((8, 8)) / 3, "W")
    b = Param(rng.standard_normal(8), "b")
    M = Param(rng.standard_normal((4, 8)), "M")
    Ur = Param(rng.standard_normal((8, 8)), "Ur")
    Ui = Param(rng.standard_normal((8, 8)), "Ui")
    w = rng.standard_normal(8)

    def dot(node):
        return ad.sum_(ad.mul(node, node.tape.constant(w[: node.value.shape[-1]])))

    cases = {
        "add": (lambda t: dot(ad.add(t.param(x), t.param(y))), [x, y]),
        "mul": (lambda t: dot(ad.mul(t.param(x), t.param(y))), [x, y]),
        "neg": (lambda t: dot(ad.neg(t.param(x))), [x]),
        "square": (lambda t: dot(ad.square(t.param(x))), [x]),
        "tanh": (lambda t: dot(ad.tanh(t.param(x))), [x]),
        "exp": (lambda t: dot(ad.exp(t.param(x))), [x]),
        "log": (lambda t: dot(ad.log(t.param(pos))), [pos]),
        "sum": (lambda t: ad.sum_(ad.square(t.param(x))), [x]),
        "affine": (lambda t: dot(ad.affine(t.param(W), t.param(x), t.param(b))), [W, x, b]),
        "matvec": (lambda t: dot(ad.matvec(t.param(M), t.param(x))), [M, x]),
        "normalize_l2": (lambda t: dot(ad.normalize_l2(t.param(x))), [x]),
        "abs2": (lambda t: dot(ad.abs2(t.param(x), t.param(y))), [x, y]),
        "complex_matvec": (
            lambda t: dot(ad.abs2(*ad.complex_matvec((t.param(Ur), t.param(Ui)), (t.param(x), t.param(y))))),
            [Ur, Ui, x, y],
        ),
        "composite sum(square(tanh(affine)))": (
            lambda t: ad.sum_(ad.square(ad.tanh(ad.affine(t.param(W), t.param(x), t.param(b))))),
            [W, x, b],
        ),
    }
    return cases


def check_primitives(seed=0, corrupt=False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, params) in _primitive_cases(rng).items():
        err = check_params(lambda: fn(Tape()), params, h=1e-6, corrupt=corrupt and name == "tanh")
        out.append(CheckResult(f"autodiff/{name}", err, 1e-6))
    return out


def toy_model(dim=4, n_layers=2, quantum=True, seed=0, scale=0.3) -> FlowModel:
    model = FlowModel.build(dim=dim, n_layers=n_layers, hidden_width=6, quantum=quantum, seed=seed, encoder_hidden=4)
    perturb(model.params, np.random.default_rng(seed + 1), scale)
    return model


def check_flow_logq(seed=0) -> CheckResult:
    model = toy_model(seed=seed)
    phi = np.random.default_rng(seed + 2).standard_normal((3, 4))

    def loss():
        t = Tape()
        return ad.sum_(log_q(model, t.constant(phi)))

    return CheckResult("flow/log_q wrt parameters (d=4)", check_params(loss, model.flow_params), 1e-4)


def check_quantum_loss(seed=0) -> CheckResult:
    model = toy_model(dim=64, n_layers=1, seed=seed, scale=0.2)
    z = np.random.default_rng(seed + 3).standard_normal((2, 64))

    def loss():
        t = Tape()
        zn = t.constant(z)
        p = run_circuit(model.quantum, ad.take(zn, slice(0, 32)), ad.take(zn, slice(32, 64)))
        return ad.mean(quantum_loss(p))

    return CheckResult("quantum/L_q wrt encoder parameters", check_params(loss, model.quantum.params), 1e-5)


def check_training_loss(seed=0, objective="sample_nll", corrupt=False) -> CheckResult:
    """Gradient of the full composite loss on a 2x2 lattice with zero-padded embedding."""
    model = toy_model(seed=seed)
    rng = np.random.default_rng(seed + 4)
    z = rng.standard_normal((5, 4))
    params = ActionParams(-1.0, 0.5)
    stats = ReferenceStats(0.8, 2.0, 100)
    weights = LossWeights(100.0, 1.0, 1.0, objective)

    def loss():
        return batch_loss(model, z, stats, weights, params).total

    err = check_params(loss, model.params, corrupt=corrupt)
    return CheckResult(f"training/{objective} total loss (2x2 lattice)", err, 1e-4)


def check_action_gradient(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed + 5)
    params = ActionParams(-4.0, 8.0)
    phi = rng.standard_normal(16) * 0.5

    def f():
        return action(FieldConfig(4, phi), params)

    fd = numeric_grad(f, phi)
    return CheckResult("lattice/action_gradient (4x4)", rel_error(action_gradient(FieldConfig(4, phi), params), fd), 1e-6)


def run_all(seed=0, corrupt=False) -> list[CheckResult]:
    results = check_primitives(seed, corrupt)
    results.append(check_action_gradient(seed))
    results.append(check_flow_logq(seed))
    results.append(check_quantum_loss(seed))
    for objective in ("sample_nll", "reverse_kl"):
        results.append(check_training_loss(seed, objective))
    return results
