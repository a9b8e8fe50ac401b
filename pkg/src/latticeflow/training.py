"""Composite training objective, optimisation loop and sampling."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Node, Tape
from .flow import FlowModel, base_log_prob, flow_forward, log_q, save_checkpoint, split_sizes
from .lattice import ActionParams, Ensemble, action_batch, read_ensemble
from .quantum import quantum_loss, run_circuit

log = logging.getLogger(__name__)

MODEL_KINDS = ("hybrid", "classical_baseline")
OBJECTIVE_KINDS = ("sample_nll", "reverse_kl")
LOSS_COLUMNS = ("epoch", "step", "nll", "quantum", "variance", "action", "total")
HYBRID_LAYERS = 2
BASELINE_LAYERS = 16


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term, step=None):
        self.term = term
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite {term} term{where}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    lambda_q: float = 100.0
    lambda_var: float = 1.0
    lambda_S: float = 0.01
    reference_path: str | None = None
    seed: int = 0
    model_kind: str = "hybrid"
    objective_kind: str = "reverse_kl"
    hidden_width: int = 36
    n_layers: int | None = None
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for name in ("lambda_q", "lambda_var", "lambda_S"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ValueError(f"objective_kind must be one of {OBJECTIVE_KINDS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def layers(self) -> int:
        if self.n_layers is not None:
            return self.n_layers
        return HYBRID_LAYERS if self.model_kind == "hybrid" else BASELINE_LAYERS

    @property
    def effective_lambda_q(self) -> float:
        return self.lambda_q if self.model_kind == "hybrid" else 0.0

    @classmethod
    def baseline(cls, **overrides) -> "TrainConfig":
        """Classical comparison setup: 16 coupling layers, no quantum term, 2500 epochs."""
        kw = {"model_kind": "classical_baseline", "epochs": 2500}
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class ReferenceStats:
    variance: float
    mean_action: float
    n_source_samples: int

    @classmethod
    def from_ensemble(cls, ensemble: Ensemble, params: ActionParams) -> "ReferenceStats":
        x = ensemble.samples
        return cls(
            float(np.mean(x * x) - np.mean(x) ** 2),
            float(np.mean(action_batch(x, params))),
            len(ensemble),
        )


@dataclass
class LossReport:
    nll_term: Node
    quantum_term: Node
    variance_term: Node
    action_term: Node
    total: Node
    sigma2: Node
    mean_action: Node
    phi: Node

    def values(self) -> dict:
        return {
            "nll": float(self.nll_term.value),
            "quantum": float(self.quantum_term.value),
            "variance": float(self.variance_term.value),
            "action": float(self.action_term.value),
            "total": float(self.total.value),
            "sigma2": float(self.sigma2.value),
            "mean_action": float(self.mean_action.value),
        }


@dataclass(frozen=True)
class LossWeights:
    lambda_q: float = 100.0
    lambda_var: float = 1.0
    lambda_S: float = 0.01
    objective_kind: str = "reverse_kl"

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "LossWeights":
        return cls(cfg.effective_lambda_q, cfg.lambda_var, cfg.lambda_S, cfg.objective_kind)


def _shift_indices(L: int):
    idx = np.arange(L * L)
    x, y = idx % L, idx // L
    return (x + 1) % L + L * y, x + L * ((y + 1) % L)


def action_node(phi: Node, params: ActionParams) -> Node:
    """Per-row lattice action recorded on the tape."""
    L = math.isqrt(phi.value.shape[-1])
    sq = ad.square(phi)
    total = ad.add(ad.scale(sq, 0.5 * params.mass_squared), ad.scale(ad.square(sq), params.quartic))
    for shift in _shift_indices(L):
        diff = ad.sub(phi, ad.take(phi, shift))
        total = ad.add(total, ad.scale(ad.square(diff), 0.5))
    return ad.sum_(total, axis=-1)


def pooled_variance(phi: Node) -> Node:
    return ad.sub(ad.mean(ad.square(phi)), ad.square(ad.mean(phi)))


def _finite(node: Node, term: str):
    if not np.all(np.isfinite(node.value)):
        raise NonFiniteLoss(term)


def batch_loss(model: FlowModel, z, stats: ReferenceStats, weights: LossWeights, params: ActionParams, tape=None) -> LossReport:
    """Record the composite loss for one latent batch on a fresh tape."""
    tape = tape or Tape()
    z = z if isinstance(z, Node) else tape.constant(np.atleast_2d(np.asarray(z, dtype=np.float64)))
    if z.value.shape[0] == 0:
        raise ValueError("empty batch")
    phi, logdet = flow_forward(model, z)
    log_q_phi = ad.sub(base_log_prob(z), logdet)
    S = action_node(phi, params)
    if weights.objective_kind == "sample_nll":
        nll = ad.neg(ad.mean(log_q_phi))
    else:
        nll = ad.mean(ad.add(log_q_phi, S))
    _finite(nll, "nll")

    if model.quantum is not None:
        n_q, _ = split_sizes(model.dim)
        p_q = run_circuit(model.quantum, ad.take(z, slice(0, n_q)), ad.take(z, slice(n_q, model.dim)))
        q_term = ad.mean(quantum_loss(p_q))
    else:
        q_term = tape.constant(0.0)
    _finite(q_term, "quantum")

    sigma2 = pooled_variance(phi)
    var_term = ad.square(ad.add(sigma2, -stats.variance))
    _finite(var_term, "variance")
    mean_S = ad.mean(S)
    act_term = ad.square(ad.add(mean_S, -stats.mean_action))
    _finite(act_term, "action")

    total = nll
    for w, term in ((weights.lambda_q, q_term), (weights.lambda_var, var_term), (weights.lambda_S, act_term)):
        if w:
            total = ad.add(total, ad.scale(term, w))
    _finite(total, "total")
    return LossReport(nll, q_term, var_term, act_term, total, sigma2, mean_S, phi)


def sample(model: FlowModel, n: int, seed: int = 0, side_length: int | None = None) -> Ensemble:
    """Draw ``n`` configurations by pushing standard-normal latents through the flow."""
    rng = np.random.Generator(np.random.Philox(int(seed)))
    z = rng.standard_normal((int(n), model.dim))
    phi, _ = model.forward(z)
    L = side_length or math.isqrt(model.dim)
    return Ensemble(L, phi, "flow")


def prior_ensemble(dim: int, n: int, seed: int = 0) -> Ensemble:
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return Ensemble(math.isqrt(dim), rng.standard_normal((int(n), dim)), "prior")


@dataclass
class TrainResult:
    model: FlowModel
    history: list
    stats: ReferenceStats
    config: TrainConfig
    params: ActionParams


def _seeds(seed: int):
    ss = np.random.SeedSequence(int(seed))
    init, data = ss.spawn(2)
    return int(init.generate_state(1, np.uint64)[0]), np.random.Generator(np.random.Philox(data))


def fit_flow(
    reference: Ensemble,
    cfg: TrainConfig,
    params: ActionParams | None = None,
    epoch_callback=None,
    model: FlowModel | None = None,
) -> TrainResult:
    """Train a flow against reference statistics; deterministic given ``cfg.seed``."""
    params = params or reference.params or ActionParams()
    stats = ReferenceStats.from_ensemble(reference, params)
    dim = reference.side_length**2
    init_seed, rng = _seeds(cfg.seed)
    if model is None:
        model = FlowModel.build(
            dim=dim,
            n_layers=cfg.layers,
            hidden_width=cfg.hidden_width,
            quantum=cfg.model_kind == "hybrid",
            seed=init_seed,
        )
    weights = LossWeights.from_config(cfg)
    opt = Adam(model.params, lr=cfg.lr)
    steps = cfg.steps_per_epoch or math.ceil(len(reference) / cfg.batch_size)
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        acc = dict.fromkeys(LOSS_COLUMNS[2:], 0.0)
        for _ in range(steps):
            z = rng.standard_normal((cfg.batch_size, dim))
            try:
                report = batch_loss(model, z, stats, weights, params)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(exc.term, step) from None
            report.total.tape.backward(report.total)
            opt.step()
            step += 1
            for k, v in report.values().items():
                if k in acc:
                    acc[k] += v
        row = {"epoch": epoch, "step": step, **{k: v / steps for k, v in acc.items()}}
        history.append(row)
        log.info("epoch %d: total=%.5g nll=%.5g", epoch, row["total"], row["nll"])
        if epoch_callback is not None:
            epoch_callback(epoch, model, row)
    return TrainResult(model, history, stats, cfg, params)


def write_loss_log(path, history):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def train(cfg: TrainConfig, out_dir=None, reference: Ensemble | None = None, params=None) -> TrainResult:
    """Train from ``cfg.reference_path`` (or an in-memory reference).

    With ``out_dir`` set, ``checkpoint_epoch.json`` is rewritten after every
    epoch, ``checkpoint_final.json`` is written at the end and the per-epoch
    losses go to ``loss_log.csv``.
    """
    if reference is None:
        if cfg.reference_path is None:
            raise ValueError("no reference ensemble given")
        reference = read_ensemble(cfg.reference_path)
    params = params or reference.params or ActionParams()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def on_epoch(epoch, model, row):
        if out is not None:
            save_checkpoint(out / "checkpoint_epoch.json", model, params, cfg.seed, {"epoch": epoch, "train_config": cfg.to_dict()})

    result = fit_flow(reference, cfg, params, on_epoch)
    if out is not None:
        save_checkpoint(
            out / "checkpoint_final.json",
            result.model,
            params,
            cfg.seed,
            {"epoch": cfg.epochs, "train_config": cfg.to_dict(), "reference_stats": dataclasses.asdict(result.stats)},
        )
        write_loss_log(out / "loss_log.csv", result.history)
    return result
