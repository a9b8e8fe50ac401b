"""``latticeflow`` command line: mcmc, train, sample, eval, gradcheck.

Exit codes: 0 success, 1 failed check, 2 usage or config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import Tape
from .diagnostics import DEFAULT_EVAL_SAMPLES, compare_ensembles
from .flow import SCHEMA_VERSION, load_checkpoint, split_sizes
from .lattice import (
    ActionParams,
    field_histogram,
    moment_errors,
    moments,
    read_ensemble,
    two_point,
    write_csv,
    write_ensemble,
    write_histogram_csv,
    write_moments_csv,
    write_two_point_csv,
)
from .mcmc import McmcConfig, autocorrelation_time, run_chain
from .quantum import run_circuit
from .training import NonFiniteLoss, TrainConfig, sample, train

log = logging.getLogger("latticeflow")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
ENSEMBLE_FORMAT_VERSION = 1


class UsageError(Exception):
    pass


def _load_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _prepare_out(out, guarded, force):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    clash = [name for name in guarded if (out / name).exists()]
    if clash and not force:
        raise UsageError(f"{out} already holds {', '.join(clash)}; pass --force to overwrite")
    return out


def _write_manifest(out, command, inputs, seeds, extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "inputs": {k: str(v) if v is not None else None for k, v in inputs.items()},
        "seeds": seeds,
        "schema_versions": {"checkpoint": SCHEMA_VERSION, "ensemble": ENSEMBLE_FORMAT_VERSION},
    }
    if extra:
        doc.update(extra)
    (Path(out) / "manifest.json").write_text(json.dumps(doc, indent=1))


# --- subcommands -------------------------------------------------------------


def cmd_mcmc(args):
    conf = _load_json(args.config)
    if args.seed is not None:
        conf["seed"] = args.seed
    try:
        cfg = McmcConfig.from_dict(conf)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid mcmc config: {exc}") from None
    out = _prepare_out(args.out, ["ensemble.txt"], args.force)
    ens = run_chain(cfg)
    write_ensemble(out / "ensemble.txt", ens, cfg.params)
    per_cfg = (ens.samples**2).mean(axis=1)
    try:
        tau = autocorrelation_time(per_cfg)
    except ValueError as exc:
        log.warning("autocorrelation time unavailable: %s", exc)
        tau = None
    stats = {
        "moments": moments(ens),
        "moment_errors": moment_errors(ens),
        "tau_int_phi2": tau,
        "acceptance_rate": ens.metadata["acceptance_rate"],
        "proposal_width": ens.metadata["proposal_width"],
        "config": cfg.to_dict(),
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=1))
    write_moments_csv(out / "moments.csv", stats["moments"])
    write_two_point_csv(out / "two_point.csv", two_point(ens))
    write_histogram_csv(out / "field_hist.csv", *field_histogram(ens))
    _write_manifest(out, "mcmc", {"config": args.config}, {"mcmc": cfg.seed})
    print(f"wrote {len(ens)} configurations to {out / 'ensemble.txt'}")
    return EXIT_OK


def cmd_train(args):
    conf = _load_json(args.config)
    for key in ("seed", "epochs", "model_kind", "objective_kind"):
        val = getattr(args, key, None)
        if val is not None:
            conf[key] = val
    if args.reference is not None:
        conf["reference_path"] = args.reference
    try:
        cfg = TrainConfig.from_dict(conf)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from None
    if cfg.reference_path is None or not Path(cfg.reference_path).is_file():
        raise UsageError(f"reference ensemble not found: {cfg.reference_path}")
    out = _prepare_out(args.out, ["checkpoint_final.json", "checkpoint_epoch.json"], args.force)
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    result = train(cfg, out)
    model = result.model
    counts = {
        "total": model.n_params,
        "flow": sum(p.size for p in model.flow_params),
        "quantum_encoder": sum(p.size for p in model.quantum.params) if model.quantum else 0,
    }
    _write_manifest(
        out,
        "train",
        {"config": args.config, "reference": cfg.reference_path},
        {"train": cfg.seed},
        {
            "model_kind": cfg.model_kind,
            "n_layers": model.n_layers,
            "epochs": cfg.epochs,
            "parameter_counts": counts,
            "reference_stats": asdict(result.stats),
        },
    )
    print(f"trained {cfg.model_kind} (K={model.n_layers}, {counts['total']} parameters) for {cfg.epochs} epochs")
    return EXIT_OK


def _load_model(path):
    try:
        return load_checkpoint(path)
    except (OSError, KeyError, json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None


def _dump_pq(path, model, seed, n):
    if model.quantum is None:
        raise UsageError("--dump-pq needs a hybrid checkpoint")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    z = rng.standard_normal((n, model.dim))
    tape = Tape()
    zn = tape.constant(z)
    n_q, _ = split_sizes(model.dim)
    p = run_circuit(model.quantum, ad.take(zn, slice(0, n_q)), ad.take(zn, slice(n_q, model.dim))).value
    rows = ((i, j, p[i, j]) for i in range(p.shape[0]) for j in range(p.shape[1]))
    write_csv(path, ("sample_index", "basis_index", "probability"), rows)


def cmd_sample(args):
    conf = _load_json(args.config)
    n = args.n if args.n is not None else conf.get("n", DEFAULT_EVAL_SAMPLES)
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    checkpoint = args.checkpoint or conf.get("checkpoint")
    if checkpoint is None:
        raise UsageError("sample needs --checkpoint")
    model, doc = _load_model(checkpoint)
    out = _prepare_out(args.out, ["samples.txt"], args.force)
    ens = sample(model, n, seed)
    params = ActionParams(**doc["action_params"]) if doc.get("action_params") else ActionParams()
    write_ensemble(out / "samples.txt", ens, params)
    if args.dump_pq:
        _dump_pq(out / "p_q.csv", model, seed, n)
    _write_manifest(out, "sample", {"checkpoint": checkpoint}, {"sample": seed}, {"n": n})
    print(f"wrote {n} samples to {out / 'samples.txt'}")
    return EXIT_OK


def cmd_eval(args):
    conf = _load_json(args.config)
    ref_path = args.ref or conf.get("ref")
    if ref_path is None:
        raise UsageError("eval needs --ref")
    try:
        ref = read_ensemble(ref_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read reference ensemble: {exc}") from None
    checkpoint = args.checkpoint or conf.get("checkpoint")
    gen_path = args.gen or conf.get("gen")
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    n = args.n if args.n is not None else conf.get("n", DEFAULT_EVAL_SAMPLES)
    bins = args.bins if args.bins is not None else conf.get("bins", 50)
    model = None
    if checkpoint is not None:
        model, _ = _load_model(checkpoint)
    if gen_path is not None:
        gen = read_ensemble(gen_path)
    elif model is not None:
        gen = sample(model, n, seed)
    else:
        raise UsageError("eval needs --gen or --checkpoint")
    params = ref.params or ActionParams()
    out = _prepare_out(args.out, ["report.json"], args.force)
    report = compare_ensembles(ref, gen, params, bins, model)
    report.write(out)
    _write_manifest(
        out, "eval", {"ref": ref_path, "gen": gen_path, "checkpoint": checkpoint}, {"sample": seed}
    )
    print(json.dumps(report.summary(), indent=1))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_all

    conf = _load_json(args.config)
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    results = run_all(seed, corrupt=args.corrupt)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="latticeflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", required=True, help="run directory")
            sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("mcmc", help="generate a reference ensemble")
    common(sp)
    sp.set_defaults(func=cmd_mcmc)

    sp = sub.add_parser("train", help="train a flow against a reference ensemble")
    common(sp)
    sp.add_argument("--reference", help="reference ensemble (overrides reference_path)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--model-kind", dest="model_kind", choices=["hybrid", "classical_baseline"])
    sp.add_argument("--objective", dest="objective_kind", choices=["sample_nll", "reverse_kl"])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="draw configurations from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--n", type=int)
    sp.add_argument("--dump-pq", action="store_true", help="also write circuit probabilities p_q.csv")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="compare a generated ensemble with the reference")
    common(sp)
    sp.add_argument("--ref")
    sp.add_argument("--gen", help="generated ensemble file; sampled from --checkpoint if absent")
    sp.add_argument("--checkpoint")
    sp.add_argument("--n", type=int)
    sp.add_argument("--bins", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    common(sp, out=False)
    sp.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def _thread_cap():
    raw = os.environ.get("LATTICEFLOW_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LATTICEFLOW_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("LATTICEFLOW_THREADS must be >= 1")
    return n


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cap = _thread_cap()
        if cap is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=cap):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"latticeflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLoss, FloatingPointError) as exc:
        print(f"latticeflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
