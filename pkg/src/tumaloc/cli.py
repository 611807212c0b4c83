"""Command-line interface.

Subcommands: ``run`` (single point), ``sweep`` (spec file), ``priors``
(build/cache priors), ``hist`` (multiplicity histogram), ``validate``
(quick oracle/property checks).  Exit code 0 on success, nonzero on
configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .config import ConfigError, SystemConfig, load_config, preset


def _base_config(args) -> SystemConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_updates(master_seed=args.seed)
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (unknown keys rejected)")
    p.add_argument("--preset", default="desk", choices=["desk", "paper"])
    p.add_argument("--seed", type=int, default=None, help="master seed")


def cmd_run(args) -> int:
    cfg = _base_config(args)
    ctx = harness.prepare_context(
        cfg, cache_dir=args.cache, need_prior=args.decoder != "perfect"
    )
    recs = []
    for r_idx in range(args.runs):
        seed = harness.derive_run_seed(cfg.master_seed, 0, r_idx)
        rec = harness.run_single(ctx, args.decoder, seed)
        rec["run"] = r_idx
        recs.append(rec)
    out = "\n".join(json.dumps(rec) for rec in recs)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    print(out)
    if args.runs > 1:
        ok = [r for r in recs if r["status"] == "ok"]
        summary = {
            "runs": args.runs,
            "degenerate": args.runs - len(ok),
            "tv_mean": float(np.mean([r["tv"] for r in ok])) if ok else None,
            "gospa_mean": float(np.mean([r["gospa"] for r in ok])) if ok else None,
        }
        print(json.dumps(summary), file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    spec = harness.spec_from_json(args.spec)
    if args.out:
        spec = harness.ExperimentSpec(**{**spec.__dict__, "out_dir": args.out})
    res = harness.run_sweep(
        spec, progress=_progress if args.verbose else None, workers=args.workers
    )
    print(f"wrote {res['jsonl']} and {res['csv']}")
    return 0


def _progress(rec: dict) -> None:
    print(
        f"point={rec['point']} decoder={rec['decoder']} run={rec['run']} "
        f"status={rec['status']} tv={rec['tv']}",
        file=sys.stderr,
    )


def cmd_priors(args) -> int:
    cfg = _base_config(args)
    ctx = harness.prepare_context(cfg, cache_dir=args.cache or "prior_cache")
    print(
        json.dumps(
            {
                "p_active": ctx.prior.p_active,
                "K_max": ctx.prior.K_max,
                "zones": ctx.prior.msg_probs.shape[0],
                "messages": ctx.prior.msg_probs.shape[1],
            },
            indent=2,
        )
    )
    return 0


def cmd_hist(args) -> int:
    cfg = _base_config(args)
    res = harness.multiplicity_histogram(cfg, args.runs, cfg.master_seed)
    doc = {
        "hist": res["hist"].tolist(),
        "collision_fraction": res["collision_fraction"],
        "pooled_codewords": res["pooled_codewords"],
    }
    out = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    print(out)
    return 0


def cmd_validate(args) -> int:
    failures = 0
    for name, fn in _VALIDATIONS:
        try:
            fn()
            print(f"PASS {name}")
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
    return 1 if failures else 0


def _check_marcum() -> None:
    from scipy import integrate

    from .specfun import marcum_q1

    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b = rng.uniform(0, 6, size=2)
        val, _err = integrate.quad(
            lambda x: x * np.exp(-(x * x + a * a) / 2) * np.i0(a * x), b, max(b + 40, 60),
            limit=200,
        )
        assert abs(marcum_q1(a, b) - val) < 1e-8, f"Q1({a},{b})"


def _check_wasserstein() -> None:
    from .metrics import WeightedPointSet, wasserstein_p

    a = WeightedPointSet(np.array([[0.0, 0.0]]), np.array([1.0]))
    b = WeightedPointSet(np.array([[3.0, 4.0]]), np.array([1.0]))
    assert abs(wasserstein_p(a, b, 2.0) - 5.0) < 1e-12


def _check_decoder_smoke() -> None:
    from . import airlink, amp_central
    from .config import build_topology, desk_preset
    from .priors import build_prior

    cfg = desk_preset(M=8, K=10, T_targets=4, N_MC=30, K_max=3, Nc=120, T_AMP=4)
    topo = build_topology(cfg)
    prior = build_prior(cfg, 0.4, np.full((cfg.U, cfg.M), 1.0 / cfg.M))
    mc = amp_central.build_mc_table(cfg, topo, 1)
    codebook = airlink.gen_codebook(cfg, 1)
    Y = airlink.synthesize_rx(
        codebook,
        airlink.EffectiveChannelSet(X=np.zeros((cfg.U, cfg.M, cfg.F), dtype=complex)),
        cfg,
        1,
    )
    res = amp_central.amp_run(Y, codebook, prior, mc, cfg)
    assert res.posteriors.shape == (cfg.U, cfg.M, cfg.K_max + 1)


_VALIDATIONS = [
    ("marcum-q vs quadrature", _check_marcum),
    ("wasserstein single-atom", _check_wasserstein),
    ("decoder smoke", _check_decoder_smoke),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tumaloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="end-to-end runs at a single configuration")
    _add_config_flags(p_run)
    p_run.add_argument("--decoder", default="centralized", choices=harness.DECODERS)
    p_run.add_argument("--runs", type=int, default=1)
    p_run.add_argument("--out", help="write the records to this file (JSON lines)")
    p_run.add_argument("--cache", help="prior cache directory")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a sweep described by a JSON spec file")
    p_sweep.add_argument("--spec", required=True)
    p_sweep.add_argument("--out", help="override the spec's output directory")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--verbose", action="store_true")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_priors = sub.add_parser("priors", help="build and cache the multiplicity prior")
    _add_config_flags(p_priors)
    p_priors.add_argument("--cache", help="prior cache directory (default prior_cache)")
    p_priors.set_defaults(fn=cmd_priors)

    p_hist = sub.add_parser("hist", help="empirical nonzero-multiplicity histogram")
    _add_config_flags(p_hist)
    p_hist.add_argument("--runs", type=int, default=100)
    p_hist.add_argument("--out")
    p_hist.set_defaults(fn=cmd_hist)

    p_val = sub.add_parser("validate", help="quick oracle/property checks")
    p_val.set_defaults(fn=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
