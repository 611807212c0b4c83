"""Experiment orchestration: single runs, sweeps, seed management, persistence.

A single run walks the whole pipeline: sample scene -> probabilistic sensing
-> quantize reports into messages -> (perfect-communication oracle: hand the
true type to the receiver; otherwise synthesize the uplink and decode) ->
metrics.  Sweeps vary received SNR, the sensing/communication blocklength
split, or quantizer resolution, with per-point records written as JSON lines
and aggregates as CSV.

Seeds: every run gets a 64-bit seed from a splitmix-style mix of
(master seed, sweep point index, run index); all randomness inside a run
derives from documented sub-streams of that run seed (see airlink).
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import airlink, amp_central, amp_dist, metrics, priors, scene as scene_mod
from .config import (
    ConfigError,
    SystemConfig,
    Topology,
    build_topology,
    sigma_w2_for_snr_rx,
)
from .scene import Quantizer, build_quantizer

__all__ = [
    "ExperimentSpec",
    "PointContext",
    "derive_run_seed",
    "prepare_context",
    "run_single",
    "run_sweep",
    "multiplicity_histogram",
    "DECODERS",
]

DECODERS = ("centralized", "distributed", "perfect")

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_run_seed(master_seed: int, point_index: int, run_index: int, stream: int = 0) -> int:
    """Documented 64-bit mix; each (point, run) is independently reproducible."""
    x = master_seed & _MASK64
    for word in (point_index, run_index, stream):
        x = _splitmix64(x ^ _splitmix64(word & _MASK64))
    return x


@dataclass(frozen=True)
class PointContext:
    """Immutable per-sweep-point state shared by all runs at that point."""

    cfg: SystemConfig
    topology: Topology
    quantizer: Quantizer
    prior: priors.MultiplicityPrior | None


def quantizer_bits(cfg: SystemConfig) -> int:
    bits = int(round(math.log2(cfg.M)))
    if 2**bits != cfg.M:
        raise ConfigError(f"M={cfg.M} is not a power of two")
    return bits


def prepare_context(
    cfg: SystemConfig, cache_dir: str | None = None, need_prior: bool = True
) -> PointContext:
    topo = build_topology(cfg)
    quant = build_quantizer(quantizer_bits(cfg), cfg.area_side)
    prior = (
        priors.load_or_build_prior(cfg, topo, quant, cache_dir=cache_dir)
        if need_prior
        else None
    )
    return PointContext(cfg=cfg, topology=topo, quantizer=quant, prior=prior)


def _sense_and_encode(ctx: PointContext, seed: int):
    cfg = ctx.cfg
    sc = scene_mod.sample_scene(cfg, ctx.topology, seed)
    sc = scene_mod.sense_all(sc, cfg, airlink.substream(seed, airlink.STREAM_SCENE, 1))
    round_ = scene_mod.messages_of(sc, ctx.quantizer, cfg.U)
    return sc, round_


def run_single(ctx: PointContext, decoder: str, seed: int) -> dict:
    """One end-to-end run; returns a JSON-serializable record.

    Decode failures and degenerate outcomes are recorded in ``status``
    rather than raised; sensing-side metrics are filled in whenever the
    scene has at least one active sensor.
    """
    if decoder not in DECODERS:
        raise ConfigError(f"unknown decoder {decoder!r}")
    cfg = ctx.cfg
    t0 = time.perf_counter()
    sc, round_ = _sense_and_encode(ctx, seed)
    rec = {
        "seed": seed,
        "decoder": decoder,
        "K_a": round_.K_a,
        "status": "ok",
        "tv": None,
        "w_p": None,
        "p_md": None,
        "T_d": None,
        "gospa": None,
        "decode_iters": None,
    }
    if round_.K_a == 0:
        rec["status"] = "no-active-sensors"
        rec["wall_time_s"] = time.perf_counter() - t0
        return rec

    omega, T_d = metrics.target_type(sc)
    rec["T_d"] = T_d
    rec["p_md"] = metrics.misdetection(T_d, sc.T)
    t_true = round_.true_type

    if decoder == "perfect":
        t_hat = t_true
    else:
        if ctx.prior is None:
            raise ConfigError("decoder runs need a prepared prior (need_prior=True)")
        codebook = airlink.gen_codebook(cfg, seed)
        positions = [
            np.array([pos for _m, pos in round_.per_zone[u]]).reshape(-1, 2)
            for u in range(cfg.U)
        ]
        flat = np.concatenate([p for p in positions if p.size > 0], axis=0)
        h_all = airlink.sample_fading(flat, ctx.topology, cfg, seed)
        fadings, at = {}, 0
        for u in range(cfg.U):
            n_u = positions[u].shape[0]
            fadings[u] = h_all[at : at + n_u]
            at += n_u
        X = airlink.effective_channels(round_, fadings)
        Y = airlink.synthesize_rx(codebook, X, cfg, seed)
        mc = amp_central.build_mc_table(cfg, ctx.topology, seed)
        try:
            if decoder == "centralized":
                result = amp_central.amp_run(Y, codebook, ctx.prior, mc, cfg)
            else:
                result = amp_dist.distributed_decode(Y, codebook, ctx.prior, mc, cfg)
        except amp_central.DecodeError as exc:
            rec["status"] = f"decode-error:{exc.iteration}"
            rec["wall_time_s"] = time.perf_counter() - t0
            return rec
        if result.empty_type:
            rec["status"] = "empty-type"
            rec["wall_time_s"] = time.perf_counter() - t0
            return rec
        t_hat = result.t_hat
        rec["decode_iters"] = cfg.T_AMP

    rec["tv"] = metrics.tv_distance(t_true, t_hat)
    mu = metrics.WeightedPointSet(sc.targets, omega)
    mu_hat = metrics.WeightedPointSet(ctx.quantizer.grid_points, t_hat)
    w_val = metrics.wasserstein_p(mu, mu_hat, cfg.p_order)
    rec["w_p"] = w_val
    rec["gospa"] = metrics.gospa_like(w_val, T_d, sc.T, cfg.c_gospa, cfg.p_order)
    rec["wall_time_s"] = time.perf_counter() - t0
    return rec


@dataclass(frozen=True)
class ExperimentSpec:
    """Sweep description: base config, axis, decoders, runs, seeds, output."""

    base: SystemConfig
    axis: str = "none"                 # none | snr_rx | ns | bits
    values: tuple = ()
    decoders: tuple = ("centralized",)
    runs: int = 1
    master_seed: int = 0
    out_dir: str = "results"
    total_blocklength: int = 2000      # Ns + Nc on blocklength sweeps
    prior_cache: str | None = None

    def __post_init__(self):
        if self.axis not in ("none", "snr_rx", "ns", "bits"):
            raise ConfigError(f"unknown sweep axis {self.axis!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        bad = [d for d in self.decoders if d not in DECODERS]
        if bad:
            raise ConfigError(f"unknown decoders: {bad}")

    def point_values(self) -> tuple:
        return (None,) if self.axis == "none" else tuple(self.values)

    def point_config(self, value) -> SystemConfig:
        cfg = self.base
        if self.axis == "none":
            return cfg
        if self.axis == "snr_rx":
            topo = build_topology(cfg)
            return cfg.with_updates(sigma_w2=sigma_w2_for_snr_rx(cfg, topo, float(value)))
        if self.axis == "ns":
            ns = int(value)
            nc = self.total_blocklength - ns
            if nc < 1:
                raise ConfigError(f"Ns={ns} leaves no communication symbols")
            return cfg.with_updates(Ns=ns, Nc=nc)
        bits = int(value)
        return cfg.with_updates(M=2**bits)


def spec_from_json(path, base: SystemConfig | None = None) -> ExperimentSpec:
    from .config import load_config, preset

    with open(path) as fh:
        raw = json.load(fh)
    if base is None:
        if "preset" in raw:
            base = preset(raw.pop("preset"), **raw.pop("config", {}))
        elif "config_file" in raw:
            base = load_config(raw.pop("config_file"))
        else:
            base = SystemConfig(**raw.pop("config", {}))
    else:
        raw.pop("preset", None)
        raw.pop("config", None)
    known = {"axis", "values", "decoders", "runs", "master_seed", "out_dir", "total_blocklength", "prior_cache"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown sweep-spec keys: {sorted(unknown)}")
    raw["values"] = tuple(raw.get("values", ()))
    raw["decoders"] = tuple(raw.get("decoders", ("centralized",)))
    return ExperimentSpec(base=base, **raw)


def run_sweep(spec: ExperimentSpec, progress=None, workers: int = 1) -> dict:
    """Execute the sweep; returns the aggregate table and writes output files.

    Files: ``runs.jsonl`` (one record per run, timestamps in a separate
    field) and ``summary.csv`` (one row per sweep point per decoder, means
    and standard errors over non-degenerate runs).  ``workers > 1`` runs the
    independent runs of each point concurrently; records are still written
    in deterministic (point, decoder, run) order through the single writer.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    jsonl_path = os.path.join(spec.out_dir, "runs.jsonl")
    csv_path = os.path.join(spec.out_dir, "summary.csv")
    records = []
    try:
        jsonl = open(jsonl_path, "w")
    except OSError as exc:
        raise ConfigError(f"cannot write {jsonl_path}: {exc}") from exc
    with jsonl:
        for p_idx, value in enumerate(spec.point_values()):
            cfg = spec.point_config(value)
            need_prior = any(d != "perfect" for d in spec.decoders)
            ctx = prepare_context(cfg, cache_dir=spec.prior_cache, need_prior=need_prior)
            jobs = [
                (decoder, r_idx, derive_run_seed(spec.master_seed, p_idx, r_idx))
                for decoder in spec.decoders
                for r_idx in range(spec.runs)
            ]
            if workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(
                        pool.map(lambda j: run_single(ctx, j[0], j[2]), jobs)
                    )
            else:
                results = [run_single(ctx, dec, seed) for dec, _r, seed in jobs]
            for (decoder, r_idx, _seed), rec in zip(jobs, results):
                rec.update({"point": value, "point_index": p_idx, "run": r_idx})
                rec["timestamp"] = time.time()
                records.append(rec)
                jsonl.write(json.dumps(rec) + "\n")
                if progress is not None:
                    progress(rec)
    table = aggregate_records(records)
    _write_summary_csv(csv_path, table)
    return {"records": records, "summary": table, "jsonl": jsonl_path, "csv": csv_path}


_METRIC_KEYS = ("tv", "w_p", "p_md", "gospa")


def aggregate_records(records: list[dict]) -> list[dict]:
    """Per (point, decoder) means/standard errors over non-degenerate runs."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec["point_index"], rec["point"], rec["decoder"]), []).append(rec)
    table = []
    for (p_idx, value, decoder), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][2])):
        row = {
            "point_index": p_idx,
            "point": value,
            "decoder": decoder,
            "runs": len(recs),
            "degenerate": sum(1 for r in recs if r["status"] != "ok"),
        }
        for key in _METRIC_KEYS:
            vals = [r[key] for r in recs if r["status"] == "ok" and r[key] is not None]
            row[f"{key}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{key}_se"] = (
                float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else None
            )
        table.append(row)
    return table


def _write_summary_csv(path: str, table: list[dict]) -> None:
    if not table:
        return
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(table[0].keys()))
            writer.writeheader()
            writer.writerows(table)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def multiplicity_histogram(cfg: SystemConfig, runs: int, seed: int) -> dict:
    """Pooled histogram of nonzero per-(zone, message) multiplicities.

    Also reports the fraction of transmissions whose codeword was sent by
    more than one sensor (the collision fraction).
    """
    ctx = prepare_context(cfg, need_prior=False)
    counts: dict[int, int] = {}
    collided = 0
    total = 0
    for r_idx in range(runs):
        run_seed = derive_run_seed(seed, 0, r_idx)
        _sc, round_ = _sense_and_encode(ctx, run_seed)
        k = round_.multiplicities
        nz = k[k > 0]
        for val in nz:
            counts[int(val)] = counts.get(int(val), 0) + 1
        collided += int(nz[nz >= 2].sum())
        total += int(nz.sum())
    n_all = sum(counts.values())
    kmax = max(counts) if counts else 0
    hist = np.zeros(kmax + 1)
    for k_val, c in counts.items():
        hist[k_val] = c / n_all
    return {
        "hist": hist,                       # hist[k] = P(multiplicity == k | nonzero)
        "collision_fraction": collided / total if total else 0.0,
        "pooled_codewords": n_all,
        "runs": runs,
    }
