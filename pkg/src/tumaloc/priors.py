"""Sensing-driven prior on per-zone message multiplicities.

The chain: a sensor is active iff it detects at least one target; actives
split uniformly across zones; an active sensor in zone u picks message m
with a probability obtained by integrating detection-and-closest events
over the quantizer cell of m.  Marginalizing the binomial chain gives
``p(k_{u,m} = k)``.

The two spatial integrals (activation, message selection) have no closed
form and are estimated once per configuration by Monte Carlo, then cached
to a JSON file keyed by a hash of the sensing-relevant config fields.
Because targets are i.i.d. uniform, the T-dimensional integrals factorize
exactly into powers of 2-D integrals; only those 2-D integrals are sampled.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .airlink import STREAM_PRIORS, substream
from .config import SystemConfig, Topology
from .scene import Quantizer, detection_prob_array, quantize_array
from .specfun import binom_logpmf

__all__ = [
    "MultiplicityPrior",
    "compute_p_active",
    "compute_p_closest",
    "compute_msg_probs",
    "build_prior",
    "multiplicity_pmf_full",
    "prior_cache_key",
    "load_or_build_prior",
]

DEFAULT_N_ACTIVE = 20_000
DEFAULT_N_CELL = 2_000


@dataclass(frozen=True)
class MultiplicityPrior:
    """Per-(zone, message) pmf over multiplicities k = 0..K_max.

    ``pmf`` is the untruncated distribution cut at ``K_max`` without
    renormalization; the decoder's Bayes ratio self-normalizes.
    """

    pmf: np.ndarray            # (U, M, K_max + 1)
    p_active: float
    msg_probs: np.ndarray      # (U, M) conditional message probabilities
    K_max: int
    n_active_samples: int
    n_cell_samples: int

    @property
    def log_pmf(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pmf)


def compute_p_active(
    cfg: SystemConfig, topology: Topology, n_int: int = DEFAULT_N_ACTIVE, seed: int | None = None
) -> float:
    """Average sensor activation probability.

    ``p_active(s) = 1 - I(s)^T`` with ``I(s)`` the mean single-target miss
    probability at sensor position s; both integrals by MC over uniform
    samples.  The i.i.d.-target factorization replaces the T-dimensional
    integral exactly.
    """
    if n_int < 1:
        raise ValueError("n_int must be positive")
    rng = substream(cfg.master_seed if seed is None else seed, STREAM_PRIORS, 0)
    side = cfg.area_side
    # Outer MC over sensor positions; the inner single-target miss integral
    # I(s) uses a fresh target cloud per chunk of sensor samples.
    n_inner = min(2000, max(200, n_int // 10))
    chunk = max(1, int(4e6) // n_inner)
    acc = 0.0
    done = 0
    while done < n_int:
        n_s = min(chunk, n_int - done)
        sensors = rng.uniform(0, side, size=(n_s, 2))
        targets = rng.uniform(0, side, size=(n_inner, 2))
        pd = detection_prob_array(sensors, targets, cfg)
        miss = 1.0 - pd.mean(axis=1)        # I(s) per sensor sample
        acc += float(np.sum(1.0 - miss**cfg.T_targets))
        done += n_s
    return acc / n_int


def compute_p_closest(
    s, p, cfg: SystemConfig, n_int: int = DEFAULT_N_CELL, seed: int | None = None
) -> float:
    """Probability that target ``p`` is the closest detected one for sensor ``s``.

    ``J(s, p)^(T-1)`` with ``J`` the single-competitor MC integral; the
    strict-inequality indicator makes the coincident case return 1.
    """
    rng = substream(cfg.master_seed if seed is None else seed, STREAM_PRIORS, 1)
    s = np.asarray(s, dtype=float)
    p = np.asarray(p, dtype=float)
    if cfg.T_targets <= 1:
        return 1.0
    others = rng.uniform(0, cfg.area_side, size=(n_int, 2))
    pd = detection_prob_array(s[None, :], others, cfg)[0]
    closer = ((others - s) ** 2).sum(axis=1) < ((p - s) ** 2).sum()
    J = float(np.mean(1.0 - pd * closer))
    return J ** (cfg.T_targets - 1)


def compute_msg_probs(
    cfg: SystemConfig,
    topology: Topology,
    quantizer: Quantizer,
    n_int: int = DEFAULT_N_CELL,
    seed: int | None = None,
) -> np.ndarray:
    """Conditional message probabilities p(m | active sensor in zone u), shape (U, M).

    Raw cell masses are MC estimates of the detect-and-closest integral over
    (sensor in zone, target in cell); they are normalized per zone so the
    binomial message-selection model is a proper distribution.

    Sampling is pooled: each sensor draw is paired with a shared cloud of
    target samples that serves simultaneously as the message-cell candidates
    and, radially sorted, as the closest-competitor integral, so every cell
    receives ``n_int`` effective samples at far lower cost than independent
    per-cell integration.
    """
    rng = substream(cfg.master_seed if seed is None else seed, STREAM_PRIORS, 2)
    U, M = topology.U, quantizer.M
    # the outer sensor average dominates the variance: spend ~n_int/8 draws
    # on it, and size each draw's target cloud so every cell still sees at
    # least n_int effective samples in total
    n_sensors = max(64, n_int // 8)
    n_targets = max(4096, 4 * M, int(np.ceil(n_int * M / n_sensors)))
    raw = np.zeros((U, M))
    Tm1 = cfg.T_targets - 1
    for u in range(U):
        x0, y0, x1, y1 = topology.zone_rects[u]
        svals = np.stack(
            [rng.uniform(x0, x1, n_sensors), rng.uniform(y0, y1, n_sensors)], axis=1
        )
        for s in svals:
            cloud = rng.uniform(0, cfg.area_side, size=(n_targets, 2))
            pd = detection_prob_array(s[None, :], cloud, cfg)[0]
            d2 = ((cloud - s) ** 2).sum(axis=1)
            order = np.argsort(d2)
            # J at the radius of each sample: competitors strictly closer
            csum = np.concatenate([[0.0], np.cumsum(pd[order])])
            J = 1.0 - csum[:-1] / n_targets
            p_closest = J**Tm1 if Tm1 > 0 else np.ones(n_targets)
            weights = pd[order] * p_closest
            cells = quantize_array(quantizer, cloud[order])
            raw[u] += np.bincount(cells, weights=weights, minlength=M) / n_targets
        raw[u] /= n_sensors
    totals = raw.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("message-probability integration produced an all-zero zone")
    return raw / totals


def multiplicity_pmf_full(K: int, U: int, p_active: float, msg_prob: np.ndarray) -> np.ndarray:
    """Exact binomial-chain pmf over k = 0..K for each entry of ``msg_prob``.

    ``p(k) = sum_{Ka} sum_{Kau} Bin(k; Kau, pm) Bin(Kau; Ka, 1/U)
    Bin(Ka; K, p_active)``, evaluated with log-domain binomials.  Returns an
    array of shape ``msg_prob.shape + (K + 1,)``.
    """
    ks = np.arange(K + 1)
    # inner marginal over Ka is (u, m)-independent: w[Kau]
    log_b_ka = binom_logpmf(ks, K, p_active)                          # over Ka
    log_b_kau = binom_logpmf(ks[:, None], ks[None, :], 1.0 / U)       # (Kau, Ka)
    w = np.exp(log_b_kau) @ np.exp(log_b_ka)                          # (Kau,)

    # Bin(k; Kau, pm) over the (k, Kau) grid, with the log-choose table
    # shared across all (u, m) entries.
    lchoose = np.where(
        ks[None, :] >= ks[:, None],
        gammaln(ks[None, :] + 1) - gammaln(ks[:, None] + 1) - gammaln(ks[None, :] - ks[:, None] + 1),
        -np.inf,
    )  # (k, Kau)
    pm = np.asarray(msg_prob, dtype=float).reshape(-1)
    out = np.empty((pm.size, K + 1))
    kk = ks[:, None].astype(float)
    dk = np.maximum(ks[None, :] - ks[:, None], 0).astype(float)
    for i, p in enumerate(pm):
        log_b_k = lchoose + xlogy(kk, p) + xlog1py(dk, -p)            # (k, Kau)
        out[i] = np.exp(log_b_k) @ w
    return out.reshape(np.shape(msg_prob) + (K + 1,))


def build_prior(
    cfg: SystemConfig,
    p_active: float,
    msg_probs: np.ndarray,
    n_active_samples: int = DEFAULT_N_ACTIVE,
    n_cell_samples: int = DEFAULT_N_CELL,
) -> MultiplicityPrior:
    """Assemble the truncated multiplicity prior from the integral tables."""
    full = multiplicity_pmf_full(cfg.K, cfg.U, p_active, msg_probs)
    sums = full.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-10):
        raise AssertionError("untruncated prior does not sum to 1")
    return MultiplicityPrior(
        pmf=full[..., : cfg.K_max + 1].copy(),
        p_active=float(p_active),
        msg_probs=np.asarray(msg_probs, dtype=float),
        K_max=cfg.K_max,
        n_active_samples=n_active_samples,
        n_cell_samples=n_cell_samples,
    )


def auto_k_max(cfg: SystemConfig, p_active: float, msg_probs: np.ndarray, tail: float = 1e-4) -> int:
    """Smallest k* whose cumulative untruncated prior reaches 1 - tail everywhere."""
    full = multiplicity_pmf_full(cfg.K, cfg.U, p_active, msg_probs)
    cum = np.cumsum(full, axis=-1)
    needed = np.argmax(cum >= 1.0 - tail, axis=-1)
    return int(needed.max())


_SENSING_FIELDS = (
    "area_side",
    "zone_grid",
    "K",
    "T_targets",
    "Ns",
    "M",
    "K_max",
    "S_rcs",
    "f_c",
    "P_n",
    "P_s",
    "gamma_threshold",
)

CACHE_VERSION = 1


def prior_cache_key(cfg: SystemConfig, n_active: int, n_cell: int, seed: int) -> str:
    blob = json.dumps(
        {f: getattr(cfg, f) for f in _SENSING_FIELDS}
        | {"n_active": n_active, "n_cell": n_cell, "seed": seed, "v": CACHE_VERSION},
        sort_keys=True,
        default=list,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_or_build_prior(
    cfg: SystemConfig,
    topology: Topology,
    quantizer: Quantizer,
    cache_dir: str | None = None,
    n_active: int = DEFAULT_N_ACTIVE,
    n_cell: int = DEFAULT_N_CELL,
    seed: int | None = None,
) -> MultiplicityPrior:
    """Build the prior, reusing the cache file when the config hash matches."""
    seed = cfg.master_seed if seed is None else seed
    key = prior_cache_key(cfg, n_active, n_cell, seed)
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"prior_{key}.json")
        if os.path.exists(path):
            with open(path) as fh:
                doc = json.load(fh)
            if doc.get("key") == key:
                return MultiplicityPrior(
                    pmf=np.array(doc["pmf"]),
                    p_active=doc["p_active"],
                    msg_probs=np.array(doc["msg_probs"]),
                    K_max=doc["K_max"],
                    n_active_samples=doc["n_active"],
                    n_cell_samples=doc["n_cell"],
                )
    p_active = compute_p_active(cfg, topology, n_active, seed)
    msg_probs = compute_msg_probs(cfg, topology, quantizer, n_cell, seed)
    prior = build_prior(cfg, p_active, msg_probs, n_active, n_cell)
    if path is not None:
        doc = {
            "key": key,
            "p_active": prior.p_active,
            "msg_probs": prior.msg_probs.tolist(),
            "pmf": prior.pmf.tolist(),
            "K_max": prior.K_max,
            "n_active": n_active,
            "n_cell": n_cell,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
    return prior
