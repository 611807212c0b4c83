"""Centralized multisource AMP decoder.

Iterates a linear residual update, a multiplicity-aware posterior-mean
denoiser evaluated by Monte-Carlo integration over unknown user positions,
and an Onsager correction consistent with that denoiser.  After the last
iteration, per-codeword multiplicity posteriors give MAP multiplicities and
the estimated type.

Everything exploits that all covariances are diagonal with per-AP-constant
blocks: likelihoods need only per-AP energies of the effective observation
(O(F) per hypothesis), and the denoiser acts as a per-AP scalar shrinkage

    eta(r)_f = H_{b(f)}(r) * r_f,
    H_b(r)   = sum_k post(k | r) * sum_i w_i(k) * c_{b,i,k},
    c_{b,i,k} = sqrt(Ec) g_{b,i,k} / (tau_b + Ec g_{b,i,k}),

with w_i(k) the self-normalized sample likelihood weights and g the
precomputed per-sample aggregate LSFC sums.  The Wirtinger Jacobian of this
map reduces algebraically (using 1/v = (1 - sqrt(Ec) c) / tau) to

    d eta_f / d r_a = delta(a,f) H_{b(f)}
        - r_f conj(r_a) sqrt(Ec) (H_{b(f)} H_{b(a)} - M_{b(f),b(a)}) / tau_{b(a)},

where M is the posterior second moment of the shrinkage factors across AP
pairs.  The finite-difference oracle in the test suite pins this identity.

Monte-Carlo position samples are drawn once per (zone, multiplicity) and
shared across all messages, iterations and the Onsager computation, so the
analytic Jacobian is exactly the Jacobian of the implemented denoiser.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .airlink import STREAM_MC, Codebook, substream
from .config import SystemConfig, Topology, lsfc_vector
from .priors import MultiplicityPrior
from .specfun import log_cgauss_diag

__all__ = [
    "McTable",
    "AmpState",
    "DecodeResult",
    "DecodeError",
    "TAU_FLOOR",
    "build_mc_table",
    "residual_covariance",
    "hypothesis_loglik",
    "denoise_row",
    "denoise_rows",
    "onsager",
    "amp_run",
    "estimate_multiplicities",
    "estimate_type",
]

TAU_FLOOR = 1e-15


class DecodeError(RuntimeError):
    """AMP produced non-finite iterates; carries the failing iteration."""

    def __init__(self, iteration: int, message: str = ""):
        super().__init__(message or f"non-finite AMP iterate at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class McTable:
    """Per-zone aggregate-LSFC samples.

    ``g[u][k-1, i, b] = sum_{j<=k} gamma_b(rho^i_j)`` for positions drawn
    i.i.d. uniform on zone u; the position streams are shared across
    multiplicities (cumulative sums), deterministic under the seed.
    """

    g: tuple
    seed: int

    def zone(self, u: int) -> np.ndarray:
        return self.g[u]


def build_mc_table(cfg: SystemConfig, topology: Topology, seed: int | None = None) -> McTable:
    seed = cfg.master_seed if seed is None else seed
    tables = []
    for u in range(topology.U):
        rng = substream(seed, STREAM_MC, u)
        x0, y0, x1, y1 = topology.zone_rects[u]
        pos = np.stack(
            [
                rng.uniform(x0, x1, size=(cfg.N_MC, cfg.K_max)),
                rng.uniform(y0, y1, size=(cfg.N_MC, cfg.K_max)),
            ],
            axis=-1,
        )
        gam = lsfc_vector(pos.reshape(-1, 2), topology, cfg).reshape(
            cfg.N_MC, cfg.K_max, topology.B
        )
        tables.append(np.cumsum(gam, axis=1).transpose(1, 0, 2).copy())  # (K_max, N_MC, B)
    return McTable(g=tuple(tables), seed=seed)


@dataclass
class AmpState:
    """Mutable iteration state of one decode."""

    X: np.ndarray                  # (U, M, F) current effective-channel estimate
    Z: np.ndarray                  # (Nc, F) residual
    tau: np.ndarray                # (B,) per-AP effective noise variances
    iteration: int = 0
    alpha: float = 0.0             # aspect ratio M / Nc
    posteriors: np.ndarray | None = None   # (U, M, K_max + 1)


@dataclass
class DecodeResult:
    k_per_zone: np.ndarray         # (U, M) MAP multiplicities
    k_global: np.ndarray           # (M,)
    t_hat: np.ndarray              # (M,) estimated type; zeros when empty
    empty_type: bool
    posteriors: np.ndarray         # (U, M, K_max + 1)
    diagnostics: dict = field(default_factory=dict)


def residual_covariance(Z: np.ndarray, antennas_per_ap: int) -> np.ndarray:
    """Per-AP effective noise variance from the residual (antenna-averaged).

    ``tau_b = (1 / (A Nc)) sum_a Re[Z^H Z]_{(b,a),(b,a)}``, clamped below.
    """
    Nc = Z.shape[0]
    diag = (np.abs(Z) ** 2).sum(axis=0).real / Nc      # (F,)
    tau = diag.reshape(-1, antennas_per_ap).mean(axis=1)
    return np.maximum(tau, TAU_FLOOR)


def hypothesis_loglik(r: np.ndarray, tau: np.ndarray, g: np.ndarray, Ec: float, A: int) -> float:
    """Log likelihood of one effective observation under fixed user positions.

    ``g`` is the length-B aggregate LSFC of the hypothesized positions
    (all-zero for the empty hypothesis); the covariance is
    ``tau_b + Ec g_b`` per AP.
    """
    v = np.asarray(tau, dtype=float) + Ec * np.asarray(g, dtype=float)
    return log_cgauss_diag(r, v, A)


@dataclass
class ZoneDenoiseResult:
    """Cached per-zone denoiser output shared with the Onsager computation."""

    x_hat: np.ndarray              # (M, F)
    posterior: np.ndarray          # (M, K_max + 1)
    log_mc_lik: np.ndarray         # (M, K_max + 1): log (1/N) sum_i p(r | rho^i_{1:k})
    sample_weights: np.ndarray     # (M, K_max, N) self-normalized
    shrink: np.ndarray             # (K_max, N, B) per-sample shrinkage factors
    shrink_mean: np.ndarray        # (M, K_max, B) posterior-sample mean per k
    H: np.ndarray                  # (M, B) total shrinkage per AP
    degenerate: np.ndarray         # (M,) bool: prior-only fallback rows


def denoise_rows(
    R: np.ndarray,
    tau: np.ndarray,
    g: np.ndarray,
    log_prior: np.ndarray,
    Ec: float,
    A: int,
) -> ZoneDenoiseResult:
    """Vectorized PME denoiser for all M rows of one zone.

    ``R``: (M, F) effective observations; ``tau``: (B,) per-AP variances;
    ``g``: (K_max, N, B) MC aggregate-LSFC table; ``log_prior``: (M, K_max+1).

    The multiplicity posterior uses the MC average of the position
    likelihood per hypothesis (the empty hypothesis has a single
    deterministic term); the conditional means are self-normalized
    importance averages of per-AP linear shrinkages of ``r``.
    """
    M, F = R.shape
    K, N, B = g.shape
    tau = np.maximum(np.asarray(tau, dtype=float), TAU_FLOOR)

    energy = (np.abs(R) ** 2).reshape(M, B, A).sum(axis=2)          # (M, B)
    v = tau[None, None, :] + Ec * g                                  # (K, N, B)
    inv_v = 1.0 / v
    logdet = A * np.log(np.pi * v).sum(axis=2)                       # (K, N)
    ll = -(energy @ inv_v.reshape(K * N, B).T).reshape(M, K, N) - logdet[None, :, :]
    ll0 = -(energy @ (1.0 / tau)) - A * np.log(np.pi * tau).sum()    # (M,)

    mx = ll.max(axis=2)                                              # (M, K)
    w_un = np.exp(ll - mx[..., None])
    w_sum = w_un.sum(axis=2)
    log_mc = np.empty((M, K + 1))
    log_mc[:, 0] = ll0
    log_mc[:, 1:] = mx + np.log(w_sum / N)
    W = w_un / w_sum[..., None]                                      # (M, K, N)

    log_post_un = log_prior + log_mc
    post_mx = log_post_un.max(axis=1)
    degenerate = ~np.isfinite(post_mx)
    safe_mx = np.where(degenerate, 0.0, post_mx)
    post_un = np.exp(log_post_un - safe_mx[:, None])
    post = post_un / post_un.sum(axis=1, keepdims=True)
    if degenerate.any():
        # all hypotheses at -inf: fall back to the prior, estimate zero
        prior_lin = np.exp(log_prior[degenerate])
        post[degenerate] = prior_lin / prior_lin.sum(axis=1, keepdims=True)
        W[degenerate] = 1.0 / N

    shrink = np.sqrt(Ec) * g * inv_v                                 # (K, N, B)
    shrink_mean = np.einsum("mki,kib->mkb", W, shrink)               # (M, K, B)
    H = np.einsum("mk,mkb->mb", post[:, 1:], shrink_mean)            # (M, B)
    if degenerate.any():
        H[degenerate] = 0.0
    x_hat = R * np.repeat(H, A, axis=1)
    return ZoneDenoiseResult(
        x_hat=x_hat,
        posterior=post,
        log_mc_lik=log_mc,
        sample_weights=W,
        shrink=shrink,
        shrink_mean=shrink_mean,
        H=H,
        degenerate=degenerate,
    )


def denoise_row(r, tau, g, log_prior_row, Ec: float, A: int):
    """Single-row denoiser: returns (x_hat, posterior over k, cached data)."""
    res = denoise_rows(np.atleast_2d(r), tau, g, np.atleast_2d(log_prior_row), Ec, A)
    return res.x_hat[0], res.posterior[0], res


def onsager(R: np.ndarray, den: ZoneDenoiseResult, tau: np.ndarray, Ec: float, A: int) -> np.ndarray:
    """Average Wirtinger Jacobian of the denoiser over the zone's rows.

    Reuses the denoiser's cached per-sample weights, so the result is the
    exact Jacobian of the implemented (sample-fixed) estimator.
    """
    M, F = R.shape
    K, N, B = den.shrink.shape
    tau = np.maximum(np.asarray(tau, dtype=float), TAU_FLOOR)

    # posterior second moment of shrinkage over AP pairs: (M, B, B)
    omega = (den.posterior[:, 1:, None] * den.sample_weights).reshape(M, K * N)
    cfl = den.shrink.reshape(K * N, B)
    cpair = (cfl[:, :, None] * cfl[:, None, :]).reshape(K * N, B * B)
    M2 = (omega @ cpair).reshape(M, B, B)

    H = den.H
    psi = np.sqrt(Ec) * (H[:, :, None] * H[:, None, :] - M2) / tau[None, None, :]
    # psi[m, b_out, b_in]; J[a, f] = delta H - r_f conj(r_a) psi[b(f), b(a)]
    Rr = R.reshape(M, B, A)
    Q2 = np.einsum("max,mby,mba->axby", np.conj(Rr), Rr, psi).reshape(F, F)
    Q = np.diag(np.repeat(H.mean(axis=0), A)).astype(complex)
    Q -= Q2 / M
    return Q


def amp_run(
    Y: np.ndarray,
    codebook: Codebook,
    prior: MultiplicityPrior,
    mc: McTable,
    cfg: SystemConfig,
    X_true: np.ndarray | None = None,
    keep_effective_observations: bool = False,
    diag_stream=None,
) -> DecodeResult:
    """Full centralized decode: AMP iterations, then MAP type estimation.

    ``X_true`` (U, M, F), when given, adds a per-iteration channel
    estimation error trace to the diagnostics;
    ``keep_effective_observations`` stores the final-iteration per-zone
    effective observations (for validation against brute-force posteriors);
    ``diag_stream`` receives one JSON line per iteration.
    """
    Nc, F = Y.shape
    U, M = cfg.U, cfg.M
    A = cfg.A
    sqrt_ec = np.sqrt(cfg.Ec)
    log_prior = prior.log_pmf

    state = AmpState(
        X=np.zeros((U, M, F), dtype=complex),
        Z=Y.copy(),
        tau=np.full(cfg.B, TAU_FLOOR),
        alpha=M / Nc,
    )
    posts = np.zeros((U, M, cfg.K_max + 1))
    tau_trace = []
    err_trace = []
    tau_gap_trace = []
    final_R = [None] * U
    degenerate_rows = 0

    for t in range(1, cfg.T_AMP + 1):
        state.iteration = t
        state.tau = residual_covariance(state.Z, A)
        tau_trace.append(state.tau.copy())
        Gamma = np.zeros_like(state.Z)
        for u in range(U):
            Cu = codebook.block(u)
            R_u = Cu.conj().T @ state.Z + sqrt_ec * state.X[u]
            if not np.all(np.isfinite(R_u.view(float))):
                raise DecodeError(t)
            den = denoise_rows(R_u, state.tau, mc.zone(u), log_prior[u], cfg.Ec, A)
            degenerate_rows += int(den.degenerate.sum())
            state.X[u] = den.x_hat
            posts[u] = den.posterior
            Q_u = onsager(R_u, den, state.tau, cfg.Ec, A)
            Gamma += Cu @ state.X[u] - (M / Nc) * (state.Z @ Q_u)
            if keep_effective_observations and t == cfg.T_AMP:
                final_R[u] = R_u
        state.Z = Y - sqrt_ec * Gamma
        if not np.all(np.isfinite(state.Z.view(float))):
            raise DecodeError(t)
        if X_true is not None:
            err_trace.append(channel_estimation_error(state.X, X_true, cfg))
            tau_next = residual_covariance(state.Z, A)
            tau_gap_trace.append(float(np.sum(A * (tau_next - cfg.sigma_w2))))
        if diag_stream is not None:
            line = {"t": t, "tau": state.tau.tolist()}
            if err_trace:
                line["channel_error"] = err_trace[-1]
            diag_stream.write(json.dumps(line) + "\n")

    state.posteriors = posts
    k_per_zone = estimate_multiplicities(posts)
    t_hat, empty = estimate_type(k_per_zone)
    diagnostics = {
        "tau_trace": np.array(tau_trace),
        "degenerate_rows": degenerate_rows,
        "alpha": M / Nc,
    }
    if X_true is not None:
        diagnostics["channel_error_trace"] = np.array(err_trace)
        diagnostics["tau_gap_trace"] = np.array(tau_gap_trace)
    if keep_effective_observations:
        diagnostics["final_R"] = final_R
        diagnostics["final_tau"] = tau_trace[-1]
    return DecodeResult(
        k_per_zone=k_per_zone,
        k_global=k_per_zone.sum(axis=0),
        t_hat=t_hat,
        empty_type=empty,
        posteriors=posts,
        diagnostics=diagnostics,
    )


def channel_estimation_error(X: np.ndarray, X_true: np.ndarray, cfg: SystemConfig) -> float:
    """Energy-normalized squared estimation error ``(Ec / Nc) sum_u ||X_u - X_u^true||_F^2``.

    The 1/Nc factor puts the error on the same scale as the residual-based
    variance gap ``sum_b A (tau_b - sigma_w^2)`` it is compared against.
    """
    diff = X - X_true
    return float(cfg.Ec / cfg.Nc * np.sum(np.abs(diff) ** 2))


def estimate_multiplicities(posteriors: np.ndarray) -> np.ndarray:
    """MAP multiplicity per (zone, message); ties break toward smaller k."""
    return np.argmax(posteriors, axis=-1)


def estimate_type(k_per_zone: np.ndarray) -> tuple[np.ndarray, bool]:
    """Global multiplicities normalized to the type; all-zero yields the empty sentinel."""
    k = np.asarray(k_per_zone).sum(axis=0).astype(float)
    total = k.sum()
    if total <= 0:
        return np.zeros_like(k), True
    return k / total, False
