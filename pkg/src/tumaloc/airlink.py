"""Codebook generation, channel realization and received-signal synthesis.

The forward model: each active user in zone ``u`` transmits the unit-norm
codeword of its message, scaled by ``sqrt(Ec)``, through an i.i.d. Rayleigh
channel whose per-AP variance is the position-specific LSFC.  Colliding
users superimpose into per-(zone, message) effective channel rows.

Randomness is organized in documented sub-streams of the master seed so
ablations can vary one source at a time:

====================  ==========
stream                id
====================  ==========
codebook              0
fading                1
noise                 2
scene                 3
mc-samples            4
prior-integration     5
====================  ==========
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, Topology, lsfc_vector

__all__ = [
    "STREAM_CODEBOOK",
    "STREAM_FADING",
    "STREAM_NOISE",
    "STREAM_SCENE",
    "STREAM_MC",
    "STREAM_PRIORS",
    "substream",
    "Codebook",
    "TransmissionRound",
    "EffectiveChannelSet",
    "gen_codebook",
    "sample_fading",
    "effective_channels",
    "synthesize_rx",
    "dump_complex_matrix",
    "load_complex_matrix",
]

STREAM_CODEBOOK = 0
STREAM_FADING = 1
STREAM_NOISE = 2
STREAM_SCENE = 3
STREAM_MC = 4
STREAM_PRIORS = 5


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for sub-stream ``key`` of ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class Codebook:
    """Unit-norm codeword matrix, partitioned into U blocks of M columns."""

    entries: np.ndarray   # (Nc, U*M) complex
    U: int
    M: int
    seed: int

    def block(self, u: int) -> np.ndarray:
        """Codewords of zone ``u``: an (Nc, M) view."""
        return self.entries[:, u * self.M : (u + 1) * self.M]


@dataclass(frozen=True)
class TransmissionRound:
    """Per-zone (message, user position) lists with derived multiplicities."""

    per_zone: tuple          # per zone: list of (message m, position (2,))
    U: int
    M: int

    @property
    def multiplicities(self) -> np.ndarray:
        """Per-zone multiplicity vectors, shape (U, M)."""
        k = np.zeros((self.U, self.M), dtype=int)
        for u, entries in enumerate(self.per_zone):
            for m, _pos in entries:
                k[u, m] += 1
        return k

    @property
    def global_multiplicities(self) -> np.ndarray:
        return self.multiplicities.sum(axis=0)

    @property
    def K_a(self) -> int:
        return sum(len(entries) for entries in self.per_zone)

    @property
    def K_a_per_zone(self) -> np.ndarray:
        return np.array([len(entries) for entries in self.per_zone], dtype=int)

    @property
    def true_type(self) -> np.ndarray:
        """Global type ``t = k / K_a``; zeros when no user is active."""
        k = self.global_multiplicities.astype(float)
        total = k.sum()
        return k / total if total > 0 else k


@dataclass(frozen=True)
class EffectiveChannelSet:
    """Per-zone effective channel matrices, shape (U, M, F)."""

    X: np.ndarray
    is_ground_truth: bool = True
    iteration: int | None = None

    @property
    def U(self) -> int:
        return self.X.shape[0]


def gen_codebook(cfg: SystemConfig, seed: int) -> Codebook:
    """i.i.d. CN(0, 1/Nc) entries with each column rescaled to unit norm.

    ``normalize=False`` on :func:`raw_gaussian_codebook` gives the
    unnormalized variant used for state-evolution comparisons.
    """
    return _make_codebook(cfg, seed, normalize=True)


def raw_gaussian_codebook(cfg: SystemConfig, seed: int) -> Codebook:
    """Unnormalized CN(0, 1/Nc) codebook (state-evolution analysis variant)."""
    return _make_codebook(cfg, seed, normalize=False)


def _make_codebook(cfg: SystemConfig, seed: int, normalize: bool) -> Codebook:
    rng = substream(seed, STREAM_CODEBOOK)
    shape = (cfg.Nc, cfg.U * cfg.M)
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2 * cfg.Nc)
    if normalize:
        c = c / np.linalg.norm(c, axis=0, keepdims=True)
    return Codebook(entries=c, U=cfg.U, M=cfg.M, seed=seed)


def sample_fading(
    positions: np.ndarray, topology: Topology, cfg: SystemConfig, seed: int
) -> np.ndarray:
    """Per-user channel vectors h in C^F for an (N, 2) array of positions.

    Entries are independent across users and antennas; the A antennas of AP
    ``b`` share the variance ``gamma_b(rho)``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    rng = substream(seed, STREAM_FADING)
    n = positions.shape[0]
    gammas = lsfc_vector(positions, topology, cfg)               # (N, B)
    std = np.sqrt(np.repeat(gammas, cfg.A, axis=1) / 2.0)        # (N, F)
    shape = (n, cfg.F)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def effective_channels(round_: TransmissionRound, fadings: dict) -> EffectiveChannelSet:
    """Sum colliding users' channels into per-(zone, message) rows.

    ``fadings`` maps zone index to an (n_u, F) array aligned with the
    zone's (message, position) list; rows with multiplicity zero are exactly
    zero.
    """
    U, M = round_.U, round_.M
    F = None
    for u in range(U):
        if round_.per_zone[u]:
            F = np.atleast_2d(fadings[u]).shape[1]
            break
    if F is None:
        raise ValueError("effective_channels: cannot infer F from an empty round")
    X = np.zeros((U, M, F), dtype=complex)
    for u in range(U):
        entries = round_.per_zone[u]
        if not entries:
            continue
        h = np.atleast_2d(fadings[u])
        if h.shape[0] != len(entries):
            raise ValueError(
                f"zone {u}: {h.shape[0]} fading rows for {len(entries)} users"
            )
        for (m, _pos), hv in zip(entries, h):
            X[u, m] += hv
    return EffectiveChannelSet(X=X, is_ground_truth=True)


def synthesize_rx(
    codebook: Codebook, channels: EffectiveChannelSet, cfg: SystemConfig, seed: int
) -> np.ndarray:
    """Received signal ``Y = sqrt(Ec) sum_u C_u X_u + W`` with W ~ CN(0, sigma_w^2)."""
    X = channels.X
    if codebook.entries.shape[1] != cfg.U * cfg.M or X.shape[:2] != (cfg.U, cfg.M):
        raise ValueError("synthesize_rx: codebook/channel shapes inconsistent with cfg")
    Nc = codebook.entries.shape[0]
    F = X.shape[2]
    signal = codebook.entries @ X.reshape(cfg.U * cfg.M, F)
    rng = substream(seed, STREAM_NOISE)
    w = (rng.standard_normal((Nc, F)) + 1j * rng.standard_normal((Nc, F))) * np.sqrt(
        cfg.sigma_w2 / 2.0
    )
    return np.sqrt(cfg.Ec) * signal + w


_MAGIC = b"TUMACPLX"


def dump_complex_matrix(path, mat: np.ndarray) -> None:
    """Binary dump: magic, little-endian uint64 dims, row-major complex128 payload."""
    mat = np.ascontiguousarray(mat, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", *mat.shape))
        fh.write(mat.astype("<c16").tobytes())


def load_complex_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a tumaloc complex-matrix dump")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(rows, cols).astype(np.complex128)
