"""Network topology, zone partitioning, large-scale fading and the master configuration.

The coverage area is a square tiled by a ``rows x cols`` grid of square
zones.  The canonical access-point layout places one AP on every zone-lattice
corner and one on every lattice edge midpoint (40 APs for the 3x3 grid);
arbitrary deployments are supported through an explicit position list.

All types here are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SystemConfig",
    "Topology",
    "ConfigError",
    "build_topology",
    "lsfc",
    "lsfc_vector",
    "zone_of",
    "snr_conversions",
    "sigma_w2_for_snr_rx",
    "desk_preset",
    "paper_preset",
    "load_config",
    "config_to_dict",
]

LAYOUT_GRID = "grid3x3-corners-and-midpoints"
LAYOUT_EXPLICIT = "explicit-list"

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class SystemConfig:
    """All physical and system parameters shared by every module.

    Powers are in watts, energies in joules (normalized so that unit
    codeword energy corresponds to 1 mW per symbol at the reference
    communication blocklength), distances in meters.
    """

    area_side: float = 300.0
    zone_grid: tuple[int, int] = (3, 3)
    ap_layout: str = LAYOUT_GRID
    ap_positions: tuple[tuple[float, float], ...] | None = None
    A: int = 4                      # antennas per AP
    M: int = 1024                   # messages per zone
    Nc: int = 1000                  # communication blocklength (symbols)
    Ns: int = 1000                  # sensing blocklength (symbols)
    Ec: float = 1.0                 # per-codeword transmit energy
    sigma_w2: float = 8.27e-7       # noise variance per complex symbol
    beta: float = 3.67              # path-loss exponent
    d0: float = 13.57               # 3 dB cutoff distance
    K: int = 200                    # total sensors
    T_targets: int = 50
    N_MC: int = 500                 # Monte-Carlo samples per (zone, multiplicity)
    T_AMP: int = 10
    K_max: int = 11                 # maximum multiplicity hypothesis
    c_gospa: float = 37.5
    p_order: float = 2.0
    S_rcs: float = 10.0             # radar cross-section, m^2
    f_c: float = 28e9               # carrier frequency, Hz
    P_n: float = 1e-13              # thermal noise power, W
    P_s: float = 1e-3               # per-symbol sensing power, W
    gamma_threshold: float = 36.84  # detection threshold (p_fa = e^{-gamma/2})
    master_seed: int = 0

    def __post_init__(self):
        rows, cols = self.zone_grid
        if rows < 1 or cols < 1:
            raise ConfigError("zone_grid must have positive dimensions")
        if self.ap_layout not in (LAYOUT_GRID, LAYOUT_EXPLICIT):
            raise ConfigError(f"unsupported ap_layout: {self.ap_layout!r}")
        if self.ap_layout == LAYOUT_EXPLICIT and not self.ap_positions:
            raise ConfigError("explicit-list layout requires ap_positions")
        if self.A < 1 or self.B < 1:
            raise ConfigError("need at least one AP antenna")
        if self.M < 2:
            raise ConfigError("M must be at least 2")
        if self.Nc < 1:
            raise ConfigError("Nc must be at least 1")
        if self.K_max > self.K:
            raise ConfigError("K_max cannot exceed the sensor count K")
        if self.Ec <= 0 or self.sigma_w2 <= 0:
            raise ConfigError("Ec and sigma_w2 must be positive")
        if self.beta <= 2 or self.d0 <= 0:
            raise ConfigError("require beta > 2 and d0 > 0")
        if self.area_side <= 0:
            raise ConfigError("area_side must be positive")

    @property
    def U(self) -> int:
        """Zone count."""
        rows, cols = self.zone_grid
        return rows * cols

    @property
    def B(self) -> int:
        """AP count implied by the layout."""
        if self.ap_layout == LAYOUT_EXPLICIT:
            return len(self.ap_positions)
        rows, cols = self.zone_grid
        corners = (rows + 1) * (cols + 1)
        midpoints = rows * (cols + 1) + cols * (rows + 1)
        return corners + midpoints

    @property
    def F(self) -> int:
        """Total receive antennas."""
        return self.A * self.B

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    def with_updates(self, **kwargs) -> "SystemConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Topology:
    """AP positions plus the zone tiling of the coverage area."""

    ap_positions: np.ndarray       # (B, 2)
    zone_rects: np.ndarray         # (U, 4): x0, y0, x1, y1 (half-open)
    zone_centroids: np.ndarray     # (U, 2)
    zone_grid: tuple[int, int]
    area_side: float

    @property
    def B(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def U(self) -> int:
        return self.zone_rects.shape[0]

    @property
    def zone_area(self) -> float:
        x0, y0, x1, y1 = self.zone_rects[0]
        return float((x1 - x0) * (y1 - y0))

    def centroid_nearest_ap_distance(self) -> float:
        d = np.linalg.norm(
            self.zone_centroids[:, None, :] - self.ap_positions[None, :, :], axis=-1
        )
        return float(d.min(axis=1).max())


def _grid_layout_positions(rows: int, cols: int, area_side: float) -> np.ndarray:
    """APs on every zone-lattice corner plus every lattice edge midpoint."""
    sx = area_side / cols
    sy = area_side / rows
    pts = []
    for iy in range(rows + 1):
        for ix in range(cols + 1):
            pts.append((ix * sx, iy * sy))
    for iy in range(rows + 1):        # horizontal edge midpoints
        for ix in range(cols):
            pts.append((ix * sx + sx / 2, iy * sy))
    for iy in range(rows):            # vertical edge midpoints
        for ix in range(cols + 1):
            pts.append((ix * sx, iy * sy + sy / 2))
    return np.array(pts, dtype=float)


def build_topology(cfg: SystemConfig) -> Topology:
    """Construct the AP layout and the zone tiling for ``cfg``."""
    rows, cols = cfg.zone_grid
    if cfg.ap_layout == LAYOUT_GRID:
        aps = _grid_layout_positions(rows, cols, cfg.area_side)
    else:
        aps = np.array(cfg.ap_positions, dtype=float)
        if aps.ndim != 2 or aps.shape[1] != 2:
            raise ConfigError("ap_positions must be a list of 2-D points")
    sx = cfg.area_side / cols
    sy = cfg.area_side / rows
    rects = []
    centroids = []
    for iy in range(rows):
        for ix in range(cols):
            rects.append((ix * sx, iy * sy, (ix + 1) * sx, (iy + 1) * sy))
            centroids.append((ix * sx + sx / 2, iy * sy + sy / 2))
    return Topology(
        ap_positions=aps,
        zone_rects=np.array(rects, dtype=float),
        zone_centroids=np.array(centroids, dtype=float),
        zone_grid=cfg.zone_grid,
        area_side=cfg.area_side,
    )


def _gamma_of_distance(d: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    return 1.0 / (1.0 + (d / cfg.d0) ** cfg.beta)


def lsfc(rho, ap_position, cfg: SystemConfig) -> float:
    """Large-scale fading coefficient ``1 / (1 + (d / d0)^beta)`` in (0, 1]."""
    diff = np.asarray(rho, dtype=float) - np.asarray(ap_position, dtype=float)
    # 1-element array, not a 0-d scalar: keeps the ufunc kernel identical to
    # the vectorized path so lsfc_vector entries match bit-for-bit
    d = np.sqrt((diff * diff).sum(axis=-1, keepdims=True))
    return float(_gamma_of_distance(d, cfg)[0])


def lsfc_vector(rho, topology: Topology, cfg: SystemConfig) -> np.ndarray:
    """Per-AP LSFC sequence of length B; entry b equals ``lsfc(rho, b)`` exactly."""
    rho = np.asarray(rho, dtype=float)
    diff = topology.ap_positions - rho[..., None, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    return _gamma_of_distance(d, cfg)


def zone_of(rho, topology: Topology) -> int:
    """Zone index of a point; half-open rectangles, left/bottom inclusive.

    The outer boundary of the area belongs to the last row/column so that
    the map is total on the closed square.
    """
    x, y = float(rho[0]), float(rho[1])
    side = topology.area_side
    if not (0.0 <= x <= side and 0.0 <= y <= side):
        raise ValueError(f"point {(x, y)} outside coverage area")
    rows, cols = topology.zone_grid
    ix = min(int(x // (side / cols)), cols - 1)
    iy = min(int(y // (side / rows)), rows - 1)
    return iy * cols + ix


def zone_of_array(points: np.ndarray, topology: Topology) -> np.ndarray:
    """Vectorized :func:`zone_of` for an (N, 2) array of in-area points."""
    side = topology.area_side
    rows, cols = topology.zone_grid
    ix = np.minimum((points[:, 0] // (side / cols)).astype(int), cols - 1)
    iy = np.minimum((points[:, 1] // (side / rows)).astype(int), rows - 1)
    return iy * cols + ix


def snr_conversions(cfg: SystemConfig, topology: Topology) -> dict:
    """Transmit and received SNR implied by the configuration.

    ``SNR_tx = Ec / (Nc sigma_w^2)`` and
    ``SNR_rx = SNR_tx / (1 + (varsigma / d0)^beta)`` with ``varsigma`` the
    centroid-to-nearest-AP distance.  The attenuation exponent is the
    path-loss exponent ``beta``.
    """
    snr_tx = cfg.Ec / (cfg.Nc * cfg.sigma_w2)
    varsigma = topology.centroid_nearest_ap_distance()
    snr_rx = snr_tx / (1.0 + (varsigma / cfg.d0) ** cfg.beta)
    return {"snr_tx": snr_tx, "snr_rx": snr_rx, "varsigma": varsigma}


def sigma_w2_for_snr_rx(cfg: SystemConfig, topology: Topology, snr_rx_db: float) -> float:
    """Noise variance that realizes a target received SNR (dB) at fixed Ec, Nc."""
    snr_rx = 10.0 ** (snr_rx_db / 10.0)
    varsigma = topology.centroid_nearest_ap_distance()
    snr_tx = snr_rx * (1.0 + (varsigma / cfg.d0) ** cfg.beta)
    return cfg.Ec / (cfg.Nc * snr_tx)


def paper_preset(**overrides) -> SystemConfig:
    """Full-scale configuration: 300 m area, 9 zones, 40 APs, 10-bit quantizer."""
    cfg = SystemConfig()
    topo = build_topology(cfg)
    cfg = cfg.with_updates(sigma_w2=sigma_w2_for_snr_rx(cfg, topo, 10.0))
    return cfg.with_updates(**overrides) if overrides else cfg


def desk_preset(**overrides) -> SystemConfig:
    """Small configuration that runs the full pipeline in seconds.

    200 m area split into 2x2 zones; 12 APs on the area boundary (corners
    plus boundary-edge midpoints); 6-bit quantizer.
    """
    s = 200.0
    ring = [
        (0, 0), (s / 4, 0), (3 * s / 4, 0), (s, 0),
        (s, s / 4), (s, 3 * s / 4), (s, s),
        (3 * s / 4, s), (s / 4, s), (0, s),
        (0, 3 * s / 4), (0, s / 4),
    ]
    cfg = SystemConfig(
        area_side=s,
        zone_grid=(2, 2),
        ap_layout=LAYOUT_EXPLICIT,
        ap_positions=tuple(ring),
        A=2,
        M=64,
        Nc=300,
        Ns=1000,
        K=40,
        T_targets=10,
        N_MC=100,
        T_AMP=10,
        K_max=5,
        c_gospa=25.0,
    )
    topo = build_topology(cfg)
    cfg = cfg.with_updates(sigma_w2=sigma_w2_for_snr_rx(cfg, topo, 0.0))
    return cfg.with_updates(**overrides) if overrides else cfg


_PRESETS = {"desk": desk_preset, "paper": paper_preset}


def preset(name: str, **overrides) -> SystemConfig:
    try:
        return _PRESETS[name](**overrides)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")


_JSON_FIELDS = {f: None for f in SystemConfig.__dataclass_fields__}


def load_config(path) -> SystemConfig:
    """Load a SystemConfig from a JSON file; unknown keys are rejected."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    unknown = set(raw) - set(_JSON_FIELDS) - {"preset"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base_name = raw.pop("preset", None)
    if "zone_grid" in raw:
        raw["zone_grid"] = tuple(raw["zone_grid"])
    if raw.get("ap_positions") is not None:
        raw["ap_positions"] = tuple(tuple(p) for p in raw["ap_positions"])
    if base_name is not None:
        return preset(base_name, **raw)
    try:
        return SystemConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: SystemConfig) -> dict:
    d = {}
    for name in SystemConfig.__dataclass_fields__:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = list(list(v) if isinstance(v, tuple) else v for v in val)
        d[name] = val
    return d
