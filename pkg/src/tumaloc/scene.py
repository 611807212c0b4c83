"""Multi-target localization front end.

Targets and sensors are placed uniformly over the coverage area.  Each
(sensor, target) pair is detected independently with a Marcum-Q detection
probability driven by the two-way radar link budget; an active sensor
reports the nearest detected target, quantizes its position on a regular
grid and transmits the grid index as its message.  Detected targets are
localized perfectly; false alarms are not generated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .airlink import STREAM_SCENE, TransmissionRound, substream
from .config import ConfigError, SystemConfig, Topology, zone_of_array
from .specfun import marcum_q1

__all__ = [
    "Scene",
    "Quantizer",
    "sample_scene",
    "detection_prob",
    "detection_prob_array",
    "sense_all",
    "build_quantizer",
    "quantize",
    "messages_of",
    "scene_to_json",
]


@dataclass(frozen=True)
class Scene:
    """Target and sensor placement plus (after sensing) detections and reports."""

    targets: np.ndarray                 # (T, 2)
    sensors: np.ndarray                 # (K, 2)
    sensor_zones: np.ndarray            # (K,) int
    detected: tuple | None = None       # per sensor: sorted tuple of detected target indices
    reported: np.ndarray | None = None  # (K,) int; -1 when inactive

    @property
    def K(self) -> int:
        return self.sensors.shape[0]

    @property
    def T(self) -> int:
        return self.targets.shape[0]

    @property
    def active_mask(self) -> np.ndarray:
        if self.reported is None:
            raise ValueError("scene has not been sensed yet")
        return self.reported >= 0

    @property
    def K_a(self) -> int:
        return int(self.active_mask.sum())


@dataclass(frozen=True)
class Quantizer:
    """Regular grid of cell centers tiling the area; messages are grid indices."""

    grid_points: np.ndarray   # (M, 2), index m = iy * gx + ix
    gx: int
    gy: int
    area_side: float

    @property
    def M(self) -> int:
        return self.gx * self.gy

    @property
    def cell_size(self) -> tuple[float, float]:
        return self.area_side / self.gx, self.area_side / self.gy


def sample_scene(cfg: SystemConfig, topology: Topology, seed: int) -> Scene:
    """Place targets and sensors i.i.d. uniformly; no detections yet."""
    rng = substream(seed, STREAM_SCENE)
    targets = rng.uniform(0.0, cfg.area_side, size=(cfg.T_targets, 2))
    sensors = rng.uniform(0.0, cfg.area_side, size=(cfg.K, 2))
    zones = zone_of_array(sensors, topology) if cfg.K else np.zeros(0, dtype=int)
    return Scene(targets=targets, sensors=sensors, sensor_zones=zones)


def _detection_noncentrality(dist2: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """First Marcum-Q argument: sqrt(2 Ns Ps S lambda^2 / ((4 pi)^3 Pn d^4))."""
    lam = cfg.wavelength
    num = 2.0 * cfg.Ns * cfg.P_s * cfg.S_rcs * lam**2
    den = (4.0 * np.pi) ** 3 * cfg.P_n
    with np.errstate(divide="ignore"):
        a = np.sqrt(num / den) / dist2
    return a


def detection_prob(sensor, target, cfg: SystemConfig) -> float:
    """Probability that a sensor detects a target at the given positions.

    ``Q1(sqrt(2 Ns Ps S lambda^2 / ((4 pi)^3 Pn ||s-p||^4)), sqrt(gamma))``;
    the coincident-position limit returns 1.
    """
    d2 = float(np.sum((np.asarray(sensor, float) - np.asarray(target, float)) ** 2))
    if d2 == 0.0:
        return 1.0
    return float(marcum_q1(_detection_noncentrality(d2, cfg), np.sqrt(cfg.gamma_threshold)))


def detection_prob_array(sensors: np.ndarray, targets: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Detection probabilities for all (sensor, target) pairs, shape (K, T)."""
    d2 = ((sensors[:, None, :] - targets[None, :, :]) ** 2).sum(-1)
    out = np.ones_like(d2)
    nz = d2 > 0
    out[nz] = marcum_q1(_detection_noncentrality(d2[nz], cfg), np.sqrt(cfg.gamma_threshold))
    return out


def sense_all(scene: Scene, cfg: SystemConfig, rng: np.random.Generator) -> Scene:
    """Draw independent Bernoulli detections and resolve nearest-target reports."""
    K, T = scene.K, scene.T
    if T == 0 or K == 0:
        return Scene(
            targets=scene.targets,
            sensors=scene.sensors,
            sensor_zones=scene.sensor_zones,
            detected=tuple(() for _ in range(K)),
            reported=np.full(K, -1, dtype=int),
        )
    pd = detection_prob_array(scene.sensors, scene.targets, cfg)
    hits = rng.uniform(size=(K, T)) < pd
    d2 = ((scene.sensors[:, None, :] - scene.targets[None, :, :]) ** 2).sum(-1)
    reported = np.full(K, -1, dtype=int)
    detected = []
    for k in range(K):
        idx = np.nonzero(hits[k])[0]
        detected.append(tuple(int(i) for i in idx))
        if idx.size:
            reported[k] = int(idx[np.argmin(d2[k, idx])])
    return Scene(
        targets=scene.targets,
        sensors=scene.sensors,
        sensor_zones=scene.sensor_zones,
        detected=tuple(detected),
        reported=reported,
    )


def build_quantizer(bits: int, area_side: float) -> Quantizer:
    """Uniform grid with ``2**bits`` cells over the square area.

    Even bit counts give a square grid; odd counts use the minimal
    rectangular extension ``2^ceil(bits/2) x 2^floor(bits/2)``.
    """
    if not 2 <= bits <= 12:
        raise ConfigError(f"quantizer bits must be in 2..12, got {bits}")
    gx = 2 ** ((bits + 1) // 2)
    gy = 2 ** (bits // 2)
    cx = area_side / gx
    cy = area_side / gy
    xs = (np.arange(gx) + 0.5) * cx
    ys = (np.arange(gy) + 0.5) * cy
    gpts = np.stack(
        [np.tile(xs, gy), np.repeat(ys, gx)], axis=1
    )  # index m = iy * gx + ix
    return Quantizer(grid_points=gpts, gx=gx, gy=gy, area_side=area_side)


def quantize(q: Quantizer, point) -> int:
    """Index of the nearest grid point; ties break toward the lowest index."""
    p = np.asarray(point, dtype=float)
    d2 = ((q.grid_points - p) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def quantize_array(q: Quantizer, points: np.ndarray) -> np.ndarray:
    """Vectorized nearest-center map; exact for in-area points on a regular grid."""
    cx, cy = q.cell_size
    ix = np.clip(np.floor(points[:, 0] / cx).astype(int), 0, q.gx - 1)
    iy = np.clip(np.floor(points[:, 1] / cy).astype(int), 0, q.gy - 1)
    return iy * q.gx + ix


def messages_of(scene: Scene, quantizer: Quantizer, U: int) -> TransmissionRound:
    """Turn sensed reports into the per-zone (message, sensor position) round."""
    if scene.reported is None:
        raise ValueError("messages_of: run sense_all first")
    per_zone = [[] for _ in range(U)]
    act = scene.active_mask
    if act.any():
        msgs = quantize_array(quantizer, scene.targets[scene.reported[act]])
        for zone, m, pos in zip(scene.sensor_zones[act], msgs, scene.sensors[act]):
            per_zone[int(zone)].append((int(m), pos.copy()))
    # active sensors come first within each zone by construction of the loop
    return TransmissionRound(
        per_zone=tuple(tuple(e) for e in per_zone), U=U, M=quantizer.M
    )


def scene_to_json(scene: Scene, quantizer: Quantizer | None = None) -> str:
    """Debug/record export of positions, detections and reports."""
    doc = {
        "targets": scene.targets.tolist(),
        "sensors": scene.sensors.tolist(),
        "sensor_zones": scene.sensor_zones.tolist(),
    }
    if scene.reported is not None:
        doc["detected"] = [list(d) for d in scene.detected]
        doc["reported"] = scene.reported.tolist()
        if quantizer is not None:
            act = scene.active_mask
            msgs = np.full(scene.K, -1, dtype=int)
            if act.any():
                msgs[act] = quantize_array(quantizer, scene.targets[scene.reported[act]])
            doc["messages"] = msgs.tolist()
    return json.dumps(doc)
