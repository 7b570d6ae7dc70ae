"""Next-pose search: minimize the visibility-deficit objective over a pose
latent and a look-at camera.

Each restart starts from the canonical pose (zero latent) and a camera
sampled uniformly on the bounded look-at sphere, then runs coordinate-wise
finite-difference descent jointly over (latent, azimuth, elevation,
radius), accepting only objective-decreasing moves. Restarts are
independent and the best final value wins (earliest restart on ties), so
a fixed seed reproduces the suggestion exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .camera import CameraPose, look_at as make_look_at
from .errors import ArgumentError, StateError
from .gaussians import GaussianCloud
from .raster import render_arrays, world_gaussians
from .rig import PoseDecoder, PoseLatent, Skeleton
from .visibility import VisibilityLedger, deficit

MAX_LATENT = 4.0  # ||z||_inf cap


@dataclass(frozen=True)
class CameraParams:
    """Look-at sphere parameterization of the suggestion camera."""

    azimuth: float  # rad, 0 faces the +z axis
    elevation: float  # rad, positive above the target
    radius: float  # m
    look_at: tuple[float, float, float]
    fx: float = 100.0
    fy: float = 100.0
    width: int = 128
    height: int = 128

    def position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        direction = np.array(
            [ce * math.sin(self.azimuth), math.sin(self.elevation), ce * math.cos(self.azimuth)]
        )
        return np.asarray(self.look_at, dtype=np.float64) + self.radius * direction

    def to_camera_pose(self) -> CameraPose:
        return make_look_at(
            self.position(),
            np.asarray(self.look_at, dtype=np.float64),
            fx=self.fx,
            fy=self.fy,
            width=self.width,
            height=self.height,
        )

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "radius": self.radius,
            "look_at": list(self.look_at),
        }


@dataclass
class SuggestConfig:
    restarts: int = 8
    local_steps: int = 40
    fd_epsilon: float = 1e-2
    step_size: float = 0.1
    step_decay: float = 0.9
    seed: int = 0
    radius_bounds: tuple[float, float] = (1.5, 4.0)
    elevation_bounds: tuple[float, float] = (-math.pi / 3.0, math.pi / 3.0)
    probe_resolution: int = 128
    probe_focal: float = 100.0

    def __post_init__(self):
        if self.restarts < 1 or self.local_steps < 0:
            raise ArgumentError("restarts must be >= 1 and local_steps >= 0")
        if self.fd_epsilon <= 0 or self.step_size <= 0 or not 0 < self.step_decay <= 1:
            raise ArgumentError("step sizes and decay must be positive")
        lo, hi = self.radius_bounds
        if not 0 < lo <= hi:
            raise ArgumentError(f"bad radius bounds {self.radius_bounds}")
        lo, hi = self.elevation_bounds
        if not -math.pi / 2 < lo <= hi < math.pi / 2:
            raise ArgumentError(f"bad elevation bounds {self.elevation_bounds}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["radius_bounds"] = list(self.radius_bounds)
        d["elevation_bounds"] = list(self.elevation_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SuggestConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("radius_bounds", "elevation_bounds"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)


def sample_initial_camera(
    rng: np.random.Generator, cfg: SuggestConfig, look_at: np.ndarray
) -> CameraParams:
    """Uniform azimuth over the full circle, uniform bounded elevation/radius."""
    return CameraParams(
        azimuth=float(rng.uniform(0.0, 2.0 * math.pi)),
        elevation=float(rng.uniform(*cfg.elevation_bounds)),
        radius=float(rng.uniform(*cfg.radius_bounds)),
        look_at=tuple(float(v) for v in np.asarray(look_at, dtype=np.float64)),
        fx=cfg.probe_focal,
        fy=cfg.probe_focal,
        width=cfg.probe_resolution,
        height=cfg.probe_resolution,
    )


@dataclass
class Suggestion:
    latent: PoseLatent
    camera_params: CameraParams
    objective_value: float
    seed: int
    traces: list[list[float]] = field(default_factory=list)  # per restart

    def to_record(self) -> dict:
        return {
            "z": [float(v) for v in self.latent.z],
            "camera": self.camera_params.to_dict(),
            "objective": self.objective_value,
            "seed": self.seed,
        }


def suggest_pose(
    cloud: GaussianCloud,
    skeleton: Skeleton,
    decoder: PoseDecoder,
    ledger: VisibilityLedger,
    cfg: SuggestConfig | None = None,
) -> Suggestion:
    """Multi-start coordinate descent over (latent, camera) on the ledger
    objective; always returns a valid suggestion, even when the objective
    is flat (constant ledger)."""
    cfg = cfg or SuggestConfig()
    if len(ledger) != len(cloud):
        raise StateError(
            f"ledger built for {len(ledger)} Gaussians, cloud has {len(cloud)}"
        )
    rng = np.random.default_rng(cfg.seed)
    d = decoder.latent_dim
    weights = deficit(ledger)
    center = cloud.means.astype(np.float64).mean(axis=0)
    opacities = cloud.opacities()
    colors = cloud.colors.astype(np.float64)

    # camera coordinates move without touching the pose, so most probe and
    # trial evaluations reuse the incumbent's skinned geometry; the cloud is
    # fixed for the whole search, making the latent the only geometry key
    @lru_cache(maxsize=8)
    def skinned(latent_bytes: bytes) -> tuple[np.ndarray, np.ndarray]:
        z = np.frombuffer(latent_bytes, dtype=np.float64)
        return world_gaussians(cloud, skeleton, decoder.decode(PoseLatent(z)))

    def evaluate(vec: np.ndarray) -> float:
        params = _vec_to_camera(vec, d, center, cfg)
        means, covs = skinned(vec[:d].tobytes())
        _, sigma, _ = render_arrays(
            means, covs, opacities, colors, params.to_camera_pose(),
            with_image=False,
        )
        return float(np.dot(weights, sigma))

    # coordinate visit order: camera coordinates every block, latent pair per block
    cam_coords = [d, d + 1, d + 2]
    schedule: list[int] = []
    nxt = 0
    while len(schedule) < cfg.local_steps:
        schedule.extend(cam_coords)
        schedule.extend([nxt % d, (nxt + 1) % d])
        nxt += 2
    schedule = schedule[: cfg.local_steps]
    scales = np.concatenate([np.full(d, 0.5), [1.0, 0.4, 0.5]])

    best: tuple[float, np.ndarray, int] | None = None
    traces: list[list[float]] = []
    for restart in range(cfg.restarts):
        cam0 = sample_initial_camera(rng, cfg, center)
        vec = np.concatenate(
            [np.zeros(d), [cam0.azimuth, cam0.elevation, cam0.radius]]
        )
        value = evaluate(vec)
        trace = [value]
        step = cfg.step_size
        for coord in schedule:
            eps = cfg.fd_epsilon * scales[coord]
            probe = _clamp(_bump(vec, coord, eps), d, cfg)
            slope = (evaluate(probe) - value) / eps
            if slope != 0.0:
                move = -math.copysign(step * scales[coord], slope)
                trial = _clamp(_bump(vec, coord, move), d, cfg)
                trial_value = evaluate(trial)
                if trial_value < value:
                    vec, value = trial, trial_value
            trace.append(value)
            step *= cfg.step_decay
        traces.append(trace)
        if best is None or value < best[0]:
            best = (value, vec, restart)

    value, vec, _ = best
    return Suggestion(
        latent=PoseLatent(vec[:d]),
        camera_params=_vec_to_camera(vec, d, center, cfg),
        objective_value=value,
        seed=cfg.seed,
        traces=traces,
    )


def _bump(vec: np.ndarray, coord: int, delta: float) -> np.ndarray:
    out = vec.copy()
    out[coord] += delta
    return out


def _clamp(vec: np.ndarray, d: int, cfg: SuggestConfig) -> np.ndarray:
    out = vec.copy()
    out[:d] = np.clip(out[:d], -MAX_LATENT, MAX_LATENT)
    out[d] = out[d] % (2.0 * math.pi)
    out[d + 1] = np.clip(out[d + 1], *cfg.elevation_bounds)
    out[d + 2] = np.clip(out[d + 2], *cfg.radius_bounds)
    return out


def _vec_to_camera(
    vec: np.ndarray, d: int, look_at: np.ndarray, cfg: SuggestConfig
) -> CameraParams:
    return CameraParams(
        azimuth=float(vec[d]),
        elevation=float(vec[d + 1]),
        radius=float(vec[d + 2]),
        look_at=tuple(float(v) for v in look_at),
        fx=cfg.probe_focal,
        fy=cfg.probe_focal,
        width=cfg.probe_resolution,
        height=cfg.probe_resolution,
    )
