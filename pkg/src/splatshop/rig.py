"""Articulated skeleton, forward kinematics, linear blend skinning, and the
bounded pose decoder.

A skeleton is a topologically sorted joint list (parent before child)
whose rest transforms are rigid 4x4 matrices relative to the parent.
Posing a joint applies an axis-angle rotation after its rest transform:
``world(j) = world(parent) @ rest(j) @ rot(pose_j)``, the root composed
with the global root translation.

Skinning blends per-joint motion matrices ``world(k) @ rest_world(k)^-1``
with each Gaussian's weights; covariances are rotated by the polar
rotation of the blended linear part so they stay symmetric positive
definite under any weight combination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, DataError
from .gaussians import GaussianCloud, matrix_to_quat, quat_to_matrix

LATENT_DIM = 32
DEFAULT_SKELETON_REF = "default-16"


def axis_angle_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for axis-angle vectors (..., 3) -> (..., 3, 3)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    safe = np.where(theta > 1e-12, theta, 1.0)
    axis = r / safe
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    k = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    th = theta[..., None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    m = eye + np.sin(th) * k + (1.0 - np.cos(th)) * (k @ k)
    return np.where(th > 1e-12, m, eye)


def canonicalize_axis_angle(r: np.ndarray) -> np.ndarray:
    """Wrap axis-angle magnitude into [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi  # (-pi, pi]
    scale = np.where(theta > 1e-12, wrapped / np.where(theta > 1e-12, theta, 1.0), 1.0)
    return r * scale


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    rest: np.ndarray  # rigid 4x4 relative to parent


class Skeleton:
    """Topologically sorted joint hierarchy with cached rest-pose transforms."""

    def __init__(self, joints: list[Joint]):
        if not joints:
            raise DataError("skeleton needs at least one joint")
        for i, j in enumerate(joints):
            if not (-1 <= j.parent < i):
                raise DataError(
                    f"joint {i} ({j.name}): parent {j.parent} not before it"
                )
            rest = np.asarray(j.rest, dtype=np.float64).reshape(4, 4)
            rot = rest[:3, :3]
            if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-6:
                raise DataError(f"joint {i} ({j.name}): rest rotation not orthonormal")
            if np.max(np.abs(rest[3] - (0, 0, 0, 1))) > 0:
                raise DataError(f"joint {i} ({j.name}): rest transform not affine")
        self.joints = list(joints)
        self.rest_world = self._forward(np.zeros((len(joints), 3)), np.zeros(3))
        self.rest_world_inv = np.linalg.inv(self.rest_world)

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    def _forward(self, joint_rotations: np.ndarray, root_translation: np.ndarray):
        out = np.empty((len(self.joints), 4, 4), dtype=np.float64)
        rots = axis_angle_to_matrix(joint_rotations)
        for i, j in enumerate(self.joints):
            local = np.asarray(j.rest, dtype=np.float64).copy()
            local[:3, :3] = local[:3, :3] @ rots[i]
            if j.parent < 0:
                root = np.eye(4)
                root[:3, 3] = root_translation
                out[i] = root @ local
            else:
                out[i] = out[j.parent] @ local
        return out

    def to_json(self) -> dict:
        return {
            "joints": [
                {
                    "name": j.name,
                    "parent": j.parent,
                    "rest": [float(v) for v in np.asarray(j.rest).reshape(-1)],
                }
                for j in self.joints
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "Skeleton":
        try:
            joints = [
                Joint(
                    name=j["name"],
                    parent=int(j["parent"]),
                    rest=np.asarray(j["rest"], dtype=np.float64).reshape(4, 4),
                )
                for j in data["joints"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed skeleton record: {e}") from e
        return cls(joints)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Skeleton":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_skeleton() -> Skeleton:
    """The 16-joint desk-scale skeleton shipped with the package."""
    text = (
        resources.files("splatshop").joinpath("data/default_skeleton.json").read_text()
    )
    return Skeleton.from_json(json.loads(text))


@dataclass
class BodyPose:
    """Axis-angle rotation per joint plus a global root translation."""

    joint_rotations: np.ndarray  # (K, 3)
    root_translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 3)
        tr = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tr))):
            raise DataError("body pose contains non-finite values")
        self.joint_rotations = canonicalize_axis_angle(rot)
        self.root_translation = tr

    @property
    def joint_count(self) -> int:
        return len(self.joint_rotations)

    def flatten(self) -> list[float]:
        """[3K rotation floats..., 3 translation floats], the pose wire format."""
        return [float(v) for v in self.joint_rotations.reshape(-1)] + [
            float(v) for v in self.root_translation
        ]

    @classmethod
    def from_flat(cls, values, joint_count: int) -> "BodyPose":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if len(values) != 3 * joint_count + 3:
            raise DataError(
                f"pose vector length {len(values)}, expected {3 * joint_count + 3}"
            )
        return cls(values[:-3].reshape(joint_count, 3), values[-3:])


def canonical_pose(skel: Skeleton) -> BodyPose:
    """The all-zeros rest pose."""
    return BodyPose(np.zeros((skel.joint_count, 3)), np.zeros(3))


def forward_kinematics(skel: Skeleton, pose: BodyPose) -> np.ndarray:
    """World transform per joint, shape (K, 4, 4)."""
    if pose.joint_count != skel.joint_count:
        raise ArgumentError(
            f"pose has {pose.joint_count} joints, skeleton {skel.joint_count}"
        )
    return skel._forward(pose.joint_rotations, pose.root_translation)


def blend_transforms(
    cloud: GaussianCloud, skel: Skeleton, pose: BodyPose
) -> np.ndarray:
    """Per-Gaussian blended motion matrix B_i, shape (N, 4, 4)."""
    if np.any(cloud.skin_joints >= skel.joint_count) or np.any(cloud.skin_joints < 0):
        flat = cloud.skin_joints
        bad = np.argwhere((flat >= skel.joint_count) | (flat < 0))[0]
        raise DataError(
            f"Gaussian {bad[0]}: skin joint {flat[tuple(bad)]} outside skeleton"
        )
    world = forward_kinematics(skel, pose)
    motion = world @ skel.rest_world_inv  # (K, 4, 4)
    per_slot = motion[cloud.skin_joints]  # (N, 4, 4, 4)
    w = cloud.skin_weights.astype(np.float64)[..., None, None]
    return (per_slot * w).sum(axis=1)


def _polar_rotations(mats: np.ndarray) -> np.ndarray:
    """Rotation factor of each 3x3 matrix via SVD, det forced to +1."""
    u, _, vt = np.linalg.svd(mats)
    r = u @ vt
    det = np.linalg.det(r)
    # flip the last singular direction where the product reflected
    u_fix = u.copy()
    u_fix[..., :, 2] *= np.where(det < 0, -1.0, 1.0)[..., None]
    return np.where(det[..., None, None] < 0, u_fix @ vt, r)


def skinning_products(
    cloud: GaussianCloud, skel: Skeleton, pose: BodyPose
) -> tuple[np.ndarray, np.ndarray]:
    """Blend matrices (N,4,4) and world rotations (N,3,3) for one pose.

    Depends only on the pose, skin weights, per-Gaussian rotations, and the
    skeleton, never on trained parameters, so optimization loops can compute
    it once per pose and reuse it until the cloud's rows change."""
    blends = blend_transforms(cloud, skel, pose)
    rot_blend = _polar_rotations(blends[:, :3, :3])
    own = quat_to_matrix(cloud.rotations.astype(np.float64))
    return blends, rot_blend @ own


def deform_arrays(
    cloud: GaussianCloud, skel: Skeleton, pose: BodyPose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Skin the cloud: world means (N,3), world rotation matrices (N,3,3)
    composed with each Gaussian's own rotation, and the blend matrices
    (N,4,4) for gradient chaining."""
    blends, rots = skinning_products(cloud, skel, pose)
    means = np.einsum(
        "nij,nj->ni", blends[:, :3, :3], cloud.means.astype(np.float64)
    ) + blends[:, :3, 3]
    return means, rots, blends


def lbs_deform(cloud: GaussianCloud, skel: Skeleton, pose: BodyPose) -> GaussianCloud:
    """World-space copy of the cloud (means moved, covariance axes rotated)."""
    means, rots, _ = deform_arrays(cloud, skel, pose)
    return GaussianCloud(
        means=means,
        rotations=matrix_to_quat(rots),
        log_scales=cloud.log_scales.copy(),
        opacity_logits=cloud.opacity_logits.copy(),
        colors=cloud.colors.copy(),
        skin_joints=cloud.skin_joints.copy(),
        skin_weights=cloud.skin_weights.copy(),
        skeleton_ref=cloud.skeleton_ref,
    )


@dataclass
class PoseLatent:
    """Low-dimensional pose code; the optimizer keeps ||z||_inf <= 4."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(z)):
            raise DataError("pose latent contains non-finite values")
        self.z = z


class PoseDecoder:
    """Bounded linear decoder: angles = b * tanh(W^T z + c), componentwise.

    W is (latent_dim, 3K); b holds per-component angle bounds in radians.
    The decoded root translation is fixed at the origin.
    """

    def __init__(self, weights: np.ndarray, offset: np.ndarray, bounds: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.offset = np.asarray(offset, dtype=np.float64).reshape(-1)
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ConfigError("decoder weights must be a 2D matrix")
        d, out = self.weights.shape
        if out % 3 != 0 or len(self.offset) != out or len(self.bounds) != out:
            raise ConfigError(
                f"decoder shapes disagree: W {self.weights.shape}, "
                f"c {self.offset.shape}, b {self.bounds.shape}"
            )
        if np.any(self.bounds <= 0):
            raise ConfigError("decoder bounds must be positive")

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def joint_count(self) -> int:
        return self.weights.shape[1] // 3

    def decode(self, latent: PoseLatent) -> BodyPose:
        if len(latent.z) != self.latent_dim:
            raise ConfigError(
                f"latent dim {len(latent.z)}, decoder expects {self.latent_dim}"
            )
        angles = self.bounds * np.tanh(latent.z @ self.weights + self.offset)
        return BodyPose(angles.reshape(self.joint_count, 3), np.zeros(3))

    def save(self, path: str | Path) -> None:
        header = {
            "version": 1,
            "latent_dim": self.latent_dim,
            "joint_count": self.joint_count,
            "fields": ["weights", "offset", "bounds"],
        }
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            f.write(b"\n")
            f.write(np.ascontiguousarray(self.weights, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.offset, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.bounds, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "PoseDecoder":
        raw = Path(path).read_bytes()
        nl = raw.find(b"\n")
        if nl < 0:
            raise DataError(f"{path}: missing decoder header terminator")
        try:
            header = json.loads(raw[:nl].decode("utf-8"))
            d = int(header["latent_dim"])
            k = int(header["joint_count"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(f"{path}: malformed decoder header: {e}") from e
        body = raw[nl + 1 :]
        need = (d * 3 * k + 3 * k + 3 * k) * 4
        if len(body) != need:
            raise DataError(f"{path}: decoder blob is {len(body)} bytes, expected {need}")
        w = np.frombuffer(body[: d * 3 * k * 4], dtype="<f4").reshape(d, 3 * k)
        c = np.frombuffer(body[d * 3 * k * 4 : (d * 3 * k + 3 * k) * 4], dtype="<f4")
        b = np.frombuffer(body[(d * 3 * k + 3 * k) * 4 :], dtype="<f4")
        return cls(w.astype(np.float64), c.astype(np.float64), b.astype(np.float64))


# joints whose decoded angles stay within the tighter torso bound
_TORSO_JOINTS = {"pelvis", "spine1", "spine2", "head"}
TORSO_BOUND = 0.4  # rad
LIMB_BOUND = 1.2  # rad


def default_decoder(skel: Skeleton, seed: int = 7, latent_dim: int = LATENT_DIM):
    """Deterministic stand-in decoder: random mixing matrix, zero offset,
    torso/limb angle bounds. decode(0) is the canonical pose."""
    rng = np.random.default_rng(seed)
    k = skel.joint_count
    w = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, 3 * k))
    bounds = np.empty(3 * k)
    for i, joint in enumerate(skel.joints):
        b = TORSO_BOUND if joint.name in _TORSO_JOINTS else LIMB_BOUND
        bounds[3 * i : 3 * i + 3] = b
    return PoseDecoder(w, np.zeros(3 * k), bounds)
