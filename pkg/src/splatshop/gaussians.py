"""Gaussian splat data model and checkpoint serialization.

A cloud is stored struct-of-arrays in float32 (the on-disk precision);
rendering and optimization upcast to float64 internally. Covariances are
parameterized as unit quaternion + log-scales so that
``R diag(exp(2 ls)) R^T`` stays symmetric positive definite under
unconstrained updates.

Checkpoint format: one UTF-8 JSON header line
``{"version": 1, "count": N, "skeleton_ref": ..., "fields": [...]}``
terminated by a newline, followed by the little-endian float32 arrays in
header-declared order. Skinning joint indices are stored as float32
(exact for any realistic joint count).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAX_SKIN_BONES = 4
CHECKPOINT_VERSION = 1

# (name, trailing shape) in on-disk order
CHECKPOINT_FIELDS = (
    ("means", (3,)),
    ("rotations", (4,)),
    ("log_scales", (3,)),
    ("opacity_logits", ()),
    ("colors", (3,)),
    ("skin_joints", (MAX_SKIN_BONES,)),
    ("skin_weights", (MAX_SKIN_BONES,)),
)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Normalize quaternions (..., 4) with a deterministic sign (w >= 0)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DataError("zero-norm quaternion")
    q = q / n
    flip = q[..., :1] < 0.0
    return np.where(flip, -q, q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (..., 4) wxyz to rotation matrix (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix (..., 3, 3) to unit quaternion (..., 4) wxyz, w >= 0.

    Shepperd's method, vectorized: picks the numerically largest of the
    four square roots per element.
    """
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m, axis1=-2, axis2=-1)
    d = np.stack(
        [t, m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1
    )  # discriminants for the 4 branches
    best = np.argmax(d, axis=-1)

    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)
    # branch 0: trace dominant
    s0 = np.sqrt(np.maximum(1.0 + t, 0.0)) * 2.0
    q0 = np.stack(
        [
            0.25 * s0,
            (m[..., 2, 1] - m[..., 1, 2]) / np.where(s0 == 0, 1, s0),
            (m[..., 0, 2] - m[..., 2, 0]) / np.where(s0 == 0, 1, s0),
            (m[..., 1, 0] - m[..., 0, 1]) / np.where(s0 == 0, 1, s0),
        ],
        axis=-1,
    )
    # branch i (i=1..3): diagonal element i-1 dominant
    branch_qs = [q0]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(np.maximum(1.0 + m[..., i, i] - m[..., j, j] - m[..., k, k], 0.0)) * 2.0
        safe = np.where(s == 0, 1, s)
        qi = np.empty_like(q0)
        qi[..., 0] = (m[..., k, j] - m[..., j, k]) / safe
        qi[..., 1 + i] = 0.25 * s
        qi[..., 1 + j] = (m[..., j, i] + m[..., i, j]) / safe
        qi[..., 1 + k] = (m[..., k, i] + m[..., i, k]) / safe
        branch_qs.append(qi)
    stacked = np.stack(branch_qs, axis=-2)  # (..., 4 branches, 4)
    q = np.take_along_axis(stacked, best[..., None, None].repeat(4, axis=-1), axis=-2)[..., 0, :]
    return quat_normalize(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b of wxyz quaternions, broadcastable."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass
class Gaussian:
    """A single splat in canonical space.

    ``skin_weights`` maps joint index to a nonnegative weight; at most
    :data:`MAX_SKIN_BONES` entries, summing to 1.
    """

    mean: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    color: np.ndarray
    skin_weights: dict[int, float] = field(default_factory=dict)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    def covariance(self) -> np.ndarray:
        """Canonical-space covariance R diag(exp(2 ls)) R^T."""
        r = quat_to_matrix(quat_normalize(self.rotation))
        s2 = np.exp(2.0 * np.asarray(self.log_scales, dtype=np.float64))
        return r @ np.diag(s2) @ r.T


class GaussianCloud:
    """Ordered collection of splats, struct-of-arrays, float32 storage.

    Index order is stable across checkpoint save/load; visibility vectors
    and gradient buffers are aligned to it.
    """

    def __init__(
        self,
        means: np.ndarray,
        rotations: np.ndarray,
        log_scales: np.ndarray,
        opacity_logits: np.ndarray,
        colors: np.ndarray,
        skin_joints: np.ndarray,
        skin_weights: np.ndarray,
        skeleton_ref: str = "default-16",
    ):
        n = len(means)
        if n < 1:
            raise DataError("a cloud needs at least one Gaussian")
        self.means = np.ascontiguousarray(means, dtype=np.float32).reshape(n, 3)
        self.rotations = np.ascontiguousarray(
            quat_normalize(rotations), dtype=np.float32
        ).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float32).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float32).reshape(n)
        self.colors = np.ascontiguousarray(colors, dtype=np.float32).reshape(n, 3)
        self.skin_joints = np.ascontiguousarray(skin_joints, dtype=np.int32).reshape(
            n, MAX_SKIN_BONES
        )
        self.skin_weights = np.ascontiguousarray(skin_weights, dtype=np.float32).reshape(
            n, MAX_SKIN_BONES
        )
        self.skeleton_ref = skeleton_ref
        self.validate()

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        weights = {
            int(j): float(w)
            for j, w in zip(self.skin_joints[i], self.skin_weights[i])
            if w > 0
        }
        return Gaussian(
            mean=self.means[i].astype(np.float64),
            rotation=self.rotations[i].astype(np.float64),
            log_scales=self.log_scales[i].astype(np.float64),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.colors[i].astype(np.float64),
            skin_weights=weights,
        )

    def validate(self) -> None:
        for name in ("means", "rotations", "log_scales", "opacity_logits", "colors"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in cloud field {name!r}")
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise DataError("rotation quaternions must be unit norm within 1e-6")
        if np.any(self.skin_weights < 0):
            raise DataError("skin weights must be nonnegative")
        sums = self.skin_weights.astype(np.float64).sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise DataError(f"skin weights of Gaussian {bad} sum to {sums[bad]:.8f}, not 1")

    def opacities(self) -> np.ndarray:
        """Sigmoid-activated opacities eta in (0, 1), float64."""
        return 1.0 / (1.0 + np.exp(-self.opacity_logits.astype(np.float64)))

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.means.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.colors.copy(),
            self.skin_joints.copy(),
            self.skin_weights.copy(),
            skeleton_ref=self.skeleton_ref,
        )

    def select(self, keep: np.ndarray) -> "GaussianCloud":
        """Cloud restricted to ``keep`` (bool mask or index array), order preserved."""
        return GaussianCloud(
            self.means[keep],
            self.rotations[keep],
            self.log_scales[keep],
            self.opacity_logits[keep],
            self.colors[keep],
            self.skin_joints[keep],
            self.skin_weights[keep],
            skeleton_ref=self.skeleton_ref,
        )

    # -- checkpoint IO ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        header = {
            "version": CHECKPOINT_VERSION,
            "count": len(self),
            "skeleton_ref": self.skeleton_ref,
            "fields": [name for name, _ in CHECKPOINT_FIELDS],
        }
        blobs = []
        for name, _ in CHECKPOINT_FIELDS:
            arr = getattr(self, name)
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            f.write(b"\n")
            for blob in blobs:
                f.write(blob)

    @classmethod
    def load(cls, path: str | Path) -> "GaussianCloud":
        path = Path(path)
        with open(path, "rb") as f:
            raw = f.read()
        nl = raw.find(b"\n")
        if nl < 0:
            raise DataError(f"{path}: missing checkpoint header terminator")
        try:
            header = json.loads(raw[:nl].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: malformed checkpoint header: {e}") from e
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
        n = int(header["count"])
        known = {name: shape for name, shape in CHECKPOINT_FIELDS}
        offset = nl + 1
        arrays = {}
        for name in header["fields"]:
            if name not in known:
                raise DataError(f"{path}: unknown checkpoint field {name!r}")
            shape = (n,) + known[name]
            nbytes = int(np.prod(shape)) * 4
            chunk = raw[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise DataError(f"{path}: truncated data for field {name!r}")
            arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
            offset += nbytes
        missing = set(known) - set(arrays)
        if missing:
            raise DataError(f"{path}: checkpoint missing fields {sorted(missing)}")
        return cls(
            means=arrays["means"],
            rotations=arrays["rotations"],
            log_scales=arrays["log_scales"],
            opacity_logits=arrays["opacity_logits"],
            colors=arrays["colors"],
            skin_joints=arrays["skin_joints"].astype(np.int32),
            skin_weights=arrays["skin_weights"],
            skeleton_ref=header.get("skeleton_ref", "default-16"),
        )


def pack_skinning(weight_maps: list[dict[int, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Convert per-splat {joint: weight} maps to padded (N, 4) arrays."""
    n = len(weight_maps)
    joints = np.zeros((n, MAX_SKIN_BONES), dtype=np.int32)
    weights = np.zeros((n, MAX_SKIN_BONES), dtype=np.float64)
    for i, wm in enumerate(weight_maps):
        if len(wm) > MAX_SKIN_BONES:
            raise DataError(f"Gaussian {i}: more than {MAX_SKIN_BONES} skinning entries")
        for slot, (j, w) in enumerate(sorted(wm.items())):
            joints[i, slot] = j
            weights[i, slot] = w
        total = weights[i].sum()
        if total <= 0:
            raise DataError(f"Gaussian {i}: empty or zero skinning weights")
        weights[i] /= total
    return joints, weights.astype(np.float32)
