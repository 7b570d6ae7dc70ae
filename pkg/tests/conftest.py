"""Shared fixtures: random splat scenes and the synthetic avatar setups."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from splatshop import harness
from splatshop.camera import look_at
from splatshop.rig import canonical_pose, default_decoder


def random_scene(rng: np.random.Generator, max_splats: int = 30,
                 width: int = 64, height: int = 64):
    """World-space splat arrays plus a camera that sees most of them."""
    n = int(rng.integers(1, max_splats + 1))
    means = rng.normal(0.0, 0.5, (n, 3))
    a = rng.normal(0.0, 0.12, (n, 3, 3))
    covs = np.einsum("nij,nkj->nik", a, a) + (0.01**2) * np.eye(3)
    opacities = rng.uniform(0.05, 0.98, n)
    colors = rng.uniform(0.0, 1.0, (n, 3))
    cam = look_at(
        position=[
            0.35 * rng.standard_normal(),
            0.35 * rng.standard_normal(),
            -float(rng.uniform(1.8, 3.2)),
        ],
        target=[0.0, 0.0, 0.0],
        fx=float(rng.uniform(40.0, 70.0)),
        fy=float(rng.uniform(40.0, 70.0)),
        width=width,
        height=height,
    )
    return means, covs, opacities, colors, cam


@pytest.fixture(scope="session")
def small_scene():
    """A ~300-splat avatar with 3 low-res frames, for fast unit tests."""
    cloud, skel = harness.make_synthetic_avatar(harness.AvatarParams(count=300), seed=5)
    frames = harness.make_turntable_frames(cloud, skel, n_frames=3, resolution=64)
    return SimpleNamespace(
        cloud=cloud,
        skeleton=skel,
        frames=frames,
        pose=canonical_pose(skel),
        decoder=default_decoder(skel),
    )


@pytest.fixture(scope="session")
def cluster_scene():
    """Full-size avatar with the hidden rear cluster and its 8-view dataset."""
    base, skel = harness.make_synthetic_avatar(harness.AvatarParams(count=2000), seed=0)
    cloud, cluster = harness.add_hidden_cluster(
        base, skel, seed=harness.derive_seed(0, 3)
    )
    frames = harness.make_turntable_frames(cloud, skel, n_frames=8, resolution=128)
    return SimpleNamespace(
        cloud=cloud,
        skeleton=skel,
        frames=frames,
        cluster=cluster,
        decoder=default_decoder(skel),
    )
