"""Kinematics, skinning, and pose decoding."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from splatshop.errors import ArgumentError, ConfigError, DataError
from splatshop.gaussians import GaussianCloud, pack_skinning, quat_to_matrix
from splatshop.rig import (
    LATENT_DIM,
    BodyPose,
    Joint,
    PoseDecoder,
    PoseLatent,
    Skeleton,
    axis_angle_to_matrix,
    blend_transforms,
    canonical_pose,
    canonicalize_axis_angle,
    default_decoder,
    default_skeleton,
    deform_arrays,
    forward_kinematics,
    lbs_deform,
)

from . import reference


def random_pose(skel, rng, magnitude=0.5):
    return BodyPose(
        rng.normal(0.0, magnitude, (skel.joint_count, 3)),
        rng.normal(0.0, 0.1, 3),
    )


def single_bone_cloud(rng, skel, joint, n=20):
    joints, weights = pack_skinning([{joint: 1.0}] * n)
    quats = rng.normal(size=(n, 4))
    return GaussianCloud(
        means=rng.normal(0.0, 0.3, (n, 3)),
        rotations=quats / np.linalg.norm(quats, axis=1, keepdims=True),
        log_scales=np.full((n, 3), -3.0),
        opacity_logits=np.zeros(n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        skin_joints=joints,
        skin_weights=weights,
    )


def test_axis_angle_matches_scipy():
    rng = np.random.default_rng(0)
    vecs = rng.normal(0.0, 1.5, (64, 3))
    vecs[0] = 0.0  # degenerate zero rotation
    ours = axis_angle_to_matrix(vecs)
    theirs = Rotation.from_rotvec(vecs).as_matrix()
    np.testing.assert_allclose(ours, theirs, atol=1e-12)


def test_canonicalize_preserves_rotation():
    rng = np.random.default_rng(1)
    vecs = rng.normal(0.0, 4.0, (32, 3))  # many beyond pi
    wrapped = canonicalize_axis_angle(vecs)
    assert np.all(np.linalg.norm(wrapped, axis=1) <= np.pi + 1e-12)
    np.testing.assert_allclose(
        axis_angle_to_matrix(wrapped), axis_angle_to_matrix(vecs), atol=1e-12
    )


def test_default_skeleton_shape():
    skel = default_skeleton()
    assert skel.joint_count == 16
    assert skel.joints[0].parent == -1
    names = [j.name for j in skel.joints]
    assert len(set(names)) == 16
    # rest_world_inv really inverts rest_world
    prod = skel.rest_world @ skel.rest_world_inv
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(4), prod.shape), atol=1e-12)


def test_skeleton_rejects_bad_topology():
    rest = np.eye(4)
    with pytest.raises(DataError, match="parent"):
        Skeleton([Joint("a", -1, rest), Joint("b", 5, rest)])
    with pytest.raises(DataError, match="orthonormal"):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        Skeleton([Joint("a", -1, bad)])
    with pytest.raises(DataError, match="at least one"):
        Skeleton([])


def test_skeleton_roundtrip(tmp_path):
    skel = default_skeleton()
    path = tmp_path / "skel.json"
    skel.save(path)
    again = Skeleton.load(path)
    assert again.joint_count == skel.joint_count
    np.testing.assert_array_equal(again.rest_world, skel.rest_world)


def test_fk_canonical_is_rest():
    skel = default_skeleton()
    world = forward_kinematics(skel, canonical_pose(skel))
    np.testing.assert_allclose(world, skel.rest_world, atol=0.0)


def test_fk_matches_reference():
    skel = default_skeleton()
    rng = np.random.default_rng(5)
    for _ in range(5):
        pose = random_pose(skel, rng)
        world = forward_kinematics(skel, pose)
        expect = reference.forward_kinematics_reference(
            skel, axis_angle_to_matrix(pose.joint_rotations), pose.root_translation
        )
        np.testing.assert_allclose(world, expect, atol=1e-10)


def test_root_translation_shifts_all_joints():
    skel = default_skeleton()
    shift = np.array([0.3, -0.1, 0.25])
    pose = BodyPose(np.zeros((skel.joint_count, 3)), shift)
    world = forward_kinematics(skel, pose)
    np.testing.assert_allclose(
        world[:, :3, 3], skel.rest_world[:, :3, 3] + shift, atol=1e-12
    )
    np.testing.assert_allclose(world[:, :3, :3], skel.rest_world[:, :3, :3], atol=0.0)


def test_fk_joint_count_mismatch():
    skel = default_skeleton()
    with pytest.raises(ArgumentError, match="joints"):
        forward_kinematics(skel, BodyPose(np.zeros((4, 3)), np.zeros(3)))


def test_canonical_blend_is_identity():
    skel = default_skeleton()
    rng = np.random.default_rng(2)
    cloud = single_bone_cloud(rng, skel, joint=5)
    blends = blend_transforms(cloud, skel, canonical_pose(skel))
    np.testing.assert_allclose(
        blends, np.broadcast_to(np.eye(4), blends.shape), atol=1e-12
    )


def test_lbs_canonical_identity():
    """Rest pose must reproduce the cloud bit-for-bit within 1e-6."""
    skel = default_skeleton()
    rng = np.random.default_rng(3)
    n = 50
    joints, weights = pack_skinning(
        [
            {int(a): 0.6, int(b): 0.4}
            for a, b in rng.integers(0, 16, (n, 2))
        ]
    )
    cloud = GaussianCloud(
        means=rng.normal(0.0, 0.4, (n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=rng.normal(-3.5, 0.2, (n, 3)),
        opacity_logits=rng.normal(0.0, 1.0, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        skin_joints=joints,
        skin_weights=weights,
    )
    posed = lbs_deform(cloud, skel, canonical_pose(skel))
    assert np.max(np.abs(posed.means - cloud.means)) <= 1e-6
    covs = np.stack([posed[i].covariance() for i in range(n)])
    covs0 = np.stack([cloud[i].covariance() for i in range(n)])
    assert np.max(np.abs(covs - covs0)) <= 1e-6


def test_single_bone_rigid_motion():
    """Weights pinned to one joint: the splat moves rigidly with it."""
    skel = default_skeleton()
    rng = np.random.default_rng(4)
    joint = 7
    cloud = single_bone_cloud(rng, skel, joint)
    pose = random_pose(skel, rng)
    world = forward_kinematics(skel, pose)
    motion = world[joint] @ skel.rest_world_inv[joint]

    means, rots, blends = deform_arrays(cloud, skel, pose)
    expect = (motion[:3, :3] @ cloud.means.astype(np.float64).T).T + motion[:3, 3]
    np.testing.assert_allclose(means, expect, atol=1e-6)
    np.testing.assert_allclose(blends, np.broadcast_to(motion, blends.shape), atol=1e-12)
    # covariance axes rotate by the rigid rotation exactly
    own = quat_to_matrix(cloud.rotations.astype(np.float64))
    np.testing.assert_allclose(rots, motion[:3, :3] @ own, atol=1e-9)


def test_blended_point_matches_reference():
    skel = default_skeleton()
    rng = np.random.default_rng(6)
    pose = random_pose(skel, rng)
    world = forward_kinematics(skel, pose)
    weights = {2: 0.5, 9: 0.3, 14: 0.2}
    joints, packed = pack_skinning([weights])
    cloud = GaussianCloud(
        means=[[0.1, 0.9, -0.05]],
        rotations=[[1.0, 0.0, 0.0, 0.0]],
        log_scales=[[-3.0, -3.0, -3.0]],
        opacity_logits=[0.0],
        colors=[[0.5, 0.5, 0.5]],
        skin_joints=joints,
        skin_weights=packed,
    )
    means, _, _ = deform_arrays(cloud, skel, pose)
    expect = reference.lbs_point_reference(skel, world, cloud.means[0], weights)
    np.testing.assert_allclose(means[0], expect, atol=1e-5)


def test_blend_rejects_out_of_range_joint():
    skel = default_skeleton()
    cloud = GaussianCloud(
        means=[[0.0, 0.0, 0.0]],
        rotations=[[1.0, 0.0, 0.0, 0.0]],
        log_scales=[[-3.0, -3.0, -3.0]],
        opacity_logits=[0.0],
        colors=[[0.5, 0.5, 0.5]],
        skin_joints=[[99, 0, 0, 0]],
        skin_weights=[[1.0, 0.0, 0.0, 0.0]],
    )
    with pytest.raises(DataError, match="skin joint 99"):
        blend_transforms(cloud, skel, canonical_pose(skel))


# -- poses and decoder -----------------------------------------------------


def test_pose_flatten_roundtrip():
    skel = default_skeleton()
    rng = np.random.default_rng(8)
    pose = random_pose(skel, rng)
    flat = pose.flatten()
    assert len(flat) == 3 * skel.joint_count + 3
    again = BodyPose.from_flat(flat, skel.joint_count)
    np.testing.assert_allclose(again.joint_rotations, pose.joint_rotations, atol=1e-15)
    np.testing.assert_allclose(again.root_translation, pose.root_translation, atol=1e-15)


def test_pose_validation():
    with pytest.raises(DataError, match="length"):
        BodyPose.from_flat([0.0] * 10, joint_count=16)
    with pytest.raises(DataError, match="non-finite"):
        BodyPose(np.full((16, 3), np.nan), np.zeros(3))
    with pytest.raises(DataError, match="non-finite"):
        PoseLatent(np.array([np.inf] * LATENT_DIM))


def test_decoder_zero_latent_is_canonical():
    skel = default_skeleton()
    dec = default_decoder(skel)
    assert dec.latent_dim == LATENT_DIM
    assert dec.joint_count == skel.joint_count
    pose = dec.decode(PoseLatent(np.zeros(LATENT_DIM)))
    assert np.all(pose.joint_rotations == 0.0)
    assert np.all(pose.root_translation == 0.0)


def test_decoder_respects_bounds():
    skel = default_skeleton()
    dec = default_decoder(skel)
    rng = np.random.default_rng(9)
    for _ in range(10):
        z = rng.uniform(-4.0, 4.0, LATENT_DIM)
        pose = dec.decode(PoseLatent(z))
        flat = np.abs(pose.joint_rotations.reshape(-1))
        assert np.all(flat <= dec.bounds + 1e-12)


def test_decoder_latent_dim_mismatch():
    dec = default_decoder(default_skeleton())
    with pytest.raises(ConfigError, match="latent dim"):
        dec.decode(PoseLatent(np.zeros(5)))


def test_decoder_deterministic_and_roundtrip(tmp_path):
    skel = default_skeleton()
    a = default_decoder(skel, seed=7)
    b = default_decoder(skel, seed=7)
    np.testing.assert_array_equal(a.weights, b.weights)

    path = tmp_path / "dec.bin"
    a.save(path)
    loaded = PoseDecoder.load(path)
    # storage is float32; a second save must be byte-identical
    loaded.save(tmp_path / "dec2.bin")
    assert (tmp_path / "dec.bin").read_bytes() == (tmp_path / "dec2.bin").read_bytes()
    z = PoseLatent(np.linspace(-2.0, 2.0, LATENT_DIM))
    np.testing.assert_allclose(
        loaded.decode(z).joint_rotations, a.decode(z).joint_rotations, atol=1e-5
    )


def test_decoder_shape_validation():
    with pytest.raises(ConfigError, match="shapes"):
        PoseDecoder(np.zeros((4, 9)), np.zeros(6), np.ones(9))
    with pytest.raises(ConfigError, match="positive"):
        PoseDecoder(np.zeros((4, 9)), np.zeros(9), np.zeros(9))


def test_decoder_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a header\n123")
    with pytest.raises(DataError):
        PoseDecoder.load(path)
    path.write_bytes(b'{"latent_dim": 2, "joint_count": 16}\nshort')
    with pytest.raises(DataError, match="bytes"):
        PoseDecoder.load(path)
