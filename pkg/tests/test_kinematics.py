import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from atara_lab.kinematics import (
    GRIPPER_INDICES,
    LEFT_WORKSPACE,
    RIGHT_WORKSPACE,
    WEIGHTED_INDICES,
    ChainConfigError,
    ChainValidationError,
    KinematicChain,
    Link,
    Pose3,
    WorkspaceBox,
    arm_interval,
    chain_from_dict,
    default_chain,
    default_chain_path,
    eef_positions,
    forward_kinematics,
    link_points,
    load_chain,
    serialize_chain,
    within_limits,
)

from oracles import fk_oracle


def _debug_chain(length=0.3):
    z = Link(length, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0))
    rest = [Link(0.0, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0)) for _ in range(5)]
    return KinematicChain((z, *rest), np.tile([-math.pi, math.pi], (6, 1)), np.zeros(3))


def _random_q(chain, rng, n=None):
    return rng.uniform(chain.lo, chain.hi, size=(6,) if n is None else (n, 6))


# ---------------------------------------------------------------- limits and layout


def test_default_limits_match_motion_range_table(chains):
    expected = np.radians([[-120, 180], [0, 210], [-180, 0], [-90, 90], [-90, 90], [-110, 110]])
    for chain in chains:
        np.testing.assert_allclose(chain.joint_limits, expected, atol=1e-12)
        assert chain.gripper_range == (0.0, 0.08)


def test_action_layout_constants():
    assert GRIPPER_INDICES == (6, 13)
    assert WEIGHTED_INDICES == (4, 11)


def test_default_workspaces():
    assert LEFT_WORKSPACE.ranges == ((0.36, 0.7), (-0.08, 0.41), (0.6, 1.0))
    assert RIGHT_WORKSPACE.ranges == ((0.36, 0.7), (-0.41, 0.08), (0.6, 1.0))


def test_workspace_rejects_empty_axis():
    with pytest.raises(ValueError):
        WorkspaceBox((0.5, 0.5), (0, 1), (0, 1))


def test_workspace_clip_and_contains(rng):
    clipped = LEFT_WORKSPACE.clip_y(lo=0.1)
    pts = clipped.sample(rng, 500)
    assert np.all(pts[:, 1] >= 0.1)
    assert np.all(LEFT_WORKSPACE.contains(pts))
    with pytest.raises(ValueError):
        LEFT_WORKSPACE.clip_y(lo=0.5)


# ---------------------------------------------------------------- loading


def test_default_chain_j2_limits(chains):
    np.testing.assert_allclose(chains[0].joint_limits[1], np.radians([0, 210]))


def test_inverted_limit_is_validation_error(tmp_path):
    data = yaml.safe_load(default_chain_path("left").read_text())
    data["links"][3]["limits_deg"] = [90.0, -90.0]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ChainValidationError):
        load_chain(path)


def test_parse_error_names_field(tmp_path):
    data = yaml.safe_load(default_chain_path("left").read_text())
    data["links"][2]["rotation_axis"] = "up"
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ChainConfigError, match=r"links\[2\]\.rotation_axis"):
        load_chain(path)


def test_wrong_joint_count_rejected():
    data = yaml.safe_load(default_chain_path("left").read_text())
    data["links"] = data["links"][:5]
    with pytest.raises(ChainValidationError):
        chain_from_dict(data)


def test_missing_file(tmp_path):
    with pytest.raises(ChainConfigError):
        load_chain(tmp_path / "nope.yaml")


def test_roundtrip_preserves_hash(tmp_path, chains):
    for chain in chains:
        path = tmp_path / f"{chain.name}.yaml"
        serialize_chain(chain, path)
        again = load_chain(path)
        assert again.content_hash() == chain.content_hash()
        np.testing.assert_array_equal(again.joint_limits, chain.joint_limits)


# ---------------------------------------------------------------- forward kinematics


def test_single_link_quarter_turn():
    chain = _debug_chain(0.3)
    pose = forward_kinematics(chain, [math.pi / 2, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(pose.position, [0.0, 0.3, 0.0], atol=1e-12)


def test_home_pose_matches_oracle(chains):
    for chain in chains:
        for q in (np.zeros(6), chain.home):
            oracle = fk_oracle(chain, q)
            pose = forward_kinematics(chain, q)
            np.testing.assert_allclose(pose.position, oracle[:3, 3], atol=1e-12)
            np.testing.assert_allclose(pose.rotation, oracle[:3, :3], atol=1e-9)


def test_batched_fk_matches_oracle(chains, rng):
    chain = chains[1]
    q = _random_q(chain, rng, 200)
    oracle = np.stack([fk_oracle(chain, qi)[:3, 3] for qi in q])
    np.testing.assert_allclose(eef_positions(chain, q), oracle, atol=1e-9)


def test_fk_rejects_wrong_shape(chains):
    with pytest.raises(ValueError):
        forward_kinematics(chains[0], np.zeros(5))


def test_pose_quaternion_norm():
    with pytest.raises(ValueError):
        Pose3(np.zeros(3), np.array([1.0, 0.1, 0.0, 0.0]))


@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6), st.tuples(*[st.floats(-2.0, 2.0)] * 3))
def test_fk_translation_equivariance(u, shift):
    chain = default_chain("left")
    q = chain.lo + (np.asarray(u) + 1) / 2 * (chain.hi - chain.lo)
    moved = chain.with_base(position=chain.base_position + np.asarray(shift))
    np.testing.assert_allclose(eef_positions(moved, q) - eef_positions(chain, q), shift, atol=1e-12)


@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
def test_fk_orientation_is_unit_quaternion(u):
    chain = default_chain("right")
    q = chain.lo + (np.asarray(u) + 1) / 2 * (chain.hi - chain.lo)
    pose = forward_kinematics(chain, q)
    assert abs(np.linalg.norm(pose.orientation) - 1.0) < 1e-9


# ---------------------------------------------------------------- limits and interval


def test_within_limits_midpoint_and_violation(chains):
    chain = chains[0]
    mid = chain.joint_limits.mean(1)
    assert within_limits(chain, mid)[0]
    q = mid.copy()
    q[2] = 0.01
    ok, flags = within_limits(chain, q)
    assert not ok
    assert list(np.flatnonzero(~flags)) == [2]


def test_within_limits_closed_interval(chains):
    chain = chains[0]
    assert within_limits(chain, chain.lo)[0]
    assert within_limits(chain, chain.hi)[0]


def test_arm_interval_straight_line(chains):
    # place EEFs by translating the bases so the EEFs land at the requested points
    left, right = chains
    ql, qr = left.home, right.home
    el = eef_positions(left, ql)
    er = eef_positions(right, qr)
    lm = left.with_base(position=left.base_position + (np.array([0.5, 0.1, 0.8]) - el))
    rm = right.with_base(position=right.base_position + (np.array([0.5, -0.1, 0.8]) - er))
    assert arm_interval(lm, ql, rm, qr) == pytest.approx(0.2, abs=1e-12)
    rc = right.with_base(position=right.base_position + (np.array([0.5, 0.1, 0.8]) - er))
    assert arm_interval(lm, ql, rc, qr) == pytest.approx(0.0, abs=1e-12)


def test_densified_interval_matches_pairwise_oracle(chains, rng):
    left, right = chains
    for _ in range(20):
        ql, qr = _random_q(left, rng), _random_q(right, rng)
        a, b = link_points(left, ql), link_points(right, qr)
        oracle = min(np.linalg.norm(p - r) for p in a for r in b)
        assert arm_interval(left, ql, right, qr, densify=True) == pytest.approx(oracle, abs=1e-12)
        assert arm_interval(left, ql, right, qr, densify=True) <= arm_interval(left, ql, right, qr) + 1e-12


@given(st.lists(st.floats(-1.0, 1.0), min_size=12, max_size=12), st.booleans())
def test_arm_interval_symmetric_non_negative(u, dense):
    left, right = default_chain("left"), default_chain("right")
    u = np.asarray(u)
    ql = left.lo + (u[:6] + 1) / 2 * (left.hi - left.lo)
    qr = right.lo + (u[6:] + 1) / 2 * (right.hi - right.lo)
    d1 = arm_interval(left, ql, right, qr, densify=dense)
    d2 = arm_interval(right, qr, left, ql, densify=dense)
    assert d1 >= 0
    assert d1 == pytest.approx(d2, abs=1e-12)
