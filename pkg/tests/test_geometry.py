import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinlearn.errors import DegenerateGeometry, EmptyInput
from kinlearn.geometry import (
    Pose,
    RelativeTransform,
    Twist,
    align_point_sets,
    apply_pose,
    compose,
    exp_twist,
    inverse,
    log_pose,
    mean_rotation,
    pose_distance,
    quat_angle,
    quat_from_rotvec,
    relative,
    rotation_angle,
)


def random_pose(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    return Pose.from_rotvec(axis * angle, rng.normal(size=3))


def assert_pose_close(a, b, tol=1e-9):
    dt, dr = pose_distance(a, b)
    assert dt < tol, f"translation differs by {dt}"
    assert dr < tol, f"rotation differs by {dr} rad"


seeds = st.integers(min_value=0, max_value=2**31 - 1)


class TestPoseBasics:
    def test_quaternion_stays_unit(self):
        rng = np.random.default_rng(0)
        p = random_pose(rng)
        for _ in range(100):
            p = compose(p, random_pose(rng))
            assert abs(np.linalg.norm(p.q) - 1.0) < 1e-9

    def test_canonical_sign(self):
        p = Pose(np.array([-1.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert p.q[0] == 1.0
        # w = 0: first nonzero vector component made positive
        p = Pose(np.array([0.0, -1.0, 0.0, 0.0]), np.zeros(3))
        assert p.q[1] == 1.0

    def test_identity_neutral(self):
        rng = np.random.default_rng(1)
        p = random_pose(rng)
        assert_pose_close(compose(Pose.identity(), p), p)
        assert_pose_close(compose(p, Pose.identity()), p)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            p = random_pose(rng)
            assert_pose_close(compose(p, inverse(p)), Pose.identity())
            assert_pose_close(compose(inverse(p), p), Pose.identity())

    def test_compose_hand_example(self):
        # (rot 90deg about z, t=(1,0,0)) (+) (rot 0, t=(1,0,0))
        a = Pose.from_rotvec([0, 0, np.pi / 2], [1, 0, 0])
        b = Pose(t=np.array([1.0, 0.0, 0.0]))
        expected = Pose.from_rotvec([0, 0, np.pi / 2], [1, 1, 0])
        assert_pose_close(compose(a, b), expected)

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = random_pose(rng), random_pose(rng)
            assert_pose_close(compose(a, b), Pose.from_matrix(a.matrix() @ b.matrix()), 1e-12)

    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_associativity(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_pose(rng) for _ in range(3))
        assert_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)))


class TestRelative:
    def test_relative_self_is_identity(self):
        p = random_pose(np.random.default_rng(4))
        assert_pose_close(relative(p, p), Pose.identity())

    def test_relative_to_identity(self):
        p = random_pose(np.random.default_rng(5))
        assert_pose_close(relative(p, Pose.identity()), p)

    def test_relative_hand_example(self):
        b = Pose.from_rotvec([0, 0, np.pi / 2], [0, 0, 0])
        a = Pose.from_rotvec([0, 0, np.pi / 2], [0, 1, 0])
        # matrix algebra oracle: inv(B) @ A
        oracle = Pose.from_matrix(np.linalg.inv(b.matrix()) @ a.matrix())
        got = relative(a, b)
        assert_pose_close(got, oracle, 1e-12)
        assert_pose_close(got, Pose(t=np.array([1.0, 0.0, 0.0])))

    @given(seeds)
    @settings(max_examples=50, deadline=None)
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pose(rng), random_pose(rng)
        assert_pose_close(compose(b, relative(a, b)), a)

    def test_relative_transform_reversal(self):
        rng = np.random.default_rng(6)
        rt = RelativeTransform(0, 1, 7, random_pose(rng))
        back = rt.reversed()
        assert (back.frm, back.to, back.at_time) == (1, 0, 7)
        assert_pose_close(compose(rt.delta, back.delta), Pose.identity())


class TestTwist:
    @given(seeds)
    @settings(max_examples=100, deadline=None)
    def test_exp_log_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        p = random_pose(rng, max_angle=np.pi - 0.01)
        assert_pose_close(exp_twist(log_pose(p)), p)

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            v = rng.normal(size=3)
            v *= rng.uniform(0, np.pi - 0.01) / np.linalg.norm(v)
            tw = Twist(v, rng.normal(size=3))
            back = log_pose(exp_twist(tw))
            assert np.allclose(back.vector(), tw.vector(), atol=1e-9)

    def test_small_angle(self):
        tw = Twist(np.array([1e-12, 0, 0]), np.zeros(3))
        back = log_pose(exp_twist(tw))
        assert np.allclose(back.rot, tw.rot, atol=1e-15)


class TestMeanRotation:
    def test_single(self):
        q = quat_from_rotvec(np.array([0.3, -0.2, 0.9]))
        assert np.allclose(mean_rotation([q]), q, atol=1e-12)

    def test_duplicates(self):
        q = quat_from_rotvec(np.array([0.1, 0.5, -0.4]))
        assert np.allclose(mean_rotation([q, q]), q, atol=1e-12)

    def test_symmetric_pair_gives_identity(self):
        a = np.deg2rad(10.0)
        qp = quat_from_rotvec(np.array([0, 0, a]))
        qm = quat_from_rotvec(np.array([0, 0, -a]))
        m = mean_rotation([qp, qm])
        assert quat_angle(m) < 1e-9

    def test_symmetric_pair_vs_grid_oracle(self):
        # brute force over candidate mean angles about z: the chordal cost
        # sum_i min(|q - qi|, |q + qi|)^2 must be minimized at angle 0
        a = np.deg2rad(10.0)
        qs = [quat_from_rotvec(np.array([0, 0, s * a])) for s in (+1, -1)]

        def chordal_cost(angle):
            q = quat_from_rotvec(np.array([0, 0, angle]))
            return sum(
                min(np.sum((q - qi) ** 2), np.sum((q + qi) ** 2)) for qi in qs
            )

        grid = np.linspace(-np.pi, np.pi, 20001)
        best = grid[np.argmin([chordal_cost(g) for g in grid])]
        assert abs(best) < 1e-3
        assert quat_angle(mean_rotation(qs)) < 1e-9

    def test_sign_invariance(self):
        rng = np.random.default_rng(8)
        qs = [random_pose(rng).q for _ in range(5)]
        m1 = mean_rotation(qs)
        m2 = mean_rotation([-q for q in qs])
        assert np.allclose(m1, m2, atol=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            mean_rotation([])


class TestAlignPointSets:
    def test_identity(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(10, 3))
        assert_pose_close(align_point_sets(pts, pts), Pose.identity())

    def test_exact_recovery(self):
        rng = np.random.default_rng(10)
        src = rng.normal(size=(8, 3))
        truth = Pose.from_rotvec([0, 0, np.deg2rad(30)], [0.1, 0, 0])
        dst = apply_pose(truth, src)
        assert_pose_close(align_point_sets(src, dst), truth)

    def test_noisy_recovery(self):
        rng = np.random.default_rng(11)
        src = rng.normal(size=(10, 3))
        truth = random_pose(rng)
        dst = apply_pose(truth, src) + rng.normal(scale=1e-3, size=(10, 3))
        est = align_point_sets(src, dst)
        dt, dr = pose_distance(est, truth)
        assert dt < 5e-3
        assert dr < np.deg2rad(1.0)

    def test_weights_downweight_outlier(self):
        rng = np.random.default_rng(12)
        src = rng.normal(size=(10, 3))
        truth = random_pose(rng)
        dst = apply_pose(truth, src)
        dst[0] += 10.0
        w = np.ones(10)
        w[0] = 0.0
        assert_pose_close(align_point_sets(src, dst, w), truth)

    def test_left_invariance(self):
        rng = np.random.default_rng(13)
        src = rng.normal(size=(12, 3))
        dst = apply_pose(random_pose(rng), src) + rng.normal(scale=1e-3, size=(12, 3))
        est = align_point_sets(src, dst)
        res = np.linalg.norm(dst - apply_pose(est, src))
        g = random_pose(rng)
        est2 = align_point_sets(apply_pose(g, src), apply_pose(g, dst))
        res2 = np.linalg.norm(apply_pose(g, dst) - apply_pose(est2, apply_pose(g, src)))
        assert abs(res - res2) < 1e-9

    def test_no_reflection(self):
        # mirrored targets must still yield a proper rotation
        rng = np.random.default_rng(14)
        src = rng.normal(size=(6, 3))
        dst = src.copy()
        dst[:, 2] *= -1.0
        est = align_point_sets(src, dst)
        assert np.linalg.det(est.rotation_matrix()) > 0.999999999

    def test_too_few_points(self):
        with pytest.raises(DegenerateGeometry):
            align_point_sets(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_collinear(self):
        src = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        with pytest.raises(DegenerateGeometry):
            align_point_sets(src, src)


class TestAngles:
    def test_rotation_angle(self):
        p = Pose.from_rotvec([0, 0, np.deg2rad(40)])
        assert abs(rotation_angle(p) - np.deg2rad(40)) < 1e-12

    def test_relative_angle(self):
        a = Pose.from_rotvec([0, 0, np.deg2rad(70)])
        b = Pose.from_rotvec([0, 0, np.deg2rad(30)])
        assert abs(rotation_angle(a, b) - np.deg2rad(40)) < 1e-12
