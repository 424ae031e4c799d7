import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serocs.errors import DegenerateInputError, InputDomainError
from serocs.geometry import (
    Capsule,
    KinematicChain,
    Polytope,
    RobotState,
    Sphere,
    double_integrator_matrices,
    end_effector,
    end_effector_jacobian,
    end_effector_velocity_partial,
    forward_kinematics,
    integrate,
    inverse_kinematics,
    min_separation,
    project_to_rotation,
    rotation_2d,
    signed_distance,
    signed_distance_gradient,
)

UNIT_SQUARE = Polytope.box([0.0, 0.0], [1.0, 1.0])


def _square_boundary(n):
    s = np.linspace(0.0, 4.0, n, endpoint=False)
    pts = np.zeros((n, 2))
    for i, v in enumerate(s):
        side, t = int(v), v - int(v)
        pts[i] = [(t, 0), (1, t), (1 - t, 1), (0, 1 - t)][side]
    return pts


def _shapes():
    return [
        Sphere([0.2, -0.1], 0.7),
        UNIT_SQUARE,
        Capsule([0.0, 0.0], [1.0, 0.5], 0.25),
        Polytope(np.array([[1, 0], [0, 1], [-1, -1] / np.sqrt(2)]), np.array([1.0, 1.0, 0.5])),
    ]


class TestSignedDistance:
    def test_sphere_radial(self):
        assert signed_distance([2.0, 0.0], Sphere([0.0, 0.0], 1.0)) == 1.0

    def test_sphere_center(self):
        assert signed_distance([0.0, 0.0], Sphere([0.0, 0.0], 1.0)) == -1.0

    def test_square_matches_dense_boundary_sampling(self):
        boundary = _square_boundary(100_000)
        brute = np.min(np.linalg.norm(boundary - [3.0, 4.0], axis=1))
        assert abs(signed_distance([3.0, 4.0], UNIT_SQUARE) - brute) < 1e-6

    def test_square_interior_and_faces(self):
        assert signed_distance([0.5, 0.5], UNIT_SQUARE) == pytest.approx(-0.5)
        assert signed_distance([0.9, 0.5], UNIT_SQUARE) == pytest.approx(-0.1)
        assert signed_distance([2.0, 0.5], UNIT_SQUARE) == pytest.approx(1.0)

    def test_random_points_vs_boundary_sampling(self):
        rng = np.random.default_rng(0)
        boundary = _square_boundary(40_000)
        for p in rng.uniform(-2, 3, size=(50, 2)):
            brute = np.min(np.linalg.norm(boundary - p, axis=1))
            inside = np.all((p > 0) & (p < 1))
            assert signed_distance(p, UNIT_SQUARE) == pytest.approx(-brute if inside else brute, abs=1e-4)

    def test_3d_box(self):
        box = Polytope.box([0, 0, 0], [1, 2, 3])
        assert signed_distance([2, 3, 4], box) == pytest.approx(np.sqrt(3.0))
        assert signed_distance([0.5, 1.0, 1.0], box) == pytest.approx(-0.5)

    def test_capsule(self):
        cap = Capsule([0.0, 0.0], [1.0, 0.0], 0.1)
        assert signed_distance([0.5, 1.0], cap) == pytest.approx(0.9)
        assert signed_distance([2.0, 0.0], cap) == pytest.approx(0.9)
        assert signed_distance([0.5, 0.0], cap) == pytest.approx(-0.1)

    def test_non_finite_rejected(self):
        with pytest.raises(InputDomainError):
            signed_distance([np.nan, 0.0], UNIT_SQUARE)

    def test_invalid_shapes_rejected(self):
        with pytest.raises(InputDomainError):
            Sphere([0, 0], -1.0)
        with pytest.raises(InputDomainError):
            Polytope(np.array([[1.0, 0.0]]), np.array([1.0]))  # unbounded
        with pytest.raises(InputDomainError):
            Polytope(np.array([[2.0, 0.0], [-1.0, 0.0], [0, 1], [0, -1]]), np.ones(4))
        with pytest.raises(InputDomainError):
            Polytope.box([0, 0], [1, 1]).inflated(-2.0)  # empty


class TestGradient:
    def test_radial(self):
        g = signed_distance_gradient([2.0, 0.0], Sphere([0.0, 0.0], 1.0))
        np.testing.assert_allclose(g.vector, [1.0, 0.0])
        assert not g.degenerate

    def test_center_tie_break(self):
        g = signed_distance_gradient([0.0, 0.0], Sphere([0.0, 0.0], 1.0))
        np.testing.assert_array_equal(g.vector, [1.0, 0.0])
        assert g.degenerate
        g3 = signed_distance_gradient([0.0, 0.0, 0.0], Sphere([0.0, 0.0, 0.0], 1.0))
        np.testing.assert_array_equal(g3.vector, [1.0, 0.0, 0.0])

    def test_polytope_interior_tie(self):
        g = signed_distance_gradient([0.5, 0.5], UNIT_SQUARE)
        assert g.degenerate

    @pytest.mark.parametrize("shape", _shapes(), ids=lambda s: type(s).__name__)
    def test_matches_central_differences(self, shape):
        rng = np.random.default_rng(1)
        h = 1e-6
        checked = 0
        while checked < 100:
            p = rng.uniform(-3, 3, size=2)
            if signed_distance(p, shape) <= 1e-3:
                continue
            fd = np.array([
                (signed_distance(p + h * e, shape) - signed_distance(p - h * e, shape)) / (2 * h)
                for e in np.eye(2)
            ])
            g = signed_distance_gradient(p, shape)
            np.testing.assert_allclose(g.vector, fd, atol=1e-4)
            assert np.linalg.norm(g.vector) == pytest.approx(1.0)
            checked += 1


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.sampled_from(range(4)))
    def test_one_lipschitz(self, xs, k):
        shape = _shapes()[k]
        p, q = np.array(xs[:2]), np.array(xs[2:])
        assert abs(signed_distance(p, shape) - signed_distance(q, shape)) <= np.linalg.norm(p - q) + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.sampled_from(range(4)))
    def test_convex_midpoint(self, xs, k):
        shape = _shapes()[k]
        p, q = np.array(xs[:2]), np.array(xs[2:])
        mid = signed_distance(0.5 * (p + q), shape)
        assert mid <= 0.5 * (signed_distance(p, shape) + signed_distance(q, shape)) + 1e-12


def _homogeneous_fk(lengths, q):
    T = np.eye(3)
    for l, a in zip(lengths, q):
        c, s = np.cos(a), np.sin(a)
        T = T @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]) @ np.array([[1, 0, l], [0, 1, 0], [0, 0, 1]])
    return T[:2, 2]


class TestKinematics:
    def test_one_link(self):
        caps = forward_kinematics(KinematicChain((1.0,)), [0.0])
        np.testing.assert_allclose(caps[0].a, [0, 0])
        np.testing.assert_allclose(caps[0].b, [1, 0])

    def test_two_link_hand_geometry(self):
        caps = forward_kinematics(KinematicChain((1.0, 1.0)), [np.pi / 2, -np.pi / 2])
        np.testing.assert_allclose(caps[0].b, [0, 1], atol=1e-15)
        np.testing.assert_allclose(caps[1].b, [1, 1], atol=1e-15)

    def test_point_robot(self):
        caps = forward_kinematics(KinematicChain(link_radius=0.05), [0.3, -0.2])
        assert len(caps) == 1
        np.testing.assert_array_equal(caps[0].a, caps[0].b)
        np.testing.assert_array_equal(caps[0].a, [0.3, -0.2])

    def test_matches_homogeneous_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            lengths = tuple(rng.uniform(0.1, 1.0, size=rng.integers(1, 5)))
            q = rng.uniform(-np.pi, np.pi, size=len(lengths))
            ee = end_effector(KinematicChain(lengths), q)
            assert np.max(np.abs(ee - _homogeneous_fk(lengths, q))) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(InputDomainError):
            forward_kinematics(KinematicChain((1.0, 1.0)), [0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.05, 2.0), min_size=1, max_size=5), st.data())
    def test_reach_bound(self, lengths, data):
        q = data.draw(st.lists(st.floats(-10, 10), min_size=len(lengths), max_size=len(lengths)))
        chain = KinematicChain(tuple(lengths))
        assert np.linalg.norm(end_effector(chain, q)) <= chain.reach + 1e-12

    def test_jacobians_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        chain = KinematicChain((0.4, 0.3, 0.2), base=[0.1, -0.2])
        h = 1e-6
        for _ in range(20):
            q = rng.uniform(-np.pi, np.pi, 3)
            dq = rng.normal(size=3)
            J = end_effector_jacobian(chain, q)
            fd = np.column_stack([(end_effector(chain, q + h * e) - end_effector(chain, q - h * e)) / (2 * h)
                                  for e in np.eye(3)])
            np.testing.assert_allclose(J, fd, atol=1e-8)
            Jv = end_effector_velocity_partial(chain, q, dq)
            fdv = np.column_stack([(end_effector_jacobian(chain, q + h * e) @ dq
                                    - end_effector_jacobian(chain, q - h * e) @ dq) / (2 * h)
                                   for e in np.eye(3)])
            np.testing.assert_allclose(Jv, fdv, atol=1e-7)

    def test_inverse_kinematics(self):
        chain = KinematicChain((0.5, 0.4))
        q = inverse_kinematics(chain, [0.3, 0.5], q0=[0.5, 0.5])
        np.testing.assert_allclose(end_effector(chain, q), [0.3, 0.5], atol=1e-9)

    def test_inverse_kinematics_escapes_stationary_seed(self):
        # at this seed the error is orthogonal to the Jacobian range, so plain DLS never moves
        chain = KinematicChain((0.5, 0.45))
        seed = [3.42710088, 3.98787918]
        q = inverse_kinematics(chain, [0.5, 0.05], q0=seed)
        np.testing.assert_allclose(end_effector(chain, q), [0.5, 0.05], atol=1e-9)
        # every reachable target is solved from arbitrary seeds
        rng = np.random.default_rng(0)
        for _ in range(50):
            r, a = rng.uniform(0.1, 0.9), rng.uniform(-np.pi, np.pi)
            target = r * np.array([np.cos(a), np.sin(a)])
            q = inverse_kinematics(chain, target, q0=rng.uniform(-np.pi, np.pi, 2))
            np.testing.assert_allclose(end_effector(chain, q), target, atol=1e-9)


class TestMinSeparation:
    def test_point_robot(self):
        sep = min_separation(forward_kinematics(KinematicChain(), [0.0, 0.0]), [Sphere([1.0, 0.0], 0.2)])
        assert sep.distance == pytest.approx(0.8)
        np.testing.assert_allclose(sep.p_human, [0.8, 0.0])

    def test_overlap_negative(self):
        sep = min_separation([Capsule([0, 0], [1, 0], 0.1)], [Sphere([0.5, 0.15], 0.2)])
        assert sep.distance < 0

    def test_empty_rejected(self):
        with pytest.raises(InputDomainError):
            min_separation([], [Sphere([0, 0], 1.0)])

    def test_random_vs_dense_sampling(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            chain = KinematicChain(tuple(rng.uniform(0.2, 0.6, size=3)), link_radius=0.03)
            caps = forward_kinematics(chain, rng.uniform(-np.pi, np.pi, 3))
            spheres = [Sphere(rng.uniform(-1, 1, 2), rng.uniform(0.05, 0.2)) for _ in range(3)]
            best = np.inf
            t = np.linspace(0.0, 1.0, 10_000)[:, None]
            for cap in caps:
                pts = cap.a + t * (cap.b - cap.a)
                for sph in spheres:
                    gap = np.min(np.linalg.norm(pts - sph.center, axis=1)) - cap.radius - sph.radius
                    best = min(best, gap)
            sep = min_separation(caps, spheres)
            assert abs(sep.distance - best) < 1e-6


class TestRotation:
    def test_identity(self):
        np.testing.assert_allclose(project_to_rotation(np.eye(3)), np.eye(3))

    def test_scaled_rotation(self):
        R = rotation_2d(0.7)
        np.testing.assert_allclose(project_to_rotation(2.0 * R), R, atol=1e-14)

    def test_reflection_corrected(self):
        Q = project_to_rotation(np.diag([1.0, 2.0, -3.0]))
        assert np.linalg.det(Q) == pytest.approx(1.0)

    def test_rank_deficient(self):
        with pytest.raises(DegenerateInputError):
            project_to_rotation(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_grid_search_oracle_2d(self):
        rng = np.random.default_rng(5)
        thetas = np.arange(-np.pi, np.pi, 1e-4)
        c, s = np.cos(thetas), np.sin(thetas)
        for _ in range(20):
            M = rng.normal(size=(2, 2))
            Q = project_to_rotation(M)
            assert np.linalg.norm(Q.T @ Q - np.eye(2)) < 1e-10
            # ||M - R||_F^2 = const - 2 tr(R^T M)
            score = c * (M[0, 0] + M[1, 1]) + s * (M[1, 0] - M[0, 1])
            t_best = thetas[np.argmax(score)]
            np.testing.assert_allclose(Q, rotation_2d(t_best), atol=2e-4)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
    def test_so3_membership(self, xs):
        M = np.array(xs).reshape(3, 3)
        if np.linalg.svd(M, compute_uv=False)[-1] < 1e-6:
            return
        Q = project_to_rotation(M)
        assert np.linalg.norm(Q.T @ Q - np.eye(3)) < 1e-10
        assert np.linalg.det(Q) == pytest.approx(1.0, abs=1e-10)


def test_double_integrator_exact():
    A, B = double_integrator_matrices(2, 0.1)
    s = RobotState([0.0, 1.0], [0.5, -0.5])
    u = np.array([1.0, 2.0])
    nxt = integrate(s, u, 0.1)
    np.testing.assert_allclose(np.concatenate([nxt.q, nxt.dq]), A @ s.vector + B @ u, atol=1e-15)
    # closed form of constant acceleration
    np.testing.assert_allclose(nxt.q, s.q + 0.1 * s.dq + 0.005 * u)
