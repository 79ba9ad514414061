import numpy as np
import pytest

from cylbill import paths
from cylbill.geometry import (
    Subspace,
    containment_residual,
    projector_distance,
    subspace_overlap,
)
from cylbill.paths import (
    EuclideanPathSpec,
    NoRealRoot,
    NonAdvancing,
    NoValidPath,
    Tangential,
    TraceError,
    delta_sigma,
    delta_sigma_constrained,
    dvm_matrix,
    is_rich,
    load_path_spec,
    load_sigma,
    neutral_space_detail,
    phi_map,
    sample_spec,
    save_path_spec,
    save_sigma,
    sequence_generator_intersection,
    theta_full_rank,
    theta_rank,
    trace,
    translate_all,
    translate_each,
    w_plus,
    w_plus_tilde,
)
from conftest import (
    make_sphere_system,
    make_two_block_system,
    oracle_path_times,
    random_int_system,
    sample_traceable_spec,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@pytest.fixture
def sphere2():
    return make_sphere_system(2, r=1.0, center=np.zeros(2))


@pytest.fixture
def sphere3():
    return make_sphere_system(3, r=0.5, center=np.zeros(3))


class TestTrace:
    def test_head_on_reflection(self, sphere2):
        # start at the origin, scatterer offset (2, 0): mirror of starting
        # at (-2, 0) against a unit sphere at the origin
        spec = EuclideanPathSpec([1.0, 0.0], [np.array([2.0, 0.0])])
        res = trace(sphere2, [0], spec)
        assert abs(res.times[0] - 1.0) < 1e-14
        assert np.allclose(res.velocities[1], [-1.0, 0.0])
        assert np.allclose(res.normals[0], [-1.0, 0.0])

    def test_miss(self, sphere2):
        spec = EuclideanPathSpec([1.0, 0.0], [np.array([2.0, 2.0])])
        with pytest.raises(NoRealRoot):
            trace(sphere2, [0], spec)

    def test_tangential(self, sphere2):
        spec = EuclideanPathSpec([1.0, 0.0], [np.array([2.0, 1.0])])
        with pytest.raises(Tangential):
            trace(sphere2, [0], spec)

    def test_non_advancing_from_inside(self, sphere2):
        spec = EuclideanPathSpec([1.0, 0.0], [np.array([0.1, 0.0])])
        with pytest.raises(NonAdvancing):
            trace(sphere2, [0], spec)

    def test_behind_is_non_advancing(self, sphere2):
        spec = EuclideanPathSpec([1.0, 0.0], [np.array([-3.0, 0.0])])
        with pytest.raises(NonAdvancing):
            trace(sphere2, [0], spec)

    def test_invariants_on_random_traces(self, rng):
        checked = 0
        for _ in range(60):
            d = int(rng.integers(2, 5))
            system = random_int_system(rng, d)
            m = int(rng.integers(1, 4))
            labels = [int(x) for x in rng.integers(0, system.k, size=m)]
            spec = sample_traceable_spec(system, labels, rng, tries=40)
            if spec is None:
                continue
            res = trace(system, labels, spec)
            checked += 1
            assert np.all(np.diff(np.concatenate([[0.0], res.times])) > 0)
            for j, lab in enumerate(labels):
                dv = res.velocities[j + 1] - res.velocities[j]
                gen = system.generator_space(lab)
                assert np.linalg.norm(gen.basis.T @ dv) < 1e-10
                assert abs(np.linalg.norm(res.velocities[j + 1]) - 1) < 1e-12
                assert abs(np.linalg.norm(res.normals[j]) - 1) < 1e-12
        assert checked >= 15

    def test_against_dense_stepping_oracle(self, rng):
        compared = 0
        while compared < 8:
            d = int(rng.integers(2, 4))
            system = random_int_system(rng, d)
            m = int(rng.integers(1, 4))
            labels = [int(x) for x in rng.integers(0, system.k, size=m)]
            spec = sample_traceable_spec(system, labels, rng, tries=40)
            if spec is None:
                continue
            res = trace(system, labels, spec)
            oracle = oracle_path_times(system, labels, spec)
            if oracle is None:
                continue
            assert np.max(np.abs(oracle - res.times)) < 1e-9
            compared += 1


class TestTranslations:
    def test_translate_all_zero(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        moved = translate_all(sphere3, [0], spec, np.zeros(3))
        assert all(np.array_equal(a, b)
                   for a, b in zip(spec.offsets, moved.offsets))

    def test_translate_all_axis_direction_noop(self):
        system = make_two_block_system()
        labels = [0]
        spec = EuclideanPathSpec(unit([1, 1, 0, 0]),
                                 [np.array([0.9, 0.2])])
        # translations inside the cylinder's own axis change nothing
        a = np.array([0.0, 0.0, 0.7, -0.3])
        moved = translate_all(system, labels, spec, a)
        assert np.allclose(moved.offsets[0], spec.offsets[0])

    def test_time_shift_neutrality_fd(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        vm = trace(sphere3, [0], spec).final_velocity
        eps = 1e-5
        moved = translate_all(sphere3, [0], spec, eps * spec.v0)
        vm2 = trace(sphere3, [0], moved).final_velocity
        assert np.linalg.norm(vm2 - vm) < 10 * eps * eps

    def test_translate_each_consistency(self, sphere3, rng):
        m = 1
        spec = sample_traceable_spec(sphere3, [0], rng)
        a = rng.standard_normal(3) * 0.1
        via_all = translate_all(sphere3, [0], spec, a)
        b = [sphere3.base_space(0).basis
             @ (sphere3.base_space(0).basis.T @ a)]
        via_each = translate_each(sphere3, [0], spec, b)
        assert np.allclose(via_all.offsets[0], via_each.offsets[0])

    def test_translate_each_rejects_off_base(self):
        system = make_two_block_system()
        spec = EuclideanPathSpec(unit([1, 1, 0, 0]), [np.array([0.9, 0.2])])
        with pytest.raises(ValueError):
            translate_each(system, [0], spec, [np.array([0, 0, 1.0, 0])])

    def test_spec_invariants_preserved(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        for _ in range(10):
            spec = translate_all(sphere3, [0], spec,
                                 rng.standard_normal(3) * 0.01)
        assert abs(np.linalg.norm(spec.v0) - 1) < 1e-12


class TestDerivatives:
    def test_axis_intersection_column_zero(self):
        system = make_two_block_system()
        rng = np.random.default_rng(3)
        spec = sample_traceable_spec(system, [0], rng)
        assert spec is not None
        mat = dvm_matrix(system, [0], spec)
        # directions inside the cylinder's axis (e3, e4) change nothing
        assert np.linalg.norm(mat[:, 2]) < 1e-9
        assert np.linalg.norm(mat[:, 3]) < 1e-9

    def test_initial_velocity_in_kernel(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        mat = dvm_matrix(sphere3, [0], spec)
        assert np.linalg.norm(mat @ spec.v0) < 1e-5

    def test_columns_orthogonal_to_final_velocity(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        vm = trace(sphere3, [0], spec).final_velocity
        mat = dvm_matrix(sphere3, [0], spec)
        assert np.max(np.abs(vm @ mat)) < 1e-5

    def test_single_sphere_rank_two_in_3space(self, sphere3, rng):
        ranks = []
        for _ in range(50):
            spec = sample_traceable_spec(sphere3, [0], rng, tries=60)
            if spec is None:
                continue
            try:
                ranks.append(w_plus(sphere3, [0], spec).dim)
            except paths.PerturbationFailure:
                continue
        assert len(ranks) >= 30
        assert all(r == 2 for r in ranks)

    def test_w_plus_contained_in_w_plus_tilde(self, rng):
        done = 0
        while done < 10:
            d = int(rng.integers(2, 5))
            system = random_int_system(rng, d)
            m = int(rng.integers(1, 3))
            labels = [int(x) for x in rng.integers(0, system.k, size=m)]
            spec = sample_traceable_spec(system, labels, rng, tries=40)
            if spec is None:
                continue
            try:
                mat = dvm_matrix(system, labels, spec)
                wp = w_plus(system, labels, spec)
                wpt = w_plus_tilde(system, labels, spec)
            except paths.PerturbationFailure:
                continue
            assert wp.dim == wpt.dim
            # containment at 1e-8 is an FD-noise statement; meaningful only
            # while the derivative magnitude stays moderate
            if np.linalg.norm(mat, 2) <= 100.0:
                assert containment_residual(wp, wpt) < 1e-8
            done += 1

    def test_block_confinement(self):
        system = make_two_block_system()
        rng = np.random.default_rng(11)
        spec = sample_traceable_spec(system, [0, 0], rng, tries=500)
        assert spec is not None
        wp = w_plus(system, [0, 0], spec)
        assert containment_residual(wp, system.base_space(0)) < 1e-6


class TestNeutralSpace:
    def test_kernel_properties(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        rep = neutral_space_detail(sphere3, [0], spec)
        d = 3
        wp = w_plus(sphere3, [0], spec)
        assert rep.kernel.dim + wp.dim == d
        # initial velocity direction is neutral
        assert containment_residual(
            Subspace(3, unit(spec.v0).reshape(3, 1)), rep.kernel) < 1e-4
        assert rep.residual < 1e-6

    def test_axis_intersection_neutral(self):
        system = make_two_block_system()
        rng = np.random.default_rng(7)
        spec = sample_traceable_spec(system, [0], rng)
        rep = neutral_space_detail(system, [0], spec)
        axis = sequence_generator_intersection(system, [0])
        assert containment_residual(axis, rep.kernel) < 1e-6

    def test_pushed_complement_orthogonal_to_w_plus(self, rng):
        done = 0
        while done < 6:
            system = random_int_system(rng, int(rng.integers(2, 5)))
            labels = [int(x) for x in
                      rng.integers(0, system.k, size=int(rng.integers(1, 3)))]
            spec = sample_traceable_spec(system, labels, rng, tries=40)
            if spec is None:
                continue
            try:
                rep = neutral_space_detail(system, labels, spec)
                wp = w_plus(system, labels, spec)
            except paths.PerturbationFailure:
                continue
            res = trace(system, labels, spec)
            pushed = paths.apply_reflections(rep.kernel.basis, res.normals)
            if wp.dim and rep.kernel.dim:
                assert np.max(np.abs(pushed.T @ wp.basis)) < 1e-6
            done += 1


class TestPhiMap:
    def test_antiparallel(self):
        assert np.allclose(phi_map([1.0, 0.0], [[1.0, 0.0]]), [-1.0, 0.0])

    def test_orthogonal_unchanged(self):
        assert np.allclose(phi_map([1.0, 0.0], [[0.0, 1.0]]), [1.0, 0.0])

    def test_norm_preserved(self, rng):
        v = unit(rng.standard_normal(5))
        normals = [unit(rng.standard_normal(5)) for _ in range(7)]
        assert abs(np.linalg.norm(phi_map(v, normals)) - 1) < 1e-14

    def test_reproduces_traced_final_velocity(self, rng):
        done = 0
        while done < 10:
            system = random_int_system(rng, int(rng.integers(2, 5)))
            labels = [int(x) for x in
                      rng.integers(0, system.k, size=int(rng.integers(1, 4)))]
            spec = sample_traceable_spec(system, labels, rng, tries=40)
            if spec is None:
                continue
            res = trace(system, labels, spec)
            assert np.linalg.norm(
                phi_map(spec.v0, res.normals) - res.final_velocity) < 1e-12
            done += 1


class TestThetaRank:
    def test_single_collision_2d_full(self, sphere2, rng):
        spec = sample_traceable_spec(sphere2, [0], rng, box_scale=3.0)
        assert theta_rank(sphere2, [0], spec) == 2 == \
            theta_full_rank(sphere2, [0])

    def test_empty_sequence(self, sphere3):
        spec = EuclideanPathSpec(unit([1, 1, 1]), [])
        assert theta_rank(sphere3, [], spec) == 2

    def test_monte_carlo_full_rank_rate(self, rng):
        system = make_two_block_system()
        labels = [0, 1]
        target = theta_full_rank(system, labels)
        full = 0
        total = 0
        while total < 60:
            spec = sample_traceable_spec(system, labels, rng, tries=60)
            if spec is None:
                continue
            try:
                r = theta_rank(system, labels, spec)
            except paths.PerturbationFailure:
                continue
            total += 1
            if r == target:
                full += 1
        assert full >= int(0.99 * total)


class TestDelta:
    def test_single_sphere_rich(self):
        for d in (2, 3):
            system = make_sphere_system(d, r=0.4, center=np.zeros(d))
            assert delta_sigma(system, [0], 30, seed=101) == d - 1
            assert is_rich(system, [0], 30, seed=101)

    def test_block_confined_not_rich(self):
        system = make_two_block_system()
        val = delta_sigma(system, [0, 0], 40, seed=5)
        assert val <= system.base_space(0).dim - 1
        assert not is_rich(system, [0, 0], 40, seed=5)

    def test_bound_from_axis_intersection(self, rng):
        for _ in range(6):
            system = random_int_system(rng, int(rng.integers(2, 5)))
            m = int(rng.integers(1, 4))
            labels = [int(x) for x in rng.integers(0, system.k, size=m)]
            bound = system.dim - 1 - \
                sequence_generator_intersection(system, labels).dim
            try:
                val = delta_sigma(system, labels, 25,
                                  seed=int(rng.integers(1 << 30)))
            except NoValidPath:
                continue
            assert val <= bound

    def test_monotone_in_samples(self):
        system = make_sphere_system(3, r=0.4, center=np.zeros(3))
        v10 = delta_sigma(system, [0], 10, seed=42)
        v30 = delta_sigma(system, [0], 30, seed=42)
        assert v30 >= v10

    def test_deterministic(self):
        system = make_sphere_system(3, r=0.4, center=np.zeros(3))
        a = delta_sigma(system, [0], 20, seed=7)
        b = delta_sigma(system, [0], 20, seed=7)
        assert a == b

    def test_constrained_leq_unconstrained_and_equal_generic(self, rng):
        system = make_sphere_system(3, r=0.5, center=np.zeros(3))
        base = sample_traceable_spec(system, [0], rng)
        un = delta_sigma(system, [0], 40, seed=9)
        con = delta_sigma_constrained(system, [0], base, 40, seed=9)
        assert con <= un
        assert con == un

    def test_all_failures_raise(self):
        system = make_sphere_system(2, r=1e-6, center=np.zeros(2))
        # offsets box ~ 3e-6 around the origin: the path always starts inside
        with pytest.raises(NoValidPath):
            delta_sigma(system, [0], 3, seed=1, box_scale=1e-7)


class TestReachabilityMatch:
    """Small translations of all cylinders and independent per-cylinder
    translations reach the same nearby final velocities."""

    def test_uniform_reached_by_independent(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        base_vm = trace(sphere3, [0], spec).final_velocity
        for _ in range(20):
            a = 1e-4 * rng.standard_normal(3)
            target = trace(sphere3, [0],
                           translate_all(sphere3, [0], spec, a)).final_velocity
            b = [sphere3.base_space(0).basis
                 @ (sphere3.base_space(0).basis.T @ a)]
            via_each = trace(sphere3, [0],
                             translate_each(sphere3, [0], spec, b)
                             ).final_velocity
            assert np.linalg.norm(via_each - target) < 1e-12

    def test_independent_reached_by_uniform_newton(self, sphere3, rng):
        # inverse direction: a nearby per-cylinder perturbation's final
        # velocity is matched by a uniform translation (Newton on the
        # derivative matrix)
        spec = sample_traceable_spec(sphere3, [0], rng)
        base_vm = trace(sphere3, [0], spec).final_velocity
        mat = dvm_matrix(sphere3, [0], spec)
        pinv = np.linalg.pinv(mat, rcond=1e-8)
        hits = 0
        for _ in range(20):
            step = 1e-5 * rng.standard_normal(3)
            b = [sphere3.base_space(0).basis
                 @ (sphere3.base_space(0).basis.T @ step)]
            target = trace(sphere3, [0],
                           translate_each(sphere3, [0], spec, b)
                           ).final_velocity
            a = np.zeros(3)
            cur = spec
            for _ in range(4):
                vm = trace(sphere3, [0], cur).final_velocity
                a = a + pinv @ (target - vm)
                cur = translate_all(sphere3, [0], spec, a)
            vm = trace(sphere3, [0], cur).final_velocity
            if np.linalg.norm(vm - target) < 1e-8:
                hits += 1
        assert hits == 20


class TestAlgebraicSmoothness:
    def test_times_smooth_along_lines(self, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        direction = rng.standard_normal(3)
        h = 1e-4
        ts = []
        for k in range(-25, 26):
            moved = translate_all(sphere3, [0], spec, k * h * direction)
            try:
                ts.append(trace(sphere3, [0], moved).times[0])
            except TraceError:
                pytest.skip("line left the traceable set")
        ts = np.array(ts)
        first = np.diff(ts)
        second = np.diff(ts, 2)
        assert np.max(np.abs(first)) < 1.0           # no jumps
        assert np.max(np.abs(second)) / h ** 2 < 1e4  # bounded curvature


class TestFiles:
    def test_sigma_roundtrip(self, tmp_path):
        p = tmp_path / "sigma.json"
        save_sigma([0, 1, 0, 2], p)
        assert load_sigma(p) == [0, 1, 0, 2]

    def test_spec_roundtrip(self, tmp_path, sphere3, rng):
        spec = sample_traceable_spec(sphere3, [0], rng)
        p = tmp_path / "spec.json"
        save_path_spec(spec, p)
        back = load_path_spec(p)
        assert np.array_equal(back.v0, spec.v0)
        assert all(np.array_equal(a, b)
                   for a, b in zip(back.offsets, spec.offsets))

    def test_sigma_rejects_junk(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "cylbill-sigma", "labels": []}\n')
        from cylbill.model import SystemFormatError

        with pytest.raises(SystemFormatError):
            load_sigma(p)


class TestPhiMapProperties:
    from hypothesis import given, settings
    from hypothesis import strategies as st

    @given(st.integers(2, 6), st.integers(0, 6), st.integers(1, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_reflections_preserve_norm_and_compose(self, d, m, seed):
        r = np.random.default_rng(seed)
        v = r.standard_normal(d)
        v /= np.linalg.norm(v)
        normals = []
        for _ in range(m):
            n = r.standard_normal(d)
            normals.append(n / np.linalg.norm(n))
        out = phi_map(v, normals)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-13
        # applying each reflection twice is the identity
        doubled = phi_map(v, [n for n in normals for _ in range(2)])
        assert np.linalg.norm(doubled - v) < 1e-12
