import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psmflow.dem import (
    ContactHistory,
    DemParams,
    ForceLedger,
    Particle,
    Plane,
    apply_external_forces,
    contact_force,
    contact_forces,
    dem_subcycle,
    integrate_post_force,
    integrate_pre_force,
    interaction_range,
    lubrication_correction,
    lubrication_forces,
    rebuild_linked_cells,
    sphere_volume,
    wall_contact_force,
)
from psmflow.errors import ConfigError, NumericalError, SynchronizationError


def _p(pid, x, r=1.0, m=1.0, **kw):
    return Particle(pid, np.array(x, float), r, m, **kw)


def floor_plane():
    return Plane(-1, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


class TestParticle:
    def test_inertia_solid_sphere(self):
        p = _p(0, [0, 0, 0], r=2.0, m=3.0)
        assert p.inertia == pytest.approx(0.4 * 3.0 * 4.0)

    def test_rejects_bad_radius_and_mass(self):
        with pytest.raises(ConfigError):
            _p(0, [0, 0, 0], r=0.0)
        with pytest.raises(ConfigError):
            _p(0, [0, 0, 0], m=-1.0)

    def test_params_validation(self):
        with pytest.raises(ConfigError):
            DemParams(k_n=-1.0)
        with pytest.raises(ConfigError):
            DemParams(subcycles=0)
        assert DemParams(subcycles=10).dt_p == pytest.approx(0.1)


class TestLinkedCells:
    def test_empty(self):
        grid = rebuild_linked_cells([], np.zeros(3), np.full(3, 10.0), cell_size=2.0)
        assert list(grid.pairs()) == []

    def test_far_pair_not_visited(self):
        ps = [_p(0, [1.0, 1.0, 1.0]), _p(1, [7.0, 1.0, 1.0])]  # 3 diameters apart
        grid = rebuild_linked_cells(ps, np.zeros(3), np.full(3, 20.0))
        assert list(grid.pairs()) == []

    def test_outside_grid_raises(self):
        with pytest.raises(SynchronizationError):
            rebuild_linked_cells([_p(0, [11.0, 1.0, 1.0])], np.zeros(3), np.full(3, 10.0))

    @settings(max_examples=100, deadline=None)
    @given(
        n=st.integers(0, 64),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_pairs_match_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        L = 12.0
        radii = rng.uniform(0.5, 1.0, n)
        ps = [_p(i, rng.uniform(0, L, 3), r=radii[i]) for i in range(n)]
        params = DemParams()
        grid = rebuild_linked_cells(ps, np.zeros(3), np.full(3, L), params=params)
        visited = [tuple(sorted((ps[a].id, ps[b].id))) for a, b in grid.pairs()]
        assert len(visited) == len(set(visited))
        cutoff = interaction_range(radii.max() if n else 1.0, params)
        near = set()
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(ps[i].x - ps[j].x) <= cutoff:
                    near.add((i, j))
        assert near <= set(visited)
        # every cell-visited pair is within the two-cell reach
        for a, b in visited:
            assert np.linalg.norm(ps[a].x - ps[b].x) <= 2 * math.sqrt(3) * grid.cell_size


class TestContactForce:
    def test_head_on_static(self):
        params = DemParams(k_n=100.0)
        a = _p(0, [0, 0, 0])
        b = _p(1, [1.99, 0, 0])
        fa, ta, fb, tb = contact_force(a, b, ContactHistory(), params)
        np.testing.assert_allclose(fa, [-1.0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(fb, [1.0, 0, 0], atol=1e-12)
        np.testing.assert_array_equal(ta, 0.0)

    def test_no_overlap_returns_zero(self):
        out = contact_force(_p(0, [0, 0, 0]), _p(1, [2.5, 0, 0]), ContactHistory(), DemParams(k_n=1.0))
        for v in out:
            np.testing.assert_array_equal(v, 0.0)

    def test_coincident_centers(self):
        with pytest.raises(NumericalError):
            contact_force(_p(0, [0, 0, 0]), _p(1, [0, 0, 0]), None, DemParams(k_n=1.0))

    def test_third_law_random(self):
        rng = np.random.default_rng(3)
        params = DemParams(k_n=50.0, d_n=2.0, k_t=20.0, d_t=1.0)
        hist = ContactHistory()
        for k in range(1000):
            a = _p(2 * k, rng.normal(size=3) * 0.1, r=rng.uniform(0.5, 1.5),
                   u=rng.normal(size=3), omega=rng.normal(size=3))
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            rb = rng.uniform(0.5, 1.5)
            b = _p(2 * k + 1, a.x + d * (a.radius + rb - rng.uniform(0.001, 0.2)), r=rb,
                   u=rng.normal(size=3), omega=rng.normal(size=3))
            fa, _, fb, _ = contact_force(a, b, hist, params)
            assert np.all(fa + fb == 0.0)

    def test_swapped_order_identical(self):
        params = DemParams(k_n=50.0, d_n=2.0, k_t=20.0, d_t=1.0)
        a = _p(3, [0, 0, 0], u=[0.1, 0.2, 0.0], omega=[0, 0, 1.0])
        b = _p(7, [1.9, 0.1, 0], u=[-0.1, 0.0, 0.3])
        r1 = contact_force(a, b, ContactHistory(), params)
        r2 = contact_force(b, a, ContactHistory(), params)
        for x, y in zip(r1, (r2[2], r2[3], r2[0], r2[1])):
            assert np.array_equal(x, y)

    def test_tangential_history_two_subcycles(self):
        # constant tangential slip v_t: delta_t accumulates linearly
        params = DemParams(k_n=100.0, k_t=10.0, d_t=0.5, subcycles=10)
        vt = 0.3
        a = _p(0, [0, 0, 0])
        b = _p(1, [1.98, 0, 0], u=[0, -vt, 0])
        hist = ContactHistory()
        contact_force(a, b, hist, params)
        fa, ta, _, _ = contact_force(a, b, hist, params)
        delta = hist.get((0, 1)).delta_t
        np.testing.assert_allclose(delta, [0, 2 * params.dt_p * vt, 0], atol=1e-15)
        ft_expected = -params.k_t * delta - params.d_t * np.array([0, vt, 0])
        fn_expected = np.array([-params.k_n * 0.02, 0, 0])
        np.testing.assert_allclose(fa, fn_expected + ft_expected, atol=1e-14)
        # torque = (x_cp - x_i) x F_t with x_cp at the overlap midpoint
        lever = np.array([1.0 - 0.01, 0, 0])
        np.testing.assert_allclose(ta, np.cross(lever, ft_expected), atol=1e-14)

    def test_history_reprojected_onto_tangent_plane(self):
        rng = np.random.default_rng(11)
        params = DemParams(k_n=100.0, k_t=10.0)
        a = _p(0, [0, 0, 0])
        b = _p(1, [1.95, 0, 0], u=[0.0, 0.2, 0.1])
        hist = ContactHistory()
        for _ in range(50):
            b.x = b.x + rng.normal(size=3) * 0.01
            b.x = b.x / np.linalg.norm(b.x) * 1.95
            contact_force(a, b, hist, params)
            n = b.x / np.linalg.norm(b.x)
            e = hist.get((0, 1))
            # stored vector is projected before the increment; increment is tangential too
            assert abs(e.delta_t @ n) < 1e-10

    def test_history_purged_on_separation(self):
        params = DemParams(k_n=100.0, k_t=10.0)
        ps = [_p(0, [2.0, 2.0, 2.0]), _p(1, [3.9, 2.0, 2.0], u=[0.0, 0.1, 0.0])]
        hist = ContactHistory()
        lo, hi = np.zeros(3), np.full(3, 10.0)
        for pos, alive in ((3.9, True), (4.5, False)):
            ps[1].x[0] = pos
            grid = rebuild_linked_cells(ps, lo, hi, params=params)
            hist.begin_cycle()
            contact_forces(ps, grid, [], hist, params, ForceLedger())
            hist.purge()
            assert ((0, 1) in hist) is alive


class TestWall:
    def test_static_equilibrium(self):
        m, g, k_n = 2.0, 0.01, 50.0
        params = DemParams(k_n=k_n, d_n=1.0, gravity=[0, 0, -g], rho_fluid=0.0)
        delta = m * g / k_n
        p = _p(0, [5, 5, 1.0 - delta], m=m)
        f, t = wall_contact_force(p, floor_plane(), ContactHistory(), params)
        apply_external_forces([p], params)
        np.testing.assert_allclose(p.f_new + f, 0.0, atol=1e-13)

    def test_elastic_rebound_speed(self):
        v = 0.1
        params = DemParams(k_n=10.0, subcycles=1, dt=0.005)
        p = _p(0, [0, 0, 1.05], u=[0, 0, -v])
        wall = floor_plane()
        hist = ContactHistory()
        lo, hi = np.full(3, -2.0), np.full(3, 5.0)
        for step in range(2000):
            dem_subcycle([p], [wall], hist, params, step, lo, hi)
        assert p.u[2] == pytest.approx(v, rel=1e-3)


def bounce_restitution(m=1.0, k_n=100.0, d_n=1.0, steps_per_contact=100, v=0.1):
    gamma = d_n / (2 * m)
    omega_d = math.sqrt(k_n / m - gamma**2)
    t_c = math.pi / omega_d
    params = DemParams(k_n=k_n, d_n=d_n, subcycles=1, dt=t_c / steps_per_contact)
    p = _p(0, [0, 0, 1.0 + 2 * v * params.dt], m=m, u=[0, 0, -v])
    wall, hist = floor_plane(), ContactHistory()
    lo, hi = np.full(3, -2.0), np.full(3, 5.0)
    touched = False
    for step in range(20 * steps_per_contact):
        dem_subcycle([p], [wall], hist, params, step, lo, hi)
        if p.x[2] < 1.0:
            touched = True
        elif touched:
            break
    return p.u[2] / v, math.exp(-gamma * math.pi / omega_d)


class TestRestitution:
    @pytest.mark.parametrize("d_n", [0.5, 2.0, 5.0])
    def test_damped_bounce_matches_analytic(self, d_n):
        e, e_exact = bounce_restitution(d_n=d_n, steps_per_contact=50)
        assert abs(e - e_exact) / e_exact < 0.02

    def test_undamped_energy(self):
        # ten bounces on a floor under gravity, measured at the apex
        m, k_n, g = 1.0, 1000.0, 1e-2
        t_c = math.pi / math.sqrt(k_n / m)
        params = DemParams(k_n=k_n, subcycles=1, dt=t_c / 60, gravity=[0, 0, -g], rho_fluid=0.0)
        p = _p(0, [0, 0, 1.5], m=m)
        wall, hist = floor_plane(), ContactHistory()
        lo, hi = np.full(3, -2.0), np.full(3, 5.0)

        def energy():
            delta = max(0.0, 1.0 - p.x[2])
            return 0.5 * m * p.u @ p.u + m * g * p.x[2] + 0.5 * k_n * delta**2

        e0 = energy()
        bounces, inside, step = 0, False, 0
        worst = 0.0
        while bounces < 10:
            dem_subcycle([p], [wall], hist, params, step, lo, hi)
            step += 1
            worst = max(worst, abs(energy() - e0) / e0)
            if p.x[2] < 1.0:
                inside = True
            elif inside:
                inside = False
                bounces += 1
        assert worst < 0.01


class TestVerlet:
    def test_drift_without_force(self):
        p = _p(0, [1, 2, 3], u=[0.5, -0.25, 0.125])
        integrate_pre_force([p], 0.1)
        np.testing.assert_allclose(p.x, [1.05, 1.975, 3.0125], rtol=0, atol=1e-15)

    def test_constant_force_exact(self):
        dt = 0.1
        f = np.array([0.5, -0.25, 0.125])
        m = 2.0
        p = _p(0, [0, 0, 0], m=m, u=[0.25, 0.5, -0.5])
        p.f_old[:] = f  # force evaluated at the initial state
        x0, u0 = p.x.copy(), p.u.copy()
        n = 10_000
        for _ in range(n):
            integrate_pre_force([p], dt)
            p.f_new += f
            integrate_post_force([p], dt)
        t = n * dt
        x_exact = x0 + u0 * t + 0.5 * (f / m) * t * t
        np.testing.assert_allclose(p.x, x_exact, rtol=1e-12)
        np.testing.assert_allclose(p.u, u0 + f / m * t, rtol=1e-12)

    @pytest.mark.parametrize("n", [1000, 10_000])
    def test_harmonic_energy(self, n):
        k, m, dt = 1.0, 1.0, 0.01
        p = _p(0, [1.0, 0, 0], m=m)
        e0 = 0.5 * k
        worst = 0.0
        for _ in range(n):
            integrate_pre_force([p], dt)
            p.f_new += -k * p.x
            integrate_post_force([p], dt)
            e = 0.5 * m * p.u @ p.u + 0.5 * k * p.x @ p.x
            worst = max(worst, abs(e - e0) / e0)
        assert worst < (1e-4 if n == 1000 else 1e-3)

    def test_fixed_particle_does_not_move(self):
        p = _p(0, [1, 1, 1], fixed=True)
        p.f_old[:] = 1.0
        integrate_pre_force([p], 0.1)
        p.f_new += 1.0
        integrate_post_force([p], 0.1)
        np.testing.assert_array_equal(p.x, 1.0)
        np.testing.assert_array_equal(p.u, 0.0)

    def test_angular_update(self):
        p = _p(0, [0, 0, 0], r=1.0, m=2.5)  # I = 1
        p.t_old[:] = [0, 0, 1.0]
        p.t_new[:] = [0, 0, 3.0]
        integrate_post_force([p], 0.5)
        np.testing.assert_allclose(p.omega, [0, 0, 1.0])
        np.testing.assert_array_equal(p.t_old, [0, 0, 3.0])
        np.testing.assert_array_equal(p.t_new, 0.0)


class TestExternal:
    def test_neutral_buoyancy(self):
        p = Particle.from_density(0, [0, 0, 0], 2.0, 1.0)
        apply_external_forces([p], DemParams(gravity=[0, 0, -1.0], rho_fluid=1.0))
        np.testing.assert_allclose(p.f_new, 0.0, atol=1e-14)

    def test_density_ratio(self):
        r, g = 10.0, 1e-5
        p = Particle.from_density(0, [0, 0, 0], r, 1.1)
        apply_external_forces([p], DemParams(gravity=[0, 0, -g], rho_fluid=1.0))
        assert p.f_new[2] == pytest.approx(-0.1 * 4.0 / 3.0 * math.pi * r**3 * g, rel=1e-12)
        assert sphere_volume(r) == pytest.approx(4188.790204786391)

    def test_zero_gravity(self):
        p = Particle.from_density(0, [0, 0, 0], 2.0, 3.0)
        apply_external_forces([p], DemParams())
        np.testing.assert_array_equal(p.f_new, 0.0)


class TestLubrication:
    params = DemParams(nu=0.1, rho_fluid=1.0)

    def test_beyond_cutoff(self):
        a, b = _p(0, [0, 0, 0], r=5.0), _p(1, [10.0 + 1.7, 0, 0], r=5.0, u=[-0.1, 0, 0])
        for v in lubrication_correction(a, b, self.params):
            np.testing.assert_array_equal(v, 0.0)

    def test_in_contact_is_zero(self):
        a, b = _p(0, [0, 0, 0], r=5.0), _p(1, [9.9, 0, 0], r=5.0, u=[-0.1, 0, 0])
        for v in lubrication_correction(a, b, self.params):
            np.testing.assert_array_equal(v, 0.0)

    def test_receding_opposes_separation(self):
        a, b = _p(0, [0, 0, 0], r=5.0), _p(1, [10.5, 0, 0], r=5.0, u=[0.1, 0, 0])
        fa, _, fb, _ = lubrication_correction(a, b, self.params)
        assert fa[0] > 0 and fb[0] < 0
        assert np.all(fa + fb == 0.0)

    def test_magnitude(self):
        r, nu, u = 5.0, 0.1, 0.02
        s = 0.1 * r
        a, b = _p(0, [0, 0, 0], r=r), _p(1, [2 * r + s, 0, 0], r=r, u=[-u, 0, 0])
        fa, ta, _, _ = lubrication_correction(a, b, self.params)
        r_eff = r / 2
        expected = 6 * math.pi * 1.0 * nu * r_eff**2 / s * u
        assert fa[0] == pytest.approx(-expected, rel=1e-13)
        np.testing.assert_array_equal(ta, 0.0)

    def test_gap_clamped(self):
        r = 5.0
        a, b = _p(0, [0, 0, 0], r=r), _p(1, [2 * r + 1e-6, 0, 0], r=r, u=[-0.01, 0, 0])
        fa, _, _, _ = lubrication_correction(a, b, self.params)
        s_min = 0.01 * r / 2
        assert abs(fa[0]) == pytest.approx(6 * math.pi * 0.1 * (r / 2) ** 2 / s_min * 0.01)

    def test_wall(self):
        p = _p(0, [0, 0, 5.5], r=5.0, u=[0, 0, -0.01])
        f, t, _, _ = lubrication_correction(p, floor_plane(), self.params)
        assert f[2] == pytest.approx(6 * math.pi * 0.1 * 25.0 / 0.5 * 0.01)

    def test_disabled(self):
        a, b = _p(0, [0, 0, 0], r=5.0), _p(1, [10.5, 0, 0], r=5.0, u=[0.1, 0, 0])
        off = DemParams(nu=0.1, lubrication=False)
        for v in lubrication_correction(a, b, off):
            np.testing.assert_array_equal(v, 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_internal_forces_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    params = DemParams(k_n=100.0, d_n=1.0, k_t=30.0, d_t=0.5, nu=0.1)
    L = 8.0
    ps = []
    for i in range(40):
        ps.append(_p(i, rng.uniform(0.5, L - 0.5, 3), r=rng.uniform(0.6, 1.0),
                     u=rng.normal(size=3) * 0.1, omega=rng.normal(size=3) * 0.1))
    grid = rebuild_linked_cells(ps, np.zeros(3), np.full(3, L), params=params)
    ledger = ForceLedger()
    hist = ContactHistory()
    lubrication_forces(ps, grid, [], params, ledger)
    contact_forces(ps, grid, [], hist, params, ledger)
    ledger.apply(ps)
    total = sum(p.f_new for p in ps)
    scale = max(1.0, max(np.abs(p.f_new).max() for p in ps))
    assert np.all(np.abs(total) <= 1e-12 * scale)


def test_ledger_order_independent_of_visit_order():
    rng = np.random.default_rng(5)
    params = DemParams(k_n=100.0, d_n=1.0, k_t=30.0, d_t=0.5)
    base = [_p(i, rng.uniform(1, 5, 3), r=0.9, u=rng.normal(size=3) * 0.1) for i in range(30)]
    results = []
    for perm in (np.arange(30), rng.permutation(30)):
        ps = [base[i].copy() for i in perm]
        dem_subcycle(ps, [], ContactHistory(), params, 0, np.zeros(3), np.full(3, 6.0))
        results.append({p.id: (p.x.copy(), p.u.copy(), p.omega.copy()) for p in ps})
    for pid in results[0]:
        for a, b in zip(results[0][pid], results[1][pid]):
            assert np.array_equal(a, b)
