"""Characteristic tracing, semi-Lagrangian updates, reactions."""

import numpy as np
import pytest

from mixflow.grid import FaceVectorField, ScalarField, SpeciesField, StructuredGrid
from mixflow.mixture import (
    LinearCombination,
    MixtureModel,
    NumberDensityForm,
    PowerLaw,
    SpeciesSet,
)
from mixflow.transport import (
    FractionState,
    InflowData,
    ReactionField,
    VelocitySampler,
    semi_lagrangian_step,
    trace_back,
    transport_with_reaction,
)


def open_grid_1d(n=64, L=1.0):
    return StructuredGrid(
        (n,), (L,), tags={"left": "dirichlet_pressure", "right": "dirichlet_pressure"}
    )


def const_sampler(grid, v, t0, t1):
    faces = [np.full(s.shape, vi) for s, vi in zip(FaceVectorField(grid).components, np.atleast_1d(v))]
    return VelocitySampler(
        grid, FaceVectorField(grid, [f.copy() for f in faces]),
        FaceVectorField(grid, [f.copy() for f in faces]), t0, t1
    )


def linear_two_species():
    return MixtureModel(
        SpeciesSet((1.0, 1.0)), PowerLaw(1.0, 1.0), LinearCombination((1.0, 1.0))
    )


class TestTraceBack:
    def test_zero_velocity_identity(self):
        g = StructuredGrid((32,), (1.0,))
        s = const_sampler(g, 0.0, 0.0, 0.1)
        pts = g.cell_centers()
        tr = trace_back(s, pts, 0.1, 0.0)
        np.testing.assert_array_equal(tr.feet, pts)
        assert not np.any(tr.exited)

    def test_constant_velocity_exact(self):
        g = open_grid_1d()
        s = const_sampler(g, 0.25, 0.0, 0.04)
        pts = np.array([[0.5], [0.7]])
        tr = trace_back(s, pts, 0.04, 0.0)
        np.testing.assert_allclose(tr.feet[:, 0], pts[:, 0] - 0.25 * 0.04, atol=1e-12)

    def test_linear_field_exponential(self):
        # v(x) = x: the backward trace is x * exp(-(t1-t0)); RK2 with 4
        # substeps lands within 1e-6 at x0 = 0.1 (per-substep error O(h^3))
        g = open_grid_1d(n=64, L=1.0)
        faces = np.linspace(0.0, 1.0, 65)
        sampler = VelocitySampler(
            g, FaceVectorField(g, [faces.copy()]), FaceVectorField(g, [faces.copy()]),
            0.0, 0.1,
        )
        tr = trace_back(sampler, np.array([[0.1]]), 0.1, 0.0, n_sub=4, order=2)
        exact = 0.1 * np.exp(-0.1)
        assert abs(tr.feet[0, 0] - exact) <= 1e-6
        # halving the substep cuts the global error by ~4 (second order)
        tr8 = trace_back(sampler, np.array([[0.1]]), 0.1, 0.0, n_sub=8, order=2)
        err4 = abs(tr.feet[0, 0] - exact)
        err8 = abs(tr8.feet[0, 0] - exact)
        assert err8 <= err4 / 3.0

    def test_rk4_beats_rk2(self):
        g = open_grid_1d()
        faces = np.linspace(0.0, 1.0, 65)
        sampler = VelocitySampler(
            g, FaceVectorField(g, [faces.copy()]), FaceVectorField(g, [faces.copy()]),
            0.0, 0.1,
        )
        exact = 0.5 * np.exp(-0.1)
        e2 = abs(trace_back(sampler, np.array([[0.5]]), 0.1, 0.0, order=2).feet[0, 0] - exact)
        e4 = abs(trace_back(sampler, np.array([[0.5]]), 0.1, 0.0, order=4).feet[0, 0] - exact)
        assert e4 < e2 / 50.0

    def test_exit_through_open_side(self):
        g = open_grid_1d(n=16)
        s = const_sampler(g, 1.0, 0.0, 0.5)  # backward trace moves left
        tr = trace_back(s, np.array([[0.2]]), 0.5, 0.0)
        assert tr.exit_side[0] == 0
        assert tr.feet[0, 0] == 0.0
        # crossing happened at x/v = 0.2 backward from t1 = 0.5
        assert tr.exit_time[0] == pytest.approx(0.5 - 0.2, abs=1e-12)

    def test_no_penetration_confines(self):
        g = StructuredGrid((16,), (1.0,))  # closed sides
        vf = np.linspace(-1.0, -1.0, 17)
        vf[0] = 0.0  # the type enforces this anyway
        sampler = VelocitySampler(
            g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]), 0.0, 2.0
        )
        tr = trace_back(sampler, np.array([[0.03125]]), 2.0, 0.0, n_sub=32)
        assert not tr.exited[0]
        assert 0.0 <= tr.feet[0, 0] <= 1.0

    def test_sampled_normal_velocity_vanishes_at_closed_walls(self):
        rng = np.random.default_rng(8)
        g = StructuredGrid((16, 12), (1.0, 1.0))  # all sides closed
        comps = [rng.standard_normal(c.shape) for c in FaceVectorField(g).components]
        v0 = FaceVectorField(g, comps)
        sampler = VelocitySampler(g, v0, v0.copy(), 0.0, 1.0)
        ys = rng.uniform(0.0, 1.0, 20)
        left = sampler(np.column_stack([np.zeros(20), ys]), 0.5)
        right = sampler(np.column_stack([np.ones(20), ys]), 0.5)
        assert np.max(np.abs(left[:, 0])) == 0.0
        assert np.max(np.abs(right[:, 0])) == 0.0
        xs = rng.uniform(0.0, 1.0, 20)
        bottom = sampler(np.column_stack([xs, np.zeros(20)]), 0.5)
        top = sampler(np.column_stack([xs, np.ones(20)]), 0.5)
        assert np.max(np.abs(bottom[:, 1])) == 0.0
        assert np.max(np.abs(top[:, 1])) == 0.0

    def test_reversibility(self):
        rng = np.random.default_rng(4)
        g = StructuredGrid((32,), (1.0,))
        vf = 0.3 * np.sin(np.pi * np.linspace(0, 1, 33))
        fwd = VelocitySampler(
            g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]), 0.0, 0.05
        )
        bwd = VelocitySampler(
            g, FaceVectorField(g, [-vf.copy()]), FaceVectorField(g, [-vf.copy()]), 0.0, 0.05
        )
        pts = rng.uniform(0.2, 0.8, (20, 1))
        feet = trace_back(fwd, pts, 0.05, 0.0, n_sub=8).feet
        back = trace_back(bwd, feet, 0.05, 0.0, n_sub=8).feet
        np.testing.assert_allclose(back, pts, atol=1e-6)

    def test_2d_rotation_stays_bounded(self):
        g = StructuredGrid((24, 24), (1.0, 1.0))
        # solid-body-like rotation about the center
        vx = np.zeros((25, 24))
        vy = np.zeros((24, 25))
        yc = (np.arange(24) + 0.5) / 24
        xc = (np.arange(24) + 0.5) / 24
        vx[:, :] = -(yc[None, :] - 0.5)
        vy[:, :] = (xc[:, None] - 0.5)
        sampler = VelocitySampler(
            g, FaceVectorField(g, [vx.copy(), vy.copy()]),
            FaceVectorField(g, [vx.copy(), vy.copy()]), 0.0, 0.3,
        )
        pts = np.array([[0.7, 0.5]])
        tr = trace_back(sampler, pts, 0.3, 0.0, n_sub=16)
        r0 = np.hypot(0.7 - 0.5, 0.0)
        r1 = np.hypot(tr.feet[0, 0] - 0.5, tr.feet[0, 1] - 0.5)
        assert r1 == pytest.approx(r0, abs=2e-3)


class TestSemiLagrangianStep:
    def test_zero_velocity_identity(self):
        g = StructuredGrid((24,), (1.0,))
        rng = np.random.default_rng(0)
        u = rng.uniform(0.1, 0.9, (2, 24))
        u[1] = 1.0 - u[0]
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        s = const_sampler(g, 0.0, 0.0, 0.1)
        out = semi_lagrangian_step(fs, s, 0.1)
        np.testing.assert_array_equal(out.u.values, u)

    def test_translated_gaussian_accuracy(self):
        L, v, dt, nst = 1.0, 0.3, 0.01, 20
        n = 128
        g = open_grid_1d(n, L)
        x = g.cell_centers()[:, 0]
        w = 0.06

        def bump(c):
            return 0.2 + 0.6 * np.exp(-((x - c) ** 2) / (2 * w**2))

        u1 = bump(0.3)
        fs = FractionState(0.0, SpeciesField(g, np.stack([u1, 1 - u1])), mode="exact_linear")
        inflow = InflowData({"left": np.array([0.2, 0.8]), "right": np.array([0.2, 0.8])})
        for k in range(nst):
            s = const_sampler(g, v, fs.t, fs.t + dt)
            fs = semi_lagrangian_step(fs, s, dt, inflow=inflow)
        exact = bump(0.3 + v * dt * nst)
        err = np.max(np.abs(fs.u.values[0] - exact))
        # per-step interpolation error O(h^2 u'' ) accumulated over nst steps
        h = L / n
        assert err <= 3.0 * nst * h**2 * np.max(np.abs(np.gradient(np.gradient(u1, x), x)))

    def test_linear_constraint_preserved_exactly(self):
        model = linear_two_species()
        g = StructuredGrid((48,), (1.0,))
        rng = np.random.default_rng(1)
        u1 = rng.uniform(0.1, 0.9, 48)
        fs = FractionState(0.0, SpeciesField(g, np.stack([u1, 1 - u1])), mode="exact_linear")
        vf = 0.4 * np.sin(2 * np.pi * np.linspace(0, 1, 49))
        for _ in range(30):
            sampler = VelocitySampler(
                g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]),
                fs.t, fs.t + 0.01,
            )
            fs = semi_lagrangian_step(fs, sampler, 0.01, model=model)
        assert fs.max_constraint_deviation(model) <= 1e-12

    def test_renormalize_mode_nonlinear_constraint(self):
        model = MixtureModel(
            SpeciesSet((1.0, 1.0)), PowerLaw(1.0, 2.0),
            NumberDensityForm((1.0, 1.0), "power_mean", alpha_h=2.0),
        )
        g = StructuredGrid((48,), (1.0,))
        x = g.cell_centers()[:, 0]
        u1 = 0.3 + 0.2 * np.sin(2 * np.pi * x)
        u = np.stack([u1, np.sqrt(np.maximum(1.0 - u1**2, 0.0))])
        u = u / model.eval_lambda(u)
        fs = FractionState(0.0, SpeciesField(g, u), mode="renormalize")
        vf = 0.4 * np.sin(np.pi * np.linspace(0, 1, 49))
        for _ in range(30):
            sampler = VelocitySampler(
                g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]),
                fs.t, fs.t + 0.01,
            )
            fs = semi_lagrangian_step(fs, sampler, 0.01, model=model)
        assert fs.max_constraint_deviation(model) <= 1e-8

    def test_envelope_preserved(self):
        g = StructuredGrid((40,), (1.0,))
        rng = np.random.default_rng(2)
        u1 = rng.uniform(0.2, 0.7, 40)
        u = np.stack([u1, 1 - u1])
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        vf = 0.5 * np.cos(np.pi * np.linspace(0, 1, 41))
        lo, hi = u.min(axis=1), u.max(axis=1)
        for _ in range(50):
            sampler = VelocitySampler(
                g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]),
                fs.t, fs.t + 0.01,
            )
            fs = semi_lagrangian_step(fs, sampler, 0.01)
        for i in range(2):
            assert fs.u.values[i].min() >= lo[i] - 1e-14
            assert fs.u.values[i].max() <= hi[i] + 1e-14

    def test_segregation_band_confined(self):
        n, nst, n_sub = 96, 40, 4
        g = open_grid_1d(n, 1.0)
        x = g.cell_centers()[:, 0]
        u1 = (x < 0.30).astype(float)
        u2 = (x > 0.30 + 3.0 / n).astype(float)  # 2-cell gap
        fs = FractionState(0.0, SpeciesField(g, np.stack([u1, u2])), mode="off")
        inflow = InflowData({"left": np.array([1.0, 0.0]), "right": np.array([0.0, 1.0])})
        for _ in range(nst):
            sampler = const_sampler(g, 0.21, fs.t, fs.t + 0.01)
            fs = semi_lagrangian_step(fs, sampler, 0.01, n_sub=n_sub, inflow=inflow)
        overlap = np.sum(fs.u.values[0] * fs.u.values[1] > 1e-12)
        assert overlap <= 1 + nst * n_sub

    def test_inflow_fractions_applied(self):
        g = open_grid_1d(16)
        u = np.stack([np.full(16, 1.0), np.zeros(16)])
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        inflow = InflowData({"left": np.array([0.25, 0.75])})
        sampler = const_sampler(g, 2.0, 0.0, 0.2)  # feet exit left for x < 0.4
        out = semi_lagrangian_step(fs, sampler, 0.2, inflow=inflow)
        assert out.u.values[0, 0] == 0.25
        assert out.u.values[1, 0] == 0.75

    def test_missing_inflow_raises(self):
        g = open_grid_1d(16)
        u = np.stack([np.full(16, 1.0), np.zeros(16)])
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        sampler = const_sampler(g, 2.0, 0.0, 0.2)
        with pytest.raises(ValueError, match="inflow"):
            semi_lagrangian_step(fs, sampler, 0.2)


class TestReactionField:
    def test_derived_rates_linear_exchange(self):
        model = linear_two_species()
        mu = 0.7
        rf = ReactionField(lambda rho: np.stack([-mu * rho[0], mu * rho[0]]), model)
        w = np.array([2.0])
        u = np.array([[0.3], [0.7]])
        # compensating exchange: volume production f = 0, g = r(wu)/w
        assert rf.f(w, u)[0] == pytest.approx(0.0, abs=1e-15)
        g = rf.g_tilde(w, u)
        assert g[0, 0] == pytest.approx(-mu * 0.3, rel=1e-14)
        assert g[1, 0] == pytest.approx(mu * 0.3, rel=1e-14)

    def test_orthogonality_identity(self):
        rng = np.random.default_rng(3)
        model = MixtureModel(
            SpeciesSet((1.0, 2.0, 0.5)), PowerLaw(1.0, 1.5), LinearCombination((1.0, 0.7, 1.3))
        )
        rf = ReactionField(lambda rho: np.sin(rho) * 0.2, model)
        for _ in range(100):
            u = rng.uniform(0.05, 1.0, (3, 8))
            u = u / model.eval_lambda(u)
            w = rng.uniform(0.5, 3.0, 8)
            assert rf.orthogonality_residual(w, u) <= 1e-10

    def test_quasi_positivity_validation(self):
        model = linear_two_species()
        good = ReactionField(lambda rho: np.stack([-rho[0], rho[0]]), model)
        good.validate()
        bad = ReactionField(lambda rho: np.stack([rho[1], -rho[1]]) * -1.0, model)
        with pytest.raises(ValueError, match="quasi-positive"):
            bad.validate()


class TestTransportWithReaction:
    def test_zero_rate_matches_plain_step_bitwise(self):
        model = linear_two_species()
        g = StructuredGrid((32,), (1.0,))
        rng = np.random.default_rng(5)
        u1 = rng.uniform(0.2, 0.8, 32)
        u = np.stack([u1, 1 - u1])
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        vf = 0.3 * np.sin(np.pi * np.linspace(0, 1, 33))
        sampler = VelocitySampler(
            g, FaceVectorField(g, [vf.copy()]), FaceVectorField(g, [vf.copy()]), 0.0, 0.01
        )
        w0 = ScalarField(g, np.full(32, 2.0))
        w1 = ScalarField(g, np.full(32, 2.0))
        rf = ReactionField(lambda rho: np.zeros_like(rho), model)
        plain = semi_lagrangian_step(fs, sampler, 0.01, model=model)
        reactive = transport_with_reaction(fs, sampler, (w0, w1), 0.01, rf, model)
        assert np.array_equal(plain.u.values, reactive.u.values)

    def test_exponential_decay_oracle(self):
        # stationary medium, du1/dt = -mu u1 with compensating u2
        model = linear_two_species()
        mu = 1.0
        rf = ReactionField(lambda rho: np.stack([-mu * rho[0], mu * rho[0]]), model)
        g = StructuredGrid((8,), (1.0,))
        u0 = 0.4
        fs = FractionState(0.0, SpeciesField(g, np.stack([np.full(8, u0), np.full(8, 1 - u0)])),
                           mode="exact_linear")
        w = ScalarField(g, np.full(8, 2.0))
        dt, nst = 1e-3, 100
        for _ in range(nst):
            sampler = const_sampler(g, 0.0, fs.t, fs.t + dt)
            fs = transport_with_reaction(fs, sampler, (w, w), dt, rf, model, n_sub=1)
        exact = u0 * np.exp(-mu * nst * dt)
        assert np.max(np.abs(fs.u.values[0] - exact)) <= 1e-6
        assert fs.max_constraint_deviation(model) <= 1e-12

    def test_quasi_positive_rate_keeps_nonnegativity(self):
        model = linear_two_species()
        rf = ReactionField(lambda rho: np.stack([rho[1] * 0.5, -rho[1] * 0.5]), model)
        g = StructuredGrid((16,), (1.0,))
        u1 = np.zeros(16)
        u1[:8] = 0.0  # species 1 empty on a subregion
        u1[8:] = 0.3
        u = np.stack([u1, 1 - u1])
        fs = FractionState(0.0, SpeciesField(g, u), mode="exact_linear")
        w = ScalarField(g, np.full(16, 1.5))
        for _ in range(20):
            sampler = const_sampler(g, 0.0, fs.t, fs.t + 0.01)
            fs = transport_with_reaction(fs, sampler, (w, w), 0.01, rf, model)
        assert np.min(fs.u.values) >= -1e-12
