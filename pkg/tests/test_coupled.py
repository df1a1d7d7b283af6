"""Decomposition pipeline, direct oracle, diagnostics, time loop."""

import numpy as np
import pytest

from mixflow.coupled import (
    CoupledProblem,
    direct_cfl_limit,
    init_decomposition,
    run,
    step_decomposed,
    step_direct,
    _state_from_rho,
)
from mixflow.errors import CFLError, SolverError
from mixflow.grid import ScalarField, SpeciesField, StructuredGrid
from mixflow.mixture import (
    LinearCombination,
    MixtureModel,
    NumberDensityForm,
    PowerLaw,
    SpeciesSet,
)
from mixflow.parabolic import ParabolicState, step_implicit
from mixflow.transport import ReactionField


def two_species_model(coeffs=(1.0, 1.0), alpha=1.0):
    return MixtureModel(
        SpeciesSet((1.0,) * len(coeffs)), PowerLaw(1.0, alpha), LinearCombination(coeffs)
    )


def bump_segregated(n=64, L=1.0, base=1.5, amp=0.5, center=0.35):
    """Gaussian bump in w with species segregated left/right.

    The bump is off-center so the species interface at L/2 sits in a region
    of nonzero velocity (a centered bump would leave the interface at the
    stagnation point and make transport trivially conservative there).
    """
    g = StructuredGrid((n,), (L,))
    x = g.cell_centers()[:, 0]
    w = base + amp * np.exp(-((x - center * L) ** 2) / (2 * (0.12 * L) ** 2))
    u1 = (x < 0.5 * L).astype(float)
    rho = np.stack([w * u1, w * (1.0 - u1)])
    return g, SpeciesField(g, rho)


class TestInitDecomposition:
    def test_uniform_split(self):
        g = StructuredGrid((8,), (1.0,))
        model = two_species_model()
        rho0 = SpeciesField(g, np.full((2, 8), 2.0))
        st = init_decomposition(rho0, model)
        assert np.all(st.w.values == 4.0)
        assert np.all(st.u.values == 0.5)

    def test_constraint_exact_after_split(self):
        rng = np.random.default_rng(0)
        g = StructuredGrid((32,), (1.0,))
        model = two_species_model(coeffs=(1.0, 2.0))
        rho0 = SpeciesField(g, rng.uniform(0.5, 2.0, (2, 32)))
        st = init_decomposition(rho0, model)
        dev = np.max(np.abs(model.eval_lambda(st.u.values) - 1.0))
        assert dev <= 1e-14

    def test_vacuum_cell_named(self):
        g = StructuredGrid((8,), (1.0,))
        model = two_species_model()
        vals = np.full((2, 8), 1.0)
        vals[:, 5] = 0.0
        with pytest.raises(ValueError, match=r"vacuum cell at index \(5,\)"):
            init_decomposition(SpeciesField(g, vals), model)

    def test_negative_density_rejected(self):
        g = StructuredGrid((4,), (1.0,))
        model = two_species_model()
        vals = np.full((2, 4), 1.0)
        vals[0, 1] = -0.1
        with pytest.raises(ValueError, match="nonnegative"):
            init_decomposition(SpeciesField(g, vals), model)


class TestStepDecomposed:
    def test_uniform_state_is_fixed_point(self):
        g = StructuredGrid((16,), (1.0,))
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(SpeciesField(g, np.full((2, 16), 2.0)), model)
        out = step_decomposed(st, 0.01, problem)
        assert np.array_equal(out.rho.values, st.rho.values)

    def test_single_species_degenerates_to_parabolic(self):
        n = 96
        g = StructuredGrid((n,), (1.0,))
        model = MixtureModel(SpeciesSet((1.0,)), PowerLaw(1.0, 1.0), LinearCombination((2.0,)))
        problem = CoupledProblem(grid=g, model=model)
        x = g.cell_centers()[:, 0]
        rho0 = SpeciesField(g, (1.0 + 0.4 * np.cos(np.pi * x))[None, :])
        st = init_decomposition(rho0, model)
        pp = problem.parabolic()
        ps = ParabolicState.from_w(0.0, ScalarField(g, model.eval_lambda(rho0.values)), pp)
        for _ in range(25):
            st = step_decomposed(st, 0.002, problem)
            ps = step_implicit(ps, 0.002, pp)
        assert np.max(np.abs(st.rho.values[0] - ps.w.values / 2.0)) <= 1e-12

    def test_reconstruction_identities(self):
        g, rho0 = bump_segregated(48)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(rho0, model)
        for _ in range(10):
            st = step_decomposed(st, 0.005, problem)
            np.testing.assert_allclose(st.rho.values, st.w.values * st.u.values, rtol=1e-13)
            assert np.max(np.abs(model.eval_lambda(st.rho.values) - st.w.values)) <= 1e-12

    def test_two_species_mass_conservation_200_steps(self):
        g, rho0 = bump_segregated(64)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(rho0, model)
        m0 = rho0.integrals()
        for _ in range(200):
            st = step_decomposed(st, 0.002, problem)
        drift = np.max(np.abs(st.rho.integrals() - m0) / np.abs(m0))
        assert drift <= 1e-10

    def test_mass_fixer_off_shows_drift(self):
        # documents why the conservative remap exists
        g, rho0 = bump_segregated(64)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model, mass_fixer=False)
        st = init_decomposition(rho0, model)
        m0 = rho0.integrals()
        for _ in range(50):
            st = step_decomposed(st, 0.002, problem)
        drift = np.max(np.abs(st.rho.integrals() - m0) / np.abs(m0))
        assert drift > 1e-10

    def test_fraction_envelope(self):
        g, rho0 = bump_segregated(48)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(rho0, model)
        for _ in range(60):
            st = step_decomposed(st, 0.004, problem)
        assert st.u.values.min() >= -1e-14
        assert st.u.values.max() <= 1.0 + 1e-14

    def test_gravity_constant_fraction_mode(self):
        g = StructuredGrid((32,), (1.0,))
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model, gravity=(1.0, (-0.4,)))
        rho0 = SpeciesField(g, np.stack([np.full(32, 1.2), np.full(32, 0.8)]))
        st = init_decomposition(rho0, model)
        m0 = rho0.integrals()
        for _ in range(40):
            st = step_decomposed(st, 0.005, problem)
        # mass conserved; density piles downward (negative g direction)
        assert np.max(np.abs(st.rho.integrals() - m0) / m0) <= 1e-10
        assert st.w.values[0] > st.w.values[-1]


class TestReactionCoupling:
    def test_zero_rate_matches_nonreactive_bitwise(self):
        g, rho0 = bump_segregated(48)
        model = two_species_model()
        rf = ReactionField(lambda rho: np.zeros_like(rho), model)
        base = CoupledProblem(grid=g, model=model, mass_fixer=False)
        react = CoupledProblem(grid=g, model=model, reaction=rf, mass_fixer=False)
        st_a = init_decomposition(rho0, model)
        st_b = init_decomposition(rho0, model)
        for _ in range(5):
            st_a = step_decomposed(st_a, 0.004, base)
            st_b = step_decomposed(st_b, 0.004, react)
        assert st_b.picard_iters == 1
        assert np.array_equal(st_a.rho.values, st_b.rho.values)
        assert np.array_equal(st_a.w.values, st_b.w.values)

    def test_conversion_reaction_transfers_mass(self):
        g = StructuredGrid((32,), (1.0,))
        model = two_species_model()
        mu = 0.8
        rf = ReactionField(lambda rho: np.stack([-mu * rho[0], mu * rho[0]]), model)
        problem = CoupledProblem(grid=g, model=model, reaction=rf)
        rho0 = SpeciesField(g, np.stack([np.full(32, 1.5), np.full(32, 0.5)]))
        st = init_decomposition(rho0, model)
        t_end = 0.2
        nst = 40
        for _ in range(nst):
            st = step_decomposed(st, t_end / nst, problem)
        # compensating exchange: w untouched, species 1 decays exponentially
        assert np.max(np.abs(st.w.values - 2.0)) <= 1e-12
        exact = 1.5 * np.exp(-mu * t_end)
        assert np.max(np.abs(st.rho.values[0] - exact)) <= 1e-4
        total0 = np.sum(rho0.integrals())
        assert abs(np.sum(st.rho.integrals()) - total0) <= 1e-10 * total0
        assert np.min(st.u.values) >= -1e-12


class TestStepDirect:
    def test_uniform_state_unchanged(self):
        g = StructuredGrid((16,), (1.0,))
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(SpeciesField(g, np.full((2, 16), 2.0)), model)
        out = step_direct(st, 1e-5, problem)
        assert np.array_equal(out.values, st.rho.values)

    def test_cfl_violation_raises(self):
        g, rho0 = bump_segregated(64)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(rho0, model)
        limit = direct_cfl_limit(rho0.values, problem)
        with pytest.raises(CFLError):
            step_direct(st, 2.0 * limit, problem)

    def test_single_species_matches_implicit_solver(self):
        n = 256
        g = StructuredGrid((n,), (1.0,))
        model = MixtureModel(SpeciesSet((1.0,)), PowerLaw(1.0, 1.0), LinearCombination((1.0,)))
        problem = CoupledProblem(grid=g, model=model)
        x = g.cell_centers()[:, 0]
        rho0 = SpeciesField(g, (2.0 + 0.5 * np.cos(np.pi * x))[None, :])
        T = 0.003
        dt = direct_cfl_limit(rho0.values, problem)
        nst = int(np.ceil(T / dt))
        dt = T / nst
        st = init_decomposition(rho0, model)
        for _ in range(nst):
            st = _state_from_rho(step_direct(st, dt, problem), st.t + dt, problem)
        pp = problem.parabolic()
        ps = ParabolicState.from_w(0.0, ScalarField(g, rho0.values[0].copy()), pp)
        for _ in range(nst):
            ps = step_implicit(ps, dt, pp)
        assert np.max(np.abs(st.rho.values[0] - ps.w.values)) <= 1e-3

    def test_picard_mode_close_to_explicit(self):
        g, rho0 = bump_segregated(32)
        model = two_species_model()
        expl = CoupledProblem(grid=g, model=model)
        impl = CoupledProblem(grid=g, model=model, direct_mode="picard")
        st = init_decomposition(rho0, model)
        dt = 0.5 * direct_cfl_limit(rho0.values, expl)
        a = step_direct(st, dt, expl)
        b = step_direct(st, dt, impl)
        assert np.max(np.abs(a.values - b.values)) <= 5.0 * dt * np.max(np.abs(a.values))

    def test_mass_conserved(self):
        g, rho0 = bump_segregated(48)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        st = init_decomposition(rho0, model)
        dt = 0.9 * direct_cfl_limit(rho0.values, problem)
        m0 = rho0.integrals()
        for _ in range(50):
            st = _state_from_rho(step_direct(st, dt, problem), st.t + dt, problem)
        assert np.max(np.abs(st.rho.integrals() - m0) / m0) <= 1e-12


class TestOracleAgreement:
    def test_gap_shrinks_under_refinement(self):
        model = two_species_model()
        T = 0.003
        gaps = []
        for n in (32, 64, 128):
            g = StructuredGrid((n,), (1.0,))
            x = g.cell_centers()[:, 0]
            w = 2.0 + 0.6 * np.cos(np.pi * x)
            u1 = 0.5 + 0.3 * np.cos(2 * np.pi * x)
            rho0 = SpeciesField(g, np.stack([w * u1, w * (1 - u1)]))
            problem = CoupledProblem(grid=g, model=model)
            dec, _ = run(problem, rho0, T, 0.0005 * (32.0 / n))
            dt_cfl = direct_cfl_limit(rho0.values, problem)
            nst = int(np.ceil(T / dt_cfl))
            dirc, _ = run(problem, rho0, T, T / nst, stepper="direct")
            gaps.append(
                float(np.sum(np.abs(dec.rho.values - dirc.rho.values)) * g.cell_volume)
            )
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[0] / gaps[1] >= 1.3
        assert gaps[1] / gaps[2] >= 1.3


class TestRunLoop:
    def test_zero_duration(self):
        g, rho0 = bump_segregated(16)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        state, log = run(problem, rho0, 0.0, 0.01)
        assert len(log) == 0
        assert state.t == 0.0

    def test_restart_matches_full_run_bitwise(self):
        g, rho0 = bump_segregated(32)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        full, _ = run(problem, rho0, 0.04, 0.004)
        half, _ = run(problem, rho0, 0.02, 0.004)
        resumed, _ = run(problem, half, 0.04, 0.004)
        assert np.array_equal(full.rho.values, resumed.rho.values)
        assert np.array_equal(full.w.values, resumed.w.values)

    def test_free_energy_decays(self):
        g, rho0 = bump_segregated(48)
        model = two_species_model(alpha=2.0)
        problem = CoupledProblem(grid=g, model=model)
        _, log = run(problem, rho0, 0.05, 0.002)
        fe = log.column("free_energy")
        assert np.all(np.diff(fe) <= 1e-12 * np.abs(fe[:-1]))
        assert np.all(log.column("dissipation") >= 0.0)

    def test_dt_halving_on_newton_failure(self):
        # a tiny iteration budget forces step rejections; the loop recovers
        g, rho0 = bump_segregated(32, amp=0.8)
        model = two_species_model(alpha=2.0)
        problem = CoupledProblem(grid=g, model=model, max_iters=3)
        state, log = run(problem, rho0, 0.02, 0.02)
        assert state.t == pytest.approx(0.02)
        assert len(log) >= 2  # at least one halving happened
        assert log.records[0].dt < 0.02

    def test_dt_floor_raises_solver_error(self):
        g, rho0 = bump_segregated(32, amp=0.8)
        model = two_species_model(alpha=2.0)
        problem = CoupledProblem(grid=g, model=model, max_iters=1)
        with pytest.raises(SolverError, match="dt fell below"):
            run(problem, rho0, 0.02, 0.02, dt_min=0.019)

    def test_snapshot_schedule(self):
        g, rho0 = bump_segregated(16)
        model = two_species_model()
        problem = CoupledProblem(grid=g, model=model)
        seen = []
        run(problem, rho0, 0.01, 0.001, output_every=4,
            on_snapshot=lambda step, st: seen.append(step))
        assert seen[0] == 0
        assert 4 in seen and 8 in seen and seen[-1] == 10


class TestNonlinearExtension:
    def test_power_mean_pipeline_runs(self):
        g = StructuredGrid((48,), (1.0,))
        model = MixtureModel(
            SpeciesSet((1.0, 1.0)), PowerLaw(1.0, 2.0),
            NumberDensityForm((1.0, 1.0), "power_mean", alpha_h=2.0),
        )
        x = g.cell_centers()[:, 0]
        w = 1.5 + 0.3 * np.exp(-((x - 0.5) ** 2) / 0.02)
        u1 = 0.4 + 0.2 * np.sin(2 * np.pi * x)
        base = np.stack([u1, 1 - u1])
        base = base / model.eval_lambda(base)
        rho0 = SpeciesField(g, base * w)
        problem = CoupledProblem(grid=g, model=model)
        assert problem.constraint_mode == "renormalize"
        state, log = run(problem, rho0, 0.05, 0.005)
        assert float(np.max(log.column("max_lambda_dev"))) <= 1e-8
        np.testing.assert_allclose(
            model.eval_lambda(state.rho.values), state.w.values, atol=1e-8
        )
