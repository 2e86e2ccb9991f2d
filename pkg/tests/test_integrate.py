import time

import numpy as np
import pytest

from symode import expressions as ex
from symode.integrate import IvpConfig, IvpFailure, Trajectory, compile_rhs, solve_ivp


def harmonic_oscillator():
    return ex.OdeSystem((ex.var(1), ex.neg(ex.var(0))))


def expm_series(A, t, terms=20):
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for n in range(1, terms):
        term = term @ (A * t) / n
        out = out + term
    return out


class TestSolve:
    def test_harmonic_oscillator_endpoint(self):
        grid = np.linspace(0, 2 * np.pi, 100)
        traj = solve_ivp(harmonic_oscillator(), [1.0, 0.0], grid)
        assert isinstance(traj, Trajectory)
        assert np.abs(traj.states[-1] - [1.0, 0.0]).max() <= 1e-3

    def test_constant_rhs_is_exact(self):
        system = ex.OdeSystem((ex.const(0.0),))
        traj = solve_ivp(system, [5.0], np.linspace(0, 10, 40))
        assert np.all(traj.states == 5.0)

    def test_finite_time_blow_up_fails(self):
        system = ex.OdeSystem((ex.pow2(ex.var(0)),))  # solution 1/(1-t)
        result = solve_ivp(system, [1.0], np.linspace(0, 2, 50))
        assert isinstance(result, IvpFailure)
        assert result.reason in ("non-finite", "step-underflow")

    def test_non_finite_at_start(self):
        system = ex.OdeSystem((ex.log(ex.var(0)),))
        result = solve_ivp(system, [-1.0], np.linspace(0, 1, 10))
        assert isinstance(result, IvpFailure) and result.reason == "non-finite"

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            solve_ivp(harmonic_oscillator(), [1.0, 0.0], [0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            solve_ivp(harmonic_oscillator(), [1.0, 0.0], [0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            solve_ivp(harmonic_oscillator(), [1.0], np.linspace(0, 1, 10))

    def test_callable_rhs_supported(self):
        traj = solve_ivp(lambda x: -x, np.array([2.0]), np.linspace(0, 1, 20))
        assert isinstance(traj, Trajectory)
        assert traj.states[-1, 0] == pytest.approx(2.0 * np.exp(-1.0), rel=1e-3)


class TestAccuracy:
    def test_halving_tolerance_never_increases_error(self):
        grid = np.linspace(0, 2 * np.pi, 100)
        errors = []
        for rtol in (1e-3, 5e-4, 2.5e-4, 1.25e-4, 1e-5, 1e-6):
            traj = solve_ivp(harmonic_oscillator(), [1.0, 0.0], grid, IvpConfig(rtol=rtol))
            errors.append(np.abs(traj.states[-1] - [1.0, 0.0]).max())
        assert all(b <= a for a, b in zip(errors, errors[1:]))
        assert errors[-1] <= 1e-5

    def test_matrix_exponential_oracle(self):
        rng = np.random.default_rng(42)
        rtol = 1e-3
        for _ in range(20):
            A = rng.uniform(-1, 1, (2, 2))
            A -= (np.linalg.eigvals(A).real.max() + 0.3) * np.eye(2)
            A /= max(1.0, np.abs(np.linalg.eigvals(A)).max())  # series converges on [0, 5]
            x0 = rng.uniform(-2, 2, 2)
            system = ex.OdeSystem(
                tuple(
                    ex.add(
                        ex.mul(ex.const(A[i, 0]), ex.var(0)),
                        ex.mul(ex.const(A[i, 1]), ex.var(1)),
                    )
                    for i in range(2)
                )
            )
            grid = np.linspace(0, 5, 26)
            traj = solve_ivp(system, x0, grid, IvpConfig(rtol=rtol))
            assert isinstance(traj, Trajectory)
            reference = np.stack([expm_series(A, t) @ x0 for t in grid])
            err = np.max(np.abs(traj.states - reference) / (1.0 + np.abs(reference)))
            assert err <= 10 * rtol

    def test_dense_output_between_steps(self):
        # states on a fine grid must match the analytic circle closely
        grid = np.linspace(0, 2 * np.pi, 500)
        traj = solve_ivp(harmonic_oscillator(), [1.0, 0.0], grid, IvpConfig(rtol=1e-6))
        expected = np.stack([np.cos(grid), -np.sin(grid)], axis=1)
        assert np.abs(traj.states - expected).max() <= 1e-5


class TestBudgets:
    def test_wall_clock_budget(self):
        calls = [0]

        def slow(x):
            calls[0] += 1
            time.sleep(0.002)
            return np.array([50.0 * np.sin(x[0])])

        start = time.monotonic()
        result = solve_ivp(slow, np.array([1.0]), np.linspace(0, 1000, 50), IvpConfig(budget=0.2))
        elapsed = time.monotonic() - start
        assert isinstance(result, IvpFailure) and result.reason == "budget-exceeded"
        assert elapsed < 0.2 + 0.5  # budget plus one slow step and slack

    def test_max_steps(self):
        config = IvpConfig(max_steps=5, budget=None)
        result = solve_ivp(
            lambda x: np.array([50.0 * np.cos(10 * x[0])]),
            np.array([0.0]),
            np.linspace(0, 100, 50),
            config,
        )
        assert isinstance(result, IvpFailure) and result.reason == "max-steps"


class TestTrajectoryType:
    def test_invariants(self):
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.0, 0.0]), states=np.zeros((2, 1)))
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.0, 1.0]), states=np.array([[np.nan], [1.0]]))
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.0]), states=np.zeros((1, 1)))

    def test_arrays_read_only(self):
        traj = Trajectory(times=np.array([0.0, 1.0]), states=np.zeros((2, 1)))
        with pytest.raises(ValueError):
            traj.states[0, 0] = 3.0


class TestCompiledRhs:
    def test_matches_eval_system(self):
        system = ex.OdeSystem(
            (
                ex.add(ex.sin(ex.var(0)), ex.div(ex.const(1.0), ex.var(1))),
                ex.mul(ex.sqrt(ex.var(1)), ex.exp(ex.neg(ex.var(0)))),
            )
        )
        f = compile_rhs(system)
        rng = np.random.default_rng(3)
        with np.errstate(all="ignore"):  # compiled RHS relies on the caller's errstate
            for _ in range(50):
                x = rng.uniform(-2, 2, 2)
                a, b = f(x), ex.eval_system(system, x)
                both_nan = np.isnan(a) & np.isnan(b)
                assert np.all(both_nan | (a == b))
