import numpy as np
import pytest

from flowtune.solvers import (SolveConfig, SolverError, SolveTrace, bfgs,
                              direct_substitution, newton, solve, wegstein)

from oracles import affine_fixed_point, random_affine_map


def affine(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    f = lambda x: a @ x + b
    jac = lambda x: a
    return f, jac


def cfg_for(method, **kw):
    defaults = dict(method=method, max_iterations=200, tolerance=1e-10)
    defaults.update(kw)
    return SolveConfig(**defaults)


# -- direct substitution -------------------------------------------------------


def test_direct_contraction_converges_to_two():
    f, _ = affine(0.5, 1.0)
    trace = direct_substitution(f, np.array([0.0]), cfg_for("direct"))
    assert trace.converged
    assert trace.final_x() == pytest.approx(2.0, abs=1e-9)
    assert trace.iterations <= 40


def test_direct_divergence_flagged():
    f, _ = affine(2.0, 1.0)
    trace = direct_substitution(f, np.array([0.0]), cfg_for("direct", max_iterations=100))
    assert trace.diverged and not trace.converged


def test_direct_identity_converges_at_iteration_zero():
    trace = direct_substitution(lambda x: x, np.array([3.0]), cfg_for("direct"))
    assert trace.converged
    assert trace.iterations == 0
    assert trace.residuals == [0.0]


def test_trace_length_is_iterations_plus_one():
    f, _ = affine(0.5, 1.0)
    trace = direct_substitution(f, np.array([0.0]), cfg_for("direct"))
    assert len(trace.xs) == trace.iterations + 1
    assert len(trace.residuals) == len(trace.xs) == len(trace.fs)


def test_direct_nonfinite_marks_failed():
    def f(x):
        return x * np.inf
    trace = direct_substitution(f, np.array([1.0]), cfg_for("direct"))
    assert trace.failed


# -- Wegstein -------------------------------------------------------------------


def test_wegstein_exact_on_affine_after_seed():
    f, _ = affine(0.5, 1.0)
    trace = wegstein(f, np.array([0.0]), cfg_for("wegstein"))
    assert trace.converged
    # seed step gives x1 = 1; the first secant step lands exactly on 2
    np.testing.assert_allclose(trace.xs[1], [1.0])
    np.testing.assert_allclose(trace.xs[2], [2.0], atol=1e-12)


def test_wegstein_solves_locally_divergent_map():
    # f(x) = 2x + 1 diverges under direct substitution; the secant step is
    # exact: x2 = 2*1 - 1*3 = -1 (needs bounds admitting q = 2)
    f, _ = affine(2.0, 1.0)
    cfg = cfg_for("wegstein", wegstein_bounds=(-5.0, 5.0))
    trace = wegstein(f, np.array([0.0]), cfg)
    assert trace.converged
    np.testing.assert_allclose(trace.xs[1], [1.0])
    np.testing.assert_allclose(trace.xs[2], [-1.0], atol=1e-12)


def test_wegstein_constant_map():
    c = 4.25
    trace = wegstein(lambda x: np.full_like(x, c), np.array([0.0]), cfg_for("wegstein"))
    assert trace.converged
    assert trace.final_x() == pytest.approx(c)


def test_wegstein_default_clamp_blocks_strong_extrapolation():
    # the conservative default clamp q <= 0.9 keeps the update slope
    # 2 - q > 1 for a = 2, so this map needs wider bounds to be solvable;
    # the run must flag divergence rather than converge to a wrong point
    f, _ = affine(2.0, 1.0)
    trace = wegstein(f, np.array([0.0]), cfg_for("wegstein", max_iterations=500))
    assert not trace.converged


def test_wegstein_vector_componentwise():
    a = np.diag([0.5, -0.3])
    b = np.array([1.0, 2.0])
    f, _ = affine(a, b)
    trace = wegstein(f, np.zeros(2), cfg_for("wegstein"))
    assert trace.converged
    np.testing.assert_allclose(trace.final_x(), affine_fixed_point(a, b), atol=1e-8)


# -- Newton ---------------------------------------------------------------------


def test_newton_one_step_exact_on_affine_scalar():
    f, jac = affine(0.5, 1.0)
    trace = newton(f, np.array([0.0]), cfg_for("newton"), jac=jac)
    assert trace.converged
    np.testing.assert_allclose(trace.xs[1], [2.0], atol=1e-12)


@pytest.mark.parametrize("dim", [2, 5, 11])
def test_newton_one_step_exact_on_affine_any_dim(dim):
    rng = np.random.default_rng(dim)
    a, b = random_affine_map(rng, dim, radius=0.8)
    f, jac = affine(a, b)
    trace = newton(f, rng.normal(size=dim), cfg_for("newton"), jac=jac)
    assert trace.converged
    np.testing.assert_allclose(trace.xs[1], affine_fixed_point(a, b), atol=1e-9)


def test_newton_identity_reports_singular_jacobian():
    f, jac = affine(1.0, 0.0)  # f = identity: J_F = 0 everywhere
    trace = newton(f, np.array([3.0]), cfg_for("newton"), jac=jac)
    assert trace.failed
    assert "singular Jacobian at iteration 0" in trace.message


def test_newton_on_quadratic_map():
    # F(x) = x^2 - x: from x0=3 the first step is 3 - 6/5 = 1.8, then -> 1
    f = lambda x: x * x
    jac = lambda x: np.array([[2.0 * x[0]]])
    trace = newton(f, np.array([3.0]), cfg_for("newton"), jac=jac)
    np.testing.assert_allclose(trace.xs[1], [1.8], atol=1e-12)
    assert trace.converged
    assert trace.final_x() == pytest.approx(1.0, abs=1e-9)


def test_newton_requires_jacobian():
    with pytest.raises(SolverError):
        newton(lambda x: x, np.zeros(1), cfg_for("newton"))


# -- BFGS ------------------------------------------------------------------------


def test_bfgs_contraction():
    f, jac = affine(0.5, 1.0)
    trace = bfgs(f, np.array([0.0]), cfg_for("bfgs", tolerance=1e-8), jac=jac)
    assert trace.converged
    assert trace.final_x() == pytest.approx(2.0, abs=1e-7)


def test_bfgs_converged_at_fixed_point_start():
    f, jac = affine(0.5, 1.0)
    trace = bfgs(f, np.array([2.0]), cfg_for("bfgs"), jac=jac)
    assert trace.converged
    assert trace.iterations == 0


def test_bfgs_divergent_map_still_minimized():
    # phi(x) = 0.5 (x+1)^2 is coercive: BFGS finds -1 despite K=2
    f, jac = affine(2.0, 1.0)
    trace = bfgs(f, np.array([0.0]), cfg_for("bfgs", tolerance=1e-8), jac=jac)
    assert trace.converged
    assert trace.final_x() == pytest.approx(-1.0, abs=1e-7)


# -- properties across methods ----------------------------------------------------


def test_banach_property_direct_converges_iff_contractive():
    rng = np.random.default_rng(42)
    for trial in range(50):
        dim = int(rng.integers(1, 21))
        contractive = trial % 2 == 0
        radius = rng.uniform(0.2, 0.9) if contractive else rng.uniform(1.1, 3.0)
        a, b = random_affine_map(rng, dim, radius)
        f, _ = affine(a, b)
        trace = direct_substitution(f, rng.normal(size=dim),
                                    cfg_for("direct", max_iterations=2000,
                                            tolerance=1e-8))
        if contractive:
            assert trace.converged, f"trial {trial}: contraction did not converge"
            np.testing.assert_allclose(trace.final_x(), affine_fixed_point(a, b),
                                       atol=1e-6)
        else:
            assert not trace.converged, f"trial {trial}: expansion converged"


def test_method_agreement_on_contractive_problems():
    rng = np.random.default_rng(7)
    for trial in range(10):
        dim = int(rng.integers(1, 8))
        a, b = random_affine_map(rng, dim, rng.uniform(0.2, 0.8))
        f, jac = affine(a, b)
        x0 = rng.normal(size=dim)
        x_star = affine_fixed_point(a, b)
        for method in ["direct", "wegstein", "newton", "bfgs"]:
            cfg = cfg_for(method, max_iterations=500, tolerance=1e-9)
            trace = solve(f, x0, cfg, jac=jac)
            assert trace.converged, (method, trial)
            np.testing.assert_allclose(trace.final_x(), x_star, atol=1e-8,
                                       err_msg=method)


def test_scaled_residual_uses_configured_scale():
    f, _ = affine(np.zeros((2, 2)), np.array([1.0, 100.0]))
    cfg = cfg_for("direct", scale=np.array([1.0, 100.0]), max_iterations=5,
                  tolerance=1e-12)
    trace = direct_substitution(f, np.zeros(2), cfg)
    assert trace.residuals[0] == pytest.approx(1.0)


def test_best_x_tracks_smallest_residual():
    f, _ = affine(2.0, 1.0)
    trace = direct_substitution(f, np.array([0.0]),
                                cfg_for("direct", max_iterations=30))
    assert trace.residuals[int(np.argmin(trace.residuals))] == \
        pytest.approx(np.min(trace.residuals))
    np.testing.assert_allclose(trace.best_x(),
                               trace.xs[int(np.argmin(trace.residuals))])


def test_trace_csv_export(tmp_path):
    f, _ = affine(0.5, 1.0)
    trace = direct_substitution(f, np.array([0.0]), cfg_for("direct"))
    path = tmp_path / "trace.csv"
    trace.to_csv(path, ["tear.x"])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,residual,tear.x"
    assert len(lines) == trace.iterations + 2
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[2]) == 0.0


def test_solve_config_validation():
    with pytest.raises(SolverError):
        SolveConfig(method="gradient-descent")
    with pytest.raises(SolverError):
        SolveConfig(tolerance=0.0)
    with pytest.raises(SolverError):
        SolveConfig(max_iterations=0)
