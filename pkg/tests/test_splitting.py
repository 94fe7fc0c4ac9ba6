import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitsolve.fields import (
    CallableField,
    ClassPotential,
    LinearField,
    LinearGradient,
    MixtureField,
    QuadraticPotential,
    ToyLinearField,
    ZeroPotential,
    toy_exact_solution,
)
from splitsolve.sampler import sample_initial, standard_problem
from splitsolve.schedule import alpha_bar_from_sigma, from_xbar, make_log_linear_schedule
from splitsolve.solvers import Stepper, parse_method
from splitsolve.splitting import (
    PRESETS,
    SplitScheme,
    SubSteppers,
    ltsp_step,
    parse_scheme,
    solve,
    stsp_step,
)


# ---------------------------------------------------------------- grammar


@pytest.mark.parametrize(
    "text,kind,diff,cond,label",
    [
        ("none:euler", "none", "euler", "plms1", "none:euler"),
        ("rk4", "none", "rk4", "plms1", "none:rk4"),
        ("ltsp:plms4,plms1", "lie_trotter", "plms4", "plms1", "ltsp:plms4,plms1"),
        ("stsp:glms4:verbatim,euler", "strang", "glms4:verbatim", "euler", "stsp:glms4:verbatim,euler"),
        ("STSP4", "strang", "plms4", "plms1", "stsp:plms4,plms1"),
        ("ltsp2", "lie_trotter", "plms2", "plms1", "ltsp:plms2,plms1"),
    ],
)
def test_parse_scheme(text, kind, diff, cond, label):
    s = parse_scheme(text)
    assert (s.kind, s.diffusion.label, s.condition.label, s.label) == (kind, diff, cond, label)


def test_presets_display_name():
    assert set(PRESETS) == {"ltsp2", "ltsp4", "stsp2", "stsp4"}
    assert parse_scheme("stsp4").display == "stsp4"
    assert str(parse_scheme("ltsp:euler,euler")) == "ltsp:euler,euler"


@pytest.mark.parametrize("text", ["ltsp:plms4", "none:euler,plms1", "stsp:plms9,plms1", "split:euler,euler", "bogus"])
def test_parse_scheme_rejects(text):
    with pytest.raises(ValueError):
        parse_scheme(text)


def test_scheme_validation():
    with pytest.raises(ValueError):
        SplitScheme("other", "euler")
    with pytest.raises(ValueError):
        SplitScheme("strang", "euler", "euler", condition_sigma="middle")


@pytest.mark.parametrize(
    "text,field_nfe,pot_nfe",
    [("none:euler", 1, 1), ("none:rk4", 4, 4), ("ltsp4", 1, 1), ("stsp4", 1, 2), ("stsp:heun,rk4", 2, 8)],
)
def test_per_step_accounting(text, field_nfe, pot_nfe):
    s = parse_scheme(text)
    assert (s.field_nfe_per_step, s.potential_nfe_per_step) == (field_nfe, pot_nfe)


# ---------------------------------------------------------------- single steps


def _mixture_pair():
    prob = standard_problem()
    return MixtureField(prob.mixture), ClassPotential(prob.mixture, 0)


@pytest.mark.parametrize("step", [ltsp_step, stsp_step])
def test_zero_condition_reduces_to_diffusion_step(step):
    fld, _ = _mixture_pair()
    x = np.linspace(-3, 3, 8)
    subs = SubSteppers.for_scheme(SplitScheme("lie_trotter", "plms2", "plms1"))
    ref = Stepper("plms2")
    for s0, s1 in [(5.0, 3.0), (3.0, 2.0)]:
        y = step(fld, ZeroPotential(8), s0, s1, x, subs)
        np.testing.assert_array_equal(y, ref.step(fld, s0, s1, x))
        x = y


def test_lie_trotter_quadratic_condition():
    lam = 0.7
    zero = CallableField(lambda s, x: np.zeros_like(x), 2)
    pot = QuadraticPotential(lam * np.eye(2))
    x = np.array([1.0, -2.0])
    subs = SubSteppers.for_scheme(parse_scheme("ltsp:euler,plms1"))
    s0, s1 = 2.0, 1.5
    np.testing.assert_allclose(ltsp_step(zero, pot, s0, s1, x, subs), x * (1 - (s1 - s0) * lam))


def test_strang_constant_gradient_equals_full_gradient_step():
    zero = CallableField(lambda s, x: np.zeros_like(x), 2)
    g = np.array([0.3, -1.1])

    class Const(ZeroPotential):
        def _gradient(self, sigma, x):
            return g

    x = np.array([1.0, 2.0])
    subs = SubSteppers.for_scheme(parse_scheme("stsp:euler,plms1"))
    np.testing.assert_allclose(stsp_step(zero, Const(2), 2.0, 1.5, x, subs), x - (1.5 - 2.0) * g, rtol=1e-15)


def _scalar_split(s):
    # y' = -y split from y' = -s y
    return LinearField([[-1.0]]), LinearGradient([[s]])


@pytest.mark.parametrize("s,N", [(5.0, 10), (15.0, 7), (2.0, 3)])
def test_lie_trotter_two_step_recurrence(s, N):
    fld, pot = _scalar_split(s)
    dt = 1.0 / N
    traj = solve(fld, pot, np.linspace(0, 1, N + 1), "ltsp:plms2,plms1", np.array([1.0]))
    y = traj.states[:, 0]
    for n in range(1, N):
        want = (1 - s * dt) * ((1 - 1.5 * dt) * y[n] + 0.5 * dt * y[n - 1])
        assert y[n + 1] == pytest.approx(want, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("s,N", [(5.0, 10), (30.0, 8), (2.0, 3)])
def test_strang_two_step_recurrence(s, N):
    fld, pot = _scalar_split(s)
    traj = solve(fld, pot, np.linspace(0, 1, N + 1), "stsp:plms2,plms1", np.array([1.0]))
    y = traj.states[:, 0]
    q = (1 - s / (2 * N)) ** 2
    for n in range(1, N):
        want = q * (1 - 1.5 / N) * y[n] + q / (2 * N) * y[n - 1]
        assert y[n + 1] == pytest.approx(want, rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------- whole solves


def test_euler_solve_is_ddim():
    fld, pot = _mixture_pair()
    sched = make_log_linear_schedule(20.0, 0.05, 12)
    x0 = sample_initial(8, 20.0, 4)
    traj = solve(fld, ZeroPotential(8), sched, "none:euler", x0)
    ab = alpha_bar_from_sigma(sched.sigmas)
    x_t = from_xbar(x0, ab[0])
    for n in range(sched.N):
        eps = fld(sched.sigmas[n], x_t / math.sqrt(ab[n]))
        x0_hat = (x_t - math.sqrt(1 - ab[n]) * eps) / math.sqrt(ab[n])
        x_t = math.sqrt(ab[n + 1]) * x0_hat + math.sqrt(1 - ab[n + 1]) * eps
        np.testing.assert_allclose(from_xbar(traj.states[n + 1], ab[n + 1]), x_t, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("diff", ["euler", "plms4", "glms3", "rk4"])
def test_split_neutral_without_guidance(diff):
    fld, _ = _mixture_pair()
    sched = make_log_linear_schedule(40.0, 0.01, 15)
    x0 = sample_initial(8, 40.0, 1)
    runs = [solve(fld, ZeroPotential(8), sched, f"{k}:{diff}" + ("" if k == "none" else ",plms1"), x0) for k in ("none", "ltsp", "stsp")]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.states, runs[0].states)


@pytest.mark.parametrize(
    "scheme,f_per,p_per",
    [("none:euler", 1, 1), ("none:heun", 2, 2), ("none:rk4", 4, 4), ("ltsp:plms4,plms1", 1, 1), ("stsp4", 1, 2), ("stsp:glms4,euler", 1, 2)],
)
def test_solve_counts_evaluations(scheme, f_per, p_per):
    fld, pot = _mixture_pair()
    traj = solve(fld, pot, make_log_linear_schedule(80.0, 0.004, 17), scheme, sample_initial(8, 80.0, 0))
    assert (traj.field_nfe, traj.potential_nfe) == (17 * f_per, 17 * p_per)
    assert traj.states.shape == (18, 8) and not traj.diverged and traj.steps == 17


def test_divergence_is_reported_not_raised():
    blow = LinearField([[-400.0]])
    traj = solve(blow, None, np.linspace(0.0, 1.0, 3), "none:euler", np.array([1e307]))
    assert traj.diverged
    assert traj.diverged_at == 0
    assert traj.states.shape[0] == traj.diverged_at + 1
    assert np.all(np.isfinite(traj.states))


def test_divergence_inside_a_split_step():
    fld = LinearField([[1e200]])
    traj = solve(fld, ZeroPotential(1), np.linspace(0, 1, 4), "stsp:euler,plms1", np.array([1e200]))
    assert traj.diverged_at == 0


def test_grid_validation():
    fld, pot = _mixture_pair()
    with pytest.raises(ValueError):
        solve(fld, pot, np.array([1.0]), "none:euler", np.zeros(8))
    with pytest.raises(ValueError):
        solve(fld, pot, np.array([1.0, 0.5, 0.7]), "none:euler", np.zeros(8))


def test_toy_stsp4_beats_plms4_when_stiff():
    toy = ToyLinearField(5.0)
    grid = np.linspace(0.0, 1.0, 11)
    exact = toy_exact_solution(1.0, 5.0)
    e_plms = np.linalg.norm(solve(toy.diffusion(), toy.condition(), grid, "none:plms4", [1.0, 0.0]).endpoint - exact)
    e_stsp = np.linalg.norm(solve(toy.diffusion(), toy.condition(), grid, "stsp4", [1.0, 0.0]).endpoint - exact)
    assert e_stsp < e_plms


def _manual_strang_swapped(toy, grid, x):
    # diffusion half, condition full, diffusion half, all with rk4
    e, m = toy.eps_matrix, toy.s * toy.guide_matrix
    fe = lambda t, z: e @ z  # noqa: E731
    fm = lambda t, z: m @ z  # noqa: E731
    for t0, t1 in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (t0 + t1)
        x = Stepper("rk4").step(fe, t0, mid, x)
        x = Stepper("rk4").step(fm, t0, t1, x)
        x = Stepper("rk4").step(fe, mid, t1, x)
    return x


def test_strang_order_swap_converges_at_second_order():
    toy = ToyLinearField(1.0)
    exact = toy_exact_solution(1.0, 1.0)
    counts = np.array([40, 80, 160, 320])
    errs_a, errs_b = [], []
    for n in counts:
        grid = np.linspace(0, 1, n + 1)
        errs_a.append(np.linalg.norm(solve(toy.diffusion(), toy.condition(), grid, "stsp:rk4,rk4", [1.0, 0.0]).endpoint - exact))
        errs_b.append(np.linalg.norm(_manual_strang_swapped(toy, grid, np.array([1.0, 0.0])) - exact))
    for errs in (errs_a, errs_b):
        slope = np.polyfit(np.log(1 / counts), np.log(errs), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.1)


def test_condition_sigma_start_differs_only_through_sigma_dependence():
    fld, pot = _mixture_pair()
    sched = make_log_linear_schedule(10.0, 0.1, 8)
    x0 = sample_initial(8, 10.0, 2)
    a = solve(fld, pot, sched, SplitScheme("strang", "plms2", "plms1", condition_sigma="nearest"), x0)
    b = solve(fld, pot, sched, SplitScheme("strang", "plms2", "plms1", condition_sigma="start"), x0)
    assert not np.array_equal(a.endpoint, b.endpoint)
    toy = ToyLinearField(2.0)
    grid = np.linspace(0, 1, 6)
    c = solve(toy.diffusion(), toy.condition(), grid, SplitScheme("strang", "euler", "plms1", condition_sigma="nearest"), [1.0, 0.0])
    d = solve(toy.diffusion(), toy.condition(), grid, SplitScheme("strang", "euler", "plms1", condition_sigma="start"), [1.0, 0.0])
    np.testing.assert_array_equal(c.states, d.states)


@given(st.integers(0, 2**31), st.sampled_from(["none:plms4", "ltsp4", "stsp4", "stsp:glms3,plms1", "none:heun"]))
@settings(max_examples=15, deadline=None)
def test_solve_is_deterministic(seed, scheme):
    fld, pot = _mixture_pair()
    sched = make_log_linear_schedule(80.0, 0.004, 10)
    x0 = sample_initial(8, 80.0, seed)
    a = solve(fld, pot, sched, scheme, x0)
    b = solve(fld, pot, sched, scheme, x0)
    np.testing.assert_array_equal(a.states, b.states)
