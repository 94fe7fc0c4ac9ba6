import json
import math
import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from splitsolve.analysis import (
    GaussianFlowProblem,
    OrderEstimate,
    ToyProblem,
    estimate_order,
    read_toy_csv,
    toy_error_study,
    write_order_csv,
    write_toy_csv,
)
from splitsolve.fields import TOY_EPS_MATRIX, TOY_GUIDE_MATRIX

COUNTS = [40, 80, 160, 320]


@pytest.mark.parametrize(
    "scheme,target,tol",
    [
        ("none:euler", 1.0, 0.2),
        ("none:heun", 2.0, 0.2),
        ("none:rk4", 4.0, 0.5),
        ("ltsp:euler,euler", 1.0, 0.2),
        ("ltsp:rk4,rk4", 1.0, 0.2),
        ("stsp:rk4,rk4", 2.0, 0.2),
        ("stsp:heun,heun", 2.0, 0.2),
    ],
)
def test_orders_on_toy(scheme, target, tol):
    est = estimate_order(scheme, ToyProblem(1.0), COUNTS)
    assert abs(est.slope - target) <= tol, est


def test_strang_with_euler_substeps_is_first_order():
    # with first-order sub-solvers the splitting cannot be better than first order
    est = estimate_order("stsp:euler,euler", ToyProblem(1.0), COUNTS)
    assert est.slope == pytest.approx(1.0, abs=0.1)


@pytest.mark.parametrize("scheme", ["none:euler", "none:heun", "stsp:rk4,rk4"])
def test_order_invariant_under_time_rescaling(scheme):
    a = estimate_order(scheme, ToyProblem(1.0), COUNTS).slope
    for c in (0.5, 3.0):
        b = estimate_order(scheme, ToyProblem(1.0, time_scale=c), COUNTS).slope
        assert b == pytest.approx(a, abs=0.1)


def test_rescaled_problem_has_same_endpoint():
    a, b = ToyProblem(2.0), ToyProblem(2.0, time_scale=4.0)
    np.testing.assert_allclose(a.exact_endpoint(), b.exact_endpoint())
    np.testing.assert_allclose(b.exact(b.grid(10)[-1]), a.exact_endpoint(), rtol=1e-14)
    m = 4.0 * (TOY_EPS_MATRIX + 2.0 * TOY_GUIDE_MATRIX)
    np.testing.assert_allclose(expm(m * 0.25) @ b.x0, b.exact_endpoint(), rtol=1e-11)


@pytest.mark.parametrize("scheme,target", [("none:euler", 1.0), ("none:heun", 2.0), ("none:rk4", 4.0), ("none:glms4", 2.0)])
def test_orders_on_gaussian_flow(scheme, target):
    est = estimate_order(scheme, GaussianFlowProblem(guidance=0.5), COUNTS)
    assert est.slope == pytest.approx(target, abs=0.25)


def test_gaussian_flow_oracle_by_dense_rk4():
    prob = GaussianFlowProblem(variance=0.7, guidance=0.3)
    fld, pot = prob.field(), prob.potential()
    x = prob.x0.copy()
    grid = prob.grid(4000)
    for s0, s1 in zip(grid[:-1], grid[1:]):
        f = lambda s, z: fld(s, z) - pot.gradient(s, z)  # noqa: E731
        h = s1 - s0
        k1 = f(s0, x)
        k2 = f(s0 + h / 2, x + h / 2 * k1)
        k3 = f(s0 + h / 2, x + h / 2 * k2)
        k4 = f(s1, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(x, prob.exact_endpoint(), rtol=1e-10)


def test_estimate_order_validation():
    with pytest.raises(ValueError):
        estimate_order("none:euler", ToyProblem(1.0), [10, 20, 40])
    with pytest.raises(ValueError):
        estimate_order("none:euler", ToyProblem(1.0), [40, 20, 80, 160])
    with pytest.warns(RuntimeWarning):
        estimate_order("none:euler", ToyProblem(1.0), COUNTS)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        estimate_order("none:euler", ToyProblem(1.0), [10, 30, 60, 100])


def test_divergence_invalidates_estimate():
    with pytest.raises(ArithmeticError, match="diverged"):
        estimate_order("none:euler", ToyProblem(1e305), [2, 4, 8, 16])


def test_roundoff_cells_dropped():
    # rk4 reaches roundoff at N=4000; the fit uses only the first three cells
    counts = [4, 8, 16, 4000]
    est = estimate_order("none:rk4", ToyProblem(1.0), counts)
    assert est.errors[-1] < 1e-12
    three = np.polyfit(np.log(1 / np.array(counts[:3])), np.log(est.errors[:3]), 1)[0]
    assert est.slope == pytest.approx(three, rel=1e-12)


def test_toy_study_claims(tmp_path):
    cells = toy_error_study(["none:plms4", "stsp4", "none:euler", "ltsp4"], [3, 5, 10], [10, 20, 1000], dump_dir=tmp_path)
    err = {(c.scheme, c.s, c.steps): c.endpoint_error for c in cells}
    assert err[("none:plms4", 5.0, 10)] > err[("stsp4", 5.0, 10)]
    for sch in ("none:euler", "ltsp4", "stsp4"):
        assert err[(sch, 3.0, 20)] < 0.05
    for c in cells:
        if c.steps == 1000:
            assert c.endpoint_error < 1e-3
    for n in (10, 20):
        seq = [err[("none:plms4", s, n)] for s in (3.0, 5.0, 10.0)]
        assert seq == sorted(seq)
    dumps = sorted(tmp_path.glob("*.json"))
    assert len(dumps) == len(cells)
    d = json.loads(dumps[0].read_text())
    assert len(d["t"]) == len(d["states"]) == len(d["exact"])


def test_toy_study_records_divergence():
    cells = toy_error_study(["none:plms4"], [200.0], [10])
    c = cells[0]
    assert c.endpoint_error == math.inf or c.endpoint_error > 1e3


def test_toy_csv_round_trip(tmp_path):
    cells = toy_error_study(["stsp2", "none:rk4"], [5], [8, 16])
    p = tmp_path / "toy.csv"
    write_toy_csv(p, cells)
    rows = read_toy_csv(p)
    assert [(r["scheme"], r["steps"], r["endpoint_error"]) for r in rows] == [
        (c.scheme, c.steps, c.endpoint_error) for c in cells
    ]


def test_order_csv(tmp_path):
    p = tmp_path / "o.csv"
    write_order_csv(p, [OrderEstimate("x", (1, 2), (0.1, 0.05), 1.0, 0.0)])
    assert p.read_text().splitlines()[0] == "scheme,steps,error,slope,residual"
