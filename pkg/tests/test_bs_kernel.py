import numpy as np
import pytest

from bilateral import bs_kernel
from bilateral.bs_kernel import (ArtificialBC, BsProblem, NoConvergence, SolveOptions, gamma_diagnostics,
                                 max_abs)
from bilateral.folding import fold, plant_from_strings

from conftest import zero_plant

TOL = 1e-3


@pytest.fixture(scope="module")
def single():
    """n = 1, constant diffusion 3 and reaction 0.7, folded at 0.4, mu = 2."""
    f = fold(plant_from_strings(["3"], [["0.7"]]), 0.4)
    return f, bs_kernel.solve(f, 2.0)


def test_constant_diagonal_start_value():
    f = fold(plant_from_strings(["3"], [["0.7"]]), 0.4)
    prob = BsProblem(f, 2.0, n_xi=40)
    for i in range(2):
        pd = prob.pairs[(i, i)]
        lam = float(f.lam(np.array([0.0]))[i, 0])
        xi = pd.grid.xi[pd.lower]
        assert np.allclose(pd.G_b[pd.lower], -(0.7 + 2.0) * np.sqrt(lam) * xi / 4, atol=1e-12)


def test_zero_artificial_data_leaves_right_columns_empty(folded):
    prob = BsProblem(folded, 10.0, n_xi=40)
    X = prob.init_fields()
    n = prob.n
    for (i, j), pd in prob.pairs.items():
        if j >= n and i > j - n:
            g = pd.grid
            sel = (g.eta >= 0) & ~pd.lower
            assert np.all(X[(i, j)][0][sel] == 0)


def test_lower_boundary_derivative_quotient(folded):
    prob = BsProblem(folded, 10.0, n_xi=40)
    A = folded.A
    for (i, j), pd in prob.pairs.items():
        if i == j:
            continue
        g = pd.grid
        z = g.chart.diag_z_from_xi(g.xi[pd.lower])
        li, lj = folded.lam(z)[i], folded.lam(z)[j]
        c1 = A(z)[i, j] * lj * np.sqrt(li) / (lj - li)
        slope = g.chart.eta_lower_slope(z)
        c4 = c1 * slope / (pd.s * slope - 1)
        assert np.allclose(pd.H_b[pd.lower], c4, rtol=1e-12, atol=1e-12)


def test_sweep_of_zero_is_zero(folded):
    prob = BsProblem(folded, 10.0, n_xi=40)
    assert max_abs(prob.sweep(prob.zero_fields())) == 0.0


def test_sweep_without_coefficients_returns_zero_H():
    f = fold(zero_plant(2, ["2", "1"]), 0.4)
    prob = BsProblem(f, 0.0, n_xi=30)
    rng = np.random.default_rng(0)
    X = {p: tuple(rng.standard_normal(v.size) for v in vals) for p, vals in prob.zero_fields().items()}
    out = prob.sweep(X)
    assert max(np.max(np.abs(v[1])) for v in out.values()) == 0.0


def test_trivial_plant_has_zero_kernel(trivial_design):
    bs = trivial_design.bs
    for arr in (bs.K, bs.K11, bs.Kz1, bs.Atilde0, bs.Atilde1):
        assert np.all(arr == 0)
    assert bs.iterations <= 1
    rep = bs_kernel.residual_report(bs, trivial_design.folded)
    assert all(v == 0 for k, v in rep.items() if k != "lower_triangular")


def test_single_state_diagonal_trace(single):
    f, sol = single
    lam = f.lam(sol.z)
    for i in range(2):
        d = np.array([sol.K[i, i, k, k] for k in range(sol.z.size)])
        assert np.allclose(d, -(0.7 + 2.0) * sol.z / (2 * lam[i]), atol=1e-12)


def test_single_state_residuals(single):
    f, sol = single
    rep = bs_kernel.residual_report(sol, f)
    assert rep["pde"] <= 10 * TOL
    assert max(rep["fold_bc1"], rep["fold_bc2"]) <= 5 * TOL


def test_iteration_count(design):
    assert abs(design.bs.iterations - 9) <= 2


def test_convergence_monotone_after_three(design):
    log = np.array(design.bs.log)
    assert np.all(np.diff(log[3:]) < 0)
    assert log[-1] <= TOL


def test_growth_ratio_inside_unit_interval(design):
    g = design.bs.gamma
    assert 0.0 < g["ratio"] < 1.0
    assert g["ratio"] < g["gamma"] < 1.0


def test_gamma_picks_closest_pair():
    lam = lambda z: np.vstack([4 + 0 * z, 1 + 2 * z])  # noqa: E731
    g = gamma_diagnostics(lam)
    assert g["z_delta"] == pytest.approx(1.0)
    assert g["ratio"] == pytest.approx(np.sqrt(3 / 4))


def test_folding_bc_residuals(design):
    rep = bs_kernel.residual_report(design.bs, design.folded)
    assert max(rep["fold_bc1"], rep["fold_bc2"]) <= 5 * TOL


def test_zeroed_coupling_breaks_folding_bc(design):
    rep = bs_kernel.residual_report(design.bs, design.folded,
                                    Atilde1=np.zeros_like(design.bs.Atilde1))
    assert rep["fold_bc1"] > 5 * TOL


def test_coupling_matrices_strictly_lower(design):
    for arr in (design.bs.Atilde0, design.bs.Atilde1, design.bs.Atilde0_f, design.bs.Atilde1_f):
        assert np.all(np.triu(np.moveaxis(arr, 2, 0)) == 0)


def test_diagonal_conditions(design):
    rep = bs_kernel.residual_report(design.bs, design.folded)
    assert rep["diag_ii"] <= 5 * TOL and rep["diag_offdiag"] <= 5 * TOL and rep["origin"] <= 5 * TOL


def test_index_coupling_on_diagonal(design):
    prob, X = design.bs.problem, design.bs.fields
    n = prob.n
    checked = 0
    for (i, j), pd in prob.pairs.items():
        if j >= n and i <= j - n:
            src, W, fac = pd.couple
            g = pd.grid
            lhs = X[(i, j)][0][g.diag]
            rhs = fac * (W @ X[src][0])
            assert fac == pytest.approx(prob.yt)
            assert np.max(np.abs(lhs - rhs)) <= 5 * TOL
            checked += 1
    assert checked == 3


def test_no_convergence_reports_delta_and_gamma(folded):
    with pytest.raises(NoConvergence) as info:
        bs_kernel.solve(folded, 10.0, opts=SolveOptions(max_iter=2, n_xi=40))
    assert "last delta" in str(info.value) and "gamma" in str(info.value)
    assert info.value.iterations == 2 and info.value.last_delta > TOL


def test_nonpositive_tolerance_rejected(folded):
    with pytest.raises(ValueError):
        bs_kernel.solve(folded, 10.0, opts=SolveOptions(tol=0.0))


def test_artificial_data_changes_the_kernel():
    f = fold(plant_from_strings(["3"], [["0.7"]]), 0.4)
    base = bs_kernel.solve(f, 2.0, opts=SolveOptions(n_xi=40))
    gf = ArtificialBC({(1, 0): lambda eta: 0.1 * eta})
    other = bs_kernel.solve(f, 2.0, gf=gf, opts=SolveOptions(n_xi=40))
    assert np.max(np.abs(other.K - base.K)) > 1e-5
    rep = bs_kernel.residual_report(other, f)
    assert max(rep["fold_bc1"], rep["fold_bc2"]) <= 5 * TOL


def test_dump_writes_csv(single, tmp_path):
    _, sol = single
    files = bs_kernel.dump(sol, tmp_path)
    head = (tmp_path / "K.csv").read_text().splitlines()
    assert head[0] == "i,j,z,zeta,value"
    assert len(head) == 1 + 4 * sol.z.size * (sol.z.size + 1) // 2
    assert "bs_kernel.json" in files
