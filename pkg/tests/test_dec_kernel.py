import numpy as np
import pytest
from hypothesis import given, strategies as st

from bilateral import bs_kernel, dec_kernel
from bilateral.bs_kernel import SolveOptions, gamma_diagnostics, max_abs
from bilateral.dec_kernel import DecProblem, perturbed, residual_report_dec, rewrite_coupling
from bilateral.folding import fold, plant_from_strings

from conftest import zero_plant

TOL = 1e-3
Z = np.linspace(0, 1, 11)


def _blocks(n, a0lr, a0r, a1lr, a1r):
    m = 2 * n
    A0 = np.zeros((m, m, Z.size))
    A1 = np.zeros((m, m, Z.size))
    A0[n:, :n], A0[n:, n:] = a0lr, a0r
    A1[n:, :n], A1[n:, n:] = a1lr, a1r
    return A0, A1


def test_rewrite_without_right_block_is_identity():
    rng = np.random.default_rng(1)
    a0, a1 = rng.standard_normal((2, 2, 2, Z.size))
    A0, A1 = _blocks(2, a0, 0.0, a1, 0.0)
    ci = rewrite_coupling(A0, A1, 0.7, Z)
    assert np.array_equal(ci.Ab0_lr, a0) and np.array_equal(ci.Ab1_lr, a1)


def test_rewrite_value_term_single_state():
    A0, A1 = _blocks(1, 0.3, 1.1, 0.0, 0.0)
    ci = rewrite_coupling(A0, A1, 0.5, Z)
    assert np.allclose(ci.Ab0_lr, 0.3 + 1.1, atol=1e-15)


def test_rewrite_derivative_term_single_state():
    A0, A1 = _blocks(1, 0.0, 0.0, 0.3, 1.1)
    ci = rewrite_coupling(A0, A1, 0.5, Z)
    assert np.allclose(ci.Ab1_lr, 0.3 - 2 * 1.1, atol=1e-15)


@given(st.integers(1, 3), st.floats(0.05, 5.0), st.integers(0, 2**31))
def test_rewrite_residual_on_random_blocks(n, yt, seed):
    rng = np.random.default_rng(seed)
    A0, A1 = _blocks(n, *rng.standard_normal((4, n, n, Z.size)))
    ci = rewrite_coupling(A0, A1, yt, Z, trials=100, seed=seed)
    assert ci.rewrite_residual <= 1e-12
    # independent reconstruction of the coupling term on one admissible boundary vector
    xl0, xlz = rng.standard_normal((2, n))
    xr0, xrz = xl0, -xlz / yt
    orig = (np.einsum("ijk,j->ik", A0[n:, :n], xl0) + np.einsum("ijk,j->ik", A0[n:, n:], xr0)
            + np.einsum("ijk,j->ik", A1[n:, :n], xlz) + np.einsum("ijk,j->ik", A1[n:, n:], xrz))
    new = np.einsum("ijk,j->ik", ci.Ab0_lr, xl0) + np.einsum("ijk,j->ik", ci.Ab1_lr, xlz)
    assert np.allclose(orig, new, rtol=1e-12, atol=1e-12)


def test_rewrite_derivative_sampled_by_differences():
    A0, A1 = _blocks(1, 0.0, 0.0, Z**2, 0.0)
    ci = rewrite_coupling(A0, A1, 0.5, Z)
    assert np.allclose(ci.dAb1_lr[0, 0, 1:-1], 2 * Z[1:-1], atol=1e-12)


def test_inputs_inherit_lower_triangular_blocks(design):
    ci = design.extras["inputs"]
    assert np.all(np.triu(np.moveaxis(ci.At0_l, 2, 0)) == 0)
    assert np.all(np.triu(np.moveaxis(ci.At1_l, 2, 0)) == 0)


@pytest.fixture(scope="module")
def example_problem(folded, design):
    return DecProblem(folded, design.extras["inputs"], n_xi=40)


def test_start_values_vanish_without_data(folded):
    m = 4
    ci = rewrite_coupling(np.zeros((m, m, Z.size)), np.zeros((m, m, Z.size)), folded.yt, Z)
    prob = DecProblem(folded, ci, n_xi=30)
    assert max_abs(prob.init_fields()) == 0.0


def test_diagonal_start_value_of_N(folded, design, example_problem):
    prob = example_problem
    ci = design.extras["inputs"]
    n = prob.n
    X = prob.init_fields()
    for (i, j), pd in prob.P.items():
        if i > j:
            continue
        g = pd.grid
        d = g.diag[~np.isin(g.diag, pd.seg_fill)]
        z = g.chart.inverse(g.eta[d], g.eta[d])[0]
        lr0 = folded.lam(np.array([0.0]))[n + j, 0]
        lri = folded.lam(z)[n + i]
        want = (np.sqrt(lr0) / (2 * folded.yt) * ci.sample("Ab0_lr", i, j, z)
                + 0.5 * np.sqrt(lri) * ci.sample("dAb1_lr", i, j, z))
        assert np.allclose(X[("P", i, j)][2][d], want, rtol=1e-10, atol=1e-12)


def test_fredholm_start_zero_left_of_kink(example_problem):
    X = example_problem.init_fields()
    for key, pd in example_problem.P.items():
        g = pd.grid
        sel = g.xi <= g.chart.B1 - 1e-12
        assert np.all(X[("P",) + key][0][sel] == 0)


def test_sweep_of_zero_is_zero(example_problem):
    assert max_abs(example_problem.sweep(example_problem.zero_fields())) == 0.0


def test_constant_diffusion_zero_coupling_gives_zero():
    f = fold(zero_plant(2, ["2", "1"]), 0.4)
    ci = rewrite_coupling(np.zeros((4, 4, Z.size)), np.zeros((4, 4, Z.size)), f.yt, Z)
    prob = DecProblem(f, ci, n_xi=30)
    rng = np.random.default_rng(3)
    X = {k: tuple(rng.standard_normal(v.size) for v in vals) for k, vals in prob.zero_fields().items()}
    # with vanishing coefficients only the transport of boundary values survives one step
    out = prob.sweep(prob.sweep(prob.zero_fields()))
    assert max_abs(out) == 0.0
    assert max_abs(prob.init_fields()) == 0.0
    assert all(np.all(np.isfinite(a)) for v in prob.sweep(X).values() for a in v)


def test_trivial_design_has_zero_decoupling(trivial_design):
    dec = trivial_design.dec
    for arr in (dec.P, dec.Q, dec.Pz1, dec.Qz1, dec.Acheck0, dec.Acheck1):
        assert np.all(arr == 0)
    rep = residual_report_dec(dec, trivial_design.folded, trivial_design.extras["inputs"])
    assert all(v == 0 for k, v in rep.items() if k != "lower_triangular")


def test_single_state_has_no_target_coupling():
    f = fold(plant_from_strings(["3"], [["0.7"]]), 0.4)
    bs = bs_kernel.solve(f, 2.0, opts=SolveOptions(n_xi=40))
    dec = dec_kernel.solve_dec(f, dec_kernel.inputs_from_solution(bs), opts=SolveOptions(n_xi=40))
    assert np.all(dec.Acheck0 == 0) and np.all(dec.Acheck1 == 0)
    assert np.all(dec.Acheck0_f == 0) and np.all(dec.Acheck1_f == 0)


def test_iteration_count(design):
    assert abs(design.dec.iterations - 8) <= 2


def test_convergence_monotone_after_three(design):
    log = np.array(design.dec.log)
    assert np.all(np.diff(log[3:]) < 0)


def test_right_block_ratio_within_full_bound(folded, design):
    full = gamma_diagnostics(lambda z: folded.lam(z))
    assert design.dec.gamma["ratio"] <= full["ratio"]


@pytest.fixture(scope="module")
def dec_report(design):
    return residual_report_dec(design.dec, design.folded, design.extras["inputs"])


def test_homogeneous_traces(dec_report):
    assert dec_report["q_diag"] <= 5 * TOL and dec_report["q_origin"] <= 5 * TOL
    assert dec_report["p_left"] <= 5 * TOL and dec_report["pz_left"] <= 5 * TOL


def test_robin_condition(dec_report):
    assert dec_report["robin"] <= 5 * TOL


def test_coupling_conditions(dec_report):
    assert dec_report["coupling_bc1"] <= 5 * TOL and dec_report["coupling_bc2"] <= 5 * TOL


def test_pde_residual(dec_report):
    assert dec_report["pde"] <= 10 * TOL


def test_target_couplings_strictly_lower(design, dec_report):
    assert dec_report["lower_triangular"]
    for arr in (design.dec.Acheck0_f, design.dec.Acheck1_f):
        assert np.all(np.triu(np.moveaxis(arr, 2, 0)) == 0)


def test_shifted_trace_breaks_coupling(design):
    bad = perturbed(design.dec, 0.1)
    rep = residual_report_dec(bad, design.folded, design.extras["inputs"])
    assert max(rep["coupling_bc1"], rep["coupling_bc2"]) > 5 * TOL


def test_reflection_point(example_problem):
    for (i, j) in example_problem.P:
        zs = example_problem.reflection_point(i, j)
        if zs is not None:
            assert example_problem.tr[i](zs) == pytest.approx(2 * example_problem.tl[j].total, abs=1e-9)


def test_dump_writes_csv(design, tmp_path):
    files = dec_kernel.dump(design.dec, tmp_path)
    assert {"P.csv", "Q.csv", "Pz1.csv", "Qz1.csv", "dec_kernel.json"} <= set(files)
    assert (tmp_path / "P.csv").read_text().splitlines()[0] == "i,j,z,zeta,value"
