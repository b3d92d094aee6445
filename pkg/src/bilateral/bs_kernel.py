"""Backstepping kernel K(z, zeta) of the folded 2n-state system.

The kernel PDE ``Lam K_zz - (K Lam)_zeta_zeta = K (A + mu I)`` on
``0 <= zeta <= z <= 1`` is solved per entry in canonical coordinates,
where ``G = lam_j(zeta) K_ij`` obeys::

    G_xi_eta = s/4 (Acal[G] + mu G) + aD/4 G_xi + s aS/4 G_eta

with ``H = G_xi`` and ``J = G_eta``.  Integrating along grid lines gives a
fixed point problem that is solved by successive approximation: the start
values carry all boundary data and every later sweep is homogeneous.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .canonical import (
    Chart,
    ChartGrid,
    TravelTime,
    a_coef,
    a_coef_dx,
    line_derivative,
    sign,
)
from .folding import FoldedPlant

Pair = tuple[int, int]
Fields = dict[Pair, tuple[np.ndarray, ...]]
"""Per pair: G, H, J and the lower limit of J on the row eta = 0."""


class NoConvergence(RuntimeError):
    """Successive approximation did not reach the tolerance."""

    def __init__(self, what: str, iterations: int, last_delta: float, gamma: dict | None = None):
        msg = f"{what}: no convergence after {iterations} sweeps (last delta {last_delta:.3e})"
        if gamma:
            msg += f"; gamma diagnostics {gamma}"
        super().__init__(msg)
        self.iterations = iterations
        self.last_delta = last_delta
        self.gamma = gamma or {}


@dataclass
class ArtificialBC:
    """Free boundary data on the line (eta, eta), keyed by zero-based (i, j)."""

    funcs: Mapping[Pair, Callable[[np.ndarray], np.ndarray]] = field(default_factory=dict)

    def __call__(self, pair: Pair, eta: np.ndarray) -> np.ndarray:
        f = self.funcs.get(pair)
        if f is None:
            return np.zeros_like(eta)
        return np.broadcast_to(np.asarray(f(eta), dtype=float), np.shape(eta)).copy()


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-3
    max_iter: int = 60
    n_z: int = 51
    n_xi: int = 100


def gamma_diagnostics(lam: Callable[[np.ndarray], np.ndarray], nodes: int = 401) -> dict:
    """Growth-bound parameter from the point of minimal coefficient separation."""
    z = np.linspace(0.0, 1.0, nodes)
    L = lam(z)
    m = L.shape[0]
    if m < 2:
        return {"z_delta": 0.0, "ratio": 0.0, "gamma": 0.5}
    diff = np.abs(L[:, None, :] - L[None, :, :])
    diff[np.arange(m), np.arange(m)] = np.inf
    gaps = diff.min(axis=(0, 1))
    k = int(np.argmin(gaps))
    lz = L[:, k]
    ratio = max(np.sqrt(lz[i] / lz[j]) for i in range(m) for j in range(i))
    return {"z_delta": float(z[k]), "ratio": float(ratio), "gamma": float(0.5 * (ratio + 1.0))}


# ---------------------------------------------------------------- chart data


class _PairData:
    """Grid, coefficients and boundary data of one index pair."""

    def __init__(self, grid: ChartGrid, s: int):
        self.grid = grid
        self.s = s
        n_s = grid.size
        self.zero = np.zeros(n_s)
        self.G_b = np.zeros(n_s)  # lower boundary data
        self.H_b = np.zeros(n_s)
        self.J_b = np.zeros(n_s)
        self.left_data = np.zeros(n_s)  # artificial data on row starts with eta >= 0
        g = grid
        self.lower = g.on_lower
        self.lower_neg = g.on_lower & (g.eta < -1e3 * g.tol)
        self.nan = np.full(n_s, np.nan)
        self.cut: float | None = None  # coordinate of a known jump line crossed by paths


def pair_coefficients(g: ChartGrid, ta: TravelTime, tb: TravelTime):
    """Sampled aD, aS and d(aS)/d eta for the chart with z-coefficient ``ta``."""
    ai = a_coef(ta, g.z)
    aj = a_coef(tb, g.zeta)
    at = 0.5 * (a_coef_dx(ta, g.z) * np.sqrt(ta.coef(g.z))
                - a_coef_dx(tb, g.zeta) * np.sqrt(tb.coef(g.zeta)))
    return ai - aj, ai + aj, at


def _path_field(grid: ChartGrid, paths, start_vals: np.ndarray, f: np.ndarray) -> np.ndarray:
    return paths.start_values(start_vals, grid.size) + paths.integrate(f, grid.size)


class BsProblem:
    """Discretised kernel equations for one folded plant, mu and artificial data."""

    def __init__(self, folded: FoldedPlant, mu: float, gf: ArtificialBC | None = None,
                 n_xi: int = 100):
        self.folded = folded
        self.mu = float(mu)
        self.gf = gf or ArtificialBC()
        self.n = folded.n
        self.m = 2 * folded.n
        self.yt = folded.yt
        m = self.m
        self.tts = [TravelTime(lambda x, o, k=k: folded.lam(x, o)[k]) for k in range(m)]
        self.gamma = gamma_diagnostics(lambda z: folded.lam(z))
        if not self.gamma["ratio"] < 1.0:
            raise ValueError("growth bound requires strictly descending coefficients")
        self.pairs: dict[Pair, _PairData] = {}
        for i in range(m):
            for j in range(m):
                ch = Chart(self.tts[i], self.tts[j], sign(i, j), same=(i == j))
                self.pairs[(i, j)] = _PairData(ChartGrid(ch, n_xi), sign(i, j))
        self._coefficients()
        self._boundary_data()
        self._couplings()

    # -- set up
    def _lam(self, k: int, x: np.ndarray, order: int = 0) -> np.ndarray:
        return self.tts[k].coef(x, order)

    def _coefficients(self) -> None:
        A = self.folded.A
        for (i, j), pd in self.pairs.items():
            g = pd.grid
            pd.aD, pd.aS, pd.at = pair_coefficients(g, self.tts[i], self.tts[j])
            # reaction sum: Acal[G]_ij = sum_k lam_j/lam_k * A_kj * G_ik at the mapped point
            Az = A(g.zeta)
            lam_j = self._lam(j, g.zeta)
            mats = []
            for k in range(self.m):
                coef = lam_j / self._lam(k, g.zeta) * Az[k, j]
                if not np.any(coef):
                    continue
                W = self.pairs[(i, k)].grid.interp_physical(g.z, g.zeta)
                mats.append((k, sp.diags(coef) @ W))
            pd.reaction = mats

    def _diag_integral(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        x = self.tts[i].x
        Aii = self.folded.A(x)[i, i]
        f = (Aii + self.mu) / (2.0 * np.sqrt(self._lam(i, x)))
        tab = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
        return lambda z: np.interp(z, x, tab)

    def _boundary_data(self) -> None:
        n = self.n
        A = self.folded.A
        for (i, j), pd in self.pairs.items():
            g = pd.grid
            low = pd.lower
            if i == j:
                z = g.z[low]
                I = self._diag_integral(i)(z)
                lam = self._lam(i, z)
                sq = np.sqrt(lam)
                pd.G_b[low] = -sq * I
                pd.H_b[low] = 0.5 * sq * (-a_coef(self.tts[i], z) * I - 0.5 * (A(z)[i, i] + self.mu))
            else:
                z = g.chart.diag_z_from_xi(g.xi[low])
                li, lj = self._lam(i, z), self._lam(j, z)
                c1 = A(z)[i, j] * lj * np.sqrt(li) / (lj - li)
                pd.H_b[low] = pd.s * c1 * (np.sqrt(li) - np.sqrt(lj)) / (2.0 * np.sqrt(li))
                pd.J_b[low] = c1 * (np.sqrt(li) + np.sqrt(lj)) / (2.0 * np.sqrt(li))
            # artificial data on (eta, eta)
            d = g.diag
            if j < n and i > j:
                pd.left_data[d] = self.gf((i, j), g.eta[d])
            elif j >= n and i > j - n:
                pd.left_data[d] = self.gf((i, j), g.eta[d])

    def _couplings(self) -> None:
        n = self.n
        for (i, j), pd in self.pairs.items():
            g = pd.grid
            d = g.diag
            if j < n and i <= j:
                src = self.pairs[(i, j + n)].grid
                pd.couple = ((i, j + n), src.diag_matrix(g.eta[d]), 1.0 / self.yt)
            elif j >= n and i <= j - n:
                src = self.pairs[(i, j - n)].grid
                pd.couple = ((i, j - n), src.diag_matrix(g.eta[d]), self.yt)
            else:
                pd.couple = None

    # -- sweeps
    def zero_fields(self) -> Fields:
        return {p: tuple(pd.zero.copy() for _ in range(4)) for p, pd in self.pairs.items()}

    def apply(self, X: Fields, data: bool) -> Fields:
        """One successive-approximation step; ``data`` adds all boundary data."""
        n, mu = self.n, self.mu
        w = 1.0 if data else 0.0
        acal = {}
        for p, pd in self.pairs.items():
            i = p[0]
            r = pd.zero.copy()
            for k, M in pd.reaction:
                r += M @ X[(i, k)][0]
            acal[p] = r
        Gn: dict[Pair, np.ndarray] = {}
        # left columns: G from J along columns
        for (i, j), pd in self.pairs.items():
            if j >= n:
                continue
            g = pd.grid
            alt = np.where(g.row0_mask, X[(i, j)][3], np.nan)
            G = g.cols.start_values(w * pd.G_b, g.size) + g.cols.integrate(X[(i, j)][2], g.size, alt)
            G[pd.lower] = w * pd.G_b[pd.lower]
            Gn[(i, j)] = G
        # right columns: G from H along rows, started on (eta, eta)
        for (i, j), pd in self.pairs.items():
            if j < n:
                continue
            g = pd.grid
            start = w * pd.G_b + w * pd.left_data
            if pd.couple is not None:
                src, W, fac = pd.couple
                start[g.diag] = fac * (W @ Gn[src])
            G = _path_field(g, g.rows, start, X[(i, j)][1])
            G[pd.lower] = w * pd.G_b[pd.lower]
            Gn[(i, j)] = G
        Hn: dict[Pair, np.ndarray] = {}
        for (i, j), pd in self.pairs.items():
            g = pd.grid
            G0, H0 = X[(i, j)][:2]
            s = pd.s
            f = 0.25 * pd.aD * H0 + 0.25 * s * (acal[(i, j)] + mu * G0) - 0.25 * s * pd.at * G0
            top = pd.aS * Gn[(i, j)]
            H = (_path_field(g, g.cols, w * pd.H_b, f)
                 + 0.25 * s * (top - g.cols.start_values(top, g.size)))
            H[pd.lower] = w * pd.H_b[pd.lower]
            Hn[(i, j)] = H
        out: Fields = {}
        for (i, j), pd in self.pairs.items():
            g = pd.grid
            if j >= n:
                out[(i, j)] = (Gn[(i, j)], Hn[(i, j)], pd.zero.copy(), pd.zero.copy())
                continue
            G0, H0, J0, Jm0 = X[(i, j)]
            s = pd.s
            start = w * pd.J_b + w * pd.left_data
            if pd.couple is not None:
                src, W, fac = pd.couple
                start[g.diag] = fac * (W @ Hn[src])
            f = 0.25 * s * (acal[(i, j)] + mu * G0) + 0.25 * pd.aD * H0 + 0.25 * s * pd.aS * J0
            J = _path_field(g, g.rows, start, f)
            J[pd.lower_neg] = w * pd.J_b[pd.lower_neg]
            Jm = pd.zero.copy()
            if g.row0 is not None:
                # same row integral started from the lower boundary value at the origin
                fm = f + 0.25 * s * pd.aS * (Jm0 - J0)
                r0 = g.row0
                Jm[r0.idx] = (w * pd.J_b[r0.idx[0]] + r0.integrate(fm, g.size)[r0.idx])
            out[(i, j)] = (Gn[(i, j)], Hn[(i, j)], J, Jm)
        return out

    def init_fields(self) -> Fields:
        return self.apply(self.zero_fields(), data=True)

    def sweep(self, X: Fields) -> Fields:
        return self.apply(X, data=False)


def max_abs(X: Fields) -> float:
    return max(float(np.max(np.abs(a))) if a.size else 0.0 for v in X.values() for a in v)


def successive_approximation(start: Fields, sweep: Callable[[Fields], Fields], tol: float,
                             max_iter: int, what: str, gamma: dict | None = None):
    """Accumulate deltas until the largest one drops to ``tol``."""
    total = {p: tuple(a.copy() for a in v) for p, v in start.items()}
    log = [max_abs(start)]
    delta = start
    it = 0
    while log[-1] > tol:
        if it >= max_iter:
            raise NoConvergence(what, it, log[-1], gamma)
        delta = sweep(delta)
        it += 1
        for p, v in delta.items():
            total[p] = tuple(t + d for t, d in zip(total[p], v))
        log.append(max_abs(delta))
    return total, it, log


# ---------------------------------------------------------------- solution


@dataclass
class BsKernelSolution:
    """Physical kernel and traces on the uniform grid ``z``.

    ``K[i, j, k, q]`` holds K_ij(z_k, zeta_q) for q <= k and zero above the
    diagonal.  Fine-grid arrays (suffix ``_f``) sample the z=... traces on
    ``z_f`` for downstream quadrature.
    """

    y0: float
    mu: float
    z: np.ndarray
    K: np.ndarray
    K11: np.ndarray
    Kz1: np.ndarray
    K0: np.ndarray
    Kzeta0: np.ndarray
    Atilde0: np.ndarray
    Atilde1: np.ndarray
    z_f: np.ndarray
    Atilde0_f: np.ndarray
    Atilde1_f: np.ndarray
    iterations: int
    log: list[float]
    gamma: dict
    problem: BsProblem | None = field(default=None, repr=False)
    fields: Fields | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.K.shape[0] // 2


def _line_combo(pd: _PairData, G, H, J, line: str, carried: bool,
                dG: Callable[[np.ndarray], np.ndarray] | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
    """Samples of one boundary line and the combination sH+J (z=1) or sH-J (zeta=0).

    ``line`` is 'z1' or 'zeta0'.  When J is not carried it is recovered from
    the tangential derivative of G along the line, taken from ``dG`` (a
    function of the line parameter) when given and by differences otherwise.
    """
    g = pd.grid
    s = pd.s
    on_diag = (line == "z1") == (s == -1)
    idx = g.diag if on_diag else g.upper
    t = g.eta[idx] if on_diag else g.xi[idx]
    Gl, Hl = G[idx], H[idx]
    if carried:
        Jl = J[idx]
    else:
        dG = line_derivative(Gl, t) if dG is None else dG(t)
        Jl = dG - Hl if on_diag else Hl - dG
    combo = s * Hl + Jl if line == "z1" else s * Hl - Jl
    return idx, combo


def _coupled_slope(problem: BsProblem, X: Fields, pair: Pair):
    """Exact slope of G along (eta, eta) where it is copied from a j-n pair."""
    pd = problem.pairs[pair]
    if pair[1] < problem.n or pd.couple is None or pd.s != 1:
        return None
    src, _, fac = pd.couple
    sd = problem.pairs[src]
    G, H, J = X[src][:3]
    idx, _ = _line_combo(sd, G, H, J, "zeta0", True)
    t = sd.grid.eta[idx]
    slope = fac * (H[idx] + J[idx])  # d/deta along the source diagonal
    order = np.argsort(t)
    return lambda q: np.interp(q, t[order], slope[order])


def _trace(pd: _PairData, idx: np.ndarray, vals: np.ndarray, coord: str, q: np.ndarray) -> np.ndarray:
    x = (pd.grid.zeta if coord == "zeta" else pd.grid.z)[idx]
    order = np.argsort(x)
    return np.interp(q, x[order], vals[order])


def extract(problem: BsProblem, X: Fields, n_z: int, fine: int = 4):
    """Physical kernel, traces and well-posedness matrices from converged fields."""
    m, n, yt = problem.m, problem.n, problem.yt
    z = np.linspace(0.0, 1.0, n_z)
    z_f = np.linspace(0.0, 1.0, fine * (n_z - 1) + 1)
    kk, qq = np.tril_indices(n_z)
    K = np.zeros((m, m, n_z, n_z))
    Kz1 = np.zeros((m, m, n_z))
    G0 = np.zeros((m, m, z_f.size))
    Gz0 = np.zeros((m, m, z_f.size))
    for (i, j), pd in problem.pairs.items():
        G, H, J = X[(i, j)][:3]
        W = pd.grid.interp_physical(z[kk], z[qq])
        K[i, j, kk, qq] = (W @ G) / problem._lam(j, z[qq])
        carried = j < n
        idx, c = _line_combo(pd, G, H, J, "z1", carried)
        Kz1[i, j] = _trace(pd, idx, c, "zeta", z) / (
            np.sqrt(problem._lam(i, np.array(1.0))) * problem._lam(j, z))
        idx, c = _line_combo(pd, G, H, J, "zeta0", carried, _coupled_slope(problem, X, (i, j)))
        Gz0[i, j] = _trace(pd, idx, c, "z", z_f) / np.sqrt(problem._lam(j, np.array(0.0)))
        G0[i, j] = _trace(pd, idx, G[idx], "z", z_f)
    lam0 = np.array([problem._lam(k, np.array(0.0)) for k in range(m)])
    dlam0 = np.array([problem._lam(k, np.array(0.0), 1) for k in range(m)])
    K0 = G0 / lam0[None, :, None]
    Kzeta0 = (Gz0 - dlam0[None, :, None] * K0) / lam0[None, :, None]
    A0, A1 = assemble_atilde(G0, Gz0, n, yt)
    step = fine
    return dict(
        z=z, K=K, K11=K[:, :, -1, -1].copy(), Kz1=Kz1, K0=K0[:, :, ::step],
        Kzeta0=Kzeta0[:, :, ::step], Atilde0=A0[:, :, ::step], Atilde1=A1[:, :, ::step],
        z_f=z_f, Atilde0_f=A0, Atilde1_f=A1,
    )


def assemble_atilde(G0: np.ndarray, Gz0: np.ndarray, n: int, yt: float):
    """Well-posedness matrices from G(z,0) and G_zeta(z,0) traces; only i > j is written."""
    m = 2 * n
    A0 = np.zeros_like(G0)
    A1 = np.zeros_like(G0)
    for i in range(m):
        for j in range(i):
            if j < n and i - n <= j:
                A0[i, j] = Gz0[i, j] + Gz0[i, j + n]
                A1[i, j] = -G0[i, j] + G0[i, j + n] / yt
            elif j >= n:
                A0[i, j] = Gz0[i, j] + Gz0[i, j - n]
                A1[i, j] = -G0[i, j] + yt * G0[i, j - n]
    return A0, A1


def solve(folded: FoldedPlant, mu: float, gf: ArtificialBC | None = None,
          opts: SolveOptions = SolveOptions()) -> BsKernelSolution:
    """Solve the backstepping kernel equations by successive approximation."""
    if opts.tol <= 0:
        raise ValueError("tol must be positive")
    prob = BsProblem(folded, mu, gf, opts.n_xi)
    X, it, log = successive_approximation(prob.init_fields(), prob.sweep, opts.tol,
                                          opts.max_iter, "backstepping kernel", prob.gamma)
    ex = extract(prob, X, opts.n_z)
    return BsKernelSolution(y0=folded.y0, mu=float(mu), iterations=it, log=log,
                            gamma=prob.gamma, problem=prob, fields=X, **ex)


# ---------------------------------------------------------------- checks


def lattice_residual(pd: _PairData, G: np.ndarray, lam_zeta: np.ndarray,
                     source: np.ndarray | None = None) -> float:
    """Max residual of ``G_xi_eta = source + aD/4 G_xi + s aS/4 G_eta`` in physical units.

    Central differences on the canonical lattice, scaled by 4/lam_j(zeta) so
    that the value equals the residual of the physical kernel PDE.  Stencils
    centred on eta = 0 are skipped: the exact kernel has a kink along the
    characteristic through the origin.
    """
    g = pd.grid
    centre, nb = g.stencils()
    keep = g.node_ab[centre, 1] != 0
    centre = centre[keep]
    if centre.size == 0:
        return 0.0
    nb = {d: v[keep] for d, v in nb.items()}
    h = g.h
    G_xe = (G[nb[(1, 1)]] - G[nb[(1, -1)]] - G[nb[(-1, 1)]] + G[nb[(-1, -1)]]) / (4 * h * h)
    G_x = (G[nb[(1, 0)]] - G[nb[(-1, 0)]]) / (2 * h)
    G_e = (G[nb[(0, 1)]] - G[nb[(0, -1)]]) / (2 * h)
    F = 0.25 * pd.aD[centre] * G_x + 0.25 * pd.s * pd.aS[centre] * G_e
    if source is not None:
        F = F + source[centre]
    r = 4.0 * (G_xe - F) / lam_zeta[centre]
    return float(np.max(np.abs(r)))


def pde_residual(problem: BsProblem, X: Fields) -> dict[Pair, float]:
    """Max residual of the kernel PDE per pair (see :func:`lattice_residual`)."""
    out = {}
    for (i, j), pd in problem.pairs.items():
        G = X[(i, j)][0]
        acal = pd.zero.copy()
        for k, M in pd.reaction:
            acal += M @ X[(i, k)][0]
        src = 0.25 * pd.s * (acal + problem.mu * G)
        out[(i, j)] = lattice_residual(pd, G, problem._lam(j, pd.grid.zeta), src)
    return out


def residual_report(sol: BsKernelSolution, folded: FoldedPlant,
                    Atilde0: np.ndarray | None = None, Atilde1: np.ndarray | None = None) -> dict:
    """Max-norm residuals of the kernel equations for a solution.

    ``Atilde0``/``Atilde1`` override the assembled matrices (used for negative controls).
    """
    z = sol.z
    m = sol.K.shape[0]
    n = m // 2
    K = sol.K
    lam = folded.lam(z)
    mu = sol.mu
    nz = z.size
    pde = 0.0
    if sol.problem is not None and sol.fields is not None:
        pde = max(pde_residual(sol.problem, sol.fields).values())
    diag = np.array([K[:, :, k, k] for k in range(nz)])  # (nz, m, m)
    # diagonal conditions
    x = np.linspace(0.0, 1.0, 2001)
    lx = folded.lam(x)
    Ax = folded.A(x)
    kii = 0.0
    for i in range(m):
        f = (Ax[i, i] + mu) / (2.0 * np.sqrt(lx[i]))
        I = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
        ref = -np.interp(z, x, I) / np.sqrt(lam[i])
        kii = max(kii, float(np.max(np.abs(diag[:, i, i] - ref))))
    off = diag.copy()
    for i in range(m):
        off[:, i, i] = 0.0
    A0 = sol.Atilde0 if Atilde0 is None else Atilde0
    A1 = sol.Atilde1 if Atilde1 is None else Atilde1
    lam0 = folded.lam(np.array([0.0]))[:, 0]
    dlam0 = folded.lam(np.array([0.0]), 1)[:, 0]
    L0 = np.diag(lam0)
    dL0 = np.diag(dlam0)
    S1 = np.vstack([folded.yt * np.eye(n), -np.eye(n)])
    S2 = np.vstack([np.eye(n), np.eye(n)])
    bc1 = bc2 = 0.0
    for k in range(nz):
        K0 = sol.K0[:, :, k]
        Kz = sol.Kzeta0[:, :, k]
        r1 = K0 @ L0 @ S1 + A1[:, :, k] @ S1
        r2 = Kz @ L0 @ S2 + K0 @ dL0 @ S2 - A0[:, :, k] @ S2
        bc1 = max(bc1, float(np.max(np.abs(r1))))
        bc2 = max(bc2, float(np.max(np.abs(r2))))
    return {
        "pde": pde,
        "diag_ii": kii,
        "diag_offdiag": float(np.max(np.abs(off))),
        "origin": float(np.max(np.abs(K[:, :, 0, 0]))),
        "fold_bc1": bc1,
        "fold_bc2": bc2,
        "lower_triangular": bool(np.all(np.triu(np.moveaxis(A0, 2, 0)) == 0)
                                 and np.all(np.triu(np.moveaxis(A1, 2, 0)) == 0)),
    }


def dump(sol: BsKernelSolution, out: Path) -> list[str]:
    """Write kernel CSVs and return the file names."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    m = sol.K.shape[0]
    files = []
    with open(out / "K.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "z", "zeta", "value"])
        for i in range(m):
            for j in range(m):
                for k, zk in enumerate(sol.z):
                    for q in range(k + 1):
                        wr.writerow([i + 1, j + 1, repr(float(zk)), repr(float(sol.z[q])),
                                     repr(float(sol.K[i, j, k, q]))])
    files.append("K.csv")
    for name, arr in (("Kz1", sol.Kz1), ("Atilde0", sol.Atilde0), ("Atilde1", sol.Atilde1)):
        _dump_trace(out / f"{name}.csv", sol.z, arr)
        files.append(f"{name}.csv")
    with open(out / "bs_kernel.json", "w") as fh:
        json.dump({"y0": sol.y0, "mu": sol.mu, "iterations": sol.iterations, "log": sol.log,
                   "gamma": sol.gamma, "K11": sol.K11.tolist()}, fh, indent=2)
    files.append("bs_kernel.json")
    return files


def _dump_trace(path: os.PathLike, z: np.ndarray, arr: np.ndarray) -> None:
    m1, m2 = arr.shape[:2]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x"] + [f"{i + 1}_{j + 1}" for i in range(m1) for j in range(m2)])
        for k, x in enumerate(z):
            wr.writerow([repr(float(x))] + [repr(float(arr[i, j, k])) for i in range(m1)
                                            for j in range(m2)])
