"""Travel-time maps, canonical charts and the sampled grids built on them.

A chart maps the physical kernel domain (triangle ``0 <= zeta <= z <= 1`` or
the unit square) to characteristic coordinates ``(xi, eta)``.  A
:class:`ChartGrid` samples a chart on a uniform ``(xi, eta)`` lattice plus
extra points on curved or off-lattice boundaries, and provides the path
integrals and interpolation operators used by the kernel solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

TABLE_NODES = 2001

LamFn = Callable[[np.ndarray, int], np.ndarray]
"""``f(x, order)`` returning the ``order``-th derivative of one coefficient."""


class TravelTime:
    """phi(x) = int_0^x 1/sqrt(lam) tabulated by cumulative trapezoid."""

    def __init__(self, lam: LamFn, nodes: int = TABLE_NODES):
        self.lam = lam
        self.x = np.linspace(0.0, 1.0, nodes)
        vals = np.asarray(lam(self.x, 0), dtype=float)
        if np.any(vals <= 0):
            raise ValueError("travel time needs a positive coefficient")
        f = 1.0 / np.sqrt(vals)
        dx = np.diff(self.x)
        self.table = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dx)])
        self.total = float(self.table[-1])

    def __call__(self, x):
        return np.interp(x, self.x, self.table)

    def inv(self, t):
        return np.interp(t, self.table, self.x)

    def coef(self, x, order: int = 0):
        return self.lam(np.asarray(x, dtype=float), order)


def a_coef(tt: TravelTime, x: np.ndarray) -> np.ndarray:
    """lam'(x) / (2 sqrt(lam(x)))."""
    lam = tt.coef(x, 0)
    return tt.coef(x, 1) / (2.0 * np.sqrt(lam))


def a_coef_dx(tt: TravelTime, x: np.ndarray) -> np.ndarray:
    """d/dx of :func:`a_coef`."""
    lam = tt.coef(x, 0)
    d1 = tt.coef(x, 1)
    d2 = tt.coef(x, 2)
    return d2 / (2.0 * np.sqrt(lam)) - d1**2 / (4.0 * lam**1.5)


# ---------------------------------------------------------------- charts

TRIANGLE = "triangle"
SQUARE = "square"


class Chart:
    """Canonical coordinates for one index pair.

    ``ta`` is the travel time acting on ``z`` and ``tb`` the one acting on
    ``zeta``.  With ``s = +1``::

        xi = phi_a(z) + phi_b(zeta),   eta = phi_a(z) - phi_b(zeta)

    and with ``s = -1`` the coordinates are reflected so that the chart
    origin sits at ``z = zeta = 1``.  The square kind (``s = +1`` only) is
    used for the Fredholm kernel.
    """

    def __init__(self, ta: TravelTime, tb: TravelTime, s: int, kind: str = TRIANGLE,
                 same: bool = False):
        if s not in (1, -1):
            raise ValueError("s must be +1 or -1")
        if kind == SQUARE and s != 1:
            raise ValueError("square charts use s = +1")
        self.ta, self.tb, self.s, self.kind = ta, tb, s, kind
        self.same = same  # identical coefficients on both axes (diagonal index pair)
        self.A1, self.B1 = ta.total, tb.total
        self.bplus = self.A1 + self.B1
        if kind == SQUARE:
            self.etabar = self.A1
            self.bminus = self.A1 - self.B1
        else:
            self.etabar = self.A1 if s == 1 else self.B1
            self.bminus = -abs(self.A1 - self.B1) if not same else 0.0
        if kind == TRIANGLE and not same:
            zt = ta.x
            dxi, deta = self.forward(zt, zt)
            order = np.argsort(dxi)
            self._diag_xi = dxi[order]
            self._diag_eta = deta[order]
            self._diag_z = zt[order]

    # -- maps
    def forward(self, z, zeta):
        pa, pb = self.ta(z), self.tb(zeta)
        s = self.s
        xi = 0.5 * (1 - s) * (self.A1 + self.B1) + s * (pa + pb)
        eta = -0.5 * (1 - s) * (self.A1 - self.B1) + pa - pb
        return xi, eta

    def travel(self, xi, eta):
        """Travel times (phi_a(z), phi_b(zeta)) of a canonical point."""
        s = self.s
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        ta = 0.5 * (s * xi + eta) + 0.5 * (1 - s) * self.A1
        tb = 0.5 * (s * xi - eta) + 0.5 * (1 - s) * self.B1
        return ta, tb

    def inverse(self, xi, eta):
        ta, tb = self.travel(xi, eta)
        return self.ta.inv(ta), self.tb.inv(tb)

    # -- boundaries
    def eta_lower(self, xi):
        """Lower boundary eta_l(xi)."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == SQUARE:
            return np.where(xi <= self.B1, -xi, xi - 2.0 * self.B1)
        if self.same:
            return np.zeros_like(xi)
        return np.interp(xi, self._diag_xi, self._diag_eta)

    def xi_left(self, eta):
        """Left boundary xi_l(eta)."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == SQUARE:
            return np.abs(eta)
        if self.same:
            return np.maximum(eta, 0.0)
        # eta_l decreases with xi; reverse tables for np.interp
        low = np.interp(eta, self._diag_eta[::-1], self._diag_xi[::-1])
        return np.where(eta >= 0, eta, low)

    def diag_z_from_xi(self, xi):
        """Physical z of the diagonal image point with abscissa xi (triangle, i != j)."""
        return np.interp(xi, self._diag_xi, self._diag_z)

    def diag_z_from_eta(self, eta):
        return np.interp(eta, self._diag_eta[::-1], self._diag_z[::-1])

    def eta_lower_slope(self, z):
        """d eta_l / d xi at the diagonal image of physical point z (triangle, i != j)."""
        ra = 1.0 / np.sqrt(self.ta.coef(z, 0))
        rb = 1.0 / np.sqrt(self.tb.coef(z, 0))
        return self.s * (ra - rb) / (ra + rb)

    def inside(self, xi, eta, tol: float = 1e-12) -> np.ndarray:
        ta, tb = self.travel(xi, eta)
        ok = (ta >= -tol) & (ta <= self.A1 + tol) & (tb >= -tol) & (tb <= self.B1 + tol)
        if self.kind == TRIANGLE:
            if self.same:
                ok &= np.asarray(eta) >= -tol
            else:
                ok &= np.asarray(eta) >= self.eta_lower(xi) - tol
        return ok


def sign(i: int, j: int) -> int:
    return 1 if i <= j else -1


# ---------------------------------------------------------------- sampled grids


@dataclass
class PathSet:
    """Concatenated integration paths through the samples of a grid."""

    idx: np.ndarray  # sample index of each path entry
    coord: np.ndarray  # integration coordinate of each entry
    head: np.ndarray  # bool: entry starts a path
    start: np.ndarray  # sample index of the path start for each entry

    def integrate(
        self, f: np.ndarray, n_samples: int, alt: np.ndarray | None = None,
        cut: float | None = None,
    ) -> np.ndarray:
        """Cumulative trapezoid of per-sample ``f`` along every path, scattered to samples.

        Where ``alt`` is finite it replaces ``f`` as the right end value of the
        segment arriving at that sample (one-sided limit below a jump).  A step
        straddling the coordinate ``cut`` integrates each side with its own end value.
        """
        fv = f[self.idx]
        right = fv
        if alt is not None:
            a = alt[self.idx]
            use = np.isfinite(a)
            if use.any():
                right = fv.copy()
                right[use] = a[use]
        inc = np.zeros_like(fv)
        inc[1:] = 0.5 * (right[1:] + fv[:-1]) * np.diff(self.coord)
        if cut is not None:
            c0, c1 = self.coord[:-1], self.coord[1:]
            k = np.nonzero((np.minimum(c0, c1) < cut) & (np.maximum(c0, c1) > cut))[0]
            inc[k + 1] = (cut - c0[k]) * fv[k] + (c1[k] - cut) * right[k + 1]
        inc[self.head] = 0.0
        cum = np.cumsum(inc)
        base = np.maximum.accumulate(np.where(self.head, np.arange(cum.size), 0))
        cum = cum - cum[base]
        out = np.zeros(n_samples)
        out[self.idx] = cum
        return out

    def start_values(self, v: np.ndarray, n_samples: int) -> np.ndarray:
        out = np.zeros(n_samples)
        out[self.idx] = v[self.start]
        return out

    def members(self, n_samples: int) -> np.ndarray:
        m = np.zeros(n_samples, dtype=bool)
        m[self.idx] = True
        return m


class ChartGrid:
    """Uniform (xi, eta) lattice restricted to a chart domain plus boundary samples.

    The spacing ``h`` is chosen near ``bplus/(n_xi - 1)`` such that
    ``2*etabar/h`` is an even integer: the diagonal ``xi = eta``, the upper
    boundary ``xi + eta = 2*etabar`` and, for square charts, the line
    ``eta = -xi`` then pass through lattice nodes.
    """

    def __init__(self, chart: Chart, n_xi: int = 100):
        self.chart = chart
        c = chart
        h0 = c.bplus / (n_xi - 1)
        m = 2 * max(1, int(round(c.etabar / h0)))
        h = 2.0 * c.etabar / m
        self.h = h
        self.m = m
        tol = 1e-9 * h
        self.tol = tol
        na = int(np.floor(c.bplus / h + 1e-9)) + 1
        eta_min = c.bminus if c.kind == TRIANGLE else -c.B1
        b_lo = int(np.ceil(eta_min / h - 1e-9))
        b_hi = m // 2
        A, B = np.meshgrid(np.arange(na), np.arange(b_lo, b_hi + 1), indexing="ij")
        A = A.ravel()
        B = B.ravel()
        xi = A * h
        eta = B * h
        ok = c.inside(xi, eta, tol=1e-9 * h) & (eta <= xi + tol) & (xi + eta <= 2 * c.etabar + tol)
        # lattice nodes sitting on the curved lower boundary are treated as boundary samples
        A, B, xi, eta = A[ok], B[ok], xi[ok], eta[ok]
        self.node_ab = np.stack([A, B], axis=1)
        pts_xi = list(xi)
        pts_eta = list(eta)
        is_node = [True] * len(pts_xi)
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(A, B))}
        self._lookup = lookup

        def add(x: float, e: float) -> int:
            # reuse a lattice node if the point coincides with it
            a = int(round(x / h))
            b = int(round(e / h))
            if abs(a * h - x) <= 1e3 * tol and abs(b * h - e) <= 1e3 * tol and (a, b) in lookup:
                return lookup[(a, b)]
            for k in extra_keys.get((a, b), []):
                if abs(pts_xi[k] - x) <= 1e3 * tol and abs(pts_eta[k] - e) <= 1e3 * tol:
                    return k
            pts_xi.append(float(x))
            pts_eta.append(float(e))
            is_node.append(False)
            extra_keys.setdefault((a, b), []).append(len(pts_xi) - 1)
            return len(pts_xi) - 1

        extra_keys: dict[tuple[int, int], list[int]] = {}
        a_vals = np.arange(na)
        b_vals = np.arange(b_lo, b_hi + 1)

        # lower boundary samples (bottom of every column)
        bottoms = {}
        for a in a_vals:
            x = a * h
            if x > c.bplus + tol:
                continue
            bottoms[int(a)] = add(x, float(c.eta_lower(x)))
        # boundary samples at the start (and, for squares, the end) of rows
        row_start = {}
        row_end = {}
        for b in b_vals:
            e = b * h
            if e >= -tol:
                k = lookup.get((int(b), int(b)))
                if k is None:
                    k = add(e, e)
                row_start[int(b)] = k
            else:
                row_start[int(b)] = add(float(c.xi_left(e)), e)
            if c.kind == SQUARE and e <= c.bminus + tol:
                row_end[int(b)] = add(e + 2.0 * c.B1, e)
        # chart corners on curved / off-lattice boundaries
        tip = add(c.bplus, c.bminus)
        if c.kind == SQUARE:
            corner = add(c.B1, -c.B1)
        else:
            corner = tip
        self.tip = tip
        self.corner = corner

        self.xi = np.array(pts_xi)
        self.eta = np.array(pts_eta)
        self.is_node = np.array(is_node)
        self.size = self.xi.size
        n_s = self.size

        # lower boundary flag: on eta_l(xi)
        self.on_lower = np.abs(self.eta - c.eta_lower(self.xi)) <= 1e3 * tol
        self.on_diag = (np.abs(self.eta - self.xi) <= 1e3 * tol) & (self.eta >= -1e3 * tol)
        self.on_upper = np.abs(self.xi + self.eta - 2 * c.etabar) <= 1e3 * tol

        # column paths
        col_idx, col_coord, col_head, col_start = [], [], [], []
        node_cols: dict[int, list[tuple[float, int]]] = {}
        for k, (a, b) in enumerate(zip(A, B)):
            node_cols.setdefault(int(a), []).append((b * h, k))
        for a, kb in bottoms.items():
            e0 = self.eta[kb]
            entries = [(e0, kb)] + [
                (e, k) for e, k in sorted(node_cols.get(a, [])) if e > e0 + 1e3 * tol
            ]
            for pos, (e, k) in enumerate(entries):
                col_idx.append(k)
                col_coord.append(e)
                col_head.append(pos == 0)
                col_start.append(kb)
        self.cols = PathSet(np.array(col_idx), np.array(col_coord), np.array(col_head),
                            np.array(col_start))
        # row paths
        row_idx, row_coord, row_head, row_start_l = [], [], [], []
        node_rows: dict[int, list[tuple[float, int]]] = {}
        for k, (a, b) in enumerate(zip(A, B)):
            node_rows.setdefault(int(b), []).append((a * h, k))
        for b, ks in row_start.items():
            x0 = self.xi[ks]
            entries = [(x0, ks)] + [
                (x, k) for x, k in sorted(node_rows.get(b, [])) if x > x0 + 1e3 * tol
            ]
            if b in row_end:
                ke = row_end[b]
                xe = self.xi[ke]
                entries = [(x, k) for x, k in entries if x < xe - 1e3 * tol or k == ks]
                if xe > x0 + 1e3 * tol:
                    entries.append((xe, ke))
            for pos, (x, k) in enumerate(entries):
                row_idx.append(k)
                row_coord.append(x)
                row_head.append(pos == 0)
                row_start_l.append(ks)
        self.rows = PathSet(np.array(row_idx), np.array(row_coord), np.array(row_head),
                            np.array(row_start_l))
        self.row_starts = np.array(sorted(set(row_start.values())))
        # row fields jump across eta = 0 when the domain extends below it; the
        # lower limit is carried on a copy of row 0 started at the origin
        self.row0 = None
        self.row0_mask = np.zeros(len(pts_xi), dtype=bool)
        if eta_min < -1e3 * tol and 0 in row_start:
            r_idx = [k for k, st in zip(row_idx, row_start_l) if st == row_start[0]]
            r_coord = [pts_xi[k] for k in r_idx]
            if len(r_idx) > 1:
                self.row0 = PathSet(np.array(r_idx), np.array(r_coord),
                                    np.arange(len(r_idx)) == 0,
                                    np.full(len(r_idx), row_start[0]))
                self.row0_mask[np.array(r_idx[1:])] = True
        self.col_bottoms = np.array(sorted(set(bottoms.values())))

        # diagonal samples (eta >= 0 on xi = eta), sorted by eta
        d = np.nonzero(self.on_diag)[0]
        self.diag = d[np.argsort(self.eta[d])]
        # upper boundary samples sorted by xi (includes the tip when it lies there)
        u = np.nonzero(self.on_upper)[0]
        self.upper = u[np.argsort(self.xi[u])]
        # square charts: the zeta = 1 segment sorted by xi
        if c.kind == SQUARE:
            seg = np.abs(self.xi - self.eta - 2.0 * c.B1) <= 1e3 * tol
            sidx = np.nonzero(seg)[0]
            self.segment = sidx[np.argsort(self.xi[sidx])]
        else:
            self.segment = np.array([], dtype=int)

        # physical coordinates of every sample
        self.z, self.zeta = c.inverse(self.xi, self.eta)
        if c.kind == TRIANGLE:
            self.zeta = np.minimum(self.zeta, self.z)
        self._tri: Delaunay | None = None
        assert n_s == self.size

    # -- interpolation
    @property
    def tri(self) -> Delaunay:
        if self._tri is None:
            self._tri = Delaunay(np.column_stack([self.xi, self.eta]))
        return self._tri

    def interp_matrix(self, qxi, qeta) -> sp.csr_matrix:
        """Sparse matrix of piecewise-linear interpolation weights at query points."""
        q = np.column_stack([np.ravel(qxi), np.ravel(qeta)])
        tri = self.tri
        simp = tri.find_simplex(q, tol=1e-10)
        nq = q.shape[0]
        rows = np.repeat(np.arange(nq), 3)
        verts = np.zeros((nq, 3), dtype=int)
        wts = np.zeros((nq, 3))
        good = simp >= 0
        if np.any(good):
            verts[good], wts[good] = self._bary(q[good], simp[good])
        bad = np.nonzero(~good)[0]
        if bad.size:
            tree = cKDTree(tri.points)
            _, near = tree.query(q[bad])
            v2s = self._vertex_simplices()
            for r, p in zip(bad, near):
                cands = v2s[p]
                vv, ww = self._bary(np.repeat(q[r:r + 1], len(cands), 0), np.array(cands))
                best = int(np.argmax(ww.min(axis=1)))
                w = np.clip(ww[best], 0.0, None)
                verts[r], wts[r] = vv[best], w / w.sum()
        return sp.csr_matrix((wts.ravel(), (rows, verts.ravel())), shape=(nq, self.size))

    def _bary(self, q: np.ndarray, simp: np.ndarray):
        tri = self.tri
        T = tri.transform[simp]
        b = np.einsum("nij,nj->ni", T[:, :2, :], q - T[:, 2, :])
        w = np.column_stack([b, 1.0 - b.sum(axis=1)])
        return tri.simplices[simp], w

    def _vertex_simplices(self):
        if not hasattr(self, "_v2s"):
            v2s: list[list[int]] = [[] for _ in range(self.size)]
            for s_, verts in enumerate(self.tri.simplices):
                for v in verts:
                    v2s[v].append(s_)
            self._v2s = v2s
        return self._v2s

    def interp_physical(self, z, zeta) -> sp.csr_matrix:
        xi, eta = self.chart.forward(np.ravel(z), np.ravel(zeta))
        return self.interp_matrix(xi, eta)

    def taylor_physical(self, z, zeta, F: np.ndarray, Fxi: np.ndarray, Feta: np.ndarray,
                        lines: tuple[tuple[int, float], ...] = (), k: int = 8) -> np.ndarray:
        """First-order Taylor step from the nearest lattice node on the query's side of ``lines``.

        ``lines`` holds (axis, value) pairs (axis 0 for xi, 1 for eta) across which the
        derivative fields jump.  Queries with no admissible node among the ``k`` nearest
        fall back to piecewise-linear interpolation.
        """
        qx, qe = self.chart.forward(np.ravel(z), np.ravel(zeta))
        nodes = np.nonzero(self.is_node)[0]
        if not hasattr(self, "_node_tree"):
            self._node_tree = cKDTree(np.column_stack([self.xi[nodes], self.eta[nodes]]))
        k = min(k, nodes.size)
        _, near = self._node_tree.query(np.column_stack([qx, qe]), k=k)
        cand = nodes[near.reshape(qx.size, k)]
        ok = np.ones(cand.shape, dtype=bool)
        for axis, value in lines:
            c = (self.xi if axis == 0 else self.eta)[cand]
            q = (qx if axis == 0 else qe)[:, None]
            eps = 1e3 * self.tol
            ok &= ((q >= value - eps) & (c >= value - eps)) | ((q < value - eps) & (c < value - eps))
        found = ok.any(axis=1)
        pick = cand[np.arange(qx.size), np.argmax(ok, axis=1)]
        out = F[pick] + Fxi[pick] * (qx - self.xi[pick]) + Feta[pick] * (qe - self.eta[pick])
        if not found.all():
            out[~found] = self.interp_matrix(qx[~found], qe[~found]) @ F
        return out

    def line_matrix(
        self, line: np.ndarray, coord: np.ndarray, q: np.ndarray, cut: float | None = None
    ) -> sp.csr_matrix:
        """1-D linear interpolation along an ordered sample line (clamped at the ends).

        With ``cut`` set, queries on either side of it only use samples from their
        own side (linear extrapolation), so a jump at ``cut`` is not smeared.
        """
        q = np.ravel(q)
        if cut is not None:
            lo, hi = coord < cut, coord >= cut
            if lo.sum() >= 2 and hi.sum() >= 2:
                ql = q < cut
                A = sp.lil_matrix((q.size, self.size))
                if ql.any():
                    A[np.nonzero(ql)[0]] = self._extrap(line[lo], coord[lo], q[ql])
                if (~ql).any():
                    A[np.nonzero(~ql)[0]] = self._extrap(line[hi], coord[hi], q[~ql])
                return A.tocsr()
        pos = np.clip(np.searchsorted(coord, q) - 1, 0, max(len(coord) - 2, 0))
        if len(coord) == 1:
            return sp.csr_matrix((np.ones(q.size), (np.arange(q.size), np.full(q.size, line[0]))),
                                 shape=(q.size, self.size))
        x0, x1 = coord[pos], coord[pos + 1]
        t = np.clip((q - x0) / (x1 - x0), 0.0, 1.0)
        rows = np.repeat(np.arange(q.size), 2)
        cols = np.column_stack([line[pos], line[pos + 1]]).ravel()
        vals = np.column_stack([1.0 - t, t]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(q.size, self.size))

    def _extrap(self, line: np.ndarray, coord: np.ndarray, q: np.ndarray) -> sp.csr_matrix:
        pos = np.clip(np.searchsorted(coord, q) - 1, 0, len(coord) - 2)
        x0, x1 = coord[pos], coord[pos + 1]
        t = (q - x0) / (x1 - x0)
        rows = np.repeat(np.arange(q.size), 2)
        cols = np.column_stack([line[pos], line[pos + 1]]).ravel()
        vals = np.column_stack([1.0 - t, t]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(q.size, self.size))

    def diag_matrix(self, eta_q: np.ndarray, cut: float | None = None) -> sp.csr_matrix:
        """Interpolation along the diagonal xi = eta."""
        return self.line_matrix(self.diag, self.eta[self.diag], eta_q, cut)

    def stencils(self) -> tuple[np.ndarray, dict[tuple[int, int], np.ndarray]]:
        """Lattice nodes whose full 3x3 neighbourhood is in the chart.

        Returns the centre indices and, per offset (da, db), the neighbour indices.
        """
        offsets = [(da, db) for da in (-1, 0, 1) for db in (-1, 0, 1) if (da, db) != (0, 0)]
        L = self._lookup
        nb = {d: np.array([L.get((int(a) + d[0], int(b) + d[1]), -1) for a, b in self.node_ab],
                          dtype=int) for d in offsets}
        ok = np.all([v >= 0 for v in nb.values()], axis=0)
        centre = np.nonzero(ok)[0]
        return centre, {d: v[centre] for d, v in nb.items()}


def line_derivative(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Second-order derivative of samples along a line with coordinate ``t``."""
    if values.size < 3:
        if values.size < 2:
            return np.zeros_like(values)
        return np.full_like(values, (values[1] - values[0]) / (t[1] - t[0]))
    return np.gradient(values, t, edge_order=2)
