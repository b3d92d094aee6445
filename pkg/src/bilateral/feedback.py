"""Physical state feedback assembled from the backstepping and decoupling kernels.

The folded law is ``u = K(1,1) x(1) + int_0^1 R_f(zeta) x(zeta) dzeta`` with
``R_f = K_z(1, .) + col(0, Rcheck_f)``.  Unfolding it gives gains ``R0``, ``R1``
and a gain field ``R(ž)`` that branches at the folding point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bs_kernel import BsKernelSolution
from .dec_kernel import DecKernelSolution
from .folding import FoldedPlant, piecewise_grid

GAIN_NODES = 201


class GridMismatch(ValueError):
    """Kernel solutions were sampled on different physical grids."""


def volterra_adjoint_weights(z: np.ndarray) -> np.ndarray:
    """Weights ``W[k, q]`` with ``sum_q W[k, q] f_q`` = trapezoid of f over [0, z_k].

    The same array read column-wise, divided by the outer trapezoid weight of
    node q, gives the quadrature over [zeta_q, 1] that makes the two
    integration orders agree exactly on the grid.
    """
    m = z.size
    h = np.diff(z)
    W = np.zeros((m, m))
    for k in range(1, m):
        W[k, :k] += 0.5 * h[:k]
        W[k, 1:k + 1] += 0.5 * h[:k]
    return W


def trapezoid_weights(z: np.ndarray) -> np.ndarray:
    h = np.diff(z)
    w = np.zeros(z.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def correction_field(Rt: np.ndarray, K: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``Rt(zeta) - int_zeta^1 Rt(s) K(s, zeta) ds`` on ``z``.

    ``Rt`` has shape (p, m, nz) and ``K`` shape (m, m, nz, nz) with
    ``K[..., k, q] = K(z_k, z_q)``.  The integral uses the discrete adjoint
    of the iterated trapezoid so the change of integration order is exact.
    """
    W = volterra_adjoint_weights(z)
    outer = trapezoid_weights(z)
    # RK[a, b, k, q] = sum_c Rt[a, c, k] K[c, b, k, q]
    RK = np.einsum("ack,cbkq->abkq", Rt, K)
    tail = np.einsum("k,kq,abkq->abq", outer, W, RK)
    safe = np.where(outer > 0, outer, 1.0)
    return Rt - tail / safe


@dataclass(frozen=True)
class FeedbackGains:
    """Gains of the bilateral law on a ž-grid that contains ``y0`` as a node.

    ``R`` holds the right-branch value at the ``y0`` node and ``R_y0_left``
    the left limit there.
    """

    y0: float
    yt: float
    R0: np.ndarray
    R1: np.ndarray
    zhat: np.ndarray
    R: np.ndarray
    R_y0_left: np.ndarray
    z: np.ndarray
    Rf: np.ndarray
    Rcheck_f: np.ndarray
    B0: np.ndarray
    B1: np.ndarray

    @property
    def n(self) -> int:
        return self.R0.shape[1]

    @property
    def i_y0(self) -> int:
        return int(np.argmin(np.abs(self.zhat - self.y0)))

    def R_at(self, zhat: np.ndarray) -> np.ndarray:
        """Gain field at arbitrary ž by interpolating ``Rf`` (right branch at y0)."""
        return _unfold_gain(self.Rf, self.z, self.y0, np.asarray(zhat, dtype=float))


def _interp_rows(F: np.ndarray, z: np.ndarray, q: np.ndarray) -> np.ndarray:
    a, b = F.shape[:2]
    out = np.empty((a, b, q.size))
    for i in range(a):
        for j in range(b):
            out[i, j] = np.interp(q, z, F[i, j])
    return out


def _unfold_gain(Rf: np.ndarray, z: np.ndarray, y0: float, zhat: np.ndarray) -> np.ndarray:
    n = Rf.shape[1] // 2
    out = np.empty((Rf.shape[0], n, zhat.size))
    left = zhat < y0
    out[:, :, left] = _interp_rows(Rf[:, :n], z, (y0 - zhat[left]) / y0) / y0
    right = ~left
    out[:, :, right] = _interp_rows(Rf[:, n:], z, (zhat[right] - y0) / (1 - y0)) / (1 - y0)
    return out


def assemble_gains(bs: BsKernelSolution, dec: DecKernelSolution, folded: FoldedPlant,
                   nodes: int = GAIN_NODES) -> FeedbackGains:
    """Unfold the folded feedback into ``R0``, ``R1`` and ``R(ž)``."""
    if bs.z.shape != dec.z.shape or not np.allclose(bs.z, dec.z, rtol=0, atol=1e-14):
        raise GridMismatch("backstepping and decoupling kernels use different z grids")
    n = folded.n
    y0 = folded.y0
    z = bs.z
    Rt = np.concatenate([dec.Pz1, dec.Qz1], axis=1)  # n x 2n
    Rcheck = correction_field(Rt, bs.K, z)
    Rf = bs.Kz1.copy()
    Rf[n:] += Rcheck
    zhat = piecewise_grid(y0, nodes)
    R = _unfold_gain(Rf, z, y0, zhat)
    R_left = _interp_rows(Rf[:, :n], z, np.array([0.0]))[:, :, 0] / y0
    return FeedbackGains(
        y0=y0, yt=folded.yt,
        R0=bs.K11[:, :n].copy(), R1=bs.K11[:, n:].copy(),
        zhat=zhat, R=R, R_y0_left=R_left,
        z=z.copy(), Rf=Rf, Rcheck_f=Rcheck,
        B0=folded.plant.B0.copy(), B1=folded.plant.B1.copy(),
    )


def split_integral(g: FeedbackGains, w: np.ndarray) -> np.ndarray:
    """``int_0^1 R(ž) w(ž) dž`` with the trapezoid split at the y0 node."""
    k = g.i_y0
    zh = g.zhat
    f = np.einsum("ajq,jq->aq", g.R, w)
    left = f[:, :k + 1].copy()
    left[:, k] = g.R_y0_left @ w[:, k]
    right = f[:, k:]
    return np.trapezoid(left, zh[:k + 1], axis=1) + np.trapezoid(right, zh[k:], axis=1)


def evaluate_control(g: FeedbackGains, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boundary inputs ``(u0, u1)`` for the state ``w`` (shape (n, len(g.zhat)))."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    if w.shape != (g.n, g.zhat.size):
        raise ValueError(f"state must have shape {(g.n, g.zhat.size)}, got {w.shape}")
    n = g.n
    v = g.R0 @ w[:, 0] + g.R1 @ w[:, -1] + split_integral(g, w)
    u0 = -g.B0 @ w[:, 0] - v[:n] / g.y0
    u1 = -g.B1 @ w[:, -1] + v[n:] / (1.0 - g.y0)
    return u0, u1


def zero_gains(folded: FoldedPlant, nodes: int = GAIN_NODES, nz: int = 51) -> FeedbackGains:
    """Gains of the trivial design (all kernels zero)."""
    n = folded.n
    z = np.linspace(0.0, 1.0, nz)
    zhat = piecewise_grid(folded.y0, nodes)
    return FeedbackGains(
        y0=folded.y0, yt=folded.yt, R0=np.zeros((2 * n, n)), R1=np.zeros((2 * n, n)),
        zhat=zhat, R=np.zeros((2 * n, n, zhat.size)), R_y0_left=np.zeros((2 * n, n)),
        z=z, Rf=np.zeros((2 * n, 2 * n, nz)), Rcheck_f=np.zeros((n, 2 * n, nz)),
        B0=folded.plant.B0.copy(), B1=folded.plant.B1.copy(),
    )
