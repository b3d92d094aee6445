"""Method-of-lines simulation of the plant, the closed loop and the target system.

Space: second-order differences on a piecewise-uniform ž-grid with ``y0`` as a
node; Neumann/Robin ends through ghost nodes.  Time: Crank-Nicolson on the
local operator.  The boundary feedback is evaluated from the previous step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bs_kernel import BsKernelSolution
from .dec_kernel import DecKernelSolution
from .expr import Expr, evaluate, parse
from .feedback import FeedbackGains, evaluate_control, trapezoid_weights
from .folding import FoldedPlant, PlantSpec, fold_state, piecewise_grid, unfold_state

BLOWUP_NORM = 1e9
DEFAULT_IC = "0.75*sin(pi*z+2*pi)+0.25*cos(3*pi*z+pi/2)"

OPEN_LOOP = "open-loop"
CLOSED_LOOP = "closed-loop"
TARGET = "target"


class BlowUp(RuntimeError):
    """The state norm crossed the blow-up guard; ``partial`` holds the run so far."""

    def __init__(self, t: float, norm: float, partial: "Trajectory"):
        super().__init__(f"state norm {norm:.3g} exceeded {BLOWUP_NORM:g} at t={t:.6g}")
        self.t = t
        self.norm = norm
        self.partial = partial


@dataclass(frozen=True)
class SimConfig:
    T: float = 1.0
    dt: float = 1e-5
    nodes: int = 201
    y0: float | None = None
    ic: tuple[Expr, ...] | None = None
    mode: str = CLOSED_LOOP
    stride: float = 0.01

    def initial_state(self, zhat: np.ndarray, n: int) -> np.ndarray:
        ic = self.ic if self.ic is not None else (parse(DEFAULT_IC),) * n
        if len(ic) != n:
            raise ValueError(f"need {n} initial-condition expressions, got {len(ic)}")
        return np.array([np.broadcast_to(evaluate(e, zhat), zhat.shape) for e in ic], dtype=float)


@dataclass
class Trajectory:
    zhat: np.ndarray
    t: np.ndarray
    w: np.ndarray  # (stamps, n, nodes)
    u0: np.ndarray  # (stamps, n)
    u1: np.ndarray
    norm: np.ndarray
    mode: str = OPEN_LOOP
    dt: float = 0.0

    def __post_init__(self) -> None:
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("time stamps must be strictly increasing")

    def ratio(self) -> np.ndarray:
        if self.norm[0] <= 0:
            raise ValueError("initial norm is zero")
        return self.norm / self.norm[0]


# ---------------------------------------------------------------- norms and grids


def weighted_norm(w: np.ndarray, plant: PlantSpec, zhat: np.ndarray) -> float:
    """``(int_0^1 |Lambda^{-1/2} w|^2 dž)^{1/2}`` by trapezoid."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    lam = plant.lam_values(zhat)
    return float(np.sqrt(np.trapezoid(np.sum(w**2 / lam, axis=0), zhat)))


def _grid(cfg: SimConfig, gains: FeedbackGains | None) -> np.ndarray:
    if gains is not None:
        if cfg.nodes != gains.zhat.size:
            raise ValueError("gains were assembled on a different number of nodes")
        return gains.zhat
    if cfg.y0 is not None:
        return piecewise_grid(cfg.y0, cfg.nodes)
    return np.linspace(0.0, 1.0, cfg.nodes)


def second_difference(zhat: np.ndarray) -> sp.csr_matrix:
    """Interior three-point second derivative; end rows use the mirrored ghost node."""
    N = zhat.size
    h = np.diff(zhat)
    rows, cols, vals = [], [], []
    for k in range(1, N - 1):
        hl, hr = h[k - 1], h[k]
        c = 2.0 / (hl + hr)
        rows += [k, k, k]
        cols += [k - 1, k, k + 1]
        vals += [c / hl, -c * (1 / hl + 1 / hr), c / hr]
    rows += [0, 0, N - 1, N - 1]
    cols += [0, 1, N - 1, N - 2]
    vals += [-2 / h[0] ** 2, 2 / h[0] ** 2, -2 / h[-1] ** 2, 2 / h[-1] ** 2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _local_operator(plant: PlantSpec, zhat: np.ndarray, robin: bool) -> tuple[sp.csr_matrix, np.ndarray]:
    """Operator of ``Lambda w'' + A w`` with the B0/B1 ghost terms; also the input map scale."""
    n, N = plant.n, zhat.size
    lam = plant.lam_values(zhat)
    A = plant.A_values(zhat)
    D2 = second_difference(zhat)
    h0, h1 = zhat[1] - zhat[0], zhat[-1] - zhat[-2]
    blocks = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            b = sp.diags(A[i, j])
            if i == j:
                b = b + sp.diags(lam[i]) @ D2
            if robin:
                # ghost nodes: w_z(0) = B0 w(0) + u0, w_z(1) = B1 w(1) + u1
                edge = sp.csr_matrix(
                    ([-2 / h0 * lam[i, 0] * plant.B0[i, j], 2 / h1 * lam[i, -1] * plant.B1[i, j]],
                     ([0, N - 1], [0, N - 1])), shape=(N, N))
                b = b + edge
            blocks[i][j] = b
    scale = np.array([-2 / h0 * lam[:, 0], 2 / h1 * lam[:, -1]])  # input -> boundary row forcing
    return sp.bmat(blocks, format="csr"), scale


def _forcing(scale: np.ndarray, u0: np.ndarray, u1: np.ndarray, n: int, N: int) -> np.ndarray:
    g = np.zeros((n, N))
    g[:, 0] = scale[0] * u0
    g[:, -1] = scale[1] * u1
    return g.ravel()


def _stamps(cfg: SimConfig, dt: float) -> tuple[int, int]:
    steps = int(round(cfg.T / dt))
    if steps < 1 or abs(steps * dt - cfg.T) > 1e-9 * max(cfg.T, 1.0):
        raise ValueError("T must be a positive multiple of dt")
    every = max(1, int(round(cfg.stride / dt)))
    return steps, every


def _run(L: sp.csr_matrix, w0: np.ndarray, cfg: SimConfig, plant: PlantSpec, zhat: np.ndarray,
         control, scale: np.ndarray | None, mode: str) -> Trajectory:
    n, N = w0.shape
    dt = cfg.dt
    steps, every = _stamps(cfg, dt)
    I = sp.identity(n * N, format="csc")
    lu = splu((I - 0.5 * dt * L).tocsc())
    Me = (I + 0.5 * dt * L).tocsr()
    w = w0.ravel().copy()
    ts, ws, u0s, u1s, norms = [], [], [], [], []

    def record(t: float, u0, u1):
        x = w.reshape(n, N).copy()
        ts.append(t)
        ws.append(x)
        u0s.append(u0)
        u1s.append(u1)
        norms.append(weighted_norm(x, plant, zhat))

    def traj() -> Trajectory:
        return Trajectory(zhat, np.array(ts), np.array(ws), np.array(u0s), np.array(u1s),
                          np.array(norms), mode, dt)

    zero = np.zeros(n)
    u0, u1 = control(w.reshape(n, N)) if control else (zero, zero)
    record(0.0, u0, u1)
    for k in range(1, steps + 1):
        rhs = Me @ w
        if control is not None:
            rhs += dt * _forcing(scale, u0, u1, n, N)
        w = lu.solve(rhs)
        if control is not None:
            u0, u1 = control(w.reshape(n, N))
        if k % every == 0 or k == steps:
            record(k * dt, u0, u1)
            if norms[-1] > BLOWUP_NORM or not np.isfinite(norms[-1]):
                raise BlowUp(k * dt, norms[-1], traj())
    return traj()


def simulate(plant: PlantSpec, gains: FeedbackGains | None, cfg: SimConfig,
             w0: np.ndarray | None = None) -> Trajectory:
    """Open-loop (``gains`` None, u = 0) or closed-loop run of the original plant."""
    if cfg.mode == CLOSED_LOOP and gains is None:
        raise ValueError("closed-loop mode requires gains")
    zhat = _grid(cfg, gains if cfg.mode == CLOSED_LOOP else None)
    w0 = cfg.initial_state(zhat, plant.n) if w0 is None else np.asarray(w0, dtype=float)
    L, scale = _local_operator(plant, zhat, robin=True)
    control = (lambda x: evaluate_control(gains, x)) if cfg.mode == CLOSED_LOOP else None
    return _run(L, w0, cfg, plant, zhat, control, scale, cfg.mode)


# ---------------------------------------------------------------- design products and target


@dataclass
class Design:
    """Everything the verifier needs from one controller design."""

    folded: FoldedPlant
    mu: float
    bs: BsKernelSolution
    dec: DecKernelSolution
    gains: FeedbackGains
    extras: dict = field(default_factory=dict)

    def target_couplings(self, zhat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Couplings ``A0(ž)``, ``A1(ž)`` of the unfolded target system."""
        n, y0 = self.folded.n, self.folded.y0
        zf = self.bs.z_f
        left = zhat < y0
        zl = (y0 - zhat[left]) / y0
        zr = (zhat[~left] - y0) / (1 - y0)
        A0 = np.zeros((n, n, zhat.size))
        A1 = np.zeros_like(A0)
        for i in range(n):
            for j in range(n):
                A0[i, j, left] = np.interp(zl, zf, self.bs.Atilde0_f[i, j])
                A1[i, j, left] = -y0 * np.interp(zl, zf, self.bs.Atilde1_f[i, j])
                A0[i, j, ~left] = np.interp(zr, self.dec.z_f, self.dec.Acheck0_f[i, j])
                A1[i, j, ~left] = (1 - y0) * np.interp(zr, self.dec.z_f, self.dec.Acheck1_f[i, j])
        return A0, A1


def target_operator(plant: PlantSpec, mu: float, A0: np.ndarray, A1: np.ndarray,
                    zhat: np.ndarray, y0: float) -> sp.csr_matrix:
    """``Lambda w'' - mu w - A0 w(y0) - A1 w_ž(y0)`` with zero Neumann ends."""
    n, N = plant.n, zhat.size
    k0 = int(np.argmin(np.abs(zhat - y0)))
    if abs(zhat[k0] - y0) > 1e-12 or k0 in (0, N - 1):
        raise ValueError("target grid must contain y0 as an interior node")
    lam = plant.lam_values(zhat)
    D2 = second_difference(zhat)
    span = zhat[k0 + 1] - zhat[k0 - 1]
    blocks = [[None] * n for _ in range(n)]
    rows = np.arange(N)
    for i in range(n):
        for j in range(n):
            r = np.concatenate([rows, rows, rows])
            c = np.concatenate([np.full(N, k0), np.full(N, k0 + 1), np.full(N, k0 - 1)])
            v = np.concatenate([-A0[i, j], -A1[i, j] / span, A1[i, j] / span])
            b = sp.csr_matrix((v, (r, c)), shape=(N, N))
            if i == j:
                b = b + sp.diags(lam[i]) @ D2 - mu * sp.identity(N)
            blocks[i][j] = b
    return sp.bmat(blocks, format="csr")


def simulate_target(design: Design, w0: np.ndarray, cfg: SimConfig,
                    zhat: np.ndarray | None = None) -> Trajectory:
    """Run the unfolded target system from the target-coordinate state ``w0``."""
    plant = design.folded.plant
    y0 = design.folded.y0
    zhat = design.gains.zhat if zhat is None else zhat
    A0, A1 = design.target_couplings(zhat)
    L = target_operator(plant, design.mu, A0, A1, zhat, y0)
    return _run(L, np.asarray(w0, dtype=float), cfg, plant, zhat, None, None, TARGET)


# ---------------------------------------------------------------- transforms


def _volterra(K: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``int_0^z K(z, s) x(s) ds`` by trapezoid; K (a, b, nz, nz), x (b, nz)."""
    h = np.diff(z)
    out = np.zeros((K.shape[0], z.size))
    for k in range(1, z.size):
        f = np.einsum("abq,bq->aq", K[:, :, k, :k + 1], x[:, :k + 1])
        out[:, k] = np.sum(0.5 * (f[:, 1:] + f[:, :-1]) * h[:k], axis=1)
    return out


def to_target(w: np.ndarray, zhat: np.ndarray, design: Design) -> np.ndarray:
    """Apply the backstepping and decoupling transforms to the plant state ``w``.

    Only the integral terms are formed on the kernel grid and unfolded; the
    identity part stays on ``zhat`` so it carries no interpolation error.
    """
    folded = design.folded
    n = folded.n
    z = design.bs.z
    x = fold_state(w, zhat, folded, z)
    corr = -_volterra(design.bs.K, x, z)
    xt = x + corr
    xl, xr = xt[:n], xt[n:]
    wq = trapezoid_weights(z)
    fred = np.einsum("ijkq,jq,q->ik", design.dec.P, xl, wq)
    corr[n:] -= _volterra(design.dec.Q, xr, z) + fred
    return np.asarray(w, dtype=float) + unfold_state(corr, z, folded, zhat)


@dataclass
class TransformReport:
    max_deviation: float
    per_stamp: np.ndarray
    worst_time: float


def verify_transforms(closed: Trajectory, design: Design, target: Trajectory) -> TransformReport:
    """Max deviation between the transformed closed loop and the target run."""
    if closed.t.shape != target.t.shape or np.any(np.abs(closed.t - target.t) > 1e-12):
        raise ValueError("trajectories must share time stamps")
    dev = np.array([
        float(np.max(np.abs(to_target(closed.w[s], closed.zhat, design) - target.w[s])))
        if np.any(closed.w[s]) or np.any(target.w[s]) else 0.0
        for s in range(closed.t.size)
    ])
    s = int(np.argmax(dev)) if dev.size else 0
    return TransformReport(float(dev.max(initial=0.0)), dev, float(closed.t[s]) if dev.size else 0.0)


# ---------------------------------------------------------------- decay fit


@dataclass
class DecayFitReport:
    M: float
    rate: float
    intercept: float
    residual: float
    margin: float | None = None  # rate + mu when mu is known


def fit_decay(traj: Trajectory, mu: float | None = None) -> DecayFitReport:
    """Least-squares fit of ``log(|w(t)|/|w(0)|)`` over ``t`` in [0.1 T, T]."""
    if traj.t.size < 10:
        raise ValueError("need at least 10 stamps")
    if traj.norm[0] <= 0 or not np.all(traj.norm > 0):
        raise ValueError("degenerate trajectory (zero norm)")
    ratio = traj.ratio()
    T = traj.t[-1]
    sel = traj.t >= 0.1 * T - 1e-12
    y = np.log(ratio[sel])
    X = np.column_stack([np.ones(sel.sum()), traj.t[sel]])
    (a, r), *_ = np.linalg.lstsq(X, y, rcond=None)
    res = float(np.sqrt(np.mean((X @ np.array([a, r]) - y) ** 2)))
    M = float(np.max(ratio / np.exp(r * traj.t)))
    return DecayFitReport(M, float(r), float(a), res, None if mu is None else float(r + mu))


# ---------------------------------------------------------------- export


def write_trajectory(traj: Trajectory, out: Path, stem: str = "trajectory") -> list[str]:
    """Long-format state CSV plus a per-stamp input/norm CSV."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n = traj.w.shape[1]
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "z"] + [f"w_{i + 1}" for i in range(n)])
        for s, t in enumerate(traj.t):
            for k, zk in enumerate(traj.zhat):
                wr.writerow([repr(float(t)), repr(float(zk))]
                            + [repr(float(traj.w[s, i, k])) for i in range(n)])
    with open(out / f"{stem}_inputs.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"u0_{i + 1}" for i in range(n)] + [f"u1_{i + 1}" for i in range(n)]
                    + ["norm"])
        for s, t in enumerate(traj.t):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in traj.u0[s]]
                        + [repr(float(v)) for v in traj.u1[s]] + [repr(float(traj.norm[s]))])
    return [f"{stem}.csv", f"{stem}_inputs.csv"]


def ic_from_strings(texts: Sequence[str]) -> tuple[Expr, ...]:
    return tuple(parse(t) for t in texts)
