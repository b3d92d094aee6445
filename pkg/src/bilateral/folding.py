"""Folding of a bilaterally actuated plant into a 2n-state system.

The plant lives on ž in [0, 1] with diffusion ``lam[i](ž)`` and reaction
``A[i][j](ž)``.  Folding at ``y0`` maps ž < y0 to the left block
``z = (y0 - ž)/y0`` and ž > y0 to the right block ``z = (ž - y0)/(1 - y0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .expr import Expr, differentiate, evaluate

VALIDATION_NODES = 201


class OrderingViolation(ValueError):
    """Folded diffusion coefficients are not strictly descending."""

    def __init__(self, z: float, pair: tuple[int, int], y0: float | None = None):
        i, j = pair
        where = "" if y0 is None else f" for y0={y0:g}"
        super().__init__(
            f"diffusion order violated{where}: lambda_{i + 1} <= lambda_{j + 1} at z={z:.6g}"
        )
        self.z = z
        self.pair = pair
        self.y0 = y0


@dataclass(frozen=True)
class PlantSpec:
    """Original plant on ž in [0,1]; indices are zero based."""

    n: int
    lam: tuple[Expr, ...]
    A: tuple[tuple[Expr, ...], ...]
    B0: np.ndarray
    B1: np.ndarray
    dlam: tuple[Expr, ...] = field(init=False, repr=False)
    ddlam: tuple[Expr, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if len(self.lam) != self.n or len(self.A) != self.n or any(len(r) != self.n for r in self.A):
            raise ValueError("coefficient dimensions do not match n")
        B0 = np.array(self.B0, dtype=float).reshape(self.n, self.n)
        B1 = np.array(self.B1, dtype=float).reshape(self.n, self.n)
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "B1", B1)
        d1 = tuple(differentiate(e) for e in self.lam)
        object.__setattr__(self, "dlam", d1)
        object.__setattr__(self, "ddlam", tuple(differentiate(e) for e in d1))

    def lam_values(self, zh: np.ndarray, order: int = 0) -> np.ndarray:
        """Diffusion coefficients (or derivatives) at ž, shape (n, len(zh))."""
        src = (self.lam, self.dlam, self.ddlam)[order]
        zh = np.asarray(zh, dtype=float)
        return np.array([np.broadcast_to(evaluate(e, zh), zh.shape) for e in src])

    def A_values(self, zh: np.ndarray) -> np.ndarray:
        """Reaction matrix at ž, shape (n, n, len(zh))."""
        zh = np.asarray(zh, dtype=float)
        return np.array(
            [[np.broadcast_to(evaluate(e, zh), zh.shape) for e in row] for row in self.A]
        )

    def check_order(self, nodes: int = VALIDATION_NODES) -> None:
        zh = np.linspace(0.0, 1.0, nodes)
        lam = self.lam_values(zh)
        if np.any(lam[-1] <= 0):
            raise ValueError("diffusion coefficients must be positive")
        for i in range(self.n - 1):
            bad = np.nonzero(lam[i] <= lam[i + 1])[0]
            if bad.size:
                raise OrderingViolation(float(zh[bad[0]]), (i, i + 1))


@dataclass(frozen=True)
class FoldedPlant:
    """Folded 2n-state representation; all callables are vectorised in z."""

    plant: PlantSpec
    y0: float

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def yt(self) -> float:
        return self.y0 / (1.0 - self.y0)

    def _maps(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return self.y0 - self.y0 * z, self.y0 + (1.0 - self.y0) * z

    def lam(self, z: np.ndarray, order: int = 0) -> np.ndarray:
        """``order``-th z-derivative of lambda_1..lambda_2n, shape (2n, len(z))."""
        zl, zr = self._maps(z)
        y0 = self.y0
        left = self.plant.lam_values(zl, order) * (-y0) ** order / y0**2
        right = self.plant.lam_values(zr, order) * (1.0 - y0) ** order / (1.0 - y0) ** 2
        return np.concatenate([left, right], axis=0)

    def A_left(self, z: np.ndarray) -> np.ndarray:
        return self.plant.A_values(self._maps(z)[0])

    def A_right(self, z: np.ndarray) -> np.ndarray:
        return self.plant.A_values(self._maps(z)[1])

    def A(self, z: np.ndarray) -> np.ndarray:
        """Block diagonal folded reaction matrix, shape (2n, 2n, len(z))."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        n = self.n
        out = np.zeros((2 * n, 2 * n, z.size))
        out[:n, :n] = self.A_left(z)
        out[n:, n:] = self.A_right(z)
        return out

    def yt_identity_error(self) -> np.ndarray:
        """Relative error of sqrt(lambda_{j+n}(0)/lambda_j(0)) against yt, per j."""
        lam0 = self.lam(np.array([0.0]))[:, 0]
        n = self.n
        ratio = np.sqrt(lam0[n:] / lam0[:n])
        return np.abs(ratio - self.yt) / self.yt


def _validation_grid(nodes: int = VALIDATION_NODES) -> np.ndarray:
    # grid nodes plus interval midpoints
    return np.linspace(0.0, 1.0, 2 * nodes - 1)


def fold(plant: PlantSpec, y0: float) -> FoldedPlant:
    """Fold ``plant`` at ``y0``; raises OrderingViolation unless strictly descending."""
    if not 0.0 < y0 < 1.0:
        raise ValueError("folding point must lie in (0, 1)")
    plant.check_order()
    folded = FoldedPlant(plant, float(y0))
    z = _validation_grid()
    lam = folded.lam(z)
    for i in range(2 * plant.n - 1):
        bad = np.nonzero(lam[i] <= lam[i + 1])[0]
        if bad.size:
            raise OrderingViolation(float(z[bad[0]]), (i, i + 1), y0)
    return folded


# ---------------------------------------------------------------- feasibility scan


@dataclass(frozen=True)
class FoldingInterval:
    lo: float
    hi: float
    descending: bool

    def __contains__(self, y0: float) -> bool:
        return self.lo < y0 < self.hi


def _signature(plant: PlantSpec, y0: float, z: np.ndarray) -> tuple[int, ...] | None:
    """Pairwise order pattern of the folded coefficients, or None if any pair meets."""
    lam = FoldedPlant(plant, y0).lam(z)
    m = lam.shape[0]
    sig = []
    for p in range(m):
        for q in range(p + 1, m):
            d = lam[p] - lam[q]
            if d.min() > 0:
                sig.append(1)
            elif d.max() < 0:
                sig.append(-1)
            else:
                return None
    return tuple(sig)


def scan_folding_points(
    plant: PlantSpec, resolution: int = 1000, refine: int = 40
) -> list[FoldingInterval]:
    """Maximal open subintervals of (0,1) with pairwise non-intersecting folded coefficients."""
    if resolution < 100:
        raise ValueError("resolution must be at least 100")
    z = _validation_grid()
    eps = 1e-9
    ys = np.concatenate([[eps], np.arange(1, resolution) / resolution, [1.0 - eps]])
    sigs = [_signature(plant, float(y), z) for y in ys]

    def edge(a: float, b: float, sig: tuple[int, ...]) -> float:
        # a carries ``sig``; b does not.  Bisect for the switch point.
        for _ in range(refine):
            mid = 0.5 * (a + b)
            if _signature(plant, mid, z) == sig:
                a = mid
            else:
                b = mid
        return 0.5 * (a + b)

    out: list[FoldingInterval] = []
    k = 0
    while k < len(ys):
        sig = sigs[k]
        if sig is None:
            k += 1
            continue
        start = k
        while k + 1 < len(ys) and sigs[k + 1] == sig:
            k += 1
        lo = 0.0 if start == 0 else edge(float(ys[start]), float(ys[start - 1]), sig)
        hi = 1.0 if k == len(ys) - 1 else edge(float(ys[k]), float(ys[k + 1]), sig)
        out.append(FoldingInterval(lo, hi, all(s == 1 for s in sig)))
        k += 1
    return out


# ---------------------------------------------------------------- state folding


def fold_state(
    w: np.ndarray, zhat: np.ndarray, folded: FoldedPlant, z: np.ndarray
) -> np.ndarray:
    """Sample ``w`` (shape (n, len(zhat))) as the folded state on ``z``; shape (2n, len(z))."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    interp = PchipInterpolator(np.asarray(zhat, dtype=float), w, axis=1)
    zl, zr = folded._maps(np.asarray(z, dtype=float))
    return np.concatenate([interp(zl), interp(zr)], axis=0)


def unfold_state(
    x: np.ndarray, z: np.ndarray, folded: FoldedPlant, zhat: np.ndarray
) -> np.ndarray:
    """Inverse of :func:`fold_state`; the value at ž = y0 averages both blocks."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = folded.n
    y0 = folded.y0
    zhat = np.asarray(zhat, dtype=float)
    left = PchipInterpolator(z, x[:n], axis=1)
    right = PchipInterpolator(z, x[n:], axis=1)
    w = np.empty((n, zhat.size))
    lmask = zhat < y0
    rmask = zhat > y0
    w[:, lmask] = left(np.clip((y0 - zhat[lmask]) / y0, 0.0, 1.0))
    w[:, rmask] = right(np.clip((zhat[rmask] - y0) / (1.0 - y0), 0.0, 1.0))
    mid = ~(lmask | rmask)
    if mid.any():
        w[:, mid] = 0.5 * (left(0.0) + right(0.0))[:, None]
    return w


def piecewise_grid(y0: float, nodes: int = VALIDATION_NODES) -> np.ndarray:
    """ž-grid uniform on [0, y0] and [y0, 1] with y0 as an exact node."""
    if nodes < 5:
        raise ValueError("need at least 5 nodes")
    cells = nodes - 1
    nl = int(np.clip(round(y0 * cells), 1, cells - 1))
    left = np.linspace(0.0, y0, nl + 1)
    right = np.linspace(y0, 1.0, cells - nl + 1)
    return np.concatenate([left, right[1:]])


def plant_from_strings(
    lam: Sequence[str], A: Sequence[Sequence[str]], B0=None, B1=None
) -> PlantSpec:
    """Convenience constructor from expression strings."""
    from .expr import parse

    n = len(lam)
    B0 = np.zeros((n, n)) if B0 is None else np.asarray(B0, dtype=float)
    B1 = np.zeros((n, n)) if B1 is None else np.asarray(B1, dtype=float)
    return PlantSpec(
        n,
        tuple(parse(s) for s in lam),
        tuple(tuple(parse(s) for s in row) for row in A),
        B0,
        B1,
    )
