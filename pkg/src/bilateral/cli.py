"""Command line front end: ``bilateral scan|design|simulate|verify``.

Exit codes: 0 ok, 2 bad config or unreadable artifacts, 3 diffusion ordering
violated at the folding point, 4 kernel iteration did not converge, 5 blow-up
guard tripped in a closed-loop or target run.
"""

from __future__ import annotations

import os

# BLAS pools are sized when numpy loads, so the cap has to be exported first.
_THREADS = os.environ.get("BACKSTEP_THREADS")
if _THREADS and _THREADS.isdigit() and int(_THREADS) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import csv
import hashlib
import json
import platform
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import bs_kernel, dec_kernel, sim
from .bs_kernel import BsKernelSolution, NoConvergence, SolveOptions
from .dec_kernel import DecKernelSolution, RewriteCheckFailed
from .expr import Expr, ExprDomainError, ExprSyntaxError, parse, to_string
from .feedback import FeedbackGains, assemble_gains
from .folding import FoldedPlant, OrderingViolation, PlantSpec, fold, scan_folding_points

EXIT_CONFIG = 2
EXIT_ORDER = 3
EXIT_NOCONV = 4
EXIT_BLOWUP = 5

MANIFEST = "manifest.json"
BUNDLE = "design.npz"
DESIGN_KEYS = {"y0": float, "mu": float, "tol": float, "nz": int, "nxi": int, "max_iter": int,
               "T": float, "dt": float, "nodes": int, "stride": float}
DEFAULTS = {"mu": 10.0, "tol": 1e-3, "nz": 51, "nxi": 100, "max_iter": 60, "T": 1.0,
            "dt": 1e-5, "nodes": 201, "stride": 0.01}
ENVELOPE_M = 2.26
ENVELOPE_SLACK = 1.1
TRANSFORM_BOUND = 1e-2


class ConfigError(ValueError):
    pass


class ArtifactError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class Config:
    path: Path
    digest: str
    plant: PlantSpec
    ic: tuple[Expr, ...] | None
    numbers: dict = field(default_factory=dict)

    def get(self, key: str, override=None):
        if override is not None:
            return override
        if key in self.numbers:
            return self.numbers[key]
        return DEFAULTS.get(key)


_LINE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*(?:\.\d+)*)\s*=\s*(.+?)\s*$")


def _value(raw: str, key: str, lineno: int):
    """Quoted text stays a string; bare text must be a number."""
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: value for {key!r} must be a number or a quoted expression")


def _expr(text, key: str) -> Expr:
    try:
        return parse(text if isinstance(text, str) else repr(float(text)))
    except ExprSyntaxError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _index(parts: list[str], n: int, key: str, arity: int) -> tuple[int, ...]:
    if len(parts) != arity:
        raise ConfigError(f"{key}: expected {arity} index(es)")
    idx = tuple(int(p) - 1 for p in parts)
    if any(i < 0 or i >= n for i in idx):
        raise ConfigError(f"{key}: index out of range 1..{n}")
    return idx


def parse_config(path: Path) -> Config:
    path = Path(path)
    try:
        data = path.read_bytes()
        text = data.decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8") from None
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = m.group(1), _value(m.group(2), m.group(1), lineno)
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = val
    if "n" not in raw:
        raise ConfigError(f"{path}: missing key 'n'")
    n_val = raw.pop("n")
    if isinstance(n_val, str) or n_val != int(n_val) or n_val < 1:
        raise ConfigError(f"{path}: 'n' must be a positive integer")
    n = int(n_val)
    lam: list[Expr | None] = [None] * n
    A = [[parse("0")] * n for _ in range(n)]
    B0 = np.zeros((n, n))
    B1 = np.zeros((n, n))
    ic: list[Expr | None] = [None] * n
    numbers = {}
    for key, val in raw.items():
        head, *parts = key.split(".")
        if head == "lambda":
            (i,) = _index(parts, n, key, 1)
            lam[i] = _expr(val, key)
        elif head == "A":
            i, j = _index(parts, n, key, 2)
            A[i][j] = _expr(val, key)
        elif head in ("B0", "B1"):
            i, j = _index(parts, n, key, 2)
            if isinstance(val, str):
                try:
                    val = float(val)
                except ValueError:
                    raise ConfigError(f"{key}: boundary coefficients are constants") from None
            (B0 if head == "B0" else B1)[i, j] = val
        elif head == "ic":
            (i,) = _index(parts, n, key, 1)
            ic[i] = _expr(val, key)
        elif head in DESIGN_KEYS and not parts:
            if isinstance(val, str):
                raise ConfigError(f"{key}: expected a number")
            conv = DESIGN_KEYS[head]
            if conv is int and val != int(val):
                raise ConfigError(f"{key}: expected an integer")
            numbers[head] = conv(val)
        else:
            raise ConfigError(f"{path}: unknown key {key!r}")
    missing = [f"lambda.{i + 1}" for i, e in enumerate(lam) if e is None]
    if missing:
        raise ConfigError(f"{path}: missing {', '.join(missing)}")
    if any(e is not None for e in ic) and any(e is None for e in ic):
        raise ConfigError(f"{path}: give ic.i for every component or for none")
    try:
        plant = PlantSpec(n, tuple(lam), tuple(tuple(r) for r in A), B0, B1)
        plant.check_order()
    except OrderingViolation:
        raise
    except (ValueError, ExprDomainError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return Config(path, hashlib.sha256(data).hexdigest(), plant,
                  None if ic[0] is None else tuple(ic), numbers)


def plant_digest(plant: PlantSpec) -> str:
    """Hash of the plant coefficients alone (design options and IC excluded)."""
    doc = {"n": plant.n, "lambda": [to_string(e) for e in plant.lam],
           "A": [[to_string(e) for e in r] for r in plant.A],
           "B0": plant.B0.tolist(), "B1": plant.B1.tolist()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- manifest


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_manifest(out: Path, command: str, cfg: Config, options: dict, files: list[str],
                   **sections) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": {"path": str(cfg.path), "sha256": cfg.digest, "plant_sha256": plant_digest(cfg.plant)},
        "options": options,
        **sections,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "threads": os.environ.get("BACKSTEP_THREADS")},
        "artifacts": {name: _sha(out / name) for name in sorted(files)},
    }
    path = out / MANIFEST
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        doc = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(doc, dict) or "options" not in doc:
        raise ArtifactError(f"{path} is not a run manifest")
    return doc


# ---------------------------------------------------------------- design bundle


_BS_ARRAYS = ("z", "K", "K11", "Kz1", "K0", "Kzeta0", "Atilde0", "Atilde1", "z_f",
              "Atilde0_f", "Atilde1_f")
_DEC_ARRAYS = ("z", "P", "Q", "Pz1", "Qz1", "Acheck0", "Acheck1", "z_f", "P0_f", "Pzeta0_f",
               "Q0_f", "Qzeta0_f", "Acheck0_f", "Acheck1_f")
_GAIN_ARRAYS = ("R0", "R1", "zhat", "R", "R_y0_left", "z", "Rf", "Rcheck_f", "B0", "B1")


def save_bundle(path: Path, design: sim.Design) -> None:
    arrays = {f"bs_{k}": getattr(design.bs, k) for k in _BS_ARRAYS}
    arrays.update({f"dec_{k}": getattr(design.dec, k) for k in _DEC_ARRAYS})
    arrays.update({f"g_{k}": getattr(design.gains, k) for k in _GAIN_ARRAYS})
    arrays["scalars"] = np.array([design.folded.y0, design.mu])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_design(gains_dir: Path, cfg: Config) -> sim.Design:
    """Rebuild a design from ``design`` output; raises ArtifactError on any mismatch."""
    gains_dir = Path(gains_dir)
    man = read_manifest(gains_dir)
    bundle = gains_dir / BUNDLE
    want = man.get("artifacts", {}).get(BUNDLE)
    if want is None:
        raise ArtifactError(f"{gains_dir} has no {BUNDLE} in its manifest")
    try:
        digest = _sha(bundle)
    except OSError as exc:
        raise ArtifactError(f"cannot read {bundle}: {exc.strerror}") from None
    if digest != want:
        raise ArtifactError(f"{bundle} does not match its manifest checksum")
    try:
        with np.load(bundle, allow_pickle=False) as npz:
            data = {k: npz[k] for k in npz.files}
    except OSError as exc:
        raise ArtifactError(f"cannot read {bundle}: {exc}") from None
    except ValueError as exc:
        raise ArtifactError(f"corrupted {bundle}: {exc}") from None
    if man["config"].get("plant_sha256") != plant_digest(cfg.plant):
        raise ArtifactError(f"gains in {gains_dir} were designed for a different plant")
    try:
        y0, mu = (float(v) for v in data["scalars"])
        folded = fold(cfg.plant, y0)
        bs = BsKernelSolution(y0=y0, mu=mu, iterations=int(man["kernels"]["bs_iterations"]),
                              log=[], gamma={}, **{k: data[f"bs_{k}"] for k in _BS_ARRAYS})
        dec = DecKernelSolution(iterations=int(man["kernels"]["dec_iterations"]), log=[], gamma={},
                                **{k: data[f"dec_{k}"] for k in _DEC_ARRAYS})
        gains = FeedbackGains(y0=y0, yt=folded.yt, **{k: data[f"g_{k}"] for k in _GAIN_ARRAYS})
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"incomplete design in {gains_dir}: {exc}") from None
    m = 2 * cfg.plant.n
    if bs.K.shape[:2] != (m, m) or gains.R.shape[:2] != (m, cfg.plant.n):
        raise ArtifactError(f"design in {gains_dir} has the wrong state dimension")
    return sim.Design(folded, mu, bs, dec, gains)


def write_gains_csv(path: Path, g: FeedbackGains) -> None:
    m, n = g.R.shape[:2]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["z"] + [f"R_{a + 1}_{j + 1}" for a in range(m) for j in range(n)])
        for k, zk in enumerate(g.zhat):
            wr.writerow([repr(float(zk))] + [repr(float(g.R[a, j, k])) for a in range(m)
                                             for j in range(n)])


# ---------------------------------------------------------------- helpers


def _fail(msg: str, code: int) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _load(config: str) -> Config:
    try:
        return parse_config(Path(config))
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except OrderingViolation as exc:
        _fail(str(exc), EXIT_ORDER)


def _sim_options(cfg: Config, T, dt) -> dict:
    return {"T": cfg.get("T", T), "dt": cfg.get("dt", dt), "nodes": cfg.get("nodes"),
            "stride": cfg.get("stride")}


def _check_threads() -> None:
    if _THREADS is not None and not (_THREADS.isdigit() and int(_THREADS) > 0):
        _fail(f"BACKSTEP_THREADS must be a positive integer, got {_THREADS!r}", EXIT_CONFIG)


def _decay_summary(traj: sim.Trajectory, mu: float) -> dict:
    """Envelope check ``|w(t)|/|w(0)| <= slack * M e^{-mu t}`` and the fitted rate."""
    if traj.norm[0] <= 0:
        return {"zero_state": True, "pass": bool(np.all(traj.norm == 0))}
    ratio = traj.ratio()
    env = ENVELOPE_SLACK * ENVELOPE_M * np.exp(-mu * traj.t)
    worst = float(np.max(ratio / env))
    fit = sim.fit_decay(traj, mu)
    rate_ok = fit.rate <= -0.9 * mu
    return {"envelope_M": ENVELOPE_M, "envelope_slack": ENVELOPE_SLACK, "max_ratio_over_envelope": worst,
            "fit": asdict(fit), "envelope_pass": worst <= 1.0, "rate_pass": bool(rate_ok),
            "pass": bool(worst <= 1.0 and rate_ok), "final_norm": float(traj.norm[-1])}


# ---------------------------------------------------------------- commands


@click.group()
@click.version_option(package_name="artifact")
def cli() -> None:
    """Bilateral backstepping design and simulation for coupled parabolic PDEs."""
    _check_threads()


_CONFIG = click.argument("config", type=click.Path(exists=True, dir_okay=False))


@cli.command()
@_CONFIG
@click.option("--resolution", default=1000, show_default=True, help="Folding points sampled in (0,1).")
@click.option("--out", type=click.Path(file_okay=False), default="scan_out", show_default=True)
def scan(config: str, resolution: int, out: str) -> None:
    """List folding-point intervals with non-intersecting folded diffusion."""
    cfg = _load(config)
    t0 = time.perf_counter()
    try:
        intervals = scan_folding_points(cfg.plant, resolution)
    except ValueError as exc:
        _fail(str(exc), EXIT_CONFIG)
    elapsed = time.perf_counter() - t0
    outp = Path(out)
    outp.mkdir(parents=True, exist_ok=True)
    with open(outp / "intervals.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["lo", "hi", "descending"])
        for iv in intervals:
            wr.writerow([repr(iv.lo), repr(iv.hi), int(iv.descending)])
    click.echo(f"{'#':>2}  {'lo':>8}  {'hi':>8}  order")
    for k, iv in enumerate(intervals, 1):
        click.echo(f"{k:>2}  {iv.lo:8.4f}  {iv.hi:8.4f}  {'descending' if iv.descending else 'permuted'}")
    if not intervals:
        click.echo("no admissible folding point")
    write_manifest(outp, "scan", cfg, {"resolution": resolution}, ["intervals.csv"],
                   intervals=[asdict(iv) for iv in intervals], timing={"seconds": elapsed})


def run_design(cfg: Config, y0: float, mu: float, tol: float, nz: int, nxi: int,
               max_iter: int) -> tuple[sim.Design, dict]:
    """fold, kernels, coupling rewrite, decoupling kernels, gains and residual reports."""
    t0 = time.perf_counter()
    folded = fold(cfg.plant, y0)
    opts = SolveOptions(tol=tol, max_iter=max_iter, n_z=nz, n_xi=nxi)
    bs = bs_kernel.solve(folded, mu, opts=opts)
    t_bs = time.perf_counter()
    inputs = dec_kernel.inputs_from_solution(bs)
    dec = dec_kernel.solve_dec(folded, inputs, opts=opts)
    t_dec = time.perf_counter()
    gains = assemble_gains(bs, dec, folded, nodes=cfg.get("nodes"))
    rep_bs = bs_kernel.residual_report(bs, folded)
    rep_dec = dec_kernel.residual_report_dec(dec, folded, inputs)
    verdicts = {
        "bs_pde": rep_bs["pde"] <= 10 * tol,
        "bs_diagonal": max(rep_bs["diag_ii"], rep_bs["diag_offdiag"], rep_bs["origin"]) <= 5 * tol,
        "bs_fold_bc": max(rep_bs["fold_bc1"], rep_bs["fold_bc2"]) <= 5 * tol,
        "dec_pde": rep_dec["pde"] <= 10 * tol,
        "dec_diagonal": max(rep_dec["q_diag"], rep_dec["q_origin"]) <= 5 * tol,
        "dec_coupling_bc": max(rep_dec["coupling_bc1"], rep_dec["coupling_bc2"]) <= 5 * tol,
        "lower_triangular": rep_bs["lower_triangular"] and rep_dec["lower_triangular"],
        "rewrite": inputs.rewrite_residual <= dec_kernel.REWRITE_TOL,
    }
    info = {
        "kernels": {"bs_iterations": bs.iterations, "dec_iterations": dec.iterations,
                    "bs_log": bs.log, "dec_log": dec.log, "bs_gamma": bs.gamma, "dec_gamma": dec.gamma},
        "residuals": {"backstepping": rep_bs, "decoupling": rep_dec,
                      "rewrite": inputs.rewrite_residual},
        "gains": {"R0": gains.R0, "R1": gains.R1, "R_y0_left": gains.R_y0_left},
        "verdicts": verdicts,
        "timing": {"backstepping_s": t_bs - t0, "decoupling_s": t_dec - t_bs,
                   "total_s": time.perf_counter() - t0},
    }
    return sim.Design(folded, mu, bs, dec, gains), info


@cli.command()
@_CONFIG
@click.option("--y0", type=float, help="Folding point.")
@click.option("--mu", type=float, help="Target decay rate.")
@click.option("--tol", type=float, help="Successive-approximation tolerance.")
@click.option("--nz", type=int, help="Physical grid nodes per axis.")
@click.option("--nxi", type=int, help="Canonical xi nodes.")
@click.option("--max-iter", type=int, help="Sweep budget per kernel.")
@click.option("--from-manifest", type=click.Path(exists=True), help="Reuse options of an earlier design.")
@click.option("--out", type=click.Path(file_okay=False), default="design_out", show_default=True)
def design(config, y0, mu, tol, nz, nxi, max_iter, from_manifest, out) -> None:
    """Solve the kernels and export the feedback gains."""
    cfg = _load(config)
    prior = {}
    if from_manifest:
        try:
            man = read_manifest(Path(from_manifest))
        except ArtifactError as exc:
            _fail(str(exc), EXIT_CONFIG)
        if man["config"].get("sha256") != cfg.digest:
            _fail(f"{config} differs from the config recorded in {from_manifest}", EXIT_CONFIG)
        prior = man["options"]
    pick = lambda key, flag: flag if flag is not None else prior.get(key, cfg.get(key))  # noqa: E731
    options = {"y0": pick("y0", y0), "mu": pick("mu", mu), "tol": pick("tol", tol),
               "nz": pick("nz", nz), "nxi": pick("nxi", nxi), "max_iter": pick("max_iter", max_iter),
               "nodes": cfg.get("nodes")}
    if options["y0"] is None:
        _fail("no folding point: pass --y0 or set y0 in the config", EXIT_CONFIG)
    if not 0.0 < options["y0"] < 1.0:
        _fail(f"y0 must lie in (0,1), got {options['y0']}", EXIT_CONFIG)
    try:
        des, info = run_design(cfg, options["y0"], options["mu"], options["tol"], options["nz"],
                               options["nxi"], options["max_iter"])
    except OrderingViolation as exc:
        _fail(str(exc), EXIT_ORDER)
    except NoConvergence as exc:
        _fail(str(exc), EXIT_NOCONV)
    except RewriteCheckFailed as exc:
        _fail(str(exc), EXIT_NOCONV)
    outp = Path(out)
    files = bs_kernel.dump(des.bs, outp)
    files += dec_kernel.dump(des.dec, outp)
    write_gains_csv(outp / "gains.csv", des.gains)
    save_bundle(outp / BUNDLE, des)
    files += ["gains.csv", BUNDLE]
    write_manifest(outp, "design", cfg, options, files, **info)
    k = info["kernels"]
    click.echo(f"backstepping kernel: {k['bs_iterations']} sweeps, decoupling kernels: "
               f"{k['dec_iterations']} sweeps ({info['timing']['total_s']:.1f} s)")
    for name, ok in info["verdicts"].items():
        click.echo(f"  {name:<18} {'pass' if ok else 'FAIL'}")
    click.echo(f"gains written to {outp / 'gains.csv'}")


@cli.command()
@_CONFIG
@click.option("--gains", "gains_dir", type=click.Path(exists=True, file_okay=False),
              help="Output directory of 'design'.")
@click.option("--open-loop", is_flag=True, help="Run with u = 0.")
@click.option("--target", is_flag=True, help="Run the target system (needs --gains).")
@click.option("--T", "T", type=float, help="Final time.")
@click.option("--dt", type=float, help="Time step.")
@click.option("--y0", type=float, help="Grid node for open-loop runs.")
@click.option("--out", type=click.Path(file_okay=False), default="sim_out", show_default=True)
def simulate(config, gains_dir, open_loop, target, T, dt, y0, out) -> None:
    """Run the plant open loop, in closed loop, or the target system."""
    cfg = _load(config)
    if open_loop and (gains_dir or target):
        _fail("--open-loop excludes --gains and --target", EXIT_CONFIG)
    if not open_loop and not gains_dir:
        _fail("closed-loop and target runs need --gains", EXIT_CONFIG)
    opts = _sim_options(cfg, T, dt)
    outp = Path(out)
    des = None
    if gains_dir:
        try:
            des = load_design(Path(gains_dir), cfg)
        except (ArtifactError, OrderingViolation) as exc:
            _fail(str(exc), EXIT_CONFIG)
    mode = sim.OPEN_LOOP if open_loop else sim.TARGET if target else sim.CLOSED_LOOP
    y0_grid = des.folded.y0 if des else cfg.get("y0", y0)
    sc = sim.SimConfig(T=opts["T"], dt=opts["dt"], nodes=des.gains.zhat.size if des else opts["nodes"],
                       y0=y0_grid, ic=cfg.ic, mode=mode, stride=opts["stride"])
    options = {**opts, "mode": mode, "y0": y0_grid, "gains": gains_dir}
    try:
        if mode == sim.TARGET:
            w0 = sc.initial_state(des.gains.zhat, cfg.plant.n)
            traj = sim.simulate_target(des, sim.to_target(w0, des.gains.zhat, des), sc)
        else:
            traj = sim.simulate(cfg.plant, des.gains if des else None, sc)
    except sim.BlowUp as exc:
        files = sim.write_trajectory(exc.partial, outp)
        expected = mode == sim.OPEN_LOOP
        write_manifest(outp, "simulate", cfg, options, files,
                       result={"blow_up": str(exc), "expected": expected})
        if expected:
            click.echo(f"unstable (expected): {exc}")
            return
        _fail(str(exc), EXIT_BLOWUP)
    except ValueError as exc:
        _fail(str(exc), EXIT_CONFIG)
    files = sim.write_trajectory(traj, outp)
    growth = float(traj.norm[-1] / traj.norm[0]) if traj.norm[0] > 0 else 0.0
    if mode == sim.OPEN_LOOP:
        result = {"norm_ratio_T": growth, "unstable": growth > 1.0}
        click.echo(f"|w(T)|/|w(0)| = {growth:.4g}")
        if growth > 1.0:
            click.echo("unstable (expected)")
    else:
        result = _decay_summary(traj, des.mu)
        if result.get("zero_state"):
            click.echo("zero initial state: trajectory stays at zero")
        else:
            click.echo(f"fitted decay rate {result['fit']['rate']:.4f} (mu = {des.mu:g}), "
                       f"max ratio/envelope {result['max_ratio_over_envelope']:.4f}")
            click.echo(f"envelope {'pass' if result['pass'] else 'FAIL'}")
    write_manifest(outp, "simulate", cfg, options, files, result=result)


@cli.command()
@_CONFIG
@click.option("--gains", "gains_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--T", "T", type=float, help="Final time.")
@click.option("--dt", type=float, help="Time step.")
@click.option("--out", type=click.Path(file_okay=False), default="verify_out", show_default=True)
def verify(config, gains_dir, T, dt, out) -> None:
    """Compare the transformed closed loop with the target system."""
    cfg = _load(config)
    try:
        des = load_design(Path(gains_dir), cfg)
    except (ArtifactError, OrderingViolation) as exc:
        _fail(str(exc), EXIT_CONFIG)
    opts = _sim_options(cfg, T, dt)
    sc = sim.SimConfig(T=opts["T"], dt=opts["dt"], nodes=des.gains.zhat.size, y0=des.folded.y0,
                       ic=cfg.ic, mode=sim.CLOSED_LOOP, stride=opts["stride"])
    try:
        closed = sim.simulate(cfg.plant, des.gains, sc)
        w0t = sim.to_target(closed.w[0], closed.zhat, des)
        target = sim.simulate_target(des, w0t, sc)
    except sim.BlowUp as exc:
        _fail(str(exc), EXIT_BLOWUP)
    rep = sim.verify_transforms(closed, des, target)
    outp = Path(out)
    files = sim.write_trajectory(closed, outp, "closed_loop") + sim.write_trajectory(target, outp, "target")
    with open(outp / "deviation.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "deviation"])
        for t, d in zip(closed.t, rep.per_stamp):
            wr.writerow([repr(float(t)), repr(float(d))])
    files.append("deviation.csv")
    ok = rep.max_deviation <= TRANSFORM_BOUND
    write_manifest(outp, "verify", cfg, {**opts, "gains": gains_dir}, files,
                   result={"max_deviation": rep.max_deviation, "worst_time": rep.worst_time,
                           "bound": TRANSFORM_BOUND, "pass": ok})
    click.echo(f"max transform deviation {rep.max_deviation:.3e} at t={rep.worst_time:g} "
               f"(bound {TRANSFORM_BOUND:g}): {'pass' if ok else 'FAIL'}")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
