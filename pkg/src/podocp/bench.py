"""Parameter sweeps comparing reduced bases against full-order solutions.

A sweep solves the full problem once at the nominal diffusion, builds POD
bases and their sensitivities for every snapshot kind, and then, for every
diffusion value of the grid, compares reduced solutions obtained with each
basis construction against the full solution at that value.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .enrichment import ENRICHMENT_METHODS, expand, extrapolate, saim
from .mesh import build_uniform_mesh
from .ocp import OCPSetup, optimize
from .pod import (
    SNAPSHOT_KINDS,
    build_snapshots,
    compute_pod,
    mass_factor,
    normalize_kind,
    project_model,
    solve_reduced_ocp,
)
from .sensitivity import eigenvalue_sensitivities, solve_cse, solve_fd, svd_sensitivities
from .sipg import DGConfig, DGSpace

PAPER_GRID = tuple(1.0 / v for v in range(80, 121, 5))
PROFILES = {
    "paper": dict(n=40, N=60),
    "desk": dict(n=8, N=12),
}
CSV_HEADER = ("epsilon", "method", "kind", "l", "state_err", "control_err", "t_reduced", "t_full")


@dataclass
class SweepConfig:
    """Settings of a parameter sweep.

    ``rank`` fixes the number of POD modes; otherwise ``gamma`` selects it
    from the energy ratio. ``grid`` holds diffusion values (not inverses).
    """

    n: int = 40
    N: int = 60
    T: float = 1.0
    epsilon0: float = 1e-2
    grid: tuple = PAPER_GRID
    methods: tuple = ENRICHMENT_METHODS
    kinds: tuple = SNAPSHOT_KINDS
    gamma: float | None = 1e-2
    rank: int | None = None
    anchors: tuple = (1.0 / 125, 1.0 / 75)
    sensitivity: str = "FD"
    delta_mu: float | None = None
    alpha: float = 1.0
    r: float = 1.0
    sigma: float | None = None
    tol: float = 1e-8
    sensitivity_tol: float = 1e-10
    out: str = "results"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.grid = tuple(float(e) for e in np.atleast_1d(self.grid))
        self.anchors = tuple(float(a) for a in self.anchors)
        self.methods = tuple(self.methods)
        self.kinds = tuple(normalize_kind(k) for k in self.kinds)
        self.validate()

    @classmethod
    def from_profile(cls, name: str = "paper", **overrides) -> "SweepConfig":
        if name not in PROFILES:
            raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(**{**PROFILES[name], **overrides})

    @classmethod
    def from_json(cls, path, profile: str = "paper", **overrides) -> "SweepConfig":
        data = json.loads(Path(path).read_text())
        profile = data.pop("profile", profile)
        return cls.from_profile(profile, **{**data, **overrides})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self):
        if not self.grid or min(self.grid) <= 0:
            raise ValueError("grid values must be positive")
        if self.epsilon0 <= 0:
            raise ValueError("nominal epsilon must be positive")
        bad = set(self.methods) - set(ENRICHMENT_METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; expected a subset of {ENRICHMENT_METHODS}")
        if self.sensitivity not in ("FD", "CSE"):
            raise ValueError("sensitivity route must be FD or CSE")
        if self.rank is None and not (self.gamma is not None and 0 < self.gamma < 1):
            raise ValueError("give a fixed rank or a gamma in (0, 1)")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be at least 1")
        if "SAIM" in self.methods:
            lo, hi = sorted(self.anchors)
            if not (lo <= min(self.grid) and max(self.grid) <= hi):
                raise ValueError(f"SAIM anchors {self.anchors} do not bracket the grid")


@dataclass
class SweepRecord:
    """One cell of a sweep; ``l`` is the reduced dimension actually used."""

    epsilon: float
    method: str
    kind: str
    l: int
    state_err: float
    control_err: float
    t_reduced: float
    t_full: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def sort_key(self):
        return (self.epsilon, ENRICHMENT_METHODS.index(self.method), SNAPSHOT_KINDS.index(self.kind))


class SweepResult(list):
    """Sorted sweep records plus the spectra of the nominal snapshot sets."""

    def __init__(self, records=(), spectra=None, config=None):
        super().__init__(sorted(records, key=SweepRecord.sort_key))
        self.spectra = spectra or {}
        self.config = config

    @property
    def failures(self):
        return [r for r in self if r.failed]


def l2_time_space_error(a, b, M) -> float:
    """Trapezoidal-in-time ``L2(0,T;L2)`` distance between two trajectories."""
    va, vb = np.asarray(getattr(a, "values", a)), np.asarray(getattr(b, "values", b))
    ka, kb = getattr(a, "k", None), getattr(b, "k", None)
    if ka is not None and kb is not None and not math.isclose(ka, kb, rel_tol=1e-12):
        raise ValueError(f"time steps differ: {ka} vs {kb}")
    k = ka if ka is not None else kb
    if k is None:
        raise ValueError("time step unknown; pass Trajectory objects")
    if va.shape != vb.shape:
        raise ValueError(f"trajectory shapes differ: {va.shape} vs {vb.shape}")
    d = va - vb
    w = np.full(len(d), k)
    w[0] = w[-1] = 0.5 * k
    Md = np.asarray((M @ d.T).T)
    return float(np.sqrt(max(np.sum(w * np.einsum("ij,ij->i", d, Md)), 0.0)))


# Setup construction ==========================================================
@lru_cache(maxsize=4)
def _nominal_setup(n, N, T, alpha, r, sigma, epsilon0):
    space = DGSpace(build_uniform_mesh(n))
    return OCPSetup(space, DGConfig(epsilon=epsilon0, r=r, sigma=sigma), alpha=alpha, T=T, N=N)


def make_setup(cfg: SweepConfig, epsilon: float | None = None) -> OCPSetup:
    """The problem of the sweep at diffusion ``epsilon`` (nominal by default)."""
    base = _nominal_setup(cfg.n, cfg.N, cfg.T, cfg.alpha, cfg.r, cfg.sigma, cfg.epsilon0)
    if epsilon is None or epsilon == base.epsilon:
        return base
    return base.with_epsilon(epsilon)


def solve_full(cfg: SweepConfig, epsilon: float | None = None):
    """Optimize the full problem; returns ``(y, u, p, stats)``."""
    setup = make_setup(cfg, epsilon)
    y, u, p, stats = optimize(setup, tol=cfg.tol)
    if not stats.converged:
        raise RuntimeError(f"full optimization did not converge at epsilon = {setup.epsilon}: {stats.message}")
    return y, u, p, stats


def basis_rule(cfg: SweepConfig) -> dict:
    return {"n_modes": cfg.rank} if cfg.rank is not None else {"gamma": cfg.gamma}


def compute_sensitivities(cfg: SweepConfig, solution):
    """Trajectory sensitivities at the nominal parameter by the configured route."""
    setup = make_setup(cfg)
    y, u, p = solution[:3]
    if cfg.sensitivity == "CSE":
        return solve_cse(setup, y, u, p, tol=cfg.sensitivity_tol)
    return solve_fd(lambda mu: make_setup(cfg, mu), cfg.epsilon0, cfg.delta_mu, tol=cfg.sensitivity_tol)


# Sweep =======================================================================
def _basis_columns(method, data, epsilon, mass, mu0):
    if method == "BPOD":
        return data["psi"]
    if method == "ExtPOD":
        return extrapolate(data["psi"], data["psi_mu"], epsilon - mu0, mass=mass).columns
    if method == "ExpPOD":
        return expand(data["psi"], data["psi_mu"], mass=mass).columns
    return saim(data["anchor1"], data["anchor2"], *data["anchor_params"], epsilon, mass=mass).columns


def _grid_point(cfg: SweepConfig, epsilon: float, payload: dict, benchmark=None):
    """All (kind, method) cells at one diffusion value."""
    setup = make_setup(cfg, epsilon)
    records = []
    try:
        if benchmark is None:
            y, u, _, stats = solve_full(cfg, epsilon)
            t_full = stats.wall_time
        else:
            y, u, t_full = benchmark
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        msg = f"full solve failed: {exc}"
        for kind in cfg.kinds:
            for method in cfg.methods:
                records.append(SweepRecord(epsilon, method, kind, 0, math.nan, math.nan, math.nan, math.nan, msg))
        return records

    for kind in cfg.kinds:
        data = payload[kind]
        for method in cfg.methods:
            rec = SweepRecord(epsilon, method, kind, 0, math.nan, math.nan, math.nan, t_full)
            try:
                if method in data.get("missing", {}):
                    raise RuntimeError(data["missing"][method])
                start = time.perf_counter()
                cols = _basis_columns(method, data, epsilon, setup.mass, cfg.epsilon0)
                rm = project_model(setup, cols)
                yr, ur, _, stats = solve_reduced_ocp(rm, tol=cfg.tol)
                rec.t_reduced = time.perf_counter() - start
                if not stats.converged:
                    raise RuntimeError(f"reduced optimization did not converge: {stats.message}")
                rec.l = rm.dim
                rec.state_err = l2_time_space_error(yr, y, setup.mass)
                rec.control_err = l2_time_space_error(ur, u, setup.mass)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                rec.error = f"{type(exc).__name__}: {exc}"
            records.append(rec)
    return records


def prepare_bases(cfg: SweepConfig, solution, sensitivities=None, log=None):
    """Nominal bases, their sensitivities, SAIM anchors and spectra per kind."""
    setup = make_setup(cfg)
    mf = mass_factor(setup)
    y, _, p = solution[:3]
    payload, spectra = {}, {}
    anchors = {}
    if "SAIM" in cfg.methods:
        for mu in cfg.anchors:
            try:
                anchors[mu] = solve_full(cfg, mu)
            except Exception as exc:  # noqa: BLE001
                anchors[mu] = exc
    for kind in cfg.kinds:
        data = {"missing": {}}
        W = build_snapshots(y, p, kind, parameter=cfg.epsilon0)
        try:
            basis = compute_pod(W, mf, **basis_rule(cfg))
        except Exception as exc:  # noqa: BLE001 - every cell of this kind fails
            data["missing"] = {m: f"nominal basis unavailable: {exc}" for m in ENRICHMENT_METHODS}
            payload[kind] = data
            if log:
                log(f"kind {kind}: {exc}")
            continue
        data["psi"] = basis.psi
        l = basis.n_modes
        lam_mu = None
        if sensitivities is not None:
            W_mu = build_snapshots(sensitivities.s_y, sensitivities.s_p, kind)
            try:
                data["psi_mu"] = svd_sensitivities(basis, W_mu).Psi_mu
            except Exception as exc:  # noqa: BLE001
                for m in ("ExtPOD", "ExpPOD"):
                    data["missing"][m] = f"basis sensitivities unavailable: {exc}"
            _, lam_mu = eigenvalue_sensitivities(basis.W_tilde, mf.apply_transpose(W_mu.W), basis.rank)
        else:
            for m in ("ExtPOD", "ExpPOD"):
                data["missing"][m] = "no trajectory sensitivities"
        if "SAIM" in cfg.methods:
            try:
                mats = []
                for mu in cfg.anchors:
                    sol = anchors[mu]
                    if isinstance(sol, Exception):
                        raise sol
                    mats.append(compute_pod(build_snapshots(sol[0], sol[2], kind), mf, n_modes=l).psi)
                data["anchor1"], data["anchor2"] = mats
                data["anchor_params"] = tuple(cfg.anchors)
            except Exception as exc:  # noqa: BLE001
                data["missing"]["SAIM"] = f"anchor bases unavailable: {exc}"
        s2 = basis.singular_values[: basis.rank] ** 2
        spectra[kind] = {"sigma2": s2, "lambda_mu": lam_mu if lam_mu is not None else np.full_like(s2, np.nan),
                         "l": l}
        payload[kind] = data
        if log:
            log(f"kind {kind}: l = {l}, rank = {basis.rank}")
    return payload, spectra


def run_sweep(cfg: SweepConfig, log=None) -> SweepResult:
    """Run the full protocol and return the sorted records.

    Failures of individual cells (or of the full solve at one grid value)
    are recorded in the affected rows and the sweep continues.
    """
    log = log or (lambda msg: None)
    y0, u0, p0, stats0 = solve_full(cfg)
    log(f"nominal solve: {stats0.iterations} Newton steps, {stats0.wall_time:.3f} s")
    try:
        sens = compute_sensitivities(cfg, (y0, u0, p0))
    except Exception as exc:  # noqa: BLE001
        log(f"sensitivities failed: {exc}")
        sens = None
    payload, spectra = prepare_bases(cfg, (y0, u0, p0), sens, log=log)

    def cached(eps):
        return (y0, u0, stats0.wall_time) if eps == cfg.epsilon0 else None

    records = []
    if cfg.jobs > 1 and len(cfg.grid) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_grid_point, cfg, eps, payload, cached(eps)) for eps in cfg.grid]
            for fut in futures:
                records.extend(fut.result())
    else:
        for eps in cfg.grid:
            records.extend(_grid_point(cfg, eps, payload, cached(eps)))
            log(f"epsilon = {eps:.6g} done")
    return SweepResult(records, spectra, cfg)


# Emission ===================================================================
def _fmt(x) -> str:
    return repr(float(x)) if x is not None else "nan"


def emit(records, fmt: str = "csv", out=None, spectra=None) -> list:
    """Write sweep results.

    ``fmt="csv"`` writes ``sweep.csv``; ``fmt="plotdata"`` writes one
    whitespace-separated file per (method, kind) with columns
    ``1/eps state_err control_err`` and a spectrum file per kind with
    columns ``index sigma^2 lambda_mu``. ``fmt="all"`` writes both.
    """
    if not records:
        raise ValueError("no records to emit")
    out = Path(out if out is not None else getattr(getattr(records, "config", None), "out", "results"))
    out.mkdir(parents=True, exist_ok=True)
    if spectra is None:
        spectra = getattr(records, "spectra", None)
    records = sorted(records, key=SweepRecord.sort_key)
    written = []
    if fmt in ("csv", "all"):
        path = out / "sweep.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow([_fmt(r.epsilon), r.method, r.kind, r.l, _fmt(r.state_err), _fmt(r.control_err),
                            f"{r.t_reduced:.6f}", f"{r.t_full:.6f}"])
        written.append(path)
    if fmt in ("plotdata", "all"):
        series = {}
        for r in records:
            series.setdefault((r.method, r.kind), []).append(r)
        for (method, kind), rows in sorted(series.items()):
            path = out / f"plot_{method}_{kind}.dat"
            lines = ["# inv_epsilon state_err control_err"]
            lines += [f"{1.0 / r.epsilon:.10g} {r.state_err:.10e} {r.control_err:.10e}"
                      for r in sorted(rows, key=lambda r: 1.0 / r.epsilon)]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        for kind, spec in sorted((spectra or {}).items()):
            path = out / f"spectrum_{kind}.dat"
            lines = ["# index sigma2 lambda_mu"]
            lines += [f"{i + 1} {s:.10e} {lm:.10e}" for i, (s, lm) in enumerate(zip(spec["sigma2"], spec["lambda_mu"]))]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    if fmt not in ("csv", "plotdata", "all"):
        raise ValueError(f"unknown format {fmt!r}")
    return written


def save_records(records, path) -> Path:
    """JSON dump of records and spectra, readable by ``load_records``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spectra = getattr(records, "spectra", {}) or {}
    data = {
        "records": [dataclasses.asdict(r) for r in sorted(records, key=SweepRecord.sort_key)],
        "spectra": {k: {"sigma2": [float(x) for x in v["sigma2"]],
                        "lambda_mu": [float(x) for x in v["lambda_mu"]], "l": int(v["l"])}
                    for k, v in spectra.items()},
    }
    path.write_text(json.dumps(data, indent=1, allow_nan=True) + "\n")
    return path


def load_records(path) -> SweepResult:
    data = json.loads(Path(path).read_text())
    records = [SweepRecord(**r) for r in data["records"]]
    spectra = {k: {"sigma2": np.array(v["sigma2"]), "lambda_mu": np.array(v["lambda_mu"]), "l": v["l"]}
               for k, v in data.get("spectra", {}).items()}
    return SweepResult(records, spectra)


def failure_summary(records) -> str:
    failed = [r for r in records if r.failed]
    lines = [f"{len(failed)} of {len(records)} cells failed"]
    lines += [f"  epsilon={r.epsilon:.6g} method={r.method} kind={r.kind}: {r.error}" for r in failed]
    return "\n".join(lines)
