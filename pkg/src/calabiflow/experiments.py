"""Reproducible experiments behind the command line.

Every experiment takes an :class:`ExperimentConfig`, writes its artifacts to
``config.out`` and returns an :class:`ExperimentResult` whose ``checks`` map
invariant names to pass/fail.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import io
from . import kahler as K
from . import krf
from . import monge_ampere as M
from . import ricci_flow as RF
from .grid import PeriodicGrid, trig_field

log = logging.getLogger(__name__)

KINDS = ("exact", "variation-check", "surface-flow", "fs-check", "ma-solve", "krf",
         "verify-all")


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    """Declarative experiment description.

    Attributes
    ----------
    kind : str
        One of :data:`KINDS`.
    n : int
        Complex dimension (Kahler experiments) or space dimension.
    resolution : int
        Points per real axis.
    f : str, list or None
        Preset name (``zero``, ``cos-product``, ``mixed``, ``random``) or a
        list of ``{"amp", "k", "phase"}`` cosine terms with integer wave
        vectors over the real axes ``(x1, y1, ..., xn, yn)``.
    amplitude : float or None
        Overrides the preset amplitude.
    params : dict
        Experiment-specific parameters; see :func:`describe`.
    out : str
    seed : int
    """

    kind: str
    n: int = 1
    resolution: int = 32
    f: Any = "zero"
    amplitude: float | None = None
    params: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: unknown {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError("n: must be a positive integer")
        if not isinstance(self.resolution, int) or self.resolution < 8 or self.resolution % 2:
            raise ConfigError("resolution: must be an even integer >= 8")
        if self.amplitude is not None and not self.amplitude >= 0:
            raise ConfigError("amplitude: must be nonnegative")
        if not isinstance(self.params, dict):
            raise ConfigError("params: must be a mapping")
        for k, v in self.params.items():
            if ("tol" in k or k in ("dt", "lam", "r0")) and v is not None and not v > 0:
                raise ConfigError(f"params.{k}: must be positive")
        if not isinstance(self.seed, int):
            raise ConfigError("seed: must be an integer")

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: unknown field")
        merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        if "kind" not in merged:
            raise ConfigError("kind: missing")
        return cls(**merged)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        return cls.from_mapping(data, **overrides)

    def param(self, name: str, default):
        return self.params.get(name, default)


@dataclass
class ExperimentResult:
    kind: str
    report: dict
    checks: dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


# -- right-hand sides -----------------------------------------------------------


def make_f(cgrid: K.ComplexTorusGrid, spec, amplitude: float | None = None,
           seed: int = 0) -> np.ndarray:
    """Smooth periodic data from a preset name or a list of cosine terms."""
    xs = cgrid.coords()
    tau = 2.0 * np.pi
    if spec is None or spec == "zero":
        return np.zeros(cgrid.shape)
    if spec == "cos-product":
        a = 0.5 if amplitude is None else amplitude
        return a * np.cos(tau * xs[0]) * np.cos(tau * xs[1])
    if spec == "mixed":
        if cgrid.n < 2:
            raise ConfigError("f: preset 'mixed' needs n >= 2")
        a = 0.3 if amplitude is None else amplitude
        return a * (np.cos(tau * xs[0]) * np.cos(tau * xs[1]) + np.cos(tau * xs[2]))
    if spec == "random":
        a = 0.3 if amplitude is None else amplitude
        return trig_field(cgrid.real, np.random.default_rng(seed), kmax=1, amplitude=a)
    if isinstance(spec, list):
        out = np.zeros(cgrid.shape)
        for i, term in enumerate(spec):
            try:
                k = [int(v) for v in term["k"]]
                amp = float(term["amp"])
                phase = float(term.get("phase", 0.0))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"f[{i}]: needs 'amp' and integer 'k'") from exc
            if len(k) != 2 * cgrid.n:
                raise ConfigError(f"f[{i}].k: needs {2 * cgrid.n} entries")
            out += amp * np.cos(tau * sum(kk * x for kk, x in zip(k, xs)) + phase)
        return out
    raise ConfigError(f"f: unknown preset {spec!r}")


def variation_input(resolution: int, seed: int, g_amp: float = 0.2,
                    h_amp: float = 0.5, dims: int = 3) -> RF.VariationInput:
    """Seeded band-limited metric and symmetric perturbation on ``T^dims``."""
    grid = PeriodicGrid((resolution,) * dims)
    rng = np.random.default_rng(seed)
    g = np.zeros((dims, dims) + grid.shape)
    h = np.zeros_like(g)
    for i in range(dims):
        for j in range(i, dims):
            a = trig_field(grid, rng, kmax=1, amplitude=g_amp)
            b = trig_field(grid, rng, kmax=1, amplitude=h_amp, zero_mean=False)
            g[i, j] = g[j, i] = a + (1.0 if i == j else 0.0)
            h[i, j] = h[j, i] = b
    return RF.VariationInput(grid, g, h)


def fs_sample_points(n: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return 0.6 * (rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n)))


# -- experiments ----------------------------------------------------------------


def _exact(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    lam = float(cfg.param("lam", 1.0))
    t = float(cfg.param("t", 0.25))
    r0 = float(cfg.param("r0", 1.0))
    dim = int(cfg.param("dim", 2))
    steps = int(cfg.param("steps", 450))
    t_end = float(cfg.param("t_end", 0.45))
    rho2 = RF.einstein_homothety(lam, t)
    T = RF.HomothetySolution("einstein-positive", lam=lam).extinction_time
    rate = -2.0 * (dim - 1)
    ts, ys = RF.rk4(lambda _, y: np.full_like(y, rate), [r0 * r0], 0.0, t_end, steps)
    exact = np.array([RF.sphere_radius(r0, dim, s) ** 2 for s in ts])
    rel = float(np.max(np.abs(ys[:, 0] - exact) / exact))
    lo, hi = RF.bracket_extinction(lambda _, y: np.full_like(y, rate), r0 * r0, dt=1e-2,
                                   tol=1e-7)
    T_sphere = r0 * r0 / (2.0 * (dim - 1))
    io.write_csv(out / "sphere.csv", ("t", "r2_rk4", "r2_exact"),
                 zip(ts, ys[:, 0], exact))
    report = {"lam": lam, "t": t, "rho2": rho2, "T": T, "sphere": {
        "r0": r0, "dim": dim, "rk4_rel_error": rel, "extinction_lo": lo,
        "extinction_hi": hi, "extinction_exact": T_sphere}}
    checks = {"rk4_matches_closed_form": rel < 1e-10,
              "extinction_bracketed": lo <= T_sphere <= hi and abs(lo - T_sphere) < 1e-6
              and abs(hi - T_sphere) < 1e-6}
    return ExperimentResult(cfg.kind, report, checks)


def _variation(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    tol = float(cfg.param("tol", 1e-6))
    ds = float(cfg.param("ds", 1e-4))
    v = variation_input(cfg.resolution, cfg.seed, dims=int(cfg.param("dim", 3)))
    errs = {name: RF.variation_check(v, name, ds) for name in RF.FORMULAS}
    io.write_csv(out / "variations.csv", ("formula", "max_error"), errs.items())
    return ExperimentResult(cfg.kind, {"ds": ds, "errors": errs},
                            {f"variation_{k}": e < tol for k, e in errs.items()})


def _surface(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    grid = PeriodicGrid((cfg.resolution,) * 2)
    x, _ = grid.coords()
    amp = 0.2 if cfg.amplitude is None else cfg.amplitude
    w0 = amp * np.cos(2.0 * np.pi * x)
    normalized = bool(cfg.param("normalized", True))
    scheme = cfg.param("scheme", "imex")
    traj, mon = RF.conformal_surface_flow(
        grid, w0, dt=cfg.param("dt", None), steps=int(cfg.param("steps", 200000)),
        normalized=normalized, scheme=scheme, stop_tol=float(cfg.param("stop_tol", 1e-7)),
        record_every=int(cfg.param("record_every", 10)))
    io.write_csv(out / "surface.csv", RF.SURFACE_COLUMNS, mon.rows)
    io.write_grid(out / "w_final.bin", grid, traj[-1][1])
    vol = mon.column("volume")
    supR = np.maximum(np.abs(mon.column("sup_R")), np.abs(mon.column("inf_R")))
    report = {"normalized": normalized, "scheme": scheme, "t_final": traj[-1][0],
              "sup_absR_final": float(supR[-1]), "osc_w_final": float(mon.column("osc_w")[-1]),
              "volume_drift": float(np.max(np.abs(vol - vol[0])))}
    checks = {"volume_constant": (not normalized) or report["volume_drift"] < 1e-8,
              "curvature_decays": report["sup_absR_final"] < 1e-6,
              "oscillation_decays": report["osc_w_final"] < 1e-6}
    return ExperimentResult(cfg.kind, report, checks)


def _fs(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    dims = cfg.param("dims", [1, 2, 3])
    count = int(cfg.param("samples", 100))
    tol = float(cfg.param("tol", 1e-8))
    report, checks, rows = {}, {}, []
    for n in dims:
        chk = K.fubini_study(fs_sample_points(n, count, cfg.seed + n), n, with_curvature=False)
        per = np.max(np.abs(chk.ricci - (n + 1) * chk.g), axis=(-2, -1))
        rows.extend((n, i, float(r)) for i, r in enumerate(per))
        worst = float(per.max())
        bis = float(np.max(np.abs(K.fs_curvature_origin(n) - K.fs_bisectional_exact(n))))
        report[f"n{n}"] = {"einstein_residual": worst, "bisectional_error": bis}
        checks[f"einstein_n{n}"] = worst < tol
        checks[f"bisectional_n{n}"] = bis < tol
    io.write_csv(out / "fubini_study.csv", ("n", "sample", "einstein_residual"), rows)
    return ExperimentResult(cfg.kind, report, checks)


def _ma_config(cfg: ExperimentConfig) -> M.ContinuityConfig:
    kw = {}
    if "t_steps" in cfg.params:
        kw["t_steps"] = tuple(cfg.params["t_steps"])
    for name in ("newton_tol", "linear_tol", "damping", "c"):
        if name in cfg.params:
            kw[name] = float(cfg.params[name])
    return M.ContinuityConfig(**kw)


def _ma(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    cgrid = K.ComplexTorusGrid(cfg.n, cfg.resolution)
    f = make_f(cgrid, cfg.f, cfg.amplitude, cfg.seed)
    mcfg = _ma_config(cfg)
    sol = M.continuity_solve(cgrid, f, mcfg)
    rep = M.a_priori_report(cgrid, sol.u)
    io.write_grid(out / "u.bin", cgrid.real, sol.u)
    report = {"n": cfg.n, "resolution": cfg.resolution, "residual": sol.residual, "A": sol.A,
              "A_closed_form": M.normalization_constant(cgrid, f, 1.0),
              "iterations": {f"t={t:g}": k for t, k in sol.path_iterations.items()},
              "linear_iterations": sol.linear_iterations, "a_priori": rep.as_dict()}
    checks = {"residual": sol.residual < mcfg.newton_tol, "trace_positive": rep.min_trace > 0,
              "mean_zero": abs(float(np.mean(sol.u))) < 1e-12}
    if cfg.n == 1:
        uo, _ = M.poisson_oracle(cgrid, f)
        report["poisson_oracle_error"] = float(np.max(np.abs(uo - sol.u)))
        checks["poisson_oracle"] = report["poisson_oracle_error"] < 1e-6
    return ExperimentResult(cfg.kind, report, checks)


def _krf_config(cfg: ExperimentConfig) -> krf.FlowConfig:
    names = {f.name for f in fields(krf.FlowConfig)}
    kw = {k: v for k, v in cfg.params.items() if k in names}
    return krf.FlowConfig(**kw)


def krf_checks(cgrid: K.ComplexTorusGrid, f: np.ndarray, res: krf.FlowResult,
               t_min: float = 0.2) -> tuple[dict, dict]:
    """Monitor-suite invariants for a finished run."""
    m = res.monitors
    supf = float(np.max(np.abs(f)))
    step_t = m.step_column("t")
    sup_abs = np.maximum(np.abs(m.step_column("supF")), np.abs(m.step_column("infF")))
    omega = m.step_column("supF") - m.step_column("infF")
    vol = m.step_column("volume")
    report: dict[str, Any] = {"cbar": res.cbar, "residual": res.residual, "steps": res.steps,
                              "t_final": res.state.t, "dt": res.state.dt,
                              "drift": res.state.drift}
    checks: dict[str, bool] = {}
    checks["max_principle"] = bool(np.all(sup_abs <= supf + 1e-10))
    checks["supF_nonincreasing"] = bool(np.all(np.diff(sup_abs) <= 1e-10))
    checks["omega_nonincreasing"] = bool(np.all(np.diff(omega) <= 1e-12))
    checks["trace_positive"] = bool(np.all(m.column("min_trace") > 0))
    checks["admissible"] = bool(np.all(m.column("min_eig") > 0))
    report["volume_drift"] = float(np.max(np.abs(vol - vol[0])))
    checks["volume_constant"] = report["volume_drift"] < 1e-8
    gaps = [rq - lam * (1 - 1e-8) for _, rq, lam in m.poincare if np.isfinite(rq)]
    checks["poincare"] = bool(all(g >= 0 for g in gaps))
    if cgrid.n >= 2:
        report["yau2_margin_min"] = float(np.min(m.column("yau2_margin")))
        checks["yau2"] = report["yau2_margin_min"] >= -1e-8
    checks["finite_monitors"] = bool(np.all(np.isfinite(
        np.array(m.rows)[:, :-1] if cgrid.n == 1 else np.array(m.rows))))
    if res.steps >= 10:
        fits = {}
        for name, series in (("omega", omega), ("E", m.step_column("E"))):
            try:
                d = krf.decay_fit(step_t, series, t_min=t_min)
                fits[name] = {"rate": d.rate, "prefactor": d.prefactor, "r2": d.quality}
                checks[f"decay_{name}"] = d.rate > 0 and d.quality > 0.99
            except ValueError as exc:
                fits[name] = {"error": str(exc)}
                checks[f"decay_{name}"] = False
        report["decay"] = fits
    report["limit_ricci_residual"] = krf.limit_ricci_check(cgrid, res.u, f)
    checks["limit_ricci"] = report["limit_ricci_residual"] < 1e-5
    return report, checks


def _krf(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    cgrid = K.ComplexTorusGrid(cfg.n, cfg.resolution)
    f = make_f(cgrid, cfg.f, cfg.amplitude, cfg.seed)
    fcfg = _krf_config(cfg)
    if fcfg.checkpoint_every and not fcfg.checkpoint_dir:
        fcfg = krf.FlowConfig(**{**fcfg.__dict__, "checkpoint_dir": str(out / "checkpoints")})
    res = krf.run_flow(cgrid, f, fcfg)
    io.write_csv(out / "monitors.csv", krf.MONITOR_COLUMNS, res.monitors.rows)
    io.write_grid(out / "u_final.bin", cgrid.real, res.u)
    io.write_hermitian(out / "metric_final.bin", cgrid.real, res.state.g)
    report, checks = krf_checks(cgrid, f, res, float(cfg.param("fit_t_min", 0.2)))
    report = {"n": cfg.n, "resolution": cfg.resolution, "scheme": fcfg.scheme, **report}
    if cfg.param("compare_elliptic", cfg.n == 1):
        sol = M.continuity_solve(cgrid, -f, _ma_config(cfg))
        report["elliptic_match"] = float(np.max(np.abs(sol.u - res.u)))
        report["cbar_minus_logA"] = res.cbar - math.log(sol.A)
        checks["elliptic_match"] = report["elliptic_match"] < 1e-6
        checks["cbar_logA"] = abs(report["cbar_minus_logA"]) < 1e-8
    return ExperimentResult(cfg.kind, report, checks)


VERIFY_ALL = (
    ("exact", {}),
    ("variation-check", {"resolution": 16, "params": {"tol": 1e-5}}),
    ("fs-check", {"params": {"samples": 10}}),
    ("surface-flow", {"resolution": 32}),
    ("ma-solve", {"n": 1, "resolution": 32, "f": "cos-product"}),
    ("krf", {"n": 1, "resolution": 32, "f": "cos-product",
             "params": {"lambda1_every": 20, "record_every": 5}}),
)


def _verify_all(cfg: ExperimentConfig, out: Path) -> ExperimentResult:
    report, checks = {}, {}
    for kind, over in VERIFY_ALL:
        sub = ExperimentConfig(kind=kind, out=str(out / kind), seed=cfg.seed,
                               **{k: v for k, v in over.items()})
        res = run(sub)
        report[kind] = {"ok": res.ok, "failed": res.failed() or "none"}
        checks.update({f"{kind}.{k}": v for k, v in res.checks.items()})
    return ExperimentResult(cfg.kind, report, checks)


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], ExperimentResult]] = {
    "exact": _exact, "variation-check": _variation, "surface-flow": _surface,
    "fs-check": _fs, "ma-solve": _ma, "krf": _krf, "verify-all": _verify_all}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute an experiment and write ``report.txt`` beside its artifacts."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        res = RUNNERS[cfg.kind](cfg, out)
    except (K.AdmissibilityError, M.NewtonError, krf.FlowError, RF.BlowUpError) as exc:
        res = ExperimentResult(cfg.kind, {"error": f"{type(exc).__name__}: {exc}"},
                               {type(exc).__name__: False})
    elapsed = time.perf_counter() - start
    body = {"kind": cfg.kind, "seed": cfg.seed, "status": "pass" if res.ok else "fail",
            **res.report,
            "checks": {k: ("pass" if v else "FAIL") for k, v in res.checks.items()}}
    io.write_report(out / "report.txt", body)
    log.info("%s finished in %.1f s (%s)", cfg.kind, elapsed, body["status"])
    return res


# -- catalog --------------------------------------------------------------------


DESCRIPTIONS = {
    "exact": (
        "Closed-form Ricci flows. Einstein homothety rho^2(t) = 1 - 2 lam t with "
        "extinction T = 1/(2 lam); round spheres r^2(t) = r0^2 - 2(n-1)t integrated by RK4 "
        "and the extinction time bracketed by bisection.",
        "params: lam=1.0, t=0.25, r0=1.0, dim=2, steps=450, t_end=0.45",
        "outputs: report.txt (rho2, T, sphere.*), sphere.csv (t, r2_rk4, r2_exact)"),
    "variation-check": (
        "First variations of g^-1, Christoffel symbols, Riemann and Ricci tensors, scalar "
        "curvature, volume element, total volume and total scalar curvature along "
        "g + s h, compared with central differences.",
        "params: tol=1e-6, ds=1e-4, dim=3; resolution per axis; seed selects (g, h)",
        "outputs: variations.csv (formula, max_error), report.txt"),
    "surface-flow": (
        "Ricci flow of exp(2w) delta on the flat 2-torus, dw/dt = exp(-2w) Lap w, "
        "optionally volume-normalized by psi(t).",
        "params: normalized=true, scheme=imex|explicit, dt=auto, steps=200000, "
        "stop_tol=1e-7, record_every=10; amplitude=0.2 for w0 = a cos(2 pi x)",
        "outputs: surface.csv (t, sup_R, inf_R, volume, sup_w, osc_w), w_final.bin, report.txt"),
    "fs-check": (
        "Fubini-Study metric on CP^n in the chart U_0: Ric = (n+1) g at sampled points and "
        "bisectional curvature delta_ij delta_kl + delta_il delta_kj at the origin.",
        "params: dims=[1,2,3], samples=100, tol=1e-8",
        "outputs: fubini_study.csv (n, sample, einstein_residual), report.txt"),
    "ma-solve": (
        "Continuity family det(g0 + ddbar u) = A(t) exp(t f) det g0, t from 0 to 1, with "
        "A(t) = Vol / int exp(t f) dV and damped Newton steps solved by PCG.",
        "params: t_steps (11 uniform), newton_tol=1e-10, linear_tol=1e-10, damping=1.0, c=0",
        "outputs: u.bin, report.txt (residual, A, iterations per t, a_priori block)"),
    "krf": (
        "Parabolic complex Monge-Ampere flow du/dt = log det(g + ddbar u) - log det g + f, "
        "u(0) = 0, run until osc F < stop_tol; the limit metric has Ricci form ddbar f.",
        "params: scheme=imex|explicit-rk4, dt=auto, stop_tol=1e-9, residual_tol=1e-6, "
        "record_every=1, lambda1_every=10, yau_c=2, checkpoint_every, compare_elliptic",
        "outputs: monitors.csv (" + ", ".join(krf.MONITOR_COLUMNS) + "), u_final.bin, "
        "metric_final.bin, report.txt (cbar, residuals, decay fits, step counts)"),
    "verify-all": (
        "Runs the invariant battery: " + ", ".join(k for k, _ in VERIFY_ALL) + ".",
        "params: none; seed is passed to every sub-experiment",
        "outputs: one subdirectory per experiment plus report.txt"),
}


def describe(kind: str) -> str:
    """Catalog text for ``kind``."""
    if kind not in DESCRIPTIONS:
        raise ConfigError(f"kind: unknown {kind!r}; valid kinds: {', '.join(KINDS)}")
    what, params, outputs = DESCRIPTIONS[kind]
    common = ("config: JSON object with kind, n, resolution, f, amplitude, params, out, seed; "
              "f presets: zero, cos-product, mixed, random, or [{amp, k, phase}]")
    return "\n".join([kind, "", what, "", params, outputs, common])
