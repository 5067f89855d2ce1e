"""Command-line front end: ``oqs-chain coeffs|evolve|sweep-dt|check``.

Every subcommand reads one JSON scenario file (``--config``; omitted means
all defaults) and writes into ``--out``. Exit codes: 0 success, 2 config
error, 3 numeric failure, 4 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import generators as gen
from . import transport as tr
from .model import ChainParams, mean_photon, normal_modes
from .quadrature import QuadratureError, QuadratureSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

APPROACHES = ("exact", "local", "global", "tcg")


class ConfigError(ValueError):
    """Invalid scenario file or command-line value."""


def default_delta_t_grid(points: int = 40, lo: float = 1e-2, hi: float = 1e4) -> tuple[float, ...]:
    """Log-spaced coarse-graining times, endpoints exact."""
    grid = np.logspace(math.log10(lo), math.log10(hi), points)
    grid[0], grid[-1] = lo, hi
    return tuple(float(x) for x in grid)


@dataclass(frozen=True)
class BathConfig:
    modes_per_bath: int = 512
    omega_max: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a subcommand needs; physics defaults are the reference chain.

    ``delta_t_grid`` is used by ``coeffs``, ``sweep-dt`` and ``check``;
    ``evolve_delta_t`` lists the windows evolved by ``evolve``.
    """

    params: ChainParams = field(default_factory=ChainParams)
    approaches: tuple[str, ...] = ("local", "global", "tcg")
    delta_t_grid: tuple[float, ...] | None = None
    evolve_delta_t: tuple[float, ...] = (1.0,)
    bath: BathConfig = field(default_factory=BathConfig)
    t_end: float = 20.0
    sample_step: float = 0.01
    tol: float = 1e-10
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if not self.approaches:
            raise ConfigError("at least one approach is required")
        bad = [a for a in self.approaches if a not in APPROACHES]
        if bad:
            raise ConfigError(f"unknown approaches {bad}; choose from {list(APPROACHES)}")
        if len(set(self.approaches)) != len(self.approaches):
            raise ConfigError("approaches must not repeat")
        has_tcg = "tcg" in self.approaches
        if has_tcg and self.delta_t_grid is None:
            object.__setattr__(self, "delta_t_grid", default_delta_t_grid())
        if not has_tcg and self.delta_t_grid is not None:
            raise ConfigError("delta_t_grid is only allowed when tcg is selected")
        if self.delta_t_grid is not None:
            if not self.delta_t_grid or any(not (x > 0 and math.isfinite(x)) for x in self.delta_t_grid):
                raise ConfigError("delta_t_grid must be a non-empty list of positive numbers")
        if any(not (x > 0) for x in self.evolve_delta_t):
            raise ConfigError("evolve_delta_t entries must be positive")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end must be a non-negative number")
        if not self.sample_step > 0:
            raise ConfigError("sample_step must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.bath.modes_per_bath < 1:
            raise ConfigError("bath.modes_per_bath must be positive")

    def to_dict(self) -> dict:
        out = {
            "params": self.params.to_dict(),
            "approaches": list(self.approaches),
            "delta_t_grid": None if self.delta_t_grid is None else list(self.delta_t_grid),
            "evolve_delta_t": list(self.evolve_delta_t),
            "bath": asdict(self.bath),
            "t_end": self.t_end,
            "sample_step": self.sample_step,
            "tol": self.tol,
            "quad": asdict(self.quad),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        try:
            if "params" in kw:
                kw["params"] = _strict(ChainParams, kw["params"], "params")
            if "bath" in kw:
                kw["bath"] = _strict(BathConfig, kw["bath"], "bath")
            if "quad" in kw:
                kw["quad"] = _strict(QuadratureSpec, kw["quad"], "quad")
            for key in ("approaches", "evolve_delta_t"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            if kw.get("delta_t_grid") is not None:
                kw["delta_t_grid"] = tuple(float(x) for x in kw["delta_t_grid"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _strict(kind, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(kind)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return kind(**value)


# ---------------------------------------------------------------- helpers


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _pool_map(func, items, threads: int):
    """Map in a worker pool; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _site_coeffs(cfg: ScenarioConfig, approach: str, delta_t: float | None = None):
    p = cfg.params
    if approach == "local":
        return gen.build_local(p, cfg.quad)
    if approach == "global":
        return gen.to_site_basis(gen.build_global(p, cfg.quad))
    if approach == "tcg":
        return gen.to_site_basis(gen.build_tcg(p, delta_t, cfg.quad))
    raise ValueError(approach)


def _sample_times(cfg: ScenarioConfig) -> np.ndarray:
    n = int(math.floor(cfg.t_end / cfg.sample_step + 1e-9))
    return cfg.sample_step * np.arange(n + 1)


TRAJECTORY_PAIRS = [(i, j) for i in range(6) for j in range(i, 6)]


def trajectory_header() -> list[str]:
    cols = ["t"]
    for i, j in TRAJECTORY_PAIRS:
        cols += [f"re_c{i + 1}{j + 1}", f"im_c{i + 1}{j + 1}"]
    for i in range(3):
        cols += [f"re_d{i + 1}", f"im_d{i + 1}"]
    cols += ["n1", "n2", "n3", "j12", "j23"]
    return cols


def trajectory_row(s: dyn.CovarianceState) -> list[str]:
    row = [_fmt(s.t)]
    for i, j in TRAJECTORY_PAIRS:
        row += [_fmt(s.c[i, j].real), _fmt(s.c[i, j].imag)]
    for i in range(3):
        row += [_fmt(s.d[i].real), _fmt(s.d[i].imag)]
    row += [_fmt(tr.occupation(s, k)) for k in (1, 2, 3)]
    row += [_fmt(tr.excitation_current(s, 1, 2)), _fmt(tr.excitation_current(s, 2, 3))]
    return row


# ---------------------------------------------------------------- subcommands


def cmd_coeffs(cfg: ScenarioConfig, out: Path, threads: int = 1) -> list[Path]:
    """Write one JSON coefficient dump per approach and coarse-graining time."""
    written = []
    p = cfg.params
    for approach in cfg.approaches:
        if approach == "local":
            coeffs = [("coeffs_local.json", gen.build_local(p, cfg.quad))]
        elif approach == "global":
            coeffs = [("coeffs_global.json", gen.build_global(p, cfg.quad))]
        elif approach == "tcg":
            built = _pool_map(lambda dt: gen.build_tcg(p, dt, cfg.quad), cfg.delta_t_grid, threads)
            coeffs = [(f"coeffs_tcg_{k:03d}.json", c) for k, c in enumerate(built)]
        else:
            continue  # the exact reference has no generator
        for name, c in coeffs:
            path = out / name
            path.write_text(c.to_json() + "\n")
            written.append(path)
    return written


def _evolve_one(cfg: ScenarioConfig, approach: str, delta_t: float | None, times):
    p = cfg.params
    state0 = dyn.CovarianceState.vacuum()
    if approach == "exact":
        disc = dyn.discretize_bath(p.omega_c, cfg.bath.modes_per_bath, cfg.bath.omega_max)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            traj = dyn.exact_reference(p, disc, state0, float(times[-1]), times=times)
        return traj.states, None, traj.warnings
    coeffs = _site_coeffs(cfg, approach, delta_t)
    dd = dyn.build_drift_diffusion(coeffs)
    states = dyn.evolve(state0, dd, float(times[-1]), tol=cfg.tol, times=times)
    return states, coeffs, []


def cmd_evolve(cfg: ScenarioConfig, out: Path, threads: int = 1) -> list[Path]:
    """Evolve from the chain vacuum; write trajectory and transport CSVs."""
    times = _sample_times(cfg)
    jobs = []
    for approach in cfg.approaches:
        if approach == "tcg":
            jobs += [(approach, dt) for dt in cfg.evolve_delta_t]
        else:
            jobs.append((approach, None))

    def run(job):
        approach, dt = job
        if times.size < 2:
            return approach, dt, [], [], []
        states, coeffs, notes = _evolve_one(cfg, approach, dt, times)
        reports = []
        if len(states) >= 3:
            reports = tr.energy_reports(states, approach, cfg.params, cfg.quad, dt, coeffs)
        return approach, dt, states, reports, notes

    results = _pool_map(run, jobs, threads)
    written = []
    all_reports = []
    k_tcg = 0
    for res in results:
        approach, dt, states, reports, notes = res
        if approach == "tcg":
            name = f"trajectory_tcg_{k_tcg:03d}.csv"
            k_tcg += 1
        else:
            name = f"trajectory_{approach}.csv"
        path = out / name
        _write_csv(path, trajectory_header(), [trajectory_row(s) for s in states])
        written.append(path)
        all_reports += reports
        for note in notes:
            print(f"warning ({approach}): {note}", file=sys.stderr)
    path = out / "transport.csv"
    tr.write_reports_csv(path, all_reports)
    written.append(path)
    return written


SWEEP_COLUMNS = ["approach", "delta_t", "q_left", "q_right", "j12", "j23", "a_coeff"]


def sweep_point(params: ChainParams, delta_t: float, quad: QuadratureSpec) -> dict:
    """Steady-state sink/source terms and currents of the tcg generator at one delta_t."""
    coeffs = gen.build_tcg(params, delta_t, quad)
    state = dyn.steady_state(dyn.build_drift_diffusion(gen.to_site_basis(coeffs)))
    bal = tr.energy_balance(state, coeffs)
    return {
        "delta_t": delta_t,
        "q_left": bal.q_left,
        "q_right": bal.q_right,
        "j12": tr.excitation_current(state, 1, 2),
        "j23": tr.excitation_current(state, 2, 3),
        "a_coeff": bal.a_coeff,
    }


def global_point(params: ChainParams, quad: QuadratureSpec) -> dict:
    coeffs = gen.to_site_basis(gen.build_global(params, quad))
    state = dyn.steady_state(dyn.build_drift_diffusion(coeffs))
    _, ql, qr = tr.energy_rhs_global(state, params, quad)
    return {
        "q_left": ql,
        "q_right": qr,
        "j12": tr.excitation_current(state, 1, 2),
        "j23": tr.excitation_current(state, 2, 3),
        "a_coeff": tr.energy_balance(state, coeffs).a_coeff,
    }


def cmd_sweep_dt(cfg: ScenarioConfig, out: Path, threads: int = 1) -> tuple[Path, list[str]]:
    """Steady sink/source terms versus delta_t plus the global constants."""
    if "tcg" not in cfg.approaches:
        raise ConfigError("sweep-dt needs tcg among the approaches")

    def run(dt):
        try:
            return sweep_point(cfg.params, dt, cfg.quad), None
        except (QuadratureError, dyn.SteadyStateError, np.linalg.LinAlgError, ValueError) as exc:
            return None, f"delta_t={dt!r}: {exc}"

    results = _pool_map(run, cfg.delta_t_grid, threads)
    rows, failures = [], []
    for point, err in results:
        if err:
            failures.append(err)
            continue
        rows.append(["tcg"] + [_fmt(point[c]) for c in SWEEP_COLUMNS[1:]])
    glb = global_point(cfg.params, cfg.quad)
    # two rows spanning the delta_t range, so the constant plots as a line
    for dt in (cfg.delta_t_grid[0], cfg.delta_t_grid[-1]):
        rows.append(["global", _fmt(dt)] + [_fmt(glb[c]) for c in SWEEP_COLUMNS[2:]])
    path = out / "sweep_dt.csv"
    _write_csv(path, SWEEP_COLUMNS, rows)
    return path, failures


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "threshold": float(self.threshold)}


def _corrupt(coeffs: gen.GeneratorCoefficients) -> gen.GeneratorCoefficients:
    return replace(coeffs, gamma_plus=-coeffs.gamma_plus)


def run_checks(cfg: ScenarioConfig, corrupt_gamma: bool = False, threads: int = 1) -> list[CheckResult]:
    """The invariant suite behind ``oqs-chain check``."""
    p, quad = cfg.params, cfg.quad
    results: list[CheckResult] = []

    def add(name, value, threshold, ok=None):
        passed = (value <= threshold) if ok is None else ok
        results.append(CheckResult(name, bool(passed), float(value), float(threshold)))

    built = {"local": gen.build_local(p, quad), "global": gen.build_global(p, quad)}
    if corrupt_gamma:
        built = {k: _corrupt(v) for k, v in built.items()}
    dts = cfg.delta_t_grid or default_delta_t_grid()
    tcg_list = _pool_map(lambda dt: gen.build_tcg(p, dt, quad), dts, threads)

    for name, c in list(built.items()) + [(f"tcg[{dt:.6g}]", c) for dt, c in zip(dts, tcg_list)]:
        add(f"psd:{name}", -gen.min_rate_eigenvalue(c), 1e-10)
        add(f"hermitian:{name}", gen.hermiticity_defect(c), 1e-10)

    glb_site = gen.to_site_basis(built["global"])
    if not corrupt_gamma:
        # global steady state against its closed form
        eps = normal_modes(p).epsilon
        state = dyn.steady_state(dyn.build_drift_diffusion(glb_site))
        diag = np.ones(3)
        for temp in p.temperatures:
            for i in range(3):
                if eps[i] > 0 and temp > 0:
                    diag[i] += float(mean_photon(eps[i], temp))
        t = gen.bogolubov_matrix()
        closed = t.T @ np.diag(diag) @ t
        undamped = eps <= 0
        if np.any(undamped):
            closed = None
        if closed is not None:
            add("steady_state:global_closed_form", np.max(np.abs(state.c1 - closed)), 1e-10)
        _, ql, qr = tr.energy_rhs_global(state, p, quad)
        add("steady_state:global_q_balance", abs(ql + qr), 1e-8)
        add("steady_state:global_currents",
            max(abs(tr.excitation_current(state, 1, 2)), abs(tr.excitation_current(state, 2, 3))), 1e-8)

    # energy continuity on short trajectories from vacuum
    times = 1e-3 * np.arange(201)
    for name in ("local", "global", "tcg"):
        if name == "tcg":
            c = gen.to_site_basis(tcg_list[len(tcg_list) // 2])
        else:
            c = gen.to_site_basis(built[name])
        dd = dyn.build_drift_diffusion(c)
        if dd.spectral_abscissa >= 0:
            add(f"dissipative:{name}", dd.spectral_abscissa, 0.0, ok=False)
            continue
        states = dyn.evolve(dyn.CovarianceState.vacuum(), dd, times[-1], times=times, method="expm")
        add(f"trajectory_psd:{name}", max(len(s.check(1e-8)) for s in states), 0)
        res = tr.energy_continuity_residual(states, name, p, quad, coeffs=c)
        add(f"energy_continuity:{name}", res, 1e-6)
        grid = np.linspace(-8.0, 8.0, 1025)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pres = tr.probability_continuity_residual(states[99:102], c, grid, p)
        add(f"probability_continuity:{name}", pres, 1e-4)

    # coarse-grained rates approach the global ones
    if not corrupt_gamma and dts[-1] >= 1e3:
        g_ref = built["global"]
        c = tcg_list[-1]
        err = max(
            np.linalg.norm(c.gamma_plus - g_ref.gamma_plus) / max(np.linalg.norm(g_ref.gamma_plus), 1e-300),
            np.linalg.norm(c.gamma_minus - g_ref.gamma_minus) / max(np.linalg.norm(g_ref.gamma_minus), 1e-300),
        )
        add("limit:tcg_to_global", err, 1e-2)

    # Gaussian conditional moment against sampling
    rng = np.random.default_rng(cfg.seed)
    state = dyn.steady_state(dyn.build_drift_diffusion(gen.build_local(p, quad)))
    v, mean = tr.quadrature_covariance(state, p.omega0)
    samples = rng.multivariate_normal(mean, v, size=1_000_000)
    edges = np.linspace(mean[0] - 4 * np.sqrt(v[0, 0]), mean[0] + 4 * np.sqrt(v[0, 0]), 81)
    width = edges[1] - edges[0]
    sums, _ = np.histogram(samples[:, 0], bins=edges, weights=samples[:, 4])
    estimate = sums / (len(samples) * width)
    centres = 0.5 * (edges[1:] + edges[:-1])
    exact = tr.conditional_moment(state, p.omega0, 4, 1, centres)
    add("sampling:conditional_momentum", float(np.max(np.abs(estimate - exact))), 5e-3)
    return results


def cmd_check(cfg: ScenarioConfig, out: Path, corrupt_gamma: bool = False, threads: int = 1):
    results = run_checks(cfg, corrupt_gamma, threads)
    passed = all(r.passed for r in results)
    report = {"passed": passed, "checks": [r.to_dict() for r in results]}
    path = out / "check.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path, passed


# ---------------------------------------------------------------- entry point


def _threads(arg: int | None) -> int:
    if arg is not None:
        value = arg
    else:
        env = os.environ.get("OQS_CHAIN_THREADS")
        if env is None or env == "":
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"OQS_CHAIN_THREADS must be an integer, got {env!r}") from exc
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oqs-chain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("coeffs", "write generator coefficient dumps"),
        ("evolve", "evolve from vacuum and write trajectory/transport CSVs"),
        ("sweep-dt", "steady sink/source terms versus the coarse-graining time"),
        ("check", "run the invariant suite and write a pass/fail JSON"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON scenario file (defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker count (else OQS_CHAIN_THREADS, else 1)")
        if name == "check":
            p.add_argument("--debug-corrupt-gamma", action="store_true",
                           help="flip the sign of the emission rates to exercise the PSD check")
    return parser


def load_config(path: Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return ScenarioConfig.from_json(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        threads = _threads(args.threads)
        out = args.out or (Path(cfg.out_dir) if cfg.out_dir else None)
        if out is None:
            raise ConfigError("no output directory: pass --out or set out_dir")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "coeffs":
            for path in cmd_coeffs(cfg, out, threads):
                print(path)
        elif args.command == "evolve":
            for path in cmd_evolve(cfg, out, threads):
                print(path)
        elif args.command == "sweep-dt":
            path, failures = cmd_sweep_dt(cfg, out, threads)
            print(path)
            if failures:
                print(f"{len(failures)} sweep point(s) failed:", file=sys.stderr)
                for f in failures:
                    print(f"  {f}", file=sys.stderr)
                return EXIT_NUMERIC
        elif args.command == "check":
            path, passed = cmd_check(cfg, out, args.debug_corrupt_gamma, threads)
            print(path)
            if not passed:
                print("one or more checks failed", file=sys.stderr)
                return EXIT_CHECK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, dyn.SteadyStateError, dyn.IntegrationError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
