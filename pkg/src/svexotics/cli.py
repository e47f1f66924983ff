"""Command-line front end.

    svexotics price        closed-form P0, P1 and P0 + sqrt(eps) P1 on a spot grid
    svexotics sensitivity  long-format sqrt(eps) P1 / approx table over an eps list
    svexotics mc-compare   closed form against Monte Carlo (structural c1, c2)
    svexotics calibrate    affine smile fit -> (a, b, c1, c2)
    svexotics verify       quadrature, PDE-residual, CN and boundary checks
    svexotics config       print the effective configuration
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import calibration, verification
from .closed_form import (
    PricingInputs,
    approx_price,
    p0_dop,
    p0_dop_scaled_derivs,
    p0_lookback,
    p0_lookback_scaled_derivs,
    p1_dop,
    p1_lookback,
)
from .mc import PathConfig, StiffnessWarning, price_grid_mc
from .model import (
    CorrectionCoeffs,
    DownAndOutPut,
    EffectiveParams,
    FloatingStrikeLookbackPut,
    SvModelParams,
    effective_params,
    structural_c1_c2,
)

KINDS = ("dop", "lookback")


class ConfigError(ValueError):
    pass


def parse_grid(text: str) -> tuple:
    """``start:stop:step`` with stop included when it lies on the grid."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"s_grid: expected start:stop:step, got {text!r}") from None
    if not step > 0 or stop < start:
        raise ConfigError(f"s_grid: need step > 0 and stop >= start, got {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(start + i * step) for i in range(n))


def parse_eps(text) -> tuple:
    items = text.split(",") if isinstance(text, str) else list(text)
    try:
        vals = tuple(float(e) for e in items)
    except ValueError:
        raise ConfigError(f"eps: expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not e >= 0 for e in vals):
        raise ConfigError("eps: list must be non-empty and non-negative")
    return vals


@dataclass(frozen=True)
class McSettings:
    n_paths: int = 200_000
    min_steps: int = 250
    steps_per_eps: float = 4.0
    barrier_bridge: bool = True
    antithetic: bool = True
    chunk_size: int = 10_000

    def n_steps(self, eps: float, T: float) -> int:
        return max(self.min_steps, math.ceil(self.steps_per_eps * T / eps))


@dataclass(frozen=True)
class RunConfig:
    model: SvModelParams
    contract: DownAndOutPut
    coefficients: dict
    s_grid_text: str = "1600:2700:100"
    eps_list: tuple = (0.01, 0.001, 0.0001)
    kinds: tuple = KINDS
    t: float = 0.0
    seed: int = 0
    mc: McSettings = field(default_factory=McSettings)

    @property
    def s_grid(self) -> tuple:
        return parse_grid(self.s_grid_text)

    @property
    def lookback(self) -> FloatingStrikeLookbackPut:
        return FloatingStrikeLookbackPut(self.contract.T)

    def spec(self, kind):
        return self.contract if kind == "dop" else self.lookback

    def pricing_constants(self) -> tuple:
        """(EffectiveParams, CorrectionCoeffs) for formula-level commands."""
        c = self.coefficients
        if c.get("structural"):
            return effective_params(self.model), structural_c1_c2(self.model)
        return (EffectiveParams.from_variance(float(c["f2bar"]), self.model.r),
                CorrectionCoeffs(float(c["c1"]), float(c["c2"])))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        for section in ("model", "contract", "coefficients"):
            if section not in d:
                raise ConfigError(f"config missing section {section!r}")
        try:
            model = SvModelParams.from_config(d["model"])
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None
        c = d["contract"]
        missing = [k for k in ("K", "B", "T") if k not in c]
        if missing:
            raise ConfigError(f"contract missing fields: {', '.join(missing)}")
        try:
            contract = DownAndOutPut(float(c["K"]), float(c["B"]), float(c["T"]))
        except ValueError as exc:
            raise ConfigError(f"contract: {exc}") from None
        coeffs = dict(d["coefficients"])
        if not coeffs.get("structural"):
            missing = [k for k in ("c1", "c2", "f2bar") if k not in coeffs]
            if missing:
                raise ConfigError(f"coefficients missing fields: {', '.join(missing)}")
            if not float(coeffs["f2bar"]) > 0:
                raise ConfigError("coefficients.f2bar must be positive")
        run = d.get("run", {})
        kinds = tuple(run.get("kinds", KINDS))
        bad = [k for k in kinds if k not in KINDS]
        if bad or not kinds:
            raise ConfigError(f"run.kinds: expected a subset of {list(KINDS)}, got {list(kinds)}")
        mc_fields = McSettings.__dataclass_fields__
        unknown = [k for k in run.get("mc", {}) if k not in mc_fields]
        if unknown:
            raise ConfigError(f"run.mc: unknown fields {unknown}")
        mc = McSettings(**run.get("mc", {}))
        grid_text = str(run.get("s_grid", "1600:2700:100"))
        parse_grid(grid_text)
        t = float(run.get("t", 0.0))
        if not 0 <= t < contract.T:
            raise ConfigError(f"run.t must lie in [0, T), got {t!r}")
        seed = int(run.get("seed", 0))
        if seed < 0 or seed >= 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        return cls(model, contract, coeffs, grid_text,
                   parse_eps(run.get("eps", [0.01, 0.001, 0.0001])), kinds, t, seed, mc)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_config(),
            "contract": {"K": self.contract.K, "B": self.contract.B, "T": self.contract.T},
            "coefficients": dict(self.coefficients),
            "run": {
                "t": self.t,
                "s_grid": self.s_grid_text,
                "eps": list(self.eps_list),
                "kinds": list(self.kinds),
                "seed": self.seed,
                "mc": dict(vars(self.mc)),
            },
        }

    def with_overrides(self, eps=None, s_grid=None, seed=None, n_paths=None) -> "RunConfig":
        d = self.to_dict()
        if eps is not None:
            d["run"]["eps"] = list(parse_eps(eps))
        if s_grid is not None:
            d["run"]["s_grid"] = s_grid
        if seed is not None:
            d["run"]["seed"] = seed
        if n_paths is not None:
            d["run"]["mc"]["n_paths"] = n_paths
        return RunConfig.from_dict(d)


def default_config_dict() -> dict:
    text = resources.files("svexotics").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig.from_dict(default_config_dict())
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _inputs(cfg: RunConfig, kind, s, eff, coeffs, eps):
    return PricingInputs(cfg.t, s, cfg.spec(kind), eff, coeffs, cfg.model.r, eps)


def cmd_price(cfg: RunConfig) -> list:
    eff, coeffs = cfg.pricing_constants()
    grid = np.asarray(cfg.s_grid)
    rows = []
    for kind in cfg.kinds:
        for eps in cfg.eps_list:
            br = approx_price(_inputs(cfg, kind, grid, eff, coeffs, eps))
            ko = np.broadcast_to(br.knocked_out, grid.shape)
            for i, s in enumerate(grid):
                rows.append({
                    "kind": kind, "s": float(s), "eps": eps,
                    "p0": float(br.p0[i]), "p1": float(br.p1[i]),
                    "sqrt_eps_p1": float(br.sqrt_eps_p1[i]), "approx": float(br.approx[i]),
                    "knocked_out": bool(ko[i]),
                })
    return rows


def cmd_sensitivity(cfg: RunConfig) -> list:
    keep = ("kind", "eps", "s", "sqrt_eps_p1", "approx")
    rows = [{k: r[k] for k in keep} for r in cmd_price(cfg)]
    rows.sort(key=lambda r: (KINDS.index(r["kind"]), -r["eps"], r["s"]))
    return rows


def _z(approx, mean, stderr):
    if stderr > 0:
        return float((approx - mean) / stderr)
    return 0.0 if approx == mean else math.copysign(math.inf, approx - mean)


def cmd_mc_compare(cfg: RunConfig) -> list:
    """MC against the closed form with coefficients derived from the model itself.

    ``approx_bc`` replaces the closed-form P1 with the first correction solved
    under the contract's own boundary condition (diagnostic column).
    """
    eff = effective_params(cfg.model)
    coeffs = structural_c1_c2(cfg.model)
    grid = np.asarray(cfg.s_grid)
    dop = cfg.contract if "dop" in cfg.kinds else None
    lb = cfg.lookback if "lookback" in cfg.kinds else None
    if cfg.t != 0.0:
        raise ConfigError("mc-compare values contracts at t = 0; set run.t to 0")
    p1_bc = {kind: verification.boundary_consistent_p1(cfg.spec(kind), eff, cfg.model.r,
                                                       coeffs, grid)
             for kind in cfg.kinds}
    rows = []
    for eps in cfg.eps_list:
        if not eps > 0:
            raise ConfigError("mc-compare needs eps > 0")
        model = cfg.model.with_eps(eps)
        T = cfg.contract.T
        pc = PathConfig(cfg.mc.n_paths, cfg.mc.n_steps(eps, T), seed=cfg.seed,
                        barrier_bridge=cfg.mc.barrier_bridge, antithetic=cfg.mc.antithetic,
                        chunk_size=cfg.mc.chunk_size)
        mc = price_grid_mc(model, dop, lb, grid, pc)
        for kind in cfg.kinds:
            br = approx_price(_inputs(cfg, kind, grid, eff, coeffs, eps))
            approx_bc = np.asarray(br.p0) + math.sqrt(eps) * p1_bc[kind]
            for i, s in enumerate(grid):
                est = mc[kind][i]
                a = float(br.approx[i])
                rows.append({
                    "kind": kind, "s": float(s), "eps": eps, "approx": a,
                    "mc_mean": float(est.mean), "mc_stderr": float(est.stderr),
                    "z_score": _z(a, est.mean, est.stderr),
                    "approx_bc": float(approx_bc[i]),
                    "z_score_bc": _z(float(approx_bc[i]), est.mean, est.stderr),
                    "n_paths": pc.n_paths, "n_steps": pc.n_steps, "seed": pc.seed,
                })
    return rows


def cmd_calibrate(cfg: RunConfig, smile_path: str) -> dict:
    points = calibration.read_smile_csv(smile_path)
    fit = calibration.fit_smile(points)
    eff, _ = cfg.pricing_constants()
    coeffs = calibration.c1_c2_from_ab(fit.a, fit.b, eff, cfg.model.r)
    return fit.to_record(coeffs)


def _rel_report(name, pairs, grid, tolerance):
    rel = [abs(a / b - 1.0) for a, b in pairs]
    return verification.ResidualReport.make(name, max(rel), grid, tolerance)


def run_verification(cfg: RunConfig) -> list:
    eff, coeffs = cfg.pricing_constants()
    r, dop, lb = cfg.model.r, cfg.contract, cfg.lookback
    T, K, B = dop.T, dop.K, dop.B
    taus = np.linspace(0.2, 1.0, 5) * T
    s_pts = np.linspace(B + 0.1 * (K - B), K - 0.05 * (K - B), 5)
    u_pts = np.linspace(0.6, 1.0, 5)
    reports = []

    pairs = []
    for s in s_pts:
        for tau in taus:
            inp = PricingInputs(T - tau, float(s), dop, eff, coeffs, r)
            pairs.append((verification.mellin_p0_dop_quadrature(inp), p0_dop(inp)))
    reports.append(_rel_report("mellin_p0_dop", pairs, "5 x 5 (s, tau)", 1e-6))
    pairs = []
    for u in u_pts:
        for tau in taus:
            inp = PricingInputs(T - tau, float(u), lb, eff, coeffs, r, z=1.0)
            pairs.append((verification.mellin_q0_lookback_quadrature(T - tau, float(u), eff, r, T),
                          p0_lookback(inp)))
    reports.append(_rel_report("mellin_q0_lookback", pairs, "5 x 5 (u, tau)", 1e-6))

    t_pts = T - np.linspace(0.1, 0.95, 4) * T
    dgrid = verification.FdGrid(t_pts, s_pts, T, lower=B)
    ugrid = verification.FdGrid(t_pts, np.linspace(0.6, 0.95, 5), T, upper=1.0)
    p = lambda fn, spec, **kw: (lambda t, s: fn(PricingInputs(t, s, spec, eff, coeffs, r, **kw)))
    for name, report in (
        ("pde_p0_dop", verification.pde_residual_p0(p(p0_dop, dop), eff, r, dgrid, scale=K)),
        ("pde_p1_dop", verification.pde_residual_p1(
            p(p1_dop, dop), p(p0_dop_scaled_derivs, dop), eff, r, coeffs, dgrid, scale=K)),
        ("pde_p0_lookback", verification.pde_residual_p0(
            p(p0_lookback, lb, z=1.0), eff, r, ugrid)),
        ("pde_p1_lookback", verification.pde_residual_p1(
            p(p1_lookback, lb, z=1.0), p(p0_lookback_scaled_derivs, lb, z=1.0),
            eff, r, coeffs, ugrid)),
    ):
        report.name = name
        reports.append(report)

    # Crank-Nicolson against the closed form, closed-form trace on the boundary
    x_dop = np.log(s_pts)
    cf = p1_dop(PricingInputs(0.0, s_pts, dop, eff, coeffs, r))
    scale = float(np.max(np.abs(cf)))
    for mode, tol in (("trace", 1e-3), ("zero", None)):
        sol = verification.solve_p1_cn(dop, eff, r, coeffs, mode)
        err = float(np.max(np.abs(sol.at(x_dop) - cf))) / scale
        reports.append(verification.ResidualReport.make(
            f"cn_p1_dop_{mode}", err, "s interior, t = 0", tol, diagnostic=tol is None))
    x_u = np.log(u_pts)
    cf = p1_lookback(PricingInputs(0.0, u_pts, lb, eff, coeffs, r, z=1.0))
    scale = float(np.max(np.abs(cf)))
    for mode, tol in (("extended", 1e-3), ("trace", 1e-3), ("neumann", None)):
        sol = verification.solve_p1_cn(lb, eff, r, coeffs, mode)
        err = float(np.max(np.abs(sol.at(x_u) - cf))) / scale
        reports.append(verification.ResidualReport.make(
            f"cn_p1_lookback_{mode}", err, "u in [0.6, 1], t = 0", tol, diagnostic=tol is None))

    eps = cfg.eps_list[0]
    reports += verification.boundary_report(dop, eff, r, coeffs, eps)
    reports += verification.boundary_report(lb, eff, r, coeffs, eps)
    return reports


def cmd_verify(cfg: RunConfig, tolerance: Optional[float] = None) -> tuple:
    reports = run_verification(cfg)
    if tolerance is not None:
        for rep in reports:
            if not rep.diagnostic:
                rep.tolerance = tolerance
                rep.passed = rep.max_abs_residual <= tolerance
    failed = [rep.name for rep in reports if not rep.passed]
    return reports, failed


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _csv_text(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in row.items()})
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: bundled)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--eps", help="comma-separated eps list")
    common.add_argument("--s-grid", dest="s_grid", help="start:stop:step")

    parser = argparse.ArgumentParser(prog="svexotics", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="closed-form prices")
    sub.add_parser("sensitivity", parents=[common], help="sqrt(eps) P1 sweep")
    mc = sub.add_parser("mc-compare", parents=[common], help="closed form vs Monte Carlo")
    mc.add_argument("--n-paths", dest="n_paths", type=int)
    cal = sub.add_parser("calibrate", parents=[common], help="fit an affine smile")
    cal.add_argument("smile", help="CSV with header strike,expiry,spot,t,implied_vol")
    ver = sub.add_parser("verify", parents=[common], help="numerical verification suite")
    ver.add_argument("--tolerance", type=float, help="override every asserted tolerance")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            eps=args.eps, s_grid=args.s_grid, seed=args.seed,
            n_paths=getattr(args, "n_paths", None))
        cmd = args.command
        if cmd == "config":
            _emit(_json_text(cfg.to_dict()), args.out)
            return 0
        if cmd == "calibrate":
            _emit(_json_text(cmd_calibrate(cfg, args.smile)), args.out)
            return 0
        if cmd == "verify":
            reports, failed = cmd_verify(cfg, args.tolerance)
            _emit(_json_text({"passed": not failed, "failed": failed,
                              "reports": [r.to_dict() for r in reports]}), args.out)
            if failed:
                print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
                return 1
            return 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StiffnessWarning)
            rows = {"price": cmd_price, "sensitivity": cmd_sensitivity,
                    "mc-compare": cmd_mc_compare}[cmd](cfg)
        fmt = args.format or "csv"
        _emit(_csv_text(rows) if fmt == "csv" else _json_text(rows), args.out)
        return 0
    except (ConfigError, calibration.SmileFormatError, calibration.RankDeficientError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
