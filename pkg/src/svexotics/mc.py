"""Monte-Carlo simulation of the two-factor model.

The log-price uses an exact lognormal step with f(Y) frozen over the step.
Y is advanced with the exact Ornstein-Uhlenbeck transition (the risk-premium
drift frozen at the start of the step), which is stable for any step size;
a ``StiffnessWarning`` still flags steps too coarse to resolve the
correlation between price and volatility shocks.

Paths are generated in fixed-size chunks, chunk ``c`` drawing from the
stream ``SeedSequence(seed, spawn_key=(c,))``, so results are bit-identical
for a given seed whatever order the chunks are processed in.

Everything is simulated relative to the initial spot (x = ln(S/s0)); the
log dynamics do not depend on s0, so one run prices a whole spot grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .model import (
    ConstantMarketPrice,
    ConstantVol,
    DownAndOutPut,
    FloatingStrikeLookbackPut,
    SvModelParams,
)


class StiffnessWarning(RuntimeWarning):
    """Time step is coarse relative to the volatility mean-reversion time eps."""


@dataclass(frozen=True)
class PathConfig:
    n_paths: int
    n_steps: int
    seed: int = 0
    barrier_bridge: bool = True
    antithetic: bool = True
    monitor_every: int = 1
    chunk_size: int = 10_000
    block_steps: int = 256

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be positive")
        if self.antithetic and (self.n_paths % 2 or self.chunk_size % 2):
            raise ValueError("antithetic sampling needs an even path count and chunk size")
        if self.monitor_every < 1 or self.n_steps % self.monitor_every:
            raise ValueError("monitor_every must divide n_steps")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def per_year(cls, steps_per_year: float, T: float, n_paths: int, **kw) -> "PathConfig":
        return cls(n_paths=n_paths, n_steps=max(1, math.ceil(steps_per_year * T)), **kw)


@dataclass(frozen=True)
class PathBatch:
    """Per-path statistics of one chunk, all in log units relative to s0.

    With antithetic sampling the second half of every array mirrors the first.
    """

    start: int
    log_terminal: np.ndarray
    log_min: np.ndarray
    log_max: np.ndarray
    log_max_bridge: Optional[np.ndarray]
    survival: np.ndarray  # (n, n_levels)
    mean_f2: np.ndarray
    antithetic: bool

    def __len__(self) -> int:
        return self.log_terminal.shape[0]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_effective: int
    knocked_out_fraction: float = 0.0
    n_paths: int = 0
    n_steps: int = 0
    seed: int = 0

    def to_record(self) -> dict:
        return {
            "price": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "knocked_out_fraction": self.knocked_out_fraction,
        }


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _mirror(a: np.ndarray, antithetic: bool) -> np.ndarray:
    return np.concatenate([a, -a]) if antithetic else a


def _ou_block_general(model: SvModelParams, y, xi_s, xi_perp, decay, noise_sd, y_out):
    # Lambda(y) not constant: frozen shift re-evaluated every step
    rho, rho_c = model.rho, math.sqrt(1.0 - model.rho**2)
    shift_scale = math.sqrt(2.0 * model.eps) * model.nu
    for k in range(xi_s.shape[1]):
        y_out[:, k] = y
        target = model.m - shift_scale * np.asarray(model.lam(y), dtype=float)
        y[:] = target + (y - target) * decay + noise_sd * (rho * xi_s[:, k] + rho_c * xi_perp[:, k])


def _simulate(model, T, cfg: PathConfig, y0, levels, want_bridge_max) -> Iterator[PathBatch]:
    dt = T / cfg.n_steps
    const_vol = isinstance(model.f, ConstantVol)
    if not const_vol and dt > model.eps / 4:
        warnings.warn(
            f"time step {dt:.3g} exceeds eps/4 = {model.eps / 4:.3g}; "
            "price/volatility correlation is under-resolved",
            StiffnessWarning,
            stacklevel=3,
        )
    y0 = model.m if y0 is None else float(y0)
    if not math.isfinite(y0):
        raise ValueError("initial volatility state must be finite")
    levels = np.ascontiguousarray(levels, dtype=float)
    decay = math.exp(-dt / model.eps)
    noise_sd = model.nu * math.sqrt(-math.expm1(-2.0 * dt / model.eps))
    lam = model.lam
    lam_shift = None
    if isinstance(lam, ConstantMarketPrice):
        lam_shift = math.sqrt(2.0 * model.eps) * model.nu * lam.value

    n_chunks = -(-cfg.n_paths // cfg.chunk_size)
    for c in range(n_chunks):
        n = min(cfg.chunk_size, cfg.n_paths - c * cfg.chunk_size)
        n_draw = n // 2 if cfg.antithetic else n
        rng = _chunk_rng(cfg.seed, c)
        x = np.zeros(n)
        lo = np.zeros(n)
        hi = np.zeros(n)
        bmax = np.zeros(n)
        f2_sum = np.zeros(n)
        surv = np.ones((n, levels.shape[0]))
        y = np.full(n, y0)
        step = 0
        while step < cfg.n_steps:
            nb = min(cfg.block_steps, cfg.n_steps - step)
            xi_s = _mirror(rng.standard_normal((n_draw, nb)), cfg.antithetic)
            if const_vol:
                vol = np.full((n, nb), model.f.sigma)
            else:
                xi_perp = _mirror(rng.standard_normal((n_draw, nb)), cfg.antithetic)
                y_path = np.empty((n, nb))
                if lam_shift is not None:
                    _kernels.ou_block(y, xi_s, xi_perp, model.rho, decay, model.m,
                                      noise_sd, lam_shift, y_path)
                else:
                    _ou_block_general(model, y, xi_s, xi_perp, decay, noise_sd, y_path)
                vol = np.ascontiguousarray(model.f(y_path), dtype=float)
            if want_bridge_max:
                u = 1.0 - rng.random((n_draw, nb))
                if cfg.antithetic:
                    u = np.concatenate([u, u])
            else:
                u = np.ones((1, 1))
            _kernels.log_block(x, lo, hi, bmax, surv, f2_sum, vol, xi_s, u, dt, model.r,
                               levels, cfg.barrier_bridge, want_bridge_max,
                               cfg.monitor_every, step)
            step += nb
        yield PathBatch(
            start=c * cfg.chunk_size,
            log_terminal=x,
            log_min=lo,
            log_max=hi,
            log_max_bridge=bmax if want_bridge_max else None,
            survival=surv,
            mean_f2=f2_sum / cfg.n_steps,
            antithetic=cfg.antithetic,
        )


def simulate_paths(
    model: SvModelParams,
    s0: float,
    T: float,
    cfg: PathConfig,
    y0: Optional[float] = None,
    barriers: Sequence[float] = (),
    bridge_max: Optional[bool] = None,
) -> Iterator[PathBatch]:
    """Stream per-path statistics chunk by chunk.

    ``barriers`` are absolute down-barrier levels whose survival weights are
    tracked.  ``bridge_max`` (default: ``cfg.barrier_bridge``) also samples
    the exact Brownian-bridge maximum within each step.
    """
    if not s0 > 0 or not T > 0:
        raise ValueError("s0 and T must be positive")
    levels = [math.log(b / s0) for b in barriers]
    want = cfg.barrier_bridge if bridge_max is None else bridge_max
    return _simulate(model, T, cfg, y0, levels, want)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def _estimate(per_batch_values, antithetic, cfg: PathConfig, ko_fraction=0.0) -> McEstimate:
    if antithetic:
        vals = np.concatenate([0.5 * (v[: len(v) // 2] + v[len(v) // 2:]) for v in per_batch_values])
    else:
        vals = np.concatenate(per_batch_values)
    n = vals.shape[0]
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean, stderr, n, ko_fraction, cfg.n_paths, cfg.n_steps, cfg.seed)


def _as_grid(s0):
    arr = np.atleast_1d(np.asarray(s0, dtype=float))
    if np.any(~(arr > 0)):
        raise ValueError("initial spot must be positive")
    return arr, np.ndim(s0) == 0


def price_dop_mc(
    model: SvModelParams,
    spec: DownAndOutPut,
    s0: Union[float, Sequence[float]],
    cfg: PathConfig,
    y0: Optional[float] = None,
) -> Union[McEstimate, list]:
    """Discounted mean of (K - S_T)^+ 1{min S > B}; a grid of s0 shares one run."""
    _, scalar = _as_grid(s0)
    out = price_grid_mc(model, spec, None, s0, cfg, y0)["dop"]
    return out[0] if scalar else out


def price_lookback_mc(
    model: SvModelParams,
    spec: FloatingStrikeLookbackPut,
    s0: Union[float, Sequence[float]],
    cfg: PathConfig,
    y0: Optional[float] = None,
) -> Union[McEstimate, list]:
    """Discounted mean of max S - S_T with the running maximum started at s0."""
    _, scalar = _as_grid(s0)
    out = price_grid_mc(model, None, spec, s0, cfg, y0)["lookback"]
    return out[0] if scalar else out


def lookback_payoff(batch: PathBatch, r: float, T: float) -> np.ndarray:
    """Discounted payoff per unit of initial spot."""
    top = batch.log_max_bridge if batch.log_max_bridge is not None else batch.log_max
    return math.exp(-r * T) * (np.exp(top) - np.exp(batch.log_terminal))


def price_grid_mc(
    model: SvModelParams,
    dop: Optional[DownAndOutPut],
    lookback: Optional[FloatingStrikeLookbackPut],
    s_grid: Sequence[float],
    cfg: PathConfig,
    y0: Optional[float] = None,
) -> dict:
    """Price both contracts on a spot grid from a single simulation.

    Both contracts must share the expiry.  Returns ``{"dop": [...], "lookback": [...]}``.
    """
    grid, _ = _as_grid(s_grid)
    specs = [c for c in (dop, lookback) if c is not None]
    if not specs:
        raise ValueError("no contract to price")
    T = specs[0].T
    if any(c.T != T for c in specs):
        raise ValueError("contracts priced together must share an expiry")
    alive = grid > dop.B if dop is not None else np.zeros(grid.shape, bool)
    levels = np.log(dop.B / grid[alive]) if dop is not None else np.empty(0)
    want_max = lookback is not None and cfg.barrier_bridge
    batches = list(_simulate(model, T, cfg, y0, levels, want_max))
    disc = math.exp(-model.r * T)
    result = {}
    if dop is not None:
        est = [McEstimate(0.0, 0.0, 0, 1.0, cfg.n_paths, cfg.n_steps, cfg.seed) for _ in grid]
        for j, i in enumerate(np.flatnonzero(alive)):
            vals = [disc * np.maximum(dop.K - grid[i] * np.exp(b.log_terminal), 0.0) * b.survival[:, j]
                    for b in batches]
            ko = float(np.mean(np.concatenate([1.0 - b.survival[:, j] for b in batches])))
            est[i] = _estimate(vals, cfg.antithetic, cfg, ko)
        result["dop"] = est
    if lookback is not None:
        unit = _estimate([lookback_payoff(b, model.r, T) for b in batches], cfg.antithetic, cfg)
        result["lookback"] = [
            McEstimate(unit.mean * float(s), unit.stderr * float(s), unit.n_effective, 0.0,
                       cfg.n_paths, cfg.n_steps, cfg.seed)
            for s in grid
        ]
    return result


def price_terminal_mc(model: SvModelParams, s0: float, T: float, payoff, cfg: PathConfig,
                      y0: Optional[float] = None, discount: bool = True) -> McEstimate:
    """Discounted mean of ``payoff(S_T)`` (European claims and martingale checks)."""
    batches = list(simulate_paths(model, s0, T, cfg, y0, bridge_max=False))
    disc = math.exp(-model.r * T) if discount else 1.0
    vals = [disc * np.asarray(payoff(s0 * np.exp(b.log_terminal)), dtype=float) for b in batches]
    return _estimate(vals, cfg.antithetic, cfg)


def export_records(estimates: Sequence[McEstimate]) -> list:
    return [e.to_record() for e in estimates]
