from math import sqrt

import numpy as np
import pandas as pd
from rich.console import Console

from itsfuzz.tsmodel import basis
from itsfuzz.tsmodel import closed_loop
from itsfuzz.types import SimConfig
from itsfuzz.types import SimEnsemble
from itsfuzz.types import Trajectory
from itsfuzz.types import TSModel


def check_config(config: SimConfig):
    if config.horizon <= 0:
        raise ValueError("Simulation horizon must be positive.")
    if config.steps < 1 or config.coarsening < 1 or config.steps % config.coarsening:
        raise ValueError("Base steps must be a positive multiple of the coarsening factor.")
    if config.paths < 1:
        raise ValueError("At least one path is needed.")


def path_generator(seed: int, path: int) -> np.random.Generator:
    """A counter-based Philox stream, addressed by (seed, path)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path,))))


def wiener_increments(seed: int, steps: int, dt: float, path: int) -> np.ndarray:
    """`steps` i.i.d. N(0, dt) Brownian increments of path `path`."""
    if dt <= 0:
        raise ValueError("Increment variance must be positive.")
    return path_generator(seed, path).normal(0.0, sqrt(dt), size=steps)


def coarse_increments(increments: np.ndarray, coarsening: int) -> np.ndarray:
    """Sums consecutive groups of `coarsening` base increments (last axis)."""
    *head, steps = increments.shape
    return increments.reshape(*head, steps // coarsening, coarsening).sum(axis=-1)


def _drift(model: TSModel, x: np.ndarray, vertices: np.ndarray | None) -> np.ndarray:
    h = basis(model, x)
    if vertices is None:
        return np.einsum("bi,iac,bc->ba", h, model.A, x)
    return np.einsum("bi,bj,ijac,bc->ba", h, h, vertices, x)


def _diffusion(model: TSModel, x: np.ndarray) -> np.ndarray:
    return np.einsum("bi,iac,bc->ba", basis(model, x), model.C, x)


def integrate(
    model: TSModel,
    x0: np.ndarray,
    dw: np.ndarray,
    dt: float,
    gains: np.ndarray | None = None,
    blowup: float = 1e12,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama x_{k+1} = x_k + f(x_k) dt + g(x_k) dW_k for a batch.

    :param model: the fuzzy model.
    :param x0: initial states, shape (B, n).
    :param dw: coarse Wiener increments, shape (B, K).
    :param dt: the integration step.
    :param gains: feedback gains (s, p, n), None for the open loop.
    :param blowup: trajectories leaving the ball of this radius are stopped.
    :return: states (B, K + 1, n) NaN-filled after a blowup, and blowup flags (B,).
    """
    vertices = None if gains is None else closed_loop(model, gains).vertices
    nbatch, nsteps = dw.shape
    xs = np.full((nbatch, nsteps + 1, model.n), np.nan)
    xs[:, 0] = x0
    active = np.ones(nbatch, dtype=bool)
    for k in range(nsteps):
        x = xs[active, k]
        step = x + _drift(model, x, vertices) * dt + _diffusion(model, x) * dw[active, k, None]
        xs[active, k + 1] = step
        escaped = ~np.all(np.isfinite(step), axis=1) | (np.linalg.norm(step, axis=1) > blowup)
        if np.any(escaped):
            rows = np.flatnonzero(active)[escaped]
            xs[rows, k + 1] = np.nan
            active[rows] = False
        if not np.any(active):
            break
    return xs, ~active


def time_grid(config: SimConfig) -> np.ndarray:
    nsteps = config.steps // config.coarsening
    return np.linspace(0.0, config.horizon, nsteps + 1)


def euler_maruyama(
    model: TSModel, config: SimConfig, path: int, state: int = 0
) -> Trajectory:
    """The trajectory of path `path` from initial state number `state`."""
    check_config(config)
    dt_base = config.horizon / config.steps
    dw = coarse_increments(
        wiener_increments(config.seed, config.steps, dt_base, path), config.coarsening
    )
    x0 = np.asarray(config.initial_states, dtype=float)[state]
    xs, blown = integrate(
        model, x0[None], dw[None], config.coarsening * dt_base, config.gains, config.blowup
    )
    return Trajectory(time_grid(config), xs[0], bool(blown[0]))


def path_means(paths: np.ndarray) -> np.ndarray:
    """Cross-path means over the paths still running at each time. NaN once
    every path from an initial state has blown up."""
    running = np.isfinite(paths)
    counts = running.sum(axis=1)
    sums = np.where(running, paths, 0.0).sum(axis=1)
    return np.divide(sums, counts, out=np.full(sums.shape, np.nan), where=counts > 0)


def monte_carlo(
    model: TSModel, config: SimConfig, console: Console | None = None
) -> SimEnsemble:
    """Runs `config.paths` paths from every initial state. Paths with the same
    index share their Wiener increments across initial states."""
    check_config(config)
    log = console.log if console is not None else (lambda _: None)
    x0s = np.atleast_2d(np.asarray(config.initial_states, dtype=float))
    nstates, npaths = x0s.shape[0], config.paths
    dt_base = config.horizon / config.steps
    base = np.array(
        [wiener_increments(config.seed, config.steps, dt_base, m) for m in range(npaths)]
    )
    dw = coarse_increments(base, config.coarsening)
    xs, blown = integrate(
        model,
        np.repeat(x0s, npaths, axis=0),
        np.tile(dw, (nstates, 1)),
        config.coarsening * dt_base,
        config.gains,
        config.blowup,
    )
    paths = xs.reshape(nstates, npaths, *xs.shape[1:])
    blowups = blown.reshape(nstates, npaths)
    if np.any(blowups):
        log(f"[yellow]{int(blowups.sum())} path(s) blew up.[/]")
    return SimEnsemble(
        t=time_grid(config),
        paths=paths,
        means=path_means(paths),
        blowups=blowups,
        config=config,
    )


def final_norms(ensemble: SimEnsemble) -> np.ndarray:
    """|x(T)| per (initial state, path)."""
    return np.linalg.norm(ensemble.paths[:, :, -1], axis=-1)


def surviving_paths(ensemble: SimEnsemble) -> np.ndarray:
    """Number of paths that never blew up, per initial state."""
    return (~ensemble.blowups).sum(axis=1)


def survival_fraction(ensemble: SimEnsemble) -> float:
    """Fraction of paths that never blew up."""
    return float(1.0 - ensemble.blowups.mean())


def ensemble_table(ensemble: SimEnsemble) -> pd.DataFrame:
    """Columns `state,path,t,x_1..x_n`. States and paths are 1-based, mean
    rows carry the path label `mean`."""
    nstates, npaths, ntimes, n = ensemble.paths.shape
    columns = [f"x_{j + 1}" for j in range(n)]
    frames = []
    for s in range(nstates):
        for m in range(npaths):
            frame = pd.DataFrame(ensemble.paths[s, m], columns=columns)
            frame.insert(0, "t", ensemble.t)
            frame.insert(0, "path", str(m + 1))
            frame.insert(0, "state", s + 1)
            frames.append(frame)
        frame = pd.DataFrame(ensemble.means[s], columns=columns)
        frame.insert(0, "t", ensemble.t)
        frame.insert(0, "path", "mean")
        frame.insert(0, "state", s + 1)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
