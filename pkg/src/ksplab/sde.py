"""Diffusion state models, path simulation, and generator diagnostics.

A state process is described by its drift ``a(x)``, a diffusion factor
``sigma(x)`` with ``b = sigma sigma^T``, and an initial law.  The associated
second-order generator is

    A f(x) = a(x) . grad f(x) + 1/2 trace(b(x) hess f(x))

and ``f(X_T) - f(X_0) - integral of A f`` is a martingale for smooth ``f``;
:func:`martingale_residual` measures how well simulated paths respect that.

Array convention: drift and diffusion callbacks take states with the state
dimension on the *last* axis and must broadcast over leading axes, i.e.
``drift: (..., d) -> (..., d)`` and ``diffusion_factor: (..., d) -> (..., d, q)``.
This lets ensembles of particles be advanced in single vectorized calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import RngStream


class SimulationDivergenceError(RuntimeError):
    """A simulated path produced a non-finite value."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class InitialLaw:
    """Initial distribution of the state: point mass, Gaussian, or empirical."""

    def __init__(self, kind, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def point_mass(cls, x0) -> "InitialLaw":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls("point_mass", x0=x0)

    @classmethod
    def gaussian(cls, mean, cov) -> "InitialLaw":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("gaussian initial law requires a positive-definite covariance")
        return cls("gaussian", mean=mean, cov=cov, chol=chol)

    @classmethod
    def empirical(cls, points, weights) -> "InitialLaw":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (points.shape[0],):
            raise ValueError("one weight per atom required")
        if np.any(weights < 0):
            raise ValueError("empirical weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"empirical weights sum to {weights.sum()!r}, expected 1 within 1e-12")
        return cls("empirical", points=points, weights=weights)

    @property
    def dim(self) -> int:
        if self.kind == "point_mass":
            return self.params["x0"].size
        if self.kind == "gaussian":
            return self.params["mean"].size
        return self.params["points"].shape[1]

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        """Draw ``n`` i.i.d. states, shape ``(n, d)``."""
        if self.kind == "point_mass":
            return np.tile(self.params["x0"], (n, 1))
        if self.kind == "gaussian":
            z = gen.standard_normal((n, self.dim))
            return self.params["mean"] + z @ self.params["chol"].T
        idx = gen.choice(self.params["points"].shape[0], size=n, p=self.params["weights"])
        return self.params["points"][idx]


@dataclass(frozen=True)
class DiffusionModel:
    """Drift/diffusion pair plus initial law.

    ``diffusion_factor`` returns the noise loading ``sigma(x)`` of shape
    ``(..., d, q)``; the diffusion matrix ``b = sigma sigma^T`` is therefore
    symmetric PSD by construction (checked on sampled points at simulation
    start, mostly to catch NaNs and shape bugs early).
    """

    dim_state: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion_factor: Callable[[np.ndarray], np.ndarray]
    initial_law: InitialLaw

    def __post_init__(self):
        if self.dim_state < 1:
            raise ValueError("dim_state must be a positive integer")
        if self.initial_law.dim != self.dim_state:
            raise ValueError(
                f"initial law dimension {self.initial_law.dim} != dim_state {self.dim_state}"
            )

    def noise_dim(self, x=None) -> int:
        x = np.zeros(self.dim_state) if x is None else np.asarray(x, dtype=float)
        sig = np.asarray(self.diffusion_factor(x))
        if sig.shape[-2] != self.dim_state:
            raise ValueError(
                f"diffusion_factor returned shape {sig.shape}, expected (..., {self.dim_state}, q)"
            )
        return sig.shape[-1]

    def diffusion_matrix(self, x) -> np.ndarray:
        """b(x) = sigma(x) sigma(x)^T, shape (..., d, d)."""
        sig = np.asarray(self.diffusion_factor(np.asarray(x, dtype=float)))
        return sig @ np.swapaxes(sig, -1, -2)

    def validate_at(self, x) -> None:
        """Runtime invariant check on a sampled point: finite a, sigma; b symmetric PSD."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.drift(x))
        if a.shape[-1] != self.dim_state or not np.all(np.isfinite(a)):
            raise ValueError("drift must return finite values of the state dimension")
        b = self.diffusion_matrix(x)
        if not np.all(np.isfinite(b)):
            raise ValueError("diffusion_factor must return finite values")
        bmat = b.reshape(-1, self.dim_state, self.dim_state)
        for m in bmat:
            if not np.allclose(m, m.T, atol=1e-10):
                raise ValueError("b(x) not symmetric")
            if np.min(np.linalg.eigvalsh(m)) < -1e-10:
                raise ValueError("b(x) not positive semidefinite")


@dataclass(frozen=True)
class SamplePath:
    """Discrete path on a uniform grid: times (n,), states (n, d)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("times must be a 1-D vector with at least two points")
        if t[0] != 0.0:
            raise ValueError("times must start at 0")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValueError("times must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-12 * max(steps[0], 1.0):
            raise ValueError("time grid must be uniform")
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ValueError("states must be (n_times, dim_state)")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def wiener_increments(dt: float, n_steps: int, dim: int, rng: RngStream) -> np.ndarray:
    """Draw i.i.d. N(0, dt) increments, shape (n_steps, dim), deterministic in rng."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1 or dim < 1:
        raise ValueError("n_steps and dim must be at least 1")
    gen = rng.generator()
    return gen.standard_normal((n_steps, dim)) * np.sqrt(dt)


def _n_steps(horizon: float, dt: float) -> int:
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if dt <= 0 or dt > horizon * (1 + 1e-12):
        raise ValueError(f"require 0 < dt <= horizon, got dt={dt}, horizon={horizon}")
    # ceil with a guard against 0.1*10 != 1.0 artifacts
    return int(np.ceil(horizon / dt - 1e-9))


def simulate_path(model: DiffusionModel, horizon: float, dt: float, rng: RngStream) -> SamplePath:
    """Euler-Maruyama simulation of one path.

    X_{k+1} = X_k + a(X_k) dt + sigma(X_k) dV_k, starting from a draw of the
    initial law.  Draw order: initial state first, then the whole increment
    block, so identical streams give identical paths.
    """
    n = _n_steps(horizon, dt)
    gen = rng.generator()
    x0 = model.initial_law.sample(1, gen)[0]
    model.validate_at(x0)
    q = model.noise_dim(x0)
    dv = gen.standard_normal((n, q)) * np.sqrt(dt)

    states = np.empty((n + 1, model.dim_state))
    states[0] = x0
    x = x0
    for k in range(n):
        sig = np.asarray(model.diffusion_factor(x))
        x = x + np.asarray(model.drift(x)) * dt + sig @ dv[k]
        if not np.all(np.isfinite(x)):
            raise SimulationDivergenceError(k + 1)
        states[k + 1] = x
    times = np.arange(n + 1) * dt
    return SamplePath(times=times, states=states)


def simulate_ensemble(
    model: DiffusionModel, n_paths: int, horizon: float, dt: float, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Euler-Maruyama over many paths from one stream.

    Returns ``(times (n+1,), states (n+1, n_paths, d))``.  Relies on the
    broadcasting convention for drift/diffusion callbacks.
    """
    n = _n_steps(horizon, dt)
    gen = rng.generator()
    x = model.initial_law.sample(n_paths, gen)
    model.validate_at(x[: min(n_paths, 8)])
    q = model.noise_dim(x[0])
    sqdt = np.sqrt(dt)

    states = np.empty((n + 1, n_paths, model.dim_state))
    states[0] = x
    for k in range(n):
        dv = gen.standard_normal((n_paths, q)) * sqdt
        sig = np.asarray(model.diffusion_factor(x))
        x = x + np.asarray(model.drift(x)) * dt + np.einsum("...ij,...j->...i", sig, dv)
        if not np.all(np.isfinite(x)):
            raise SimulationDivergenceError(k + 1)
        states[k + 1] = x
    return np.arange(n + 1) * dt, states


def apply_generator(
    model: DiffusionModel,
    f_grad: Callable[[np.ndarray], np.ndarray],
    f_hess: Callable[[np.ndarray], np.ndarray],
    x,
) -> float:
    """Evaluate A f(x) = a(x).grad f(x) + 1/2 trace(b(x) hess f(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim_state,):
        raise ValueError(f"x must have shape ({model.dim_state},), got {x.shape}")
    g = np.asarray(f_grad(x), dtype=float).reshape(-1)
    h = np.atleast_2d(np.asarray(f_hess(x), dtype=float))
    if g.shape != (model.dim_state,):
        raise ValueError(f"gradient shape {g.shape} does not match state dimension")
    if h.shape != (model.dim_state, model.dim_state):
        raise ValueError(f"hessian shape {h.shape} does not match state dimension")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise ValueError("gradient/hessian must be finite at x")
    a = np.asarray(model.drift(x), dtype=float).reshape(-1)
    b = model.diffusion_matrix(x)
    return float(a @ g + 0.5 * np.trace(b @ h))


def generator_values(
    model: DiffusionModel,
    f_grad: Callable[[np.ndarray], np.ndarray],
    f_hess: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
) -> np.ndarray:
    """Vectorized A f over a batch of states ``x`` with shape (..., d)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(model.drift(x))
    g = np.asarray(f_grad(x))
    h = np.asarray(f_hess(x))
    b = model.diffusion_matrix(x)
    return np.einsum("...i,...i->...", a, g) + 0.5 * np.einsum("...ij,...ji->...", b, h)


def martingale_residual(
    model: DiffusionModel,
    f: Callable[[np.ndarray], float],
    f_grad: Callable[[np.ndarray], np.ndarray],
    f_hess: Callable[[np.ndarray], np.ndarray],
    path: SamplePath,
) -> float:
    """M_{f,T} = f(X_T) - f(X_0) - sum_k A f(X_k) dt (left-point quadrature).

    Zero in expectation when the path solves the martingale problem for
    (A; initial law); the Monte Carlo mean over many paths is the test
    statistic used by the suite.
    """
    if path.dim != model.dim_state:
        raise ValueError("path dimension does not match model")
    dt = path.dt
    total = 0.0
    for k in range(path.states.shape[0] - 1):
        total += apply_generator(model, f_grad, f_hess, path.states[k]) * dt
    return float(f(path.states[-1]) - f(path.states[0]) - total)


def ensemble_martingale_residuals(
    model: DiffusionModel,
    f: Callable[[np.ndarray], np.ndarray],
    f_grad: Callable[[np.ndarray], np.ndarray],
    f_hess: Callable[[np.ndarray], np.ndarray],
    states: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Vectorized residuals over an ensemble, states shape (n+1, n_paths, d).

    Callbacks must follow the broadcasting convention: f -> (...,),
    f_grad -> (..., d), f_hess -> (..., d, d).
    """
    av = generator_values(model, f_grad, f_hess, states[:-1])
    return np.asarray(f(states[-1])) - np.asarray(f(states[0])) - av.sum(axis=0) * dt


def fd_grad(f: Callable, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient fallback, step 1e-5 * (1 + |x_i|) per axis."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def fd_hess(f: Callable, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian fallback (symmetric by construction)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    hess = np.empty((d, d))
    steps = rel_step * (1.0 + np.abs(x))
    f0 = f(x)
    for i in range(d):
        hi = steps[i]
        xp, xm = x.copy(), x.copy()
        xp[i] += hi
        xm[i] -= hi
        hess[i, i] = (f(xp) - 2 * f0 + f(xm)) / hi**2
        for j in range(i + 1, d):
            hj = steps[j]
            xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
            xpp[[i, j]] += [hi, hj]
            xpm[i] += hi
            xpm[j] -= hj
            xmp[i] -= hi
            xmp[j] += hj
            xmm[[i, j]] -= [hi, hj]
            hess[i, j] = hess[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4 * hi * hj)
    return hess


def linear_drift(F, f0) -> Callable[[np.ndarray], np.ndarray]:
    """Drift callback x -> F x + f0 following the broadcasting convention."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    f0 = np.atleast_1d(np.asarray(f0, dtype=float))

    def drift(x):
        return np.asarray(x) @ F.T + f0

    return drift


def constant_diffusion(sigma) -> Callable[[np.ndarray], np.ndarray]:
    """Diffusion-factor callback returning a constant matrix, broadcast over x."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))

    def factor(x):
        x = np.asarray(x)
        return np.broadcast_to(sigma, x.shape[:-1] + sigma.shape)

    return factor
