"""Solvers: proximal gradient (ISTA), its accelerated variant (FISTA), plain
gradient descent, and the stochastic primal-dual hybrid gradient (SPDHG).

ISTA/FISTA/GD take any gradient source (deterministic or stochastic), so the
same loop runs classical proximal gradient and all its stochastic variants.
Progress is measured in data passes as reported by the source; callbacks
fire whenever the pass counter crosses a multiple of the callback grid, which
makes methods with different per-iteration costs comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Image
from .functions import kl_conjugate_prox_values
from .stochastic import Sampler

__all__ = [
    "StepSizeRule",
    "step_size",
    "OptimisationProblem",
    "default_gamma",
    "ista_step",
    "RunResult",
    "run_gd",
    "run_ista",
    "run_fista",
    "run_spdhg",
]


@dataclass(frozen=True)
class StepSizeRule:
    """Constant or polynomially decreasing step size.

    ``constant``: gamma_k = gamma0.  ``decreasing``: gamma_k =
    gamma0 / (1 + k)**exponent.
    """

    gamma0: float
    kind: str = "constant"
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "decreasing"):
            raise ValueError(f"unknown step rule {self.kind!r}")
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be > 0")
        if self.exponent < 0:
            raise ValueError("exponent must be >= 0")


def step_size(rule, k):
    if rule.kind == "constant":
        return rule.gamma0
    return rule.gamma0 / (1.0 + k) ** rule.exponent


@dataclass
class OptimisationProblem:
    """The composite objective: subset KL terms, TV regulariser, partition."""

    smooth: object
    regulariser: object
    partition: object

    def __post_init__(self):
        if self.partition is not None and self.smooth.n != self.partition.n_subsets:
            raise ValueError("number of smooth terms must equal partition size")

    def objective(self, x):
        return self.smooth.value(x) + self.regulariser.value(x)


def default_gamma(problem, deterministic=False):
    """Principled default step from the Lipschitz bounds.

    Deterministic runs get ``1/L_f`` with ``L_f = sum_i L_i``; stochastic
    runs (with the ``1/p_i`` scale convention) get ``1/(n * max_i L_i)``.
    """
    smooth = problem.smooth if isinstance(problem, OptimisationProblem) else problem
    try:
        bounds = smooth.lipschitz_list()
    except AttributeError as exc:
        raise ValueError("Lipschitz bounds unavailable") from exc
    if deterministic:
        total = sum(bounds)
        if not total > 0:
            raise ValueError("Lipschitz bounds are all zero")
        return 1.0 / total
    top = max(bounds)
    if not top > 0:
        raise ValueError("Lipschitz bounds are all zero")
    return 1.0 / (smooth.n * top)


def ista_step(x, gamma, grad, reg):
    """One forward-backward step: ``prox_{gamma g}(x - gamma * grad)``."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return reg.prox(Image(x.geometry, x.values - gamma * grad.values), gamma)


@dataclass
class RunResult:
    x: Image
    iterations: int
    passes: float
    history: list = field(default_factory=list)


class _PassGrid:
    """Fires the callback once per crossed multiple of the pass grid."""

    def __init__(self, callback, grid, offset):
        self.callback = callback
        self.grid = grid
        self.next_j = math.floor(offset / grid + 1e-12) + 1

    def poll(self, passes, x, k):
        if self.callback is None:
            return
        while passes >= self.next_j * self.grid - 1e-12:
            self.callback(self.next_j * self.grid, x, k)
            self.next_j += 1


def run_gd(source, x0, rule, max_passes, callback=None, grid=1.0, pass_offset=0.0):
    """Unregularised gradient loop ``x <- x - gamma_k * estimate(x)``."""
    x = x0.copy()
    k = 0
    source.ensure_initialized(x)
    poller = _PassGrid(callback, grid, pass_offset)
    poller.poll(pass_offset + source.passes, x, k)
    while pass_offset + source.passes < max_passes - 1e-12:
        g = source.estimate(x)
        x = Image(x.geometry, x.values - step_size(rule, k) * g.values)
        k += 1
        poller.poll(pass_offset + source.passes, x, k)
    return RunResult(x, k, pass_offset + source.passes)


def run_ista(source, reg, x0, rule, max_passes, callback=None, grid=1.0, pass_offset=0.0):
    """Proximal gradient loop; with a stochastic source this is Prox-SGD etc."""
    x = x0.copy()
    k = 0
    reg.reset_warm_start()
    source.ensure_initialized(x)
    poller = _PassGrid(callback, grid, pass_offset)
    poller.poll(pass_offset + source.passes, x, k)
    while pass_offset + source.passes < max_passes - 1e-12:
        g = source.estimate(x)
        x = ista_step(x, step_size(rule, k), g, reg)
        k += 1
        poller.poll(pass_offset + source.passes, x, k)
    return RunResult(x, k, pass_offset + source.passes)


def run_fista(source, reg, x0, rule, max_passes, callback=None, grid=1.0, pass_offset=0.0):
    """Nesterov-accelerated proximal gradient; estimates at the extrapolated point.

    t-sequence: t_0 = 1, t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2; the first
    iteration coincides with one ISTA step.
    """
    x = x0.copy()
    z = x0.copy()
    t = 1.0
    k = 0
    reg.reset_warm_start()
    source.ensure_initialized(x)
    poller = _PassGrid(callback, grid, pass_offset)
    poller.poll(pass_offset + source.passes, x, k)
    while pass_offset + source.passes < max_passes - 1e-12:
        g = source.estimate(z)
        x_new = ista_step(z, step_size(rule, k), g, reg)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = Image(x.geometry, x_new.values + ((t - 1.0) / t_new) * (x_new.values - x.values))
        x, t = x_new, t_new
        k += 1
        poller.poll(pass_offset + source.passes, x, k)
    return RunResult(x, k, pass_offset + source.passes)


def spdhg_default_steps(problem, rho=0.99, norm_iters=100, norm_seed=0):
    """Step sizes ``sigma_i = rho/||A_i||``, ``tau = rho/(n max_i ||A_i||)``."""
    terms = problem.smooth.terms
    norms = [t.projector.norm(iters=norm_iters, seed=norm_seed) for t in terms]
    top = max(norms)
    if not top > 0:
        raise ValueError("all subset operators are zero")
    sigma = [rho / nm if nm > 0 else 0.0 for nm in norms]
    tau = rho / (len(terms) * top)
    return sigma, tau, norms


def run_spdhg(
    problem,
    x0,
    max_passes,
    sampler=None,
    seed=0,
    sigma=None,
    tau=None,
    rho=0.99,
    norm_iters=100,
    callback=None,
    grid=1.0,
    pass_offset=0.0,
    debug_check=False,
):
    """Stochastic primal-dual hybrid gradient for KL terms + proximable g.

    Per iteration: draw subset i, update its dual block through the KL
    conjugate prox, refresh the running adjoint aggregate
    ``w = sum_j A_j^T y_j`` incrementally, then take one primal prox step on
    the extrapolated aggregate.  One iteration costs ``1/n`` of a data pass.
    Requires ``tau * sigma_i * ||A_i||^2 <= rho^2 < 1``.

    With ``debug_check`` the running aggregate is re-derived from scratch
    every 10 passes and must agree to 1e-10 relative.
    """
    terms = problem.smooth.terms
    reg = problem.regulariser
    n = len(terms)
    if sampler is None:
        sampler = Sampler.uniform(n, seed)
    if sampler.n != n:
        raise ValueError("sampler size does not match number of subsets")

    norms = [t.projector.norm(iters=norm_iters) for t in terms]
    top = max(norms)
    if (sigma is None or tau is None) and not top > 0:
        raise ValueError("all subset operators are zero")
    if sigma is None:
        sigma = [rho / nm if nm > 0 else 0.0 for nm in norms]
    if tau is None:
        tau = rho / (n * top)
    if np.isscalar(sigma):
        sigma = [float(sigma)] * n
    else:
        sigma = [float(s) for s in sigma]
    if len(sigma) != n:
        raise ValueError("need one sigma per subset")
    for i in range(n):
        if tau * sigma[i] * norms[i] ** 2 > rho**2 + 1e-9:
            raise ValueError(
                "SPDHG step sizes violate tau * sigma_i * ||A_i||^2 <= rho^2"
            )

    geom = x0.geometry
    x = x0.copy()
    duals = [np.zeros(t.projector.num_rays) for t in terms]
    w = np.zeros(geom.num_pixels)
    p = sampler.probabilities
    subset_evals = 0
    k = 0
    next_check = 10.0
    reg.reset_warm_start()
    poller = _PassGrid(callback, grid, pass_offset)
    poller.poll(pass_offset, x, k)

    while pass_offset + subset_evals / n < max_passes - 1e-12:
        i = sampler.next_index()
        proj = terms[i].projector
        z = duals[i] + sigma[i] * proj.apply(x.values.ravel())
        y_new = kl_conjugate_prox_values(z, sigma[i], terms[i]._y, terms[i].eta)
        delta = proj.apply_adjoint(y_new - duals[i])
        w += delta
        duals[i] = y_new
        arg = x.values.ravel() - tau * (w + (1.0 / p[i]) * delta)
        x = Image(geom, reg.prox_raw(arg.reshape(geom.shape), tau))
        subset_evals += 1
        k += 1
        passes = pass_offset + subset_evals / n
        if debug_check and passes >= next_check - 1e-12:
            fresh = np.zeros_like(w)
            for j, t in enumerate(terms):
                fresh += t.projector.apply_adjoint(duals[j])
            err = np.linalg.norm(w - fresh)
            if err > 1e-10 * max(np.linalg.norm(fresh), 1.0):
                raise AssertionError("SPDHG aggregate drifted from its definition")
            next_check += 10.0
        poller.poll(passes, x, k)
    return RunResult(x, k, pass_offset + subset_evals / n)
