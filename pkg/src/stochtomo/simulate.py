"""Desk-scale experiment ingredients: phantom, Poisson counts, reference solve.

The phantom is a sum of ellipses on a normalized [-1, 1]^2 grid (signed
intensities are allowed so low-uptake regions can sit inside brighter ones;
the rendered image must come out entrywise nonnegative).  Acquisition applies
the projector, adds a constant background, and draws Poisson counts from the
package RNG so simulated data are reproducible bit-for-bit.

Poisson sampling uses inverse-transform summation for means below 50; larger
means are split into independent parts below the cutoff whose sum is exact in
distribution (no normal approximation, no tables).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algorithms import run_spdhg, spdhg_default_steps
from .core import Image, ImageGeometry, RandomStream, Sinogram, norm2, save_array
from .stochastic import Sampler

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "thorax_phantom_spec",
    "make_phantom",
    "AcquisitionSim",
    "simulate_acquisition",
    "poisson_draw",
    "compute_reference",
    "REFERENCE_SEED",
]

POISSON_SPLIT_MEAN = 50.0
REFERENCE_SEED = 760  # default stream label for reference solves


@dataclass(frozen=True)
class Ellipse:
    """One additive ellipse: center/semi-axes on the [-1, 1]^2 grid."""

    center: tuple
    semi_axes: tuple
    rotation: float
    intensity: float


@dataclass(frozen=True)
class PhantomSpec:
    size: int
    ellipses: tuple

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be >= 1")
        object.__setattr__(self, "ellipses", tuple(self.ellipses))

    def analytic_total(self):
        """Sum of intensity * ellipse area, in pixel units (additive model)."""
        half = self.size / 2.0
        return sum(
            e.intensity * math.pi * e.semi_axes[0] * e.semi_axes[1] * half * half
            for e in self.ellipses
        )


def thorax_phantom_spec(size=64):
    """Thorax-like default: body, two low-uptake lungs, spine disc, hot lesion."""
    return PhantomSpec(
        size,
        (
            Ellipse((0.0, 0.0), (0.92, 0.78), 0.0, 1.0),
            Ellipse((-0.40, 0.08), (0.30, 0.42), 0.15, -0.75),
            Ellipse((0.40, 0.08), (0.30, 0.42), -0.15, -0.75),
            Ellipse((0.0, -0.55), (0.16, 0.14), 0.0, 0.6),
            Ellipse((0.38, 0.30), (0.10, 0.08), 0.3, 2.2),
        ),
    )


def make_phantom(spec):
    """Render the spec: each pixel sums the intensities of ellipses covering
    its center.  Deterministic; raises if the result has negative pixels."""
    n = spec.size
    geom = ImageGeometry(n, n, 1.0)
    # pixel-center coordinates on the normalized grid; u along cols, v along rows
    half = n / 2.0
    u = (np.arange(n) + 0.5 - half) / half
    v = (np.arange(n) + 0.5 - half) / half
    uu, vv = np.meshgrid(u, v)  # vv varies along rows
    values = np.zeros((n, n))
    for e in spec.ellipses:
        du = uu - e.center[0]
        dv = vv - e.center[1]
        c, s = math.cos(e.rotation), math.sin(e.rotation)
        a, b = e.semi_axes
        inside = ((du * c + dv * s) / a) ** 2 + ((-du * s + dv * c) / b) ** 2 <= 1.0
        values += e.intensity * inside
    if np.any(values < 0.0):
        raise ValueError("phantom spec renders negative pixels")
    return Image(geom, values)


# ---------------------------------------------------------------------------
# Poisson acquisition
# ---------------------------------------------------------------------------

def _poisson_inverse(u, lam):
    # lam below the split cutoff; consumes exactly the one uniform u
    p = math.exp(-lam)
    cdf = p
    k = 0
    k_max = int(lam + 40.0 * math.sqrt(lam) + 64.0)
    while u >= cdf and k < k_max:
        k += 1
        p *= lam / k
        cdf += p
    return k


def poisson_draw(stream, lam):
    """One Poisson draw from the deterministic uniform stream.

    Means >= 50 are split into ``floor(lam/50) + 1`` independent sub-draws
    with equal sub-means below 50; their sum is Poisson(lam) exactly.
    """
    if lam < 0:
        raise ValueError("Poisson mean must be >= 0")
    if lam < POISSON_SPLIT_MEAN:
        return _poisson_inverse(stream.uniform(), lam)
    parts = int(lam / POISSON_SPLIT_MEAN) + 1
    sub = lam / parts
    return sum(_poisson_inverse(stream.uniform(), sub) for _ in range(parts))


@dataclass(frozen=True)
class AcquisitionSim:
    """Poisson acquisition settings: count level, constant background, seed."""

    counts_scale: float = 1.0
    background: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.counts_scale > 0:
            raise ValueError("counts_scale must be > 0")
        if self.background < 0:
            raise ValueError("background must be >= 0")


def simulate_acquisition(x, projector, sim):
    """Draw counts with mean ``counts_scale * A x + background`` per bin."""
    if np.any(x.values < 0.0):
        raise ValueError("activity image must be >= 0")
    mean = sim.counts_scale * projector.apply(x.values.ravel()) + sim.background
    stream = RandomStream(sim.seed)
    counts = np.array([float(poisson_draw(stream, m)) for m in mean])
    return Sinogram(
        projector.acquisition_geometry,
        projector.view_ids,
        counts.reshape(len(projector.view_ids), projector.acquisition_geometry.num_bins),
    )


# ---------------------------------------------------------------------------
# Reference solution
# ---------------------------------------------------------------------------

def compute_reference(problem, passes=500.0, seed=REFERENCE_SEED, rho=0.99, path=None):
    """High-accuracy benchmark minimizer via SPDHG from a uniform start.

    Returns ``(x_star, provenance)``; when ``path`` is given the pair is
    persisted through :func:`stochtomo.core.save_array` with the provenance
    (seed, passes, step sizes, partition) in the sidecar.
    """
    geom = problem.smooth.terms[0].geometry
    x0 = Image.full(geom, 1.0)
    sigma, tau, _ = spdhg_default_steps(problem, rho=rho)
    result = run_spdhg(
        problem,
        x0,
        max_passes=passes,
        sampler=Sampler.uniform(problem.smooth.n, seed),
        sigma=sigma,
        tau=tau,
        rho=rho,
    )
    x_star = result.x
    provenance = {
        "role": "reference",
        "algorithm": "spdhg",
        "seed": int(seed),
        "passes": float(passes),
        "rho": float(rho),
        "sigma": [float(s) for s in sigma],
        "tau": float(tau),
        "n_subsets": problem.smooth.n,
        "partition_scheme": problem.partition.scheme if problem.partition else None,
        "objective": problem.objective(x_star),
        "solution_norm": norm2(x_star),
    }
    if path is not None:
        save_array(path, x_star, provenance)
    return x_star, provenance
