"""Shared test helpers: matrix-backed operators and toy smooth terms."""

import math

import numpy as np
import pytest

from stochtomo import (
    AcquisitionGeometry,
    Image,
    ImageGeometry,
    KLFunction,
    Projector,
    Sinogram,
    SmoothSum,
    TVRegulariser,
    partition_views,
    simulate_acquisition,
    thorax_phantom_spec,
    make_phantom,
    AcquisitionSim,
    OptimisationProblem,
)


class DenseOperator:
    """Matrix-backed stand-in for a Projector (same duck-typed interface).

    Domain: a 1 x n image row; range: a single-view sinogram with m bins.
    ``norm()`` returns the exact largest singular value, so tests that rely
    on it are independent of the power method.
    """

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        m, n = self.matrix.shape
        self.image_geometry = ImageGeometry(1, n)
        self.acquisition_geometry = AcquisitionGeometry(1, m, (0.0,))
        self.view_ids = (0,)

    @property
    def num_rays(self):
        return self.matrix.shape[0]

    def apply(self, x_flat):
        return self.matrix @ x_flat

    def apply_adjoint(self, s_flat):
        return self.matrix.T @ s_flat

    def forward_project(self, x):
        return Sinogram(
            self.acquisition_geometry, self.view_ids, self.apply(x.values.ravel())
        )

    def back_project(self, s):
        return Image(self.image_geometry, self.apply_adjoint(s.values.ravel()))

    def norm(self, iters=100, seed=0):
        return float(np.linalg.norm(self.matrix, 2))


class QuadraticTerm:
    """Scalar-style toy term ``0.5 x' A x + b' x`` on flat images (A diagonal)."""

    def __init__(self, geometry, diag, offset=None):
        self.geometry = geometry
        self.diag = np.asarray(diag, dtype=np.float64).reshape(geometry.shape)
        self.offset = (
            np.zeros(geometry.shape)
            if offset is None
            else np.asarray(offset, dtype=np.float64).reshape(geometry.shape)
        )

    def value(self, x):
        return float(
            np.add.reduce((0.5 * self.diag * x.values**2 + self.offset * x.values).ravel())
        )

    def gradient(self, x):
        return Image(self.geometry, self.diag * x.values + self.offset)

    def lipschitz(self):
        return float(np.max(np.abs(self.diag)))


class LeastSquaresTerm:
    """``0.5 ||M x - b||^2`` on flat images."""

    def __init__(self, geometry, matrix, b):
        self.geometry = geometry
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)

    def value(self, x):
        r = self.matrix @ x.values.ravel() - self.b
        return 0.5 * float(r @ r)

    def gradient(self, x):
        g = self.matrix.T @ (self.matrix @ x.values.ravel() - self.b)
        return Image(self.geometry, g.reshape(self.geometry.shape))

    def lipschitz(self):
        return float(np.linalg.norm(self.matrix, 2) ** 2)


def scalar_kl(y, eta, matrix=((1.0,),)):
    """KLFunction over a dense operator with data vector ``y``."""
    op = DenseOperator(matrix)
    data = Sinogram(op.acquisition_geometry, (0,), np.asarray(y, dtype=np.float64))
    return KLFunction(op, data, background=eta)


def build_pet_problem(
    size=24,
    num_views=20,
    num_bins=None,
    n_subsets=4,
    counts_scale=1.0,
    background=1.0,
    alpha=0.1,
    seed=42,
    inner_tolerance=1e-6,
):
    """Small end-to-end KL+TV problem for solver tests."""
    if num_bins is None:
        num_bins = int(size * 1.5) | 1
    phantom = make_phantom(thorax_phantom_spec(size))
    ag = AcquisitionGeometry.equispaced(num_views, num_bins)
    full = Projector(phantom.geometry, ag)
    counts = simulate_acquisition(
        phantom, full, AcquisitionSim(counts_scale, background, seed)
    )
    part = partition_views(num_views, n_subsets)
    terms = [
        KLFunction(
            Projector(phantom.geometry, ag, cell),
            Sinogram(ag, cell, counts.values[list(cell)]),
            background=background,
        )
        for cell in part.cells
    ]
    problem = OptimisationProblem(
        SmoothSum(terms),
        TVRegulariser(alpha, inner_tolerance=inner_tolerance),
        part,
    )
    return problem, phantom, counts, full


@pytest.fixture(scope="session")
def small_pet():
    return build_pet_problem()
