"""Linear operators: parallel-beam projector, view partitioner, finite differences.

The projector traces one ray per detector bin and stores the exact
ray/pixel intersection lengths (Siddon traversal) in a sparse matrix, so the
adjoint uses the identical coefficients and the adjoint identity holds to
rounding.  Subset operators are built by tracing the same rays for a subset
of views; they therefore stack exactly to the full operator.

Conventions: the image is centered on the rotation axis; pixel (r, c) spans
``x in [(c - cols/2) * px, (c + 1 - cols/2) * px]`` and similarly in y with
rows.  A ray for (angle theta, bin offset t) is the line ``t*n + s*d`` with
direction ``d = (cos theta, sin theta)`` and normal ``n = (-sin theta,
cos theta)``; at theta = 0 rays run along image rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    AcquisitionGeometry,
    Image,
    ImageGeometry,
    RngState,
    Sinogram,
    rng_uniforms,
)

__all__ = [
    "Projector",
    "Partition",
    "partition_views",
    "GradientField",
    "grad_forward",
    "grad_adjoint",
    "operator_norm_estimate",
]


# ---------------------------------------------------------------------------
# Ray tracing
# ---------------------------------------------------------------------------

def _trace_ray(theta, t, rows, cols, px):
    """Exact intersection lengths of one ray with the pixel grid.

    Returns (flat_pixel_indices, lengths); empty arrays when the ray misses.
    """
    dx, dy = math.cos(theta), math.sin(theta)
    p0x, p0y = -t * dy, t * dx
    half_w, half_h = 0.5 * cols * px, 0.5 * rows * px

    s_lo, s_hi = -math.inf, math.inf
    if dx != 0.0:
        sa, sb = (-half_w - p0x) / dx, (half_w - p0x) / dx
        s_lo, s_hi = min(sa, sb), max(sa, sb)
    elif not (-half_w <= p0x <= half_w):
        return np.empty(0, dtype=np.int64), np.empty(0)
    if dy != 0.0:
        sa, sb = (-half_h - p0y) / dy, (half_h - p0y) / dy
        s_lo, s_hi = max(s_lo, min(sa, sb)), min(s_hi, max(sa, sb))
    elif not (-half_h <= p0y <= half_h):
        return np.empty(0, dtype=np.int64), np.empty(0)
    if not s_lo < s_hi:
        return np.empty(0, dtype=np.int64), np.empty(0)

    crossings = [np.array([s_lo, s_hi])]
    if dx != 0.0:
        sx = (-half_w + px * np.arange(cols + 1) - p0x) / dx
        crossings.append(sx[(sx > s_lo) & (sx < s_hi)])
    if dy != 0.0:
        sy = (-half_h + px * np.arange(rows + 1) - p0y) / dy
        crossings.append(sy[(sy > s_lo) & (sy < s_hi)])
    alphas = np.unique(np.concatenate(crossings))

    lengths = np.diff(alphas)
    mids = 0.5 * (alphas[1:] + alphas[:-1])
    keep = lengths > 0.0
    lengths, mids = lengths[keep], mids[keep]
    r = np.floor((p0y + mids * dy + half_h) / px).astype(np.int64)
    c = np.floor((p0x + mids * dx + half_w) / px).astype(np.int64)
    np.clip(r, 0, rows - 1, out=r)
    np.clip(c, 0, cols - 1, out=c)
    return r * cols + c, lengths


def _build_matrix(image_geometry, acquisition_geometry, view_ids):
    rows, cols = image_geometry.rows, image_geometry.cols
    px = image_geometry.pixel_size
    offsets = acquisition_geometry.bin_offsets()
    nb = acquisition_geometry.num_bins

    ray_idx, pix_idx, weights = [], [], []
    for k, view in enumerate(view_ids):
        theta = acquisition_geometry.view_angles[view]
        for b in range(nb):
            pix, lens = _trace_ray(theta, offsets[b], rows, cols, px)
            if pix.size:
                ray_idx.append(np.full(pix.size, k * nb + b, dtype=np.int64))
                pix_idx.append(pix)
                weights.append(lens)
    n_rays = len(view_ids) * nb
    n_pix = rows * cols
    if ray_idx:
        mat = sp.csr_matrix(
            (np.concatenate(weights), (np.concatenate(ray_idx), np.concatenate(pix_idx))),
            shape=(n_rays, n_pix),
        )
    else:
        mat = sp.csr_matrix((n_rays, n_pix))
    mat.sum_duplicates()
    return mat


class Projector:
    """Sparse parallel-beam projector for a (sub)set of views.

    ``forward_project`` computes the line integrals of an image along every
    (view, bin) ray; ``back_project`` is the exact matrix adjoint.
    """

    def __init__(self, image_geometry, acquisition_geometry, view_ids=None):
        self.image_geometry = image_geometry
        self.acquisition_geometry = acquisition_geometry
        if view_ids is None:
            view_ids = tuple(range(acquisition_geometry.num_views))
        self.view_ids = tuple(int(v) for v in view_ids)
        if len(set(self.view_ids)) != len(self.view_ids):
            raise ValueError("view_ids must be distinct")
        if any(v < 0 or v >= acquisition_geometry.num_views for v in self.view_ids):
            raise ValueError("view_ids out of range")
        self._mat = _build_matrix(image_geometry, acquisition_geometry, self.view_ids)
        self._mat_t = self._mat.T.tocsr()
        self._norms = {}

    @property
    def num_rays(self):
        return len(self.view_ids) * self.acquisition_geometry.num_bins

    def restrict(self, view_ids):
        """Projector over a view subset of the same geometry (same ray model)."""
        return Projector(self.image_geometry, self.acquisition_geometry, view_ids)

    # raw array entry points (hot path)
    def apply(self, x_flat):
        return self._mat @ x_flat

    def apply_adjoint(self, s_flat):
        return self._mat_t @ s_flat

    def forward_project(self, x):
        if x.geometry != self.image_geometry:
            raise ValueError("image geometry mismatch")
        out = self._mat @ x.values.ravel()
        return Sinogram(
            self.acquisition_geometry,
            self.view_ids,
            out.reshape(len(self.view_ids), self.acquisition_geometry.num_bins),
        )

    def back_project(self, s):
        if s.view_ids != self.view_ids:
            raise ValueError("sinogram view set does not match projector")
        out = self._mat_t @ s.values.ravel()
        return Image(self.image_geometry, out.reshape(self.image_geometry.shape))

    def norm(self, iters=100, seed=0):
        """Memoized power-method estimate of the largest singular value."""
        key = (iters, seed)
        if key not in self._norms:
            self._norms[key] = operator_norm_estimate(
                self.apply,
                self.apply_adjoint,
                (self.image_geometry.num_pixels,),
                iters=iters,
                rng=RngState(seed),
            )
        return self._norms[key]


def forward_project(p, x):
    return p.forward_project(x)


def back_project(p, s):
    return p.back_project(s)


# ---------------------------------------------------------------------------
# View partitioner
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Disjoint cover of the view indices by ``n_subsets`` cells."""

    n_subsets: int
    cells: tuple
    scheme: str

    def __post_init__(self):
        if self.n_subsets != len(self.cells):
            raise ValueError("n_subsets must equal the number of cells")
        flat = [v for cell in self.cells for v in cell]
        if len(flat) != len(set(flat)):
            raise ValueError("partition cells overlap")
        if set(flat) != set(range(len(flat))):
            raise ValueError("partition cells must cover 0..num_views-1")

    @property
    def num_views(self):
        return sum(len(cell) for cell in self.cells)


def partition_views(num_views, n, scheme="equidistant"):
    """Split views 0..num_views-1 into n cells.

    ``equidistant`` strides the views (cell i gets i, i+n, i+2n, ...), which
    maximizes the angular spread inside each cell; ``sequential`` uses
    contiguous blocks.
    """
    if n < 1:
        raise ValueError("need at least one subset")
    if n > num_views:
        raise ValueError("more subsets than views")
    if scheme == "equidistant":
        cells = tuple(tuple(range(i, num_views, n)) for i in range(n))
    elif scheme == "sequential":
        bounds = [round(i * num_views / n) for i in range(n + 1)]
        cells = tuple(tuple(range(bounds[i], bounds[i + 1])) for i in range(n))
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    return Partition(n, cells, scheme)


# ---------------------------------------------------------------------------
# Finite differences (Neumann boundary)
# ---------------------------------------------------------------------------

@dataclass
class GradientField:
    """Two-channel field of forward differences: ``vert[r,c] = x[r+1,c]-x[r,c]``.

    The last row of ``vert`` and the last column of ``horz`` are always 0.
    """

    geometry: ImageGeometry
    vert: np.ndarray
    horz: np.ndarray

    @classmethod
    def zeros(cls, geometry):
        return cls(geometry, np.zeros(geometry.shape), np.zeros(geometry.shape))


def _grad_raw(x):
    v = np.zeros_like(x)
    h = np.zeros_like(x)
    v[:-1, :] = x[1:, :] - x[:-1, :]
    h[:, :-1] = x[:, 1:] - x[:, :-1]
    return v, h


def _grad_adjoint_raw(v, h):
    # Exact adjoint of _grad_raw; entries in the structurally-zero positions
    # (last row of v, last column of h) are ignored.
    out = np.zeros_like(v)
    out[1:, :] += v[:-1, :]
    out[:-1, :] -= v[:-1, :]
    out[:, 1:] += h[:, :-1]
    out[:, :-1] -= h[:, :-1]
    return out


def grad_forward(x):
    """Forward differences of an image, zero on the far boundary."""
    v, h = _grad_raw(x.values)
    return GradientField(x.geometry, v, h)


def grad_adjoint(g):
    """Exact adjoint of :func:`grad_forward` (negative divergence)."""
    return Image(g.geometry, _grad_adjoint_raw(g.vert, g.horz))


# ---------------------------------------------------------------------------
# Operator norm estimation
# ---------------------------------------------------------------------------

def operator_norm_estimate(apply, apply_adjoint, domain_shape, iters=100, rng=None):
    """Power-method estimate of the largest singular value of a linear map.

    ``apply`` / ``apply_adjoint`` act on flat numpy arrays of the given
    domain shape.  Deterministic given ``rng`` (an ``RngState`` or int seed);
    the estimate is nondecreasing in ``iters`` for a fixed start vector.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if rng is None:
        rng = RngState(0)
    elif not isinstance(rng, RngState):
        rng = RngState(int(rng))
    n = int(np.prod(domain_shape))
    v, _ = rng_uniforms(rng, n)
    v = v.reshape(domain_shape)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise RuntimeError("degenerate start vector")
    v /= nv
    est = 0.0
    for _ in range(iters):
        w = apply(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = apply_adjoint(w)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
    return est
