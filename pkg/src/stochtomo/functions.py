"""Objective pieces: Kullback-Leibler subset fidelities, TV regulariser, sums.

The composite objective is ``F(x) = sum_i f_i(x) + g(x)`` where each ``f_i``
is a KL fit of one view subset (``KLFunction``) and ``g`` is isotropic total
variation with a nonnegativity constraint (``TVRegulariser``).  Note the sum
convention: ``f`` is the plain sum of the ``f_i``, not their average.
"""

from __future__ import annotations

import math

import numpy as np

from .core import Image, Sinogram, project_nonneg
from .operators import _grad_adjoint_raw, _grad_raw

__all__ = [
    "KLFunction",
    "kl_conjugate_prox_values",
    "TVRegulariser",
    "SmoothSum",
]


def kl_conjugate_prox_values(z, sigma, y, eta=0.0):
    """Closed-form prox of the convex conjugate of ``v -> KL(v + eta; y)``.

    Entrywise, with ``z' = z + sigma*eta``:

        out = (z' + 1 - sqrt((z' - 1)^2 + 4*sigma*y)) / 2

    For ``y = 0`` and ``eta = 0`` this collapses to ``min(z, 1)``.  Total in
    its arguments; ``sigma`` must be positive.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    zp = np.asarray(z, dtype=np.float64) + sigma * eta
    return 0.5 * (zp + 1.0 - np.sqrt((zp - 1.0) ** 2 + 4.0 * sigma * np.asarray(y)))


class KLFunction:
    """Kullback-Leibler fit of one view subset: ``x -> KL(A x + eta; y)``.

    ``KL(v; y) = sum_j v_j - y_j + y_j log(y_j / v_j)`` with the convention
    that the log term vanishes where ``y_j = 0``.  The constant background
    ``eta > 0`` stands in for randoms/scatter and makes the function
    L-smooth; it defaults to ``1e-6 * max(y)``.
    """

    def __init__(self, projector, data, background=None):
        if data.view_ids != projector.view_ids:
            raise ValueError("data view set does not match projector")
        if np.any(data.values < 0.0):
            raise ValueError("count data must be entrywise >= 0")
        self.projector = projector
        self.data = data
        self._y = data.values.ravel().copy()
        ymax = float(self._y.max()) if self._y.size else 0.0
        if background is None:
            background = 1e-6 * ymax if ymax > 0 else 1e-6
        if not background > 0:
            raise ValueError("background must be > 0")
        self.eta = float(background)
        self._ypos = self._y > 0.0
        self._lipschitz = None

    @property
    def geometry(self):
        return self.projector.image_geometry

    # -- value / gradient ---------------------------------------------------

    def value_raw(self, x_flat):
        v = self.projector.apply(x_flat) + self.eta
        if np.any((v <= 0.0) & self._ypos):
            return math.inf
        terms = v - self._y
        pos = self._ypos
        terms[pos] += self._y[pos] * np.log(self._y[pos] / v[pos])
        return float(np.add.reduce(terms))

    def value(self, x):
        return self.value_raw(x.values.ravel())

    def gradient_raw(self, x_flat):
        v = self.projector.apply(x_flat) + self.eta
        if np.any(v <= 0.0):
            raise ValueError("KL gradient undefined: nonpositive forward projection")
        return self.projector.apply_adjoint(1.0 - self._y / v)

    def gradient(self, x):
        g = self.gradient_raw(x.values.ravel())
        return Image(self.geometry, g.reshape(self.geometry.shape))

    # -- smoothness ---------------------------------------------------------

    def lipschitz(self, norm_iters=100, norm_seed=0):
        """Upper bound ``||A||^2 * max(y) / eta^2`` on the Hessian norm (cached)."""
        if self._lipschitz is None:
            if self.eta == 0:
                raise ValueError("unbounded curvature: eta must be > 0")
            ymax = float(self._y.max()) if self._y.size else 0.0
            if ymax == 0.0:
                self._lipschitz = 0.0
            else:
                a_norm = self.projector.norm(iters=norm_iters, seed=norm_seed)
                self._lipschitz = a_norm**2 * ymax / self.eta**2
        return self._lipschitz

    # -- dual ---------------------------------------------------------------

    def conjugate_prox(self, z, sigma):
        """Prox of the convex conjugate, used by primal-dual solvers."""
        if z.view_ids != self.projector.view_ids:
            raise ValueError("dual view set does not match projector")
        out = kl_conjugate_prox_values(z.values, sigma, self.data.values, self.eta)
        return Sinogram(z.geometry, z.view_ids, out)


class TVRegulariser:
    """Isotropic total variation with an optional nonnegativity constraint.

    ``value`` returns ``alpha * sum_j ||(Dx)_j||_2`` with Neumann forward
    differences; ``prox`` solves the denoising problem

        argmin_u  0.5 ||u - x||^2 + gamma * alpha * TV(u) + i_{u >= 0}(u)

    by fast gradient projection on the dual, warm-started from the previous
    call.  The warm-start cache is the only mutable state; a solver run owns
    it and should call :meth:`reset_warm_start` before iterating.
    """

    def __init__(self, alpha, inner_iterations=100, inner_tolerance=1e-6, nonneg=True):
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        if inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")
        if not inner_tolerance > 0:
            raise ValueError("inner_tolerance must be > 0")
        self.alpha = float(alpha)
        self.inner_iterations = int(inner_iterations)
        self.inner_tolerance = float(inner_tolerance)
        self.nonneg = bool(nonneg)
        self._warm = None

    def reset_warm_start(self):
        self._warm = None

    def value_raw(self, x2d):
        if self.nonneg and np.any(x2d < 0.0):
            return math.inf
        v, h = _grad_raw(x2d)
        return self.alpha * float(np.add.reduce(np.sqrt(v * v + h * h).ravel()))

    def value(self, x):
        return self.value_raw(x.values)

    def prox_raw(self, x2d, gamma):
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        lam = gamma * self.alpha
        if lam == 0.0:
            return np.maximum(x2d, 0.0) if self.nonneg else x2d.copy()

        if self._warm is not None and self._warm[0].shape == x2d.shape:
            p, q = self._warm[0].copy(), self._warm[1].copy()
        else:
            p, q = np.zeros_like(x2d), np.zeros_like(x2d)
        rp, rq = p.copy(), q.copy()
        t = 1.0
        step = 1.0 / (8.0 * lam)
        tol = self.inner_tolerance

        for _ in range(self.inner_iterations):
            u = x2d - lam * _grad_adjoint_raw(rp, rq)
            if self.nonneg:
                np.maximum(u, 0.0, out=u)
            gv, gh = _grad_raw(u)
            pn = rp + step * gv
            qn = rq + step * gh
            mag = np.sqrt(pn * pn + qn * qn)
            np.maximum(mag, 1.0, out=mag)
            pn /= mag
            qn /= mag
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            rp = pn + beta * (pn - p)
            rq = qn + beta * (qn - q)
            dp, dq = pn - p, qn - q
            change = math.sqrt(
                float(np.add.reduce((dp * dp).ravel()))
                + float(np.add.reduce((dq * dq).ravel()))
            )
            size = math.sqrt(
                float(np.add.reduce((pn * pn).ravel()))
                + float(np.add.reduce((qn * qn).ravel()))
            )
            p, q, t = pn, qn, t_new
            if change <= tol * max(size, 1e-300):
                break

        self._warm = (p.copy(), q.copy())
        u = x2d - lam * _grad_adjoint_raw(p, q)
        if self.nonneg:
            np.maximum(u, 0.0, out=u)
        return u

    def prox(self, x, gamma):
        return Image(x.geometry, self.prox_raw(x.values, gamma))


class SmoothSum:
    """Ordered sum of smooth terms; the data-pass unit is ``n`` term gradients.

    Terms expose ``value(x)``, ``gradient(x)`` and optionally ``lipschitz()``
    (duck-typed so tests can use scalar toys in place of ``KLFunction``).
    """

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("need at least one term")
        self.terms = terms

    @property
    def n(self):
        return len(self.terms)

    def value(self, x):
        total = 0.0
        for term in self.terms:
            total += term.value(x)
        return total

    def gradient(self, x):
        if self.n == 1:
            return self.terms[0].gradient(x)
        out = self.terms[0].gradient(x).values.copy()
        for term in self.terms[1:]:
            out += term.gradient(x).values
        return Image(x.geometry, out)

    def lipschitz_list(self):
        return tuple(term.lipschitz() for term in self.terms)

    def lipschitz_total(self):
        return float(sum(self.lipschitz_list()))

    def lipschitz_max(self):
        return float(max(self.lipschitz_list()))
