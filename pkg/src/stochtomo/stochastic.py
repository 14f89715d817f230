"""Subset samplers and stochastic gradient estimators.

Every estimator implements the same gradient-source contract, so solvers are
agnostic to where the gradient comes from:

    estimate(x) -> Image      one (possibly randomized) gradient estimate
    passes      -> float      cumulative evaluation cost in data passes
    reset(seed)               restore construction state with a new seed

Cost accounting is exact: one subset gradient costs ``1/n`` of a pass, one
full gradient costs ``1``.  Counters are kept as integers (full passes and
subset evaluations) so ``passes`` is exact whenever ``k/n`` is.

Scale convention: the objective sums the ``f_i`` without a ``1/n`` average,
so the unbiased importance weight is ``1/p_i`` (= ``n`` for uniform
sampling), not ``1/(n p_i)``.

With a single subset every estimator returns the exact full gradient (the
randomization is vacuous), so trajectories collapse bitwise onto the
deterministic ones.
"""

from __future__ import annotations

import numpy as np

from .core import Image, RandomStream

__all__ = [
    "Sampler",
    "FullGradient",
    "SGDEstimator",
    "SAGEstimator",
    "SAGAEstimator",
    "SVRGEstimator",
    "LSVRGEstimator",
]


class Sampler:
    """Draws subset indices with replacement from a fixed probability vector.

    Inverse-CDF on one uniform per draw; the index stream is a pure function
    of the seed.
    """

    def __init__(self, probabilities, seed=0):
        p = np.asarray(probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probabilities must be a non-empty 1D vector")
        if np.any(p < 0.0):
            raise ValueError("probabilities must be >= 0")
        if abs(float(np.add.reduce(p)) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        self.n = p.size
        self.probabilities = p.copy()
        self.mode = "with_replacement"
        self._cum = np.cumsum(p)
        self._seed = int(seed)
        self._stream = RandomStream(self._seed)

    @classmethod
    def uniform(cls, n, seed=0):
        return cls(np.full(n, 1.0 / n), seed)

    @property
    def state(self):
        return self._stream.state

    def reset(self, seed=None):
        if seed is not None:
            self._seed = int(seed)
        self._stream = RandomStream(self._seed)

    def next_uniform(self):
        return self._stream.uniform()

    def next_index(self):
        u = self._stream.uniform()
        i = int(np.searchsorted(self._cum, u, side="right"))
        if i >= self.n:
            i = self.n - 1
        # rounding slop at the top of the CDF must not select a zero-mass index
        while i > 0 and self.probabilities[i] == 0.0:
            i -= 1
        return i


class _GradientSource:
    """Shared cost accounting for gradient sources."""

    def __init__(self, smooth):
        self.smooth = smooth
        self.n = smooth.n
        self._full_evals = 0
        self._subset_evals = 0

    @property
    def passes(self):
        return self._full_evals + self._subset_evals / self.n

    def _reset_counters(self):
        self._full_evals = 0
        self._subset_evals = 0

    def ensure_initialized(self, x):
        """Hook for estimators with tables; no-op by default."""


class FullGradient(_GradientSource):
    """Deterministic source: every estimate is the exact full gradient."""

    def estimate(self, x):
        self._full_evals += 1
        return self.smooth.gradient(x)

    def reset(self, seed=None):
        self._reset_counters()


class _SampledEstimator(_GradientSource):
    def __init__(self, smooth, sampler):
        super().__init__(smooth)
        if sampler.n != smooth.n:
            raise ValueError("sampler size does not match number of terms")
        self.sampler = sampler

    def reset(self, seed=None):
        self.sampler.reset(seed)
        self._reset_counters()


class SGDEstimator(_SampledEstimator):
    """Plain stochastic gradient: draws i, returns ``(1/p_i) * grad f_i(x)``."""

    def estimate(self, x):
        i = self.sampler.next_index()
        return self._estimate_with_index(x, i)

    def _estimate_with_index(self, x, i):
        self._subset_evals += 1
        g = self.smooth.terms[i].gradient(x)
        scale = 1.0 / self.sampler.probabilities[i]
        return Image(x.geometry, scale * g.values)


class _TableEstimator(_SampledEstimator):
    """Gradient-table machinery shared by SAG and SAGA."""

    def __init__(self, smooth, sampler, init_mode="full_pass"):
        super().__init__(smooth, sampler)
        if init_mode not in ("full_pass", "zeros"):
            raise ValueError("init_mode must be 'full_pass' or 'zeros'")
        self._init_mode = init_mode
        self._table = None
        self._table_sum = None

    def initialize_table(self, x0, mode=None):
        """Fill the gradient table: per-term gradients at x0, or zeros (free)."""
        mode = mode or self._init_mode
        if mode == "full_pass":
            self._table = [t.gradient(x0).values.copy() for t in self.smooth.terms]
            self._full_evals += 1
        elif mode == "zeros":
            shape = x0.geometry.shape
            self._table = [np.zeros(shape) for _ in range(self.n)]
        else:
            raise ValueError("init_mode must be 'full_pass' or 'zeros'")
        total = self._table[0].copy()
        for entry in self._table[1:]:
            total += entry
        self._table_sum = total

    def ensure_initialized(self, x):
        if self._table is None:
            self.initialize_table(x)

    def table_sum(self):
        if self._table_sum is None:
            raise RuntimeError("gradient table not initialized")
        return self._table_sum.copy()

    def reset(self, seed=None):
        super().reset(seed)
        self._table = None
        self._table_sum = None

    def estimate(self, x):
        self.ensure_initialized(x)
        i = self.sampler.next_index()
        return self._estimate_with_index(x, i)


class SAGAEstimator(_TableEstimator):
    """SAGA: unbiased table-corrected estimate, table refreshed after each draw."""

    def _estimate_with_index(self, x, i):
        if self._table is None:
            raise RuntimeError("gradient table not initialized")
        self._subset_evals += 1
        if self.n == 1:
            g = self.smooth.gradient(x)
            self._table[0] = g.values.copy()
            self._table_sum = g.values.copy()
            return g
        g_new = self.smooth.terms[i].gradient(x).values
        scale = 1.0 / self.sampler.probabilities[i]
        out = scale * (g_new - self._table[i]) + self._table_sum
        self._table_sum = self._table_sum + (g_new - self._table[i])
        self._table[i] = g_new.copy()
        return Image(x.geometry, out)


class SAGEstimator(_TableEstimator):
    """SAG: refresh one table entry, return the (biased) table sum."""

    def _estimate_with_index(self, x, i):
        if self._table is None:
            raise RuntimeError("gradient table not initialized")
        self._subset_evals += 1
        if self.n == 1:
            g = self.smooth.gradient(x)
            self._table[0] = g.values.copy()
            self._table_sum = g.values.copy()
            return g
        g_new = self.smooth.terms[i].gradient(x).values
        self._table_sum = self._table_sum + (g_new - self._table[i])
        self._table[i] = g_new.copy()
        return Image(x.geometry, self._table_sum.copy())


class _SnapshotEstimator(_SampledEstimator):
    """Snapshot machinery shared by SVRG and LSVRG.

    A snapshot stores the anchor point and its full gradient (cost 1 pass);
    non-snapshot estimates cost two subset gradients (``2/n`` of a pass).
    With n = 1 each call evaluates a single full gradient (cost 1).
    """

    def __init__(self, smooth, sampler):
        super().__init__(smooth, sampler)
        self._snapshot = None
        self._snapshot_grad = None

    def reset(self, seed=None):
        super().reset(seed)
        self._snapshot = None
        self._snapshot_grad = None

    def _take_snapshot(self, x):
        self._snapshot = x.copy()
        self._snapshot_grad = self.smooth.gradient(x).values.copy()
        self._full_evals += 1

    def _estimate_with_index(self, x, i):
        if self._snapshot is None:
            raise RuntimeError("no snapshot stored")
        if self.n == 1:
            self._full_evals += 1
            return self.smooth.gradient(x)
        self._subset_evals += 2
        term = self.smooth.terms[i]
        diff = term.gradient(x).values - term.gradient(self._snapshot).values
        scale = 1.0 / self.sampler.probabilities[i]
        return Image(x.geometry, scale * diff + self._snapshot_grad)


class SVRGEstimator(_SnapshotEstimator):
    """SVRG: snapshot every ``update_frequency`` calls (default ``2n``)."""

    def __init__(self, smooth, sampler, update_frequency=None):
        super().__init__(smooth, sampler)
        if update_frequency is None:
            update_frequency = 2 * smooth.n
        if update_frequency < 1:
            raise ValueError("update_frequency must be >= 1")
        self.update_frequency = int(update_frequency)
        self._calls = 0

    def reset(self, seed=None):
        super().reset(seed)
        self._calls = 0

    def estimate(self, x):
        take = (self._calls % self.update_frequency == 0) or self._snapshot is None
        self._calls += 1
        i = self.sampler.next_index()
        if take:
            self._take_snapshot(x)
            return Image(x.geometry, self._snapshot_grad.copy())
        return self._estimate_with_index(x, i)


class LSVRGEstimator(_SnapshotEstimator):
    """Loopless SVRG: snapshot with probability ``q`` per call (default ``1/n``).

    The snapshot coin is drawn from the sampler's stream before the index
    draw, so the whole trajectory is a pure function of the seed.
    """

    def __init__(self, smooth, sampler, snapshot_probability=None):
        super().__init__(smooth, sampler)
        if snapshot_probability is None:
            snapshot_probability = 1.0 / smooth.n
        if not 0.0 < snapshot_probability <= 1.0:
            raise ValueError("snapshot_probability must be in (0, 1]")
        self.snapshot_probability = float(snapshot_probability)
        self.snapshot_count = 0

    def reset(self, seed=None):
        super().reset(seed)
        self.snapshot_count = 0

    def estimate(self, x):
        coin = self.sampler.next_uniform()
        refresh = coin < self.snapshot_probability or self._snapshot is None
        i = self.sampler.next_index()
        if refresh:
            self._take_snapshot(x)
            self.snapshot_count += 1
            return Image(x.geometry, self._snapshot_grad.copy())
        return self._estimate_with_index(x, i)
