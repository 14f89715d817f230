"""KL fidelity, TV regulariser, and sum-composition tests.

Oracles: scalar bisection for the KL conjugate prox and the Moreau identity;
an independent conic solve (cvxpy) for the TV prox; central finite
differences for gradients.
"""

import math

import numpy as np
import pytest

from stochtomo import (
    Image,
    ImageGeometry,
    KLFunction,
    Projector,
    Sinogram,
    SmoothSum,
    TVRegulariser,
    kl_conjugate_prox_values,
    norm2,
    project_nonneg,
)
from stochtomo import AcquisitionGeometry, partition_views

from conftest import DenseOperator, scalar_kl


# ---------------------------------------------------------------------------
# Scalar oracles
# ---------------------------------------------------------------------------

def kl_scalar(v, y):
    """Independent evaluation of one KL summand."""
    if y == 0:
        return v
    if v <= 0:
        return math.inf
    return v - y + y * math.log(y / v)


def conjugate_prox_scalar_bisect(z, sigma, y, eta=0.0, tol=1e-14):
    """argmin_w 0.5 (w - z)^2 + sigma * (KL*(w) - eta w), KL* for data y.

    For y > 0 the optimality condition w - z + sigma (y / (1 - w) - eta) = 0
    is strictly increasing in w on (-inf, 1); for y = 0 the conjugate is the
    indicator of w <= 1 minus the linear term.
    """
    if y == 0.0:
        return min(z + sigma * eta, 1.0)

    def g(w):
        return w - z + sigma * (y / (1.0 - w) - eta)

    lo = min(z + sigma * eta, 0.0) - 10.0 * (1.0 + sigma * y)
    hi = 1.0 - 1e-16
    while g(lo) > 0:
        lo -= 10.0 * (1.0 + abs(lo))
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def kl_prox_scalar_bisect(u, scale, y, eta, tol=1e-14):
    """argmin_v 0.5 (v - u)^2 + scale * KL(v + eta; y); monotone bisection."""

    def g(v):
        return v - u + scale * (1.0 - y / (v + eta))

    lo = -eta + 1e-15
    hi = max(u, scale * y + 1.0) + 1.0
    while g(hi) < 0:
        hi = 2 * hi + 1.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# KL value / gradient
# ---------------------------------------------------------------------------

def test_kl_value_perfect_fit_is_zero():
    f = scalar_kl([2.0], eta=1.0)
    # v = x + 1 = 2 at x = 1: perfect fit
    assert f.value(Image(f.geometry, [1.0])) == pytest.approx(0.0, abs=1e-15)


def test_kl_value_zero_count_branch():
    f = scalar_kl([0.0], eta=1.0)
    # v = x + eta = 3
    assert f.value(Image(f.geometry, [2.0])) == pytest.approx(3.0)


def test_kl_value_scalar_summand():
    f = scalar_kl([1.0], eta=0.5)
    x = math.e - 0.5  # v = e
    want = kl_scalar(math.e, 1.0)
    assert f.value(Image(f.geometry, [x])) == pytest.approx(want, rel=1e-14)
    assert want == pytest.approx(math.e - 2.0, rel=1e-12)


def test_kl_value_nonnegative_when_feasible():
    rng = np.random.default_rng(0)
    op = DenseOperator(rng.uniform(0.1, 1.0, (6, 4)))
    y = np.floor(rng.uniform(0, 9, 6))
    f = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), y), background=0.3)
    for _ in range(20):
        x = Image(op.image_geometry, rng.uniform(0, 4, (1, 4)))
        assert f.value(x) >= -1e-12


def test_kl_value_infinite_on_negative_model():
    op = DenseOperator([[1.0]])
    f = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), [2.0]), background=0.5)
    assert f.value(Image(op.image_geometry, [-3.0])) == math.inf


def test_kl_rejects_negative_counts_and_bad_eta():
    op = DenseOperator([[1.0]])
    with pytest.raises(ValueError):
        KLFunction(op, Sinogram(op.acquisition_geometry, (0,), [2.0]), background=0.0)
    ag = op.acquisition_geometry
    with pytest.raises(ValueError):
        KLFunction(op, Sinogram(ag, (0,), [-1.0]), background=0.5)


def test_kl_default_background_positive():
    op = DenseOperator([[1.0]])
    f = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), [4.0]))
    assert f.eta == pytest.approx(4e-6)
    f0 = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), [0.0]))
    assert f0.eta > 0


def test_kl_gradient_stationary_at_perfect_fit():
    # near-zero background stands in for the eta -> 0 limit
    f = scalar_kl([2.0], eta=1e-12)
    g = f.gradient(Image(f.geometry, [2.0]))
    assert abs(g.values[0, 0]) < 1e-11


def test_kl_gradient_zero_count_branch():
    f = scalar_kl([0.0], eta=0.5)
    g = f.gradient(Image(f.geometry, [5.0]))
    assert g.values[0, 0] == 1.0


def test_kl_gradient_error_on_nonpositive_model():
    f = scalar_kl([2.0], eta=0.5)
    with pytest.raises(ValueError, match="KL gradient undefined"):
        f.gradient(Image(f.geometry, [-1.0]))


def central_difference_gradient(fun, x, step):
    flat = x.values.ravel()
    out = np.zeros_like(flat)
    for j in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[j] += step
        minus[j] -= step
        out[j] = (
            fun(Image(x.geometry, plus.reshape(x.shape)))
            - fun(Image(x.geometry, minus.reshape(x.shape)))
        ) / (2 * step)
    return out.reshape(x.shape)


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    op = DenseOperator(rng.uniform(0.0, 1.0, (8, 5)))
    y = np.floor(rng.uniform(0, 20, 8))
    f = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), y), background=0.7)
    for _ in range(10):
        x = Image(op.image_geometry, rng.uniform(0.1, 3.0, (1, 5)))
        step = 1e-6 * (1.0 + np.abs(x.values).max())
        fd = central_difference_gradient(f.value, x, step)
        g = f.gradient(x).values
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


# ---------------------------------------------------------------------------
# Lipschitz bound
# ---------------------------------------------------------------------------

def test_lipschitz_zero_data():
    f = scalar_kl([0.0], eta=2.0)
    assert f.lipschitz() == 0.0


def test_lipschitz_hand_value():
    # identity operator, y = 4, eta = 2: L = 1 * 4 / 4 = 1
    f = scalar_kl([4.0], eta=2.0)
    assert f.lipschitz() == pytest.approx(1.0, rel=1e-12)


def test_lipschitz_bounds_gradient_differences():
    rng = np.random.default_rng(23)
    op = DenseOperator(rng.uniform(0.0, 1.0, (6, 4)))
    y = np.floor(rng.uniform(0, 12, 6))
    f = KLFunction(op, Sinogram(op.acquisition_geometry, (0,), y), background=0.8)
    L = f.lipschitz()
    for _ in range(100):
        a = Image(op.image_geometry, rng.uniform(0, 3, (1, 4)))
        b = Image(op.image_geometry, rng.uniform(0, 3, (1, 4)))
        diff = norm2(Image(op.image_geometry, f.gradient(a).values - f.gradient(b).values))
        dist = norm2(Image(op.image_geometry, a.values - b.values))
        assert diff <= L * dist * (1 + 1e-9) + 1e-12


# ---------------------------------------------------------------------------
# KL conjugate prox
# ---------------------------------------------------------------------------

def test_conjugate_prox_zero_count_collapse():
    z = np.linspace(-3, 3, 13)
    out = kl_conjugate_prox_values(z, sigma=1.7, y=np.zeros_like(z), eta=0.0)
    assert np.allclose(out, np.minimum(z, 1.0), atol=1e-14)


def test_conjugate_prox_hand_points():
    assert kl_conjugate_prox_values(np.array([1.0]), 1.0, np.array([1.0]))[0] == pytest.approx(
        0.0, abs=1e-12
    )
    want = (1.0 - math.sqrt(5.0)) / 2.0
    assert kl_conjugate_prox_values(np.array([0.0]), 1.0, np.array([1.0]))[0] == pytest.approx(
        want, rel=1e-12
    )


def test_conjugate_prox_vs_bisection_grid():
    zs = np.linspace(-4.0, 4.0, 10)
    sigmas = np.geomspace(0.05, 20.0, 10)
    ys = np.concatenate([[0.0], np.geomspace(0.2, 40.0, 9)])
    for z in zs:
        for s in sigmas:
            for y in ys:
                got = kl_conjugate_prox_values(np.array([z]), s, np.array([y]))[0]
                want = conjugate_prox_scalar_bisect(z, s, y)
                assert got == pytest.approx(want, abs=1e-10)


def test_conjugate_prox_with_background_vs_bisection():
    rng = np.random.default_rng(5)
    for _ in range(50):
        z, s, y, eta = rng.uniform(-3, 3), rng.uniform(0.1, 5), rng.uniform(0, 10), rng.uniform(0, 2)
        got = kl_conjugate_prox_values(np.array([z]), s, np.array([y]), eta)[0]
        want = conjugate_prox_scalar_bisect(z, s, y, eta)
        assert got == pytest.approx(want, abs=1e-10)


def test_conjugate_prox_moreau_identity():
    rng = np.random.default_rng(6)
    for _ in range(50):
        z = rng.uniform(-4, 4)
        sigma = rng.uniform(0.1, 4.0)
        y = rng.choice([0.0, rng.uniform(0.1, 10.0)])
        eta = rng.uniform(0.01, 2.0)
        dual = kl_conjugate_prox_values(np.array([z]), sigma, np.array([y]), eta)[0]
        primal = kl_prox_scalar_bisect(z / sigma, 1.0 / sigma, y, eta)
        assert dual + sigma * primal == pytest.approx(z, abs=1e-8)


def test_conjugate_prox_on_sinogram_container():
    op = DenseOperator(np.eye(3))
    y = Sinogram(op.acquisition_geometry, (0,), [1.0, 0.0, 4.0])
    f = KLFunction(op, y, background=0.5)
    z = Sinogram(op.acquisition_geometry, (0,), [0.3, 2.0, -1.0])
    out = f.conjugate_prox(z, sigma=0.8)
    want = kl_conjugate_prox_values(z.values.ravel(), 0.8, y.values.ravel(), 0.5)
    assert np.allclose(out.values.ravel(), want, atol=1e-15)


# ---------------------------------------------------------------------------
# TV value
# ---------------------------------------------------------------------------

def test_tv_value_constant_zero():
    reg = TVRegulariser(0.7)
    assert reg.value(Image.full(ImageGeometry(5, 5), 2.0)) == 0.0


def test_tv_value_hand_2x2():
    reg = TVRegulariser(1.0)
    x = Image(ImageGeometry(2, 2), [[0.0, 1.0], [0.0, 1.0]])
    assert reg.value(x) == pytest.approx(2.0, rel=1e-14)


def test_tv_value_positive_homogeneity():
    rng = np.random.default_rng(8)
    reg = TVRegulariser(0.3)
    x = rng.uniform(0, 2, (6, 6))
    for c in (0.5, 2.0, 7.5):
        got = reg.value(Image(ImageGeometry(6, 6), c * x))
        assert got == pytest.approx(c * reg.value(Image(ImageGeometry(6, 6), x)), rel=1e-12)


def test_tv_value_infinite_outside_orthant():
    reg = TVRegulariser(0.3, nonneg=True)
    assert reg.value(Image(ImageGeometry(2, 2), [[-0.1, 0.0], [0.0, 0.0]])) == math.inf


# ---------------------------------------------------------------------------
# TV prox
# ---------------------------------------------------------------------------

def tv_prox_conic_oracle(x2d, lam, nonneg=True):
    """Independent prox solve via conic programming (cvxpy)."""
    import cvxpy as cp

    rows, cols = x2d.shape
    u = cp.Variable((rows, cols))
    dv = u[1:, :] - u[:-1, :]
    dh = u[:, 1:] - u[:, :-1]
    pad_v = cp.vstack([dv, cp.Constant(np.zeros((1, cols)))])
    pad_h = cp.hstack([dh, cp.Constant(np.zeros((rows, 1)))])
    tv = cp.sum(cp.norm(cp.vstack([cp.vec(pad_v, order="C"), cp.vec(pad_h, order="C")]), axis=0))
    objective = 0.5 * cp.sum_squares(u - x2d) + lam * tv
    constraints = [u >= 0] if nonneg else []
    problem = cp.Problem(cp.Minimize(objective), constraints)
    problem.solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12
    )
    return np.asarray(u.value)


def test_tv_prox_gamma_zero_is_projection():
    rng = np.random.default_rng(9)
    reg = TVRegulariser(0.5)
    x = Image(ImageGeometry(4, 4), rng.standard_normal((4, 4)))
    out = reg.prox(x, 0.0)
    assert np.array_equal(out.values, project_nonneg(x).values)


def test_tv_prox_constant_fixed_point():
    reg = TVRegulariser(0.5)
    x = Image.full(ImageGeometry(5, 5), 1.3)
    for gamma in (0.1, 1.0, 25.0):
        assert np.array_equal(reg.prox(x, gamma).values, x.values)


def test_tv_prox_large_gamma_flattens_to_mean():
    reg = TVRegulariser(1.0, inner_iterations=4000, inner_tolerance=1e-12)
    x = Image(ImageGeometry(2, 2), [[0.0, 2.0], [0.0, 2.0]])
    out = reg.prox(x, 10.0)
    assert np.max(np.abs(out.values - 1.0)) < 1e-4


def test_tv_prox_matches_conic_oracle():
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(10)
    reg = TVRegulariser(1.0, inner_iterations=20000, inner_tolerance=1e-10)
    for lam in (0.01, 1.0):
        reg.reset_warm_start()
        x = rng.uniform(-1.0, 2.0, (8, 8))
        got = reg.prox_raw(x, lam)
        want = tv_prox_conic_oracle(x, lam)
        assert np.linalg.norm(got - want) < 1e-4


def test_tv_prox_nonexpansive():
    rng = np.random.default_rng(11)
    reg = TVRegulariser(0.4, inner_iterations=5000, inner_tolerance=1e-10)
    geom = ImageGeometry(6, 6)
    for _ in range(5):
        a, b = rng.standard_normal((2, 6, 6))
        reg.reset_warm_start()
        pa = reg.prox_raw(a, 1.0)
        reg.reset_warm_start()
        pb = reg.prox_raw(b, 1.0)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) * (1 + 1e-8)


def test_tv_prox_decreases_prox_objective():
    # gamma*alpha*TV(out) + 0.5||out - x||^2 <= gamma*alpha*TV(P+(x))
    rng = np.random.default_rng(12)
    reg = TVRegulariser(0.4, inner_iterations=5000, inner_tolerance=1e-10)
    geom = ImageGeometry(7, 7)
    for _ in range(5):
        x = rng.standard_normal((7, 7))
        gamma = rng.uniform(0.2, 3.0)
        reg.reset_warm_start()
        out = reg.prox_raw(x, gamma)
        xplus = np.maximum(x, 0.0)
        lhs = gamma * reg.value_raw(out) + 0.5 * np.linalg.norm(out - x) ** 2
        rhs = gamma * reg.value_raw(xplus) + 0.5 * np.linalg.norm(xplus - x) ** 2
        assert lhs <= rhs + 1e-10


def test_tv_prox_output_nonnegative():
    rng = np.random.default_rng(13)
    reg = TVRegulariser(0.4)
    out = reg.prox_raw(rng.standard_normal((9, 9)), 0.7)
    assert np.all(out >= 0.0)


def test_tv_prox_warm_start_reset_reproducible():
    rng = np.random.default_rng(14)
    reg = TVRegulariser(0.4)
    x = rng.standard_normal((6, 6))
    reg.reset_warm_start()
    a = reg.prox_raw(x, 0.5)
    reg.reset_warm_start()
    b = reg.prox_raw(x, 0.5)
    assert np.array_equal(a, b)


def test_tv_validation():
    with pytest.raises(ValueError):
        TVRegulariser(0.0)
    with pytest.raises(ValueError):
        TVRegulariser(1.0, inner_iterations=0)
    reg = TVRegulariser(1.0)
    with pytest.raises(ValueError):
        reg.prox_raw(np.zeros((2, 2)), -0.5)


# ---------------------------------------------------------------------------
# SmoothSum
# ---------------------------------------------------------------------------

def test_sum_single_term_identity():
    f = scalar_kl([3.0], eta=1.0)
    s = SmoothSum([f])
    x = Image(f.geometry, [1.5])
    assert s.value(x) == f.value(x)
    assert np.array_equal(s.gradient(x).values, f.gradient(x).values)


def test_sum_partition_refinement():
    # full-data KL value equals the sum of the per-subset KL values
    phantom_geom = ImageGeometry(12, 12)
    rng = np.random.default_rng(15)
    x_true = Image(phantom_geom, rng.uniform(0, 2, (12, 12)))
    ag = AcquisitionGeometry.equispaced(16, 19)
    full = Projector(phantom_geom, ag)
    counts = np.floor(
        np.abs(full.forward_project(x_true).values + rng.standard_normal((16, 19)))
    )
    eta = 0.4
    f_full = KLFunction(full, Sinogram(ag, full.view_ids, counts), background=eta)
    part = partition_views(16, 5)
    subs = SmoothSum(
        [
            KLFunction(
                Projector(phantom_geom, ag, cell),
                Sinogram(ag, cell, counts[list(cell)]),
                background=eta,
            )
            for cell in part.cells
        ]
    )
    x = Image(phantom_geom, rng.uniform(0.1, 2, (12, 12)))
    assert subs.value(x) == pytest.approx(f_full.value(x), rel=1e-12)
    g_sum = subs.gradient(x).values
    g_full = f_full.gradient(x).values
    assert np.linalg.norm(g_sum - g_full) <= 1e-12 * np.linalg.norm(g_full)


def test_sum_gradient_matches_finite_differences():
    rng = np.random.default_rng(16)
    ops = [DenseOperator(rng.uniform(0, 1, (5, 4))) for _ in range(3)]
    terms = [
        KLFunction(
            op,
            Sinogram(op.acquisition_geometry, (0,), np.floor(rng.uniform(0, 9, 5))),
            background=0.6,
        )
        for op in ops
    ]
    s = SmoothSum(terms)
    for _ in range(10):
        x = Image(ops[0].image_geometry, rng.uniform(0.1, 2.0, (1, 4)))
        step = 1e-6 * (1.0 + np.abs(x.values).max())
        fd = central_difference_gradient(s.value, x, step)
        g = s.gradient(x).values
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_sum_requires_terms():
    with pytest.raises(ValueError):
        SmoothSum([])
