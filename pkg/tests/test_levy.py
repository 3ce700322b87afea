import numpy as np
import pytest
from scipy import integrate

from hjbvi.grid import Boundary, Lattice, UniformGrid
from hjbvi.levy import (LevyMeasure, NonlocalKernelSpec, apply_B, apply_K, build_stencil, choose_r,
                        compensation_drift, gamma1, gamma2, interp_weights, m_identity, m_positive,
                        read_stencil, sigma_r, variance_gamma, write_stencil)

# reference values from an mpmath evaluation of the exponential-integral forms:
# gamma1 = 2 E1(0.6), gamma2 = 2 [(e^-0.6 - e^-6)/6 + E1(6)], both for r = 0.1
VG_GAMMA1_R01 = 0.908759006378804
VG_GAMMA2_R01 = 0.182831126210112
# sqrt(int_{|e|<0.1} e^2 e^{-6|e|}/|e| de)
VG_SIGMA_R01 = 0.0822939792078638


@pytest.fixture(scope="module")
def vg():
    return variance_gamma(6.0)


def _line(h, upper=2.0, fn=lambda x: 1.0 - 2.0 * np.exp(-2.0 * x[:, 0])):
    g = UniformGrid.from_spacing([0.0], [upper], h)
    b = Boundary.uniform(g, "exterior", lambda t, x: fn(x))
    return g, Lattice(b), fn


def _kernel(scale=1.0, gamma_one=False, m=m_identity):
    def eta(t, x, e):
        return (scale * x[:, 0][:, None] * np.minimum(1.0, np.abs(e))[None, :])[..., None]

    def gam(t, x, e):
        g = np.ones(e.size) if gamma_one else np.minimum(1.0, np.abs(e))
        return np.broadcast_to(g[None, :], (x.shape[0], e.size))
    return NonlocalKernelSpec(eta, gam, m)


def test_gamma1_variance_gamma(vg):
    assert gamma1(vg, 0.1) == pytest.approx(VG_GAMMA1_R01, rel=1e-4)


def test_gamma2_variance_gamma(vg):
    assert gamma2(vg, 0.1) == pytest.approx(VG_GAMMA2_R01, rel=1e-4)


def test_gamma1_decreasing_in_r(vg):
    vals = [gamma1(vg, r) for r in (0.01, 0.05, 0.1, 0.3, 0.6, 0.9)]
    assert np.all(np.diff(vals) < 0)


def test_gamma1_point_mass_approximation():
    # unit mass smeared over a thin Gaussian shell around |e| = 1
    width = 1e-3

    def density(e):
        a = np.abs(e)
        return 0.5 * np.exp(-((a - 1.0) / width) ** 2) / (width * np.sqrt(np.pi))
    nu = LevyMeasure(density, c_nu=1.0 / width, panels_per_octave=4096, cutoff=2.0)
    assert gamma1(nu, 0.5) == pytest.approx(1.0, rel=1e-3)


def test_gamma2_bounded_support():
    nu = LevyMeasure(lambda e: np.where(np.abs(e) < 0.9, np.abs(e) ** -0.5, 0.0), kappa=0.0,
                     c_nu=1.0)
    for r in (0.05, 0.2, 0.5):
        assert gamma2(nu, r) <= gamma1(nu, r)
    assert gamma2(nu, 0.95) == 0.0


def test_gamma1_divergent_density_errors():
    with pytest.raises(ValueError):
        LevyMeasure(lambda e: np.ones_like(e, dtype=float)).outer_radius


def test_choose_r():
    assert choose_r(1 / 640, 0.0) == 1 / 640
    assert choose_r(0.01, 1.0) == pytest.approx(0.01)
    kappa = 2.0 - 1e-9
    assert choose_r(0.01, kappa) == pytest.approx(0.01 ** (1 / kappa))
    assert choose_r(0.01, kappa) == pytest.approx(0.1, rel=1e-6)


def test_sigma_r_examples(vg):
    x = np.array([[1.0]])
    sig = np.full((1, 1, 1), 0.3)
    eta_e = lambda t, x, e: np.broadcast_to(e[None, :, None], (x.shape[0], e.size, 1))
    eta_0 = lambda t, x, e: np.zeros((x.shape[0], e.size, 1))
    assert sigma_r(sig, eta_0, vg, 0.1, 0.0, x)[0, 0, 0] == 0.3
    assert sigma_r(sig, eta_e, vg, 1e-12, 0.0, x)[0, 0, 0] == pytest.approx(0.3, abs=1e-12)
    got = sigma_r(np.zeros((1, 1, 1)), eta_e, vg, 0.1, 0.0, x)[0, 0, 0]
    assert got == pytest.approx(VG_SIGMA_R01, rel=1e-10)


def test_sigma_r_copies_off_diagonals(vg):
    x = np.array([[1.0, 0.5]])
    sig = np.array([[[0.2, 0.1], [-0.3, 0.4]]])
    eta = lambda t, x, e: np.ones((x.shape[0], e.size, 2)) * e[None, :, None]
    out = sigma_r(sig, eta, vg, 0.1, 0.0, x)
    assert out[0, 0, 1] == 0.1 and out[0, 1, 0] == -0.3
    assert out[0, 0, 0] > 0.2 and out[0, 1, 1] > 0.4


def test_interp_weights_examples():
    assert interp_weights([0.0], 0.1) == [((0,), 1.0)]
    w = dict(interp_weights([0.03], 0.1))
    assert w[(0,)] == pytest.approx(0.7) and w[(1,)] == pytest.approx(0.3)
    w2 = interp_weights([0.05, 0.05], 0.1)
    assert len(w2) == 4 and all(v == pytest.approx(0.25) for _, v in w2)


def test_interp_weights_reproduce_affine(rng):
    h = np.array([0.1, 0.25])
    for _ in range(50):
        disp = rng.uniform(-1, 1, 2)
        w = interp_weights(disp, h)
        assert sum(v for _, v in w) == pytest.approx(1.0)
        assert all(0 <= v <= 1 for _, v in w)
        est = sum(v * (np.asarray(j) * h) for j, v in w)
        assert est == pytest.approx(disp)


def test_stencil_invariants(vg):
    g, lat, _ = _line(1 / 40)
    st = build_stencil(g, lat, vg, _kernel(), 1 / 40, 0.0)
    assert np.all(st.w >= 0) and np.all(st.omega >= 0)
    assert np.allclose(st.omega.sum(axis=2), 1.0)
    # support of the interpolation weights within 2h of the jump target
    k = st.k_coefficients
    assert k.data.min() >= 0
    assert np.all(st.k_sum <= gamma1(vg, 1 / 40) * (1 + 1e-12))
    assert np.all(st.b_sum <= gamma2(vg, 1 / 40) * (1 + 1e-12) + 1e-15)


def test_stencil_zero_jump_map(vg):
    g, lat, _ = _line(0.1)
    st = build_stencil(g, lat, vg, _kernel(scale=0.0), 0.1, 0.0)
    assert st.k_coefficients.nnz == 0 and st.b_coefficients.nnz == 0


def test_stencil_on_node_jump(vg):
    g, lat, _ = _line(0.1)
    shift = lambda t, x, e: np.full((x.shape[0], e.size, 1), 0.2)
    ker = NonlocalKernelSpec(shift, lambda t, x, e: np.ones((x.shape[0], e.size)))
    i = g.node_at((1.0,))
    st = build_stencil(g, lat, vg, ker, 0.1, 0.0, np.array([i]))
    row = st.k_coefficients.getrow(0)
    assert row.nnz == 1 and row.indices[0] == i + 2
    assert row.data[0] == pytest.approx(st.w.sum())


def test_section_61_stencil_sum_bounded_by_gamma1(vg):
    h = 1 / 40
    g, lat, _ = _line(h)
    st = build_stencil(g, lat, vg, _kernel(1.0), choose_r(h, 0.0), 0.0)
    assert st.k_sum.max() <= gamma1(vg, h) * (1 + 1e-12)


def test_apply_K_trivial_cases(vg):
    g, lat, fn = _line(0.1)
    st = build_stencil(g, lat, vg, _kernel(), 0.1, 0.0)
    const = np.full(lat.size, 2.0)
    assert np.allclose(apply_K(st, const), 0.0)
    assert np.allclose(apply_B(st, const, m_positive), 0.0)
    shift = lambda t, x, e: np.full((x.shape[0], e.size, 1), 0.3)
    ker = NonlocalKernelSpec(shift, lambda t, x, e: np.ones((x.shape[0], e.size)))
    i = g.node_at((1.0,))
    st1 = build_stencil(g, lat, vg, ker, 0.1, 0.0, np.array([i]))
    u = np.zeros(lat.size)
    u[i + 3] = 1.0
    assert apply_K(st1, u)[0] == pytest.approx(st1.w.sum())


def test_apply_K_matches_dense_interpolation(vg, rng):
    h = 0.05
    g, lat, fn = _line(h, fn=lambda x: np.sin(3 * x[:, 0]))
    st = build_stencil(g, lat, vg, _kernel(0.8), h, 0.0)
    u = fn(g.coords) + 0.01 * rng.standard_normal(g.size)
    u_ext = lat.extend(u, 0.0)
    # dense oracle: the extended lattice as one long 1-D array
    pts = np.arange(-200, g.size + 200)
    vals = fn((pts * h)[:, None])
    vals[200:200 + g.size] = u
    e, w = vg.nodes(h)
    eta = 0.8 * g.coords[:, 0][:, None] * np.minimum(1.0, np.abs(e))[None, :]
    target = g.coords[:, 0][:, None] + eta
    dense = np.interp(target, pts * h, vals)
    expect = (dense - u[:, None]) @ w
    assert np.allclose(apply_K(st, u_ext), expect, atol=1e-12)


def test_apply_B_identity_equals_K(vg, rng):
    g, lat, _ = _line(0.05)
    st = build_stencil(g, lat, vg, _kernel(gamma_one=True), 0.05, 0.0)
    u = lat.extend(rng.standard_normal(g.size), 0.0)
    assert np.allclose(apply_B(st, u, m_identity), apply_K(st, u), atol=1e-12)


def test_apply_B_positive_part_kills_negative_jumps(vg):
    g, lat, _ = _line(0.05, fn=lambda x: -x[:, 0])
    st = build_stencil(g, lat, vg, _kernel(), 0.05, 0.0)
    u = lat.extend(-g.coords[:, 0], 0.0)      # decreasing; all jumps go up in x
    assert np.all(apply_B(st, u, m_positive) == 0.0)


def test_apply_B_monotone_off_centre(vg, rng):
    g, lat, _ = _line(0.05)
    st = build_stencil(g, lat, vg, _kernel(), 0.05, 0.0)
    u = lat.extend(rng.standard_normal(g.size), 0.0)
    base = apply_B(st, u, m_positive)
    for _ in range(20):
        j = rng.integers(g.size)
        v = u.copy()
        v[j] += rng.random()
        diff = apply_B(st, v, m_positive) - base
        mask = st.nodes != j
        assert np.all(diff[mask] >= -1e-14)


def test_K_interpolation_error_second_order(vg):
    r = 0.05
    errs = []
    for h in (1 / 20, 1 / 40, 1 / 80, 1 / 160):
        fn = lambda x: np.cos(2 * x[:, 0])
        g, lat, _ = _line(h, upper=3.0, fn=fn)
        i = g.node_at((1.0,))
        st = build_stencil(g, lat, vg, _kernel(0.7), r, 0.0, np.array([i]))
        K = apply_K(st, lat.extend(fn(g.coords), 0.0))[0]
        e, w = vg.nodes(r)
        exact = np.sum(w * (np.cos(2 * (1 + 0.7 * np.minimum(1, np.abs(e)))) - np.cos(2)))
        errs.append(abs(K - exact))
        assert errs[-1] <= 4.0 * h ** 2 * gamma1(vg, r)
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.3) & (ratios < 4.7))


def test_truncation_consistency(vg):
    # on phi = x^3 the truncated operator (extra diffusion + compensated drift +
    # quadrature over |e| > r) approaches the full compensated integral as r -> 0
    x0 = 1.0
    phi = lambda x: x ** 3
    d1, d2 = 3 * x0 ** 2, 6 * x0

    def full_integrand(s):
        eta = x0 * min(1.0, s)
        return (phi(x0 + eta) - phi(x0) - eta * d1) * np.exp(-6 * s) / s
    exact = 2 * integrate.quad(full_integrand, 0, 40, limit=400, points=[1.0])[0]
    eta = lambda t, x, e: (x[:, 0][:, None] * np.minimum(1.0, np.abs(e))[None, :])[..., None]
    errs, small = [], []
    for r in (0.4, 0.2, 0.1):
        X = np.array([[x0]])
        extra = sigma_r(np.zeros((1, 1, 1)), eta, vg, r, 0.0, X)[0, 0, 0] ** 2
        e, w = vg.nodes(r)
        et = x0 * np.minimum(1.0, np.abs(e))
        trunc = 0.5 * extra * d2 + np.sum(w * (phi(x0 + et) - phi(x0))) \
            - compensation_drift(eta, vg, r, 0.0, X)[0, 0] * d1
        errs.append(abs(trunc - exact))
        small.append(2 * integrate.quad(lambda s: s * np.exp(-6 * s), 0, r)[0])
    assert np.all(np.diff(errs) < 0)
    assert np.all(np.array(errs) <= 2.0 * np.array(small))


def test_stencil_cache_roundtrip(vg, tmp_path):
    g, lat, _ = _line(0.1)
    st = build_stencil(g, lat, vg, _kernel(), 0.1, 0.0)
    write_stencil(tmp_path / "s.bin", st)
    back = read_stencil(tmp_path / "s.bin")
    assert np.array_equal(back.nodes, st.nodes)
    assert np.array_equal(back.cols, st.cols) and np.allclose(back.omega, st.omega)
    assert np.allclose(back.w, st.w) and np.allclose(back.drift, st.drift)
    with open(tmp_path / "bad.bin", "wb") as fh:
        fh.write(b"XXXX")
    with pytest.raises(ValueError):
        read_stencil(tmp_path / "bad.bin")
