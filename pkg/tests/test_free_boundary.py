import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hjbvi.free_boundary import (FreeBoundaryParams, NodeSet, contact_set, estimate_C0, gamma_rho,
                                 hausdorff, one_sided_hausdorff)

# Table 3 u_* ladder of the ambiguity model (h = 1/640)
RHOS = [1e3, 4e3, 16e3, 64e3]
U_STAR = [0.72930381, 0.72932303, 0.72932783, 0.72932903]


def test_estimate_C0_exact_model():
    rhos = np.array(RHOS)
    p = estimate_C0(rhos, 0.7 - 3.0 / rhos)
    assert p.C0 == pytest.approx(3.0) and p.intercept == pytest.approx(0.7)
    assert p.residual == pytest.approx(0.0, abs=1e-14)


def test_estimate_C0_paper_ladder():
    p = estimate_C0(RHOS, U_STAR)
    assert p.C0 > 0
    assert p.intercept > max(U_STAR)


def test_estimate_C0_grid_functions_take_sup():
    rhos = np.array(RHOS)
    c = np.array([0.5, 3.0, 1.0])
    fields = 0.7 - np.outer(1.0 / rhos, c)
    p = estimate_C0(rhos, fields)
    assert p.C0 == pytest.approx(3.0) and np.isnan(p.intercept)
    assert estimate_C0(rhos, fields[:, 1]).C0 == pytest.approx(p.C0)


def test_estimate_C0_errors():
    with pytest.raises(ValueError, match="repeated"):
        estimate_C0([1e3, 1e3, 4e3], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        estimate_C0([1e3, 4e3], [0.1, 0.2])
    with pytest.raises(ValueError):
        estimate_C0([0.0, 1e3, 4e3], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        estimate_C0([1e3, 4e3, 16e3], [0.1, 0.2])


def test_params_validation():
    with pytest.raises(ValueError):
        FreeBoundaryParams(0.0)
    with pytest.raises(ValueError):
        FreeBoundaryParams(1.0, rate=1.5)
    assert FreeBoundaryParams(2.0).width(100.0) == pytest.approx(0.02)


def _coords(n=5):
    return np.linspace(0, 1, n)[:, None]


def test_gamma_rho_examples():
    x = _coords()
    zeta = np.ones(5)
    p = FreeBoundaryParams(0.02 * 1e3)          # width 0.02 at rho = 1e3
    assert len(gamma_rho(np.ones((1, 5)), [0.0], x, zeta, p, 1e3)) == 5
    assert len(gamma_rho(np.full((1, 5), 1.5), [0.0], x, zeta, p, 1e3)) == 0
    u = np.full((1, 5), 0.5)
    u[0, 2] = 0.99
    band = gamma_rho(u, [0.0], x, zeta, p, 1e3)
    assert band.members.tolist() == [[0, 2]]


def test_gamma_rho_history_dict_and_callables():
    x = _coords()
    hist = {0: np.ones(5), 4: np.full(5, 2.0)}
    band = gamma_rho(hist, lambda k: 0.1 * k, x, lambda t, c: np.ones(len(c)),
                     FreeBoundaryParams(1.0), 1e3)
    assert np.allclose(band.times, [0.0, 0.4])
    assert band.mask[0].all() and not band.mask[1].any()


def test_nodeset_interior_and_csv(tmp_path):
    x = _coords(11)
    s = NodeSet([0.0, 1.0], x, np.ones((2, 11), dtype=bool))
    inner = s.interior([0.0], [1.0], 0.2)
    assert len(inner) == 2 * 7
    s.to_csv(tmp_path / "band.csv")
    lines = (tmp_path / "band.csv").read_text().splitlines()
    assert lines[0] == "t,x1,in_band" and len(lines) == 23


def test_contact_set_tolerance():
    x = _coords()
    u = np.array([[1.0, 1.0 - 1e-9, 0.9, 1.0, 0.5]])
    c = contact_set(u, [0.0], x, np.ones(5), 1e-8)
    assert c.members[:, 1].tolist() == [0, 1, 3]


def test_hausdorff_examples():
    A = np.array([[0.0]])
    B = np.array([[0.0], [1.0]])
    assert hausdorff(A, A) == 0.0
    assert hausdorff(A, B) == 1.0
    assert one_sided_hausdorff(A, B) == 0.0 and one_sided_hausdorff(B, A) == 1.0
    assert hausdorff(A, B, metric="discrete") == 1.0
    with pytest.raises(ValueError):
        hausdorff(np.zeros((0, 1)), A)
    with pytest.raises(ValueError):
        hausdorff(A, B, metric="manhattan")


def test_nested_bands_distance_shrinks():
    # u^rho = zeta - c (1/rho) phi(x) approaches zeta; bands shrink onto the contact set
    x = _coords(201)
    zeta = np.zeros(201)
    phi = np.maximum(x[:, 0] - 0.5, 0.0) * 4          # contact set {x <= 0.5}
    u_inf = zeta - phi
    p = FreeBoundaryParams(1.0)
    contact = contact_set(u_inf[None], [0.0], x, zeta, 1e-12)
    dists = []
    for rho in (1e1, 4e1, 16e1, 64e1):
        u = u_inf - 1.0 / rho * 0.5
        band = gamma_rho(u[None], [0.0], x, zeta, p, rho)
        assert len(band) > 0
        dists.append(one_sided_hausdorff(band, contact))
    assert np.all(np.diff(dists) <= 1e-12)


pts = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)), elements=st.floats(-10, 10))


@settings(max_examples=100, deadline=None)
@given(A=pts, B=pts, C=pts)
def test_hausdorff_is_metric(A, B, C):
    dAB, dBA = hausdorff(A, B), hausdorff(B, A)
    assert dAB == dBA >= 0
    assert hausdorff(A, A) == 0.0
    assert hausdorff(A, C) <= dAB + hausdorff(B, C) + 1e-9
