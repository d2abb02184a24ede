import math

import numpy as np
import pytest
from scipy import integrate

from spcantor.geometry import SPoint
from spcantor.kernel import (
    KernelSpec,
    conj_grad_eval,
    grad_ps_eval,
    grad_values,
    kernel_bound_audit,
    normalization_mass,
    ps_eval,
    ps_values,
    tail_constant_exact,
)


def fourier_inversion_1d(s, x, t):
    """Oracle: direct cosine-transform inversion of the symbol
    exp(-t (2 pi rho)^(2s)), independent of the package's profile path."""
    cutoff = (50.0 / t) ** (1.0 / (2 * s)) / (2 * math.pi)
    val, _ = integrate.quad(
        lambda rho: math.exp(-t * (2 * math.pi * rho) ** (2 * s)),
        0.0, cutoff, weight="cos", wvar=2 * math.pi * x,
        epsabs=1e-13, epsrel=1e-12, limit=500,
    )
    return 2.0 * val


def test_null_at_nonpositive_time():
    for s in (0.6, 0.75, 1.0):
        spec = KernelSpec(1, s)
        assert ps_eval(spec, SPoint((1.0,), -1.0)) == 0.0
        assert ps_eval(spec, SPoint((1.0,), 0.0)) == 0.0
        assert np.all(grad_ps_eval(spec, SPoint((1.0,), -0.5)) == 0.0)


def test_closed_form_values():
    assert ps_eval(KernelSpec(1, 1.0), SPoint((0.0,), 1.0)) == pytest.approx(
        (4 * math.pi) ** -0.5, rel=1e-15
    )
    assert ps_eval(KernelSpec(1, 0.5), SPoint((1.0,), 1.0)) == pytest.approx(
        1.0 / (2 * math.pi), rel=1e-15
    )


@pytest.mark.parametrize("s", [1.0, 0.5])
def test_closed_forms_match_fourier_inversion(s):
    spec = KernelSpec(1, s)
    pts = [(x, t) for x in (0.0, 0.3, 1.0, 2.0, 5.0) for t in (0.2, 1.0, 3.0)]
    assert len(pts) == 15
    for x, t in pts:
        oracle = fourier_inversion_1d(s, x, t)
        assert ps_eval(spec, SPoint((x,), t)) == pytest.approx(
            oracle, rel=1e-6, abs=1e-14
        )


def test_grad_closed_form_example():
    # -x/(2t) (4 pi t)^(-1/2) exp(-x^2/(4t)) at (1, 0.25)
    g = grad_ps_eval(KernelSpec(1, 1.0), SPoint((1.0,), 0.25))
    assert g[0] == pytest.approx(-2.0 / math.sqrt(math.pi) * math.exp(-1.0), rel=1e-12)
    # Poisson kernel derivative -2 x t c_1 / (x^2 + t^2)^2 at (1, 1)
    g = grad_ps_eval(KernelSpec(1, 0.5), SPoint((1.0,), 1.0))
    assert g[0] == pytest.approx(-2.0 / math.pi / 4.0, rel=1e-12)


def test_grad_zero_at_spatial_origin():
    for s in (0.75, 1.0):
        g = grad_ps_eval(KernelSpec(1, s), SPoint((0.0,), 1.0))
        assert np.all(g == 0.0)


def test_grad_origin_error():
    with pytest.raises(ValueError):
        grad_ps_eval(KernelSpec(1, 1.0), SPoint((0.0,), 0.0))


def test_dimension_walk_closed_forms():
    # -2 pi x P^(n+2) equals the analytic gradient for both closed forms
    for s in (1.0, 0.5):
        spec = KernelSpec(1, s)
        for x, t in [(0.7, 0.3), (1.5, 1.2), (0.1, 0.05)]:
            g = grad_values(spec, np.array([[x]]), np.array([t]))[0, 0]
            walk = -2 * math.pi * x * spec.radial(3, np.array([x]), np.array([t]))[0]
            assert g == pytest.approx(walk, rel=1e-10)


@pytest.mark.parametrize("s", [0.75, 1.0])
def test_grad_vs_finite_differences(s):
    spec = KernelSpec(1, s)
    pts = [(x, t) for x in (0.2, 0.5, 1.0, 2.0, 4.0) for t in (0.1, 0.5, 1.0, 2.0)]
    assert len(pts) == 20
    for x, t in pts:
        h = 1e-5 * max(abs(x), t ** (1 / (2 * s)), 0.1)
        fp = ps_values(spec, np.array([x + h]), np.array([t]))[0]
        fm = ps_values(spec, np.array([x - h]), np.array([t]))[0]
        fd = (fp - fm) / (2 * h)
        g = grad_values(spec, np.array([[x]]), np.array([t]))[0, 0]
        assert g == pytest.approx(fd, rel=1e-5)


def test_radial_quadrature_matches_closed_forms():
    # the profile machinery evaluated at s = 1/2 must reproduce the Poisson
    # kernel (the fixture case the spec allows at s <= 1/2)
    specq = KernelSpec(1, 0.5, method="radial_quadrature")
    specc = KernelSpec(1, 0.5)
    xs = np.array([0.05, 0.3, 1.0, 4.0, 30.0])
    ts = np.array([0.5, 1.0, 0.2, 1.0, 2.0])
    pq = ps_values(specq, xs, ts)
    pc = ps_values(specc, xs, ts)
    assert np.max(np.abs(pq / pc - 1.0)) < 1e-7


@pytest.mark.parametrize("s", [0.6, 0.75, 1.0])
@pytest.mark.parametrize("t", [0.1, 1.0])
def test_normalization(s, t):
    assert normalization_mass(KernelSpec(1, s), t) == pytest.approx(1.0, abs=1e-6)


def test_self_similarity():
    for s, tol in [(1.0, 1e-14), (0.75, 1e-7)]:
        spec = KernelSpec(1, s)
        for lam in (0.5, 2.0, 7.0):
            for x, t in [(0.6, 0.4), (1.5, 1.0)]:
                lhs = ps_eval(spec, SPoint((lam * x,), lam ** (2 * s) * t))
                rhs = lam ** -1 * ps_eval(spec, SPoint((x,), t))
                assert lhs == pytest.approx(rhs, rel=tol)


def test_antisymmetry():
    for s in (0.75, 1.0):
        spec = KernelSpec(1, s)
        for x, t in [(0.7, 0.3), (2.0, 1.0)]:
            gp = grad_ps_eval(spec, SPoint((x,), t))
            gm = grad_ps_eval(spec, SPoint((-x,), t))
            assert gp[0] == -gm[0]


def test_conjugate():
    spec = KernelSpec(1, 1.0)
    # lives on t < 0
    assert np.all(conj_grad_eval(spec, SPoint((1.0,), 0.5)) == 0.0)
    # sign flip of the gradient example
    g = conj_grad_eval(spec, SPoint((1.0,), -0.25))
    assert g[0] == pytest.approx(2.0 / math.sqrt(math.pi) * math.exp(-1.0), rel=1e-12)
    # involution: conj of conj is the plain gradient
    p = SPoint((0.8,), 0.4)
    plain = grad_ps_eval(spec, p)
    again = -conj_grad_eval(spec, SPoint((-0.8,), -0.4))
    # conj(conj kernel) pointwise: grad(-(-p)) = grad(p)
    assert grad_values(spec, -np.array([[-0.8]]), -np.array([-0.4]))[0, 0] == plain[0]
    assert again[0] == pytest.approx(-plain[0])


def _audit_grid(n, s):
    # at s = 1 the kernel decays as exp(-u^2/4): keep the scaled radius u
    # moderate so the recorded bracket stays representable
    u_cap = 8.0 if s == 1.0 else math.inf
    pts = []
    for r in np.geomspace(0.1, 10, 6):
        for t in np.geomspace(0.01, 10, 6):
            if r * t ** (-1 / (2 * s)) > u_cap:
                continue
            x = np.zeros(n)
            x[0] = r
            pts.append(SPoint(tuple(x), float(t)))
    return pts


def test_bg_exact_at_half():
    spec = KernelSpec(1, 0.5)
    report = kernel_bound_audit(spec, _audit_grid(1, 0.5))
    bg = report["bg_ratio"]
    assert bg["sup"] - bg["inf"] <= 1e-10
    # the constant is Gamma(1)/pi = 1/pi at n = 1
    assert bg["sup"] == pytest.approx(1 / math.pi, rel=1e-12)


@pytest.mark.parametrize("s", [0.75, 1.0])
def test_bound_audit_brackets(s):
    spec = KernelSpec(1, s)
    rng = np.random.default_rng(5)
    pts = _audit_grid(1, s)
    pairs = []
    for p in pts[::3]:
        scale = max(abs(p.x[0]), p.t ** (1 / (2 * s)))
        dx = rng.normal() * 0.05 * scale
        dt = rng.normal() * 0.05 * scale ** (2 * s)
        pairs.append((p, SPoint((p.x[0] + dx,), p.t + dt)))
    report = kernel_bound_audit(spec, pts, pairs)
    for key in ("grad_ratio", "dt_grad_ratio", "bg_ratio", "holder_ratio"):
        assert report[key]["count"] > 0
        assert math.isfinite(report[key]["sup"])
    assert report["bg_ratio"]["inf"] > 0


def test_profile_tail_constant():
    # anchored tail amplitude agrees with the exact asymptotic constant
    spec = KernelSpec(1, 0.75)
    prof = spec.profile(1)
    assert prof.tail_c1 == pytest.approx(tail_constant_exact(1, 0.75), rel=1e-12)
    assert tail_constant_exact(1, 0.5) == pytest.approx(1 / math.pi, rel=1e-12)
    # table vs asymptotics at the switch point (asserted at build; re-check)
    model = prof._tail(np.array([prof.u_tail]), 1.0)[0]
    table = prof(np.array([prof.u_tail * 0.999]))[0]
    assert model == pytest.approx(table, rel=5e-3)


def test_profile_shape_invariants():
    prof = KernelSpec(1, 0.75).profile(3)
    assert np.all(prof.vals > 0)
    assert np.all(np.diff(prof.vals) < 0)


def test_two_spatial_dimensions():
    # even radial dimensions go through the Bessel-weighted panels
    spec = KernelSpec(2, 0.75)
    assert normalization_mass(spec, 1.0) == pytest.approx(1.0, abs=1e-6)
    x = np.array([[0.6, 0.4]])
    t = np.array([0.8])
    g = grad_values(spec, x, t)[0]
    h = 1e-5
    for i in range(2):
        xp, xm = x.copy(), x.copy()
        xp[0, i] += h
        xm[0, i] -= h
        fd = (ps_values(spec, xp, t)[0] - ps_values(spec, xm, t)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5)


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(1, 0.7, method="closed_form")
    with pytest.raises(ValueError):
        KernelSpec(3, 0.75)  # general-s profiles cover n <= 2
    with pytest.raises(ValueError):
        KernelSpec(1, 1.2)
    # closed form at any n is fine at s = 1
    KernelSpec(5, 1.0)
