import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoloop.assembly import PhysicalParams, Spaces
from geoloop.mesh import unit_channel_mesh
from geoloop.randfield import sample_affine_uniform, sample_kl_field
from geoloop.stepper import FIELDS, CoupledState, RunConfig
from geoloop.verify import (
    ConvergenceReport,
    RandomConductivityFamily,
    error_norms,
    field_l2,
    fixed_conductivity_problem,
    interpolation_errors,
    random_conductivity_problem,
    solve_manufactured,
    spatial_rates,
    temporal_order,
)

PARAMS = PhysicalParams(Pr=0.7, Ra=3.0, Ca=1.5, L=1.2, k_f=0.9, k_p=1.4)
PROBLEMS = {
    "fixed": fixed_conductivity_problem(2.21, a=1.3, params=PARAMS),
    "random": random_conductivity_problem((0.3, -0.7), sigma=0.1, params=PARAMS),
}
H = 2e-3


def d1(f, x, y, t, axis):
    e = [x, y, t]

    def at(k):
        q = list(e)
        q[axis] = e[axis] + k * H
        return f(*q)

    return (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12 * H)


def d2(f, x, y, t, axis):
    def at(k):
        q = [x, y, t]
        q[axis] = q[axis] + k * H
        return f(*q)

    return (-at(2) + 16 * at(1) - 30 * at(0) + 16 * at(-1) - at(-2)) / (12 * H**2)


def _points(rng, side, n=200):
    x = rng.uniform(0.05, 0.95, n)
    y = rng.uniform(1.05, 1.95, n) if side == "fluid" else rng.uniform(0.05, 0.95, n)
    t = rng.uniform(0.0, 0.5, n)
    return x, y, t


@pytest.mark.parametrize("key", sorted(PROBLEMS))
def test_forcing_matches_finite_difference_residual(key):
    mp = PROBLEMS[key]
    p = mp.params
    rng = np.random.default_rng(17)
    x, y, t = _points(rng, "fluid")
    u = mp.u_f(x, y, t)
    th = mp.theta_f(x, y, t)
    for i in range(2):
        ui = lambda a, b, c, i=i: mp.u_f(a, b, c)[i]
        res = (
            d1(ui, x, y, t, 2)
            - p.Pr * (d2(ui, x, y, t, 0) + d2(ui, x, y, t, 1))
            + u[0] * d1(ui, x, y, t, 0)
            + u[1] * d1(ui, x, y, t, 1)
            + d1(mp.p_f, x, y, t, i)
            - p.Pr * p.Ra * th * (i == 1)
            - mp.f_f(x, y, t)[i]
        )
        assert np.abs(res).max() <= 1e-6, (i, np.abs(res).max())
    res = (
        d1(mp.theta_f, x, y, t, 2)
        - p.k_f * (d2(mp.theta_f, x, y, t, 0) + d2(mp.theta_f, x, y, t, 1))
        + u[0] * d1(mp.theta_f, x, y, t, 0)
        + u[1] * d1(mp.theta_f, x, y, t, 1)
        - mp.upsilon_f(x, y, t)
    )
    assert np.abs(res).max() <= 1e-6

    x, y, t = _points(rng, "porous")
    up = mp.u_p(x, y, t)
    thp = mp.theta_p(x, y, t)
    res = (
        d1(mp.theta_p, x, y, t, 2)
        - p.k_p * (d2(mp.theta_p, x, y, t, 0) + d2(mp.theta_p, x, y, t, 1))
        + up[0] * d1(mp.theta_p, x, y, t, 0)
        + up[1] * d1(mp.theta_p, x, y, t, 1)
        - mp.upsilon_p(x, y, t)
    )
    assert np.abs(res).max() <= 1e-6
    L2 = p.L**2
    for i in range(2):
        ui = lambda a, b, c, i=i: mp.u_p(a, b, c)[i]
        res = (
            p.Ca * mp.k / L2 * d1(ui, x, y, t, 2)
            + p.Pr * up[i]
            + mp.k / L2 * d1(mp.phi_p, x, y, t, i)
            - p.Pr * p.Ra * mp.k / L2 * thp * (i == 1)
            - mp.darcy_load(x, y, t)[i]
        )
        assert np.abs(res).max() <= 1e-6


@pytest.mark.parametrize("key", sorted(PROBLEMS))
def test_hand_derivatives_match_finite_differences(key):
    mp = PROBLEMS[key]
    rng = np.random.default_rng(5)
    for side, names in (("fluid", ("u_f", "theta_f", "p_f")), ("porous", ("u_p", "theta_p", "phi_p"))):
        x, y, t = _points(rng, side, 50)
        for name in names:
            f = getattr(mp, name)
            g = getattr(mp, "grad_" + name)(x, y, t)
            if g.ndim == 3:
                for i in range(2):
                    for j in range(2):
                        fd = d1(lambda a, b, c: f(a, b, c)[i], x, y, t, j)
                        np.testing.assert_allclose(g[i, j], fd, atol=1e-8)
            else:
                for j in range(2):
                    np.testing.assert_allclose(g[j], d1(f, x, y, t, j), atol=1e-8)
        x, y, t = _points(rng, side, 50)
        vel = "u_f" if side == "fluid" else "u_p"
        vt = getattr(mp, vel + "_t")(x, y, t)
        for i in range(2):
            np.testing.assert_allclose(vt[i], d1(lambda a, b, c: getattr(mp, vel)(a, b, c)[i], x, y, t, 2), atol=1e-8)


@pytest.mark.parametrize("key", sorted(PROBLEMS))
def test_exact_fields_satisfy_boundary_and_interface_structure(key):
    mp = PROBLEMS[key]
    s = np.linspace(0, 1, 41)
    t = 0.37
    # temperatures both vanish on the interface
    np.testing.assert_allclose(mp.theta_f(s, 1.0 + 0 * s, t), 0.0, atol=1e-15)
    np.testing.assert_allclose(mp.theta_p(s, 1.0 + 0 * s, t), 0.0, atol=1e-15)
    # free-flow velocity vanishes on the interface and the side walls
    np.testing.assert_allclose(mp.u_f(s, 1.0 + 0 * s, t), 0.0, atol=1e-14)
    ys = 1 + s
    np.testing.assert_allclose(mp.u_f(0 * s, ys, t), 0.0, atol=1e-14)
    np.testing.assert_allclose(mp.u_f(1 + 0 * s, ys, t), 0.0, atol=1e-14)
    # on the top wall it does not vanish, but its net flux does
    from geoloop.elements import edge_quadrature

    q, w = edge_quadrature(4)
    top = mp.u_f(q, 2.0 + 0 * q, t)
    assert np.abs(top).max() > 0.1
    assert abs(w @ top[1]) <= 1e-14
    # Darcy velocity has zero normal component on the whole porous boundary
    np.testing.assert_allclose(mp.u_p(0 * s, s, t)[0], 0.0, atol=1e-14)
    np.testing.assert_allclose(mp.u_p(1 + 0 * s, s, t)[0], 0.0, atol=1e-14)
    np.testing.assert_allclose(mp.u_p(s, 0 * s, t)[1], 0.0, atol=1e-14)
    np.testing.assert_allclose(mp.u_p(s, 1 + 0 * s, t)[1], 0.0, atol=1e-14)


def test_exact_velocities_are_divergence_free():
    mp = PROBLEMS["fixed"]
    spaces = Spaces(unit_channel_mesh(4))
    for dm, name in ((spaces.V_f, "u_f"), (spaces.V_p, "u_p")):
        tab = dm.tabulate(8)
        x, y = tab.points[..., 0], tab.points[..., 1]
        G = getattr(mp, "grad_" + name)(x, y, 0.2)
        div = G[0, 0] + G[1, 1]
        assert np.sqrt(np.sum(tab.weights * div**2)) <= 1e-12


def test_random_problem_structure():
    mp = random_conductivity_problem((0.0, 0.0))
    assert mp.amplitude == pytest.approx(1 / 3)
    assert mp.k == pytest.approx(3.0)
    a = random_conductivity_problem((0.9, -0.4), sigma=0.0)
    b = random_conductivity_problem((-0.2, 0.6), sigma=0.0)
    x, y = np.array([0.3, 0.6]), np.array([0.2, 0.7])
    np.testing.assert_array_equal(a.darcy_load(x, y, 0.1), b.darcy_load(x, y, 0.1))
    with pytest.raises(ValueError):
        random_conductivity_problem((1.5, 0.0))
    with pytest.raises(ValueError):
        fixed_conductivity_problem(0.0)


def test_zero_state_error_equals_exact_norm(spaces4):
    mp = fixed_conductivity_problem(2.21)
    S = spaces4
    zero = CoupledState(0.0, *(np.zeros(getattr(S, dm).n_dofs) for dm in ("V_f", "Q_f", "W_f", "V_p", "Q_p", "W_p")))
    e = error_norms(zero, S, mp)
    # int_0^1 x^2 (1-x)^2 dx = 1/30, int_1^2 (1-y)^2 dy = 1/3
    assert e["theta_f"]["L2"] == pytest.approx(math.sqrt(1 / 90), rel=1e-13)
    # porous temperature: 1/30 * 1/30
    assert e["theta_p"]["L2"] == pytest.approx(1 / 30, rel=1e-13)
    with pytest.raises(ValueError):
        error_norms(zero, S, mp, t=0.5)


def test_errors_of_exact_linear_interpolant_vanish(spaces4):
    from geoloop.verify import ManufacturedProblem

    class Linear(ManufacturedProblem):
        def theta_f(self, x, y, t):
            return 1 + 2 * x - y

        def grad_theta_f(self, x, y, t):
            return np.stack([2 + 0 * x, -1 + 0 * x])

    mp = Linear("linear", 1.0, 1.0)
    e = interpolation_errors(mp, spaces4, 0.0)
    assert e["theta_f"]["L2"] <= 1e-12
    assert e["theta_f"]["H1"] <= 1e-12


def test_errors_symmetric_under_swap(spaces2, rng):
    S = spaces2
    a = rng.standard_normal(S.W_f.n_dofs)
    b = rng.standard_normal(S.W_f.n_dofs)
    assert field_l2(S, "theta_f", a - b) == field_l2(S, "theta_f", b - a)


@pytest.mark.parametrize(
    "hs,e1,e2,rate",
    [
        ((1 / 4, 1 / 8), 0.968279, 0.236474, 2.03374),
        ((1 / 8, 1 / 16), 0.0520901, 0.0120885, 2.10738),
        ((1 / 2, 1 / 4), 1.0, 0.5, 1.0),
    ],
)
def test_spatial_rate_examples(hs, e1, e2, rate):
    # the inputs carry six significant digits, which moves the rate by up to ~6e-5
    assert spatial_rates(hs, [e1, e2])[0] == pytest.approx(rate, abs=6e-5)


def test_spatial_rate_errors():
    with pytest.raises(ValueError):
        spatial_rates([0.5], [1.0])
    with pytest.raises(ValueError):
        spatial_rates([0.25, 0.5], [1.0, 0.5])
    with pytest.raises(ValueError):
        spatial_rates([0.5, 0.25], [1.0, 0.0])


def _constant_states(spaces, values):
    S = spaces
    out = []
    for v in values:
        fields = [np.full(getattr(S, dm).n_dofs, 0.0) for dm in ("V_f", "Q_f", "W_f", "V_p", "Q_p")]
        out.append(CoupledState(0.5, *fields, np.full(S.W_p.n_dofs, v)))
    return out


def test_temporal_ratio_reproduces_published_row(spaces2):
    d1_, d2_ = 4.31087e-05, 2.27774e-05
    states = _constant_states(spaces2, [d1_ + d2_, d2_, 0.0])
    r = temporal_order(states, spaces2, fields=("theta_p",))["theta_p"]
    np.testing.assert_allclose(r["diffs"], [d1_, d2_], rtol=1e-12)
    assert r["beta"][0] == pytest.approx(1.89261, abs=5e-6)
    assert r["order"][0] == pytest.approx(math.log2(1.89261), abs=1e-5)


def test_temporal_geometric_model(spaces2):
    C, dt = 0.3, 0.05
    # first-order errors C dt / 2^i: successive differences halve
    states = _constant_states(spaces2, [C * dt / 2**i for i in range(4)])
    r = temporal_order(states, spaces2, fields=("theta_p",))["theta_p"]
    np.testing.assert_allclose(r["beta"], 2.0, rtol=1e-12)
    np.testing.assert_allclose(r["order"], 1.0, rtol=1e-12)
    with pytest.raises(ValueError, match="zero"):
        temporal_order(_constant_states(spaces2, [1.0, 1.0, 1.0]), spaces2, fields=("theta_p",))
    with pytest.raises(ValueError):
        temporal_order(states[:2], spaces2)


def test_interpolation_rates():
    mp = fixed_conductivity_problem(2.21)
    report = ConvergenceReport("h")
    for n in (8, 16, 32):
        report.add(1 / n, interpolation_errors(mp, Spaces(unit_channel_mesh(n)), 0.3))
    for name in ("theta_f", "theta_p"):
        rates = report.rates(name, "L2")
        assert all(1.8 <= r <= 2.3 for r in rates), (name, rates)
    for name in ("u_f", "theta_f", "u_p", "theta_p"):
        assert min(report.rates(name, "L2")) >= 1.8
        assert min(report.rates(name, "H1")) >= 0.95


def test_report_csv_layout(tmp_path):
    rep = ConvergenceReport("h")
    for h, s in ((0.25, 1.0), (0.125, 0.25)):
        rec = {n: {"L2": s, "H1": 2 * s} for n in ("u_f", "theta_f", "u_p", "theta_p")}
        rep.add(h, rec)
    rep.write_csv(tmp_path / "l2.csv", tmp_path / "h1.csv")
    lines = (tmp_path / "l2.csv").read_text().splitlines()
    assert lines[0] == "h_or_dt,err_uf_L2,rate,err_thf_L2,rate,err_up_L2,rate,err_thp_L2,rate"
    assert lines[1].split(",")[2] == ""
    assert float(lines[2].split(",")[2]) == pytest.approx(2.0)
    assert (tmp_path / "h1.csv").read_text().splitlines()[0].startswith("h_or_dt,err_uf_H1,rate")


def test_short_manufactured_run_is_accurate():
    mp = fixed_conductivity_problem(2.21)
    _, _, e = solve_manufactured(mp, RunConfig(dt=0.01, T=0.05, n=8))
    assert e["theta_f"]["L2"] < 5e-3
    assert e["u_p"]["L2"] < 0.2
    assert e["u_p"]["div"] < 1e-9
    assert e["u_p"]["Hdiv"] == pytest.approx(e["u_p"]["L2"], rel=1e-9)


def test_random_family_checks_sample_kind():
    fam = RandomConductivityFamily(sigma=0.1)
    s = sample_affine_uniform(0.1, np.random.default_rng(0))
    assert fam(s).k == pytest.approx(s.value)
    with pytest.raises(ValueError):
        fam(sample_kl_field(1.0, 0.15, 3, 0.25, np.random.default_rng(0)))
    with pytest.raises(ValueError, match="sigma"):
        RandomConductivityFamily(sigma=0.2)(s)


@settings(max_examples=25, deadline=None)
@given(l1=st.floats(-1, 1), l2=st.floats(-1, 1), sigma=st.floats(0, 0.5))
def test_random_problem_conductivity_bounds(l1, l2, sigma):
    mp = random_conductivity_problem((l1, l2), sigma)
    assert 3 - 2 * sigma - 1e-12 <= mp.k <= 3 + 2 * sigma + 1e-12
    assert mp.amplitude == pytest.approx(1 / (3 + l1 + l2))
