import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from mfglab.grid import Field, NormKind, build_grid, norm
from mfglab.mfg import (
    InteractionSpec,
    admissibility_check,
    interaction_value,
    manufactured_preset,
    manufactured_problem,
    problem_from_config,
    residual_m,
    residual_u,
)

X, T = sp.symbols("x t", real=True)


def grid_1d(n=65, n_t=65):
    return build_grid([(0.0, 1.0)], [n], 1.0, n_t)


def tanh_spec(g1=0.3, g2=0.3, amp=0.5, sigma=0.3):
    return InteractionSpec(
        family="tanh", gamma1=g1, gamma2=g2, kernel="gaussian", amplitude=amp, sigma=sigma
    )


class TestInteraction:
    def test_zero_kernel_identity_family_returns_density(self):
        g = grid_1d(n=17, n_t=9)
        spec = InteractionSpec(family="linear", gamma1=0.0, gamma2=1.0)
        m = Field(g, np.random.default_rng(0).normal(size=g.shape))
        out = interaction_value(m, spec)
        assert np.allclose(out.values, m.values, atol=1e-15)

    def test_zero_family_returns_zero(self):
        g = grid_1d(n=17, n_t=9)
        m = Field(g, np.ones(g.shape))
        out = interaction_value(m, InteractionSpec(kernel="gaussian", amplitude=1.0, sigma=0.2))
        assert np.all(out.values == 0.0)

    def test_gaussian_average_against_quadrature_oracle(self):
        # oracle: int_0^1 exp(-(0.5-y)^2/0.04) dy by adaptive quadrature
        g = grid_1d(n=2001, n_t=3)
        spec = InteractionSpec(
            family="linear", gamma1=1.0, gamma2=0.0, kernel="gaussian", amplitude=1.0, sigma=0.2
        )
        m = Field(g, np.ones(g.shape))
        out = interaction_value(m, spec)
        oracle, _ = quad(lambda y: np.exp(-((0.5 - y) ** 2) / 0.04), 0.0, 1.0)
        assert out.values[g.shape_space[0] // 2, 0] == pytest.approx(oracle, abs=1e-7)
        assert oracle == pytest.approx(0.3545, abs=1e-3)

    def test_interaction_pointwise_bound(self):
        # |F| <= |F(0,0)| + D1*(|I| + |m|) via the mean value inequality
        g = grid_1d(n=33, n_t=17)
        spec = tanh_spec()
        m = Field(g, np.random.default_rng(5).normal(size=g.shape))
        I = spec.kernel_average(m.values, g)
        out = interaction_value(m, spec)
        bound = spec.derivative_bound * (np.abs(I) + np.abs(m.values))
        assert np.all(np.abs(out.values) <= bound + 1e-14)

    def test_mean_value_linearization_identity(self):
        # F(y1,z1) - F(y2,z2) = f1*(y1-y2) + f2*(z1-z2) exactly, |f_i| <= D1
        spec = tanh_spec(g1=0.7, g2=0.4)
        rng = np.random.default_rng(2)
        y1, z1, y2, z2 = rng.normal(scale=2.0, size=(4, 200))
        y2[:10] = y1[:10]  # exercise the equal-argument branch
        f1, f2 = spec.mean_value_slopes(y1, z1, y2, z2)
        lhs = spec.f(y1, z1) - spec.f(y2, z2)
        assert np.allclose(lhs, f1 * (y1 - y2) + f2 * (z1 - z2), atol=1e-14)
        assert np.all(np.abs(f1) <= spec.derivative_bound + 1e-15)
        assert np.all(np.abs(f2) <= spec.derivative_bound + 1e-15)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            InteractionSpec(family="cubic")
        with pytest.raises(ValueError):
            InteractionSpec(kernel="laplace")
        with pytest.raises(ValueError):
            InteractionSpec(kernel="gaussian", sigma=0.0)


class TestResiduals:
    def test_zero_solution_zero_sources(self):
        g = grid_1d(n=17, n_t=9)
        case = manufactured_problem(sp.Integer(0), sp.Integer(0), 0.1, sp.Integer(0),
                                    InteractionSpec(), g)
        assert np.all(case.problem.G1.values == 0.0)
        assert np.all(case.problem.G2.values == 0.0)
        z = Field.zeros(g)
        assert np.all(residual_u(z, z, case.problem).values == 0.0)
        assert np.all(residual_m(z, z, case.problem).values == 0.0)

    def test_constants_annihilated(self):
        g = grid_1d(n=17, n_t=9)
        case = manufactured_problem(sp.Integer(0), sp.Integer(0), 0.1, sp.Integer(0),
                                    InteractionSpec(), g)
        u = Field(g, np.full(g.shape, 4.2))
        m = Field.zeros(g)
        assert np.all(residual_u(u, m, case.problem).values == 0.0)
        m1 = Field(g, np.full(g.shape, 2.0))
        assert np.all(residual_m(Field.zeros(g), m1, case.problem).values == 0.0)

    def test_pure_heat_reduction_symbolic_oracle(self):
        # r = 0 reduces the density equation to m_t - beta*lap m = G2;
        # oracle: direct symbolic substitution of the heat solution
        beta = 0.15
        m_expr = 1 + sp.exp(-beta * sp.pi**2 * T) * sp.cos(sp.pi * X)
        errs = []
        for n, nt in [(33, 33), (65, 65)]:
            g = build_grid([(0, 1)], [n], 1.0, nt)
            case = manufactured_problem(sp.Integer(0), m_expr, beta, sp.Integer(0),
                                        InteractionSpec(), g)
            assert np.max(np.abs(case.problem.G2.values)) < 1e-12  # heat solution
            rm = residual_m(case.u_exact, case.m_exact, case.problem)
            errs.append(np.max(np.abs(rm.values)))
        assert errs[1] < 0.35 * errs[0]

    def test_manufactured_residual_refinement(self):
        # frozen oracle: L2 residuals < 1e-3 at 129x257 and O(h^2 + dt^2) decay
        x_, t_ = X, T
        spec = tanh_spec(g1=0.5, g2=0.5, amp=1.0, sigma=0.2)
        maxes_u, maxes_m = [], []
        for n, nt in [(65, 129), (129, 257)]:
            g = build_grid([(0, 1)], [n], 1.0, nt)
            u_e, m_e = manufactured_preset("decay_cosine", g)
            case = manufactured_problem(u_e, m_e, 0.1, sp.Float(1.0), spec, g)
            ru = residual_u(case.u_exact, case.m_exact, case.problem)
            rm = residual_m(case.u_exact, case.m_exact, case.problem)
            maxes_u.append(np.max(np.abs(ru.values)))
            maxes_m.append(np.max(np.abs(rm.values)))
            if (n, nt) == (129, 257):
                assert norm(ru, NormKind.L2_Q) < 1e-3
                assert norm(rm, NormKind.L2_Q) < 1e-3
        assert maxes_u[1] < 0.3 * maxes_u[0]
        assert maxes_m[1] < 0.3 * maxes_m[0]

    def test_2d_manufactured_residual(self):
        g = build_grid([(0, 1), (0, 1)], [17, 17], 0.5, 17)
        u_e, m_e = manufactured_preset("decay_cosine", g)
        case = manufactured_problem(u_e, m_e, 0.1, sp.Float(0.5), InteractionSpec(), g)
        ru = residual_u(case.u_exact, case.m_exact, case.problem)
        rm = residual_m(case.u_exact, case.m_exact, case.problem)
        assert np.max(np.abs(ru.values)) < 0.1
        assert np.max(np.abs(rm.values)) < 0.1


class TestManufactured:
    def test_linear_heat_closed_form_sources(self):
        # oracle: G1 = (-1 - beta*pi^2) e^{-t} cos(pi x), G2 = 0
        g = grid_1d()
        case = manufactured_problem(
            sp.exp(-T) * sp.cos(sp.pi * X), sp.Integer(1), 0.1, sp.Integer(0),
            InteractionSpec(), g,
        )
        Xm, Tm = np.meshgrid(g.axes[0], g.times, indexing="ij")
        expected = (-1.0 - 0.1 * np.pi**2) * np.exp(-Tm) * np.cos(np.pi * Xm)
        assert np.max(np.abs(case.problem.G1.values - expected)) < 1e-13
        assert np.all(case.problem.G2.values == 0.0)

    def test_neumann_violation_rejected(self):
        g = grid_1d(n=17, n_t=9)
        with pytest.raises(ValueError, match="normal derivative"):
            manufactured_problem(sp.sin(sp.pi * X) * sp.exp(-T), sp.Integer(1), 0.1,
                                 sp.Integer(0), InteractionSpec(), g)

    def test_traces_match_exact_fields(self):
        g = grid_1d(n=33, n_t=17)
        u_e, m_e = manufactured_preset("decay_cosine", g)
        case = manufactured_problem(u_e, m_e, 0.2, sp.Float(0.5), tanh_spec(), g)
        assert np.array_equal(case.u_T, case.u_exact.values[..., -1])
        assert np.array_equal(case.m_0, case.m_exact.values[..., 0])

    def test_resample_on_other_grid(self):
        g = grid_1d(n=17, n_t=9)
        u_e, m_e = manufactured_preset("linear_heat", g)
        case = manufactured_problem(u_e, m_e, 0.1, sp.Integer(0), InteractionSpec(), g)
        g2 = grid_1d(n=33, n_t=17)
        case2 = case.on_grid(g2)
        assert case2.grid == g2
        assert case2.problem.D3 == case.problem.D3

    def test_bounds_validation(self):
        g = grid_1d(n=17, n_t=9)
        with pytest.raises(ValueError, match="D1"):
            manufactured_problem(
                sp.Integer(0), sp.Integer(0), 0.1, sp.Integer(0),
                tanh_spec(g1=5.0), g, bounds={"D1": 1.0},
            )
        with pytest.raises(ValueError, match="D2"):
            manufactured_problem(
                sp.Integer(0), sp.Integer(0), 0.1, sp.Float(1.0),
                InteractionSpec(), g, bounds={"D2": 0.1},
            )

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            manufactured_preset("nope", grid_1d(n=9, n_t=9))


class TestAdmissibility:
    def test_exact_fields_inside_default_boxes(self):
        g = grid_1d(n=33, n_t=17)
        u_e, m_e = manufactured_preset("decay_cosine", g)
        case = manufactured_problem(u_e, m_e, 0.2, sp.Float(0.5), tanh_spec(), g)
        chk = admissibility_check(case.u_exact, case.m_exact, case.problem)
        assert chk.in_K3 and chk.in_K4

    def test_oversized_field_flagged(self):
        g = grid_1d(n=33, n_t=17)
        u_e, m_e = manufactured_preset("decay_cosine", g)
        case = manufactured_problem(u_e, m_e, 0.2, sp.Float(0.5), tanh_spec(), g)
        big = Field(g, 100.0 * case.u_exact.values)
        chk = admissibility_check(big, case.m_exact, case.problem)
        assert not chk.in_K3


class TestProblemConfig:
    def test_round_trip_from_config(self):
        g = grid_1d(n=33, n_t=17)
        cfg = {
            "beta": 0.2,
            "r": {"kind": "constant", "value": 0.5},
            "interaction": {
                "kernel": {"kind": "gaussian", "amplitude": 0.5, "sigma": 0.3},
                "f": {"family": "tanh", "gamma1": 0.3, "gamma2": 0.3},
            },
            "manufactured": "decay_cosine",
        }
        case = problem_from_config(cfg, g)
        assert case.problem.beta == 0.2
        assert case.problem.interaction.family == "tanh"
        assert np.all(case.problem.r == 0.5)

    def test_cosine_r_profile(self):
        g = grid_1d(n=33, n_t=9)
        cfg = {"r": {"kind": "cosine", "offset": 1.0, "amplitude": 0.25, "mode": 2}}
        case = problem_from_config(cfg, g)
        expected = 1.0 + 0.25 * np.cos(2 * np.pi * g.axes[0])
        assert np.allclose(case.problem.r, expected, atol=1e-12)
