import numpy as np
import pytest
from helpers import gentle_case, nonlinear_case

from mfglab.forward import PicardOptions
from mfglab.grid import build_grid, spatial_norm
from mfglab.stability import (
    PerturbationSpec,
    SpectrumSpec,
    generate_pair,
    holder_experiment,
    random_neumann_field,
)


def grid_1d(n=33, n_t=65):
    return build_grid([(0.0, 1.0)], [n], 1.0, n_t)


OPTS = PicardOptions(max_outer=40, tol_res=0.05)


@pytest.fixture(scope="module")
def case():
    return nonlinear_case(grid_1d())


class TestRandomNeumannField:
    def test_deterministic(self):
        g = grid_1d()
        a = random_neumann_field(g, SpectrumSpec(), 123)
        b = random_neumann_field(g, SpectrumSpec(), 123)
        assert np.array_equal(a, b)

    def test_zero_amplitude_gives_zero_field(self):
        g = grid_1d()
        out = random_neumann_field(g, SpectrumSpec(amplitude=0.0), 5)
        assert np.all(out == 0.0)

    def test_rescaling_identity(self):
        # renormalization oracle: the rescaled field reproduces the target norm
        g = grid_1d()
        for kind, target in (("L2", 1e-3), ("H1", 2.5e-2)):
            out = random_neumann_field(
                g, SpectrumSpec(), 7, norm_kind=kind, target_norm=target
            )
            assert spatial_norm(out, g, kind) == pytest.approx(target, rel=1e-12)

    def test_zero_field_rescale_rejected(self):
        g = grid_1d()
        with pytest.raises(ValueError):
            random_neumann_field(
                g, SpectrumSpec(amplitude=0.0), 5, norm_kind="L2", target_norm=1.0
            )

    def test_exactly_neumann(self):
        from mfglab.grid import spatial_grad

        g = grid_1d()
        out = random_neumann_field(g, SpectrumSpec(mode_cap=8), 11)
        grad = spatial_grad(out, g)[0]
        assert grad[0] == 0.0 and grad[-1] == 0.0

    def test_2d_field(self):
        g = build_grid([(0, 1), (0, 1)], [9, 9], 0.5, 5)
        out = random_neumann_field(g, SpectrumSpec(mode_cap=3), 2)
        assert out.shape == (9, 9)


class TestPerturbationSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            PerturbationSpec(seed=0, delta_levels=(1e-2, 0.0))
        with pytest.raises(ValueError, match="decreasing"):
            PerturbationSpec(seed=0, delta_levels=(1e-3, 1e-2))
        with pytest.raises(ValueError, match="delta0"):
            PerturbationSpec(seed=0, delta_levels=(0.5, 1e-2))
        with pytest.raises(ValueError, match="targets"):
            PerturbationSpec(seed=0, delta_levels=(1e-2,), targets=("u0",))


class TestGeneratePair:
    def test_zero_perturbation_identical(self, case):
        pert = PerturbationSpec(seed=9, delta_levels=(1e-2,))
        pair = generate_pair(case, pert, 0.0, "P1", OPTS)
        assert pair.measured_delta == 0.0
        assert np.array_equal(pair.u1.values, pair.u2.values)
        assert np.array_equal(pair.m1.values, pair.m2.values)

    def test_g_only_perturbation_measured_exactly(self, case):
        # construction identity: imposed source norms are the measured ones
        pert = PerturbationSpec(seed=9, delta_levels=(1e-3,), targets=("G1", "G2"))
        delta = 1e-3
        pair = generate_pair(case, pert, delta, "P1", OPTS)
        assert pair.components["G1_L2Q"] == pytest.approx(delta, rel=1e-12)
        assert pair.components["G2_L2Q"] == pytest.approx(delta, rel=1e-12)
        assert pair.components["u_T_H1"] == 0.0

    def test_measured_delta_order_of_target(self, case):
        pert = PerturbationSpec(seed=4, delta_levels=(1e-3,))
        pair = generate_pair(case, pert, 1e-3, "P1", OPTS)
        assert 0.0 < pair.measured_delta <= 10 * 1e-3
        assert pair.admissible

    def test_measured_delta_monotone_in_scale(self, case):
        pert = PerturbationSpec(seed=4, delta_levels=(1e-2,))
        measured = [
            generate_pair(case, pert, d, "P1", OPTS).measured_delta
            for d in (1e-2, 1e-3, 1e-4)
        ]
        assert measured[0] >= measured[1] >= measured[2]

    def test_p2_measures_initial_traces(self, case):
        pert = PerturbationSpec(seed=5, delta_levels=(1e-3,))
        pair = generate_pair(case, pert, 1e-3, "P2", OPTS)
        assert pair.components["m_0_L2"] == pytest.approx(1e-3, rel=1e-12)
        assert pair.components["u_0_H1"] > 0.0

    def test_nonconvergence_raises(self, case):
        pert = PerturbationSpec(seed=4, delta_levels=(1e-2,))
        bad = PicardOptions(max_outer=1, tol_res=1e-12)
        with pytest.raises(RuntimeError, match="did not converge"):
            generate_pair(case, pert, 1e-2, "P1", bad)


class TestHolderExperiment:
    def test_p1_passes(self, case):
        pert = PerturbationSpec(seed=21, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        rep = holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)
        assert rep.passed and not rep.degenerate
        assert rep.slope >= rep.rho_or_eta_theory - 0.02
        assert rep.rho_or_eta_theory == pytest.approx(0.0703125)
        assert len(rep.lhs_norms["v_t_L2"]) == 4

    def test_p2_passes(self, case):
        pert = PerturbationSpec(seed=21, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        rep = holder_experiment("P2", case, pert, 0.5, opts=OPTS)
        assert rep.passed
        assert rep.rho_or_eta_theory == pytest.approx(0.1464304729973107, rel=1e-9)
        assert set(rep.lhs_norms) == {"v_H10", "p_H10"}

    def test_degenerate_uniqueness_case(self, case):
        # no perturbation targets: identical data at every level, zero norms
        pert = PerturbationSpec(seed=21, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5), targets=())
        rep = holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)
        assert rep.degenerate and rep.passed
        assert all(v == 0.0 for v in rep.lhs_total)

    def test_restriction_ordering(self, case):
        pert = PerturbationSpec(seed=13, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        rep_small = holder_experiment("P1", case, pert, 0.25, k=3.0, opts=OPTS)
        rep_big = holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)
        for a, b in zip(rep_big.lhs_total, rep_small.lhs_total):
            assert a <= b * (1 + 1e-12)

    def test_report_determinism(self, case):
        pert = PerturbationSpec(seed=33, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        r1 = holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)
        r2 = holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)
        assert r1.to_dict() == r2.to_dict()

    def test_too_few_levels_rejected(self, case):
        pert = PerturbationSpec(seed=1, delta_levels=(1e-2, 1e-3))
        with pytest.raises(ValueError, match="4 delta levels"):
            holder_experiment("P1", case, pert, 0.5, k=3.0, opts=OPTS)

    def test_epsilon_out_of_range_rejected(self, case):
        pert = PerturbationSpec(seed=1, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        with pytest.raises(ValueError, match="epsilon"):
            holder_experiment("P1", case, pert, 1.5, k=3.0, opts=OPTS)

    def test_csv_rows_schema(self, case):
        pert = PerturbationSpec(seed=21, delta_levels=(1e-2, 1e-3, 1e-4, 1e-5))
        rep = holder_experiment("P2", case, pert, 0.5, opts=OPTS)
        rows = rep.csv_rows()
        assert len(rows) == 4 * 2
        assert {"problem_id", "delta_target", "delta_measured", "norm_name", "value",
                "amplification", "floor_bound"} == set(rows[0])
