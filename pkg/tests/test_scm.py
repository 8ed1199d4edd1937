import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covariability.binary_example import MixtureExampleSpec, adjusted_risk_difference, population_table
from covariability.graph import CausalDag
from covariability.linear_model import TABLE3_FULL, WEIGHT_LEVELS, conditional_moments
from covariability.scm import (
    DiscreteParams,
    GaussianParams,
    ScmError,
    ScmSpec,
    StructuralAssignment,
    Term,
    adjusted_estimate,
    binary_example_spec,
    causal_contrast,
    intervene,
    linear_model_spec,
    sample_population,
)
from covariability.streams import BLOCK_SIZE


def confounder_spec(effect=1.0, noise=1.0):
    """Z -> X, Z -> Y, X -> Y with constant effects; Y = effect*X + Z + noise."""
    return ScmSpec(
        {
            "Z": StructuralAssignment("exogenous", distribution="bernoulli", params={"p": 0.4}),
            "X": StructuralAssignment("bernoulli_linear_prob", (Term(0.2), Term(0.5, "Z"))),
            "Y": StructuralAssignment("linear_gaussian", (Term(effect, "X"), Term(1.0, "Z")), noise_sd=noise),
        }
    )


@pytest.fixture(scope="module")
def binary_population():
    return sample_population(binary_example_spec(), 10**6, seed=11)


class TestSpecValidation:
    def test_parents_must_match_graph(self):
        dag = CausalDag([("Z", "X")], ["Y"])
        with pytest.raises(ScmError, match="parents"):
            ScmSpec(confounder_spec().assignments, dag=dag)

    def test_undeclared_unit_parameter(self):
        with pytest.raises(ScmError, match="undeclared"):
            ScmSpec({"X": StructuralAssignment("linear_gaussian", (Term("beta"),))})

    def test_duplicate_unit_parameter(self):
        block = DiscreteParams(("a",), ((0.1,),), (1.0,))
        with pytest.raises(ScmError, match="twice"):
            ScmSpec({"X": StructuralAssignment("linear_gaussian", (Term("a"),))}, [block, block])

    def test_unknown_kind(self):
        with pytest.raises(ScmError):
            StructuralAssignment("logistic")

    def test_bernoulli_has_no_noise(self):
        with pytest.raises(ScmError):
            StructuralAssignment("bernoulli_linear_prob", (Term(0.5),), noise_sd=1.0)

    def test_gaussian_block_must_be_psd(self):
        with pytest.raises(ScmError, match="PSD"):
            GaussianParams(("a", "b"), (0, 0), ((1, 2), (2, 1)))

    def test_discrete_weights(self):
        with pytest.raises(ScmError):
            DiscreteParams(("a",), ((0.1,), (0.2,)), (0.5, 0.6))

    def test_evaluation_order_is_topological(self):
        spec = binary_example_spec()
        assert spec.nodes.index("Z") < spec.nodes.index("X")


class TestSerialization:
    def test_yaml_round_trip(self, tmp_path):
        spec = binary_example_spec()
        f = tmp_path / "model.yaml"
        spec.write(f)
        back = ScmSpec.read(f)
        assert back == spec
        assert back.digest() == spec.digest()

    def test_linear_spec_round_trip(self):
        spec = linear_model_spec(TABLE3_FULL, WEIGHT_LEVELS)
        assert ScmSpec.from_dict(spec.to_dict()) == spec

    def test_digest_changes_with_content(self):
        assert binary_example_spec().digest() != binary_example_spec(base_y=0.2).digest()

    def test_csv_header(self, tmp_path):
        pop = sample_population(binary_example_spec(), 5, seed=1)
        f = tmp_path / "pop.csv"
        pop.to_csv(f)
        lines = f.read_text().splitlines()
        assert lines[0] == "unit_id,Z,X,Y"
        assert len(lines) == 6
        pop.to_csv(f, include_unit_params=True)
        assert f.read_text().splitlines()[0] == "unit_id,Z,X,Y,alpha"


class TestSampling:
    def test_binary_population_matches_exact_tables(self, binary_population):
        pop = binary_population
        spec = MixtureExampleSpec()
        for z in (0, 1):
            sel = pop["Z"] == z
            x, y = pop["X"][sel], pop["Y"][sel]
            emp = [np.mean((x == a) & (y == b)) for a in (0, 1) for b in (0, 1)]
            exact = [float(c) for c in population_table(spec, z).cells()]
            assert np.max(np.abs(np.subtract(emp, exact))) < 0.003

    def test_unit_parameters_are_per_unit(self):
        pop = sample_population(binary_example_spec(), 2000, obs_per_unit=5, seed=3)
        assert len(pop) == 10000
        alpha = pop["alpha"].reshape(-1, 5)
        assert np.all(alpha == alpha[:, :1])
        assert np.array_equal(pop.unit_id.reshape(-1, 5)[:, 0], np.arange(2000))
        # observations within a unit still vary
        assert np.any(pop["X"].reshape(-1, 5).std(axis=1) > 0)

    def test_degenerate_spec(self):
        spec = ScmSpec(
            {
                "A": StructuralAssignment.constant(2.5),
                "B": StructuralAssignment("linear_gaussian", (Term(1.0), Term(0.0, "A"))),
            }
        )
        pop = sample_population(spec, 100, seed=0)
        assert np.all(pop["A"] == 2.5) and np.all(pop["B"] == 1.0)

    def test_probability_out_of_range_names_node(self):
        spec = binary_example_spec(alphas=(0.1, 0.3))
        with pytest.raises(ScmError, match="'X'.*outside"):
            sample_population(spec, 1000, seed=0)

    def test_seed_determinism(self):
        a = sample_population(binary_example_spec(), 20000, seed=5)
        b = sample_population(binary_example_spec(), 20000, seed=5)
        c = sample_population(binary_example_spec(), 20000, seed=6)
        assert all(np.array_equal(a[n], b[n]) for n in a.columns)
        assert not np.array_equal(a["X"], c["X"])
        assert a.provenance() == b.provenance()

    @given(st.integers(1, 8), st.integers(1, 5000))
    @settings(max_examples=15, deadline=None)
    def test_threads_do_not_change_results(self, threads, n):
        spec = linear_model_spec(TABLE3_FULL, WEIGHT_LEVELS)
        a = sample_population(spec, n, seed=9, block_size=512)
        b = sample_population(spec, n, seed=9, threads=threads, block_size=512)
        assert all(np.array_equal(a[k], b[k]) for k in a.columns)

    def test_prefix_stability(self):
        # whole blocks of units do not depend on how many units are drawn
        spec = binary_example_spec()
        a = sample_population(spec, 2 * BLOCK_SIZE, seed=2)
        b = sample_population(spec, 3 * BLOCK_SIZE + 7, seed=2)
        assert np.array_equal(a["X"], b["X"][: 2 * BLOCK_SIZE])

    def test_linear_model_conditional_moments(self):
        pop = sample_population(linear_model_spec(TABLE3_FULL, WEIGHT_LEVELS), 10**6, seed=21)
        for z in WEIGHT_LEVELS:
            sel = pop["Z"] == z
            n = sel.sum()
            c = np.cov(pop["X"][sel], pop["Y"][sel])
            m = conditional_moments(TABLE3_FULL, float(z))
            # Gaussian sampling SEs of the second moments
            se_vx = m.var_x * np.sqrt(2 / n)
            se_vy = m.var_y * np.sqrt(2 / n)
            se_c = np.sqrt((m.var_x * m.var_y + m.cov_xy**2) / n)
            assert abs(c[0, 0] - m.var_x) < 4 * se_vx
            assert abs(c[1, 1] - m.var_y) < 4 * se_vy
            assert abs(c[0, 1] - m.cov_xy) < 4 * se_c


class TestIntervene:
    def test_removes_incoming_arrows(self):
        spec = intervene(confounder_spec(), "X", 1.0)
        assert spec.dag == CausalDag([("Z", "Y"), ("X", "Y")])
        assert spec.interventions == {"X": 1.0}

    def test_modularity(self):
        base = confounder_spec()
        new = intervene(base, "X", 0.0)
        changed = [n for n in base.nodes if base.to_dict()["nodes"][n] != new.to_dict()["nodes"][n]]
        assert changed == ["X"]

    def test_root_node(self):
        base = confounder_spec()
        new = intervene(base, "Z", 1.0)
        assert new.dag == base.dag
        assert np.all(sample_population(new, 100, seed=0)["Z"] == 1.0)

    def test_double_intervention(self):
        once = intervene(confounder_spec(), "X", 1.0)
        twice = intervene(once, "X", 0.0)
        assert twice.dag == once.dag
        assert twice.interventions == {"X": 0.0}

    def test_unknown_node(self):
        with pytest.raises(ScmError):
            intervene(confounder_spec(), "Q", 1.0)


class TestCausalContrast:
    def test_binary_example_has_no_effect(self):
        r = causal_contrast(binary_example_spec(), "X", "Y", 1, 0, 200000, seed=4)
        assert abs(r.risk_difference) < 3 * r.risk_difference_se
        assert abs(r.risk_ratio - 1) < 3 * r.risk_ratio_se

    def test_deterministic_copy(self):
        spec = ScmSpec(
            {
                "X": StructuralAssignment("exogenous", distribution="normal", params={"mean": 0, "sd": 1}),
                "Y": StructuralAssignment("linear_gaussian", (Term(1.0, "X"),)),
            }
        )
        r = causal_contrast(spec, "X", "Y", 3.0, 1.0, 100, seed=0)
        assert r.risk_difference == 2.0
        assert r.risk_difference_se == 0.0

    def test_linear_effect(self):
        r = causal_contrast(confounder_spec(effect=1.0), "X", "Y", 1, 0, 100000, seed=8)
        assert abs(r.risk_difference - 1.0) < 3 * r.risk_difference_se

    def test_outcome_upstream_is_an_error(self):
        with pytest.raises(ScmError):
            causal_contrast(confounder_spec(), "X", "Z", 1, 0, 10)


class TestAdjustedEstimate:
    def test_constant_effects_recover_causal_effect(self):
        spec = confounder_spec(effect=0.7)
        pop = sample_population(spec, 10**6, seed=13)
        adj = adjusted_estimate(pop, "X", "Y", ["Z"])
        truth = causal_contrast(spec, "X", "Y", 1, 0, 10**6, seed=14)
        se = np.hypot(adj.standard_error, truth.risk_difference_se)
        assert abs(adj.estimate - truth.risk_difference) < 3 * se
        unadjusted = adjusted_estimate(pop, "X", "Y", [])
        assert unadjusted.estimate - 0.7 > 10 * unadjusted.standard_error

    def test_residual_confounding_on_z(self, binary_population):
        adj = adjusted_estimate(binary_population, "X", "Y", "Z")
        assert abs(adj.estimate) > 5 * adj.standard_error
        exact = float(adjusted_risk_difference())
        assert abs(adj.estimate - exact) < 4 * adj.standard_error

    def test_no_confounding_given_z_and_alpha(self, binary_population):
        adj = adjusted_estimate(binary_population, "X", "Y", ["Z", "alpha"])
        assert abs(adj.estimate) < 3 * adj.standard_error
        assert adj.n_strata == 4

    def test_missing_cells_are_reported(self):
        spec = ScmSpec(
            {
                "Z": StructuralAssignment("exogenous", distribution="bernoulli", params={"p": 0.5}),
                "X": StructuralAssignment("bernoulli_linear_prob", (Term(0.5), Term(0.5, "Z"))),
                "Y": StructuralAssignment("linear_gaussian", (Term(1.0, "X"),), noise_sd=0.1),
            }
        )
        pop = sample_population(spec, 5000, seed=0)
        adj = adjusted_estimate(pop, "X", "Y", "Z")
        assert adj.excluded_strata == ((1.0,),)
        assert 0.4 < adj.excluded_weight < 0.6
        assert abs(adj.estimate - 1.0) < 0.02

    def test_no_usable_stratum(self):
        spec = ScmSpec({"X": StructuralAssignment.constant(1.0), "Y": StructuralAssignment.constant(0.0)})
        pop = sample_population(spec, 10, seed=0)
        with pytest.raises(ScmError, match="no stratum"):
            adjusted_estimate(pop, "X", "Y", [])

    def test_degenerate_unit_params_converge_to_contrast(self):
        spec = binary_example_spec(alphas=(0.15,))
        pop = sample_population(spec, 10**6, seed=17)
        adj = adjusted_estimate(pop, "X", "Y", "Z")
        truth = causal_contrast(spec, "X", "Y", 1, 0, 10**6, seed=18)
        se = np.hypot(adj.standard_error, truth.risk_difference_se)
        assert abs(adj.estimate - truth.risk_difference) < 3 * se
