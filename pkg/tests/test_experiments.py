import itertools
import math

import numpy as np
import pytest

from bregfit.experiments import (
    FIG1_HEADER,
    FIG2_HEADER,
    Fig1Config,
    Fig2Config,
    param_error_boltzmann,
    poe_alignment,
    poe_alignment_error,
    run_fig1,
    run_fig2,
    write_fig1_csv,
    write_fig1_summary_csv,
    write_fig2_csv,
)
from bregfit.models import BoltzmannParams, boltzmann_exact_log_partition


def normalized_params(rng, n=3, scale=0.5):
    m_upper = scale * rng.standard_normal(n * (n - 1) // 2)
    b = scale * rng.standard_normal(n)
    params = BoltzmannParams(m_upper, b, 0.0)
    c = -boltzmann_exact_log_partition(params.coupling_matrix(), b)
    return BoltzmannParams(m_upper, b, c)


class TestParamErrorBoltzmann:
    def test_identical_parameters(self, rng):
        star = normalized_params(rng)
        assert param_error_boltzmann(star, star) == 0.0

    def test_c_only_difference(self, rng):
        star = normalized_params(rng)
        hat = BoltzmannParams(star.upper_tri_m, star.b, star.c + 0.5)
        assert param_error_boltzmann(hat, star) == pytest.approx(0.25, abs=1e-12)

    def test_matches_flattened_distance_oracle(self, rng):
        star = normalized_params(rng)
        hat = BoltzmannParams(
            star.upper_tri_m + 0.1 * rng.standard_normal(3),
            star.b + 0.1 * rng.standard_normal(3),
            star.c - 0.3,
        )
        oracle = float(np.sum((hat.to_vector() - star.to_vector()) ** 2))
        assert param_error_boltzmann(hat, star) == pytest.approx(oracle, rel=1e-12)

    def test_dimension_mismatch_rejected(self, rng):
        star = normalized_params(rng, n=3)
        other = normalized_params(rng, n=4)
        with pytest.raises(ValueError):
            param_error_boltzmann(other, star)

    def test_unnormalized_reference_rejected(self, rng):
        star = normalized_params(rng)
        bad_star = BoltzmannParams(star.upper_tri_m, star.b, star.c + 1.0)
        with pytest.raises(ValueError):
            param_error_boltzmann(star, bad_star)


class TestPoeAlignment:
    def test_perfect_recovery_with_permutation_and_signs(self, rng):
        B_star = rng.standard_normal((4, 4))
        perm = [2, 0, 3, 1]
        signs = np.array([1.0, -1.0, -1.0, 1.0])
        B_hat = np.vstack(
            [signs[:, None] * B_star.T[perm], np.zeros((4, 4))]
        )
        assert poe_alignment_error(B_hat, B_star) < 1e-12

    def test_small_perturbation_first_order(self, rng):
        E = 1e-3 * rng.standard_normal((4, 4))
        B_hat = np.vstack([np.eye(4) + E, np.zeros((2, 4))])
        err = poe_alignment_error(B_hat, np.eye(4))
        assert err == pytest.approx(float(np.linalg.norm(E)), rel=1e-9)

    def test_matches_exhaustive_triple_enumeration_oracle(self, rng):
        K, n = 6, 3
        B_star = rng.standard_normal((n, n)) + np.eye(n)
        B_hat = rng.standard_normal((K, n))
        R = B_hat @ np.linalg.inv(B_star).T
        best = np.inf
        for rows in itertools.permutations(range(K), n):
            for signs in itertools.product((-1.0, 1.0), repeat=n):
                total = 0.0
                used = set(rows)
                for j, (k, s) in enumerate(zip(rows, signs)):
                    e = np.zeros(n)
                    e[j] = 1.0
                    total += float(np.sum((s * R[k] - e) ** 2))
                for k in range(K):
                    if k not in used:
                        total += float(np.sum(R[k] ** 2))
                best = min(best, total)
        assert poe_alignment_error(B_hat, B_star) == pytest.approx(
            math.sqrt(best), rel=1e-12
        )

    def test_fewer_estimated_than_true_rejected(self, rng):
        with pytest.raises(ValueError):
            poe_alignment_error(rng.standard_normal((2, 3)), np.eye(3))

    def test_singular_reference_rejected(self, rng):
        with pytest.raises(ValueError):
            poe_alignment_error(rng.standard_normal((4, 3)), np.ones((3, 3)))

    def test_matched_rows_identify_the_permutation(self, rng):
        B_star = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        perm = [1, 2, 0]
        B_hat = np.vstack([B_star.T[perm], 1e-3 * rng.standard_normal((2, 3))])
        alignment = poe_alignment(B_hat, B_star)
        assert [alignment.matched_rows[j] for j in perm] == [0, 1, 2]


class TestRunFig1:
    def test_row_count_contract(self, tmp_path):
        cfg = Fig1Config(
            sample_sizes=(500,), trials=1, methods=("nce_bernoulli",), master_seed=3
        )
        result = run_fig1(cfg)
        assert len(result.records) == 1
        assert len(result.summary) == 1
        csv_path = tmp_path / "mini.csv"
        write_fig1_csv(result, csv_path)
        lines = csv_path.read_text().splitlines()
        assert lines[0] == FIG1_HEADER
        assert len(lines) == 2

    def test_deterministic_records(self):
        cfg = Fig1Config(sample_sizes=(500,), trials=2, methods=("nce_bernoulli",), master_seed=9)
        a = run_fig1(cfg)
        b = run_fig1(cfg)
        assert [r.error for r in a.records] == [r.error for r in b.records]

    def test_all_methods_produce_usable_errors(self):
        cfg = Fig1Config(sample_sizes=(500,), trials=2, master_seed=5)
        result = run_fig1(cfg)
        assert len(result.records) == 8
        for r in result.records:
            assert r.usable
            assert r.error > 0

    def test_error_shrinks_with_sample_size(self):
        cfg = Fig1Config(
            sample_sizes=(500, 4000), trials=3, methods=("nce_bernoulli",), master_seed=11
        )
        result = run_fig1(cfg)
        means = {T_d: m for _, T_d, m in result.summary}
        assert means[4000] < means[500]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            Fig1Config(sample_sizes=(500, 500))
        with pytest.raises(ValueError):
            Fig1Config(trials=0)
        with pytest.raises(ValueError):
            Fig1Config(methods=("nce_bernoulli", "unknown"))


class TestRunFig2:
    def test_smoke_run_and_summary(self):
        cfg = Fig2Config(T_d=1500, trials=1, group_sizes=(4,), master_seed=2)
        result = run_fig2(cfg)
        assert len(result.records) == 1
        record = result.records[0]
        assert record.usable
        assert record.norm_ratio is not None
        (m, med, q1, q3) = result.summary[0]
        assert m == 4
        assert q1 <= med <= q3

    def test_config_validation(self):
        with pytest.raises(ValueError):
            Fig2Config(group_sizes=(3,))
        with pytest.raises(ValueError):
            Fig2Config(trials=0)


class TestCsvFormat:
    def test_fig1_float_formatting_twelve_significant_digits(self, tmp_path):
        cfg = Fig1Config(
            sample_sizes=(500,), trials=1, methods=("nce_bernoulli",), master_seed=3
        )
        result = run_fig1(cfg)
        path = tmp_path / "fmt.csv"
        write_fig1_csv(result, path)
        error_field = path.read_text().splitlines()[1].split(",")[3]
        assert float(error_field) == pytest.approx(result.records[0].error, rel=1e-11)
        assert len(error_field.replace(".", "").replace("-", "").lstrip("0")) <= 12

    def test_fig1_summary_schema(self, tmp_path):
        cfg = Fig1Config(
            sample_sizes=(500,), trials=1, methods=("nce_bernoulli",), master_seed=3
        )
        result = run_fig1(cfg)
        path = tmp_path / "sum.csv"
        write_fig1_summary_csv(result, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "method,sample_size,mean_log10_error"
        assert lines[1].startswith("nce_bernoulli,500,")

    def test_fig2_header(self, tmp_path):
        cfg = Fig2Config(T_d=1500, trials=1, group_sizes=(4,), master_seed=2)
        result = run_fig2(cfg)
        path = tmp_path / "f2.csv"
        write_fig2_csv(result, path)
        assert path.read_text().splitlines()[0] == FIG2_HEADER

    def test_wall_ms_zero_by_default_measured_with_timing(self, tmp_path):
        cfg = Fig1Config(
            sample_sizes=(500,), trials=1, methods=("nce_bernoulli",), master_seed=3
        )
        result = run_fig1(cfg)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_fig1_csv(result, a, timing=False)
        write_fig1_csv(result, b, timing=True)
        assert a.read_text().splitlines()[1].endswith(",0")
        assert float(b.read_text().splitlines()[1].split(",")[-1]) > 0.0
