import numpy as np
import pytest

from protoanneal.divergence import (
    DivergenceKind,
    DomainError,
    bregman_eval,
    pairwise_divergence,
    phi_second_derivative,
    scaled_dissimilarity,
)

SE = DivergenceKind.SQUARED_EUCLIDEAN
KL = DivergenceKind.GENERALIZED_KL


class TestBregmanEval:
    def test_identity_case(self):
        assert bregman_eval(SE, [3.0, -1.0], [3.0, -1.0]) == 0.0

    def test_squared_euclidean_direct(self):
        # ||x - mu||^2 for x=[1,2], mu=[0,0]
        assert bregman_eval(SE, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(5.0)

    def test_generalized_kl_direct(self):
        # <x, log x - log mu> - <1, x - mu> at x=[1], mu=[e] is e - 2
        assert bregman_eval(KL, [1.0], [np.e]) == pytest.approx(np.e - 2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            bregman_eval(SE, [1.0, 2.0], [1.0])

    def test_kl_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            bregman_eval(KL, [1.0, 0.0], [1.0, 1.0])
        with pytest.raises(DomainError):
            bregman_eval(KL, [1.0], [-2.0])

    def test_nonnegativity_and_identity(self):
        # 1000 seeded pairs; zero iff the arguments coincide.
        rng = np.random.default_rng(12345)
        for _ in range(1000):
            d = rng.integers(1, 6)
            x = rng.normal(size=d)
            mu = rng.normal(size=d)
            val = bregman_eval(SE, x, mu)
            assert val >= 0.0
            if not np.array_equal(x, mu):
                assert val > 0.0
            assert bregman_eval(SE, x, x) == 0.0
            xp, mp = np.abs(x) + 0.1, np.abs(mu) + 0.1
            kl = bregman_eval(KL, xp, mp)
            assert kl >= -1e-12
            assert bregman_eval(KL, xp, xp) == pytest.approx(0.0, abs=1e-12)

    def test_convexity_in_first_argument(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            d = rng.integers(1, 5)
            x1, x2, mu = rng.normal(size=(3, d))
            t = rng.uniform()
            lhs = bregman_eval(SE, t * x1 + (1 - t) * x2, mu)
            rhs = t * bregman_eval(SE, x1, mu) + (1 - t) * bregman_eval(SE, x2, mu)
            assert lhs <= rhs + 1e-9
            p1, p2, pm = np.abs(x1) + 0.1, np.abs(x2) + 0.1, np.abs(mu) + 0.1
            lhs = bregman_eval(KL, t * p1 + (1 - t) * p2, pm)
            rhs = t * bregman_eval(KL, p1, pm) + (1 - t) * bregman_eval(KL, p2, pm)
            assert lhs <= rhs + 1e-9


class TestCurvature:
    def test_squared_euclidean_constant(self):
        assert phi_second_derivative(SE, [5.0, 5.0]).tolist() == [2.0, 2.0]
        # curvature is independent of mu
        assert phi_second_derivative(SE, [0.0]).tolist() == [2.0]

    def test_generalized_kl_reciprocal(self):
        np.testing.assert_allclose(
            phi_second_derivative(KL, [0.5, 2.0]), [2.0, 0.5]
        )

    def test_kl_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            phi_second_derivative(KL, [1.0, 0.0])

    @pytest.mark.parametrize("kind", [SE, KL])
    def test_gradient_identity(self, kind):
        # d/dmu d_phi(x, mu) must equal -phi''(mu) * (x - mu) per coordinate;
        # checked against central finite differences.
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = rng.integers(1, 5)
            if kind is SE:
                x, mu = rng.normal(size=(2, d))
            else:
                x, mu = rng.uniform(0.2, 3.0, size=(2, d))
            analytic = -phi_second_derivative(kind, mu) * (x - mu)
            h = 1e-6
            for j in range(d):
                up, dn = mu.copy(), mu.copy()
                up[j] += h
                dn[j] -= h
                fd = (bregman_eval(kind, x, up) - bregman_eval(kind, x, dn)) / (2 * h)
                assert fd == pytest.approx(analytic[j], rel=1e-5, abs=1e-7)


class TestScaledDissimilarity:
    def test_unit_factor(self):
        assert scaled_dissimilarity(SE, [1.0], [0.0], 0.5) == pytest.approx(1.0)

    def test_zero_divergence(self):
        assert scaled_dissimilarity(SE, [1.0], [1.0], 0.9) == 0.0

    def test_factor_three(self):
        assert scaled_dissimilarity(SE, [1.0], [0.0], 0.25) == pytest.approx(3.0)

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.2, 1.5])
    def test_lambda_out_of_range(self, lam):
        with pytest.raises(ValueError):
            scaled_dissimilarity(SE, [1.0], [0.0], lam)


class TestPairwise:
    def test_matches_scalar(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(0.2, 2.0, size=(10, 3))
        M = rng.uniform(0.2, 2.0, size=(4, 3))
        for kind in (SE, KL):
            mat = pairwise_divergence(kind, X, M)
            for i in range(10):
                for j in range(4):
                    assert mat[i, j] == pytest.approx(
                        bregman_eval(kind, X[i], M[j]), rel=1e-12, abs=1e-12
                    )
