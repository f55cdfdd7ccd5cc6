import numpy as np
import pytest

from conftest import enumerate_bernoulli_joint, make_tiny_model, random_spd

from spectral_rbm.model import (
    LOG_2PI,
    CheckpointError,
    Covariance,
    OracleScaleError,
    RbmParams,
    all_binary_states,
    energy,
    exact_log_partition,
    exact_loss,
    hidden_probs,
    load_checkpoint,
    neg_data_term,
    reconstruction_sse,
    save_checkpoint,
    visible_conditional,
)
from spectral_rbm.gradient import exact_gradients


def zero_params(family="bernoulli", n_v=3, n_h=2, cov=None):
    return RbmParams(family, np.zeros((n_v, n_h)), np.zeros(n_v), np.zeros(n_h), cov)


class TestCovariance:
    def test_isotropic_requires_positive(self):
        with pytest.raises(ValueError):
            Covariance.isotropic(0.0)
        with pytest.raises(ValueError):
            Covariance.isotropic(-1.0)

    def test_full_requires_symmetry(self):
        with pytest.raises(ValueError):
            Covariance.full(np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_full_requires_positive_definite(self):
        with pytest.raises(ValueError):
            Covariance.full(np.array([[1.0, 0.0], [0.0, -0.5]]))

    def test_identity_no_payload(self):
        with pytest.raises(ValueError):
            Covariance("identity", 1.0)

    def test_diagonal_log_payload_always_valid_precision(self):
        cov = Covariance.diagonal_log([-40.0, 0.0, 40.0])
        assert np.all(np.diag(cov.precision_matrix(3)) > 0)

    def test_logdet_and_eig_range_full(self):
        rng = np.random.default_rng(0)
        c = random_spd(rng, 4, 0.5, 2.0)
        cov = Covariance.full(np.linalg.inv(c))
        assert cov.logdet_cov(4) == pytest.approx(np.linalg.slogdet(c)[1], abs=1e-10)
        lo, hi = cov.cov_eig_range(4)
        ev = np.linalg.eigvalsh(c)
        assert lo == pytest.approx(ev[0], rel=1e-9)
        assert hi == pytest.approx(ev[-1], rel=1e-9)


class TestParamsValidation:
    def test_bernoulli_rejects_covariance(self):
        with pytest.raises(ValueError):
            RbmParams("bernoulli", np.zeros((2, 2)), np.zeros(2), np.zeros(2), Covariance.identity())

    def test_gaussian_requires_covariance(self):
        with pytest.raises(ValueError):
            RbmParams("gaussian", np.zeros((2, 2)), np.zeros(2), np.zeros(2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            RbmParams("bernoulli", np.zeros((2, 2)), np.zeros(3), np.zeros(2))

    def test_nonfinite(self):
        w = np.zeros((2, 2))
        w[0, 0] = np.inf
        with pytest.raises(ValueError):
            RbmParams("bernoulli", w, np.zeros(2), np.zeros(2))


class TestEnergy:
    def test_all_zero(self):
        p = zero_params()
        assert energy(p, np.zeros(3), np.zeros(2)) == 0.0

    def test_single_bilinear_term(self):
        w = np.zeros((3, 2))
        w[0, 0] = 2.0
        p = RbmParams("bernoulli", w, np.zeros(3), np.zeros(2))
        v = np.array([1.0, 0.0, 0.0])
        h = np.array([1.0, 0.0])
        assert energy(p, v, h) == -2.0

    def test_gaussian_quadratic_only(self):
        p = zero_params("gaussian", cov=Covariance.identity())
        v = np.array([1.0, -2.0, 0.5])
        assert energy(p, v, np.zeros(2)) == pytest.approx(0.5 * np.sum(v * v))

    def test_dimension_mismatch(self):
        p = zero_params()
        with pytest.raises(ValueError):
            energy(p, np.zeros(4), np.zeros(2))

    def test_nonbinary_hidden_rejected(self):
        p = zero_params()
        with pytest.raises(ValueError):
            energy(p, np.zeros(3), np.array([0.5, 0.0]))


class TestHiddenProbs:
    def test_zero_params_half(self):
        p = zero_params()
        np.testing.assert_allclose(hidden_probs(p, np.zeros(3)), 0.5)

    def test_identity_covariance_matches_bernoulli_preactivation(self):
        bp = make_tiny_model("bernoulli", 3)
        gp = RbmParams("gaussian", bp.W, bp.b, bp.a, Covariance.identity())
        v = np.random.default_rng(1).standard_normal(bp.n_v)
        vb = (v > 0).astype(np.float64)
        np.testing.assert_allclose(hidden_probs(gp, vb), hidden_probs(bp, vb), atol=1e-14)

    def test_matches_enumeration(self, tiny_models):
        # p(h_k=1|v) from the joint: sum over h with h_k=1 of exp(-E), normalized
        p = make_tiny_model("bernoulli", 21, n_v=3, n_h=2)
        v = np.array([1.0, 0.0, 1.0])
        H = all_binary_states(p.n_h)
        w = np.array([np.exp(-energy(p, v, h)) for h in H])
        w /= w.sum()
        expected = (H * w[:, None]).sum(axis=0)
        np.testing.assert_allclose(hidden_probs(p, v), expected, atol=1e-10)

    def test_matches_enumeration_gaussian(self):
        p = make_tiny_model("full", 22, n_v=3, n_h=2)
        v = np.random.default_rng(2).standard_normal(3)
        H = all_binary_states(p.n_h)
        w = np.array([np.exp(-energy(p, v, h)) for h in H])
        w /= w.sum()
        expected = (H * w[:, None]).sum(axis=0)
        np.testing.assert_allclose(hidden_probs(p, v), expected, atol=1e-10)


class TestVisibleConditional:
    def test_gaussian_zero_hidden_mean_is_b(self):
        p = make_tiny_model("diagonal_log", 4)
        mean, cov = visible_conditional(p, np.zeros(p.n_h))
        np.testing.assert_allclose(mean, p.b)
        assert cov is p.cov

    def test_bernoulli_zero_params(self):
        p = zero_params()
        np.testing.assert_allclose(visible_conditional(p, np.zeros(2)), 0.5)

    def test_gaussian_density_ratio(self):
        # exp(-E(v,h)) as a function of v must be proportional to the
        # N(b + Wh, C) density: equal log-ratios at random point pairs.
        p = make_tiny_model("full", 23, n_v=3, n_h=2)
        h = np.array([1.0, 0.0])
        mean, cov = visible_conditional(p, h)
        prec = cov.precision_matrix(3)
        rng = np.random.default_rng(3)
        for _ in range(5):
            v1, v2 = rng.standard_normal(3), rng.standard_normal(3)
            lhs = -energy(p, v1, h) - (-energy(p, v2, h))
            rhs = -0.5 * (v1 - mean) @ prec @ (v1 - mean) + 0.5 * (v2 - mean) @ prec @ (v2 - mean)
            assert lhs == pytest.approx(rhs, abs=1e-9)


class TestNegDataTerm:
    def test_zero_params(self):
        p = zero_params()
        x = np.array([[0.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        assert neg_data_term(p, x) == pytest.approx(-2 * np.log(2.0))

    def test_gaussian_zero_coupling(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal(3)
        p = RbmParams("gaussian", np.zeros((3, 2)), b, np.zeros(2), Covariance.identity())
        x = rng.standard_normal((5, 3))
        expected = 0.5 * np.mean(np.sum((x - b) ** 2, axis=1)) - 2 * np.log(2.0)
        assert neg_data_term(p, x) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("kind", ["bernoulli", "full"])
    def test_matches_hidden_enumeration(self, kind):
        p = make_tiny_model(kind, 24, n_v=4, n_h=3)
        rng = np.random.default_rng(5)
        if kind == "bernoulli":
            x = (rng.random((6, 4)) < 0.5).astype(np.float64)
        else:
            x = rng.standard_normal((6, 4))
        H = all_binary_states(p.n_h)
        vals = []
        for v in x:
            s = [-energy(p, v, h) for h in H]
            m = np.max(s)
            vals.append(m + np.log(np.sum(np.exp(np.asarray(s) - m))))
        expected = -np.mean(vals)
        assert neg_data_term(p, x) == pytest.approx(expected, abs=1e-10)

    def test_concave_in_a_and_w(self, tiny_models):
        # second difference along random directions stays <= tolerance
        rng = np.random.default_rng(6)
        for kind in ("bernoulli", "diagonal_log"):
            p = tiny_models[kind]
            x = (rng.random((6, p.n_v)) < 0.5).astype(float) if kind == "bernoulli" else rng.standard_normal((6, p.n_v))
            for _ in range(10):
                da = rng.standard_normal(p.n_h)
                second = (
                    neg_data_term(p.replace(a=p.a + da), x)
                    - 2 * neg_data_term(p, x)
                    + neg_data_term(p.replace(a=p.a - da), x)
                )
                assert second <= 1e-9
                dw = rng.standard_normal(p.W.shape)
                second = (
                    neg_data_term(p.replace(W=p.W + dw), x)
                    - 2 * neg_data_term(p, x)
                    + neg_data_term(p.replace(W=p.W - dw), x)
                )
                assert second <= 1e-9

    def test_exactly_quadratic_in_b(self, tiny_models):
        # third finite difference vanishes
        rng = np.random.default_rng(7)
        for kind in ("bernoulli", "full"):
            p = tiny_models[kind]
            x = (rng.random((6, p.n_v)) < 0.5).astype(float) if kind == "bernoulli" else rng.standard_normal((6, p.n_v))
            for _ in range(5):
                d = 0.3 * rng.standard_normal(p.n_v)

                def g(t):
                    return neg_data_term(p.replace(b=p.b + t * d), x)

                third = g(3.0) - 3 * g(2.0) + 3 * g(1.0) - g(0.0)
                assert abs(third) <= 1e-8


class TestExactLogPartition:
    def test_bernoulli_zero_params(self):
        assert exact_log_partition(zero_params(n_v=3, n_h=2)) == pytest.approx(5 * np.log(2.0))

    def test_gaussian_zero_params(self):
        p = zero_params("gaussian", n_v=3, n_h=2, cov=Covariance.identity())
        assert exact_log_partition(p) == pytest.approx(2 * np.log(2.0) + 1.5 * LOG_2PI)

    def test_bernoulli_matches_joint_enumeration(self):
        p = make_tiny_model("bernoulli", 25, n_v=3, n_h=2)
        _, probs_unused = enumerate_bernoulli_joint(p)  # sanity that it enumerates
        V = all_binary_states(p.n_v)
        H = all_binary_states(p.n_h)
        s = [-energy(p, v, h) for v in V for h in H]
        m = np.max(s)
        expected = m + np.log(np.sum(np.exp(np.asarray(s) - m)))
        assert exact_log_partition(p) == pytest.approx(expected, abs=1e-10)

    def test_wide_bernoulli_uses_visible_enumeration(self):
        p = make_tiny_model("bernoulli", 26, n_v=2, n_h=5)
        V = all_binary_states(p.n_v)
        H = all_binary_states(p.n_h)
        s = [-energy(p, v, h) for v in V for h in H]
        m = np.max(s)
        expected = m + np.log(np.sum(np.exp(np.asarray(s) - m)))
        assert exact_log_partition(p) == pytest.approx(expected, abs=1e-10)

    def test_gaussian_matches_quadrature(self):
        # independent oracle: the energy formula re-stated here, evaluated on
        # a dense 2-d grid and integrated by trapezoid
        p = make_tiny_model("full", 27, n_v=2, n_h=2, scale=0.4)
        grid = np.linspace(-9.0, 9.0, 1201)
        gx, gy = np.meshgrid(grid, grid, indexing="ij")
        V = np.stack([gx.ravel(), gy.ravel()], axis=1)
        prec = p.cov.precision_matrix(2)
        D = V - p.b
        quad = 0.5 * np.sum((D @ prec) * D, axis=1)
        total = np.zeros(V.shape[0])
        for h in all_binary_states(p.n_h):
            wh = p.W @ h
            total += np.exp((V @ prec) @ wh - quad + h @ p.a)
        integrand = total.reshape(gx.shape)
        inner = np.trapezoid(integrand, grid, axis=1)
        fq = np.log(np.trapezoid(inner, grid))
        assert exact_log_partition(p) == pytest.approx(fq, rel=1e-4)

    def test_density_normalizes_bernoulli(self):
        p = make_tiny_model("bernoulli", 28, n_v=3, n_h=3)
        logz = exact_log_partition(p)
        _, probs = enumerate_bernoulli_joint(p)
        V = all_binary_states(p.n_v)
        H = all_binary_states(p.n_h)
        total = sum(np.exp(-energy(p, v, h) - logz) for v in V for h in H)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_gaussian_cap(self):
        p = zero_params("gaussian", n_v=2, n_h=21, cov=Covariance.identity())
        with pytest.raises(OracleScaleError):
            exact_log_partition(p)

    def test_bernoulli_joint_cap(self):
        p = zero_params(n_v=20, n_h=5)
        with pytest.raises(OracleScaleError):
            exact_log_partition(p)


class TestExactLoss:
    def test_zero_params_any_dataset(self):
        p = zero_params(n_v=3, n_h=2)
        x = np.array([[1.0, 0.0, 1.0]])
        assert exact_loss(p, x) == pytest.approx(3 * np.log(2.0))

    def test_decreases_under_exact_descent(self):
        p = make_tiny_model("bernoulli", 29, n_v=4, n_h=3, scale=0.3)
        rng = np.random.default_rng(8)
        x = (rng.random((10, 4)) < 0.5).astype(np.float64)
        prev = exact_loss(p, x)
        for _ in range(20):
            g = exact_gradients(p, x)
            p = p.replace(W=p.W - 1e-3 * g.dW, b=p.b - 1e-3 * g.db, a=p.a - 1e-3 * g.da)
            cur = exact_loss(p, x)
            assert cur < prev
            prev = cur


class TestReconstructionSse:
    def test_saturated_model_reproduces_batch(self):
        target = np.array([1.0, 0.0, 1.0, 1.0])
        p = RbmParams("bernoulli", np.zeros((4, 2)), 50.0 * (2 * target - 1), np.zeros(2))
        x = np.tile(target, (5, 1))
        assert reconstruction_sse(p, x, 0) <= 1e-10

    def test_zero_params_quarter_per_pixel(self):
        p = zero_params(n_v=8, n_h=3)
        x = (np.random.default_rng(9).random((20, 8)) < 0.5).astype(np.float64)
        # vhat is exactly 0.5 whatever the hidden draw
        assert reconstruction_sse(p, x, 1) == pytest.approx(0.25 * 8, abs=1e-12)

    def test_deterministic_under_seed(self, tiny_models):
        p = tiny_models["diagonal_log"]
        x = np.random.default_rng(10).standard_normal((6, p.n_v))
        assert reconstruction_sse(p, x, 42) == reconstruction_sse(p, x, 42)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["bernoulli", "identity", "isotropic", "diagonal_log", "full"])
    def test_round_trip_bit_exact(self, kind, tmp_path):
        p = make_tiny_model(kind, 31)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.family == p.family
        assert np.array_equal(q.W, p.W) and np.array_equal(q.b, p.b) and np.array_equal(q.a, p.a)
        if p.cov is not None:
            assert q.cov.kind == p.cov.kind
            if p.cov.kind == "isotropic":
                assert q.cov.payload == p.cov.payload
            elif p.cov.kind != "identity":
                assert np.array_equal(q.cov.payload, p.cov.payload)
        save_checkpoint(q, tmp_path / "m2.ckpt")
        assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        p = make_tiny_model("bernoulli", 32)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        p = make_tiny_model("bernoulli", 33)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_family_code(self, tmp_path):
        p = make_tiny_model("bernoulli", 34)
        path = tmp_path / "m.ckpt"
        save_checkpoint(p, path)
        blob = bytearray(path.read_bytes())
        blob[8] = 7
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
