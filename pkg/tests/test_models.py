import numpy as np
import pytest
from scipy.integrate import quad

from idad import models, rng as rngmod
from idad import tensor as T
from idad.models import base as model_base


class TestPriors:
    def test_locfin_prior_is_standard_normal(self):
        model = models.LocationFindingModel()
        n = 40000
        draws = model.sample_prior(n, rngmod.stream(0, "prior"))
        assert draws.shape == (n, 4)
        assert np.all(np.abs(draws.mean(axis=0)) < 5.0 / np.sqrt(n))
        assert np.all(np.abs(draws.std(axis=0) - 1.0) < 0.02)

    def test_pk_prior_median_elimination_rate(self):
        model = models.PharmacokineticModel()
        draws = model.sample_prior(40000, rngmod.stream(1, "prior"))
        # median of a log-normal is exp of the underlying mean
        assert np.median(draws[:, 1]) == pytest.approx(0.1, rel=0.02)
        assert np.median(draws[:, 0]) == pytest.approx(1.0, rel=0.02)
        assert np.median(draws[:, 2]) == pytest.approx(20.0, rel=0.02)

    def test_sir_prior_median_infection_rate(self):
        model = models.SIRModel()
        draws = model.sample_prior(40000, rngmod.stream(2, "prior"))
        assert np.median(draws[:, 0]) == pytest.approx(np.exp(0.5), rel=0.02)
        assert np.median(draws[:, 1]) == pytest.approx(np.exp(0.1), rel=0.02)

    def test_prior_draws_reproducible_bitwise(self):
        for model in (models.LocationFindingModel(), models.PharmacokineticModel(),
                      models.SIRModel(), models.LinearGaussianModel()):
            a = model.sample_prior(64, rngmod.stream(7, "prior"))
            b = model.sample_prior(64, rngmod.stream(7, "prior"))
            assert a.tobytes() == b.tobytes()

    def test_prior_logpdf_normalized(self):
        # spot-check against an independent 1-D quadrature per coordinate
        model = models.LinearGaussianModel(prior_std=1.3)
        total, _ = quad(lambda t: np.exp(model.prior_logpdf(np.array([[t]]))[0]), -12, 12)
        assert total == pytest.approx(1.0, abs=1e-8)


class TestLocationFinding:
    def test_zero_distance_intensity(self):
        model = models.LocationFindingModel(sources=1)
        theta = np.array([[0.4, -0.2]])
        mu = model.total_intensity(theta, T.constant(theta.copy())).data
        assert mu[0, 0] == pytest.approx(0.1 + 1.0 / 1e-4, rel=1e-12)

    def test_intensity_floor(self):
        model = models.LocationFindingModel()
        rng = np.random.default_rng(0)
        theta = model.sample_prior(128, rng)
        xi = T.constant(rng.uniform(-6, 6, size=(128, 2)))
        assert np.all(model.total_intensity(theta, xi).data > model.base_signal)

    def test_log_likelihood_at_mean(self):
        model = models.LocationFindingModel()
        theta = np.array([0.5, 0.5, -0.5, -0.5])
        xi = np.array([0.3, 0.1])
        mu = model.total_intensity(theta[None, :], T.constant(xi[None, :])).data[0, 0]
        value = model.log_likelihood(np.log(mu), theta, xi)
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi * 0.25), abs=1e-12)

    def test_simulate_is_log_mu_plus_noise(self):
        model = models.LocationFindingModel()
        theta = model.sample_prior(8, np.random.default_rng(1))
        xi = T.constant(np.zeros((8, 2)))
        eps = np.full((8, 1), 2.0)
        y = model.simulate(theta, xi, None, eps).data
        mu = model.total_intensity(theta, xi).data
        np.testing.assert_allclose(y, np.log(mu) + 0.5 * 2.0, rtol=1e-12)


class TestPharmacokinetic:
    def test_zero_time_observation_is_additive_noise(self):
        model = models.PharmacokineticModel()
        theta = model.sample_prior(4, np.random.default_rng(2))
        eps = np.random.default_rng(3).standard_normal((4, 2))
        y = model.simulate(theta, T.constant(np.zeros((4, 1))), None, eps).data
        np.testing.assert_allclose(y[:, 0], np.sqrt(0.1) * eps[:, 1], atol=1e-12)

    def test_concentration_at_prior_median(self):
        # frozen from an independent high-precision evaluation (mpmath, 50 digits)
        model = models.PharmacokineticModel()
        theta = np.array([[1.0, 0.1, 20.0]])
        z = model.concentration(theta, T.constant(np.array([[1.0]]))).data[0, 0]
        assert z == pytest.approx(11.932399485878161, rel=1e-12)

    def test_observation_variance_floor(self):
        model = models.PharmacokineticModel()
        theta = model.sample_prior(64, np.random.default_rng(4))
        for xi in (0.1, 1.0, 12.0, 23.9):
            z = model.concentration(theta, T.constant(np.full((64, 1), xi))).data
            assert np.all(0.01 * z * z + 0.1 >= 0.1)

    def test_likelihood_integrates_to_one(self):
        model = models.PharmacokineticModel()
        theta = np.array([1.1, 0.12, 19.0])
        xi = np.array([2.5])

        def density(y):
            return np.exp(model.log_likelihood(np.array([y]), theta, xi))

        z = model.concentration(theta[None, :], T.constant(xi[None, :])).data[0, 0]
        sd = np.sqrt(0.01 * z * z + 0.1)
        total, _ = quad(density, z - 12 * sd, z + 12 * sd, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_design_outside_box_rejected(self):
        model = models.PharmacokineticModel()
        theta = model.sample_prior(1, np.random.default_rng(0))
        with pytest.raises(ValueError, match="design outside box"):
            model.simulate(theta, T.constant(np.array([[25.0]])), None, np.zeros((1, 2)))


class TestLinearGaussian:
    def test_log_likelihood_at_mean(self):
        model = models.LinearGaussianModel()
        value = model.log_likelihood(np.array([0.7 * 1.0]), np.array([0.7]), np.array([1.0]))
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_exact_eig_zero_design(self):
        assert models.LinearGaussianModel().exact_eig([0.0]) == 0.0

    def test_exact_eig_half_log_two(self):
        assert models.LinearGaussianModel().exact_eig([1.0]) == pytest.approx(
            0.34657359027997264, rel=1e-12
        )

    def test_exact_eig_matches_nested_monte_carlo(self):
        model = models.LinearGaussianModel()
        rng = np.random.default_rng(123)
        n, m = 4000, 4000
        theta = model.sample_prior(n, rng)[:, 0]
        y = theta + rng.standard_normal(n)  # xi = 1
        contrast = model.sample_prior(m, rng)[:, 0]

        def logpdf(yy, th):
            return -0.5 * (yy - th) ** 2 - 0.5 * np.log(2 * np.pi)

        joint = logpdf(y, theta)
        marg = np.zeros(n)
        for i in range(n):
            marg[i] = np.logaddexp.reduce(logpdf(y[i], contrast)) - np.log(m)
        oracle = float(np.mean(joint - marg))
        assert model.exact_eig([1.0]) == pytest.approx(oracle, abs=0.02)

    def test_eig_snr_scale_invariance(self):
        a = models.LinearGaussianModel(noise_std=2.0).exact_eig([2.0])
        b = models.LinearGaussianModel(noise_std=1.0).exact_eig([1.0])
        assert a == pytest.approx(b, rel=1e-12)

    def test_posterior_matches_direct_bayes(self):
        model = models.LinearGaussianModel(prior_std=1.5, noise_std=0.7)
        designs = np.array([0.5, -1.2, 2.0])
        outcomes = np.array([0.4, -1.0, 2.2])
        mean, std = model.posterior(designs, outcomes)
        prec = 1 / 1.5 ** 2 + np.sum(designs ** 2) / 0.7 ** 2
        np.testing.assert_allclose(
            [mean, std],
            [(designs @ outcomes / 0.7 ** 2) / prec, 1 / np.sqrt(prec)],
            rtol=1e-12,
        )


class TestEulerMaruyama:
    def test_initial_infected_preserved(self):
        theta = np.array([[1.5, 0.5]])
        eps = np.zeros((1, 100, 2))
        grid = models.euler_maruyama(theta, 0.01, 1.0, eps)
        assert grid.states[0, 0, 1] == 2.0
        assert grid.states[0, 0, 0] == 498.0

    def test_zero_noise_matches_independent_euler(self):
        theta = np.array([[2.0, 0.5]])
        steps = 500
        eps = np.zeros((1, steps, 2))
        grid = models.euler_maruyama(theta, 0.01, 5.0, eps)
        s, i = 498.0, 2.0
        for _ in range(steps):
            inf = 2.0 * s * i / 500.0
            rec = 0.5 * i
            s, i = s - inf * 0.01, i + (inf - rec) * 0.01
        assert grid.states[0, -1, 0] == pytest.approx(s, rel=1e-12)
        assert grid.states[0, -1, 1] == pytest.approx(i, rel=1e-12)

    def test_disease_free_state_is_absorbing(self):
        theta = np.array([[2.0, 0.5]])
        eps = np.random.default_rng(5).standard_normal((1, 200, 2))
        grid = models.euler_maruyama(theta, 0.01, 2.0, eps, x0=(500.0, 0.0))
        np.testing.assert_array_equal(grid.states[0, :, 1], 0.0)
        np.testing.assert_array_equal(grid.states[0, :, 0], 500.0)

    def test_negative_time_step_rejected(self):
        with pytest.raises(ValueError):
            models.euler_maruyama(np.array([[1.0, 0.5]]), -0.01, 1.0, np.zeros((1, 1, 2)))

    def test_state_bounds_hold_on_random_paths(self):
        rng = rngmod.stream(11, "em")
        model = models.SIRModel()
        theta = model.sample_prior(32, rng)
        eps = rng.standard_normal((32, 1000, 2))
        grid = models.euler_maruyama(theta, 0.01, 10.0, eps)
        assert np.all(grid.states >= 0.0)
        assert np.all(grid.states.sum(axis=2) <= 500.0 + 1e-9)

    def test_paths_reproducible_from_seed(self):
        a = models.build_path_bank(8, seed=3)
        b = models.build_path_bank(8, seed=3)
        assert a.infected.tobytes() == b.infected.tobytes()
        assert a.theta.tobytes() == b.theta.tobytes()


class TestObservePath:
    def test_grid_point_is_exact(self):
        times = np.arange(5) * 0.01
        values = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
        assert models.observe_path(values, times, 0.02) == 4.0

    def test_midpoint_is_average(self):
        times = np.arange(3) * 0.01
        values = np.array([2.0, 6.0, 10.0])
        assert models.observe_path(values, times, 0.015) == pytest.approx(8.0)

    def test_outside_horizon_rejected(self):
        with pytest.raises(ValueError, match="horizon"):
            models.observe_path(np.ones(3), np.arange(3) * 0.01, 0.05)

    def test_simulate_gradient_is_local_slope(self):
        bank = models.build_path_bank(4, seed=9)
        model = models.SIRModel(bank=bank)
        theta, ctx = model.draw_joint(4, rngmod.stream(0, "draw"))
        tau = np.array([[10.0 + 0.005], [25.0 + 0.004], [3.0 + 0.007], [77.0 + 0.002]])
        xi = T.parameter(tau)
        with T.Tape() as tape:
            y = model.simulate(theta, xi, ctx, np.zeros((4, 0)))
            grads = tape.backward(T.sum_(y))
        j = (tau[:, 0] / 0.01).astype(int)
        rows = np.arange(4)
        slope = (ctx["paths"][rows, j + 1] - ctx["paths"][rows, j]) / 0.01
        np.testing.assert_allclose(grads[xi][:, 0], slope, atol=1e-8)


class TestLikelihoodAvailability:
    def test_sir_has_no_likelihood(self):
        with pytest.raises(models.LikelihoodUnavailable):
            models.SIRModel().log_likelihood(np.array([1.0]), np.array([1.0, 0.5]), np.array([1.0]))

    def test_registry(self):
        assert models.model_ids() == ["lg", "locfin", "pk", "sir"]
        assert models.get_model("pk").model_id == "pk"
        with pytest.raises(KeyError, match="unknown model"):
            models.get_model("nope")


class TestReparameterizedGradients:
    """d(outcome)/d(design) through the tape vs central differences."""

    def _check(self, model, theta, ctx, eps, xi0):
        xi = T.parameter(xi0)
        with T.Tape() as tape:
            y = model.simulate(theta, xi, ctx, eps)
            grads = tape.backward(T.sum_(y))

        def f(x):
            return T.sum_(model.simulate(theta, x, ctx, eps)).item()

        fd = T.finite_diff_grad(f, xi, h=1e-6 if model.model_id == "sir" else 1e-5)
        scale = np.max(np.abs(fd)) + 1e-12
        assert np.max(np.abs(grads[xi] - fd)) / scale < 1e-5

    def test_locfin(self):
        model = models.LocationFindingModel()
        rng = np.random.default_rng(0)
        self._check(model, model.sample_prior(6, rng), None,
                    rng.standard_normal((6, 1)), rng.normal(size=(6, 2)))

    def test_pk(self):
        model = models.PharmacokineticModel()
        rng = np.random.default_rng(1)
        self._check(model, model.sample_prior(6, rng), None,
                    rng.standard_normal((6, 2)), rng.uniform(0.5, 23, size=(6, 1)))

    def test_lg(self):
        model = models.LinearGaussianModel()
        rng = np.random.default_rng(2)
        self._check(model, model.sample_prior(6, rng), None,
                    rng.standard_normal((6, 1)), rng.uniform(-1.9, 1.9, size=(6, 1)))

    def test_sir_away_from_knots(self):
        bank = models.build_path_bank(6, seed=4)
        model = models.SIRModel(bank=bank)
        theta, ctx = model.draw_joint(6, rngmod.stream(1, "draw"))
        xi0 = (np.random.default_rng(3).uniform(5, 95, size=(6, 1)) // 0.01) * 0.01 + 0.005
        self._check(model, theta, ctx, np.zeros((6, 0)), xi0)


class TestPathBankPersistence:
    def test_round_trip(self, tmp_path):
        bank = models.build_path_bank(5, seed=21)
        target = str(tmp_path / "paths.bank")
        models.save_path_bank(target, bank)
        loaded = models.load_path_bank(target)
        assert loaded.infected.tobytes() == bank.infected.tobytes()
        assert loaded.theta.tobytes() == bank.theta.tobytes()
        assert loaded.seed == 21 and loaded.population == 500.0

    def test_bad_magic_rejected(self, tmp_path):
        bank = models.build_path_bank(2, seed=1)
        target = str(tmp_path / "paths.bank")
        models.save_path_bank(target, bank)
        raw = bytearray(open(target, "rb").read())
        raw[0] ^= 0xFF
        open(target, "wb").write(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            models.load_path_bank(target)

    def test_truncation_rejected(self, tmp_path):
        bank = models.build_path_bank(2, seed=1)
        target = str(tmp_path / "paths.bank")
        models.save_path_bank(target, bank)
        raw = open(target, "rb").read()
        open(target, "wb").write(raw[:-16])
        with pytest.raises(ValueError, match="truncated"):
            models.load_path_bank(target)


def test_gaussian_logpdf_matches_scipy():
    from scipy.stats import norm

    resid = T.constant(np.array([-1.5, 0.0, 2.0]))
    ours = model_base.gaussian_logpdf(resid, 0.64).data
    np.testing.assert_allclose(ours, norm.logpdf([-1.5, 0.0, 2.0], scale=0.8), rtol=1e-12)
