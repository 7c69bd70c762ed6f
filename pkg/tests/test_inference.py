import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import gradient_suite
from tapegp.inference import (
    AdamState,
    Chain,
    DivergentTrajectory,
    HMCConfig,
    OptimizationError,
    adam_step,
    hmc_sample,
    leapfrog,
    minibatches,
    minimize,
    model_log_target,
    write_trace,
)
from tapegp.kernels import RBF
from tapegp.likelihoods import Gaussian
from tapegp.models import GPR, SVGP


def standard_normal(x):
    return -0.5 * float(x @ x), -x


class Quadratic:
    """Minimal stand-in exposing the model protocol used by ``minimize``."""

    def __init__(self, x0, nan_after=None):
        self.x = np.array(x0, dtype=np.float64)
        self.calls = 0
        self.nan_after = nan_after

    def free_state(self):
        return self.x.copy()

    def set_free_state(self, x):
        self.x = np.array(x, dtype=np.float64)

    def objective_and_grad(self, batch=None):
        self.calls += 1
        if self.nan_after is not None and self.calls > self.nan_after:
            return float("nan"), np.zeros_like(self.x)
        return -float(self.x @ self.x), -2.0 * self.x


class TestAdam:
    @pytest.mark.parametrize("g", [3.0, -0.02, 1e4])
    def test_first_step_is_signed_rate(self, g):
        state = AdamState(1, rate=0.1)
        state, delta = adam_step(state, [g])
        np.testing.assert_allclose(delta, [-0.1 * np.sign(g)], rtol=1e-6)
        assert state.t == 1

    def test_zero_gradient_is_stationary(self):
        state = AdamState(3, rate=0.5)
        for _ in range(50):
            state, delta = adam_step(state, np.zeros(3))
            np.testing.assert_array_equal(delta, 0.0)

    def test_quadratic_converges(self):
        state = AdamState(1, rate=0.1)
        x = np.array([5.0])
        for _ in range(1000):
            state, delta = adam_step(state, 2.0 * x)
            x = x + delta
        assert abs(x[0]) < 1e-2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(2), np.zeros(3))

    def test_state_not_mutated(self):
        state = AdamState(2)
        adam_step(state, np.ones(2))
        assert state.t == 0
        np.testing.assert_array_equal(state.m, 0.0)


class TestMinibatches:
    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 40), data=st.data(), seed=st.integers(0, 1000))
    def test_epochs_are_disjoint_and_sorted(self, n, data, seed):
        b = data.draw(st.integers(1, n))
        stream = minibatches(n, b, seed)
        per_epoch = n // b
        for _ in range(2):
            seen = []
            for _ in range(per_epoch):
                batch = next(stream)
                assert batch.size == b
                assert np.all(np.diff(batch) > 0)
                seen.extend(batch.tolist())
            assert len(set(seen)) == len(seen)

    def test_full_batch_is_identity(self):
        stream = minibatches(7, 7, 3)
        for _ in range(3):
            np.testing.assert_array_equal(next(stream), np.arange(7))

    @pytest.mark.parametrize("b", [0, 8])
    def test_bad_size(self, b):
        with pytest.raises(ValueError):
            next(minibatches(7, b, 0))


def regression(n=20, seed=0):
    rng = np.random.default_rng(seed)
    X = np.sort(rng.uniform(0, 6, (n, 1)), axis=0)
    return X, np.sin(X) + 0.1 * rng.standard_normal((n, 1))


class TestMinimize:
    def test_gpr_improves(self):
        model = GPR(regression(), RBF(2.0, 3.0), Gaussian(1.0))
        before = model.log_marginal_likelihood()
        trace = minimize(model, 200, rate=0.05)
        assert len(trace) == 200
        assert trace[0].objective == before
        assert model.log_marginal_likelihood() >= before
        assert model.log_marginal_likelihood() > trace[-1].objective - 1e-3

    def test_same_seed_bitwise(self):
        traces, states = [], []
        for _ in range(2):
            X, Y = regression(30)
            model = SVGP((X, Y), RBF(), Gaussian(0.3), X[::6])
            traces.append([r.objective for r in minimize(model, 30, rate=0.02, batch_size=7, seed=11)])
            states.append(model.free_state())
        assert traces[0] == traces[1]
        np.testing.assert_array_equal(states[0], states[1])

    def test_different_seed_differs(self):
        out = []
        for seed in (1, 2):
            X, Y = regression(30)
            model = SVGP((X, Y), RBF(), Gaussian(0.3), X[::6])
            out.append([r.objective for r in minimize(model, 5, batch_size=7, seed=seed)])
        assert out[0] != out[1]

    def test_batch_of_everything_equals_full_batch(self):
        traces, states = [], []
        for batch_size in (None, 20):
            X, Y = regression(20)
            model = SVGP((X, Y), RBF(), Gaussian(0.3), X[::5])
            traces.append([r.objective for r in minimize(model, 25, rate=0.02, batch_size=batch_size, seed=4)])
            states.append(model.free_state())
        assert traces[0] == traces[1]
        np.testing.assert_array_equal(states[0], states[1])

    def test_non_finite_aborts_with_iteration(self):
        model = Quadratic([1.0, 2.0], nan_after=3)
        with pytest.raises(OptimizationError, match="iteration 3") as info:
            minimize(model, 10)
        assert info.value.iteration == 3

    def test_linear_algebra_failure_is_wrapped(self):
        X, Y = regression(5)
        model = GPR((X, Y), RBF(), Gaussian(0.1))

        def broken(batch=None):
            raise np.linalg.LinAlgError("boom")

        model.objective_and_grad = broken
        with pytest.raises(OptimizationError, match="iteration 0"):
            minimize(model, 3)

    def test_callback_and_resume_state(self):
        seen = []
        model = Quadratic([3.0])
        state = AdamState(1, rate=0.1)
        minimize(model, 4, state=state, callback=lambda it, v: seen.append(it))
        assert seen == [0, 1, 2, 3]

    def test_write_trace(self, tmp_path):
        trace = minimize(Quadratic([1.0]), 3, rate=0.1)
        write_trace(trace, tmp_path / "a.csv", timing=False)
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "iteration,objective"
        assert lines[1] == "0,-1"
        assert float(lines[2].split(",")[1]) == trace[1].objective
        write_trace(trace, tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == "iteration,objective,seconds"


class TestLeapfrog:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), steps=st.integers(1, 30), eps=st.floats(0.01, 0.3))
    def test_reversible_on_gaussian(self, seed, steps, eps):
        rng = np.random.default_rng(seed)
        A = np.diag(rng.uniform(0.2, 3.0, 4))
        q0, p0 = rng.standard_normal(4), rng.standard_normal(4)
        q1, p1 = leapfrog(q0, p0, eps, steps, lambda q: -A @ q)
        q2, p2 = leapfrog(q1, -p1, eps, steps, lambda q: -A @ q)
        assert np.max(np.abs(q2 - q0)) <= 1e-10
        assert np.max(np.abs(-p2 - p0)) <= 1e-10

    @pytest.mark.parametrize("name", ["gpmc", "sgpmc"])
    def test_reversible_on_model_targets(self, name):
        model = dict((n, m) for n, m, _ in gradient_suite(0))[name]
        target = model_log_target(model)
        rng = np.random.default_rng(3)
        for _ in range(3):
            q0 = model.free_state() + 0.05 * rng.standard_normal(model.free_state().size)
            p0 = rng.standard_normal(q0.size)
            q1, p1 = leapfrog(q0, p0, 0.01, 10, lambda q: target(q)[1])
            q2, p2 = leapfrog(q1, -p1, 0.01, 10, lambda q: target(q)[1])
            assert np.max(np.abs(q2 - q0)) <= 1e-10
            assert np.max(np.abs(-p2 - p0)) <= 1e-10

    def test_second_order_energy_error(self):
        A = np.diag([1.0, 2.0, 0.5])

        def energy(q, p):
            return 0.5 * q @ A @ q + 0.5 * p @ p

        q0, p0 = np.array([1.0, -0.5, 0.3]), np.array([0.2, 0.4, -1.0])
        errors = []
        for k in range(5):
            eps = 0.2 / 2**k
            q, p = leapfrog(q0, p0, eps, round(1.0 / eps), lambda q: -A @ q)
            errors.append(abs(energy(q, p) - energy(q0, p0)))
        ratios = np.array(errors[:-1]) / np.array(errors[1:])
        assert np.all(ratios >= 3.9)

    def test_zero_steps_forbidden(self):
        with pytest.raises(ValueError):
            leapfrog(np.zeros(1), np.zeros(1), 0.1, 0, lambda q: -q)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            leapfrog(np.zeros(2), np.zeros(3), 0.1, 1, lambda q: -q)

    def test_divergence(self):
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergentTrajectory):
            leapfrog(np.ones(1), np.ones(1), 1.0, 50, lambda q: q**3 * 1e100)


class TestHMC:
    def test_standard_normal_moments(self):
        chain = hmc_sample(standard_normal, np.zeros(1), HMCConfig(0.2, 10, 10500, 500, seed=0))
        assert chain.samples.shape == (10000, 1)
        assert abs(chain.samples.mean()) <= 0.05
        assert abs(chain.samples.var() - 1.0) <= 0.1

    def test_acceptance_rate(self):
        chain = hmc_sample(standard_normal, np.zeros(3), HMCConfig(0.1, 10, 1000, 100, seed=1))
        assert chain.acceptance_rate > 0.6

    def test_zero_energy_change_always_accepted(self):
        chain = hmc_sample(lambda x: (0.0, np.zeros_like(x)), np.zeros(2), HMCConfig(0.3, 5, 200, 0, seed=2))
        assert chain.accepted.all()

    def test_same_seed_identical(self):
        cfg = HMCConfig(0.3, 7, 300, 50, seed=9)
        a = hmc_sample(standard_normal, np.ones(2), cfg)
        b = hmc_sample(standard_normal, np.ones(2), cfg)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.accepted, b.accepted)
        c = hmc_sample(standard_normal, np.ones(2), HMCConfig(0.3, 7, 300, 50, seed=10))
        assert not np.array_equal(a.samples, c.samples)

    def test_generator_seed(self):
        a = hmc_sample(standard_normal, np.ones(1), HMCConfig(0.3, 5, 50, 0, seed=np.random.default_rng(4)))
        b = hmc_sample(standard_normal, np.ones(1), HMCConfig(0.3, 5, 50, 0, seed=4))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_all_divergent_aborts(self):
        def blowup(x):
            return -float(x @ x), np.full_like(x, np.inf)

        with pytest.raises(DivergentTrajectory, match="100"):
            hmc_sample(blowup, np.zeros(1), HMCConfig(0.1, 3, 500, 0))

    def test_divergent_proposals_rejected(self):
        def cliff(x):
            if x[0] > 1.5:
                return float("nan"), np.full_like(x, np.nan)
            return -0.5 * float(x @ x), -x

        chain = hmc_sample(cliff, np.zeros(1), HMCConfig(0.5, 5, 400, 0, seed=5))
        assert np.all(chain.samples <= 1.5)
        assert 0.0 < chain.acceptance_rate < 1.0

    def test_non_finite_start(self):
        with pytest.raises(ValueError):
            hmc_sample(lambda x: (float("-inf"), x), np.zeros(1), HMCConfig())

    @pytest.mark.parametrize(
        "kwargs",
        [dict(step_size=0.0), dict(leapfrog_steps=0), dict(num_samples=10, burn_in=10), dict(burn_in=-1)],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            HMCConfig(**kwargs)

    def test_chain_lengths_checked(self):
        with pytest.raises(ValueError):
            Chain(np.zeros((3, 1)), np.zeros(2, dtype=bool), np.zeros(3))

    def test_model_target_requires_priors(self):
        from tapegp.likelihoods import Bernoulli
        from tapegp.models import GPMC

        X = np.linspace(0, 1, 4)[:, None]
        model = GPMC((X, np.array([[0.0], [1.0], [1.0], [0.0]])), RBF(), Bernoulli())
        with pytest.raises(ValueError, match="prior"):
            model_log_target(model)

    def test_samples_model(self):
        model = dict((n, m) for n, m, _ in gradient_suite(0))["sgpmc"]
        chain = hmc_sample(model_log_target(model), model.free_state(), HMCConfig(0.05, 5, 60, 10, seed=0))
        assert chain.samples.shape == (50, model.free_state().size)
        assert chain.acceptance_rate > 0.3
        assert np.all(np.isfinite(chain.log_targets))
