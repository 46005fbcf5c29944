import numpy as np
import pytest

from rl_caching.exceptions import InvalidParameterError, ShapeError
from rl_caching.networks import (
    AdamState,
    MlpParams,
    adam_step,
    init_mlp,
    log_softmax,
    mlp_forward,
    polyak_update,
    softmax,
)
from rl_caching.sac_agent import actor_loss_and_grads, critic_loss_and_grads
from rl_caching.workload import make_rng

EPS = 1e-6
TOLERANCE = 1e-4


def numeric_gradients(params, loss_fn):
    """Central finite differences for every parameter, in tensors() order."""
    grads = []
    for tensor in params.tensors():
        grad = np.zeros_like(tensor)
        for index in np.ndindex(tensor.shape):
            original = tensor[index]
            tensor[index] = original + EPS
            plus = loss_fn()
            tensor[index] = original - EPS
            minus = loss_fn()
            tensor[index] = original
            grad[index] = (plus - minus) / (2 * EPS)
        grads.append(grad)
    return grads


def relative_error(analytic, numeric):
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    return np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-8)


def with_random_biases(params, rng):
    # Nonzero biases keep pre-activations off the ReLU kink
    for b in params.biases:
        b[:] = rng.normal(scale=0.5, size=b.shape)
    return params


def random_instance(seed):
    rng = make_rng(seed)
    capacity = int(rng.integers(1, 4))
    hidden = [int(h) for h in rng.integers(2, 6, size=int(rng.integers(1, 3)))]
    sizes = [2 * capacity, *hidden, capacity + 1]
    batch = int(rng.integers(1, 6))
    states = np.log1p(rng.integers(0, 20, size=(batch, 2 * capacity)).astype(float))
    return rng, sizes, states


@pytest.mark.unit
class TestGradients:
    """Analytic gradients against central finite differences on random small instances"""

    @pytest.mark.parametrize('seed', range(100))
    def test_critic_gradient(self, seed):
        """Test critic MSE gradient"""
        rng, sizes, states = random_instance(seed)
        critic = with_random_biases(init_mlp(sizes, rng), rng)
        actions = rng.integers(0, sizes[-1], size=len(states))
        targets = rng.normal(size=len(states))

        _, analytic = critic_loss_and_grads(critic, states, actions, targets)
        numeric = numeric_gradients(critic, lambda: critic_loss_and_grads(critic, states, actions, targets)[0])
        assert relative_error(analytic, numeric) < TOLERANCE

    @pytest.mark.parametrize('seed', range(100))
    def test_actor_gradient(self, seed):
        """Test soft policy loss gradient with fixed Q"""
        rng, sizes, states = random_instance(seed)
        actor = with_random_biases(init_mlp(sizes, rng), rng)
        q_min = rng.normal(size=(len(states), sizes[-1]))
        alpha = float(rng.uniform(0.05, 1.0))

        _, analytic, _, _ = actor_loss_and_grads(actor, states, q_min, alpha)
        numeric = numeric_gradients(actor, lambda: actor_loss_and_grads(actor, states, q_min, alpha)[0])
        assert relative_error(analytic, numeric) < TOLERANCE

    def test_second_critic_shares_code_path(self):
        """Test independently initialized twin critics both pass the check"""
        rng, sizes, states = random_instance(1234)
        actions = rng.integers(0, sizes[-1], size=len(states))
        targets = rng.normal(size=len(states))
        for critic in (with_random_biases(init_mlp(sizes, rng), rng), with_random_biases(init_mlp(sizes, rng), rng)):
            _, analytic = critic_loss_and_grads(critic, states, actions, targets)
            numeric = numeric_gradients(critic, lambda: critic_loss_and_grads(critic, states, actions, targets)[0])
            assert relative_error(analytic, numeric) < TOLERANCE


@pytest.mark.unit
class TestMlp:
    """Test MLP construction and forward pass"""

    def test_forward_shapes(self):
        """Test single states and batches"""
        params = init_mlp([4, 8, 3], make_rng(0))
        single, _ = mlp_forward(params, np.ones(4))
        batch, layer_inputs = mlp_forward(params, np.ones((5, 4)))
        assert single.shape == (1, 3)
        assert batch.shape == (5, 3)
        assert len(layer_inputs) == 2

    def test_zero_last_layer_gives_uniform_softmax(self):
        """Test a zeroed output layer starts the policy uniform"""
        params = init_mlp([4, 8, 3], make_rng(0), zero_last=True)
        logits, _ = mlp_forward(params, np.arange(4.0))
        assert np.allclose(softmax(logits), 1 / 3)

    def test_glorot_bounds(self):
        """Test weights lie within ±sqrt(6 / (fan_in + fan_out))"""
        params = init_mlp([10, 20], make_rng(0))
        assert np.abs(params.weights[0]).max() <= np.sqrt(6 / 30)
        assert not params.biases[0].any()

    def test_wrong_input_width(self):
        """Test mismatched input raises ShapeError"""
        with pytest.raises(ShapeError):
            mlp_forward(init_mlp([4, 3], make_rng(0)), np.ones(5))

    def test_layers_must_chain(self):
        """Test inconsistent layer shapes raise"""
        with pytest.raises(ShapeError):
            MlpParams([np.zeros((4, 3)), np.zeros((2, 1))], [np.zeros(3), np.zeros(1)])

    def test_copy_is_independent(self):
        """Test copies do not share buffers"""
        params = init_mlp([2, 2], make_rng(0))
        clone = params.copy()
        clone.weights[0][:] = 0.0
        assert params.weights[0].any()


@pytest.mark.unit
class TestSoftmax:
    """Test softmax numerics"""

    def test_rows_sum_to_one(self):
        """Test normalization across random logits"""
        logits = make_rng(0).normal(scale=10.0, size=(50, 7))
        assert np.allclose(softmax(logits).sum(axis=1), 1.0)

    def test_large_logits_stay_finite(self):
        """Test huge logits do not overflow"""
        log_probs = log_softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.isfinite(log_probs).all()
        assert log_probs[0, 0] == pytest.approx(0.0)


@pytest.mark.unit
class TestOptimizers:
    """Test Adam and Polyak averaging"""

    def test_adam_minimizes_quadratic(self):
        """Test Adam walks toward the minimum of (x - 3)^2"""
        x = np.array([0.0])
        state = AdamState.zeros_like([x])
        for _ in range(2000):
            adam_step([x], [2 * (x - 3.0)], state, lr=0.05)
        assert x[0] == pytest.approx(3.0, abs=1e-2)
        assert state.t == 2000

    def test_first_adam_step_is_lr_sized(self):
        """Test bias correction makes the first step about lr"""
        x = np.array([1.0])
        adam_step([x], [np.array([123.0])], AdamState.zeros_like([x]), lr=0.01)
        assert x[0] == pytest.approx(0.99, abs=1e-6)

    def test_polyak_contracts(self):
        """Test the target-source distance shrinks by (1 - tau)"""
        rng = make_rng(0)
        target = init_mlp([3, 4, 2], rng)
        source = init_mlp([3, 4, 2], rng)
        before = [s - t for t, s in zip(target.tensors(), source.tensors())]
        polyak_update(target, source, 0.1)
        after = [s - t for t, s in zip(target.tensors(), source.tensors())]
        for b, a in zip(before, after):
            assert np.allclose(a, 0.9 * b)

    def test_polyak_tau_one_copies(self):
        """Test tau = 1 copies the source"""
        rng = make_rng(1)
        target, source = init_mlp([3, 2], rng), init_mlp([3, 2], rng)
        polyak_update(target, source, 1.0)
        assert np.allclose(target.weights[0], source.weights[0])

    @pytest.mark.parametrize('tau', [0.0, 1.5])
    def test_polyak_rejects_tau(self, tau):
        """Test tau outside (0, 1] raises"""
        rng = make_rng(1)
        with pytest.raises(InvalidParameterError):
            polyak_update(init_mlp([3, 2], rng), init_mlp([3, 2], rng), tau)

    def test_polyak_rejects_shape_mismatch(self):
        """Test differently sized networks raise"""
        rng = make_rng(1)
        with pytest.raises(ShapeError):
            polyak_update(init_mlp([3, 2], rng), init_mlp([3, 4, 2], rng), 0.5)
