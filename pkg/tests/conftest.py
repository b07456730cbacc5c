import numpy as np
import pytest

from gairl import nets


def finite_difference_gradients(params, spec, x, loss_vector, h=1e-5):
    """Central-difference gradient of sum(output * loss_vector) over every
    parameter entry; the independent oracle for backward()."""

    def loss():
        out, _ = nets.forward(params, spec, x, mode="eval")
        return float(np.sum(out * loss_vector))

    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss()
            arr[idx] = orig - h
            down = loss()
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def assert_gradients_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


def check_step_result_contract(result, state_dim, *, check_raw_bounds=True):
    """Shape/range/flag-domain checks shared by the real and imagined
    environment step interfaces."""
    assert result.next_state.normalized.shape == (state_dim,)
    assert result.next_state.raw.shape == (state_dim,)
    assert np.all(result.next_state.normalized >= 0.0)
    assert np.all(result.next_state.normalized <= 1.0)
    assert result.reward_normalized in (0.0, 1.0)
    assert result.reward_raw in (-1.0, 0.0)
    assert result.reward_normalized == result.reward_raw + 1.0
    assert isinstance(result.terminal, bool)
    assert isinstance(result.truncated, bool)
    assert result.reward_normalized == 1.0 if result.terminal else True
    assert not (result.terminal and result.truncated)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
