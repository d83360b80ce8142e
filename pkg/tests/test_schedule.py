import numpy as np
import pytest
from hypothesis import given, strategies as st

from complift.schedule import DiffusionSchedule, make_linear, scaled_linear


def test_linear_endpoints():
    sched = make_linear(50)
    assert sched.timesteps == 50
    assert sched.betas[0] == pytest.approx(1e-4)
    assert sched.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(sched.betas) > 0)


def test_scaled_linear_keeps_noise_budget():
    # total noise ~ sum of betas: invariant across lengths, so the terminal
    # marginal is near standard normal for any T
    ref = make_linear(1000)
    for steps in (50, 100, 250):
        sched = scaled_linear(steps)
        assert sched.timesteps == steps
        assert np.sum(sched.betas) == pytest.approx(np.sum(ref.betas), rel=1e-12)
        assert sched.alpha_bars[-1] < 1e-4
    assert np.array_equal(scaled_linear(1000).betas, ref.betas)
    with pytest.raises(ValueError):
        scaled_linear(10)  # betas would reach 1


def test_alpha_bar_matches_product_loop():
    sched = make_linear(50)
    prod = 1.0
    for t in range(1, 51):
        prod *= 1.0 - sched.betas[t - 1]
        assert sched.alpha_bar(t) == pytest.approx(prod, rel=1e-12)


def test_alpha_bars_decrease():
    sched = make_linear(200)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert 0 < sched.alpha_bars[-1] < sched.alpha_bars[0] < 1


def test_one_based_indexing():
    sched = make_linear(10)
    assert sched.alpha_bar(1) == pytest.approx(1 - sched.betas[0])
    for bad in (0, 11, -1):
        with pytest.raises(ValueError):
            sched.alpha_bar(bad)


def test_add_noise_known_values():
    sched = DiffusionSchedule(np.array([0.19, 0.75]))
    x0 = np.array([1.0, -2.0])
    eps = np.array([0.5, 0.5])
    # abar_1 = 0.81, abar_2 = 0.2025
    np.testing.assert_allclose(
        sched.add_noise(x0, 1, eps), 0.9 * x0 + np.sqrt(0.19) * eps
    )
    np.testing.assert_allclose(
        sched.add_noise(x0, 2, eps), 0.45 * x0 + np.sqrt(0.7975) * eps
    )


@given(st.integers(min_value=1, max_value=200), st.integers(min_value=0, max_value=2**32 - 1))
def test_recover_eps_inverts_add_noise(timesteps, seed):
    sched = make_linear(timesteps)
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(8, 2))
    eps = rng.normal(size=(8, 2))
    t = rng.integers(1, timesteps + 1, size=8)
    x_t = sched.add_noise(x0, t, eps)
    np.testing.assert_allclose(sched.recover_eps(x_t, x0, t), eps, atol=1e-9)


def test_vector_t_matches_scalar_loop():
    sched = make_linear(50)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(16, 2)).astype(np.float32)
    eps = rng.normal(size=(16, 2)).astype(np.float32)
    t = rng.integers(1, 51, size=16)
    batched = sched.add_noise(x0, t, eps)
    for i in range(16):
        row = sched.add_noise(x0[i], int(t[i]), eps[i])
        np.testing.assert_array_equal(batched[i], row)


def test_float32_stays_float32():
    sched = make_linear(50)
    x0 = np.zeros((4, 2), dtype=np.float32)
    eps = np.ones((4, 2), dtype=np.float32)
    assert sched.add_noise(x0, 3, eps).dtype == np.float32


def test_arrays_read_only():
    sched = make_linear(5)
    with pytest.raises(ValueError):
        sched.betas[0] = 0.5
    with pytest.raises(ValueError):
        sched.alpha_bars[0] = 0.5


def test_betas_validated():
    with pytest.raises(ValueError):
        DiffusionSchedule(np.array([0.1, 1.5]))
    with pytest.raises(ValueError):
        DiffusionSchedule(np.array([]))
    with pytest.raises(ValueError):
        DiffusionSchedule(np.array([0.0, 0.1]))


def test_serialization_roundtrip_is_bit_identical():
    sched = make_linear(50)
    clone = DiffusionSchedule(np.array(sched.betas.tolist()))
    assert clone.betas.tobytes() == sched.betas.tobytes()
    assert clone.alpha_bars.tobytes() == sched.alpha_bars.tobytes()
