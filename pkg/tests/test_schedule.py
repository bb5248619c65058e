import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probelight.rng import SeededRng, gaussian_like
from probelight.schedule import (add_noise, ddim_update, make_schedule,
                                 predict_x0, schedule_from_config)

from conftest import random_image


def test_alpha_bar_boundary_values(sched):
    assert sched.alpha_bar[0] == 1.0
    # direct product evaluation of the default betas
    assert sched.alpha_bar[1000] == pytest.approx(4.6601e-3, rel=1e-3)
    assert sched.alpha_bar[1000] < 1e-2


def test_alpha_bar_strictly_decreasing(sched):
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_cosine_schedule():
    s = make_schedule("cosine", T=1000, n_steps=30)
    assert s.alpha_bar[0] == 1.0
    assert s.alpha_bar[1000] < 1e-3
    assert np.all(np.diff(s.alpha_bar) < 0)


def test_step_indices_uniform_with_endpoints(sched):
    assert len(sched.step_indices) == 30
    assert sched.step_indices[0] == 1000
    assert sched.step_indices[-1] == 1
    assert sched.nearest_step(0.8 * sched.T) == 793
    assert len(sched.steps_from(793)) == 24


def test_nearest_step_ties_round_up(sched):
    # 18 is equidistant from the adjacent steps 1 and 35
    assert sched.step_indices[-2:] == (35, 1)
    assert sched.nearest_step(18.0) == 35


def test_n_steps_bounds():
    with pytest.raises(ValueError):
        make_schedule(T=1000, n_steps=1001)
    one = make_schedule(T=1000, n_steps=1)
    assert one.step_indices == (1000,)


def test_small_T_needs_matching_betas():
    # the default betas are calibrated for T=1000; a short schedule must
    # supply its own to land near zero signal at T
    with pytest.raises(ValueError):
        make_schedule(T=10, n_steps=2)
    s = make_schedule(T=10, n_steps=2, beta_start=0.05, beta_end=0.95)
    assert s.alpha_bar[10] < 1e-2
    assert s.nearest_step(5.5) == 10  # equidistant between steps (10, 1)


def test_config_roundtrip(sched):
    clone = schedule_from_config(sched.to_config())
    assert clone.step_indices == sched.step_indices
    assert np.array_equal(clone.alpha_bar, sched.alpha_bar)


def test_add_noise_identity_at_t0(sched):
    x0 = random_image(0)
    eps = gaussian_like(x0.shape, SeededRng(1))
    assert np.array_equal(add_noise(x0, 0, eps, sched), x0)


def test_add_noise_limit_at_T(sched):
    x0 = random_image(1)
    eps = gaussian_like(x0.shape, SeededRng(2))
    out = add_noise(x0, sched.T, eps, sched)
    bound = np.sqrt(sched.abar(sched.T)) * np.abs(x0).max() + 1e-5
    assert np.abs(out - np.float32(np.sqrt(1 - sched.abar(sched.T))) * eps).max() <= bound


def test_add_noise_zero_signal(sched):
    eps = gaussian_like((3, 4, 4), SeededRng(3))
    out = add_noise(np.zeros((3, 4, 4), np.float32), 500, eps, sched)
    assert np.allclose(out, np.sqrt(1 - sched.abar(500)) * eps, atol=1e-6)


def test_predict_x0_inverts_add_noise(sched):
    x0 = random_image(4)
    eps = gaussian_like(x0.shape, SeededRng(5))
    for t in (1, 345, 793, 1000):
        zt = add_noise(x0, t, eps, sched)
        assert np.abs(predict_x0(zt, t, eps, sched) - x0).max() <= 1e-5


def test_predict_x0_degenerate_cases(sched):
    z = random_image(6)
    assert np.array_equal(predict_x0(z, 0, np.zeros_like(z), sched), z)
    out = predict_x0(z, 500, np.zeros_like(z), sched)
    assert np.allclose(out, z / np.sqrt(sched.abar(500)), rtol=1e-6)


def test_ddim_update_to_zero_is_predict_x0(sched):
    z = random_image(7)
    eps = gaussian_like(z.shape, SeededRng(8))
    assert np.array_equal(ddim_update(z, 793, 0, eps, sched),
                          predict_x0(z, 793, eps, sched))


def test_ddim_update_requires_decreasing_t(sched):
    z = random_image(9)
    eps = np.zeros_like(z)
    with pytest.raises(ValueError):
        ddim_update(z, 500, 500, eps, sched)
    with pytest.raises(ValueError):
        ddim_update(z, 500, 600, eps, sched)


def test_oracle_chain_telescopes_to_x0(sched):
    # eps chosen consistently with a fixed x0 at every step drives the
    # 30-step chain back to x0
    x0 = random_image(10, (3, 8, 8))
    z = gaussian_like(x0.shape, SeededRng(11))
    steps = list(sched.step_indices)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        ab = sched.abar(t)
        eps = (z - np.float32(np.sqrt(ab)) * x0) / np.float32(np.sqrt(1 - ab))
        z = ddim_update(z, t, t_prev, eps, sched)
    assert np.abs(z - x0).max() <= 1e-4


def test_contraction_of_noise_component(sched):
    # after one oracle step the distance to the scaled clean anchor shrinks
    # by exactly sqrt(1-ab_prev)/sqrt(1-ab_t)
    x0 = random_image(12, (3, 8, 8))
    eps = gaussian_like(x0.shape, SeededRng(13))
    steps = list(sched.step_indices)
    for t, t_prev in zip(steps, steps[1:]):
        z = add_noise(x0, t, eps, sched)
        oracle = (z - np.float32(np.sqrt(sched.abar(t))) * x0) / np.float32(
            np.sqrt(1 - sched.abar(t)))
        z2 = ddim_update(z, t, t_prev, oracle, sched)
        before = np.linalg.norm(z - np.sqrt(sched.abar(t)) * x0)
        after = np.linalg.norm(z2 - np.sqrt(sched.abar(t_prev)) * x0)
        ratio = np.sqrt((1 - sched.abar(t_prev)) / (1 - sched.abar(t)))
        assert after == pytest.approx(before * ratio, rel=1e-4)


@given(st.integers(min_value=1, max_value=1000))
@settings(max_examples=40, deadline=None)
def test_step_indices_strictly_decreasing_for_any_count(n_steps):
    s = make_schedule(T=1000, n_steps=n_steps)
    assert s.step_indices[0] == 1000
    assert len(s.step_indices) == n_steps
    assert all(a > b for a, b in zip(s.step_indices, s.step_indices[1:]))
