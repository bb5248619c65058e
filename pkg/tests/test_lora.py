import numpy as np
import pytest

from probelight.lora import (LoraDelta, LoraStack, active_lora_name, compose_lora,
                             default_swap_schedule, swap_threshold_timestep)


def make_stack(seed=0, n=6, rank=2, scale=0.75, schedule=None):
    r = np.random.RandomState(seed)
    deltas = (
        LoraDelta("turbo", r.randn(n, rank), r.randn(rank, n), scale),
        LoraDelta("exposure", r.randn(n, rank), r.randn(rank, n), scale),
    )
    return LoraStack(w_base=r.randn(n, n), deltas=deltas,
                     swap_schedule=schedule or default_swap_schedule())


def dense_reference(stack, t):
    # naive triple loop, deliberately unlike the library path
    name = active_lora_name(stack, t)
    w = [[float(stack.w_base[i, j]) for j in range(stack.w_base.shape[1])]
         for i in range(stack.w_base.shape[0])]
    if name is None:
        return np.array(w)
    d = stack.delta_by_name(name)
    m, r = d.A.shape
    n = d.B.shape[1]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(r):
                acc += float(d.A[i, k]) * float(d.B[k, j])
            w[i][j] += d.scale * acc
    return np.array(w)


def test_zero_scale_returns_base():
    stack = make_stack(scale=0.0)
    assert np.allclose(compose_lora(stack, 500), stack.w_base)


def test_rank_one_hand_example():
    a = np.array([[1.0], [0.0]])
    b = np.array([[0.0, 1.0]])
    stack = LoraStack(w_base=np.zeros((2, 2)),
                      deltas=(LoraDelta("only", a, b, scale=2.0),),
                      swap_schedule=((1, 1000, "only"),))
    w = compose_lora(stack, 1)
    assert w[0, 1] == 2.0
    assert np.count_nonzero(w) == 1


def test_default_swap_boundaries():
    stack = make_stack()
    assert active_lora_name(stack, 900) == "turbo"
    assert active_lora_name(stack, 800) == "turbo"
    assert active_lora_name(stack, 799) == "exposure"
    assert active_lora_name(stack, 1) == "exposure"
    assert active_lora_name(stack, 1000) == "turbo"


def test_every_timestep_has_exactly_one_delta():
    stack = make_stack()
    names = [active_lora_name(stack, t) for t in range(1, 1001)]
    assert all(n in ("turbo", "exposure") for n in names)
    assert names.count("turbo") == 201  # [800, 1000]


def test_uncovered_timestep_rejected():
    stack = make_stack()
    with pytest.raises(ValueError):
        active_lora_name(stack, 0)
    with pytest.raises(ValueError):
        active_lora_name(stack, 1001)


def test_schedule_must_cover_and_not_overlap():
    r = np.random.RandomState(1)
    delta = LoraDelta("x", r.randn(4, 1), r.randn(1, 4))
    with pytest.raises(ValueError):
        LoraStack(np.zeros((4, 4)), (delta,), ((1, 500, "x"), (600, 1000, "x")))
    with pytest.raises(ValueError):
        LoraStack(np.zeros((4, 4)), (delta,), ((1, 500, "x"), (400, 1000, "x")))
    with pytest.raises(ValueError):
        LoraStack(np.zeros((4, 4)), (delta,), ((1, 1000, "missing"),))


def test_rank_bound_enforced():
    r = np.random.RandomState(2)
    with pytest.raises(ValueError):
        LoraDelta("bad", r.randn(2, 3), r.randn(3, 2))


def test_compose_matches_dense_reference():
    for seed in range(100):
        stack = make_stack(seed=seed, n=4, rank=1 + seed % 3,
                           scale=float(seed % 5) / 3.0)
        t = 1 + (seed * 37) % 1000
        got = compose_lora(stack, t)
        want = dense_reference(stack, t)
        denom = np.maximum(np.abs(want), 1e-12)
        assert (np.abs(got - want) / denom).max() <= 1e-5


def test_threshold_timestep():
    assert swap_threshold_timestep(0.8, 1000) == 800
    assert swap_threshold_timestep(0.5, 999) == 500
    with pytest.raises(ValueError):
        swap_threshold_timestep(1.0, 1000)
