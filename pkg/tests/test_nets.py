import numpy as np
import pytest

from conftest import random_params, small_arch
from system.nets import (AdamHyperParams, AdamMoments, ArchSpec, EmaShadow, adam_step,
                         ema_update, global_norm, init_params, mlp_forward, time_embed)
from system.tensor_ad import Tape


def evaluate(params, x, t, s=None):
    return mlp_forward(params, Tape(record=False).constant(x), t, s).values


def test_time_embedding_at_zero_and_one():
    spec = small_arch('teacher').embedding
    tape = Tape(record=False)
    for tau in (0.0, 1.0):
        emb = time_embed(tape.constant(np.full((3, 1), tau)), spec).values
        assert emb.shape == (3, 2 * spec.num_frequencies)
        np.testing.assert_allclose(emb[:, :spec.num_frequencies], 0.0, atol=1e-12)
        np.testing.assert_allclose(emb[:, spec.num_frequencies:], 1.0, atol=1e-12)


def test_time_embedding_rejects_out_of_range():
    spec = small_arch('teacher').embedding
    tape = Tape(record=False)
    with pytest.raises(ValueError):
        time_embed(tape.constant(np.full((2, 1), 1.5)), spec)


def test_init_is_deterministic_and_final_layer_zero():
    arch = small_arch('student')
    a = init_params(arch, seed=7)
    b = init_params(arch, seed=7)
    for name in a.names():
        np.testing.assert_array_equal(a[name], b[name])
    for name in a.final_layer:
        assert not np.any(a[name])
    weight = a['layer0.weight']
    assert np.max(np.abs(weight)) <= np.sqrt(6.0 / weight.shape[0])
    out = evaluate(a, np.ones((3, 2)), 0.5, 0.2)
    np.testing.assert_array_equal(out, np.zeros((3, 2)))


def test_different_seeds_differ():
    arch = small_arch('teacher')
    assert not np.array_equal(init_params(arch, 1)['layer0.weight'],
                              init_params(arch, 2)['layer0.weight'])


def test_warm_start_copies_hidden_layers(rng):
    teacher = random_params(small_arch('teacher'), rng)
    student = init_params(small_arch('student'), seed=3, warm_start=teacher)
    rows = teacher['layer0.weight'].shape[0]
    np.testing.assert_array_equal(student['layer0.weight'][:rows], teacher['layer0.weight'])
    assert not np.any(student['layer0.weight'][rows:])
    np.testing.assert_array_equal(student['layer1.weight'], teacher['layer1.weight'])
    assert not np.any(student['layer2.weight'])


def test_warm_start_requires_matching_hidden(rng):
    teacher = random_params(small_arch('teacher', hidden=(8, 8)), rng)
    with pytest.raises(ValueError):
        init_params(small_arch('student', hidden=(16, 16)), seed=0, warm_start=teacher)


def test_forward_checks_target_time(teacher_params, student_params):
    x = np.zeros((2, 2))
    with pytest.raises(ValueError):
        evaluate(teacher_params, x, 0.5, 0.1)
    with pytest.raises(ValueError):
        evaluate(student_params, x, 0.5)
    with pytest.raises(ValueError):
        evaluate(teacher_params, np.zeros((2, 3)), 0.5)


def test_arch_round_trip():
    arch = small_arch('student')
    assert ArchSpec.from_dict(arch.to_dict()) == arch


def test_adam_first_step_moves_by_learning_rate(teacher_params):
    hp = AdamHyperParams(lr=0.01)
    grads = {name: np.full(a.shape, -2.0) for name, a in teacher_params.items()}
    moved, moments = adam_step(teacher_params, grads, AdamMoments.zeros_like(teacher_params),
                               hp, step=1)
    for name, array in teacher_params.items():
        np.testing.assert_allclose(moved[name] - array, 0.01, rtol=1e-6)
        np.testing.assert_allclose(moments.m[name], -0.2)


def test_adam_rejects_step_zero(teacher_params):
    grads = {name: np.zeros(a.shape) for name, a in teacher_params.items()}
    with pytest.raises(ValueError):
        adam_step(teacher_params, grads, AdamMoments.zeros_like(teacher_params),
                  AdamHyperParams(), step=0)


def test_adam_skips_non_finite_gradients(teacher_params):
    grads = {name: np.zeros(a.shape) for name, a in teacher_params.items()}
    grads['layer0.bias'][0] = np.nan
    moments = AdamMoments.zeros_like(teacher_params)
    params, same = adam_step(teacher_params, grads, moments, AdamHyperParams(), step=1)
    assert params is teacher_params
    assert same is moments


def test_ema_update(teacher_params):
    zeros = teacher_params.replace({n: np.zeros(a.shape) for n, a in teacher_params.items()})
    shadow = EmaShadow.from_params(zeros, decay=0.75)
    updated = ema_update(shadow, teacher_params)
    for name, array in teacher_params.items():
        np.testing.assert_allclose(updated.arrays[name], 0.25 * array)
    frozen = ema_update(EmaShadow.from_params(zeros, decay=1.0), teacher_params)
    assert not np.any(frozen.arrays['layer0.weight'])


def test_ema_rejects_bad_decay(teacher_params):
    with pytest.raises(ValueError):
        EmaShadow.from_params(teacher_params, 1.5)


def test_global_norm_subset():
    grads = {'a': np.array([3.0]), 'b': np.array([4.0]), 'c': np.array([12.0])}
    assert global_norm(grads, ['a', 'b']) == pytest.approx(5.0)
    assert global_norm(grads) == pytest.approx(13.0)


def test_adam_shrinks_quadratic(rng):
    params = random_params(small_arch('teacher'), rng)
    params = params.replace({name: np.ones_like(a) for name, a in params.items()})
    moments = AdamMoments.zeros_like(params)
    for step in range(1, 11):
        grads = {name: 2.0 * a for name, a in params.items()}
        params, moments = adam_step(params, grads, moments, AdamHyperParams(lr=0.1), step)
    for _, array in params.items():
        assert np.all(np.abs(array) < 1.0)
