import numpy as np
import pytest

from system.baselines import (baseline_loss, baseline_step, create_baseline_state,
                              flowdreamer_loss, init_velocity_student, instaflow_loss,
                              reflow_loss, velocity_arch)
from system.scot import DistillSettings, DistillState, project
from system.teacher import ConstantField, NeuralVelocityField, gen_pair
from system.tensor_ad import Tape


def test_velocity_student_copies_teacher(teacher_params):
    student = init_velocity_student(teacher_params, 'teacher')
    assert student.arch == velocity_arch(teacher_params.arch)
    assert student.arch.tag == 'velocity'
    for name, array in teacher_params.items():
        np.testing.assert_array_equal(student[name], array)
        assert student[name] is not array
    with pytest.raises(ValueError):
        init_velocity_student(teacher_params, 'copy')


def test_induced_map_is_one_euler_step(teacher_params, rng):
    student = init_velocity_student(teacher_params)
    x = rng.standard_normal((12, 2))
    velocity = NeuralVelocityField(student)(x, 0.8)
    np.testing.assert_allclose(project(student, x, 0.8, 0.3), x + (0.3 - 0.8) * velocity,
                               rtol=1e-10, atol=1e-12)


def test_flowdreamer_loss_vanishes_for_teacher_copy(teacher_params, rng):
    student = init_velocity_student(teacher_params)
    pair = gen_pair(teacher_params, rng.standard_normal((16, 2)), n_steps=3)
    loss = flowdreamer_loss(student, teacher_params, pair, rng.random(16), Tape())
    assert float(loss.values) < 1e-20


def test_instaflow_is_reflow_at_one(teacher_params, rng):
    student = init_velocity_student(teacher_params)
    pair = gen_pair(ConstantField([1.0, -1.0]), rng.standard_normal((8, 2)), n_steps=2)
    assert float(instaflow_loss(student, pair, Tape()).values) == \
        float(reflow_loss(student, pair, np.ones(8), Tape()).values)


@pytest.mark.parametrize('method', ['reflow', 'instaflow', 'flowdreamer'])
def test_baseline_steps_update_student(method, teacher_params, rng):
    state = create_baseline_state(teacher_params, 'teacher', seed=0, mu=0.9, eval_decay=0.99)
    settings = DistillSettings(grid=(0.0, 0.5, 1.0), pair_solver_steps=3)
    teacher = ConstantField([0.5, 1.5])
    for _ in range(2):
        state = baseline_step(state, teacher, rng.standard_normal((16, 2)), settings, rng, method)
    assert state.step == 2
    assert state.skipped == 0
    record = state.records[-1]
    assert record['loss_con'] == 0.0 and record['lambda_con'] == 0.0
    assert record['total'] == record['loss_vel']
    assert not np.array_equal(state.params['layer0.weight'], teacher_params['layer0.weight'])


def test_baseline_rejects_projection_student(student_params, rng):
    state = DistillState.create(student_params, 0.9, 1.0)
    settings = DistillSettings(grid=(0.0, 0.5, 1.0), pair_solver_steps=2)
    with pytest.raises(ValueError):
        baseline_step(state, ConstantField([0.0, 1.0]), rng.standard_normal((4, 2)), settings,
                      rng, 'reflow')


def test_unknown_baseline(teacher_params, rng):
    pair = gen_pair(ConstantField([1.0, 0.0]), rng.standard_normal((4, 2)), n_steps=1)
    with pytest.raises(ValueError):
        baseline_loss('consistency', init_velocity_student(teacher_params), None, pair,
                      rng.random(4), Tape())
