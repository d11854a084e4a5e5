import csv

import numpy as np
import pytest

from system.sampler import StepSchedule, make_schedule, sample, trace_trajectory, write_trajectory_csv
from system.scot import StraightFlowMap, project
from system.teacher import ConstantField
from utils.metrics import mean_straightness


def test_uniform_schedules():
    assert make_schedule(1).times == (1.0, 0.0)
    assert make_schedule(2).times == (1.0, 0.5, 0.0)
    grid = make_schedule(18)
    assert len(grid.times) == 19
    assert grid.times[0] == 1.0 and grid.times[-1] == 0.0
    assert grid.nfe == 18


def test_schedule_errors():
    with pytest.raises(ValueError):
        make_schedule(0)
    with pytest.raises(ValueError):
        make_schedule(2, 'custom', [1.0, 0.0])
    with pytest.raises(ValueError):
        make_schedule(2, 'custom', [1.0, 0.7, 0.8])
    with pytest.raises(ValueError):
        StepSchedule((0.9, 0.0))
    custom = make_schedule(3, 'custom', [1.0, 0.8, 0.3, 0.0])
    assert custom.kind == 'custom'


def test_one_step_sample_is_single_projection(student_params, rng):
    x1 = rng.standard_normal((10, 2))
    np.testing.assert_array_equal(sample(student_params, x1, make_schedule(1)),
                                  project(student_params, x1, 1.0, 0.0))


def test_consistent_map_endpoint_independent_of_steps(rng):
    model = StraightFlowMap(np.array([0.3, -0.8]))
    x1 = rng.standard_normal((32, 2))
    one = sample(model, x1, make_schedule(1))
    four = sample(model, x1, make_schedule(4))
    assert np.max(np.abs(one - four)) < 1e-9


def test_trace_length_matches_schedule(student_params, rng):
    schedule = make_schedule(5)
    trace = trace_trajectory(student_params, rng.standard_normal((3, 2)), schedule)
    assert len(trace) == len(schedule.times)
    assert [t for t, _ in trace] == list(schedule.times)


def test_constant_field_teacher_trace_is_straight(rng):
    trace = trace_trajectory(ConstantField([1.0, 2.0]), rng.standard_normal((4, 2)),
                             make_schedule(6), teacher_substeps=3)
    assert mean_straightness(trace) < 1e-12


def test_teacher_trace_is_reproducible(teacher_params, rng):
    x1 = rng.standard_normal((4, 2))
    a = trace_trajectory(teacher_params, x1, make_schedule(4))
    b = trace_trajectory(teacher_params, x1, make_schedule(4))
    for (_, xa), (_, xb) in zip(a, b):
        np.testing.assert_array_equal(xa, xb)


def test_trajectory_csv(tmp_path, student_params, teacher_params, rng):
    x1 = rng.standard_normal((4, 2))
    schedule = make_schedule(18)
    traces = {'teacher': trace_trajectory(teacher_params, x1, schedule, teacher_substeps=1),
              'student': trace_trajectory(student_params, x1, schedule)}
    path = tmp_path / 'traj.csv'
    count = write_trajectory_csv(str(path), traces)
    assert count == 2 * 4 * 19
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['traj_id', 't', 'x0', 'x1']
    assert len(rows) == count + 1
    ids = {row[0] for row in rows[1:]}
    assert 'teacher-0' in ids and 'student-3' in ids
    assert len(ids) == 8
