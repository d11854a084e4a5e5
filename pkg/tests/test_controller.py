"""
Ejecuciones de extremo a extremo con una configuración diminuta (segundos en CPU).
"""
import json
import os
from dataclasses import replace

import numpy as np
import pytest

from main import main
from system.controller import (ACCEPTANCE_THRESHOLDS, export_dataset, export_trajectories,
                               run_calibrate, run_compare, run_distill, run_eval,
                               run_train_teacher)
from utils.checkpoints import load_checkpoint
from utils.config import (ArchConfig, CompareConfig, ConfigError, DistillConfig, EvalConfig,
                          RunConfig, TeacherTrainConfig, config_hash, config_to_dict, save_config)
from utils.data_logger import load_summary, read_csv

TINY_ARCH = ArchConfig(hidden=(16, 16), num_frequencies=4)


def tiny_config(**distill_changes):
    distill = DistillConfig(lr=1e-3, batch=32, iters=6, grid_steps=4, refresh_every=2,
                            pair_solver_steps=4, mu=0.9, eval_ema=0.9, eval_every=3, log_every=2)
    return RunConfig(
        seed=3,
        teacher_arch=TINY_ARCH,
        student_arch=TINY_ARCH,
        teacher=TeacherTrainConfig(lr=1e-2, batch=64, iters=30, log_every=10),
        distill=replace(distill, **distill_changes),
        eval=EvalConfig(nfe=(1, 2), n_samples=64, n_proj=16, teacher_steps=8, trace_steps=4,
                        n_trace=4, gap_samples=32),
        compare=CompareConfig(checkpoints=(2, 4), metric='sw2', nfe=1),
    )


@pytest.fixture(scope='module')
def teacher_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp('teacher'))
    return run_train_teacher(tiny_config(), out, progress=False)


@pytest.fixture(scope='module')
def distill_run(tmp_path_factory, teacher_run):
    out = str(tmp_path_factory.mktemp('distill'))
    result = run_distill(tiny_config(), teacher_run['checkpoint'], out, progress=False)
    return out, result


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


# ============================================
# MAESTRO
# ============================================
def test_teacher_outputs(teacher_run):
    out = os.path.dirname(teacher_run['checkpoint'])
    manifest = read_json(os.path.join(out, 'run_manifest.json'))
    checkpoint = load_checkpoint(teacher_run['checkpoint'], 'teacher')
    assert manifest['command'] == 'train-teacher'
    assert manifest['config_hash'] == checkpoint.config_hash == config_hash(tiny_config())
    assert manifest['seed'] == 3
    assert {'teacher.json', 'teacher_log.csv', 'summary.json'} <= set(manifest['files'])
    assert checkpoint.step == 30
    steps = [int(row['step']) for row in read_csv(os.path.join(out, 'teacher_log.csv'))]
    assert steps == [1, 10, 20, 30]
    assert np.isfinite(teacher_run['final_loss'])


def test_teacher_training_is_byte_identical(tmp_path, teacher_run):
    again = run_train_teacher(tiny_config(), str(tmp_path), progress=False)
    for name in ('teacher.json', 'teacher_log.csv'):
        first = os.path.join(os.path.dirname(teacher_run['checkpoint']), name)
        second = os.path.join(os.path.dirname(again['checkpoint']), name)
        assert open(first, 'rb').read() == open(second, 'rb').read()


# ============================================
# DESTILACIÓN
# ============================================
def test_distill_outputs(distill_run):
    out, result = distill_run
    metrics = read_csv(os.path.join(out, 'metrics.csv'))
    assert [(int(r['step']), int(r['nfe'])) for r in metrics] == \
        [(0, 1), (0, 2), (3, 1), (3, 2), (6, 1), (6, 2)]
    for row in metrics:
        for column in ('sw2', 'gfd', 'straightness', 'consistency_gap'):
            assert np.isfinite(float(row[column]))
    assert metrics[0]['loss_vel'] == ''

    log = read_csv(os.path.join(out, 'train_log.csv'))
    assert [int(r['step']) for r in log] == [1, 2, 4, 6]
    for row in log:
        assert 0.01 <= float(row['lambda_con']) <= 10.0
        assert row['skipped'] == '0'

    checkpoint = load_checkpoint(result['checkpoint'], 'student')
    assert checkpoint.step == 6
    assert checkpoint.ema is not None
    assert checkpoint.extra['method'] == 'scot'
    assert checkpoint.extra['strategy'] == 'normalized'
    manifest = read_json(os.path.join(out, 'run_manifest.json'))
    assert manifest['config_hash'] == checkpoint.config_hash
    assert {'student.json', 'metrics.csv', 'train_log.csv', 'summary.json'} <= \
        set(manifest['files'])


def test_distill_is_reproducible(tmp_path, teacher_run, distill_run):
    out, _ = distill_run
    run_distill(tiny_config(), teacher_run['checkpoint'], str(tmp_path), progress=False)
    for name in ('student.json', 'metrics.csv', 'train_log.csv'):
        assert open(os.path.join(out, name), 'rb').read() == \
            open(os.path.join(str(tmp_path), name), 'rb').read()


@pytest.mark.parametrize('changes', [
    {'strategy': 'fixed', 'lambda_con': 0.0},
    {'lambda_con': 0.0},
    {'strategy': 'adaptive', 'lambda_con': 0.0},
    {'strategy': 'fixed', 'lambda_vel': 0.0},
    {'derivative_mode': 'fd', 'consistency_anchor': 'trajectory'},
])
def test_distill_variants_run(tmp_path, teacher_run, changes):
    config = tiny_config(iters=2, eval_every=2, **changes)
    result = run_distill(config, teacher_run['checkpoint'], str(tmp_path), progress=False)
    assert result['steps'] == 2
    assert result['skipped'] == 0
    if 'lambda_con' in changes:
        assert result['lambda_con'] == 0.0
        assert all(float(row['lambda_con']) == 0.0
                   for row in read_csv(os.path.join(str(tmp_path), 'train_log.csv')))
    checkpoint = load_checkpoint(result['checkpoint'], 'student')
    assert checkpoint.extra['strategy'] == config.distill.strategy


def test_eval_reproduces_final_metrics(tmp_path, distill_run):
    out, result = distill_run
    config = tiny_config()
    config = replace(config, eval=replace(config.eval, plot=True))
    evaluation = run_eval(config, result['checkpoint'], str(tmp_path))
    assert len(evaluation['rows']) == 2
    for row, final in zip(evaluation['rows'], result['final_metrics']):
        assert row['nfe'] == final['nfe']
        for metric in ('sw2', 'gfd', 'straightness', 'consistency_gap'):
            assert row[metric] == final[metric]
    assert evaluation['teacher']['sw2'] > 0.0
    assert os.path.exists(os.path.join(str(tmp_path), 'eval.csv'))
    assert os.path.exists(os.path.join(str(tmp_path), 'samples.png'))


def test_compare_table(tmp_path, teacher_run):
    result = run_compare(tiny_config(), teacher_run['checkpoint'], str(tmp_path), progress=False)
    assert set(result['table']) == {'adaptive', 'fixed', 'normalized'}
    rows = read_csv(result['csv'])
    assert list(rows[0]) == ['strategy', '2', '4']
    assert len(rows) == 3
    for row in rows:
        assert all(np.isfinite(float(row[step])) for step in ('2', '4'))
    assert os.path.exists(os.path.join(str(tmp_path), 'fixed', 'student_step2.json'))


def test_export_trajectories(tmp_path, distill_run):
    _, result = distill_run
    exported = export_trajectories(tiny_config(), result['checkpoint'], str(tmp_path), n=4,
                                   steps=18, plot=True)
    assert exported['rows'] == 2 * 4 * 19
    rows = read_csv(exported['csv'])
    assert len(rows) == 152
    assert rows[0]['traj_id'] == 'teacher-0' and float(rows[0]['t']) == 1.0
    assert os.path.exists(os.path.join(str(tmp_path), 'trajectories.png'))


def test_export_dataset(tmp_path):
    config = tiny_config()
    exported = export_dataset(config, str(tmp_path), n=10)
    rows = read_csv(exported['csv'])
    assert exported['rows'] == 10
    assert list(rows[0]) == ['x0', 'x1']
    assert len(rows) == 10
    manifest = read_json(os.path.join(str(tmp_path), 'run_manifest.json'))
    assert manifest['files'] == ['dataset.csv']
    with pytest.raises(ConfigError):
        export_dataset(config, str(tmp_path), n=0)


# ============================================
# CALIBRACIÓN
# ============================================
def test_calibration_record_keeps_frozen_thresholds(tmp_path):
    config = tiny_config()
    record_path = tmp_path / 'record.json'
    frozen = {name: 100.0 for name in ACCEPTANCE_THRESHOLDS}
    record_path.write_text(json.dumps({'config_hash': None, 'measured': None,
                                       'thresholds': frozen, 'notes': 'desk'}),
                           encoding='utf-8')
    record = run_calibrate(config, str(tmp_path / 'run'), record_path=str(record_path),
                           progress=False)
    assert record['thresholds'] == frozen
    assert record['config_hash'] == config_hash(config)
    assert set(record['ratios']) == set(ACCEPTANCE_THRESHOLDS)
    assert all(np.isfinite(value) for value in record['ratios'].values())
    assert record['passed'] == {name: record['ratios'][name] <= 100.0 for name in frozen}

    saved = load_summary(str(record_path))
    assert saved['thresholds'] == frozen
    assert saved['notes'] == 'desk'
    assert saved['measured']['student_sw2_nfe1'] == record['measured']['student_sw2_nfe1']
    assert saved['measured']['lambda_con'] == load_checkpoint(
        os.path.join(str(tmp_path / 'run'), 'distill', 'student.json'), 'student'
    ).extra['lambda_con']
    rows = read_csv(os.path.join(str(tmp_path / 'run'), 'calibration.csv'))
    assert [row['criterion'] for row in rows] == list(frozen)


def test_calibration_rejects_foreign_or_incomplete_record(tmp_path):
    record_path = tmp_path / 'record.json'
    record_path.write_text(json.dumps({'config_hash': 'otra', 'thresholds': {}}),
                           encoding='utf-8')
    with pytest.raises(ConfigError):
        run_calibrate(tiny_config(), str(tmp_path / 'run'), record_path=str(record_path),
                      progress=False)
    record_path.write_text(json.dumps({'config_hash': None, 'thresholds': {'nfe2_vs_nfe1': 1.1}}),
                           encoding='utf-8')
    with pytest.raises(ConfigError):
        run_calibrate(tiny_config(), str(tmp_path / 'run'), record_path=str(record_path),
                      progress=False)
    assert not os.path.exists(str(tmp_path / 'run'))


def test_reflow_baseline(tmp_path, teacher_run):
    config = tiny_config(method='reflow', iters=3, eval_every=3)
    result = run_distill(config, teacher_run['checkpoint'], str(tmp_path / 'reflow'),
                         progress=False)
    checkpoint = load_checkpoint(result['checkpoint'], 'velocity')
    assert checkpoint.extra['method'] == 'reflow'
    assert all(float(row['lambda_con']) == 0.0
               for row in read_csv(os.path.join(str(tmp_path / 'reflow'), 'train_log.csv')))
    evaluation = run_eval(config, result['checkpoint'], str(tmp_path / 'eval'))
    assert all(np.isfinite(row['sw2']) for row in evaluation['rows'])


# ============================================
# LÍNEA DE COMANDOS
# ============================================
def test_cli_exit_codes(tmp_path, teacher_run):
    good = save_config(tiny_config(iters=2, eval_every=2), str(tmp_path / 'good.json'))
    assert main(['distill', '--config', good, '--teacher', teacher_run['checkpoint'],
                 '--out', str(tmp_path / 'run'), '--quiet']) == 0

    data = config_to_dict(tiny_config(grid_steps=1))
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps(data), encoding='utf-8')
    assert main(['distill', '--config', str(bad), '--teacher', teacher_run['checkpoint'],
                 '--out', str(tmp_path / 'bad')]) == 1
    assert main(['eval', '--config', str(tmp_path / 'missing.json'),
                 '--checkpoint', 'student.json']) == 1
    assert main(['distill', '--config', good, '--teacher', str(tmp_path / 'none.json'),
                 '--out', str(tmp_path / 'none')]) == 2
    assert main(['export-traj', '--config', good, '--checkpoint', teacher_run['checkpoint'],
                 '--out', str(tmp_path / 'wrong')]) == 2
    assert main(['export-data', '--config', good, '--n', '0',
                 '--out', str(tmp_path / 'empty')]) == 1
