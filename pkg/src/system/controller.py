"""
Orquestación de los experimentos: entrenamiento del maestro, destilación,
evaluación, comparación de estrategias de pesos, exportación de trayectorias y
datos, y calibración de las cotas de calidad.

Todo el azar deriva de ``config.seed`` por nombre de componente, de modo que
cada comando produce las mismas salidas dada la misma configuración.
"""
import json
import os
from dataclasses import replace

import numpy as np
from tqdm import tqdm

from system.baselines import baseline_step, create_baseline_state
from system.nets import AdamHyperParams, AdamMoments, adam_step, init_params
from system.sampler import make_schedule, sample, trace_trajectory, write_trajectory_csv
from system.scot import (DistillSettings, DistillState, LossWeights, ProjectionConfig,
                         distill_step, sample_loss_times)
from system.teacher import TrainingDivergedError, fm_loss, gen_pair, solver_between
from system.tensor_ad import Tape, grad
from utils.checkpoints import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from utils.config import ConfigError, config_hash, validate_config
from utils.data_logger import (METRICS_HEADER, TEACHER_HEADER, TRAIN_HEADER, RunLogger,
                               load_summary, read_csv)
from utils.datasets import dataset_to_csv, derive_rng, derive_seed, sample_dataset, sample_noise
from utils.metrics import (consistency_gap, gaussian_frechet, mean_straightness,
                           sliced_wasserstein)
from utils.visualization import plot_samples, plot_trajectories

MAX_CONSECUTIVE_SKIPS = 10
LOSS_COLUMNS = ('loss_vel', 'loss_con', 'loss_dsm', 'lambda_con')
# cotas de calidad (cociente medido <= cota) congeladas en el registro de calibración
ACCEPTANCE_THRESHOLDS = {
    'teacher_vs_resample': 3.0,
    'nfe1_vs_teacher': 1.5,
    'nfe2_vs_nfe1': 1.1,
    'gap_final_vs_init': 0.2,
    'straightness_vs_teacher': 0.5,
}


def check_config(config):
    valid, message = validate_config(config)
    if not valid:
        raise ConfigError(message)


def training_grid(config):
    """Malla creciente 0 = t_0 < ... < t_N = 1 de la destilación."""
    return tuple(np.linspace(0.0, 1.0, config.distill.grid_steps + 1))


def build_distill_settings(config):
    """
    Traduce la sección ``distill`` de la configuración a ``DistillSettings``.

    Args:
        config (RunConfig): Configuración validada

    Returns:
        DistillSettings: Ajustes del paso de destilación
    """
    d = config.distill
    return DistillSettings(
        grid=training_grid(config),
        projection=ProjectionConfig(t_min=d.t_min, derivative_mode=d.derivative_mode,
                                    fd_step=d.fd_step,
                                    velocity_target_sign=d.velocity_target_sign),
        weights=LossWeights(lambda_vel=d.lambda_vel, lambda_con=d.lambda_con,
                            lambda_dsm=d.lambda_dsm, strategy=d.strategy, clip=tuple(d.clip),
                            refresh_every=d.refresh_every),
        adam=AdamHyperParams(lr=d.lr),
        pair_solver_steps=d.pair_solver_steps,
        consistency_solver_steps=d.consistency_solver_steps,
        consistency_anchor=d.consistency_anchor,
        clip_norm=d.clip_norm,
    )


def eval_schedule(config, index):
    """Malla de inferencia para el NFE de posición ``index`` en ``eval.nfe``."""
    ev = config.eval
    nfe = ev.nfe[index]
    if ev.schedule == 'custom':
        return make_schedule(nfe, 'custom', ev.custom_times[index])
    return make_schedule(nfe)


def load_teacher(path):
    return load_checkpoint(path, 'teacher')


# ============================================
# MAESTRO
# ============================================
def run_train_teacher(config, out_dir, progress=True):
    """
    Entrena el maestro de flow matching y escribe su punto de control.

    Args:
        config (RunConfig): Configuración
        out_dir (str): Directorio de salida
        progress (bool): Mostrar barra de progreso

    Returns:
        dict: Rutas producidas y pérdidas inicial y final

    Raises:
        TrainingDivergedError: Si la pérdida deja de ser finita
    """
    check_config(config)
    logger = RunLogger(out_dir, 'train-teacher')
    root = config.seed
    tc = config.teacher
    digest = config_hash(config)
    hp = AdamHyperParams(lr=tc.lr)

    params = init_params(config.teacher_arch.to_spec('teacher'), derive_seed(root, 'teacher-init'))
    moments = AdamMoments.zeros_like(params)
    losses = []

    bar = tqdm(range(1, tc.iters + 1), desc='Maestro', disable=not progress)
    for step in bar:
        data_spec = replace(config.dataset, seed=derive_seed(root, 'teacher-data', step))
        x0 = sample_dataset(data_spec, tc.batch)
        x1 = sample_noise(tc.batch, x0.shape[1], derive_seed(root, 'teacher-noise', step))
        t = derive_rng(root, 'teacher-time', step).random(tc.batch)

        tape = Tape()
        tape.watch(params)
        loss = fm_loss(params, x0, x1, t, tape)
        value = float(loss.values)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"Pérdida de flow matching no finita en el paso {step}")
        params, moments = adam_step(params, grad(loss, params), moments, hp, step)
        losses.append(value)

        if step == 1 or step % tc.log_every == 0 or step == tc.iters:
            logger.log_row('teacher_log.csv', TEACHER_HEADER, {'step': step, 'fm_loss': value})
            bar.set_postfix(loss=f"{value:.4f}")

    checkpoint = Checkpoint(params=params, step=tc.iters, config_hash=digest,
                            extra={'dataset': config.dataset.name})
    save_checkpoint(checkpoint, logger.register('teacher.json'))
    logger.write_all()
    summary = {'initial_loss': losses[0], 'final_loss': losses[-1], 'steps': tc.iters,
               'config_hash': digest}
    logger.save_summary(summary)
    logger.write_manifest(digest, root)
    print(f"✓ Maestro entrenado: pérdida {losses[0]:.4f} → {losses[-1]:.4f}")
    return {'checkpoint': logger.path('teacher.json'), 'params': params, **summary}


# ============================================
# EVALUACIÓN
# ============================================
def reference_points(config, n=None):
    """Datos de referencia reservados para las métricas."""
    spec = replace(config.dataset, seed=derive_seed(config.seed, 'eval-data'))
    return sample_dataset(spec, n or config.eval.n_samples)


def trace_noise(config, n=None):
    return sample_noise(n or config.eval.n_trace, 2, derive_seed(config.seed, 'trace-noise'))


def measure_gap(config, model, teacher):
    """Brecha de consistencia sobre triples (x_t2, t2, t1, s) de la malla de entrenamiento."""
    ev = config.eval
    x1 = sample_noise(ev.gap_samples, 2, derive_seed(config.seed, 'gap-noise'))
    times = sample_loss_times(derive_rng(config.seed, 'gap-times'), training_grid(config),
                              ev.gap_samples, config.distill.t_min)
    x_t2 = solver_between(teacher, x1, 1.0, times['t2'], n_steps=ev.teacher_steps)
    return consistency_gap(model, teacher, x_t2, times['t2'], times['t1'], times['s_con'],
                           config.distill.consistency_solver_steps, config.distill.t_min)


def evaluate_model(config, model, teacher, metrics=None, nfe_list=None):
    """
    Métricas de un estudiante para cada NFE.

    La rectitud y la brecha de consistencia no dependen del NFE: se calculan una vez
    (la rectitud sobre una malla fina de ``eval.trace_steps`` pasos) y se repiten en
    cada fila.

    Args:
        config (RunConfig): Configuración
        model: Estudiante (ParamSet o EmaShadow)
        teacher (ParamSet): Maestro
        metrics (set, optional): Subconjunto de {'sw2', 'gfd', 'straightness', 'consistency_gap'}
        nfe_list (tuple, optional): NFE a evaluar (por defecto ``eval.nfe``)

    Returns:
        list: Un diccionario por NFE con 'nfe', las métricas y 'samples'
    """
    ev = config.eval
    metrics = set(metrics or ('sw2', 'gfd', 'straightness', 'consistency_gap'))
    if nfe_list is not None:
        config = replace(config, eval=replace(ev, nfe=tuple(nfe_list), schedule='uniform',
                                              custom_times=()))
        ev = config.eval
    reference = reference_points(config)
    noise = sample_noise(ev.n_samples, reference.shape[1], derive_seed(config.seed, 'eval-noise'))
    projection_seed = derive_seed(config.seed, 'sw-projections')

    shared = {}
    if 'straightness' in metrics:
        trace = trace_trajectory(model, trace_noise(config), make_schedule(ev.trace_steps),
                                 t_min=config.distill.t_min)
        shared['straightness'] = mean_straightness(trace)
    if 'consistency_gap' in metrics:
        shared['consistency_gap'] = measure_gap(config, model, teacher)

    rows = []
    for index, nfe in enumerate(ev.nfe):
        generated = sample(model, noise, eval_schedule(config, index), config.distill.t_min)
        row = {'nfe': nfe, 'samples': generated, **shared}
        if 'sw2' in metrics:
            row['sw2'] = sliced_wasserstein(generated, reference, ev.n_proj, projection_seed)
        if 'gfd' in metrics:
            row['gfd'] = gaussian_frechet(generated, reference)
        rows.append(row)
    return rows


def evaluate_teacher(config, teacher):
    """SW₂ y rectitud del maestro con ``eval.teacher_steps`` pasos de Heun."""
    ev = config.eval
    reference = reference_points(config)
    noise = sample_noise(ev.n_samples, reference.shape[1], derive_seed(config.seed, 'eval-noise'))
    samples = gen_pair(teacher, noise, n_steps=ev.teacher_steps).x0_hat
    trace = trace_trajectory(teacher, trace_noise(config), make_schedule(ev.trace_steps),
                             teacher_substeps=max(1, ev.teacher_steps // ev.trace_steps))
    return {
        'sw2': sliced_wasserstein(samples, reference, ev.n_proj,
                                  derive_seed(config.seed, 'sw-projections')),
        'gfd': gaussian_frechet(samples, reference),
        'straightness': mean_straightness(trace),
        'samples': samples,
    }


def metric_row(step, row, record=None):
    out = {'step': step, **{k: v for k, v in row.items() if k in METRICS_HEADER}}
    if record is not None:
        out.update({k: record[k] for k in LOSS_COLUMNS})
    return out


# ============================================
# DESTILACIÓN
# ============================================
def initial_state(config, teacher):
    d = config.distill
    seed = derive_seed(config.seed, 'student-init')
    if d.method == 'scot':
        arch = config.student_arch.to_spec('student')
        warm = teacher if d.student_init == 'teacher' else None
        params = init_params(arch, seed, warm_start=warm)
        return DistillState.create(params, d.mu, d.lambda_con, d.eval_ema)
    return create_baseline_state(teacher, d.student_init, seed, d.mu, d.eval_ema)


def eval_weights(config, state):
    if config.eval.use_ema_weights and state.eval_ema is not None:
        return state.eval_ema.as_params()
    return state.params


def student_checkpoint(config, state, teacher_path):
    d = config.distill
    return Checkpoint(
        params=state.params, step=state.step, config_hash=config_hash(config),
        ema=state.eval_ema.as_params() if state.eval_ema is not None else None,
        extra={'method': d.method, 'strategy': d.strategy, 'lambda_con': state.lambda_con,
               'skipped': state.skipped, 'teacher_checkpoint': teacher_path})


def run_distill(config, teacher_path, out_dir, snapshot_steps=(), progress=True):
    """
    Destila el maestro en un estudiante durante ``distill.iters`` pasos.

    Evalúa en el paso 0, cada ``distill.eval_every`` pasos y al final; cada
    evaluación añade una fila por NFE a ``metrics.csv``.

    Args:
        config (RunConfig): Configuración
        teacher_path (str): Punto de control del maestro
        out_dir (str): Directorio de salida
        snapshot_steps (tuple): Pasos en los que guardar ``student_step{k}.json``
        progress (bool): Mostrar barra de progreso

    Returns:
        dict: Rutas producidas, estado final y filas de métricas

    Raises:
        TrainingDivergedError: Si demasiados pasos seguidos se omiten por valores no finitos
    """
    check_config(config)
    teacher = load_teacher(teacher_path).params
    logger = RunLogger(out_dir, 'distill')
    d = config.distill
    settings = build_distill_settings(config)
    state = initial_state(config, teacher)
    digest = config_hash(config)
    snapshots = {}

    def evaluate(record):
        for row in evaluate_model(config, eval_weights(config, state), teacher):
            logger.log_row('metrics.csv', METRICS_HEADER, metric_row(state.step, row, record))

    evaluate(None)
    consecutive = 0
    bar = tqdm(range(1, d.iters + 1), desc=f'Destilación ({d.method})', disable=not progress)
    for step in bar:
        noise = sample_noise(d.batch, 2, derive_seed(config.seed, 'distill-noise', step))
        rng = derive_rng(config.seed, 'distill-step', step)
        if d.method == 'scot':
            state = distill_step(state, teacher, noise, settings, rng)
        else:
            state = baseline_step(state, teacher, noise, settings, rng, d.method)
        record = state.records[-1]
        state = replace(state, records=[record])
        consecutive = consecutive + 1 if record['skipped'] else 0
        if consecutive >= MAX_CONSECUTIVE_SKIPS:
            raise TrainingDivergedError(f"{consecutive} pasos seguidos con valores no finitos "
                                        f"(paso {step})")

        if step == 1 or step % d.log_every == 0 or step == d.iters or record['skipped']:
            logger.log_row('train_log.csv', TRAIN_HEADER,
                           {k: record[k] for k in TRAIN_HEADER})
            bar.set_postfix(loss=f"{record['total']:.4f}", lam=f"{record['lambda_con']:.3g}")
        if step % d.eval_every == 0 or step == d.iters:
            evaluate(record)
        if step in snapshot_steps:
            name = f'student_step{step}.json'
            save_checkpoint(student_checkpoint(config, state, teacher_path), logger.register(name))
            snapshots[step] = logger.path(name)

    save_checkpoint(student_checkpoint(config, state, teacher_path), logger.register('student.json'))
    logger.write_all()
    final = logger.rows('metrics.csv')
    summary = {
        'method': d.method,
        'steps': state.step,
        'skipped': state.skipped,
        'lambda_con': state.lambda_con,
        'config_hash': digest,
        'final_metrics': [{k: v for k, v in row.items() if k in METRICS_HEADER}
                          for row in final[-len(config.eval.nfe):]],
    }
    logger.save_summary(summary)
    logger.write_manifest(digest, config.seed)
    print(f"✓ Destilación completada: {state.step} pasos, {state.skipped} omitidos")
    return {'checkpoint': logger.path('student.json'), 'state': state, 'snapshots': snapshots,
            'metrics': final, **summary}


# ============================================
# EVALUACIÓN DE UN PUNTO DE CONTROL
# ============================================
def resolve_teacher_path(checkpoint, teacher_path=None):
    path = teacher_path or checkpoint.extra.get('teacher_checkpoint')
    if not path:
        raise CheckpointError("Se necesita el punto de control del maestro (--teacher)")
    return path


def run_eval(config, checkpoint_path, out_dir, teacher_path=None):
    """
    Evalúa un estudiante guardado: una fila de ``eval.csv`` por NFE configurado.

    Returns:
        dict: Filas de métricas y métricas del maestro
    """
    check_config(config)
    checkpoint = load_checkpoint(checkpoint_path, ('student', 'velocity'))
    teacher = load_teacher(resolve_teacher_path(checkpoint, teacher_path)).params
    logger = RunLogger(out_dir, 'eval')
    model = checkpoint.eval_params(config.eval.use_ema_weights)

    rows = evaluate_model(config, model, teacher)
    for row in rows:
        logger.log_row('eval.csv', METRICS_HEADER, metric_row(checkpoint.step, row))
    reference = evaluate_teacher(config, teacher)
    logger.write_all()

    if config.eval.plot:
        generated = {'Maestro': reference['samples'],
                     **{f'Estudiante NFE={row["nfe"]}': row['samples'] for row in rows}}
        plot_samples(reference_points(config), generated, logger.register('samples.png'))

    digest = config_hash(config)
    summary = {
        'checkpoint_step': checkpoint.step,
        'config_hash': digest,
        'teacher': {k: v for k, v in reference.items() if k != 'samples'},
        'student': [{k: v for k, v in row.items() if k != 'samples'} for row in rows],
    }
    logger.save_summary(summary)
    logger.write_manifest(digest, config.seed)
    logger.print_table('eval.csv', ['nfe', 'sw2', 'gfd', 'straightness', 'consistency_gap'])
    return {'rows': logger.rows('eval.csv'), **summary}


# ============================================
# COMPARACIÓN DE ESTRATEGIAS
# ============================================
def run_compare(config, teacher_path, out_dir, progress=True):
    """
    Matriz estrategia × punto de control de la métrica ``compare.metric``.

    Cada estrategia se destila en su propio subdirectorio hasta el último punto de
    control, guardando una instantánea en cada uno.

    Returns:
        dict: tabla {estrategia: {paso: valor}} y ruta de ``compare.csv``
    """
    check_config(config)
    cmp = config.compare
    teacher = load_teacher(teacher_path).params
    logger = RunLogger(out_dir, 'compare')
    header = ['strategy'] + [str(step) for step in cmp.checkpoints]
    table = {}

    for strategy in cmp.strategies:
        cell_config = replace(config, distill=replace(config.distill, strategy=strategy,
                                                      iters=max(cmp.checkpoints)))
        result = run_distill(cell_config, teacher_path, os.path.join(out_dir, strategy),
                             snapshot_steps=tuple(cmp.checkpoints), progress=progress)
        table[strategy] = {}
        for step in cmp.checkpoints:
            checkpoint = load_checkpoint(result['snapshots'][step], ('student', 'velocity'))
            row = evaluate_model(cell_config, checkpoint.eval_params(config.eval.use_ema_weights),
                                 teacher, metrics={cmp.metric}, nfe_list=(cmp.nfe,))[0]
            table[strategy][step] = row[cmp.metric]
        logger.log_row('compare.csv', header, {'strategy': strategy,
                                                **{str(k): v for k, v in table[strategy].items()}})

    logger.write_all()
    digest = config_hash(config)
    logger.save_summary({'metric': cmp.metric, 'nfe': cmp.nfe, 'config_hash': digest,
                         'table': {s: {str(k): v for k, v in row.items()}
                                   for s, row in table.items()}})
    logger.write_manifest(digest, config.seed)
    logger.print_table('compare.csv')
    return {'table': table, 'csv': logger.path('compare.csv')}


# ============================================
# TRAYECTORIAS
# ============================================
def export_trajectories(config, checkpoint_path, out_dir, teacher_path=None, n=None,
                        steps=None, plot=False):
    """
    Traza n trayectorias del maestro y n del estudiante sobre una malla de ``steps``
    pasos y las escribe en ``trajectories.csv``.

    Returns:
        dict: Ruta del CSV y número de filas
    """
    check_config(config)
    checkpoint = load_checkpoint(checkpoint_path, ('student', 'velocity'))
    teacher = load_teacher(resolve_teacher_path(checkpoint, teacher_path)).params
    n = config.eval.n_trace if n is None else n
    steps = steps or config.eval.trace_steps
    if n < 1:
        raise ConfigError(f"n debe ser >= 1, recibido: {n}")
    logger = RunLogger(out_dir, 'export-traj')

    schedule = make_schedule(steps)
    noise = trace_noise(config, n)
    substeps = max(1, config.eval.teacher_steps // steps)
    traces = {
        'teacher': trace_trajectory(teacher, noise, schedule, teacher_substeps=substeps),
        'student': trace_trajectory(checkpoint.eval_params(config.eval.use_ema_weights), noise,
                                    schedule, t_min=config.distill.t_min),
    }
    count = write_trajectory_csv(logger.register('trajectories.csv'), traces)
    print(f"✓ Trayectorias exportadas: {count} filas en {logger.path('trajectories.csv')}")
    if plot:
        plot_trajectories(traces, logger.register('trajectories.png'))
    logger.write_manifest(config_hash(config), config.seed)
    return {'csv': logger.path('trajectories.csv'), 'rows': count}


# ============================================
# DATOS
# ============================================
def export_dataset(config, out_dir, n=None):
    """
    Vuelca ``n`` puntos de ``config.dataset`` (por defecto ``eval.n_samples``) a ``dataset.csv``.

    Returns:
        dict: Ruta del CSV y número de puntos
    """
    check_config(config)
    n = config.eval.n_samples if n is None else n
    if n < 1:
        raise ConfigError(f"n debe ser >= 1, recibido: {n}")
    logger = RunLogger(out_dir, 'export-data')
    points = sample_dataset(config.dataset, n)
    path = dataset_to_csv(points, logger.register('dataset.csv'))
    print(f"✓ Conjunto '{config.dataset.name}' exportado: {n} puntos en {path}")
    logger.write_manifest(config_hash(config), config.seed)
    return {'csv': path, 'rows': n}


# ============================================
# CALIBRACIÓN DE LA ACEPTACIÓN
# ============================================
def resample_baseline(config):
    """SW₂ entre dos muestras independientes de los datos: el suelo de la métrica."""
    ev = config.eval
    held_out = sample_dataset(replace(config.dataset, seed=derive_seed(config.seed, 'resample')),
                              ev.n_samples)
    return sliced_wasserstein(held_out, reference_points(config), ev.n_proj,
                              derive_seed(config.seed, 'sw-projections'))


def acceptance_measurements(config, teacher, distill_dir):
    """
    Lee una destilación terminada y mide lo que comparan las cotas de calidad.

    Args:
        config (RunConfig): Configuración de la destilación (``eval.nfe`` con 1 y 2)
        teacher (ParamSet): Maestro
        distill_dir (str): Directorio de salida de ``run_distill``

    Returns:
        dict: Valores medidos del maestro, de los datos y del estudiante
    """
    if not {1, 2} <= set(config.eval.nfe):
        raise ConfigError("La calibración necesita eval.nfe con 1 y 2")
    summary = load_summary(os.path.join(distill_dir, 'summary.json'))
    if summary is None or summary.get('config_hash') != config_hash(config):
        raise CheckpointError(f"{distill_dir} no contiene una destilación de esta configuración")
    rows = read_csv(os.path.join(distill_dir, 'metrics.csv'))
    initial = next(r for r in rows if int(r['step']) == 0)
    final = {int(r['nfe']): r for r in rows if int(r['step']) == summary['steps']}
    reference = evaluate_teacher(config, teacher)
    return {
        'resample_sw2': resample_baseline(config),
        'teacher_sw2': reference['sw2'],
        'teacher_straightness': reference['straightness'],
        'student_sw2_nfe1': float(final[1]['sw2']),
        'student_sw2_nfe2': float(final[2]['sw2']),
        'gap_init': float(initial['consistency_gap']),
        'gap_final': float(final[1]['consistency_gap']),
        'student_straightness': float(final[1]['straightness']),
        'lambda_con': summary['lambda_con'],
        'skipped': summary['skipped'],
    }


def acceptance_ratios(measured):
    """Cocientes que se comparan con ``ACCEPTANCE_THRESHOLDS``."""
    return {
        'teacher_vs_resample': measured['teacher_sw2'] / measured['resample_sw2'],
        'nfe1_vs_teacher': measured['student_sw2_nfe1'] / measured['teacher_sw2'],
        'nfe2_vs_nfe1': measured['student_sw2_nfe2'] / measured['student_sw2_nfe1'],
        'gap_final_vs_init': measured['gap_final'] / measured['gap_init'],
        'straightness_vs_teacher': (measured['student_straightness']
                                    / measured['teacher_straightness']),
    }


def frozen_thresholds(record):
    """Cotas de un registro existente; las por defecto si aún no hay registro."""
    if record is None:
        return dict(ACCEPTANCE_THRESHOLDS)
    thresholds = record.get('thresholds') or {}
    if set(thresholds) != set(ACCEPTANCE_THRESHOLDS):
        raise ConfigError(f"Cotas del registro de calibración incompletas: {sorted(thresholds)}")
    return {name: float(value) for name, value in thresholds.items()}


def run_calibrate(config, out_dir, record_path=None, progress=True):
    """
    Ejecución de calibración: maestro y destilación completos, medición de los
    cocientes de calidad y registro junto a las cotas.

    Si ``record_path`` ya existe, sus cotas se conservan (están congeladas) y sólo se
    reescriben las mediciones. Un registro con ``config_hash`` de otra configuración
    se rechaza.

    Args:
        config (RunConfig): Configuración (p. ej. ``configs/ring8.json``)
        out_dir (str): Directorio de salida (``teacher/`` y ``distill/`` dentro)
        record_path (str, optional): Registro JSON a actualizar
        progress (bool): Mostrar barras de progreso

    Returns:
        dict: Registro con mediciones, cocientes, cotas y veredicto por criterio
    """
    check_config(config)
    digest = config_hash(config)
    previous = None
    if record_path and os.path.exists(record_path):
        previous = load_summary(record_path)
        if previous is None:
            raise ConfigError(f"Registro de calibración ilegible: {record_path}")
        if previous.get('config_hash') not in (None, digest):
            raise ConfigError(f"El registro {record_path} corresponde a otra configuración")
    thresholds = frozen_thresholds(previous)

    teacher = run_train_teacher(config, os.path.join(out_dir, 'teacher'), progress=progress)
    distill_dir = os.path.join(out_dir, 'distill')
    run_distill(config, teacher['checkpoint'], distill_dir, progress=progress)
    measured = acceptance_measurements(config, teacher['params'], distill_dir)
    ratios = acceptance_ratios(measured)

    logger = RunLogger(out_dir, 'calibrate')
    record = {
        'config_hash': digest,
        'seed': int(config.seed),
        'thresholds': thresholds,
        'measured': measured,
        'ratios': ratios,
        'passed': {name: bool(ratios[name] <= thresholds[name]) for name in thresholds},
    }
    if previous is not None and previous.get('notes'):
        record['notes'] = previous['notes']
    logger.save_json('calibration.json', record)
    if record_path:
        with open(record_path, 'w', encoding='utf-8') as f:
            json.dump(record, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write('\n')
        print(f"✓ Registro de calibración actualizado: {record_path}")
    header = ['criterion', 'ratio', 'threshold', 'passed']
    for name in thresholds:
        logger.log_row('calibration.csv', header, {'criterion': name, 'ratio': ratios[name],
                                                   'threshold': thresholds[name],
                                                   'passed': record['passed'][name]})
    logger.write_all()
    logger.write_manifest(digest, config.seed)
    logger.print_table('calibration.csv')
    return record
