"""
Arcos de referencia que enderezan la trayectoria con un estudiante de velocidad
v_φ(x, t) (misma arquitectura que el maestro):

- reflow: ||v_φ(x_t, t) − (x1 − x̂0)||² con t uniforme sobre pares del maestro
- instaflow: el mismo residuo sólo en t = 1
- flowdreamer: ||v_φ(x_t, t) − v_θ(x_t, t)||²

El estudiante se evalúa a través de ``VelocityInducedMap`` (un salto de Euler).
"""
from dataclasses import replace

import numpy as np

from system.nets import ParamSet, all_finite, init_params, mlp_forward, time_column
from system.scot import DistillState, apply_gradients, skip_step
from system.teacher import as_field, gen_pair, interpolate
from system.tensor_ad import Tape, grad, squared_error

BASELINE_METHODS = ('reflow', 'instaflow', 'flowdreamer')


def velocity_arch(teacher_arch):
    """Arquitectura del estudiante de velocidad: la del maestro con etiqueta 'velocity'."""
    return replace(teacher_arch, tag='velocity')


def init_velocity_student(teacher_params, mode='teacher', seed=0):
    """
    Args:
        teacher_params (ParamSet): Maestro
        mode (str): 'teacher' (copia de todos los pesos) o 'random'
        seed (int): Semilla del arranque aleatorio

    Returns:
        ParamSet: Estudiante de velocidad
    """
    arch = velocity_arch(teacher_params.arch)
    if mode == 'teacher':
        return ParamSet(arch, {name: a.copy() for name, a in teacher_params.items()}, seed=seed)
    if mode == 'random':
        return init_params(arch, seed)
    raise ValueError(f"Inicialización del estudiante desconocida: {mode}")


def _velocity(params, x_node, t_col):
    return mlp_forward(params, x_node, time_column(t_col, x_node.tape, x_node.shape[0]))


def reflow_loss(params, pair, t, tape):
    """Regresión de la velocidad a la cuerda del par en tiempos t por fila."""
    t_col = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    x_t = tape.constant(interpolate(pair.x0_hat, pair.x1, t_col))
    return squared_error(_velocity(params, x_t, t_col), tape.constant(pair.x1 - pair.x0_hat))


def instaflow_loss(params, pair, tape):
    """Residuo de reflow evaluado sólo en t = 1 (x_t = x1)."""
    return reflow_loss(params, pair, np.ones(pair.x1.shape[0]), tape)


def flowdreamer_loss(params, teacher, pair, t, tape):
    """Regresión de la velocidad a la del maestro sobre la interpolación del par."""
    t_col = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    x_t = interpolate(pair.x0_hat, pair.x1, t_col)
    target = as_field(teacher)(x_t, t_col)
    return squared_error(_velocity(params, tape.constant(x_t), t_col), tape.constant(target))


def baseline_loss(method, params, teacher, pair, t, tape):
    if method == 'reflow':
        return reflow_loss(params, pair, t, tape)
    if method == 'instaflow':
        return instaflow_loss(params, pair, tape)
    if method == 'flowdreamer':
        return flowdreamer_loss(params, teacher, pair, t, tape)
    raise ValueError(f"Método de referencia desconocido: {method}")


def baseline_step(state, teacher, noise, settings, rng, method):
    """
    Un paso de un arco de referencia con la misma mecánica que ``distill_step``
    (recorte de norma global, Adam, sombras EMA).

    Returns:
        DistillState: Nuevo estado
    """
    if state.params.arch.tag != 'velocity':
        raise ValueError("Los arcos de referencia requieren un estudiante de velocidad")
    pair = gen_pair(teacher, noise, n_steps=settings.pair_solver_steps)
    t = rng.random(noise.shape[0])
    tape = Tape()
    tape.watch(state.params)
    loss = baseline_loss(method, state.params, teacher, pair, t, tape)
    record = {'loss_vel': float(loss.values), 'loss_con': 0.0, 'loss_dsm': 0.0,
              'lambda_vel': 1.0, 'lambda_con': 0.0, 'lambda_dsm': 0.0,
              'total': float(loss.values)}
    if not np.isfinite(record['total']):
        return skip_step(state, record, "pérdida no finita")
    grads = grad(loss, state.params)
    if not all_finite(grads):
        return skip_step(state, record, "gradiente no finito")
    return apply_gradients(state, grads, settings, record)


def create_baseline_state(teacher_params, mode, seed, mu, eval_decay=None):
    return DistillState.create(init_velocity_student(teacher_params, mode, seed), mu, 0.0,
                               eval_decay)
