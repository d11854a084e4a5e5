"""
Generación en N pasos con la proyección G y trazado de trayectorias para análisis.
"""
import csv
from dataclasses import dataclass

import numpy as np

from system.scot import T_MIN, project
from system.teacher import VelocityField, heun_integrate
from system.nets import ParamSet

SCHEDULE_KINDS = ('uniform', 'custom')
TRAJECTORY_HEADER = ['traj_id', 't', 'x0', 'x1']


@dataclass(frozen=True)
class StepSchedule:
    """
    Malla temporal estrictamente decreciente 1 = t_N > ... > t_1 = 0.

    Attributes:
        times (tuple): N + 1 tiempos
        kind (str): 'uniform' o 'custom'
    """
    times: tuple
    kind: str = 'uniform'

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        valid, message = validate_times(times)
        if not valid:
            raise ValueError(message)
        object.__setattr__(self, 'times', times)

    @property
    def nfe(self):
        """Evaluaciones de red de una pasada de ``sample``."""
        return len(self.times) - 1


def validate_times(times):
    """
    Comprueba una malla de tiempos.

    Returns:
        tuple: (es_valido, mensaje)
    """
    if len(times) < 2:
        return False, "La malla necesita al menos dos tiempos"
    if times[0] != 1.0 or times[-1] != 0.0:
        return False, f"La malla debe empezar en 1 y terminar en 0: {times[0]}..{times[-1]}"
    if any(b >= a for a, b in zip(times[:-1], times[1:])):
        return False, "La malla debe ser estrictamente decreciente"
    return True, "Malla válida"


def make_schedule(n_steps, kind='uniform', times=None):
    """
    Construye una malla de N pasos.

    Args:
        n_steps (int): N >= 1
        kind (str): 'uniform' (t_i = i/N) o 'custom'
        times (list, optional): Tiempos explícitos para 'custom' (N + 1 valores)

    Returns:
        StepSchedule: Malla
    """
    if n_steps < 1:
        raise ValueError(f"N debe ser >= 1, recibido: {n_steps}")
    if kind == 'uniform':
        grid = np.arange(n_steps, -1, -1, dtype=np.float64) / n_steps
        return StepSchedule(tuple(grid), kind)
    if kind == 'custom':
        if times is None or len(times) != n_steps + 1:
            raise ValueError(f"Una malla 'custom' de N={n_steps} necesita {n_steps + 1} tiempos")
        return StepSchedule(tuple(times), kind)
    raise ValueError(f"Tipo de malla desconocido: {kind}")


def sample(model, x1, schedule, t_min=T_MIN):
    """
    x̂_{t_{n-1}} = G(x̂_{t_n}, t_n, t_{n-1}) para n = N, ..., 1.

    Args:
        model: Estudiante (ParamSet, EmaShadow o ProjectionMap)
        x1 (np.ndarray): Ruido (lote, dim)
        schedule (StepSchedule): Malla

    Returns:
        np.ndarray: x̂_0
    """
    x = np.asarray(x1, dtype=np.float64)
    for t_hi, t_lo in zip(schedule.times[:-1], schedule.times[1:]):
        x = project(model, x, t_hi, t_lo, t_min)
    return x


def _is_teacher(model):
    return isinstance(model, VelocityField) or (
        isinstance(model, ParamSet) and not model.arch.embedding.embed_s
        and model.arch.tag == 'teacher')


def trace_trajectory(model, x1, schedule, teacher_substeps=10, t_min=T_MIN):
    """
    Registra todos los estados intermedios [(t_i, x_{t_i})] sobre la malla.

    Para el maestro cada intervalo se integra con ``teacher_substeps`` pasos de Heun;
    para el estudiante cada intervalo es una aplicación de G.

    Returns:
        list: Pares (t, arreglo (lote, dim)), tantos como tiempos tiene la malla
    """
    x = np.asarray(x1, dtype=np.float64)
    states = [(schedule.times[0], x.copy())]
    teacher = _is_teacher(model)
    for t_hi, t_lo in zip(schedule.times[:-1], schedule.times[1:]):
        if teacher:
            x = heun_integrate(model, x, t_hi, t_lo, teacher_substeps)
        else:
            x = project(model, x, t_hi, t_lo, t_min)
        states.append((t_lo, x.copy()))
    return states


def trajectory_rows(states, tag):
    """Filas ``traj_id,t,x0,x1`` de una traza (un traj_id por elemento del lote)."""
    rows = []
    batch = states[0][1].shape[0]
    for item in range(batch):
        for t, x in states:
            rows.append([f'{tag}-{item}', repr(float(t)), repr(float(x[item, 0])),
                         repr(float(x[item, 1]))])
    return rows


def write_trajectory_csv(path, traces):
    """
    Escribe trazas etiquetadas en CSV.

    Args:
        path (str): Fichero de salida
        traces (dict): etiqueta -> lista [(t, x)] de ``trace_trajectory``

    Returns:
        int: Número de filas escritas
    """
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(TRAJECTORY_HEADER)
        for tag, states in traces.items():
            rows = trajectory_rows(states, tag)
            writer.writerows(rows)
            count += len(rows)
    return count
