"""
Maestro de flow matching: pérdida de entrenamiento, integradores de EDO (Heun y
Euler), generación de pares (ruido, muestra limpia) y campos de velocidad.

Convención temporal: x_t = t·x1 + (1 − t)·x0, con x1 ruido (t = 1) y x0 datos (t = 0).
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from system.nets import mlp_forward, time_column
from system.tensor_ad import Tape, squared_error

SOLVER_METHODS = ('heun', 'euler')


class SolverError(RuntimeError):
    """El integrador encontró un estado no finito."""


class TrainingDivergedError(RuntimeError):
    """La pérdida de entrenamiento dejó de ser finita."""


# ============================================
# CAMPOS DE VELOCIDAD
# ============================================
class VelocityField(ABC):
    """
    Evaluador (x, t) -> velocidad con la misma dimensión que x.

    Las subclases implementan ``forward`` sobre la cinta; ``__call__`` evalúa sin
    registrar operaciones.
    """

    @abstractmethod
    def forward(self, x, t):
        """
        Args:
            x (TensorNode): Puntos (lote, dim)
            t: Tiempo (escalar, arreglo (lote,) / (lote, 1) o nodo)

        Returns:
            TensorNode: Velocidades (lote, dim)
        """

    def __call__(self, x, t):
        tape = Tape(record=False)
        return self.forward(tape.constant(x), t).values


class NeuralVelocityField(VelocityField):
    """Campo v_θ(x, t) respaldado por un ParamSet."""

    def __init__(self, params):
        if params.arch.embedding.embed_s:
            raise ValueError("Un campo de velocidad no recibe el tiempo destino s")
        self.params = params

    def forward(self, x, t):
        return mlp_forward(self.params, x, t)


class ConstantField(VelocityField):
    """v(x, t) = c."""

    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=np.float64)

    def forward(self, x, t):
        return x.tape.constant(np.broadcast_to(self.velocity, x.shape).copy())


class LinearContractionField(VelocityField):
    """v(x, t) = −rate·x."""

    def __init__(self, rate=1.0):
        self.rate = float(rate)

    def forward(self, x, t):
        return -self.rate * x


class ChordField(VelocityField):
    """
    v(x, t) = x1 − a para un lote acoplado: la trayectoria que parte de x1 en t = 1
    es la cuerda recta que termina exactamente en a en t = 0.
    """

    def __init__(self, x1, target):
        self.velocity = np.asarray(x1, dtype=np.float64) - np.asarray(target, dtype=np.float64)

    def forward(self, x, t):
        if x.shape != self.velocity.shape:
            raise ValueError(f"ChordField construido para {self.velocity.shape}, recibido {x.shape}")
        return x.tape.constant(self.velocity)


def as_field(model):
    """Acepta un VelocityField o un ParamSet del maestro."""
    if isinstance(model, VelocityField):
        return model
    return NeuralVelocityField(model)


# ============================================
# FLOW MATCHING
# ============================================
def interpolate(x0, x1, t):
    """
    Interpolación lineal x_t = t·x1 + (1 − t)·x0.

    Args:
        x0 (np.ndarray): Puntos limpios
        x1 (np.ndarray): Puntos de ruido
        t (float | np.ndarray): Tiempo(s) en [0, 1]; columna (lote, 1) para tiempos por fila
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"Tiempo de interpolación fuera de [0, 1]: {t.min()}..{t.max()}")
    return t * np.asarray(x1, dtype=np.float64) + (1.0 - t) * np.asarray(x0, dtype=np.float64)


def fm_loss(model, x0, x1, t, tape=None):
    """
    Pérdida de flow matching: media sobre el lote de ||(x1 − x0) − v(x_t, t)||².

    Args:
        model (ParamSet | VelocityField): Maestro (si es ParamSet, debe estar observado
            en ``tape`` para obtener gradientes)
        x0, x1 (np.ndarray): Lote acoplado (lote, dim)
        t (np.ndarray): Tiempos (lote,) o (lote, 1)
        tape (Tape, optional): Cinta; se crea una si no se pasa

    Returns:
        TensorNode: Pérdida escalar en la cinta
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise ValueError("El lote de flow matching está vacío")
    tape = tape if tape is not None else Tape()
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    xt = tape.constant(interpolate(x0, x1, t))
    prediction = as_field(model).forward(xt, time_column(t, tape, x0.shape[0]))
    return squared_error(prediction, tape.constant(np.asarray(x1) - x0))


# ============================================
# INTEGRADORES
# ============================================
def heun_integrate(field, x, t_from, t_to, n_steps, method='heun'):
    """
    Integra dx/dt = field(x, t) desde t_from hasta t_to en ``n_steps`` subpasos uniformes.

    Los tiempos pueden ser escalares o un arreglo por fila (lote,); cada fila usa su
    propio tamaño de paso con el mismo número de subpasos. La dirección puede ser
    hacia delante o hacia atrás.

    Args:
        field (VelocityField | ParamSet): Campo de velocidad
        x (np.ndarray): Estado inicial (lote, dim)
        t_from, t_to (float | np.ndarray): Tiempos inicial y final en [0, 1]
        n_steps (int): Número de subpasos (>= 1)
        method (str): 'heun' (trapecio explícito) o 'euler'

    Returns:
        np.ndarray: Estado en t_to

    Raises:
        SolverError: Si aparece un estado no finito
    """
    if method not in SOLVER_METHODS:
        raise ValueError(f"Método de integración desconocido: {method}")
    if n_steps < 1:
        raise ValueError(f"n_steps debe ser >= 1, recibido: {n_steps}")
    field = as_field(field)
    x = np.array(x, dtype=np.float64)
    batch = x.shape[0]
    t_from = np.broadcast_to(np.asarray(t_from, dtype=np.float64).reshape(-1, 1), (batch, 1))
    t_to = np.broadcast_to(np.asarray(t_to, dtype=np.float64).reshape(-1, 1), (batch, 1))
    for bound in (t_from, t_to):
        if np.any(bound < 0.0) or np.any(bound > 1.0):
            raise ValueError("Los tiempos de integración deben estar en [0, 1]")

    h = (t_to - t_from) / n_steps
    for k in range(n_steps):
        t = t_from + k * h
        velocity = field(x, t)
        if method == 'euler':
            x = x + h * velocity
        else:
            predictor = x + h * velocity
            corrector = field(predictor, t + h if k < n_steps - 1 else t_to)
            x = x + 0.5 * h * (velocity + corrector)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"Estado no finito en el subpaso {k + 1}/{n_steps} "
                              f"(t = {float(t.min()):.4f})")
    return x


@dataclass
class TrajectoryPair:
    """
    Par (ruido, muestra limpia) generado por el maestro.

    Attributes:
        x1 (np.ndarray): Ruido en t = 1
        x0_hat (np.ndarray): Salida del integrador en t = 0
        solver_steps (int): Subpasos usados
        states (list): Estados intermedios [(t_i, x_{t_i})] si se pidieron
    """
    x1: np.ndarray
    x0_hat: np.ndarray
    solver_steps: int
    states: list = field(default_factory=list)


def gen_pair(model, x1, n_steps=50, method='heun', keep_states=False):
    """
    Genera x̂0 = x1 + ∫_1^0 v_θ dt con el integrador del maestro.

    Args:
        model (ParamSet | VelocityField): Maestro
        x1 (np.ndarray): Ruido (lote, dim)
        n_steps (int): Subpasos del integrador
        method (str): 'heun' o 'euler'
        keep_states (bool): Guardar los estados intermedios

    Returns:
        TrajectoryPair: Par generado
    """
    x1 = np.asarray(x1, dtype=np.float64)
    if not keep_states:
        x0_hat = heun_integrate(model, x1, 1.0, 0.0, n_steps, method=method)
        return TrajectoryPair(x1=x1, x0_hat=x0_hat, solver_steps=n_steps)

    times = np.linspace(1.0, 0.0, n_steps + 1)
    states = [(1.0, x1.copy())]
    x = x1
    for t_hi, t_lo in zip(times[:-1], times[1:]):
        x = heun_integrate(model, x, t_hi, t_lo, 1, method=method)
        states.append((float(t_lo), x.copy()))
    return TrajectoryPair(x1=x1, x0_hat=x, solver_steps=n_steps, states=states)


def solver_between(model, x_t2, t2, t1, n_steps=1, method='heun'):
    """
    Integra la EDO del maestro desde t2 hacia abajo hasta t1 (Solver de la pérdida
    de consistencia).

    Args:
        model (ParamSet | VelocityField): Maestro
        x_t2 (np.ndarray): Estado en t2
        t2, t1 (float | np.ndarray): Tiempos con 0 <= t1 <= t2 <= 1 (por fila si son arreglos)
        n_steps (int): Subpasos (se ignora si t1 == t2 en todas las filas)

    Returns:
        np.ndarray: Estado en t1

    Raises:
        ValueError: Si t1 > t2 en alguna fila
    """
    t2 = np.asarray(t2, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    if np.any(t1 > t2):
        raise ValueError("solver_between requiere t1 <= t2")
    if np.all(t1 == t2):
        return np.array(x_t2, dtype=np.float64)
    return heun_integrate(model, x_t2, t2, t1, n_steps, method=method)
