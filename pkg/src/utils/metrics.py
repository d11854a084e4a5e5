"""
Métricas de evaluación: distancia de Wasserstein rebanada, distancia de Fréchet
entre ajustes gaussianos, rectitud de trayectorias y brecha de consistencia.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from system.scot import T_MIN, project
from system.teacher import solver_between
from utils.datasets import counter_rng, gaussian

DEGENERATE_JITTER = 1e-9
CHORD_EPS = 1e-12


# ============================================
# DISTANCIAS ENTRE DISTRIBUCIONES
# ============================================
def random_directions(n_proj, dim, seed):
    """Direcciones unitarias uniformes en la esfera (n_proj, dim)."""
    if n_proj < 1:
        raise ValueError(f"n_proj debe ser >= 1, recibido: {n_proj}")
    directions = gaussian(counter_rng(seed), (n_proj, dim))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def sliced_wasserstein(a, b, n_proj=128, seed=0):
    """
    Media sobre n_proj direcciones aleatorias de la distancia W2 unidimensional
    entre las proyecciones ordenadas de ambos conjuntos.

    Args:
        a, b (np.ndarray): Conjuntos de puntos (n, dim) del mismo tamaño
        n_proj (int): Número de direcciones
        seed (int): Semilla de las direcciones (compartida para que la métrica sea simétrica)

    Returns:
        float: Distancia >= 0
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Los conjuntos deben tener la misma forma: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("sliced_wasserstein necesita al menos 2 puntos por conjunto")
    directions = random_directions(n_proj, a.shape[1], seed)
    proj_a = np.sort(a @ directions.T, axis=0)
    proj_b = np.sort(b @ directions.T, axis=0)
    per_direction = np.sqrt(np.mean((proj_a - proj_b) ** 2, axis=0))
    return float(np.mean(per_direction))


@dataclass
class Statistic:
    """Media y covarianza de un conjunto de puntos."""
    mean: np.ndarray
    cov: np.ndarray


def get_statistic(points):
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 3:
        raise ValueError("Se necesitan al menos 3 puntos para estimar la covarianza")
    return Statistic(mean=points.mean(axis=0), cov=np.atleast_2d(np.cov(points, rowvar=False)))


def _regularize(cov):
    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues.min() <= CHORD_EPS * max(1.0, eigenvalues.max()):
        return cov + DEGENERATE_JITTER * np.eye(cov.shape[0])
    return cov


def trace_sqrt_product(cov_a, cov_b):
    """
    tr((C_A·C_B)^{1/2}).

    En 2D: tr√M = sqrt(tr M + 2·sqrt(det M)), válido porque M = C_A·C_B tiene
    autovalores reales no negativos. En otras dimensiones se usa ``scipy.linalg.sqrtm``.
    """
    product = cov_a @ cov_b
    if product.shape == (2, 2):
        det = max(float(np.linalg.det(product)), 0.0)
        return float(np.sqrt(max(np.trace(product) + 2.0 * np.sqrt(det), 0.0)))
    root = linalg.sqrtm(product)
    return float(np.real(np.trace(root)))


def frechet_distance(stat_a, stat_b):
    """||μ_A − μ_B||² + tr(C_A + C_B − 2(C_A·C_B)^{1/2}), recortada a >= 0."""
    cov_a = _regularize(stat_a.cov)
    cov_b = _regularize(stat_b.cov)
    diff = stat_a.mean - stat_b.mean
    value = (float(diff @ diff) + float(np.trace(cov_a) + np.trace(cov_b))
             - 2.0 * trace_sqrt_product(cov_a, cov_b))
    return max(value, 0.0)


def gaussian_frechet(a, b):
    """
    Distancia de Fréchet entre los ajustes gaussianos de dos conjuntos de puntos.

    Args:
        a, b (np.ndarray): Conjuntos (n, dim) con n >= 3

    Returns:
        float: Distancia >= 0
    """
    return frechet_distance(get_statistic(a), get_statistic(b))


# ============================================
# TRAYECTORIAS
# ============================================
def straightness(states):
    """
    Desviación máxima respecto de la cuerda: máximo sobre los puntos interiores de la
    distancia perpendicular a la cuerda (primero → último), dividida por su longitud.

    Args:
        states (np.ndarray): Estados ordenados (T, dim), T >= 3

    Returns:
        float: 0 para trayectorias colineales

    Raises:
        ValueError: Si hay menos de 3 estados o la cuerda mide < 1e-12
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[0] < 3:
        raise ValueError("straightness necesita al menos 3 estados (T, dim)")
    start, end = states[0], states[-1]
    chord = end - start
    length = float(np.linalg.norm(chord))
    if length < CHORD_EPS:
        raise ValueError(f"Cuerda degenerada (longitud {length:.3e})")
    direction = chord / length
    offsets = states[1:-1] - start
    along = offsets @ direction
    perpendicular = offsets - along[:, None] * direction
    return float(np.max(np.linalg.norm(perpendicular, axis=1)) / length)


def mean_straightness(trace):
    """
    Rectitud media de un lote trazado con ``trace_trajectory``.

    Args:
        trace (list): [(t, x (lote, dim))]

    Returns:
        float: Media sobre los elementos del lote
    """
    stacked = np.stack([x for _, x in trace], axis=1)
    return float(np.mean([straightness(item) for item in stacked]))


def consistency_gap(model, teacher, x_t2, t2, t1, s, solver_steps=1, t_min=T_MIN):
    """
    E||G(x_t1, t1, s) − G(x_t2, t2, s)||² con x_t1 = Solver(x_t2, t2, t1; θ).

    Medida pura: ambos términos usan los mismos pesos, sin stop-gradient.

    Args:
        model: Estudiante (ParamSet, EmaShadow o ProjectionMap)
        teacher (ParamSet | VelocityField): Maestro
        x_t2 (np.ndarray): Estados (lote, dim) en t2
        t2, t1, s (float | np.ndarray): Tiempos con s <= t1 < t2

    Returns:
        float: Brecha >= 0
    """
    x_t2 = np.asarray(x_t2, dtype=np.float64)
    batch = x_t2.shape[0]
    t2 = np.broadcast_to(np.asarray(t2, dtype=np.float64).reshape(-1), (batch,))
    t1 = np.broadcast_to(np.asarray(t1, dtype=np.float64).reshape(-1), (batch,))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64).reshape(-1), (batch,))
    if np.any(s > t1) or np.any(t1 >= t2):
        raise ValueError("consistency_gap requiere s <= t1 < t2")
    x_t1 = solver_between(teacher, x_t2, t2, t1, n_steps=solver_steps)
    near = project(model, x_t1, t1[:, None], s[:, None], t_min)
    far = project(model, x_t2, t2[:, None], s[:, None], t_min)
    return float(np.mean(np.sum((near - far) ** 2, axis=1)))
