"""
Distribuciones de juguete en 2D y ruido normal estándar con semillas reproducibles.

Todo el azar usa el generador contador Philox. En el ruido, la fila i sólo depende
de (semilla, i): pedir n filas devuelve el prefijo de pedir m > n filas.
"""
import csv
import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_moons, make_swiss_roll

DATASETS = ('ring8', 'two-moons', 'checkerboard', 'spiral')


@dataclass(frozen=True)
class DatasetSpec:
    """
    Attributes:
        name (str): 'ring8', 'two-moons', 'checkerboard' o 'spiral'
        scale (float): Escala espacial
        seed (int): Semilla de la distribución
    """
    name: str = 'ring8'
    scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ValueError(f"Conjunto de datos desconocido: {self.name}. Opciones: {DATASETS}")
        if self.scale <= 0:
            raise ValueError(f"La escala debe ser positiva, recibido: {self.scale}")


# ============================================
# SEMILLAS
# ============================================
def component_code(name):
    """Entero de 32 bits estable asociado al nombre de un componente."""
    return int(hashlib.sha256(name.encode('utf-8')).hexdigest()[:8], 16)


def derive_seed(root_seed, component, *indices):
    """Semilla entera derivada de (raíz, componente, índices)."""
    sequence = np.random.SeedSequence([int(root_seed), component_code(component), *map(int, indices)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def derive_rng(root_seed, component, *indices):
    """Generador Philox para el flujo (raíz, componente, índices)."""
    sequence = np.random.SeedSequence([int(root_seed), component_code(component), *map(int, indices)])
    return np.random.Generator(np.random.Philox(sequence))


def counter_rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


# ============================================
# RUIDO
# ============================================
def gaussian(rng, shape):
    """
    Normales estándar por Box–Muller a partir de uniformes del generador.

    Args:
        rng (np.random.Generator): Generador
        shape (tuple): (n, dim)

    Returns:
        np.ndarray: Arreglo de la forma pedida
    """
    n, dim = shape
    pairs = (dim + 1) // 2
    uniforms = rng.random((n, pairs, 2))
    u1 = 1.0 - uniforms[..., 0]
    u2 = uniforms[..., 1]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty((n, 2 * pairs))
    z[:, 0::2] = radius * np.cos(angle)
    z[:, 1::2] = radius * np.sin(angle)
    return z[:, :dim]


def sample_noise(n, dim, seed):
    """
    Ruido N(0, I) determinista.

    Args:
        n (int): Número de puntos (>= 1)
        dim (int): Dimensión
        seed (int): Semilla

    Returns:
        np.ndarray: (n, dim)
    """
    if n < 1:
        raise ValueError(f"n debe ser >= 1, recibido: {n}")
    return gaussian(counter_rng(seed), (n, dim))


# ============================================
# CONJUNTOS 2D
# ============================================
def _ring8(rng, n, scale):
    modes = rng.integers(0, 8, size=n)
    angles = 2.0 * np.pi * modes / 8.0
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return scale * (centers + 0.1 * gaussian(rng, (n, 2)))


def _checkerboard(rng, n, scale):
    # 8 casillas activas de un tablero 4x4 en [-2, 2]²
    x = rng.uniform(-2.0, 2.0, size=n)
    column = np.floor(x) + 2
    offset = rng.uniform(0.0, 1.0, size=n)
    row = 2.0 * rng.integers(0, 2, size=n) + (column % 2)
    y = row - 2.0 + offset
    return 0.5 * scale * np.stack([x, y], axis=1)


def sample_dataset(spec, n):
    """
    Extrae n puntos de la distribución de juguete.

    - ring8: 8 modos gaussianos (desviación 0.1·escala) sobre el círculo de radio escala
    - two-moons: ``make_moons`` con ruido 0.05
    - checkerboard: 8 casillas alternas de un tablero 4x4
    - spiral: proyección (x, z) de ``make_swiss_roll``

    Args:
        spec (DatasetSpec): Distribución y semilla
        n (int): Número de puntos (>= 1)

    Returns:
        np.ndarray: (n, 2)
    """
    if n < 1:
        raise ValueError(f"n debe ser >= 1, recibido: {n}")
    rng = counter_rng(spec.seed)
    if spec.name == 'ring8':
        points = _ring8(rng, n, spec.scale)
    elif spec.name == 'checkerboard':
        points = _checkerboard(rng, n, spec.scale)
    elif spec.name == 'two-moons':
        points, _ = make_moons(n_samples=n, noise=0.05, random_state=spec.seed % (2 ** 32))
        points = spec.scale * (points - np.array([0.5, 0.25]))
    else:
        roll, _ = make_swiss_roll(n_samples=n, noise=0.3, random_state=spec.seed % (2 ** 32))
        points = spec.scale * roll[:, [0, 2]] / 10.0
    return np.asarray(points, dtype=np.float64)


def dataset_to_csv(points, path):
    """Vuelca puntos 2D a CSV con cabecera ``x0,x1``."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['x0', 'x1'])
        for row in points:
            writer.writerow([repr(float(row[0])), repr(float(row[1]))])
    return path
