import os
import sys

import numpy as np
import pytest

# Igual que main.py: los módulos viven en src/
ROOT = os.path.join(os.path.dirname(__file__), '..')
sys.path.insert(0, os.path.join(ROOT, 'src'))
sys.path.insert(0, ROOT)

from system.nets import ArchSpec, ParamSet, TimeEmbeddingSpec  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False,
                     help="Ejecutar también las ejecuciones completas de aceptación")


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: ejecución completa de entrenamiento (minutos)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip = pytest.mark.skip(reason="requiere --run-slow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_arch(tag, hidden=(16, 16), activation='silu', frequencies=4):
    return ArchSpec(tag=tag, data_dim=2, hidden=hidden, activation=activation,
                    embedding=TimeEmbeddingSpec(frequencies, 2.0, embed_s=(tag == 'student')))


def random_params(arch, rng, scale=0.5):
    """ParamSet con todos los arreglos aleatorios (incluida la capa final)."""
    return ParamSet(arch, {name: scale * rng.standard_normal(shape)
                           for name, shape in arch.layer_shapes()}, seed=0)


@pytest.fixture
def student_params(rng):
    return random_params(small_arch('student'), rng)


@pytest.fixture
def teacher_params(rng):
    return random_params(small_arch('teacher'), rng)


def param_fd_grad(value, params, h=1e-6):
    """Gradiente central de ``value(ParamSet) -> float`` respecto de cada arreglo de ``params``."""
    grads = {}
    for name, array in params.items():
        g = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            shifted = []
            for step in (h, -h):
                arrays = dict(params.items())
                arrays[name] = array.copy()
                arrays[name][index] += step
                shifted.append(value(params.replace(arrays)))
            g[index] = (shifted[0] - shifted[1]) / (2 * h)
        grads[name] = g
    return grads


def relative_error(analytic, numeric):
    """‖a − n‖ / ‖a‖ sobre todos los arreglos de un diccionario de gradientes."""
    diff = np.sqrt(sum(np.sum((analytic[k] - numeric[k]) ** 2) for k in analytic))
    return diff / np.sqrt(sum(np.sum(analytic[k] ** 2) for k in analytic))
