"""
Puntos de control JSON de maestros y estudiantes.

Los flotantes se escriben con su representación más corta que se relee exacta,
así un ciclo guardar/cargar conserva los pesos bit a bit.
"""
import json
from dataclasses import dataclass, field

from system.nets import ArchSpec, ParamSet

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Punto de control ausente, ilegible o de otra arquitectura."""


@dataclass
class Checkpoint:
    """
    Attributes:
        params (ParamSet): Pesos entrenados
        step (int): Pasos de entrenamiento aplicados
        config_hash (str): Hash de la configuración que lo produjo
        ema (ParamSet | None): Pesos de la EMA de evaluación, si se guardaron
        extra (dict): Metadatos libres (método, λ_con final, ...)
    """
    params: ParamSet
    step: int
    config_hash: str
    ema: ParamSet = None
    extra: dict = field(default_factory=dict)

    @property
    def arch(self):
        return self.params.arch

    def eval_params(self, use_ema=True):
        """Pesos con los que evaluar: la EMA si existe y se pide."""
        return self.ema if use_ema and self.ema is not None else self.params


def checkpoint_to_dict(checkpoint):
    data = {
        'format_version': CHECKPOINT_VERSION,
        'arch': checkpoint.arch.to_dict(),
        'seed': checkpoint.params.seed,
        'step': int(checkpoint.step),
        'config_hash': checkpoint.config_hash,
        'arrays': checkpoint.params.to_dict(),
        'extra': dict(checkpoint.extra),
    }
    if checkpoint.ema is not None:
        data['ema_arrays'] = checkpoint.ema.to_dict()
    return data


def save_checkpoint(checkpoint, path):
    """
    Escribe un punto de control.

    Args:
        checkpoint (Checkpoint): Contenido
        path (str): Fichero de salida

    Returns:
        str: Ruta escrita
    """
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(checkpoint_to_dict(checkpoint), f, separators=(',', ':'))
        f.write('\n')
    return path


def checkpoint_from_dict(data, expected_tag=None):
    missing = {'format_version', 'arch', 'seed', 'step', 'config_hash', 'arrays'} - set(data)
    if missing:
        raise CheckpointError(f"Faltan campos en el punto de control: {sorted(missing)}")
    if data['format_version'] != CHECKPOINT_VERSION:
        raise CheckpointError(f"Versión de punto de control no soportada: {data['format_version']}")
    try:
        arch = ArchSpec.from_dict(data['arch'])
        params = ParamSet(arch, data['arrays'], seed=data['seed'])
        ema = ParamSet(arch, data['ema_arrays'], seed=data['seed']) if 'ema_arrays' in data else None
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"Punto de control inválido: {exc}") from exc
    tags = (expected_tag,) if isinstance(expected_tag, str) else expected_tag
    if tags is not None and arch.tag not in tags:
        raise CheckpointError(f"Se esperaba una red '{'/'.join(tags)}' y el punto de control "
                              f"contiene una red '{arch.tag}'")
    return Checkpoint(params=params, step=data['step'], config_hash=data['config_hash'],
                      ema=ema, extra=data.get('extra', {}))


def load_checkpoint(path, expected_tag=None):
    """
    Lee un punto de control.

    Args:
        path (str): Fichero
        expected_tag (str | tuple, optional): Etiqueta(s) de arquitectura admitidas

    Returns:
        Checkpoint: Contenido

    Raises:
        CheckpointError: Fichero ausente, JSON inválido o arquitectura inesperada
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise CheckpointError(f"No se encontró el punto de control {path}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"El archivo {path} no es un JSON válido: {exc}") from exc
    return checkpoint_from_dict(data, expected_tag)
