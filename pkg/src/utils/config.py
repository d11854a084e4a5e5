"""
Configuración de las ejecuciones: esquema JSON con versión, valores por defecto de
escritorio, validación y hash canónico.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from system.baselines import BASELINE_METHODS
from system.nets import ArchSpec, TimeEmbeddingSpec
from system.sampler import validate_times
from system.scot import ANCHORS, DERIVATIVE_MODES, STRATEGIES
from utils.datasets import DATASETS, DatasetSpec

FORMAT_VERSION = 1
METHODS = ('scot',) + BASELINE_METHODS
METRICS = ('sw2', 'gfd', 'straightness', 'consistency_gap')
# claves que no forman parte de la identidad de una ejecución
UNHASHED_KEYS = ('output_dir', 'notes')


class ConfigError(ValueError):
    """Configuración ilegible o fuera de rango."""


# ============================================
# ESQUEMA
# ============================================
@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple = (128, 128, 128)
    activation: str = 'silu'
    num_frequencies: int = 8
    base: float = 2.0

    def to_spec(self, tag, data_dim=2):
        """ArchSpec para 'teacher', 'student' o 'velocity'."""
        embedding = TimeEmbeddingSpec(self.num_frequencies, self.base, embed_s=(tag == 'student'))
        return ArchSpec(tag=tag, data_dim=data_dim, hidden=self.hidden,
                        activation=self.activation, embedding=embedding)


@dataclass(frozen=True)
class TeacherTrainConfig:
    lr: float = 1e-3
    batch: int = 256
    iters: int = 5000
    log_every: int = 50


@dataclass(frozen=True)
class DistillConfig:
    """
    Sección ``distill``.

    ``mu`` es la tasa de la sombra stop-gradient φ⁻. Su valor por defecto (0.999) queda por
    debajo del 0.9999 de las ejecuciones de 130k pasos: el horizonte de la media,
    1/(1 − μ), debe caber en el presupuesto de 4k pasos. Con 0.9999 (10k pasos) φ⁻
    seguiría casi en la inicialización al terminar la destilación.
    """
    method: str = 'scot'
    lr: float = 5e-4
    batch: int = 256
    iters: int = 4000
    grid_steps: int = 18
    lambda_vel: float = 1.0
    lambda_con: float = 1.0
    lambda_dsm: float = 1.0
    strategy: str = 'normalized'
    clip: tuple = (0.01, 10.0)
    refresh_every: int = 25
    derivative_mode: str = 'exact'
    fd_step: float = 1e-4
    velocity_target_sign: int = 1
    pair_solver_steps: int = 50
    consistency_solver_steps: int = 1
    consistency_anchor: str = 'interpolate'
    mu: float = 0.999
    eval_ema: float = 0.999
    t_min: float = 1e-3
    clip_norm: float = 10.0
    student_init: str = 'teacher'
    eval_every: int = 500
    log_every: int = 25


@dataclass(frozen=True)
class EvalConfig:
    nfe: tuple = (1, 2)
    n_samples: int = 4096
    n_proj: int = 128
    schedule: str = 'uniform'
    custom_times: tuple = ()
    teacher_steps: int = 50
    trace_steps: int = 18
    n_trace: int = 64
    gap_samples: int = 1024
    use_ema_weights: bool = True
    plot: bool = False


@dataclass(frozen=True)
class CompareConfig:
    strategies: tuple = ('adaptive', 'fixed', 'normalized')
    checkpoints: tuple = (1000, 2000, 3000, 4000)
    metric: str = 'sw2'
    nfe: int = 1


@dataclass(frozen=True)
class RunConfig:
    """
    Configuración completa de una ejecución.

    Attributes:
        format_version (int): Versión del esquema (obligatoria en el JSON)
        seed (int): Semilla raíz de la que derivan todos los flujos aleatorios
        dataset (DatasetSpec): Distribución de datos
        teacher_arch, student_arch (ArchConfig): Arquitecturas
        teacher (TeacherTrainConfig): Entrenamiento del maestro
        distill (DistillConfig): Destilación
        eval (EvalConfig): Evaluación
        compare (CompareConfig): Matriz de estrategias
        output_dir (str): Directorio de salida por defecto (``--out`` lo sustituye)
        notes (str): Texto libre, ignorado
    """
    format_version: int = FORMAT_VERSION
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    teacher_arch: ArchConfig = field(default_factory=ArchConfig)
    student_arch: ArchConfig = field(default_factory=ArchConfig)
    teacher: TeacherTrainConfig = field(default_factory=TeacherTrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    output_dir: str = 'runs'
    notes: str = ''


SECTIONS = {
    'dataset': DatasetSpec,
    'teacher_arch': ArchConfig,
    'student_arch': ArchConfig,
    'teacher': TeacherTrainConfig,
    'distill': DistillConfig,
    'eval': EvalConfig,
    'compare': CompareConfig,
}


# ============================================
# SERIALIZACIÓN
# ============================================
def _to_tuple(value):
    if isinstance(value, list):
        return tuple(_to_tuple(item) for item in value)
    return value


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"La sección '{section}' debe ser un objeto JSON")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"Claves desconocidas en '{section}': {sorted(unknown)}")
    values = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        values[name] = _to_tuple(value) if isinstance(default, tuple) else value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Sección '{section}' inválida: {exc}") from exc


def config_from_dict(data):
    """
    Construye un RunConfig a partir de un diccionario JSON.

    Raises:
        ConfigError: Versión ausente o distinta, claves desconocidas o valores inválidos
    """
    if not isinstance(data, dict):
        raise ConfigError("La configuración debe ser un objeto JSON")
    if 'format_version' not in data:
        raise ConfigError("Falta 'format_version' en la configuración")
    if data['format_version'] != FORMAT_VERSION:
        raise ConfigError(f"format_version {data['format_version']} no soportada "
                          f"(se esperaba {FORMAT_VERSION})")
    unknown = set(data) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"Claves desconocidas en la configuración: {sorted(unknown)}")
    values = {}
    for name, value in data.items():
        if name in SECTIONS:
            values[name] = _build(SECTIONS[name], value, name)
        else:
            values[name] = value
    return RunConfig(**values)


def _to_lists(value):
    if isinstance(value, (tuple, list)):
        return [_to_lists(item) for item in value]
    if isinstance(value, dict):
        return {key: _to_lists(item) for key, item in value.items()}
    return value


def config_to_dict(config):
    return _to_lists(asdict(config))


def config_hash(config):
    """SHA-256 del JSON canónico de la configuración, sin las claves no identitarias."""
    data = {k: v for k, v in config_to_dict(config).items() if k not in UNHASHED_KEYS}
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def load_config(path):
    """
    Lee y valida una configuración JSON.

    Args:
        path (str): Ruta del fichero

    Returns:
        RunConfig: Configuración validada

    Raises:
        ConfigError: Fichero ausente, JSON inválido o validación fallida
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"No se encontró el archivo de configuración {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"El archivo {path} no es un JSON válido: {exc}") from exc
    config = config_from_dict(data)
    valid, message = validate_config(config)
    if not valid:
        raise ConfigError(message)
    return config


def save_config(config, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config_to_dict(config), f, indent=2, ensure_ascii=False)
        f.write('\n')
    return path


# ============================================
# VALIDACIÓN
# ============================================
def _check_positive(section, obj, names):
    for name in names:
        value = getattr(obj, name)
        if not value > 0:
            return False, f"{section}.{name} debe ser positivo, recibido: {value}"
    return True, ""


def validate_config(config):
    """
    Valida que todos los valores estén en sus rangos documentados.

    Returns:
        tuple: (es_valido, mensaje)
    """
    if config.dataset.name not in DATASETS:
        return False, f"Conjunto de datos desconocido: {config.dataset.name}"

    teacher, distill, ev, cmp = config.teacher, config.distill, config.eval, config.compare
    checks = [
        ('teacher', teacher, ('lr', 'batch', 'iters', 'log_every')),
        ('distill', distill, ('lr', 'batch', 'iters', 'fd_step', 'pair_solver_steps',
                              'consistency_solver_steps', 'clip_norm', 'refresh_every',
                              'eval_every', 'log_every')),
        ('eval', ev, ('n_samples', 'n_proj', 'teacher_steps', 'trace_steps', 'n_trace',
                      'gap_samples')),
    ]
    for section, obj, names in checks:
        valid, message = _check_positive(section, obj, names)
        if not valid:
            return valid, message

    for section, arch in (('teacher_arch', config.teacher_arch),
                          ('student_arch', config.student_arch)):
        if not arch.hidden or any(width < 1 for width in arch.hidden):
            return False, f"{section}.hidden inválido: {arch.hidden}"
        if arch.activation not in ('silu', 'tanh'):
            return False, f"{section}.activation desconocida: {arch.activation}"
        if arch.num_frequencies < 1:
            return False, f"{section}.num_frequencies debe ser >= 1"

    if distill.method not in METHODS:
        return False, f"Método de destilación desconocido: {distill.method}. Opciones: {METHODS}"
    if not 0.0 < distill.t_min < 1.0:
        return False, f"t_min debe estar en (0, 1), recibido: {distill.t_min}"
    if distill.grid_steps < 1:
        return False, f"N debe ser >= 1, recibido: {distill.grid_steps}"
    if distill.grid_steps < 2:
        return False, "La malla de entrenamiento necesita N >= 2"
    if distill.strategy not in STRATEGIES:
        return False, f"Estrategia de pesos desconocida: {distill.strategy}"
    lo, hi = distill.clip
    if not 0.0 <= lo < hi:
        return False, f"Rango de recorte inválido: [{lo}, {hi}]"
    if min(distill.lambda_vel, distill.lambda_con, distill.lambda_dsm) < 0:
        return False, "Los pesos de las pérdidas deben ser >= 0"
    if distill.derivative_mode not in DERIVATIVE_MODES:
        return False, f"Modo de derivada desconocido: {distill.derivative_mode}"
    if distill.velocity_target_sign not in (1, -1):
        return False, "velocity_target_sign debe ser +1 o -1"
    if distill.consistency_anchor not in ANCHORS:
        return False, f"Anclaje de consistencia desconocido: {distill.consistency_anchor}"
    for name in ('mu', 'eval_ema'):
        value = getattr(distill, name)
        if not 0.0 <= value <= 1.0:
            return False, f"distill.{name} debe estar en [0, 1], recibido: {value}"
    if distill.student_init not in ('teacher', 'random'):
        return False, f"Inicialización del estudiante desconocida: {distill.student_init}"
    if distill.student_init == 'teacher' and config.student_arch.hidden != config.teacher_arch.hidden:
        return False, "student_init='teacher' requiere las mismas capas ocultas que el maestro"

    if not ev.nfe or any(n < 1 for n in ev.nfe):
        return False, f"Cada NFE debe ser >= 1, recibido: {ev.nfe}"
    if ev.schedule not in ('uniform', 'custom'):
        return False, f"Tipo de malla desconocido: {ev.schedule}"
    if ev.schedule == 'custom':
        if len(ev.custom_times) != len(ev.nfe):
            return False, "eval.custom_times necesita una malla por cada NFE"
        for n, times in zip(ev.nfe, ev.custom_times):
            if len(times) != n + 1:
                return False, f"La malla de NFE={n} necesita {n + 1} tiempos"
            valid, message = validate_times(tuple(float(t) for t in times))
            if not valid:
                return False, message

    if not cmp.strategies or any(s not in STRATEGIES for s in cmp.strategies):
        return False, f"Estrategias de comparación inválidas: {cmp.strategies}"
    if not cmp.checkpoints or any(c < 1 for c in cmp.checkpoints) or list(cmp.checkpoints) != sorted(set(cmp.checkpoints)):
        return False, f"Los puntos de control deben ser crecientes y positivos: {cmp.checkpoints}"
    if cmp.metric not in METRICS:
        return False, f"Métrica de comparación desconocida: {cmp.metric}"
    if cmp.nfe < 1:
        return False, f"compare.nfe debe ser >= 1, recibido: {cmp.nfe}"
    return True, "Configuración válida"
