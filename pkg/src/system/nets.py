"""
Perceptrones multicapa condicionados en el tiempo para maestro y estudiante.
Incluye la incrustación de Fourier del tiempo, la inicialización de parámetros,
el optimizador Adam y las sombras EMA.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from system.tensor_ad import TensorNode, activation, affine, concat, cos, sin

logger = logging.getLogger(__name__)

TIME_SLACK = 1e-9
ARCH_TAGS = ('teacher', 'student', 'velocity')


@dataclass(frozen=True)
class TimeEmbeddingSpec:
    """
    Incrustación de Fourier del tiempo.

    Attributes:
        num_frequencies (int): K frecuencias f_k = base^(k-1)
        base (float): Base geométrica de las frecuencias
        embed_s (bool): Si la red recibe además el tiempo destino s
    """
    num_frequencies: int = 8
    base: float = 2.0
    embed_s: bool = False

    def __post_init__(self):
        if self.num_frequencies < 1:
            raise ValueError(f"num_frequencies debe ser >= 1, recibido: {self.num_frequencies}")

    @property
    def width(self):
        return 2 * self.num_frequencies


@dataclass(frozen=True)
class ArchSpec:
    """
    Arquitectura de un MLP condicionado en el tiempo.

    Attributes:
        tag (str): 'teacher' (v_θ(x, t)), 'student' (g_φ(x, t, s)) o 'velocity'
        data_dim (int): Dimensión de los puntos
        hidden (tuple): Anchuras de las capas ocultas
        activation (str): 'silu' o 'tanh'
        embedding (TimeEmbeddingSpec): Configuración de la incrustación temporal
    """
    tag: str = 'teacher'
    data_dim: int = 2
    hidden: tuple = (128, 128, 128)
    activation: str = 'silu'
    embedding: TimeEmbeddingSpec = field(default_factory=TimeEmbeddingSpec)

    def __post_init__(self):
        if self.tag not in ARCH_TAGS:
            raise ValueError(f"Etiqueta de arquitectura desconocida: {self.tag}")
        if self.data_dim < 1 or any(width < 1 for width in self.hidden):
            raise ValueError(f"Anchuras inválidas: data_dim={self.data_dim}, hidden={self.hidden}")
        object.__setattr__(self, 'hidden', tuple(int(width) for width in self.hidden))

    @property
    def input_dim(self):
        copies = 2 if self.embedding.embed_s else 1
        return self.data_dim + copies * self.embedding.width

    def layer_shapes(self):
        """Lista ordenada (nombre, forma) de todos los arreglos."""
        widths = [self.input_dim, *self.hidden, self.data_dim]
        shapes = []
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes.append((f'layer{index}.weight', (fan_in, fan_out)))
            shapes.append((f'layer{index}.bias', (fan_out,)))
        return shapes

    @property
    def num_layers(self):
        return len(self.hidden) + 1

    def to_dict(self):
        return {
            'tag': self.tag,
            'data_dim': self.data_dim,
            'hidden': list(self.hidden),
            'activation': self.activation,
            'embedding': {
                'num_frequencies': self.embedding.num_frequencies,
                'base': self.embedding.base,
                'embed_s': self.embedding.embed_s,
            },
        }

    @classmethod
    def from_dict(cls, data):
        return cls(tag=data['tag'], data_dim=data['data_dim'], hidden=tuple(data['hidden']),
                   activation=data['activation'],
                   embedding=TimeEmbeddingSpec(**data['embedding']))


class ParamSet:
    """
    Colección ordenada y con nombre de arreglos entrenables.

    El orden de iteración es el de ``ArchSpec.layer_shapes`` y es estable para la
    serialización. Las instancias no se modifican: las actualizaciones devuelven otra.
    """

    def __init__(self, arch, arrays, seed=None):
        self.arch = arch
        self.seed = seed
        self._arrays = {}
        for name, shape in arch.layer_shapes():
            if name not in arrays:
                raise ValueError(f"Falta el arreglo '{name}' para la arquitectura {arch.tag}")
            array = np.asarray(arrays[name], dtype=np.float64)
            if array.shape != shape:
                raise ValueError(f"'{name}' tiene forma {array.shape}, se esperaba {shape}")
            self._arrays[name] = array
        extra = set(arrays) - set(self._arrays)
        if extra:
            raise ValueError(f"Arreglos desconocidos para la arquitectura: {sorted(extra)}")

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def __getitem__(self, name):
        return self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def replace(self, arrays):
        """Nuevo ParamSet con la misma arquitectura y otros arreglos."""
        return ParamSet(self.arch, arrays, seed=self.seed)

    def copy(self):
        return self.replace({name: array.copy() for name, array in self.items()})

    @property
    def final_layer(self):
        """Nombres de los arreglos de la capa de salida."""
        last = self.arch.num_layers - 1
        return [f'layer{last}.weight', f'layer{last}.bias']

    def to_dict(self):
        return {name: array.tolist() for name, array in self.items()}


# ============================================
# INCRUSTACIÓN TEMPORAL
# ============================================
def time_column(t, tape, batch):
    """Convierte un tiempo (escalar, vector o nodo) en una columna (lote, 1) de la cinta."""
    if isinstance(t, TensorNode):
        if t.shape == (batch, 1):
            return t
        if t.values.size == 1:
            return t + tape.constant(np.zeros((batch, 1)))
        raise ValueError(f"Tiempo de forma {t.shape} incompatible con lote {batch}")
    values = np.asarray(t, dtype=np.float64)
    if values.size == 1:
        return tape.constant(np.full((batch, 1), float(values.reshape(-1)[0])))
    return tape.constant(values.reshape(batch, 1))


def time_embed(tau, spec):
    """
    Incrustación de Fourier de un tiempo en [0, 1].

    Args:
        tau (TensorNode): Columna (lote, 1) de tiempos
        spec (TimeEmbeddingSpec): Configuración

    Returns:
        TensorNode: (lote, 2K) = [sin(2π f_k τ) ..., cos(2π f_k τ) ...]

    Raises:
        ValueError: Si algún τ cae fuera de [0, 1]
    """
    values = tau.values
    if np.any(values < -TIME_SLACK) or np.any(values > 1.0 + TIME_SLACK):
        raise ValueError(f"Tiempo fuera de rango [0, 1]: min={values.min()}, max={values.max()}")
    freqs = spec.base ** np.arange(spec.num_frequencies, dtype=np.float64)
    phases = affine(tau, tau.tape.constant(2.0 * np.pi * freqs[None, :]))
    return concat([sin(phases), cos(phases)])


# ============================================
# RED
# ============================================
def mlp_forward(params, x, t, s=None):
    """
    Evalúa el MLP sobre concat(x, embed(t)[, embed(s)]).

    Args:
        params (ParamSet): Parámetros (observados o constantes según la cinta)
        x (TensorNode): Puntos (lote, dim)
        t: Tiempo actual (escalar, arreglo o nodo)
        s: Tiempo destino, sólo para arquitecturas con ``embed_s``

    Returns:
        TensorNode: Salida (lote, dim)

    Raises:
        ValueError: Si las formas no coinciden o s no corresponde a la arquitectura
    """
    arch = params.arch
    if x.values.ndim != 2 or x.shape[1] != arch.data_dim:
        raise ValueError(f"Entrada de forma {x.shape}, la red espera (lote, {arch.data_dim})")
    if s is not None and not arch.embedding.embed_s:
        raise ValueError(f"La red '{arch.tag}' sólo recibe t; se suministró s")
    if s is None and arch.embedding.embed_s:
        raise ValueError(f"La red '{arch.tag}' requiere el tiempo destino s")

    tape = x.tape
    batch = x.shape[0]
    features = [x, time_embed(time_column(t, tape, batch), arch.embedding)]
    if s is not None:
        features.append(time_embed(time_column(s, tape, batch), arch.embedding))
    h = concat(features)

    nodes = tape.bind(params)
    last = arch.num_layers - 1
    for index in range(arch.num_layers):
        h = affine(h, nodes[f'layer{index}.weight'], nodes[f'layer{index}.bias'])
        if index < last:
            h = activation(h, arch.activation)
    return h


def init_params(arch, seed, warm_start=None):
    """
    Inicialización determinista: uniforme He (|w| <= sqrt(6/fan_in)) en las capas
    ocultas, sesgos a cero y capa final a cero.

    Args:
        arch (ArchSpec): Arquitectura
        seed (int): Semilla
        warm_start (ParamSet, optional): Red (p. ej. el maestro) de la que copiar las
            capas ocultas; las filas de entrada sin equivalente quedan a cero

    Returns:
        ParamSet: Parámetros iniciales
    """
    rng = np.random.Generator(np.random.Philox(seed))
    shapes = arch.layer_shapes()
    last = arch.num_layers - 1
    arrays = {}
    for name, shape in shapes:
        if name.startswith(f'layer{last}.') or name.endswith('.bias'):
            arrays[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)

    if warm_start is not None:
        source = warm_start.arch
        if source.hidden != arch.hidden or source.data_dim != arch.data_dim:
            raise ValueError("El arranque en caliente requiere las mismas capas ocultas y dimensión")
        for name, shape in shapes:
            if name.startswith(f'layer{last}.'):
                continue
            donor = warm_start[name]
            if donor.shape == shape:
                arrays[name] = donor.copy()
            elif name == 'layer0.weight':
                # filas: x, embed(t) y, si existe, embed(s) (a cero)
                rows = min(donor.shape[0], shape[0])
                weight = np.zeros(shape)
                weight[:rows] = donor[:rows]
                arrays[name] = weight
            else:
                raise ValueError(f"Forma incompatible en '{name}': {donor.shape} vs {shape}")
    return ParamSet(arch, arrays, seed=seed)


# ============================================
# OPTIMIZADOR
# ============================================
@dataclass(frozen=True)
class AdamHyperParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamMoments:
    """Primer y segundo momento de Adam, por nombre de arreglo."""
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params):
        return cls(m={name: np.zeros_like(a) for name, a in params.items()},
                   v={name: np.zeros_like(a) for name, a in params.items()})


def all_finite(grads):
    return all(np.all(np.isfinite(g)) for g in grads.values())


def global_norm(grads, names=None):
    """Norma L2 conjunta de un diccionario de gradientes (opcionalmente un subconjunto)."""
    names = list(grads) if names is None else names
    return float(np.sqrt(sum(float(np.sum(grads[name] ** 2)) for name in names)))


def adam_step(params, grads, moments, hp, step):
    """
    Actualización de Adam con corrección de sesgo.

    Args:
        params (ParamSet): Parámetros actuales
        grads (dict): Gradientes por nombre
        moments (AdamMoments): Momentos actuales
        hp (AdamHyperParams): Hiperparámetros
        step (int): Número de paso (>= 1)

    Returns:
        tuple: (ParamSet, AdamMoments) actualizados; sin cambios si hay gradientes no finitos
    """
    if step < 1:
        raise ValueError(f"El paso de Adam debe ser >= 1, recibido: {step}")
    for name, array in params.items():
        if grads[name].shape != array.shape:
            raise ValueError(f"Gradiente de '{name}' con forma {grads[name].shape}, "
                             f"se esperaba {array.shape}")
    if not all_finite(grads):
        logger.warning("Gradiente no finito en el paso %d: actualización omitida", step)
        return params, moments

    correction1 = 1.0 - hp.beta1 ** step
    correction2 = 1.0 - hp.beta2 ** step
    new_arrays, new_m, new_v = {}, {}, {}
    for name, array in params.items():
        g = grads[name]
        m = hp.beta1 * moments.m[name] + (1.0 - hp.beta1) * g
        v = hp.beta2 * moments.v[name] + (1.0 - hp.beta2) * g * g
        update = hp.lr * (m / correction1) / (np.sqrt(v / correction2) + hp.eps)
        new_arrays[name] = array - update
        new_m[name] = m
        new_v[name] = v
    return params.replace(new_arrays), AdamMoments(m=new_m, v=new_v)


# ============================================
# SOMBRA EMA
# ============================================
class EmaShadow:
    """
    Media móvil exponencial de un ParamSet.

    Attributes:
        arch (ArchSpec): Arquitectura del ParamSet seguido
        arrays (dict): Arreglos promediados
        decay (float): μ en [0, 1]
    """

    def __init__(self, arch, arrays, decay):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"Decaimiento EMA fuera de [0, 1]: {decay}")
        self.arch = arch
        self.arrays = dict(arrays)
        self.decay = float(decay)
        self._params = None

    @classmethod
    def from_params(cls, params, decay):
        return cls(params.arch, {name: a.copy() for name, a in params.items()}, decay)

    def as_params(self):
        """Vista ParamSet (cacheada) de la sombra, utilizable en ``mlp_forward``."""
        if self._params is None:
            self._params = ParamSet(self.arch, self.arrays)
        return self._params


def ema_update(shadow, params):
    """
    Devuelve una nueva sombra con cada entrada = μ·sombra + (1 − μ)·actual.

    Args:
        shadow (EmaShadow): Sombra actual
        params (ParamSet): Parámetros seguidos

    Returns:
        EmaShadow: Sombra actualizada
    """
    mu = shadow.decay
    arrays = {}
    for name, current in params.items():
        old = shadow.arrays[name]
        if old.shape != current.shape:
            raise ValueError(f"Forma de '{name}' distinta entre sombra y parámetros")
        arrays[name] = mu * old + (1.0 - mu) * current
    return EmaShadow(shadow.arch, arrays, mu)
