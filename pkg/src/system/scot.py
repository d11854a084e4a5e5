"""
Estudiante de trayectorias rectas y consistentes.

G_φ(x, t, s) = (s/t)·x + (1 − s/t)·g_φ(x, t, s) proyecta el estado x en el tiempo t
al tiempo s <= t. El estudiante se entrena con:
- pérdida de velocidad: ||∂G/∂s − (x1 − x̂0)||² (trayectoria recta),
- pérdida de consistencia suave contra una sombra EMA con stop-gradient,
- pérdida DSM auxiliar (regresión al punto limpio),
combinadas con pesos fijos, adaptativos o normalizados.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np

from system.nets import (AdamHyperParams, AdamMoments, EmaShadow, ParamSet, adam_step,
                         all_finite, ema_update, global_norm, mlp_forward, time_column)
from system.teacher import gen_pair, interpolate, solver_between
from system.tensor_ad import (Tape, TensorNode, add, fd_derivative, grad, lift_tangent,
                              scale, squared_error)
from utils.datasets import gaussian

logger = logging.getLogger(__name__)

T_MIN = 1e-3
TIME_SLACK = 1e-12
DERIVATIVE_MODES = ('exact', 'fd')
STRATEGIES = ('adaptive', 'fixed', 'normalized')
ANCHORS = ('interpolate', 'trajectory')


# ============================================
# CONFIGURACIÓN
# ============================================
@dataclass(frozen=True)
class ProjectionConfig:
    """
    Attributes:
        t_min (float): Tiempo de origen mínimo (protege la división s/t)
        derivative_mode (str): 'exact' (tangentes) o 'fd' (diferencias finitas)
        fd_step (float): Paso h del modo 'fd'
        velocity_target_sign (int): +1 → objetivo x1 − x̂0; −1 → x̂0 − x1
        distance_metric (str): Sólo 'squared_l2'
    """
    t_min: float = T_MIN
    derivative_mode: str = 'exact'
    fd_step: float = 1e-4
    velocity_target_sign: int = 1
    distance_metric: str = 'squared_l2'

    def __post_init__(self):
        if not 0.0 < self.t_min < 1.0:
            raise ValueError(f"t_min debe estar en (0, 1), recibido: {self.t_min}")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ValueError(f"Modo de derivada desconocido: {self.derivative_mode}")
        if self.velocity_target_sign not in (1, -1):
            raise ValueError("velocity_target_sign debe ser +1 o -1")
        if self.distance_metric != 'squared_l2':
            raise ValueError(f"Métrica de distancia no soportada: {self.distance_metric}")
        if self.fd_step <= 0:
            raise ValueError(f"fd_step debe ser positivo, recibido: {self.fd_step}")


@dataclass(frozen=True)
class LossWeights:
    """
    Pesos de la función objetivo combinada.

    Attributes:
        lambda_vel (float): Peso de la pérdida de velocidad (fijo)
        lambda_con (float): Peso inicial de la consistencia
        lambda_dsm (float): Peso de la pérdida DSM
        strategy (str): 'adaptive', 'fixed' o 'normalized'
        clip (tuple): Rango [lo, hi] de la estrategia normalizada
        refresh_every (int): Pasos entre recálculos del peso adaptativo
        eps (float): Estabilizador del cociente de normas
    """
    lambda_vel: float = 1.0
    lambda_con: float = 1.0
    lambda_dsm: float = 1.0
    strategy: str = 'normalized'
    clip: tuple = (0.01, 10.0)
    refresh_every: int = 25
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_vel, self.lambda_con, self.lambda_dsm) < 0:
            raise ValueError("Los pesos de las pérdidas deben ser >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"Estrategia de pesos desconocida: {self.strategy}")
        lo, hi = self.clip
        if not 0.0 <= lo < hi:
            raise ValueError(f"Rango de recorte inválido: [{lo}, {hi}]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every debe ser >= 1")

    @property
    def adapts(self):
        """λ_con se recalcula salvo con estrategia fija o si se configuró a 0 (ablación)."""
        return self.strategy != 'fixed' and self.lambda_con > 0


@dataclass(frozen=True)
class DistillSettings:
    """Todo lo que un paso de destilación necesita además del estado."""
    grid: tuple
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    adam: AdamHyperParams = field(default_factory=lambda: AdamHyperParams(lr=5e-4))
    pair_solver_steps: int = 50
    consistency_solver_steps: int = 1
    consistency_anchor: str = 'interpolate'
    clip_norm: float = 10.0

    def __post_init__(self):
        grid = tuple(float(t) for t in self.grid)
        if len(grid) < 3 or grid[0] != 0.0 or grid[-1] != 1.0 or any(
                b <= a for a, b in zip(grid[:-1], grid[1:])):
            raise ValueError("La malla de entrenamiento debe ser creciente de 0 a 1 con N >= 2")
        object.__setattr__(self, 'grid', grid)
        if self.consistency_anchor not in ANCHORS:
            raise ValueError(f"Anclaje de consistencia desconocido: {self.consistency_anchor}")


# ============================================
# PROYECCIÓN
# ============================================
class ProjectionMap(ABC):
    """Fuente de g(x, t, s) para G(x, t, s) = (s/t)·x + (1 − s/t)·g(x, t, s)."""

    @abstractmethod
    def g(self, x, t, s):
        """
        Args:
            x (TensorNode): Estados (lote, dim)
            t (TensorNode): Columna de tiempos de origen (constante)
            s (TensorNode): Columna de tiempos destino

        Returns:
            TensorNode: (lote, dim)
        """

    def detached(self):
        """Versión cuyos parámetros nunca reciben gradiente."""
        return self


class NeuralProjection(ProjectionMap):
    """g_φ(x, t, s) como MLP con incrustación de s."""

    def __init__(self, params):
        if not params.arch.embedding.embed_s:
            raise ValueError("El estudiante necesita una arquitectura con incrustación de s")
        self.params = params

    def g(self, x, t, s):
        return mlp_forward(self.params, x, t, s)

    def detached(self):
        # objeto distinto: la cinta lo liga como constantes aunque el original esté observado
        return NeuralProjection(self.params.replace(dict(self.params.items())))


class ConstantEndpoint(ProjectionMap):
    """g ≡ c."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def g(self, x, t, s):
        return x.tape.constant(np.broadcast_to(self.value, x.shape).copy())


class FixedEndpoint(ProjectionMap):
    """g fijado por fila a un punto final dado (interpolante exacto de la cuerda)."""

    def __init__(self, endpoints):
        self.endpoints = np.asarray(endpoints, dtype=np.float64)

    def g(self, x, t, s):
        if x.shape != self.endpoints.shape:
            raise ValueError(f"FixedEndpoint de forma {self.endpoints.shape}, recibido {x.shape}")
        return x.tape.constant(self.endpoints)


class StraightFlowMap(ProjectionMap):
    """
    Proyección exactamente consistente para el maestro de velocidad constante c:
    g(x, t, s) = x − t·c, de modo que G(x, t, s) = x − (t − s)·c.
    """

    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=np.float64)

    def g(self, x, t, s):
        return x - t * x.tape.constant(np.broadcast_to(self.velocity, x.shape).copy())


class VelocityInducedMap(ProjectionMap):
    """
    Proyección de un salto de Euler de un estudiante de velocidad v_φ(x, t):
    g(x, t, s) = x − t·v_φ(x, t), de modo que G(x, t, s) = x + (s − t)·v_φ(x, t).
    """

    def __init__(self, params):
        if params.arch.embedding.embed_s:
            raise ValueError("Un estudiante de velocidad no recibe el tiempo destino s")
        self.params = params

    def g(self, x, t, s):
        return x - t * mlp_forward(self.params, x, t)

    def detached(self):
        return VelocityInducedMap(self.params.replace(dict(self.params.items())))


def as_projection(model):
    """Acepta ProjectionMap, ParamSet (estudiante o velocidad) o EmaShadow."""
    if isinstance(model, ProjectionMap):
        return model
    if isinstance(model, EmaShadow):
        model = model.as_params()
    if isinstance(model, ParamSet):
        if model.arch.tag == 'velocity':
            return VelocityInducedMap(model)
        return NeuralProjection(model)
    raise TypeError(f"No se puede usar {type(model).__name__} como proyección")


def _column(values, batch):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 1:
        return np.full((batch, 1), float(values.reshape(-1)[0]))
    return values.reshape(batch, 1)


def project(model, x, t, s, t_min=T_MIN):
    """
    x̂_s = G(x, t, s) = (s/t)·x + (1 − s/t)·g(x, t, s).

    Las filas con s == t devuelven x exactamente (sin dividir). Si ``x`` es un
    TensorNode el resultado queda en su cinta (diferenciable respecto de φ, x y s);
    si es un arreglo se devuelve un arreglo.

    Args:
        model: ProjectionMap, ParamSet del estudiante o EmaShadow
        x (np.ndarray | TensorNode): Estados (lote, dim)
        t (float | np.ndarray): Tiempo(s) de origen
        s (float | np.ndarray | TensorNode): Tiempo(s) destino
        t_min (float): Tiempo de origen mínimo cuando s != t

    Raises:
        ValueError: Si s > t, algún tiempo está fuera de [0, 1] o t < t_min con s != t
    """
    as_array = not isinstance(x, TensorNode)
    if as_array:
        x = Tape(record=False).constant(x)
    tape = x.tape
    batch = x.shape[0]
    t_values = _column(t.values if isinstance(t, TensorNode) else t, batch)
    s_node = time_column(s, tape, batch)
    s_values = s_node.values

    if np.any(s_values < -TIME_SLACK) or np.any(t_values > 1.0 + TIME_SLACK):
        raise ValueError("Los tiempos de proyección deben estar en [0, 1]")
    if np.any(s_values > t_values + TIME_SLACK):
        raise ValueError("project requiere s <= t")
    guard = s_values == t_values
    if np.any((t_values < t_min) & ~guard):
        raise ValueError(f"Tiempo de origen por debajo de t_min={t_min} con s != t")

    if np.all(guard):
        return x.values if as_array else x

    safe_t = np.where(guard, 1.0, t_values)
    ratio = s_node * tape.constant(1.0 / safe_t)
    g = as_projection(model).g(x, tape.constant(t_values), s_node)
    out = ratio * x + (1.0 - ratio) * g
    if np.any(guard):
        mask = tape.constant(guard.astype(np.float64))
        out = mask * x + (1.0 - mask) * out
    return out.values if as_array else out


# ============================================
# PÉRDIDAS
# ============================================
def _new_tape(model, tape):
    if tape is not None:
        return tape
    tape = Tape()
    if isinstance(model, ParamSet):
        tape.watch(model)
    return tape


def velocity_loss(model, pair, t, s, config=ProjectionConfig(), tape=None):
    """
    Pérdida de velocidad: media de ||∂G(x_t, t, s)/∂s − objetivo||² con
    x_t = interpolate(x̂0, x1, t) y objetivo = signo·(x1 − x̂0).

    Args:
        model: Estudiante (ParamSet observado en ``tape`` para obtener gradientes)
        pair (TrajectoryPair): Pares del maestro
        t, s (float | np.ndarray): Tiempos con t_min <= s <= t <= 1
        config (ProjectionConfig): Modo de derivada, signo, t_min
        tape (Tape, optional): Cinta (se crea y observa ``model`` si falta)

    Returns:
        TensorNode: Pérdida escalar

    Raises:
        FloatingPointError: Si la derivada no es finita
    """
    tape = _new_tape(model, tape)
    batch = pair.x1.shape[0]
    t_col = _column(t, batch)
    s_col = _column(s, batch)
    if np.any(s_col < config.t_min) or np.any(s_col > t_col):
        raise ValueError("velocity_loss requiere t_min <= s <= t")
    x_node = tape.constant(interpolate(pair.x0_hat, pair.x1, t_col))
    target = config.velocity_target_sign * (pair.x1 - pair.x0_hat)

    if config.derivative_mode == 'exact':
        s_node = tape.constant(s_col, name='s')
        projected = project(model, x_node, t_col, s_node, config.t_min)
        lift_tangent(projected, s_node)
        derivative = projected.tangent
        if derivative is None:
            derivative = tape.constant(np.zeros(x_node.shape))
    else:
        derivative = fd_derivative(
            lambda s_value: project(model, x_node, t_col, s_value, config.t_min),
            s_col, h=config.fd_step, bounds=(0.0, t_col))

    if not np.all(np.isfinite(derivative.values)):
        raise FloatingPointError("∂G/∂s no finita en la pérdida de velocidad")
    return squared_error(derivative, tape.constant(target))


def consistency_loss(model, shadow, teacher, x_t2, t2, t1, s, solver_steps=1,
                     t_min=T_MIN, tape=None):
    """
    Pérdida de consistencia suave D(x_target, x_est) con D = L2 al cuadrado:

        x_est    = G_sg(G_φ(x_t2, t2, s), s, 0)
        x_target = G_sg(G_sg(Solver(x_t2, t2, t1; θ), t1, s), s, 0)

    El gradiente sólo fluye a través de la aplicación de G_φ.

    Args:
        model: Estudiante φ
        shadow: Sombra stop-gradient φ⁻ (EmaShadow, ParamSet o ProjectionMap)
        teacher (ParamSet | VelocityField): Maestro θ
        x_t2 (np.ndarray): Estados en t2
        t2, t1, s: Tiempos con 0 <= s <= t1 <= t2 <= 1
        solver_steps (int): Subpasos de Heun entre t2 y t1

    Raises:
        ValueError: Si se viola el orden temporal o 0 < s < t_min
    """
    tape = _new_tape(model, tape)
    batch = x_t2.shape[0]
    t2 = _column(t2, batch)
    t1 = _column(t1, batch)
    s = _column(s, batch)
    if np.any(s < 0) or np.any(s > t1) or np.any(t1 > t2) or np.any(t2 > 1.0):
        raise ValueError("consistency_loss requiere 0 <= s <= t1 <= t2 <= 1")
    if np.any((s > 0) & (s < t_min)):
        raise ValueError(f"s por debajo de la malla (0 < s < t_min={t_min})")

    frozen = as_projection(shadow).detached()
    x_t1 = solver_between(teacher, x_t2, t2.ravel(), t1.ravel(), n_steps=solver_steps)
    target = project(frozen, project(frozen, x_t1, t1, s, t_min), s, 0.0, t_min)

    inner = project(model, tape.constant(x_t2), t2, s, t_min)
    estimate = project(frozen, inner, s, 0.0, t_min)
    return squared_error(estimate, tape.constant(target))


def dsm_loss(model, pair, tau, fresh_noise, t_min=T_MIN, tape=None):
    """
    Pérdida DSM auxiliar: ||G(x_τ, τ, 0) − x̂0||² con x_τ = interpolate(x̂0, ruido, τ).
    """
    tape = _new_tape(model, tape)
    batch = pair.x1.shape[0]
    tau = _column(tau, batch)
    if np.any(tau < t_min) or np.any(tau > 1.0):
        raise ValueError(f"τ debe estar en [t_min, 1], recibido {tau.min()}..{tau.max()}")
    x_tau = tape.constant(interpolate(pair.x0_hat, fresh_noise, tau))
    return squared_error(project(model, x_tau, tau, 0.0, t_min), tape.constant(pair.x0_hat))


def weighted_total(terms):
    """Suma Σ λ_i·L_i de pares (peso, nodo escalar) de una misma cinta."""
    total = None
    for weight, node in terms:
        term = scale(node, weight)
        total = term if total is None else add(total, term)
    return total


def lambda_update(strategy, grad_norm_vel, grad_norm_con, current, clip=(0.01, 10.0), eps=1e-8):
    """
    Nuevo λ_con según la estrategia.

    - adaptive: ||∇L_vel|| / (||∇L_con|| + ε)
    - fixed: sin cambios
    - normalized: el valor adaptativo recortado a ``clip``
    """
    if grad_norm_vel < 0 or grad_norm_con < 0:
        raise ValueError("Las normas de gradiente deben ser >= 0")
    if strategy == 'fixed':
        return float(current)
    ratio = grad_norm_vel / (grad_norm_con + eps)
    if strategy == 'adaptive':
        return float(ratio)
    if strategy == 'normalized':
        return float(np.clip(ratio, clip[0], clip[1]))
    raise ValueError(f"Estrategia de pesos desconocida: {strategy}")


# ============================================
# MUESTREO DE TIEMPOS
# ============================================
def sample_loss_times(rng, grid, batch, t_min=T_MIN):
    """
    Tiempos por fila sobre la malla creciente ``grid`` (0 = grid[0] < ... < grid[N] = 1).

    - velocidad: t = grid[i], i en [2, N]; s = grid[j], j en [1, i − 1]
    - consistencia: t2 = grid[i], i en [2, N]; t1 = grid[i − 1]; s = grid[j], j en [1, i − 1]
    - DSM: τ uniforme en [t_min, 1]
    """
    grid = np.asarray(grid, dtype=np.float64)
    n = len(grid) - 1
    i_vel = rng.integers(2, n + 1, size=batch)
    j_vel = (rng.random(batch) * (i_vel - 1)).astype(np.int64) + 1
    i_con = rng.integers(2, n + 1, size=batch)
    j_con = (rng.random(batch) * (i_con - 1)).astype(np.int64) + 1
    tau = t_min + (1.0 - t_min) * rng.random(batch)
    return {
        't_vel': grid[i_vel], 's_vel': grid[j_vel],
        't2': grid[i_con], 't1': grid[i_con - 1], 's_con': grid[j_con],
        'tau': tau,
    }


# ============================================
# ESTADO Y PASO DE DESTILACIÓN
# ============================================
@dataclass
class DistillState:
    """
    Attributes:
        params (ParamSet): φ
        shadow (EmaShadow): φ⁻ (stop-gradient, decaimiento μ)
        moments (AdamMoments): Momentos del optimizador
        step (int): Pasos aplicados
        lambda_con (float): Peso efectivo actual de la consistencia
        eval_ema (EmaShadow | None): EMA de evaluación del estudiante
        skipped (int): Pasos omitidos por valores no finitos
        records (list): Un diccionario de métricas por paso
    """
    params: ParamSet
    shadow: EmaShadow
    moments: AdamMoments
    step: int = 0
    lambda_con: float = 1.0
    eval_ema: EmaShadow = None
    skipped: int = 0
    records: list = field(default_factory=list)

    @classmethod
    def create(cls, params, mu, lambda_con, eval_decay=None):
        return cls(params=params, shadow=EmaShadow.from_params(params, mu),
                   moments=AdamMoments.zeros_like(params), lambda_con=float(lambda_con),
                   eval_ema=EmaShadow.from_params(params, eval_decay) if eval_decay else None)


@dataclass
class LossBreakdown:
    """Nodos de cada componente y la suma ponderada, sobre una misma cinta."""
    tape: Tape
    velocity: TensorNode
    consistency: TensorNode
    dsm: TensorNode
    total: TensorNode
    lambdas: dict

    def components(self):
        return {
            'loss_vel': float(self.velocity.values),
            'loss_con': float(self.consistency.values),
            'loss_dsm': float(self.dsm.values),
            **self.lambdas,
        }


def combined_loss(state, teacher, noise, settings, rng, lambda_con=None):
    """
    λ_vel·L_velocity + λ_con·L_consistency + λ_dsm·L_dsm con pares generados en el acto.

    Args:
        state (DistillState): Estado actual
        teacher (ParamSet | VelocityField): Maestro
        noise (np.ndarray): Lote de ruido x1
        settings (DistillSettings): Configuración
        rng (np.random.Generator): Flujo aleatorio del paso
        lambda_con (float, optional): Sustituye al λ_con del estado

    Returns:
        LossBreakdown: Componentes y total
    """
    projection = settings.projection
    weights = settings.weights
    batch = noise.shape[0]
    pair = gen_pair(teacher, noise, n_steps=settings.pair_solver_steps)
    times = sample_loss_times(rng, settings.grid, batch, projection.t_min)
    fresh = gaussian(rng, noise.shape)

    tape = Tape()
    tape.watch(state.params)
    l_vel = velocity_loss(state.params, pair, times['t_vel'], times['s_vel'], projection, tape)

    if settings.consistency_anchor == 'trajectory':
        x_t2 = solver_between(teacher, pair.x1, 1.0, times['t2'],
                              n_steps=settings.pair_solver_steps)
    else:
        x_t2 = interpolate(pair.x0_hat, pair.x1, times['t2'][:, None])
    l_con = consistency_loss(state.params, state.shadow, teacher, x_t2, times['t2'],
                             times['t1'], times['s_con'], settings.consistency_solver_steps,
                             projection.t_min, tape)
    l_dsm = dsm_loss(state.params, pair, times['tau'], fresh, projection.t_min, tape)

    lam_con = state.lambda_con if lambda_con is None else lambda_con
    lambdas = {'lambda_vel': weights.lambda_vel, 'lambda_con': lam_con,
               'lambda_dsm': weights.lambda_dsm}
    total = weighted_total([(weights.lambda_vel, l_vel), (lam_con, l_con),
                            (weights.lambda_dsm, l_dsm)])
    return LossBreakdown(tape, l_vel, l_con, l_dsm, total, lambdas)


def clip_by_global_norm(grads, max_norm):
    """Reescala los gradientes si su norma conjunta supera ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def apply_gradients(state, grads, settings, record):
    """Recorte, Adam, EMA de la sombra y de evaluación; devuelve el nuevo estado."""
    grads, norm = clip_by_global_norm(grads, settings.clip_norm)
    step = state.step + 1
    params, moments = adam_step(state.params, grads, state.moments, settings.adam, step)
    record = {**record, 'step': step, 'grad_norm': norm, 'skipped': 0}
    return replace(
        state, params=params, moments=moments, step=step,
        shadow=ema_update(state.shadow, params),
        eval_ema=ema_update(state.eval_ema, params) if state.eval_ema is not None else None,
        records=state.records + [record])


def skip_step(state, record, reason):
    logger.warning("Paso %d omitido: %s", state.step + 1, reason)
    record = {**record, 'step': state.step + 1, 'grad_norm': float('nan'), 'skipped': 1}
    return replace(state, skipped=state.skipped + 1, records=state.records + [record])


def distill_step(state, teacher, noise, settings, rng):
    """
    Un paso: pérdida combinada, gradiente, recorte de norma global, Adam, EMA de φ⁻.

    Con estrategia adaptativa o normalizada, λ_con se recalcula cada
    ``refresh_every`` pasos comparando las normas de los gradientes de la capa final.
    Un λ_con inicial de 0 queda en 0 con cualquier estrategia.

    Returns:
        DistillState: Nuevo estado (el anterior no se modifica)
    """
    weights = settings.weights
    breakdown = combined_loss(state, teacher, noise, settings, rng)
    lambda_con = state.lambda_con
    if weights.adapts and state.step % weights.refresh_every == 0:
        final = state.params.final_layer
        norm_vel = global_norm(grad(breakdown.velocity, state.params), final)
        norm_con = global_norm(grad(breakdown.consistency, state.params), final)
        lambda_con = lambda_update(weights.strategy, norm_vel, norm_con, lambda_con,
                                   weights.clip, weights.eps)
        breakdown.lambdas['lambda_con'] = lambda_con
        breakdown.total = weighted_total([(weights.lambda_vel, breakdown.velocity),
                                          (lambda_con, breakdown.consistency),
                                          (weights.lambda_dsm, breakdown.dsm)])
    state = replace(state, lambda_con=lambda_con)
    record = {**breakdown.components(), 'total': float(breakdown.total.values)}

    if not np.isfinite(record['total']):
        return skip_step(state, record, "pérdida no finita")
    grads = grad(breakdown.total, state.params)
    if not all_finite(grads):
        return skip_step(state, record, "gradiente no finito")
    return apply_gradients(state, grads, settings, record)
