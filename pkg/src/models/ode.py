"""
Continuous latent dynamics and the ODE solver family.

States may be plain ndarrays (test problems, benchmarks) or autodiff Nodes
(the decoder): every solver only adds and scales states, so gradients flow
through the solver steps unchanged. Step-size control and error norms always
work on the numeric values.

Methods:
    euler, rk4                 fixed step
    adams_explicit             Adams-Bashforth 4
    adams_implicit             Adams-Bashforth 4 predictor, Adams-Moulton 3 corrector (PECE, 2 iterations)
    fehlberg2, bosh3, dopri5   embedded Runge-Kutta, adaptive by default
    discrete                   one residual update per requested time (no continuous-time scaling)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.autodiff import tensor as T
from src.autodiff.tensor import Node, value_of
from src.errors import NonFiniteError, StepBudgetError
from src.models.layers import Linear

logger = logging.getLogger(__name__)

State = Union[np.ndarray, Node]
Dynamics = Callable[[float, State], State]

FIXED_METHODS = ("euler", "rk4", "adams_explicit", "adams_implicit", "discrete")
EMBEDDED_METHODS = ("fehlberg2", "bosh3", "dopri5")
METHODS = ("euler", "rk4", "adams_explicit", "adams_implicit", "fehlberg2", "bosh3", "dopri5", "discrete")
ORDERS = {
    "euler": 1,
    "rk4": 4,
    "adams_explicit": 4,
    "adams_implicit": 4,
    "fehlberg2": 2,
    "bosh3": 3,
    "dopri5": 5,  # order of the propagated solution; the embedded error estimate is order 4
    "discrete": 0,
}
CONVERGENCE_STEPS = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class Tableau:
    """Embedded Runge-Kutta coefficients; ``c_err`` is high minus low order weights."""

    alpha: Tuple[float, ...]
    beta: Tuple[Tuple[float, ...], ...]
    c_sol: Tuple[float, ...]
    c_err: Tuple[float, ...]
    order: int
    c_mid: Optional[Tuple[float, ...]] = None


FEHLBERG2 = Tableau(
    alpha=(1 / 2, 1.0),
    beta=((1 / 2,), (1 / 256, 255 / 256)),
    c_sol=(1 / 512, 255 / 256, 1 / 512),
    c_err=(-1 / 512, 0.0, 1 / 512),
    order=2,
)

BOSH3 = Tableau(
    alpha=(1 / 2, 3 / 4, 1.0),
    beta=((1 / 2,), (0.0, 3 / 4), (2 / 9, 1 / 3, 4 / 9)),
    c_sol=(2 / 9, 1 / 3, 4 / 9, 0.0),
    c_err=(2 / 9 - 7 / 24, 1 / 3 - 1 / 4, 4 / 9 - 1 / 3, -1 / 8),
    order=3,
)

DOPRI5 = Tableau(
    alpha=(1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
    beta=(
        (1 / 5,),
        (3 / 40, 9 / 40),
        (44 / 45, -56 / 15, 32 / 9),
        (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
        (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
    ),
    c_sol=(35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
    c_err=(
        35 / 384 - 1951 / 21600,
        0.0,
        500 / 1113 - 22642 / 50085,
        125 / 192 - 451 / 720,
        -2187 / 6784 + 12231 / 42400,
        11 / 84 - 649 / 6300,
        -1 / 60,
    ),
    order=5,
    # midpoint weights of the quartic dense output
    c_mid=(
        6025192743 / 30085553152 / 2,
        0.0,
        51252292925 / 65400821598 / 2,
        -2691868925 / 45128329728 / 2,
        187940372067 / 1594534317056 / 2,
        -1776094331 / 19743644256 / 2,
        11237099 / 235043384 / 2,
    ),
)

TABLEAUS = {"fehlberg2": FEHLBERG2, "bosh3": BOSH3, "dopri5": DOPRI5}


@dataclass
class SolverConfig:
    """
    Solver selection.

    ``step_size`` drives the fixed-step methods (and the embedded methods when
    ``adaptive`` is False); ``rtol``/``atol``/``max_steps`` drive adaptive stepping.
    """

    method: str = "dopri5"
    step_size: float = 0.02
    rtol: float = 1e-3
    atol: float = 1e-4
    max_steps: int = 10000
    adaptive: bool = True

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown ODE method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError(f"rtol and atol must be > 0, got {self.rtol}, {self.atol}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    @property
    def is_adaptive(self) -> bool:
        return self.adaptive and self.method in EMBEDDED_METHODS

    @property
    def order(self) -> int:
        return ORDERS[self.method]


@dataclass
class ODESolution:
    """States at the requested times plus solver statistics."""

    times: np.ndarray
    states: List[State]
    n_steps: int = 0
    n_rejected: int = 0
    n_fevals: int = 0
    max_derivative_norm: float = 0.0

    def stacked(self) -> State:
        """States stacked on a new time axis just before the feature axis."""
        axis = max(np.ndim(value_of(self.states[0])) - 1, 0)
        if isinstance(self.states[0], Node) or any(isinstance(s, Node) for s in self.states):
            return T.stack(self.states, axis=axis)
        return np.stack(self.states, axis=axis)

    def values(self) -> np.ndarray:
        return np.stack([value_of(s) for s in self.states])


class _Counted:
    """Wraps a dynamics function, counting evaluations and tracking sup ||f||."""

    def __init__(self, f: Dynamics):
        self.f = f
        self.n_fevals = 0
        self.max_norm = 0.0

    def __call__(self, t: float, y: State) -> State:
        out = self.f(t, y)
        self.n_fevals += 1
        val = value_of(out)
        if not np.all(np.isfinite(val)):
            raise NonFiniteError(f"dynamics returned a non-finite derivative at t={t:.6g}")
        norm = float(np.max(np.linalg.norm(np.atleast_1d(val), axis=-1)))
        self.max_norm = max(self.max_norm, norm)
        return out


def _combine(y: State, dt: float, coeffs: Sequence[float], ks: Sequence[State]) -> State:
    acc = y
    for c, k in zip(coeffs, ks):
        if c != 0.0:
            acc = acc + (dt * c) * k
    return acc


def _check_state(y: State, t: float) -> None:
    if not isinstance(y, Node) and not np.all(np.isfinite(y)):
        raise NonFiniteError(f"ODE state became non-finite at t={t:.6g}")


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def euler_step(f: Dynamics, t: float, y: State, dt: float, f0: Optional[State] = None) -> State:
    k1 = f(t, y) if f0 is None else f0
    return y + dt * k1


def rk4_step(f: Dynamics, t: float, y: State, dt: float, f0: Optional[State] = None) -> State:
    """Classical Runge-Kutta 4; ``dt`` may be negative."""
    k1 = f(t, y) if f0 is None else f0
    k2 = f(t + dt / 2, y + (dt / 2) * k1)
    k3 = f(t + dt / 2, y + (dt / 2) * k2)
    k4 = f(t + dt, y + dt * k3)
    return _combine(y, dt, (1 / 6, 1 / 3, 1 / 3, 1 / 6), (k1, k2, k3, k4))


def embedded_step(f: Dynamics, t: float, y: State, dt: float, tableau: Tableau,
                  f0: Optional[State] = None) -> Tuple[State, State, List[State]]:
    """
    One embedded Runge-Kutta step.

    Returns:
        Tuple of (new state, error estimate, stage derivatives)
    """
    ks = [f(t, y) if f0 is None else f0]
    for alpha, beta in zip(tableau.alpha, tableau.beta):
        ks.append(f(t + alpha * dt, _combine(y, dt, beta, ks)))
    y1 = _combine(y, dt, tableau.c_sol, ks)
    err = dt * sum(c * value_of(k) for c, k in zip(tableau.c_err, ks) if c != 0.0)
    return y1, err, ks


# ---------------------------------------------------------------------------
# dense output
# ---------------------------------------------------------------------------

def hermite_interpolate(y0: State, y1: State, f0: State, f1: State, dt: float, theta: float) -> State:
    """Cubic Hermite interpolant at ``t0 + theta * dt``."""
    h00 = 2 * theta ** 3 - 3 * theta ** 2 + 1
    h10 = theta ** 3 - 2 * theta ** 2 + theta
    h01 = -2 * theta ** 3 + 3 * theta ** 2
    h11 = theta ** 3 - theta ** 2
    return h00 * y0 + (h10 * dt) * f0 + h01 * y1 + (h11 * dt) * f1


def dopri5_interpolate(y0: State, y1: State, ks: Sequence[State], dt: float, theta: float) -> State:
    """Quartic dense output through y0, y1, the step midpoint and both end slopes."""
    f0, f1 = ks[0], ks[-1]
    y_mid = _combine(y0, dt, DOPRI5.c_mid, ks)
    a = (2 * dt) * (f1 - f0) - 8 * (y1 + y0) + 16 * y_mid
    b = dt * (5 * f0 - 3 * f1) + 18 * y0 + 14 * y1 - 32 * y_mid
    c = dt * (f1 - 4 * f0) - 11 * y0 - 5 * y1 + 16 * y_mid
    return y0 + (theta * dt) * f0 + theta ** 2 * c + theta ** 3 * b + theta ** 4 * a


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

def _validate_times(times: np.ndarray, t0: float) -> None:
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if times[0] < t0:
        raise ValueError(f"times must start at or after t0={t0}, got {times[0]}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly ascending")


def _substeps(span: float, step: float) -> int:
    return max(1, int(math.ceil(span / step - 1e-9)))


def _integrate_fixed(f: _Counted, h0: State, times: np.ndarray, t0: float,
                     config: SolverConfig) -> Tuple[List[State], int]:
    method = config.method
    step_fn = {"euler": euler_step, "rk4": rk4_step}.get(method)
    tableau = TABLEAUS.get(method)
    out, n_steps = [], 0
    t, y = t0, h0
    for target in times:
        span = float(target) - t
        if span <= 0:
            out.append(y)
            continue
        n = _substeps(span, config.step_size)
        dt = span / n
        for _ in range(n):
            if step_fn is not None:
                y = step_fn(f, t, y, dt)
            else:
                y, _, _ = embedded_step(f, t, y, dt, tableau)
            t = t + dt
            n_steps += 1
            _check_state(y, t)
        t = float(target)
        out.append(y)
    return out, n_steps


AB4 = (55 / 24, -59 / 24, 37 / 24, -9 / 24)
AM3 = (9 / 24, 19 / 24, -5 / 24, 1 / 24)
CORRECTOR_ITERATIONS = 2


def _adams_history(f: _Counted, t: float, y: State, dt: float, f_now: State) -> List[State]:
    """Derivatives at t, t-dt, t-2dt, t-3dt from RK4 steps taken backwards."""
    history = [f_now]
    yb, tb = y, t
    for _ in range(3):
        yb = rk4_step(f, tb, yb, -dt)
        tb = tb - dt
        history.append(f(tb, yb))
    return history


def _integrate_adams(f: _Counted, h0: State, times: np.ndarray, t0: float,
                     config: SolverConfig) -> Tuple[List[State], int]:
    implicit = config.method == "adams_implicit"
    out, n_steps = [], 0
    t, y = t0, h0
    history: List[State] = []
    f_now = None
    last_dt = None
    for target in times:
        span = float(target) - t
        if span <= 0:
            out.append(y)
            continue
        n = _substeps(span, config.step_size)
        dt = span / n
        if f_now is None:
            f_now = f(t, y)
        if last_dt is None or abs(dt - last_dt) > 1e-12 * abs(dt):
            history = _adams_history(f, t, y, dt, f_now)
            last_dt = dt
        for _ in range(n):
            y_next = _combine(y, dt, AB4, history)
            if implicit:
                for _ in range(CORRECTOR_ITERATIONS):
                    f_pred = f(t + dt, y_next)
                    y_next = _combine(y, dt, AM3, [f_pred] + history[:3])
            t = t + dt
            y = y_next
            f_now = f(t, y)
            history = [f_now] + history[:3]
            n_steps += 1
            _check_state(y, t)
        t = float(target)
        out.append(y)
    return out, n_steps


def _integrate_discrete(f: _Counted, h0: State, times: np.ndarray, t0: float) -> Tuple[List[State], int]:
    out, y, t = [], h0, t0
    for target in times:
        y = y + f(t, y)
        t = float(target)
        out.append(y)
    return out, len(times)


def initial_step(f: _Counted, t0: float, y0: np.ndarray, f0: np.ndarray, order: int,
                 rtol: float, atol: float) -> float:
    """Starting step size from the derivative scale (values only)."""
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = value_of(f(t0 + h0, y1))
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


def _integrate_adaptive(f: _Counted, h0: State, times: np.ndarray, t0: float,
                        config: SolverConfig) -> Tuple[List[State], int, int]:
    tableau = TABLEAUS[config.method]
    out: List[State] = []
    t, y = t0, h0
    f_now = f(t, y)
    dt = initial_step(f, t, value_of(y), value_of(f_now), tableau.order, config.rtol, config.atol)
    t_end = float(times[-1])
    pending = list(times)
    while pending and pending[0] <= t:
        out.append(y)
        pending.pop(0)

    n_steps = n_rejected = 0
    while pending:
        if n_steps + n_rejected >= config.max_steps:
            raise StepBudgetError(
                f"stiffness/step budget: {config.method} exceeded max_steps={config.max_steps} "
                f"at t={t:.6g} (target {t_end:.6g})"
            )
        dt = min(dt, t_end - t)
        y1, err, ks = embedded_step(f, t, y, dt, tableau, f0=f_now)
        y0v, y1v = value_of(y), value_of(y1)
        scale = config.atol + config.rtol * np.maximum(np.abs(y0v), np.abs(y1v))
        ratio = _rms(err / scale)
        if not np.isfinite(ratio):
            raise NonFiniteError(f"{config.method} error estimate is non-finite at t={t:.6g}")
        factor = 10.0 if ratio == 0 else min(10.0, max(0.2, 0.9 * ratio ** (-1.0 / tableau.order)))
        if ratio > 1.0:
            n_rejected += 1
            dt = dt * factor
            continue

        t1 = t + dt
        # bosh3 and dopri5 are first-same-as-last; fehlberg2 is not
        f1 = f(t1, y1) if tableau is FEHLBERG2 else ks[-1]
        while pending and pending[0] <= t1 + 1e-12 * max(1.0, abs(t1)):
            target = pending.pop(0)
            if abs(target - t1) <= 1e-12 * max(1.0, abs(t1)):
                out.append(y1)
                continue
            theta = (target - t) / dt
            if tableau is DOPRI5:
                out.append(dopri5_interpolate(y, y1, ks, dt, theta))
            else:
                out.append(hermite_interpolate(y, y1, f_now, f1, dt, theta))
        t, y, f_now = t1, y1, f1
        n_steps += 1
        _check_state(y, t)
        dt = dt * factor
    return out, n_steps, n_rejected


def integrate(f: Dynamics, h0: State, times: Sequence[float], config: Optional[SolverConfig] = None,
              t0: float = 0.0) -> ODESolution:
    """
    Solve dh/dt = f(t, h), h(t0) = h0 and report h at every requested time.

    Fixed-step methods subdivide every interval between requested times so
    they land on each time exactly; adaptive methods interpolate between
    accepted steps with their dense output.

    Args:
        f: Dynamics ``f(t, h)``
        h0: Initial state (ndarray or Node)
        times: Strictly ascending output times, all >= t0
        config: Solver settings (defaults to Dopri5)
        t0: Initial time

    Returns:
        ODESolution with one state per requested time

    Raises:
        StepBudgetError: adaptive stepping exceeded ``max_steps``
        NonFiniteError: a state or derivative became NaN/Inf
    """
    config = config or SolverConfig()
    config.validate()
    times = np.asarray(times, dtype=np.float64)
    _validate_times(times, t0)
    counted = _Counted(f)
    n_rejected = 0
    if config.method == "discrete":
        states, n_steps = _integrate_discrete(counted, h0, times, t0)
    elif config.method in ("adams_explicit", "adams_implicit"):
        states, n_steps = _integrate_adams(counted, h0, times, t0, config)
    elif config.is_adaptive:
        states, n_steps, n_rejected = _integrate_adaptive(counted, h0, times, t0, config)
    else:
        states, n_steps = _integrate_fixed(counted, h0, times, t0, config)
    logger.debug(
        f"{config.method}: {n_steps} steps, {n_rejected} rejected, {counted.n_fevals} fevals"
    )
    return ODESolution(times, states, n_steps, n_rejected, counted.n_fevals, counted.max_norm)


def latent_trajectory(f: Dynamics, h0: State, frame_times: Sequence[float],
                      config: Optional[SolverConfig] = None, horizon: Optional[int] = None) -> State:
    """
    Latent states at the frame timestamps, stacked to (..., H, latent_dim).

    Raises:
        ValueError: ``horizon`` is given and differs from ``len(frame_times)``
    """
    if horizon is not None and horizon != len(frame_times):
        raise ValueError(f"expected {horizon} frame times, got {len(frame_times)}")
    return integrate(f, h0, frame_times, config).stacked()


def frame_times(horizon: int, frame_rate: float) -> np.ndarray:
    """Uniform timestamps t_k = k / frame_rate, k = 1..H."""
    return np.arange(1, horizon + 1, dtype=np.float64) / frame_rate


# ---------------------------------------------------------------------------
# learned dynamics
# ---------------------------------------------------------------------------

class DynamicsNet:
    """
    f_theta(h, t): two tanh hidden layers with time appended to the input.

    The time input enters as an extra weight row, which is the same as
    concatenating ``t`` to ``h``.
    """

    def __init__(self, name: str, latent_dim: int, hidden: int = 64, out_scale: float = 0.1):
        self.name = name
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.inp = Linear(f"{name}.in", latent_dim, hidden)
        self.mid = Linear(f"{name}.mid", hidden, hidden)
        self.out = Linear(f"{name}.out", hidden, latent_dim, init_scale=out_scale / np.sqrt(hidden))
        self.time_key = f"{name}.in.time"

    def init(self, rng: np.random.Generator) -> dict:
        params = self.inp.init(rng)
        params[self.time_key] = rng.uniform(-1.0, 1.0, size=self.hidden) / np.sqrt(self.latent_dim + 1)
        params.update(self.mid.init(rng))
        params.update(self.out.init(rng))
        return params

    def __call__(self, p: Mapping[str, Node], t: float, h: State) -> State:
        z = T.tanh(self.inp(p, h) + float(t) * p[self.time_key])
        z = T.tanh(self.mid(p, z))
        return self.out(p, z)

    def bind(self, p: Mapping[str, Node]) -> Dynamics:
        """Close over parameters to get an ``f(t, h)`` callable for the solvers."""
        return lambda t, h: self(p, t, h)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

def linear_decay(t: float, h: State) -> State:
    """dh/dt = -h."""
    return -h


def convergence_table(method: str, steps: Sequence[float] = CONVERGENCE_STEPS,
                      problem: Optional[Tuple[Dynamics, np.ndarray, Callable[[float], np.ndarray]]] = None,
                      t_end: float = 1.0) -> pd.DataFrame:
    """
    Global error at ``t_end`` for each step size, embedded methods run with fixed steps.

    Args:
        method: Solver name
        steps: Step sizes
        problem: (f, h0, exact) triple; defaults to dh/dt = -h, h0 = 1

    Returns:
        DataFrame with columns method, step, error
    """
    f, h0, exact = problem or (linear_decay, np.array([1.0]), lambda t: np.array([np.exp(-t)]))
    rows = []
    for step in steps:
        cfg = SolverConfig(method=method, step_size=step, adaptive=False)
        sol = integrate(f, np.asarray(h0, dtype=np.float64), [t_end], cfg)
        error = float(np.max(np.abs(value_of(sol.states[-1]) - exact(t_end))))
        rows.append({"method": method, "step": step, "error": error})
    return pd.DataFrame(rows)


def convergence_order(method: str, problem=None, steps: Sequence[float] = CONVERGENCE_STEPS) -> float:
    """Slope of log(global error) against log(step)."""
    table = convergence_table(method, steps, problem)
    slope, _ = np.polyfit(np.log(table["step"]), np.log(table["error"]), 1)
    return float(slope)
