"""Time integrators for the semi-discrete surface PDE systems.

Three drivers: classical explicit RK4, fully implicit BDF4 with a
factor-once linear solve, and the two-step IMEX scheme SBDF2 that treats a
stiff linear part implicitly and the remaining terms explicitly. All drivers
check every accepted step for non-finite values and raise DivergenceError
with the offending step index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .exceptions import ConfigurationError, DivergenceError
from .linalg import SparseFactorization

Fields = tuple[np.ndarray, ...]
RhsFunc = Callable[[float, Fields], Fields]
ForcingFunc = Callable[[float], np.ndarray]
ProgressFunc = Callable[[int, float, tuple[float, ...]], None]


@dataclass
class TimeState:
    """Current time, current fields, and whatever back levels a scheme needs.

    For BDF4 the history holds the three field vectors before the current
    one (newest first). For SBDF2 it holds the previous fields and the
    explicit right-hand side evaluated at that previous level. RK4 carries
    no history.
    """

    t: float
    fields: Fields
    history: tuple = ()

    def __post_init__(self) -> None:
        self.fields = tuple(np.asarray(f, dtype=np.float64) for f in self.fields)
        if not self.fields:
            raise ConfigurationError("TimeState needs at least one field")


def _check_finite(fields: Fields, step: int) -> None:
    for f in fields:
        if not np.isfinite(f).all():
            raise DivergenceError(
                f"non-finite field value at t-step {step}", step=step
            )


def _report(
    progress: ProgressFunc | None,
    progress_every: int,
    step: int,
    t: float,
    fields: Fields,
) -> None:
    if progress is not None and progress_every > 0 and step % progress_every == 0:
        norms = tuple(float(np.linalg.norm(f)) for f in fields)
        progress(step, t, norms)


def rk4_advance(
    rhs: RhsFunc,
    state: TimeState,
    dt: float,
    steps: int,
    progress: ProgressFunc | None = None,
    progress_every: int = 0,
) -> TimeState:
    """Classical fourth-order Runge-Kutta, applied `steps` times."""
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    t0 = state.t
    y = state.fields
    for step in range(1, steps + 1):
        t = t0 + (step - 1) * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, tuple(f + 0.5 * dt * k for f, k in zip(y, k1)))
        k3 = rhs(t + 0.5 * dt, tuple(f + 0.5 * dt * k for f, k in zip(y, k2)))
        k4 = rhs(t + dt, tuple(f + dt * k for f, k in zip(y, k3)))
        y = tuple(
            f + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for f, a, b, c, d in zip(y, k1, k2, k3, k4)
        )
        _check_finite(y, step)
        _report(progress, progress_every, step, t0 + step * dt, y)
    return TimeState(t=t0 + steps * dt, fields=y)


# leading coefficient and history coefficients (newest first) of the k-step
# backward differentiation formulas
_BDF_COEFFS = {
    1: (1.0, (1.0,)),
    2: (1.5, (2.0, -0.5)),
    3: (11.0 / 6.0, (3.0, -1.5, 1.0 / 3.0)),
    4: (25.0 / 12.0, (4.0, -3.0, 4.0 / 3.0, -0.25)),
}


def _bdf_step_matrix(
    operator: sparse.spmatrix, dt: float, order: int
) -> SparseFactorization:
    lead, _ = _BDF_COEFFS[order]
    n = operator.shape[0]
    return SparseFactorization(
        sparse.identity(n, format="csc") * lead - dt * operator.tocsc()
    )


def _bdf_step(
    fact: SparseFactorization,
    levels: list[np.ndarray],
    forcing: ForcingFunc | None,
    t_new: float,
    dt: float,
    order: int,
) -> np.ndarray:
    _, hist_coeffs = _BDF_COEFFS[order]
    rhs = hist_coeffs[0] * levels[0]
    for coef, lev in zip(hist_coeffs[1:], levels[1:]):
        rhs = rhs + coef * lev
    if forcing is not None:
        rhs = rhs + dt * forcing(t_new)
    return fact.solve(rhs)


def bdf4_factorization(operator: sparse.spmatrix, dt: float) -> SparseFactorization:
    """Factor the BDF4 step matrix up front so callers can time or reuse it."""
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    return _bdf_step_matrix(operator, dt, 4)


def bdf4_advance(
    operator: sparse.spmatrix,
    forcing: ForcingFunc | None,
    state: TimeState,
    dt: float,
    steps: int,
    progress: ProgressFunc | None = None,
    progress_every: int = 0,
    factorization: SparseFactorization | None = None,
) -> TimeState:
    """Fourth-order backward differentiation for c' = operator c + forcing.

    The implicit matrix (25/12) I - dt operator is factored once and reused
    for every step. The state must carry three prior levels in its history
    (use exact_history or bdf4_bootstrap to build them). A factorization
    built by bdf4_factorization(operator, dt) may be passed in to skip the
    internal factoring, e.g. when continuing in blocks.
    """
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    if len(state.fields) != 1:
        raise ConfigurationError("bdf4_advance expects a single field")
    if len(state.history) != 3:
        raise ConfigurationError(
            "bdf4_advance needs exactly 3 prior levels in the state history"
        )
    levels = [state.fields[0]] + [np.asarray(h, dtype=np.float64) for h in state.history]
    fact = factorization if factorization is not None else _bdf_step_matrix(operator, dt, 4)
    t0 = state.t
    for step in range(1, steps + 1):
        t_new = t0 + step * dt
        c_new = _bdf_step(fact, levels, forcing, t_new, dt, 4)
        _check_finite((c_new,), step)
        levels = [c_new] + levels[:3]
        _report(progress, progress_every, step, t_new, (c_new,))
    return TimeState(
        t=t0 + steps * dt, fields=(levels[0],), history=tuple(levels[1:])
    )


def exact_history(
    solution: Callable[[float], np.ndarray], t0: float, dt: float
) -> TimeState:
    """Seed a BDF4 state from a known solution at t0, t0+dt, ..., t0+3dt.

    The returned state sits at t0+3dt with the three earlier levels in
    history, so stepping it advances to t0+4dt first.
    """
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    levels = [np.asarray(solution(t0 + k * dt), dtype=np.float64) for k in (3, 2, 1, 0)]
    return TimeState(t=t0 + 3 * dt, fields=(levels[0],), history=tuple(levels[1:]))


def bdf4_bootstrap(
    operator: sparse.spmatrix,
    forcing: ForcingFunc | None,
    initial: np.ndarray,
    t0: float,
    dt: float,
) -> TimeState:
    """Build a 4-level BDF4 starting state from a bare initial condition.

    Runs BDF1, then BDF2, then BDF3, then BDF4 on a four-times-finer grid so
    the low-order startup error stays far below the main integration error,
    recording the levels that land on the coarse grid t0+dt, t0+2dt, t0+3dt.
    """
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    h = dt / 4.0
    sub_levels = [np.asarray(initial, dtype=np.float64)]
    facts = {order: _bdf_step_matrix(operator, h, order) for order in (1, 2, 3, 4)}
    coarse = [sub_levels[0]]
    for substep in range(1, 13):
        order = min(substep, 4)
        window = sub_levels[:order]
        c_new = _bdf_step(facts[order], window, forcing, t0 + substep * h, h, order)
        _check_finite((c_new,), substep)
        sub_levels = [c_new] + sub_levels[:3]
        if substep % 4 == 0:
            coarse.insert(0, c_new)
    return TimeState(t=t0 + 3 * dt, fields=(coarse[0],), history=tuple(coarse[1:]))


def sbdf2_factorizations(
    implicit_ops: Sequence[sparse.spmatrix], dt: float
) -> tuple[SparseFactorization, ...]:
    """Factor the per-field SBDF2 step matrices up front for timing or reuse."""
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    return tuple(
        SparseFactorization(
            sparse.identity(op.shape[0], format="csc") * 1.5 - dt * op.tocsc()
        )
        for op in implicit_ops
    )


def sbdf2_advance(
    implicit_ops: Sequence[sparse.spmatrix],
    explicit_rhs: RhsFunc,
    state: TimeState,
    dt: float,
    steps: int,
    progress: ProgressFunc | None = None,
    progress_every: int = 0,
    factorizations: Sequence[SparseFactorization] | None = None,
) -> TimeState:
    """Second-order IMEX multistep: implicit linear parts, explicit rest.

    Solves (3/2) c{n+1} - 2 c{n} + (1/2) c{n-1} = dt (D c{n+1} + 2 E{n} -
    E{n-1}) per field, with D the field's implicit operator. One implicit
    matrix per field is factored once and reused; factorizations built by
    sbdf2_factorizations(implicit_ops, dt) may be passed in to skip that,
    e.g. when continuing in blocks. The IMEX Euler startup matrix differs
    and is always built internally when needed.
    """
    if dt <= 0.0:
        raise ConfigurationError("dt must be positive")
    if steps <= 0:
        return state
    num_fields = len(state.fields)
    if len(implicit_ops) != num_fields:
        raise ConfigurationError(
            f"{num_fields} fields but {len(implicit_ops)} implicit operators"
        )
    t = state.t
    current = state.fields
    explicit_now = explicit_rhs(t, current)
    step0 = 0
    if state.history:
        prev, explicit_prev = state.history
    elif steps > 0:
        # IMEX Euler startup: (I - dt D) c1 = c0 + dt E0
        euler_facts = [
            SparseFactorization(
                sparse.identity(op.shape[0], format="csc") - dt * op.tocsc()
            )
            for op in implicit_ops
        ]
        prev, explicit_prev = current, explicit_now
        current = tuple(
            fact.solve(c + dt * e)
            for fact, c, e in zip(euler_facts, prev, explicit_prev)
        )
        step0 = 1
        t = state.t + dt
        _check_finite(current, 1)
        explicit_now = explicit_rhs(t, current)
        _report(progress, progress_every, 1, t, current)
    else:
        prev, explicit_prev = current, explicit_now
    if factorizations is not None:
        if len(factorizations) != num_fields:
            raise ConfigurationError(
                f"{num_fields} fields but {len(factorizations)} factorizations"
            )
        facts = list(factorizations)
    else:
        facts = list(sbdf2_factorizations(implicit_ops, dt))
    for step in range(step0 + 1, steps + 1):
        t_new = state.t + step * dt
        new_fields = tuple(
            fact.solve(2.0 * c - 0.5 * p + dt * (2.0 * e_now - e_prev))
            for fact, c, p, e_now, e_prev in zip(
                facts, current, prev, explicit_now, explicit_prev
            )
        )
        _check_finite(new_fields, step)
        prev, explicit_prev = current, explicit_now
        current = new_fields
        explicit_now = explicit_rhs(t_new, current)
        t = t_new
        _report(progress, progress_every, step, t_new, current)
    return TimeState(t=t, fields=current, history=(prev, explicit_prev))
