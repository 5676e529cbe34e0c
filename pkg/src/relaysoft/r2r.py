"""Run-to-run adaptation: audio cost and a one-evaluation-per-operation Nelder-Mead.

The simplex lives in log-parameter space so every proposal is positive.
Classical coefficients (reflection 1, expansion 2, contraction 0.5) are
used; the shrink step is replaced by re-evaluating the best vertex, and
the incumbent is also re-evaluated periodically with its cost replaced by
the running mean, which keeps one lucky noisy draw from freezing the search.
A contraction that fails twice in a row (nothing the re-evaluation could
fix) falls back to the classical shrink toward the best vertex.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import AudioRecord, audio_energy
from .relay_core import ParamVector

DIM = 8
ALPHA, GAMMA, RHO = 1.0, 2.0, 0.5


@dataclass(frozen=True)
class CostConfig:
    window_start: float = 0.0
    window_length: float = 15e-3
    baseline_median: float | None = None

    def __post_init__(self):
        if not self.window_length > 0:
            raise ValueError("window_length must be > 0")
        if self.baseline_median is not None and not self.baseline_median > 0:
            raise ValueError("baseline_median must be > 0")


def cost_from_audio(audio: AudioRecord, cfg: CostConfig) -> float:
    return audio_energy(audio, cfg.window_start, cfg.window_length)


def normalize_cost(J: float, cfg: CostConfig) -> float:
    if cfg.baseline_median is None:
        raise ValueError("no baseline median set; run the standard baseline first")
    return J / cfg.baseline_median


def encode(p: ParamVector) -> np.ndarray:
    return np.log(p.as_array())


def decode(x) -> ParamVector:
    return ParamVector.from_array(np.exp(np.asarray(x, dtype=float)))


class Phase(str, enum.Enum):
    FILL = "fill"
    REFLECT = "reflect"
    EXPAND = "expand"
    CONTRACT_OUT = "contract_out"
    CONTRACT_IN = "contract_in"
    REEVALUATE = "reevaluate"


@dataclass
class SimplexState:
    vertices: np.ndarray                     # (9, 8) encoded
    costs: np.ndarray                        # (9,), nan until evaluated
    ages: np.ndarray                         # evaluations since each vertex was (re)scored
    n_scored: np.ndarray                     # evaluations averaged into each cost
    phase: Phase = Phase.FILL
    fill_queue: list[int] = field(default_factory=lambda: list(range(DIM + 1)))
    failed_contractions: int = 0
    pending: np.ndarray | None = None
    awaiting: bool = False
    reflected: tuple[np.ndarray, float] | None = None
    reeval_index: int = -1
    reeval_every: int = 25
    n_evaluations: int = 0
    reeval_due: bool = False
    best_history: list[float] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return int(np.nanargmin(self.costs)) if np.isfinite(self.costs).any() else 0

    @property
    def best_cost(self) -> float:
        return float(np.nanmin(self.costs)) if np.isfinite(self.costs).any() else math.inf

    @property
    def best(self) -> ParamVector:
        return decode(self.vertices[self.best_index])

    def validate(self) -> None:
        if self.vertices.shape != (DIM + 1, DIM):
            raise ValueError(f"simplex must have {DIM + 1} vertices of dimension {DIM}")
        scored = self.costs[~np.isnan(self.costs)]
        if not np.all(np.isfinite(scored)):
            raise ValueError("vertex costs must be finite")


def nm_init(p_nominal: ParamVector, relative_step: float = 0.15,
            reeval_every: int = 25) -> SimplexState:
    """Vertex 0 is the nominal point; vertex i moves log-coordinate i-1 by ``relative_step``."""
    if not relative_step > 0:
        raise ValueError("relative_step must be > 0 (a zero step gives a degenerate simplex)")
    if reeval_every < 1:
        raise ValueError("reeval_every must be >= 1")
    x0 = encode(p_nominal)
    vertices = np.tile(x0, (DIM + 1, 1))
    vertices[1:] += relative_step * np.eye(DIM)
    st = SimplexState(vertices=vertices, costs=np.full(DIM + 1, np.nan),
                      ages=np.zeros(DIM + 1, dtype=int), n_scored=np.zeros(DIM + 1, dtype=int),
                      reeval_every=reeval_every)
    st.pending = vertices[0].copy()
    return st


def _order(st: SimplexState) -> np.ndarray:
    return np.argsort(st.costs, kind="stable")


def _centroid(st: SimplexState, order: np.ndarray) -> np.ndarray:
    return st.vertices[order[:-1]].mean(axis=0)


def _start_iteration(st: SimplexState) -> None:
    """Propose the next point at an iteration boundary: a due re-evaluation or a reflection."""
    st.reflected = None
    if st.reeval_due:
        st.reeval_due = False
        st.phase = Phase.REEVALUATE
        st.reeval_index = st.best_index
        st.pending = st.vertices[st.reeval_index].copy()
        return
    order = _order(st)
    c = _centroid(st, order)
    st.phase = Phase.REFLECT
    st.pending = c + ALPHA * (c - st.vertices[order[-1]])


def _replace_worst(st: SimplexState, x: np.ndarray, f: float) -> None:
    st.failed_contractions = 0
    w = int(_order(st)[-1])
    st.vertices[w] = x
    st.costs[w] = f
    st.ages[w] = 0
    st.n_scored[w] = 1
    _start_iteration(st)


def _contraction_failed(st: SimplexState) -> None:
    st.failed_contractions += 1
    if st.failed_contractions < 2:
        st.reeval_due = True
        _start_iteration(st)
        return
    st.failed_contractions = 0
    b = st.best_index
    st.fill_queue = [i for i in range(DIM + 1) if i != b]
    for i in st.fill_queue:
        st.vertices[i] = st.vertices[b] + RHO * (st.vertices[i] - st.vertices[b])
        st.costs[i] = np.nan
    st.reflected = None
    st.phase = Phase.FILL
    st.pending = st.vertices[st.fill_queue[0]].copy()


def nm_next_candidate(state: SimplexState) -> ParamVector:
    if state.awaiting:
        raise RuntimeError("previous candidate has not been scored; call nm_update first")
    state.awaiting = True
    return decode(state.pending)


def nm_pending_encoded(state: SimplexState) -> np.ndarray:
    return state.pending.copy()


def nm_update(state: SimplexState, evaluated_cost: float) -> SimplexState:
    st = state
    if not st.awaiting:
        raise RuntimeError("no pending candidate to score")
    f = float(evaluated_cost)
    if not math.isfinite(f):
        raise ValueError(f"cost must be finite, got {evaluated_cost}")
    st.awaiting = False
    st.n_evaluations += 1
    st.ages += 1
    if st.n_evaluations % st.reeval_every == 0:
        st.reeval_due = True
    x = st.pending

    if st.phase is Phase.FILL:
        i = st.fill_queue.pop(0)
        st.costs[i] = f
        st.ages[i] = 0
        st.n_scored[i] = 1
        if st.fill_queue:
            st.pending = st.vertices[st.fill_queue[0]].copy()
        else:
            _start_iteration(st)
    elif st.phase is Phase.REEVALUATE:
        i = st.reeval_index
        n = st.n_scored[i]
        st.costs[i] = (st.costs[i] * n + f) / (n + 1)
        st.n_scored[i] = n + 1
        st.ages[i] = 0
        _start_iteration(st)
    else:
        order = _order(st)
        f_best, f_second, f_worst = (st.costs[order[0]], st.costs[order[-2]],
                                     st.costs[order[-1]])
        c = _centroid(st, order)
        if st.phase is Phase.REFLECT:
            if f < f_best:
                st.reflected = (x.copy(), f)
                st.phase = Phase.EXPAND
                st.pending = c + GAMMA * (x - c)
            elif f < f_second:
                _replace_worst(st, x.copy(), f)
            elif f < f_worst:
                st.reflected = (x.copy(), f)
                st.phase = Phase.CONTRACT_OUT
                st.pending = c + RHO * (x - c)
            else:
                st.reflected = (x.copy(), f)
                st.phase = Phase.CONTRACT_IN
                st.pending = c + RHO * (st.vertices[order[-1]] - c)
        elif st.phase is Phase.EXPAND:
            xr, fr = st.reflected
            if f < fr:
                _replace_worst(st, x.copy(), f)
            else:
                _replace_worst(st, xr, fr)
        elif st.phase is Phase.CONTRACT_OUT:
            xr, fr = st.reflected
            if f <= fr:
                _replace_worst(st, x.copy(), f)
            else:
                _contraction_failed(st)
        elif st.phase is Phase.CONTRACT_IN:
            if f < f_worst:
                _replace_worst(st, x.copy(), f)
            else:
                _contraction_failed(st)
    st.best_history.append(st.best_cost)
    return st


# --------------------------------------------------------------------------
# trace export
# --------------------------------------------------------------------------

TRACE_COLUMNS = ("operation", *(f"x_{n}" for n in ParamVector.names()),
                 "cost", "cost_norm", "phase")


@dataclass(frozen=True)
class TraceRow:
    operation: int
    encoded: tuple[float, ...]
    cost: float
    cost_norm: float
    phase: str

    def as_list(self) -> list:
        return [self.operation, *(repr(v) for v in self.encoded), repr(self.cost),
                repr(self.cost_norm), self.phase]


def write_trace(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())
    return path
