"""Seven-phase switching grammar, phase decoding and the phase-malfunction matrix.

Phases are decoded by a left-to-right dynamic program: every frame pays the
fraction of sources whose binarized activity disagrees with the phase's
expected source set, and the seven phases must appear once each, in order.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .snmf import Source


class SwitchingPhase(enum.IntEnum):
    StartingRoutine = 0
    IdleBeforeMoving = 1
    DeactivateSafety = 2
    MovingRail = 3
    ActivateSafety = 4
    IdleAfterMoving = 5
    EndingRoutine = 6


PHASES = tuple(SwitchingPhase)


class MalfunctionKind(enum.Enum):
    GreaseInsideDev = "GreaseInsideDev"
    Contact = "Contact"
    Lock = "Lock"
    Gear = "Gear"
    Motor = "Motor"
    CollisionInclusions = "CollisionInclusions"
    CollisionSnowMelting = "CollisionSnowMelting"
    GreaseOutsideDev = "GreaseOutsideDev"
    TorqueFluctuation = "TorqueFluctuation"
    InsufficientControlVoltage = "InsufficientControlVoltage"
    # abnormal adhesion force adjustment; detected through the Contact column
    Adhesion = "Adhesion"

    @property
    def table_column(self) -> "MalfunctionKind":
        return MalfunctionKind.Contact if self is MalfunctionKind.Adhesion else self


TABLE_COLUMNS = tuple(m for m in MalfunctionKind if m is not MalfunctionKind.Adhesion)


class CostEffect(enum.Enum):
    VeryHigh = "VeryHigh"
    High = "High"
    Avg = "Avg"
    Low = "Low"
    VeryLow = "VeryLow"
    NONE = "None"


_P = SwitchingPhase
_M = MalfunctionKind

# Checked cells of the phase-malfunction matrix, by phase.
_DETECTS: dict[SwitchingPhase, frozenset[MalfunctionKind]] = {
    _P.StartingRoutine: frozenset({_M.InsufficientControlVoltage}),
    _P.IdleBeforeMoving: frozenset({_M.GreaseInsideDev, _M.Gear, _M.Motor}),
    _P.DeactivateSafety: frozenset({_M.GreaseInsideDev, _M.Lock, _M.Gear, _M.Motor}),
    _P.MovingRail: frozenset({
        _M.Contact, _M.Gear, _M.Motor, _M.CollisionInclusions, _M.CollisionSnowMelting,
        _M.GreaseOutsideDev, _M.TorqueFluctuation,
    }),
    _P.ActivateSafety: frozenset({_M.GreaseInsideDev, _M.Lock, _M.Gear, _M.Motor}),
    _P.IdleAfterMoving: frozenset({_M.GreaseInsideDev, _M.Gear, _M.Motor}),
    _P.EndingRoutine: frozenset(),
}

_COST_EFFECT = {
    _M.GreaseInsideDev: CostEffect.VeryHigh,
    _M.Contact: CostEffect.High,
    _M.Lock: CostEffect.Avg,
    _M.Gear: CostEffect.Avg,
    _M.Motor: CostEffect.Avg,
    _M.CollisionInclusions: CostEffect.Avg,
    _M.CollisionSnowMelting: CostEffect.Low,
    _M.GreaseOutsideDev: CostEffect.Low,
    _M.TorqueFluctuation: CostEffect.VeryLow,
    _M.InsufficientControlVoltage: CostEffect.NONE,
}


@dataclass(frozen=True)
class PhaseMalfunctionMatrix:
    detects: Mapping[tuple[SwitchingPhase, MalfunctionKind], bool]
    cost_effect: Mapping[MalfunctionKind, CostEffect]

    @classmethod
    def standard(cls) -> "PhaseMalfunctionMatrix":
        detects = {(p, m): m in _DETECTS[p] for p in PHASES for m in TABLE_COLUMNS}
        return cls(detects=detects, cost_effect=dict(_COST_EFFECT))


def phases_for_malfunction(
    m: MalfunctionKind, matrix: PhaseMalfunctionMatrix | None = None
) -> tuple[SwitchingPhase, ...]:
    matrix = matrix or PhaseMalfunctionMatrix.standard()
    column = m.table_column
    return tuple(p for p in PHASES if matrix.detects[(p, column)])


_PROFILE: dict[SwitchingPhase, frozenset[Source]] = {
    _P.StartingRoutine: frozenset({Source.Relay}),
    _P.IdleBeforeMoving: frozenset({Source.Motor}),
    _P.DeactivateSafety: frozenset({Source.Motor, Source.LockPiece}),
    _P.MovingRail: frozenset({Source.Motor, Source.Rod}),
    _P.ActivateSafety: frozenset({Source.Motor, Source.LockPiece}),
    _P.IdleAfterMoving: frozenset({Source.Motor}),
    _P.EndingRoutine: frozenset({Source.Relay}),
}

# Sources the decoder looks at; Background is a sink for stationary noise only.
PROFILE_SOURCES = (Source.Relay, Source.Motor, Source.LockPiece, Source.Rod)


def expected_source_profile(p: SwitchingPhase) -> frozenset[Source]:
    return _PROFILE[SwitchingPhase(p)]


def default_profile() -> dict[SwitchingPhase, frozenset[Source]]:
    return dict(_PROFILE)


@dataclass(frozen=True)
class PhaseSegmentation:
    boundaries: tuple[int, ...]  # b0..b7
    hop_s: float
    confidence: tuple[float, ...] = field(default=(1.0,) * 7)

    def __post_init__(self):
        b = self.boundaries
        if len(b) != 8 or b[0] != 0 or any(x > y for x, y in zip(b, b[1:])):
            raise ValueError(f"invalid phase boundaries {b}")

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1]

    def frames(self, p: SwitchingPhase) -> tuple[int, int]:
        return self.boundaries[p], self.boundaries[p + 1]

    def length(self, p: SwitchingPhase) -> int:
        start, end = self.frames(p)
        return end - start

    def duration_s(self, p: SwitchingPhase) -> float:
        return self.length(p) * self.hop_s

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_frames, dtype=int)
        for p in PHASES:
            start, end = self.frames(p)
            out[start:end] = int(p)
        return out


def boundaries_from_windows(
    windows: Sequence[tuple[float, float]], hop_s: float, window_s: float, n_frames: int
) -> tuple[int, ...]:
    """Map phase windows in seconds to frame boundaries.

    A frame belongs to the phase containing its window center.
    """
    inner = [
        int(np.clip(np.ceil((start - window_s / 2) / hop_s - 1e-9), 0, n_frames))
        for start, _ in windows[1:]
    ]
    return (0, *inner, n_frames)


def binarize(traces: Mapping[Source, np.ndarray], threshold: float = 0.2) -> dict[Source, np.ndarray]:
    """Per-source activity: above ``threshold`` times that source's event maximum."""
    out = {}
    for src, trace in traces.items():
        trace = np.asarray(trace, dtype=float)
        peak = trace.max() if trace.size else 0.0
        out[src] = trace > threshold * peak if peak > 0 else np.zeros(trace.shape, dtype=bool)
    return out


def mismatch_costs(
    active: Mapping[Source, np.ndarray],
    profile: Mapping[SwitchingPhase, Iterable[Source]],
) -> np.ndarray:
    """[7, n_frames] fraction of sources disagreeing with each phase's profile."""
    sources = [s for s in PROFILE_SOURCES if s in active] or list(active)
    act = np.stack([active[s] for s in sources])
    costs = np.empty((len(PHASES), act.shape[1]))
    for p in PHASES:
        expected = np.array([s in set(profile[p]) for s in sources])[:, None]
        costs[p] = np.mean(act != expected, axis=0)
    return costs


def decode(costs: np.ndarray) -> tuple[int, ...]:
    """Minimum-cost ordered partition of frames into ``costs.shape[0]`` non-empty runs.

    Ties break toward earlier boundaries, settled from the last boundary backward.
    """
    n_phases, n = costs.shape
    if n < n_phases:
        raise ValueError(f"need at least {n_phases} frames to segment, got {n}")
    inf = np.inf
    # total[p, t]: best cost with frames [0, t] assigned and frame t in phase p
    total = np.full((n_phases, n), inf)
    came_from_prev = np.zeros((n_phases, n), dtype=bool)
    total[0, 0] = costs[0, 0]
    for t in range(1, n):
        stay = total[:, t - 1]
        advance = np.concatenate(([inf], total[:-1, t - 1]))
        take_advance = advance < stay
        total[:, t] = np.where(take_advance, advance, stay) + costs[:, t]
        came_from_prev[:, t] = take_advance
    boundaries = [n]
    p = n_phases - 1
    for t in range(n - 1, 0, -1):
        if came_from_prev[p, t]:
            boundaries.append(t)
            p -= 1
    boundaries.append(0)
    return tuple(reversed(boundaries))


def segment_phases(
    traces: Mapping[Source, np.ndarray],
    profile: Mapping[SwitchingPhase, Iterable[Source]] | None = None,
    hop_s: float = 0.032,
    threshold: float = 0.2,
) -> PhaseSegmentation:
    if not traces:
        raise ValueError("no activation traces given")
    lengths = {len(np.asarray(t)) for t in traces.values()}
    if len(lengths) != 1:
        raise ValueError("traces of unequal length")
    (n,) = lengths
    if n < len(PHASES):
        raise ValueError(f"clip too short to segment: {n} frames < {len(PHASES)}")
    profile = profile or _PROFILE
    active = binarize(traces, threshold)
    if not any(a.any() for src, a in active.items() if src in PROFILE_SOURCES):
        raise ValueError("no activity detected")
    costs = mismatch_costs(active, profile)
    b = decode(costs)
    confidence = tuple(
        float(1.0 - costs[p, b[p]: b[p + 1]].mean()) for p in PHASES
    )
    return PhaseSegmentation(boundaries=b, hop_s=hop_s, confidence=confidence)


PHASE_TABLE_HEADER = ("event_id", "phase", "start_s", "end_s", "confidence")


def phase_table(event_id: str, seg: PhaseSegmentation) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PHASE_TABLE_HEADER)
    for p in PHASES:
        start, end = seg.frames(p)
        writer.writerow([
            event_id, p.name, f"{start * seg.hop_s:.3f}", f"{end * seg.hop_s:.3f}",
            f"{seg.confidence[p]:.4f}",
        ])
    return buf.getvalue()
