"""Per-phase normal models of switch sound and degree-of-abnormality scoring.

Each normal model is an interpolation network: a small dense ReLU network
that predicts a spectrogram frame from the ``context`` frames on either side
of it (the center frame itself is withheld). Frames are log-compressed and
standardized per bin first. A frame's anomaly score is the mean squared
prediction error over bins; a phase's score is the mean over its frames.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .config import SynthConfig
from .dsp import Waveform
from .synth import LADDERS, DegradationProfile, event_seed, generate_event, ladder_step_value
from .phase import (
    MalfunctionKind,
    PhaseMalfunctionMatrix,
    PhaseSegmentation,
    SwitchingPhase,
    phases_for_malfunction,
)

MODEL_SCHEMA = "switchsound/normal-model"
MODEL_VERSION = 1
STD_FLOOR = 1e-3

# The three inspection targets with shipped models.
TARGETS = (MalfunctionKind.GreaseInsideDev, MalfunctionKind.Lock, MalfunctionKind.Adhesion)


class InsufficientDataError(ValueError):
    pass


class Verdict(enum.Enum):
    Normal = "Normal"
    Anomalous = "Anomalous"


# --- network ----------------------------------------------------------------


def init_params(n_in: int, hidden: Sequence[int], n_out: int, rng: np.random.Generator) -> list[np.ndarray]:
    """He-initialized weights, zero biases: [W1, b1, W2, b2, ...]."""
    sizes = [n_in, *hidden, n_out]
    params = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        params.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return params


def forward(params: Sequence[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [x]
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = acts[-1] @ params[2 * i] + params[2 * i + 1]
        acts.append(np.maximum(z, 0.0) if i < n_layers - 1 else z)
    return acts[-1], acts


def loss_and_grads(
    params: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over batch and bins, and its gradient for every parameter."""
    pred, acts = forward(params, x)
    diff = pred - y
    loss = float(np.mean(diff**2))
    delta = 2.0 * diff / diff.size
    grads: list[np.ndarray] = [None] * len(params)  # type: ignore[list-item]
    for i in reversed(range(len(params) // 2)):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ params[2 * i].T) * (acts[i] > 0)
    return loss, grads


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- model ------------------------------------------------------------------


@dataclass(frozen=True)
class NormalModel:
    phase: SwitchingPhase
    context: int
    params: tuple[np.ndarray, ...]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    history: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_bins(self) -> int:
        return self.norm_mean.shape[0]

    def standardize(self, magnitudes: np.ndarray) -> np.ndarray:
        """[n_bins, n_frames] magnitudes -> [n_frames, n_bins] standardized log frames."""
        return ((np.log1p(magnitudes).T - self.norm_mean) / self.norm_std)

    def frame_errors(self, magnitudes: np.ndarray, centers: np.ndarray) -> np.ndarray:
        z = self.standardize(magnitudes)
        x = context_inputs(z, centers, self.context)
        pred, _ = forward(self.params, x)
        return np.mean((pred - z[centers]) ** 2, axis=1)

    def to_json(self) -> str:
        payload = {
            "schema": MODEL_SCHEMA,
            "version": MODEL_VERSION,
            "phase": self.phase.name,
            "context": self.context,
            "n_bins": self.n_bins,
            "shapes": [list(p.shape) for p in self.params],
            "norm_mean": self.norm_mean.tolist(),
            "norm_std": self.norm_std.tolist(),
            "params": [p.ravel().tolist() for p in self.params],
        }
        return json.dumps(payload) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "NormalModel":
        payload = json.loads(text)
        if payload.get("schema") != MODEL_SCHEMA or payload.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_SCHEMA} v{MODEL_VERSION} file")
        params = tuple(
            np.array(flat, dtype=np.float64).reshape(shape)
            for flat, shape in zip(payload["params"], payload["shapes"])
        )
        return cls(
            phase=SwitchingPhase[payload["phase"]],
            context=int(payload["context"]),
            params=params,
            norm_mean=np.array(payload["norm_mean"], dtype=np.float64),
            norm_std=np.array(payload["norm_std"], dtype=np.float64),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "NormalModel":
        return cls.from_json(Path(path).read_text())


def context_inputs(z: np.ndarray, centers: np.ndarray, context: int) -> np.ndarray:
    """Stack frames ``t-context..t-1, t+1..t+context`` (edge-clamped) for each center t."""
    n = z.shape[0]
    offsets = [o for o in range(-context, context + 1) if o != 0]
    idx = np.clip(np.asarray(centers)[:, None] + np.array(offsets)[None, :], 0, n - 1)
    return z[idx].reshape(len(centers), -1)


def phase_centers(seg: PhaseSegmentation, phase: SwitchingPhase, context: int, strict: bool = True) -> np.ndarray:
    """Frames of ``phase`` whose whole context lies inside the phase.

    With ``strict=False`` a phase too short for that falls back to all its frames.
    """
    start, end = seg.frames(phase)
    centers = np.arange(start + context, end - context)
    if centers.size == 0 and not strict:
        centers = np.arange(start, end)
    return centers


@dataclass(frozen=True)
class SegmentedEvent:
    event_id: str
    magnitudes: np.ndarray  # [n_bins, n_frames]
    segmentation: PhaseSegmentation


def train_normal_model(
    events: Sequence[SegmentedEvent],
    phase: SwitchingPhase,
    epochs: int = 30,
    seed: int = 0,
    context: int = 2,
    hidden: Sequence[int] = (64, 64),
    learning_rate: float = 1e-3,
    batch_size: int = 32,
    holdout_fraction: float = 0.2,
    min_events: int = 20,
) -> NormalModel:
    """Fit the interpolation network for one phase on clean segmented events.

    Events are split into train / held-out by a seeded shuffle; the returned
    parameters are those of the epoch with the lowest held-out loss.
    """
    phase = SwitchingPhase(phase)
    if len(events) < min_events:
        raise InsufficientDataError(
            f"insufficient training data: {len(events)} events for {phase.name}, need >= {min_events}"
        )
    for ev in events:
        if ev.segmentation.length(phase) < 2 * context + 1:
            raise InsufficientDataError(
                f"phase too short: {phase.name} in {ev.event_id!r} has "
                f"{ev.segmentation.length(phase)} frames, need >= {2 * context + 1}"
            )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(events))
    n_hold = max(1, int(round(holdout_fraction * len(events))))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]

    logs = []
    for i in train_idx:
        ev = events[i]
        start, end = ev.segmentation.frames(phase)
        logs.append(np.log1p(ev.magnitudes[:, start:end]).T)
    stacked = np.concatenate(logs)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)

    def samples(indices) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for i in indices:
            ev = events[i]
            z = (np.log1p(ev.magnitudes).T - mean) / std
            centers = phase_centers(ev.segmentation, phase, context)
            xs.append(context_inputs(z, centers, context))
            ys.append(z[centers])
        return np.concatenate(xs), np.concatenate(ys)

    x_train, y_train = samples(train_idx)
    x_hold, y_hold = samples(hold_idx)
    n_bins = mean.shape[0]
    params = init_params(2 * context * n_bins, hidden, n_bins, rng)
    opt = Adam(params, lr=learning_rate)

    def eval_loss(p) -> float:
        pred, _ = forward(p, x_hold)
        return float(np.mean((pred - y_hold) ** 2))

    best = [p.copy() for p in params]
    best_loss = eval_loss(params)
    history = {"train": [], "holdout": [], "initial_holdout": best_loss, "best_epoch": 0}
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(x_train))
        total = 0.0
        for lo in range(0, len(perm), batch_size):
            batch = perm[lo: lo + batch_size]
            loss, grads = loss_and_grads(params, x_train[batch], y_train[batch])
            opt.step(params, grads)
            total += loss * len(batch)
        history["train"].append(total / len(perm))
        hold = eval_loss(params)
        history["holdout"].append(hold)
        if hold < best_loss:
            best_loss = hold
            best = [p.copy() for p in params]
            history["best_epoch"] = epoch
    history["best_holdout"] = best_loss
    history["target_variance"] = float(np.var(y_hold))
    return NormalModel(
        phase=phase, context=context, params=tuple(best), norm_mean=mean, norm_std=std, history=history
    )


# --- scoring ----------------------------------------------------------------


def phase_score(model: NormalModel, event: SegmentedEvent) -> float:
    centers = phase_centers(event.segmentation, model.phase, model.context, strict=False)
    if centers.size == 0:
        raise ValueError(f"phase {model.phase.name} is empty in event {event.event_id!r}")
    return float(np.mean(model.frame_errors(event.magnitudes, centers)))


@dataclass(frozen=True)
class TargetResult:
    target: MalfunctionKind
    phases: tuple[SwitchingPhase, ...]
    score: float
    threshold: float

    @property
    def verdict(self) -> Verdict:
        return Verdict.Anomalous if self.score > self.threshold else Verdict.Normal


@dataclass(frozen=True)
class AnomalyReport:
    event_id: str
    phase_scores: dict[SwitchingPhase, float]
    phase_thresholds: dict[SwitchingPhase, float]
    targets: dict[MalfunctionKind, TargetResult]
    switching_time_s: float

    def phase_verdict(self, p: SwitchingPhase) -> Verdict:
        thr = self.phase_thresholds.get(p, np.inf)
        return Verdict.Anomalous if self.phase_scores[p] > thr else Verdict.Normal

    def rows(self) -> list[tuple[str, str, str, float, float, str]]:
        """(event_id, phase, target, score, threshold, verdict); phase '*' is the target aggregate."""
        out = []
        for target, res in self.targets.items():
            for p in res.phases:
                out.append((
                    self.event_id, p.name, target.value, self.phase_scores[p],
                    self.phase_thresholds.get(p, float("inf")), self.phase_verdict(p).value,
                ))
            out.append((self.event_id, "*", target.value, res.score, res.threshold, res.verdict.value))
        return out

    def to_dict(self) -> dict:
        return {
            "switching_time_s": self.switching_time_s,
            "phase_scores": {p.name: s for p, s in self.phase_scores.items()},
            "phase_thresholds": {p.name: t for p, t in self.phase_thresholds.items()},
            "phase_verdicts": {p.name: self.phase_verdict(p).value for p in self.phase_scores},
            "targets": {
                t.value: {"score": r.score, "threshold": r.threshold, "verdict": r.verdict.value}
                for t, r in self.targets.items()
            },
        }


SCORE_TABLE_HEADER = ("event_id", "phase", "target", "score", "threshold", "verdict")


def score_event(
    event: SegmentedEvent,
    models: Mapping[SwitchingPhase, NormalModel],
    matrix: Optional[PhaseMalfunctionMatrix] = None,
    thresholds: Optional["Thresholds"] = None,
    targets: Sequence[MalfunctionKind] = TARGETS,
) -> AnomalyReport:
    matrix = matrix or PhaseMalfunctionMatrix.standard()
    needed: dict[MalfunctionKind, tuple[SwitchingPhase, ...]] = {
        t: phases_for_malfunction(t, matrix) for t in targets
    }
    phases = sorted({p for ps in needed.values() for p in ps})
    missing = [p.name for p in phases if p not in models]
    if missing:
        raise KeyError(f"missing phase models: {', '.join(missing)}")
    scores = {p: phase_score(models[p], event) for p in phases}
    thresholds = thresholds or Thresholds()
    results = {
        t: TargetResult(
            target=t, phases=ps, score=float(np.mean([scores[p] for p in ps])),
            threshold=thresholds.target.get(t, float("inf")),
        )
        for t, ps in needed.items()
    }
    return AnomalyReport(
        event_id=event.event_id,
        phase_scores=scores,
        phase_thresholds={p: thresholds.phase[p] for p in phases if p in thresholds.phase},
        targets=results,
        switching_time_s=event.segmentation.duration_s(SwitchingPhase.MovingRail),
    )


def calibrate_threshold(scores: Sequence[float], sigma_mult: float = 3.0) -> float:
    """Mean plus ``sigma_mult`` sample standard deviations of clean scores."""
    scores = np.asarray(scores, dtype=float)
    if scores.size < 10:
        raise InsufficientDataError(f"insufficient training data: {scores.size} clean scores, need >= 10")
    return float(scores.mean() + sigma_mult * scores.std(ddof=1))


THRESHOLDS_SCHEMA = "switchsound/thresholds"
THRESHOLDS_VERSION = 1


@dataclass(frozen=True)
class Thresholds:
    phase: dict[SwitchingPhase, float] = field(default_factory=dict)
    target: dict[MalfunctionKind, float] = field(default_factory=dict)
    sigma_mult: float = 3.0

    @classmethod
    def calibrate(cls, reports: Sequence[AnomalyReport], sigma_mult: float = 3.0) -> "Thresholds":
        phases = sorted({p for r in reports for p in r.phase_scores})
        targets = list(dict.fromkeys(t for r in reports for t in r.targets))
        return cls(
            phase={p: calibrate_threshold([r.phase_scores[p] for r in reports], sigma_mult) for p in phases},
            target={t: calibrate_threshold([r.targets[t].score for r in reports], sigma_mult) for t in targets},
            sigma_mult=sigma_mult,
        )

    def to_json(self) -> str:
        return json.dumps({
            "schema": THRESHOLDS_SCHEMA,
            "version": THRESHOLDS_VERSION,
            "sigma_mult": self.sigma_mult,
            "phase": {p.name: v for p, v in self.phase.items()},
            "target": {t.value: v for t, v in self.target.items()},
        }, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Thresholds":
        payload = json.loads(text)
        if payload.get("schema") != THRESHOLDS_SCHEMA or payload.get("version") != THRESHOLDS_VERSION:
            raise ValueError(f"not a {THRESHOLDS_SCHEMA} v{THRESHOLDS_VERSION} file")
        return cls(
            phase={SwitchingPhase[k]: float(v) for k, v in payload["phase"].items()},
            target={MalfunctionKind(k): float(v) for k, v in payload["target"].items()},
            sigma_mult=float(payload["sigma_mult"]),
        )


# --- degradation ladders ------------------------------------------------------

LADDER_TARGET = {
    "grease": MalfunctionKind.GreaseInsideDev,
    "adhesion": MalfunctionKind.Adhesion,
    "lock": MalfunctionKind.Lock,
}


@dataclass(frozen=True)
class LadderRow:
    step: int
    event_id: str
    target: MalfunctionKind
    score: float
    threshold: float
    verdict: Verdict
    switching_time_s: float
    switching_failure: bool


@dataclass(frozen=True)
class LadderResult:
    experiment: str
    rows: tuple[LadderRow, ...]

    @property
    def steps(self) -> list[int]:
        return sorted({r.step for r in self.rows})

    def at(self, step: int) -> list[LadderRow]:
        return [r for r in self.rows if r.step == step]

    def median_score(self, step: int) -> float:
        return float(median(r.score for r in self.at(step)))

    def median_switching_time(self, step: int) -> float:
        return float(median(r.switching_time_s for r in self.at(step)))

    @property
    def threshold(self) -> float:
        return self.rows[0].threshold

    def step_verdict(self, step: int) -> Verdict:
        """A step is Anomalous when its median event score exceeds the threshold."""
        return Verdict.Anomalous if self.median_score(step) > self.threshold else Verdict.Normal

    def first_anomalous_step(self) -> Optional[int]:
        """First step, in degradation order, judged Anomalous."""
        for step in self.degradation_order():
            if self.step_verdict(step) is Verdict.Anomalous:
                return step
        return None

    def degradation_order(self) -> list[int]:
        # grease degrades toward fewer pushes
        return sorted(self.steps, reverse=self.experiment == "grease")

    def failure_steps(self) -> list[int]:
        return sorted({r.step for r in self.rows if r.switching_failure})

    def summary(self) -> list[tuple[int, float, float, str, float, int]]:
        """(step, median score, threshold, step verdict, anomalous fraction, failures)."""
        out = []
        for step in self.steps:
            rows = self.at(step)
            frac = sum(r.verdict is Verdict.Anomalous for r in rows) / len(rows)
            out.append((
                step, self.median_score(step), self.threshold, self.step_verdict(step).value,
                frac, sum(r.switching_failure for r in rows),
            ))
        return out


def run_experiment_ladder(
    experiment: str,
    analyze: Callable[[Waveform], SegmentedEvent],
    models: Mapping[SwitchingPhase, NormalModel],
    thresholds: Thresholds,
    per_step: int = 10,
    seed: int = 0,
    cfg: SynthConfig = SynthConfig(),
    profiles: Optional[Sequence[DegradationProfile]] = None,
    matrix: Optional[PhaseMalfunctionMatrix] = None,
) -> LadderResult:
    """Synthesize ``per_step`` events at every ladder step and score the ladder's target.

    Event ``j`` of every step shares one seed, so steps differ only in the
    degradation being swept.
    """
    if experiment not in LADDER_TARGET:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(LADDER_TARGET)}")
    target = LADDER_TARGET[experiment]
    profiles = profiles if profiles is not None else LADDERS[experiment]
    rows = []
    for profile in profiles:
        step = ladder_step_value(experiment, profile)
        for j in range(per_step):
            event_id = f"{experiment}-{step:02d}-{j:03d}"
            wave, truth = generate_event(profile, seed=event_seed(seed, j), cfg=cfg, event_id=event_id)
            report = score_event(analyze(wave), models, matrix, thresholds, targets=(target,))
            res = report.targets[target]
            rows.append(LadderRow(
                step=step, event_id=event_id, target=target, score=res.score,
                threshold=res.threshold, verdict=res.verdict,
                switching_time_s=report.switching_time_s, switching_failure=truth.switching_failure,
            ))
    return LadderResult(experiment=experiment, rows=tuple(rows))
