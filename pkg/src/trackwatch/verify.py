"""Q-learning severity agent: scores anomalies, picks an action, and
learns from operator agree/disagree feedback.

Each verification is a one-step episode: there is no state transition
between anomalies, so the action-value update reduces to
Q <- Q + alpha * (r - Q). The discount factor stays in the
hyperparameters for future multi-step chains but is unused here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .detect import AnomalyEvent

QTABLE_MAGIC = "twql1"


class SeverityState(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def index(self) -> int:
        return _STATES.index(self)


class VerifierAction(str, Enum):
    CONFIRM = "Confirm"
    REJECT = "Reject"
    REQUEST_INFO = "RequestInfo"

    @property
    def index(self) -> int:
        return _ACTIONS.index(self)


_STATES = [SeverityState.LOW, SeverityState.MEDIUM, SeverityState.HIGH]
_ACTIONS = [VerifierAction.CONFIRM, VerifierAction.REJECT, VerifierAction.REQUEST_INFO]


class FeedbackVerdict(str, Enum):
    AGREE = "Agree"
    DISAGREE = "Disagree"


@dataclass(frozen=True)
class FeedbackSignal:
    verdict: FeedbackVerdict
    note: str | None = None
    operator: str = ""


@dataclass(frozen=True)
class QHyper:
    alpha: float = 0.1
    gamma: float = 0.9  # unused under one-step episodes, kept for chaining
    epsilon: float = 0.1
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.01
    reward_correct: float = 1.0
    reward_incorrect: float = -1.0
    reward_request_info: float = -0.1
    wind_cutoff: float = 25.0
    rain_cutoff: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")


@dataclass
class QTable:
    """3x3 action values (severity state x action) with visit counts."""

    q: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    visits: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))
    epsilon: float = 0.1

    @classmethod
    def fresh(cls, hyper: QHyper) -> "QTable":
        return cls(epsilon=hyper.epsilon)

    def to_dict(self) -> dict:
        return {
            "magic": QTABLE_MAGIC,
            "q": self.q.tolist(),
            "visits": self.visits.tolist(),
            "epsilon": self.epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "QTable":
        if doc.get("magic") not in (None, QTABLE_MAGIC):
            raise ValueError("not an action-value table document")
        return cls(
            q=np.array(doc["q"], dtype=np.float64),
            visits=np.array(doc["visits"], dtype=np.int64),
            epsilon=float(doc["epsilon"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "QTable":
        return cls.from_dict(json.loads(text))


def severity_of(event: AnomalyEvent, hyper: QHyper | None = None) -> SeverityState:
    """Point-based rubric over threshold ratio, wind, and rain.

    ratio >= 3 earns 2 points, >= 1.5 earns 1; wind above the cutoff and
    a set rain flag add one each. <=1 -> Low, 2 -> Medium, >=3 -> High.
    """
    hyper = hyper or QHyper()
    ratio = event.error / event.threshold if event.threshold > 0 else float("inf")
    points = 2 if ratio >= 3.0 else (1 if ratio >= 1.5 else 0)
    if event.context.wind is not None and event.context.wind > hyper.wind_cutoff:
        points += 1
    if event.context.rain is not None and event.context.rain > hyper.rain_cutoff:
        points += 1
    if points <= 1:
        return SeverityState.LOW
    if points == 2:
        return SeverityState.MEDIUM
    return SeverityState.HIGH


def choose_action(
    qtable: QTable,
    state: SeverityState,
    hyper: QHyper,
    rng: np.random.Generator,
    allowed: tuple[VerifierAction, ...] = tuple(_ACTIONS),
) -> VerifierAction:
    """Epsilon-greedy over the state's row; ties break toward the lowest
    action index (Confirm < Reject < RequestInfo)."""
    if rng.random() < qtable.epsilon:
        return allowed[int(rng.integers(len(allowed)))]
    row = qtable.q[state.index]
    best = max(allowed, key=lambda a: (row[a.index], -a.index))
    return best


def reward_of(action: VerifierAction, feedback: FeedbackSignal, hyper: QHyper | None = None) -> float:
    hyper = hyper or QHyper()
    if action is VerifierAction.REQUEST_INFO:
        return hyper.reward_request_info
    if feedback.verdict is FeedbackVerdict.AGREE:
        return hyper.reward_correct
    return hyper.reward_incorrect


def apply_feedback(
    qtable: QTable,
    state: SeverityState,
    action: VerifierAction,
    feedback: FeedbackSignal,
    hyper: QHyper,
) -> QTable:
    """One-step episodic update of a single cell; decays epsilon."""
    r = reward_of(action, feedback, hyper)
    s, a = state.index, action.index
    qtable.q[s, a] += hyper.alpha * (r - qtable.q[s, a])
    qtable.visits[s, a] += 1
    qtable.epsilon = max(hyper.epsilon_floor, qtable.epsilon * hyper.epsilon_decay)
    return qtable


def resolve_status(action: VerifierAction, verdict: FeedbackVerdict) -> str:
    """Final event status implied by the agent's call and the operator's verdict."""
    from .detect import EventStatus

    if action is VerifierAction.CONFIRM:
        return (
            EventStatus.CONFIRMED if verdict is FeedbackVerdict.AGREE else EventStatus.REJECTED
        ).value
    if action is VerifierAction.REJECT:
        return (
            EventStatus.REJECTED if verdict is FeedbackVerdict.AGREE else EventStatus.CONFIRMED
        ).value
    return EventStatus.INFO_REQUESTED.value
