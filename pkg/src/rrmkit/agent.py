"""Real-time policy execution: exploration, ensemble voting, transitions.

An agent holds the latest policy shipped by the trainer and, per decision
epoch, either explores (epsilon-greedy on a decaying schedule, or Boltzmann
sampling) or exploits by majority vote across the ensemble's per-member
argmax actions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, StalePolicyError
from .nfq import QEnsemble
from .replay import Transition


@dataclass(frozen=True)
class ExplorationSchedule:
    """Exploration probability decaying from epsilon_start to epsilon_end
    over decay_duration seconds of sim time."""

    epsilon_start: float = 0.9
    epsilon_end: float = 0.1
    decay_duration: float = 40.0
    shape: str = "linear"

    def __post_init__(self):
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ValueError(
                f"need 0 <= epsilon_end <= epsilon_start <= 1, got "
                f"({self.epsilon_start}, {self.epsilon_end})")
        if self.decay_duration <= 0:
            raise ValueError(f"decay_duration must be > 0, got {self.decay_duration}")
        if self.shape not in ("linear", "exponential"):
            raise ValueError(f"shape must be linear or exponential, got {self.shape!r}")
        if (self.shape == "exponential" and self.epsilon_start != self.epsilon_end
                and self.epsilon_end <= 0.0):
            raise ValueError("exponential decay needs epsilon_end > 0")


def epsilon_at(schedule: ExplorationSchedule, sim_time: float) -> float:
    """Exploration probability at a given sim time (clamped to the end value)."""
    if sim_time < 0:
        raise ValueError(f"sim_time must be >= 0, got {sim_time}")
    s, e, d = schedule.epsilon_start, schedule.epsilon_end, schedule.decay_duration
    if sim_time >= d or s == e:
        return e
    if schedule.shape == "linear":
        return s - (s - e) * sim_time / d
    # geometric interpolation, reaching epsilon_end exactly at decay_duration
    return s * (e / s) ** (sim_time / d)


@dataclass(frozen=True)
class Policy:
    """Ensemble weights + action labels + exploration schedule, versioned.

    This is the unit the trainer ships to agents; version must strictly
    increase across updates.
    """

    ensemble: QEnsemble
    action_labels: tuple[str, ...]
    schedule: ExplorationSchedule
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "action_labels", tuple(self.action_labels))
        if len(self.action_labels) != self.ensemble.action_count:
            raise ValueError(
                f"{len(self.action_labels)} labels for "
                f"{self.ensemble.action_count} actions")
        if self.version < 0:
            raise ValueError(f"version must be >= 0, got {self.version}")

    @property
    def action_count(self) -> int:
        return self.ensemble.action_count


def greedy_action(policy: Policy, state) -> int:
    """Majority vote over per-member argmax actions.

    Ties on vote count break to the highest ensemble-mean Q, then to the
    lowest action index. Deterministic.
    """
    q = policy.ensemble.q_values(state)
    votes = np.argmax(q, axis=1)
    counts = np.bincount(votes, minlength=policy.action_count)
    candidates = np.flatnonzero(counts == counts.max())
    if len(candidates) == 1:
        return int(candidates[0])
    mean_q = q.mean(axis=0)
    return int(candidates[np.argmax(mean_q[candidates])])


def boltzmann_action(policy: Policy, state, temperature: float,
                     rng: np.random.Generator) -> int:
    """Sample an action with probability proportional to exp(meanQ/temperature)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    mean_q = policy.ensemble.q_values(state).mean(axis=0)
    z = (mean_q - mean_q.max()) / temperature
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(policy.action_count, p=p))


class AgentContext:
    """Per-agent decision state: current policy, RNG, and the open decision.

    Decisions strictly alternate select_action / observe; each observe emits
    the transition that closes the previous decision.
    """

    def __init__(self, agent_id: str, policy: Policy, seed=0):
        self.agent_id = agent_id
        self.policy = policy
        self.rng = np.random.default_rng(seed)
        self.pending: tuple[np.ndarray, int] | None = None

    def select_action(self, state, sim_time: float) -> int:
        """Epsilon-greedy decision; opens a pending (state, action) pair."""
        if self.pending is not None:
            raise ProtocolError(
                f"agent {self.agent_id}: select_action with an open decision "
                "(missing observe)")
        state = np.array(state, dtype=np.float64)
        eps = epsilon_at(self.policy.schedule, sim_time)
        if self.rng.random() < eps:
            action = int(self.rng.integers(self.policy.action_count))
        else:
            action = greedy_action(self.policy, state)
        self.pending = (state, action)
        return action

    def observe(self, reward: float, next_state, terminal: bool,
                sim_time: float) -> Transition:
        """Close the open decision into a Transition."""
        if self.pending is None:
            raise ProtocolError(
                f"agent {self.agent_id}: observe without an open decision")
        state, action = self.pending
        self.pending = None
        return Transition(state=state, action=action, reward=float(reward),
                          next_state=np.array(next_state, dtype=np.float64),
                          terminal=bool(terminal), agent_id=self.agent_id,
                          sim_time=float(sim_time))

    def clear_pending(self) -> None:
        """Drop an open decision without emitting a transition (episode end)."""
        self.pending = None

    def update_policy(self, policy: Policy) -> None:
        """Swap in a newer policy between decision epochs."""
        if policy.version <= self.policy.version:
            raise StalePolicyError(
                f"agent {self.agent_id}: policy version {policy.version} is not "
                f"newer than current {self.policy.version}")
        self.policy = policy


class ScriptedAgent:
    """Fixed-action controller with the AgentContext decision surface.

    Used for hold-only baselines; emits transitions like a real agent so the
    episode runner does not special-case it.
    """

    def __init__(self, agent_id: str, action: int, action_count: int):
        if not 0 <= action < action_count:
            raise ValueError(f"action {action} out of range for {action_count}")
        self.agent_id = agent_id
        self.action = action
        self.action_count = action_count
        self.pending: tuple[np.ndarray, int] | None = None

    def select_action(self, state, sim_time: float) -> int:
        if self.pending is not None:
            raise ProtocolError(
                f"agent {self.agent_id}: select_action with an open decision")
        self.pending = (np.array(state, dtype=np.float64), self.action)
        return self.action

    observe = AgentContext.observe
    clear_pending = AgentContext.clear_pending
