"""Fitted Q-iteration over an ensemble of independently trained networks.

The trainer repeatedly regresses each ensemble member onto Bellman targets
built from that member's own previous iterate, then packages the trained
ensemble (with its frozen input normalizer and exploration schedule) as a
self-contained policy artifact.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .approximator import (FitConfig, NetConfig, NetworkWeights, Normalizer,
                           _ACT_IDS, fit, forward, init_weights)
from .errors import DimensionError, DivergenceError, EmptyBatchError
from .replay import ReplayStore, Transition


@dataclass(frozen=True)
class TrainerConfig:
    """Outer/inner loop hyperparameters and the ensemble architecture."""

    gamma: float = 0.9
    q_iterations: int = 20
    fit: FitConfig = field(default_factory=FitConfig)
    ensemble_specs: tuple[NetConfig, ...] = ()
    target_clip: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ensemble_specs", tuple(self.ensemble_specs))
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.q_iterations < 1:
            raise ValueError(f"q_iterations must be >= 1, got {self.q_iterations}")
        if not self.ensemble_specs:
            raise ValueError("ensemble_specs must be non-empty")
        dims = {(s.input_dim, s.output_dim) for s in self.ensemble_specs}
        if len(dims) != 1:
            raise DimensionError(
                f"ensemble members disagree on (input_dim, output_dim): {dims}")
        if self.target_clip is not None and self.target_clip[0] > self.target_clip[1]:
            raise ValueError(f"target_clip low > high: {self.target_clip}")


def default_ensemble_specs(input_dim: int, action_count: int,
                           base_seed: int = 0) -> tuple[NetConfig, ...]:
    """Five members with distinct shapes and seeds."""
    shapes = ((16,), (32,), (16, 16), (32, 16), (64,))
    return tuple(
        NetConfig(input_dim, shape, action_count, activation="tanh",
                  seed=base_seed + i)
        for i, shape in enumerate(shapes))


@dataclass(frozen=True)
class EnsembleMember:
    config: NetConfig
    weights: NetworkWeights


@dataclass
class QEnsemble:
    """Trained ensemble: member nets, the shared input normalizer, action count.

    training_log rows are (member, q_iteration, epoch, mse) for every inner
    epoch, in training order.
    """

    members: list[EnsembleMember]
    normalizer: Normalizer
    action_count: int
    training_log: list[tuple[int, int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble must have at least one member")
        for i, m in enumerate(self.members):
            if m.weights.input_dim != self.normalizer.dim:
                raise DimensionError(
                    f"member {i} input_dim {m.weights.input_dim} != "
                    f"normalizer dim {self.normalizer.dim}")
            if m.weights.output_dim != self.action_count:
                raise DimensionError(
                    f"member {i} output_dim {m.weights.output_dim} != "
                    f"action_count {self.action_count}")

    @property
    def input_dim(self) -> int:
        return self.normalizer.dim

    def q_values(self, state) -> np.ndarray:
        """(n_members, action_count) Q-matrix for one raw state."""
        x = self.normalizer.normalize(np.asarray(state, dtype=np.float64))
        return np.stack([forward(m.weights, x) for m in self.members])

    def final_losses(self) -> np.ndarray:
        """(n_members, q_iterations) final inner-loop loss per outer iteration."""
        if not self.training_log:
            return np.empty((len(self.members), 0))
        n_iter = max(row[1] for row in self.training_log) + 1
        out = np.full((len(self.members), n_iter), np.nan)
        for member, q_iter, _epoch, mse in self.training_log:
            out[member, q_iter] = mse
        return out

    def __eq__(self, other):
        if not isinstance(other, QEnsemble):
            return NotImplemented
        return (self.action_count == other.action_count
                and self.normalizer.method == other.normalizer.method
                and np.array_equal(self.normalizer.shift, other.normalizer.shift)
                and np.array_equal(self.normalizer.scale, other.normalizer.scale)
                and len(self.members) == len(other.members)
                and all(a.weights == b.weights
                        for a, b in zip(self.members, other.members)))


def q_max(weights: NetworkWeights, state, normalizer: Normalizer | None = None) -> float:
    """Highest Q-value of one net at a (raw) state."""
    x = np.asarray(state, dtype=np.float64)
    if normalizer is not None:
        x = normalizer.normalize(x)
    return float(np.max(forward(weights, x)))


def _transition_arrays(transitions):
    states = np.stack([t.state for t in transitions])
    next_states = np.stack([t.next_state for t in transitions])
    actions = np.array([t.action for t in transitions], dtype=np.int64)
    rewards = np.array([t.reward for t in transitions], dtype=np.float64)
    terminal = np.array([t.terminal for t in transitions], dtype=bool)
    return states, actions, rewards, next_states, terminal


def _targets_from_arrays(weights, norm, actions, rewards, next_states_n,
                         terminal, gamma, target_clip, action_count):
    n = rewards.shape[0]
    if gamma == 0.0:
        vals = rewards.copy()
    else:
        out = _kernels.net_forward(weights.to_flat(), weights.dims,
                                   _ACT_IDS[weights.activation], next_states_n)
        boot = gamma * out.max(axis=1)
        # picking `rewards` directly keeps gamma=0 / terminal targets bitwise
        vals = np.where(terminal, rewards, rewards + boot)
    if target_clip is not None:
        vals = np.clip(vals, target_clip[0], target_clip[1])
    targets = np.zeros((n, action_count))
    masks = np.zeros((n, action_count))
    rows = np.arange(n)
    targets[rows, actions] = vals
    masks[rows, actions] = 1.0
    return targets, masks


def build_targets(weights: NetworkWeights, transitions, gamma: float,
                  normalizer: Normalizer | None = None,
                  target_clip: tuple[float, float] | None = None):
    """Bellman regression dataset for one member's previous iterate.

    Returns (states, targets, masks). The masked target at the taken action
    is r + gamma * max_a Q(next_state, a), or r alone for terminal
    transitions; all other outputs are masked out of the loss.
    """
    transitions = list(transitions)
    if not transitions:
        raise EmptyBatchError("no transitions to build targets from")
    states, actions, rewards, next_states, terminal = _transition_arrays(transitions)
    if np.max(actions) >= weights.output_dim:
        raise DimensionError(
            f"action index {np.max(actions)} out of range for "
            f"{weights.output_dim} actions")
    nx = normalizer.normalize(next_states) if normalizer is not None else next_states
    targets, masks = _targets_from_arrays(
        weights, normalizer, actions, rewards, np.ascontiguousarray(nx),
        terminal, gamma, target_clip, weights.output_dim)
    return states, targets, masks


def _train_member(member_idx, spec, fit_cfg, arrays, normalizer, gamma,
                  target_clip, q_iterations, log):
    states_n, actions, rewards, next_states_n, terminal = arrays
    weights = init_weights(spec)
    for k in range(q_iterations):
        targets, masks = _targets_from_arrays(
            weights, normalizer, actions, rewards, next_states_n, terminal,
            gamma, target_clip, spec.output_dim)
        try:
            weights, losses = fit(weights, states_n, targets, masks, fit_cfg)
        except DivergenceError as e:
            raise DivergenceError(
                f"member {member_idx}, Q-iteration {k}: {e}", epoch=e.epoch) from None
        for epoch, mse in enumerate(losses):
            log.append((member_idx, k, epoch, float(mse)))
    return weights


def nfq_train(store: ReplayStore, config: TrainerConfig) -> QEnsemble:
    """Run fitted Q-iteration for every ensemble member independently.

    The input normalizer is fitted on the store's states and frozen into
    the result. Each member bootstraps only from its own previous iterate.
    If a member diverges and no explicit target clip is configured, that
    member retries once with a symmetric clip at 10*max|r|/(1-gamma).
    """
    transitions = store.snapshot()
    if not transitions:
        raise EmptyBatchError("replay store is empty")
    states, actions, rewards, next_states, terminal = _transition_arrays(transitions)
    input_dim = states.shape[1]
    action_count = config.ensemble_specs[0].output_dim
    if input_dim != config.ensemble_specs[0].input_dim:
        raise DimensionError(
            f"store feature_dim {input_dim} != ensemble input_dim "
            f"{config.ensemble_specs[0].input_dim}")
    if np.max(actions) >= action_count:
        raise DimensionError(
            f"action index {np.max(actions)} out of range for "
            f"{action_count} actions")

    normalizer = Normalizer.fit(states)
    arrays = (np.ascontiguousarray(normalizer.normalize(states)), actions,
              rewards, np.ascontiguousarray(normalizer.normalize(next_states)),
              terminal)

    log: list[tuple[int, int, int, float]] = []
    members = []
    for i, spec in enumerate(config.ensemble_specs):
        fit_cfg = replace(config.fit, seed=spec.seed)
        try:
            w = _train_member(i, spec, fit_cfg, arrays, normalizer, config.gamma,
                              config.target_clip, config.q_iterations, log)
        except DivergenceError:
            if config.target_clip is not None:
                raise
            bound = 10.0 * float(np.max(np.abs(rewards))) / (1.0 - config.gamma)
            w = _train_member(i, spec, fit_cfg, arrays, normalizer, config.gamma,
                              (-bound, bound), config.q_iterations, log)
        members.append(EnsembleMember(spec, w))
    return QEnsemble(members, normalizer, action_count, log)


def package_policy(ensemble: QEnsemble, schedule, action_labels,
                   version: int = 1):
    """Bundle an ensemble into the self-contained policy artifact."""
    from .agent import Policy

    labels = tuple(action_labels)
    if not labels:
        raise ValueError("action_labels must be non-empty")
    if len(labels) != ensemble.action_count:
        raise DimensionError(
            f"{len(labels)} labels for {ensemble.action_count} actions")
    return Policy(ensemble=ensemble, action_labels=labels,
                  schedule=schedule, version=version)
