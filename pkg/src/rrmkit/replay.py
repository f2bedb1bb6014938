"""Experience store: transitions collected by agents, merged and persisted.

Transitions are the unit of experience sharing between agents; the store
keeps them in insertion order with optional FIFO eviction, merges across
agents with duplicate dropping, and round-trips exactly through a
JSON-lines format.
"""

import json
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ReplayFormatError


@dataclass(frozen=True)
class Transition:
    """One (state, action, reward, next_state) experience tuple."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False
    agent_id: str = ""
    sim_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "state",
                           np.asarray(self.state, dtype=np.float64))
        object.__setattr__(self, "next_state",
                           np.asarray(self.next_state, dtype=np.float64))
        if self.state.ndim != 1 or self.next_state.ndim != 1:
            raise DimensionError("state and next_state must be 1-D vectors")
        if self.state.shape != self.next_state.shape:
            raise DimensionError(
                f"state dim {self.state.shape[0]} != "
                f"next_state dim {self.next_state.shape[0]}")
        if self.action < 0:
            raise ValueError(f"action index must be >= 0, got {self.action}")
        if not np.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")

    @property
    def key(self) -> tuple[str, float]:
        """Identity used for duplicate dropping during merges."""
        return (self.agent_id, self.sim_time)

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (np.array_equal(self.state, other.state)
                and self.action == other.action
                and self.reward == other.reward
                and np.array_equal(self.next_state, other.next_state)
                and self.terminal == other.terminal
                and self.agent_id == other.agent_id
                and self.sim_time == other.sim_time)


class ReplayStore:
    """Ordered transition store with a fixed feature dimension.

    feature_dim locks to the first inserted transition. Appends from
    multiple agent threads serialize on an internal lock; capacity, when
    set, evicts oldest-first.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError(f"capacity must be >= 1 or None, got {capacity}")
        self.capacity = capacity
        self.feature_dim: int | None = None
        self._items: list[Transition] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self.snapshot())

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def __eq__(self, other):
        if not isinstance(other, ReplayStore):
            return NotImplemented
        return self._items == other._items

    def append(self, t: Transition) -> None:
        """Add one transition; evicts the oldest when at capacity."""
        dim = t.state.shape[0]
        with self._lock:
            if self.feature_dim is None:
                self.feature_dim = dim
            elif dim != self.feature_dim:
                raise DimensionError(
                    f"transition has {dim}-dim state, store holds "
                    f"{self.feature_dim}-dim states")
            self._items.append(t)
            if self.capacity is not None and len(self._items) > self.capacity:
                del self._items[0]

    def extend(self, transitions) -> None:
        for t in transitions:
            self.append(t)

    def snapshot(self) -> list[Transition]:
        """Consistent copy of the contents for training reads."""
        with self._lock:
            return list(self._items)

    def states(self) -> np.ndarray:
        """All states stacked into an (n, feature_dim) array."""
        items = self.snapshot()
        if not items:
            return np.empty((0, 0))
        return np.stack([t.state for t in items])


def merge(a: ReplayStore, b: ReplayStore) -> ReplayStore:
    """Combine two stores into a new one ordered by (sim_time, agent_id).

    Duplicate (agent_id, sim_time) pairs count as the same experience and
    are kept once, so re-sharing data is idempotent.
    """
    if (a.feature_dim is not None and b.feature_dim is not None
            and a.feature_dim != b.feature_dim):
        raise DimensionError(
            f"cannot merge stores with feature dims {a.feature_dim} and "
            f"{b.feature_dim}")
    seen = {}
    for t in list(a.snapshot()) + list(b.snapshot()):
        seen.setdefault(t.key, t)
    out = ReplayStore(capacity=None)
    for t in sorted(seen.values(), key=lambda t: (t.sim_time, t.agent_id)):
        out.append(t)
    if out.feature_dim is None:
        out.feature_dim = a.feature_dim if a.feature_dim is not None else b.feature_dim
    return out


def sample(store: ReplayStore, n: int, seed: int) -> list[Transition]:
    """Draw n distinct transitions uniformly without replacement."""
    items = store.snapshot()
    if n > len(items):
        raise ValueError(f"cannot sample {n} from a store of size {len(items)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(items), size=n, replace=False)
    return [items[i] for i in idx]


def persist(store: ReplayStore) -> bytes:
    """Serialize to JSON-lines. Floats keep full round-trip precision."""
    lines = []
    for t in store.snapshot():
        lines.append(json.dumps({
            "state": t.state.tolist(),
            "action": int(t.action),
            "reward": float(t.reward),
            "next_state": t.next_state.tolist(),
            "terminal": bool(t.terminal),
            "agent_id": t.agent_id,
            "sim_time": float(t.sim_time),
        }))
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


_FIELDS = {"state", "action", "reward", "next_state", "terminal",
           "agent_id", "sim_time"}


def load(data: bytes, capacity: int | None = None) -> ReplayStore:
    """Parse a JSON-lines stream produced by persist().

    Raises ReplayFormatError carrying the 1-based line number of the first
    malformed record.
    """
    store = ReplayStore(capacity=capacity)
    for lineno, line in enumerate(data.decode().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ReplayFormatError(f"line {lineno}: invalid JSON ({e.msg})",
                                    line=lineno) from None
        if not isinstance(rec, dict) or set(rec) != _FIELDS:
            raise ReplayFormatError(
                f"line {lineno}: record fields {sorted(rec) if isinstance(rec, dict) else type(rec).__name__} "
                f"do not match the transition schema", line=lineno)
        try:
            store.append(Transition(
                state=np.asarray(rec["state"], dtype=np.float64),
                action=int(rec["action"]),
                reward=float(rec["reward"]),
                next_state=np.asarray(rec["next_state"], dtype=np.float64),
                terminal=bool(rec["terminal"]),
                agent_id=str(rec["agent_id"]),
                sim_time=float(rec["sim_time"]),
            ))
        except (TypeError, ValueError, DimensionError) as e:
            raise ReplayFormatError(f"line {lineno}: {e}", line=lineno) from None
    return store
