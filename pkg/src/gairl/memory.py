"""Experience stores: prioritized replay for the agent and the dual
train/test memory with terminal oversampling used for imagination training."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    """One experience tuple in normalized coordinates.

    `n_steps` is the aggregation horizon: 1 for raw environment transitions,
    k for a k-step return record (the bootstrap discount is gamma**n_steps).
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    n_steps: int = 1


@dataclass
class TransitionBatch:
    """Column-wise view of a set of transitions."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    n_steps: np.ndarray

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i], bool(self.terminals[i]), int(self.n_steps[i]))


class _Columns:
    """Fixed-capacity ring of transition columns with oldest-first eviction."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.n_steps = np.ones(capacity, dtype=np.int64)
        self.count = 0
        self._next = 0

    def __len__(self):
        return self.count

    def put(self, t: Transition) -> int:
        idx = self._next
        self.states[idx] = t.state
        self.actions[idx] = t.action
        self.rewards[idx] = t.reward
        self.next_states[idx] = t.next_state
        self.terminals[idx] = t.terminal
        self.n_steps[idx] = t.n_steps
        self._next = (self._next + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return idx

    def select(self, idx) -> TransitionBatch:
        return TransitionBatch(self.states[idx], self.actions[idx], self.rewards[idx],
                               self.next_states[idx], self.terminals[idx], self.n_steps[idx])

    def get(self, i: int) -> Transition:
        return Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.terminals[i]),
                          int(self.n_steps[i]))


class SumTree:
    """Array-backed binary sum tree over leaf priorities.

    Parent sums are recomputed lazily (level-wise, vectorized) before any
    query, which keeps batch updates cheap and the root exactly equal to the
    sum of the leaves.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._leaf_base = size
        self._tree = np.zeros(2 * size)
        self._dirty = False

    @property
    def leaves(self) -> np.ndarray:
        return self._tree[self._leaf_base:self._leaf_base + self.capacity]

    def set(self, indices, values):
        self._tree[np.asarray(indices) + self._leaf_base] = values
        self._dirty = True

    def _refresh(self):
        if not self._dirty:
            return
        t = self._tree
        n = self._leaf_base
        while n > 1:
            lo, hi = n // 2, n
            children = t[2 * lo:4 * lo]
            t[lo:hi] = children[0::2] + children[1::2]
            n //= 2
        self._dirty = False

    def total(self) -> float:
        self._refresh()
        return float(self._tree[1])

    def find(self, values) -> np.ndarray:
        """Vectorized descent: leaf index whose cumulative interval holds each value."""
        self._refresh()
        v = np.asarray(values, dtype=np.float64).copy()
        idx = np.ones(len(v), dtype=np.int64)
        while idx[0] < self._leaf_base:
            left = 2 * idx
            left_sum = self._tree[left]
            go_right = v > left_sum
            v -= np.where(go_right, left_sum, 0.0)
            idx = np.where(go_right, left + 1, left)
        return idx - self._leaf_base


class PrioritizedBuffer:
    """Proportional prioritized replay: P(i) = p_i^alpha / sum_j p_j^alpha.

    New items enter at the running maximum priority so each is replayed at
    least once; importance weights anneal with beta from `beta_start` to 1
    linearly over `beta_decay_steps` global steps.
    """

    def __init__(self, capacity: int, state_dim: int, *, alpha: float = 0.6,
                 epsilon: float = 1e-5, beta_start: float = 0.4,
                 beta_decay_steps: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.alpha = alpha
        self.epsilon = epsilon
        self.beta_start = beta_start
        self.beta_decay_steps = beta_decay_steps
        self.max_priority = 1.0
        self._tree = SumTree(capacity)
        self._data = _Columns(capacity, state_dim)
        self._priorities = np.zeros(capacity)

    def __len__(self):
        return len(self._data)

    def beta(self, global_step: int) -> float:
        frac = min(1.0, max(0.0, global_step / self.beta_decay_steps))
        return self.beta_start + (1.0 - self.beta_start) * frac

    def push(self, t: Transition):
        idx = self._data.put(t)
        self._priorities[idx] = self.max_priority
        self._tree.set(idx, self.max_priority ** self.alpha)

    def sample(self, batch_size: int, global_step: int, rng: np.random.Generator):
        """Stratified proportional sample; returns (batch, weights, indices)."""
        count = len(self)
        if count < batch_size:
            raise ValueError(f"buffer holds {count} < batch size {batch_size}")
        total = self._tree.total()
        targets = (np.arange(batch_size) + rng.random(batch_size)) / batch_size * total
        idx = self._tree.find(np.minimum(targets, np.nextafter(total, 0.0)))
        idx = np.minimum(idx, count - 1)
        probs = self._tree.leaves[idx] / total
        weights = (count * probs) ** (-self.beta(global_step))
        weights /= weights.max()
        return self._data.select(idx), weights, idx

    def update_priorities(self, indices, magnitudes):
        indices = np.asarray(indices)
        if np.any(indices < 0) or np.any(indices >= len(self)):
            raise IndexError("priority update index out of range")
        p = np.abs(np.asarray(magnitudes, dtype=np.float64)) + self.epsilon
        self._priorities[indices] = p
        self._tree.set(indices, p ** self.alpha)
        self.max_priority = max(self.max_priority, float(p.max()))

    # test hooks
    def priority_total(self) -> float:
        return self._tree.total()

    def leaf_priorities(self) -> np.ndarray:
        return self._tree.leaves[:len(self)].copy()

    def priorities(self) -> np.ndarray:
        return self._priorities[:len(self)].copy()


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


class GairlMemory:
    """Dual train/test transition store feeding imagination training.

    Each incoming transition lands in the train store with probability
    `train_fraction`, else in the test store. When an episode completes, its
    terminal transition is additionally replicated round(mean episode length)
    times, every replica independently assigned; this counters the extreme
    terminal/non-terminal class imbalance in the reward data.
    """

    def __init__(self, capacity: int, state_dim: int, rng: np.random.Generator, *,
                 train_fraction: float = 0.8, oversample_terminals: bool = True):
        if not 0.0 < train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        self.capacity = capacity
        self.train_fraction = train_fraction
        self.oversample_terminals = oversample_terminals
        self._rng = rng
        self.train = _Columns(int(round(capacity * train_fraction)), state_dim)
        self.test = _Columns(capacity - self.train.capacity, state_dim)
        self._episode_steps = 0
        self._episode_count = 0
        self._episode_length_sum = 0

    @property
    def mean_episode_length(self) -> float | None:
        if self._episode_count == 0:
            return None
        return self._episode_length_sum / self._episode_count

    def _assign(self, t: Transition):
        store = self.train if self._rng.random() < self.train_fraction else self.test
        store.put(t)

    def store(self, t: Transition):
        self._episode_steps += 1
        copies = 1
        if t.terminal:
            self._episode_count += 1
            self._episode_length_sum += self._episode_steps
            self._episode_steps = 0
            if self.oversample_terminals:
                copies += round_half_up(self.mean_episode_length)
        for _ in range(copies):
            self._assign(t)

    def note_truncation(self):
        """An episode ended without reaching the goal; it contributes no
        completed length."""
        self._episode_steps = 0

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform i.i.d. draws (with replacement) from the train store."""
        if len(self.train) == 0:
            raise ValueError("train store is empty")
        idx = rng.integers(0, len(self.train), size=batch_size)
        return self.train.select(idx)

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        """The state field of a uniformly drawn non-terminal train transition."""
        n = len(self.train)
        if n == 0:
            raise ValueError("train store is empty")
        for _ in range(10_000):
            i = int(rng.integers(0, n))
            if not self.train.terminals[i]:
                return self.train.states[i].copy()
        nonterminal = np.flatnonzero(~self.train.terminals[:n])
        if len(nonterminal) == 0:
            raise ValueError("train store holds only terminal transitions")
        return self.train.states[int(rng.choice(nonterminal))].copy()


# --- flat record dump --------------------------------------------------------
#
# Record layout per transition: d float64 (state), 1 int64 (action),
# 1 float64 (reward), d float64 (next state), 1 uint8 (terminal flag).

_DUMP_MAGIC = b"GRLM1\n"


def dump_transitions(path, batch: TransitionBatch):
    d = batch.states.shape[1]
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<II", d, len(batch)))
        for i in range(len(batch)):
            fh.write(np.ascontiguousarray(batch.states[i], dtype="<f8").tobytes())
            fh.write(struct.pack("<q", int(batch.actions[i])))
            fh.write(struct.pack("<d", float(batch.rewards[i])))
            fh.write(np.ascontiguousarray(batch.next_states[i], dtype="<f8").tobytes())
            fh.write(struct.pack("<B", int(batch.terminals[i])))


def load_transitions(path) -> TransitionBatch:
    with open(path, "rb") as fh:
        if fh.read(len(_DUMP_MAGIC)) != _DUMP_MAGIC:
            raise ValueError(f"{path} is not a transition dump")
        d, n = struct.unpack("<II", fh.read(8))
        states = np.zeros((n, d))
        actions = np.zeros(n, dtype=np.int64)
        rewards = np.zeros(n)
        next_states = np.zeros((n, d))
        terminals = np.zeros(n, dtype=bool)
        for i in range(n):
            states[i] = np.frombuffer(fh.read(8 * d), dtype="<f8")
            (actions[i],) = struct.unpack("<q", fh.read(8))
            (rewards[i],) = struct.unpack("<d", fh.read(8))
            next_states[i] = np.frombuffer(fh.read(8 * d), dtype="<f8")
            (flag,) = struct.unpack("<B", fh.read(1))
            terminals[i] = bool(flag)
    return TransitionBatch(states, actions, rewards, next_states, terminals,
                           np.ones(n, dtype=np.int64))


def memory_snapshot(mem: GairlMemory) -> TransitionBatch:
    """All stored transitions (train then test) as one batch."""
    idx_train = np.arange(len(mem.train))
    idx_test = np.arange(len(mem.test))
    a, b = mem.train.select(idx_train), mem.test.select(idx_test)
    return TransitionBatch(
        np.concatenate([a.states, b.states]),
        np.concatenate([a.actions, b.actions]),
        np.concatenate([a.rewards, b.rewards]),
        np.concatenate([a.next_states, b.next_states]),
        np.concatenate([a.terminals, b.terminals]),
        np.concatenate([a.n_steps, b.n_steps]),
    )


def fill_memory_from_batch(mem: GairlMemory, batch: TransitionBatch):
    """Re-split a dumped batch into a fresh memory (assignment uses mem's rng)."""
    for i in range(len(batch)):
        mem._assign(batch[i])
