"""Proportional prioritized experience replay.

Slots live in a ring of fixed capacity. Each slot's sampling mass is
``priority ** alpha``; masses are kept in a sum tree so that sampling and
updates cost O(log N). :func:`linear_sample_indices` is the plain
cumulative-sum inversion the tree must agree with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SumTree", "PrioritizedBuffer", "SampledBatch", "anneal_beta", "linear_sample_indices"]


class SumTree:
    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        leaves = 1
        while leaves < self.capacity:
            leaves *= 2
        self.leaves = leaves
        self.tree = np.zeros(2 * leaves)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def get(self, idx):
        return self.tree[self.leaves + np.asarray(idx)]

    def set(self, idx, values) -> None:
        if np.ndim(idx) == 0:
            self._set_one(int(idx), float(values))
            return
        idx = np.asarray(idx, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        tree = self.tree
        nodes = idx + self.leaves
        tree[nodes] = values
        # duplicate parents just recompute the same sum
        nodes = nodes // 2
        while nodes[0] >= 1:
            tree[nodes] = tree[2 * nodes] + tree[2 * nodes + 1]
            nodes = nodes // 2

    def _set_one(self, i: int, value: float) -> None:
        tree = self.tree
        node = i + self.leaves
        tree[node] = value
        node //= 2
        while node >= 1:
            tree[node] = tree[2 * node] + tree[2 * node + 1]
            node //= 2

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative interval contains each ``mass``."""
        mass = np.array(mass, dtype=float)
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self.leaves:
            left = 2 * node
            lv = self.tree[left]
            right = mass >= lv
            mass = np.where(right, mass - lv, mass)
            node = np.where(right, left + 1, left)
        return node - self.leaves


def linear_sample_indices(masses: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Reference inversion: smallest ``i`` with ``cumsum(masses)[i] > u``."""
    cum = np.cumsum(masses)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(masses) - 1)


@dataclass
class SampledBatch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    is_weights: np.ndarray
    probabilities: np.ndarray

    def __len__(self):
        return len(self.indices)


class PrioritizedBuffer:
    def __init__(self, capacity: int = 100_000, state_dim: int = 2, alpha: float = 0.6,
                 epsilon: float = 1e-3, initial_max_priority: float = 1.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.epsilon = float(epsilon)
        self.max_priority = float(initial_max_priority)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def insert(self, state, action, reward, next_state, done=False, priority=None) -> int:
        """Store one transition, overwriting the oldest slot when full.

        ``priority=None`` uses the highest priority seen so far; an explicit
        value is floored by ``epsilon`` (stored as ``priority + epsilon``).
        Returns the slot index.
        """
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        if priority is None:
            p = self.max_priority
        else:
            p = abs(float(priority)) + self.epsilon
            self.max_priority = max(self.max_priority, p)
        self.priorities[i] = p
        self.tree.set(i, p**self.alpha)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def _set_priority(self, idx, p):
        self.priorities[idx] = p
        self.tree.set(idx, p**self.alpha)

    def probabilities(self) -> np.ndarray:
        masses = self.priorities[:self.size] ** self.alpha
        return masses / masses.sum()

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> SampledBatch:
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} stored transitions")
        total = self.tree.total
        u = rng.uniform(0.0, total, batch_size)
        u = np.minimum(u, np.nextafter(total, 0.0))
        idx = self.tree.find(u)
        bad = (idx >= self.size) | (self.priorities[np.minimum(idx, self.capacity - 1)] <= 0)
        if np.any(bad):
            # rounding at an interval edge; fall back to the linear scan
            masses = self.priorities[:self.size] ** self.alpha
            idx[bad] = linear_sample_indices(masses, u[bad] * masses.sum() / total)
        probs = self.tree.get(idx) / total
        w = (1.0 / (self.size * probs)) ** beta
        w /= w.max()
        return SampledBatch(idx, self.states[idx], self.actions[idx], self.rewards[idx],
                            self.next_states[idx], self.dones[idx], w, probs)

    def update_priorities(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.size):
            raise IndexError("priority update outside the occupied slots")
        p = np.abs(np.asarray(td_errors, dtype=float)) + self.epsilon
        if not np.all(np.isfinite(p)):
            raise FloatingPointError("non-finite TD error")
        # duplicates in a batch: the last write wins, like sequential updates
        self._set_priority(indices, p)
        self.max_priority = max(self.max_priority, float(p.max(initial=0.0)))


def anneal_beta(step: int, total_steps: int, beta0: float) -> float:
    """Linear schedule from ``beta0`` at step 0 to 1 at ``total_steps``."""
    if total_steps <= 0:
        return 1.0
    frac = min(max(step / total_steps, 0.0), 1.0)
    return beta0 + (1.0 - beta0) * frac
