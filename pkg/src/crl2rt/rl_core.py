"""Cost signal, replay storage and the on-policy deterministic actor-critic."""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import LionState, Network, lion_update

__all__ = [
    "ACTION_DIM",
    "STATE_DIM",
    "ReplayBuffer",
    "RewardSpec",
    "Source",
    "TrainerHyper",
    "Transition",
    "actor_update",
    "critic_update",
    "estimate_delta_q",
    "estimate_qbar",
    "policy_action",
    "policy_gradient",
    "reward",
    "td_error",
]

STATE_DIM = 80
ACTION_DIM = 4


@dataclass(frozen=True)
class RewardSpec:
    lam: float = 1.0 / (2.0 * math.pi)

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


def reward(errors, spec: RewardSpec = RewardSpec()) -> float:
    """Scaled sum of absolute tracking errors, clipped to [0, 1]; lower is better."""
    return float(min(max(spec.lam * float(np.sum(np.abs(errors))), 0.0), 1.0))


def td_error(r, gamma, q_next, q):
    return r + gamma * q_next - q


class Source(enum.IntEnum):
    CLASSICAL = 0
    RL = 1
    COMPOSER = 2


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    next_action: np.ndarray
    source: Source = Source.RL

    def to_json(self) -> dict:
        return {
            "state": [float(v) for v in self.state],
            "action": [float(v) for v in self.action],
            "reward": float(self.reward),
            "next_state": [float(v) for v in self.next_state],
            "next_action": [float(v) for v in self.next_action],
            "source": Source(self.source).name.lower(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Transition:
        return cls(
            np.asarray(obj["state"], dtype=np.float32),
            np.asarray(obj["action"], dtype=np.float32),
            float(obj["reward"]),
            np.asarray(obj["next_state"], dtype=np.float32),
            np.asarray(obj["next_action"], dtype=np.float32),
            Source[obj["source"].upper()],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and np.float32(self.reward) == np.float32(other.reward)
            and np.array_equal(self.next_state, other.next_state)
            and np.array_equal(self.next_action, other.next_action)
            and int(self.source) == int(other.source)
        )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise as float32."""

    def __init__(self, capacity: int = 2000, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), np.float32)
        self.actions = np.zeros((capacity, action_dim), np.float32)
        self.rewards = np.zeros(capacity, np.float32)
        self.next_states = np.zeros((capacity, state_dim), np.float32)
        self.next_actions = np.zeros((capacity, action_dim), np.float32)
        self.sources = np.zeros(capacity, np.uint8)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, tr: Transition) -> None:
        i = self.inserted % self.capacity
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.next_actions[i] = tr.next_action
        self.sources[i] = int(tr.source)
        self.inserted += 1

    def extend(self, transitions: Iterable[Transition]) -> None:
        for tr in transitions:
            self.add(tr)

    def _ordered_indices(self) -> np.ndarray:
        n = len(self)
        start = self.inserted - n
        return np.arange(start, self.inserted) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [self._get(i) for i in self._ordered_indices()]

    def _get(self, i: int) -> Transition:
        return Transition(
            self.states[i].copy(),
            self.actions[i].copy(),
            float(self.rewards[i]),
            self.next_states[i].copy(),
            self.next_actions[i].copy(),
            Source(int(self.sources[i])),
        )

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Uniform sample without replacement; returns column arrays."""
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.next_actions[idx],
        )

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.writelines(json.dumps(tr.to_json()) + "\n" for tr in self.transitions())

    @staticmethod
    def read_jsonl(path: str | Path) -> list[Transition]:
        with open(path) as fh:
            return [Transition.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class TrainerHyper:
    gamma: float = 0.9
    alpha_actor: float = 0.015
    alpha_critic: float = 0.0015
    critic_batch: int = 512
    policy_batch: int = 16
    warmup: int = 10
    train_interval: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.train_interval < 1:
            raise ValueError("train_interval must be >= 1")


def _critic_input(states, actions) -> np.ndarray:
    return np.concatenate([states, actions], axis=-1)


def critic_update(critic: Network, lion: LionState, batch, hyper: TrainerHyper) -> np.ndarray:
    """Semi-gradient Sarsa step on ``critic`` in place; returns the TD errors.

    The descent direction handed to Lion is ``-mean(delta * grad_w Q)`` so a
    positive TD error pushes ``Q(s, a)`` up, as in the classic update
    ``w += alpha * delta * grad_w Q``.
    """
    states, actions, rewards, next_states, next_actions = batch
    q_next = critic.forward(_critic_input(next_states, next_actions), cache=False)[:, 0]
    q = critic.forward(_critic_input(states, actions))[:, 0]
    delta = td_error(rewards.astype(q.dtype), hyper.gamma, q_next, q)
    if hyper.alpha_critic == 0:
        return delta
    grads = critic.backward((-delta / len(delta))[:, None].astype(critic.dtype))
    lion_update(critic.params(), grads.params(), lion, hyper.alpha_critic)
    return delta


def policy_action(actor: Network, states, residual: slice | None = None, cache: bool = False) -> np.ndarray:
    """Executed action for ``states``.

    With ``residual`` set, the network output is added to the entries of the
    state it selects (the previously applied action) and clipped to [-1, 1].
    """
    out = actor.forward(states, cache=cache)
    if residual is None:
        return out
    return np.clip(out + states[..., residual], -1.0, 1.0)


def policy_gradient(actor: Network, critic: Network, states, residual: slice | None = None) -> list[np.ndarray]:
    """Mean gradient of ``Q(s, a(s))`` with respect to the actor parameters."""
    states = np.asarray(states, dtype=actor.dtype)
    if states.ndim == 1:
        states = states[None, :]
    actions = policy_action(actor, states, residual, cache=True)
    q = critic.forward(_critic_input(states, actions))
    g_in = critic.backward(np.full(q.shape, 1.0 / len(states), dtype=critic.dtype)).input
    g_act = g_in[:, states.shape[1] :]
    if residual is not None:
        # Saturated coordinates do not respond to the network output.
        g_act = g_act * (np.abs(actions) < 1.0)
    return actor.backward(g_act).params()


def actor_update(
    actor: Network, critic: Network, lion: LionState, states, hyper: TrainerHyper, residual: slice | None = None
) -> np.ndarray:
    """Descend ``Q(s, a(s))`` (a cost) with Lion; returns the applied step as a flat float64 vector."""
    before = actor.flat().astype(np.float64)
    if hyper.alpha_actor == 0:
        return np.zeros_like(before)
    grads = policy_gradient(actor, critic, states, residual)
    lion_update(actor.params(), grads, lion, hyper.alpha_actor)
    return actor.flat().astype(np.float64) - before


def estimate_qbar(rewards: Sequence[float], gamma_bar: float) -> float:
    """Discounted-cost estimate from a window of costs: mean / (1 - gamma)."""
    if not 0.0 < gamma_bar < 1.0:
        raise ValueError("gamma_bar must lie in (0, 1)")
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("reward window must not be empty")
    return float(rewards.mean() / (1.0 - gamma_bar))


def estimate_delta_q(rbar_before: float, rbar_after: float, gamma_bar: float) -> float:
    if not 0.0 < gamma_bar < 1.0:
        raise ValueError("gamma_bar must lie in (0, 1)")
    return (rbar_after - rbar_before) / (1.0 - gamma_bar)
