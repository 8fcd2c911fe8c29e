"""Cloud-side learner: replay storage, actor-critic updates and the composer.

Training is clocked by the number of transitions received, not by wall
time, so an in-process run and a networked run see the same schedule for
the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..concerto import (
    Branch,
    ComposerConfig,
    ComposerLog,
    DdpRecord,
    GdsRecord,
    compose,
    convergence_diagnostics,
    fit_gds,
)
from ..edgelink.codec import WeightPacket, decode_buffer_packet, encode_weight_packet
from ..neural import LionState, NetworkSpec, init_xavier
from ..rl_core import (
    ReplayBuffer,
    Source,
    TrainerHyper,
    actor_update,
    critic_update,
    estimate_qbar,
)
from .state import PREV_ACTION

__all__ = ["CloudConfig", "CloudTrainer"]

_NOISE_BRANCHES = {Branch.PARTIAL, Branch.SLOWING, Branch.FAILED}


@dataclass(frozen=True)
class CloudConfig:
    # Step sizes well below the optimiser defaults: Lion moves every weight by
    # the full rate each update, and the actor is updated every fourth step.
    hyper: TrainerHyper = field(default_factory=lambda: TrainerHyper(alpha_actor=1e-5, alpha_critic=1e-4))
    composer: ComposerConfig = field(default_factory=ComposerConfig)
    use_composer: bool = True
    gamma_bar: float = 0.9
    buffer_capacity: int = 2000
    critic_interval: int = 20
    actor_interval: int = 4
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (256, 256, 256, 256, 256)
    weight_decay: float = 0.0
    # Zero output layer: with residual actions the first policy holds the last classical action.
    actor_output_scale: float = 0.0
    actor_delay: int = 1
    residual: bool = True


class CloudTrainer:
    def __init__(self, cfg: CloudConfig = CloudConfig(), seed: int = 0, composer_log: ComposerLog | None = None):
        self.cfg = cfg
        self.seed = seed
        ss = np.random.SeedSequence(seed).spawn(3)
        self.actor = init_xavier(NetworkSpec.actor(hidden=cfg.actor_hidden), int(ss[0].generate_state(1)[0]))
        self.critic = init_xavier(NetworkSpec.critic(hidden=cfg.critic_hidden), int(ss[1].generate_state(1)[0]))
        if cfg.actor_output_scale != 1.0:
            self.actor.weights[-1][...] *= cfg.actor_output_scale
        self.actor_lion = LionState.for_params(self.actor.params(), weight_decay=cfg.weight_decay)
        self.critic_lion = LionState.for_params(self.critic.params(), weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(ss[2])
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.log = composer_log if composer_log is not None else ComposerLog()
        self.steps_seen = 0
        self.critic_updates = 0
        self.actor_updates = 0
        self.sequence = 0
        self.outbox: list[bytes] = []
        self.last_td: float = math.nan

        self._segment_rewards: list[float] = []
        self._theta_j = self.actor.flat().astype(np.float64)
        self._prev: GdsRecord | None = None
        self._ddp = DdpRecord(0, self._theta_j.copy(), math.inf)
        self._j = 0
        self._decisions = 0
        self._exploring = False
        self.phase_qbar: list[float] = []
        self.branch_counts = {b.name: 0 for b in Branch}

    # -- data ------------------------------------------------------------

    def initial_packet(self) -> bytes:
        return self._publish()

    def receive(self, payload: bytes) -> None:
        pkt = decode_buffer_packet(payload)
        self.ingest(pkt.transitions)

    def ingest(self, transitions) -> None:
        for tr in transitions:
            if self._exploring and tr.source == Source.RL:
                tr.source = Source.COMPOSER
            self.buffer.add(tr)
            self.steps_seen += 1
            self._segment_rewards.append(tr.reward)
            self._train_tick()
            if self.cfg.use_composer and len(self._segment_rewards) == self.cfg.composer.L + 1:
                self._close_segment()

    # -- learning ----------------------------------------------------------

    def _train_tick(self) -> None:
        hyper = self.cfg.hyper
        n = self.steps_seen
        if len(self.buffer) < hyper.warmup:
            return
        if n % self.cfg.critic_interval == 0:
            batch = self.buffer.sample(self.rng, hyper.critic_batch)
            delta = critic_update(self.critic, self.critic_lion, batch, hyper)
            self.last_td = float(np.mean(np.abs(delta)))
            self.critic_updates += 1
        if n % self.cfg.actor_interval == 0 and self.critic_updates >= self.cfg.actor_delay:
            states = self.buffer.sample(self.rng, hyper.policy_batch)[0]
            actor_update(
                self.actor, self.critic, self.actor_lion, states, hyper, PREV_ACTION if self.cfg.residual else None
            )
            self.actor_updates += 1
            self.outbox.append(self._publish())

    def _publish(self) -> bytes:
        self.sequence += 1
        return encode_weight_packet(WeightPacket.from_network(self.actor, self.sequence))

    def _close_segment(self) -> None:
        cfg = self.cfg
        rewards = np.asarray(self._segment_rewards, dtype=np.float64)
        self._segment_rewards = []
        qbar = estimate_qbar(rewards, cfg.gamma_bar)
        a, b, c = fit_gds(rewards / (1.0 - cfg.gamma_bar))
        theta_now = self.actor.flat().astype(np.float64)
        delta = theta_now - self._theta_j
        cur = GdsRecord(self._j, a, b, c, delta, qbar)
        noise_seed = int(np.random.SeedSequence([self.seed, self._decisions]).generate_state(1)[0])
        rng = np.random.default_rng(noise_seed)
        g_before = self._ddp.g
        theta_next, ddp, j_next, branch = compose(
            self._theta_j, delta, self._prev, cur, self._ddp, cfg.composer, rng, self._j
        )
        self.log.write(ddp.g, self._j, branch, cur, noise_seed if branch in _NOISE_BRANCHES else None)
        self.branch_counts[branch.name] += 1
        self._decisions += 1
        if ddp.g != g_before:
            self.phase_qbar.append(cur.qbar if branch == Branch.IMPROVED else ddp.best_qbar)
        self._ddp, self._j, self._prev = ddp, j_next, cur
        self._exploring = branch in _NOISE_BRANCHES
        if not np.array_equal(theta_next, theta_now):
            self.actor.set_flat(theta_next)
            self.outbox.append(self._publish())
        self._theta_j = self.actor.flat().astype(np.float64)

    def take_outbox(self) -> list[bytes]:
        out, self.outbox = self.outbox, []
        return out

    def diagnostics(self) -> dict:
        report = convergence_diagnostics(self.phase_qbar)
        return {
            "steps_seen": self.steps_seen,
            "critic_updates": self.critic_updates,
            "actor_updates": self.actor_updates,
            "weight_packets": self.sequence,
            "composer_decisions": self._decisions,
            "branch_counts": dict(self.branch_counts),
            "best_qbar": self._ddp.best_qbar,
            "convergence": report.to_dict() if report is not None else None,
        }
