"""The GAIRL loop: model-free phases on the real environment alternating
with imagination training and imagination-based agent training, until the
agent converges on the real environment.

Real-environment sample efficiency is the quantity under study, so only MFP
steps advance the real-step counter; ITP and IBP are free. The agent itself
cannot tell the phases apart: its buffer, training cadence, and exploration
clocks tick identically on real and imagined steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .envs import Environment
from .imagination import Imagination, ImaginedEnvironment
from .memory import GairlMemory, Transition
from .rainbow import RainbowAgent

DEFAULT_CONVERGENCE_THRESHOLDS = {"mountain_car": -200.0, "acrobot": -100.0}


@dataclass
class PhaseSchedule:
    """Step budgets per GAIRL iteration; rho2 = rho3 = 0 is the pure
    model-free baseline."""

    rho1: int = 20_000   # real-environment steps per MFP
    rho2: int = 40_000   # imagination training updates per ITP
    rho3: int = 60_000   # imagined steps per IBP
    max_iterations: int = 25

    def __post_init__(self):
        if min(self.rho1, self.rho2, self.rho3) < 0 or self.rho1 == 0:
            raise ValueError("phase budgets must be positive (rho2/rho3 may be 0)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    @property
    def baseline(self) -> bool:
        return self.rho2 == 0 or self.rho3 == 0


def check_convergence(episode_returns, threshold: float, *, window: int = 100,
                      min_episodes: int = 100) -> bool:
    """Mean raw return over the last `window` real episodes reaches the
    threshold, with at least `min_episodes` episodes completed."""
    if len(episode_returns) < min_episodes:
        return False
    recent = episode_returns[-window:]
    return float(np.mean(recent)) >= threshold


@dataclass
class RunRecorder:
    """Row collectors for the run's delimited outputs."""

    episodes: list[dict] = field(default_factory=list)
    train_log: list[dict] = field(default_factory=list)
    imagination_log: list[dict] = field(default_factory=list)
    train_log_every: int = 1


@dataclass
class RunReport:
    environment: str
    variant: str
    seed: int | None
    converged: bool
    real_steps_to_convergence: int | None
    total_real_steps: int
    total_global_steps: int
    iterations_completed: int
    episodes_completed: int
    final_mean100: float | None
    phase_trace: list[str]
    wall_clock_seconds: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class GairlRun:
    """One seeded training run of Algorithm: MFP, convergence check, then
    ITP + IBP, looping."""

    def __init__(self, *, env: Environment, agent: RainbowAgent,
                 memory: GairlMemory | None, imagination: Imagination | None,
                 schedule: PhaseSchedule, convergence_threshold: float,
                 rollout_rng: np.random.Generator, env_rng: np.random.Generator,
                 imagination_rng: np.random.Generator | None = None,
                 recorder: RunRecorder | None = None,
                 convergence_window: int = 100, convergence_min_episodes: int = 100,
                 store_transitions: bool = True, variant: str = "",
                 seed: int | None = None):
        self.env = env
        self.agent = agent
        self.memory = memory
        self.imagination = imagination
        self.schedule = schedule
        self.threshold = convergence_threshold
        self.window = convergence_window
        self.min_episodes = convergence_min_episodes
        self.env_rng = env_rng
        self.rollout_rng = rollout_rng
        self.imagination_rng = imagination_rng
        self.recorder = recorder or RunRecorder()
        self.store_transitions = store_transitions and memory is not None
        self.variant = variant
        self.seed = seed

        self.global_step = 0
        self.real_step = 0
        self.real_episode_returns: list[float] = []
        self._episodes_by_phase = {"mfp": 0, "ibp": 0}
        self._env_state = None
        self._env_return = 0.0
        self._env_length = 0
        self._imagined_env = None
        if imagination is not None:
            cap = imagination.config.rollout_step_cap or env.max_episode_steps
            self._imagined_env = ImaginedEnvironment(
                imagination, env.kind, cap, rollout_rng)
        self._imag_state = None
        self._imag_return = 0.0
        self._imag_length = 0
        self._source = None

    # --- shared agent/environment step path --------------------------------

    def mean100(self) -> float | None:
        if not self.real_episode_returns:
            return None
        return float(np.mean(self.real_episode_returns[-self.window:]))

    def _switch_source(self, source: str):
        if self._source == source:
            return
        # A new transition sequence begins: emitted n-step windows must not
        # mix real and imagined steps.
        self.agent.flush_transitions()
        self.agent.begin_episode()
        if source == "imagination":
            self._imag_state = None
        self._source = source

    def _maybe_train(self, phase: str):
        agent = self.agent
        if self.global_step % agent.config.update_period != 0:
            return
        if len(agent.buffer) < agent.config.batch_size:
            return
        stats = agent.train_step(self.global_step)
        rec = self.recorder
        if agent.train_steps_done % rec.train_log_every == 0:
            m = self.mean100()
            rec.train_log.append({
                "global_step": self.global_step, "real_step": self.real_step,
                "phase": phase, "loss": stats["loss"],
                "epsilon": stats["epsilon"],
                "mean100": "" if m is None else m})

    def _record_episode(self, phase: str, ep_return: float, length: int):
        self._episodes_by_phase[phase] += 1
        if phase == "mfp":
            self.real_episode_returns.append(ep_return)
        m = self.mean100()
        self.recorder.episodes.append({
            "phase": phase, "real_step": self.real_step,
            "global_step": self.global_step,
            "episode": self._episodes_by_phase[phase],
            "length": length, "return_raw": ep_return,
            "mean100": "" if m is None else m})

    def run_mfp(self, budget: int) -> dict:
        """Interact with the real environment; stops early on convergence."""
        self._switch_source("env")
        steps = 0
        converged = False
        while steps < budget and not converged:
            if self._env_state is None:
                self._env_state = self.env.reset(self.env_rng)
                self.agent.begin_episode()
                self._env_return = 0.0
                self._env_length = 0
            action = self.agent.select_action(self._env_state.normalized,
                                              self.global_step, "train")
            result = self.env.step(action)
            t = Transition(self._env_state.normalized, action,
                           result.reward_normalized,
                           result.next_state.normalized, result.terminal)
            self.agent.observe(t)
            if self.store_transitions:
                self.memory.store(t)
            self._env_return += result.reward_raw
            self._env_length += 1
            self.global_step += 1
            self.real_step += 1
            steps += 1
            self._maybe_train("mfp")
            if result.terminal or result.truncated:
                if result.truncated:
                    self.agent.flush_transitions()
                    if self.memory is not None:
                        self.memory.note_truncation()
                self._record_episode("mfp", self._env_return, self._env_length)
                self._env_state = None
                converged = check_convergence(
                    self.real_episode_returns, self.threshold,
                    window=self.window, min_episodes=self.min_episodes)
            else:
                self._env_state = result.next_state
        return {"phase": "mfp", "steps": steps, "converged": converged}

    def run_itp(self, budget: int) -> dict:
        """Train the imagination from memory; the real environment and the
        agent's clocks stay untouched."""
        rows = self.imagination.train(self.memory, budget, self.imagination_rng)
        for m in rows:
            self.recorder.imagination_log.append({
                "itp_step": m.itp_step, "state_mae": m.state_mae,
                "reward_precision": "" if m.reward_precision is None else m.reward_precision,
                "reward_recall": "" if m.reward_recall is None else m.reward_recall,
                "wasserstein": "" if m.wasserstein_estimate is None else m.wasserstein_estimate})
        return {"phase": "itp", "steps": budget}

    def run_ibp(self, budget: int) -> dict:
        """Agent training steps against the imagination; episodes start from
        memory-sampled states and nothing is written back to memory."""
        self._switch_source("imagination")
        steps = 0
        while steps < budget:
            if self._imag_state is None:
                start = self.memory.sample_initial_state(self.rollout_rng)
                self._imagined_env.begin_episode(start)
                self.agent.begin_episode()
                self._imag_state = start
                self._imag_return = 0.0
                self._imag_length = 0
            action = self.agent.select_action(self._imag_state,
                                              self.global_step, "train")
            result = self._imagined_env.step(action)
            t = Transition(self._imag_state, action, result.reward_normalized,
                           result.next_state.normalized, result.terminal)
            self.agent.observe(t)
            self._imag_return += result.reward_raw
            self._imag_length += 1
            self.global_step += 1
            steps += 1
            self._maybe_train("ibp")
            if result.terminal or result.truncated:
                if result.truncated:
                    self.agent.flush_transitions()
                self._record_episode("ibp", self._imag_return, self._imag_length)
                self._imag_state = None
            else:
                self._imag_state = result.next_state.normalized
        return {"phase": "ibp", "steps": steps}

    def run(self) -> RunReport:
        started = time.perf_counter()
        schedule = self.schedule
        trace: list[str] = []
        converged = False
        iterations = 0
        while iterations < schedule.max_iterations:
            iterations += 1
            mfp = self.run_mfp(schedule.rho1)
            trace.append("mfp")
            if mfp["converged"]:
                converged = True
                break
            if not schedule.baseline and self.imagination is not None:
                self.run_itp(schedule.rho2)
                trace.append("itp")
                self.run_ibp(schedule.rho3)
                trace.append("ibp")
        self.agent.flush_transitions()
        return RunReport(
            environment=self.env.kind,
            variant=self.variant,
            seed=self.seed,
            converged=converged,
            real_steps_to_convergence=self.real_step if converged else None,
            total_real_steps=self.real_step,
            total_global_steps=self.global_step,
            iterations_completed=iterations,
            episodes_completed=len(self.real_episode_returns),
            final_mean100=self.mean100(),
            phase_trace=trace,
            wall_clock_seconds=time.perf_counter() - started,
        )


def train_rainbow(agent: RainbowAgent, env: Environment,
                  env_rng: np.random.Generator, steps: int,
                  threshold: float | None = None) -> list[float]:
    """Plain model-free training loop, used as the structural reference for
    the baseline-equivalence check. Returns per-episode raw returns."""
    returns: list[float] = []
    state = None
    ep_return = 0.0
    global_step = 0
    agent.begin_episode()
    for _ in range(steps):
        if state is None:
            state = env.reset(env_rng)
            agent.begin_episode()
            ep_return = 0.0
        action = agent.select_action(state.normalized, global_step, "train")
        result = env.step(action)
        agent.observe(Transition(state.normalized, action,
                                 result.reward_normalized,
                                 result.next_state.normalized, result.terminal))
        ep_return += result.reward_raw
        global_step += 1
        if global_step % agent.config.update_period == 0 \
                and len(agent.buffer) >= agent.config.batch_size:
            agent.train_step(global_step)
        if result.terminal or result.truncated:
            if result.truncated:
                agent.flush_transitions()
            returns.append(ep_return)
            state = None
            if threshold is not None and check_convergence(returns, threshold):
                break
        else:
            state = result.next_state
    agent.flush_transitions()
    return returns
