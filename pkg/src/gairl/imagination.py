"""The imagination module: a learned state model plus a reward model that
together stand in for the real environment during agent training.

The state model is conditioned on (state, one-hot action) and predicts the
next state; the reward model regresses the normalized reward and rounds it
to {0, 1}. A predicted reward of 1 ends the imagined episode, mirroring the
environments' reward/terminal coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import evaluation, nets
from .envs import EnvState, StepResult, denormalize_state
from .generative import (ConditionedBatch, GanConfig, MlpRegressor,
                         RegressorConfig, WganGp)
from .memory import GairlMemory, TransitionBatch

MLP = "mlp"
WGANGP = "wgangp"
STATE_MODEL_KINDS = (MLP, WGANGP)


@dataclass
class StateGanSettings:
    """State-generating WGAN-GP hyperparameters."""

    generator_hidden: tuple[int, ...] = (512, 512)
    critic_hidden: tuple[int, ...] = (512, 512)
    leak: float = 0.2
    noise_dim: int = 0  # deterministic benchmark dynamics need no noise input
    critic_steps: int = 10
    penalty_coeff: float = 10.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    init_stddev: float = 0.1


@dataclass
class StateMlpSettings:
    """State-generating MLP (L1 loss) hyperparameters."""

    hidden: tuple[int, ...] = (512, 512)
    leak: float = 0.2
    dropout: float = 0.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    init_stddev: float = 0.1


@dataclass
class RewardMlpSettings:
    """Reward-regressing MLP (L1 loss) hyperparameters."""

    hidden: tuple[int, ...] = (64, 64)
    leak: float = 0.2
    dropout: float = 0.25
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    init_stddev: float = 0.1


@dataclass
class ImaginationConfig:
    state_model_kind: str = WGANGP
    state_gan: StateGanSettings = field(default_factory=StateGanSettings)
    state_mlp: StateMlpSettings = field(default_factory=StateMlpSettings)
    reward_mlp: RewardMlpSettings = field(default_factory=RewardMlpSettings)
    batch_size: int = 256
    metric_every: int = 1000
    rollout_step_cap: int | None = None  # None: use the environment's cap

    def __post_init__(self):
        if self.state_model_kind not in STATE_MODEL_KINDS:
            raise ValueError(f"unknown state model {self.state_model_kind!r}")
        if self.rollout_step_cap is not None and self.rollout_step_cap < 1:
            raise ValueError("rollout_step_cap must be >= 1")


@dataclass
class ImaginationMetrics:
    itp_step: int
    state_mae: float
    reward_precision: float | None
    reward_recall: float | None
    wasserstein_estimate: float | None


def one_hot_actions(actions, action_count: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    return np.eye(action_count)[actions]


class Imagination:
    """Learned dynamics: state model + reward model over normalized data."""

    def __init__(self, config: ImaginationConfig, state_dim: int,
                 action_count: int, rng: np.random.Generator):
        self.config = config
        self.state_dim = state_dim
        self.action_count = action_count
        cond_dim = state_dim + action_count
        if config.state_model_kind == WGANGP:
            g = config.state_gan
            self.state_gan = WganGp(GanConfig(
                condition_dim=cond_dim, payload_dim=state_dim,
                noise_dim=g.noise_dim, generator_hidden=tuple(g.generator_hidden),
                critic_hidden=tuple(g.critic_hidden), leak=g.leak,
                critic_steps=g.critic_steps, penalty_coeff=g.penalty_coeff,
                learning_rate=g.learning_rate, adam_beta1=g.adam_beta1,
                adam_beta2=g.adam_beta2, init_stddev=g.init_stddev), rng)
            self.state_mlp = None
        else:
            m = config.state_mlp
            self.state_mlp = MlpRegressor(RegressorConfig(
                input_dim=cond_dim, output_dim=state_dim, hidden=tuple(m.hidden),
                leak=m.leak, dropout=m.dropout, learning_rate=m.learning_rate,
                adam_beta1=m.adam_beta1, adam_beta2=m.adam_beta2,
                init_stddev=m.init_stddev), rng)
            self.state_gan = None
        r = config.reward_mlp
        self.reward_model = MlpRegressor(RegressorConfig(
            input_dim=cond_dim, output_dim=1, hidden=tuple(r.hidden),
            leak=r.leak, dropout=r.dropout, learning_rate=r.learning_rate,
            adam_beta1=r.adam_beta1, adam_beta2=r.adam_beta2,
            init_stddev=r.init_stddev), rng)
        self.itp_steps_done = 0
        self._gan_cycle = 0
        self.trained = False

    # --- training -----------------------------------------------------------

    def conditions_for(self, states, actions) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        onehot = one_hot_actions(np.atleast_1d(actions), self.action_count)
        return np.concatenate([states, onehot], axis=1)

    def _state_model_update(self, conditions, next_states, rng):
        if self.state_mlp is not None:
            self.state_mlp.train_step(conditions, next_states, rng)
            return
        # One optimizer update per ITP step: k critic updates, then one
        # generator update, repeating.
        gan = self.state_gan
        batch = ConditionedBatch(conditions, next_states)
        if self._gan_cycle < gan.config.critic_steps:
            gan.critic_step(batch, rng)
        else:
            gan.generator_step(conditions, rng)
        self._gan_cycle = (self._gan_cycle + 1) % (gan.config.critic_steps + 1)

    def train(self, memory: GairlMemory, steps: int,
              rng: np.random.Generator) -> list[ImaginationMetrics]:
        """Run `steps` supervised updates from the memory's train store.

        Each step draws one uniform batch, applies one state-model optimizer
        update and one reward-model update, and evaluates on the test store
        every `metric_every` steps.
        """
        trace: list[ImaginationMetrics] = []
        if steps <= 0:
            return trace
        if len(memory.train) == 0:
            raise ValueError("imagination training needs a non-empty train store")
        for _ in range(steps):
            batch = memory.sample_batch(self.config.batch_size, rng)
            conditions = self.conditions_for(batch.states, batch.actions)
            self._state_model_update(conditions, batch.next_states, rng)
            self.reward_model.train_step(conditions, batch.rewards[:, None], rng)
            self.itp_steps_done += 1
            self.trained = True
            if len(memory.test) > 0 and \
                    self.itp_steps_done % self.config.metric_every == 0:
                trace.append(self.evaluate(memory.test.select(
                    np.arange(len(memory.test))), rng))
        return trace

    # --- prediction -----------------------------------------------------------

    def _require_trained(self):
        if not self.trained:
            raise RuntimeError("imagination has not been trained yet")

    def predict_next_states(self, states, actions, rng=None) -> np.ndarray:
        """Batched next-state prediction, clamped to [0, 1]^d."""
        self._require_trained()
        conditions = self.conditions_for(states, actions)
        if self.state_mlp is not None:
            out = self.state_mlp.predict(conditions)
        else:
            gen = self.state_gan.generator
            if gen.config.noise_dim > 0:
                if rng is None:
                    raise ValueError("stochastic state model needs an rng")
                noise = gen.sample_noise(len(conditions), rng)
            else:
                noise = np.zeros((len(conditions), 0))
            out, _ = gen.run(noise, conditions)
        return np.clip(out, 0.0, 1.0)

    def predict_next_state(self, state, action, rng=None) -> np.ndarray:
        return self.predict_next_states(state[None, :], [action], rng)[0]

    def predict_rewards(self, states, actions) -> tuple[np.ndarray, np.ndarray]:
        """Returns (class in {0,1}, raw regressor output) per sample."""
        self._require_trained()
        conditions = self.conditions_for(states, actions)
        raw = self.reward_model.predict(conditions)[:, 0]
        classes = np.clip(np.floor(raw + 0.5), 0.0, 1.0).astype(np.int64)
        return classes, raw

    def predict_reward(self, state, action) -> tuple[int, float]:
        classes, raw = self.predict_rewards(state[None, :], [action])
        return int(classes[0]), float(raw[0])

    # --- evaluation -----------------------------------------------------------

    def evaluate(self, test: TransitionBatch,
                 rng: np.random.Generator | None = None) -> ImaginationMetrics:
        """State MAE, reward precision/recall, and (WGAN-GP only) the critic's
        Wasserstein estimate, all on held-out transitions."""
        if len(test) == 0:
            raise ValueError("empty test store")
        self._require_trained()
        predicted = self.predict_next_states(test.states, test.actions, rng)
        state_mae = evaluation.mae(predicted, test.next_states)
        classes, _ = self.predict_rewards(test.states, test.actions)
        precision, recall = evaluation.precision_recall(classes == 1,
                                                        test.rewards > 0.5)
        wasserstein = None
        if self.state_gan is not None:
            conditions = self.conditions_for(test.states, test.actions)
            real_v, _ = self.state_gan.critic.value(conditions, test.next_states)
            fake_v, _ = self.state_gan.critic.value(conditions, predicted)
            wasserstein = float(real_v.mean() - fake_v.mean())
        return ImaginationMetrics(self.itp_steps_done, state_mae, precision,
                                  recall, wasserstein)

    # --- persistence -----------------------------------------------------------

    def save(self, state_path, reward_path):
        if self.state_mlp is not None:
            nets.save_network(state_path, self.state_mlp.spec, self.state_mlp.params)
        else:
            gen = self.state_gan.generator
            nets.save_network(state_path, gen.spec, gen.params)
        nets.save_network(reward_path, self.reward_model.spec,
                          self.reward_model.params)


class ImaginedEnvironment:
    """Environment-shaped facade over a trained imagination.

    Episodes start from a caller-provided normalized state; a predicted
    normalized reward of 1 terminates, and rollouts truncate at the step cap
    so the agent sees exactly the interface the real environment exposes.
    """

    def __init__(self, imagination: Imagination, env_kind: str, step_cap: int,
                 rng: np.random.Generator):
        if step_cap < 1:
            raise ValueError("step cap must be >= 1")
        self.imagination = imagination
        self.env_kind = env_kind
        self.max_episode_steps = step_cap
        self.rng = rng
        self._state = None
        self._steps = 0

    def begin_episode(self, normalized_state: np.ndarray) -> EnvState:
        self._state = np.asarray(normalized_state, dtype=np.float64).copy()
        self._steps = 0
        return self._make_state(self._state)

    def _make_state(self, normalized) -> EnvState:
        return EnvState(raw=denormalize_state(normalized, self.env_kind),
                        normalized=normalized)

    def step(self, action: int) -> StepResult:
        if self._state is None:
            raise RuntimeError("step() before begin_episode()")
        im = self.imagination
        next_state = im.predict_next_state(self._state, action, self.rng)
        reward_class, _ = im.predict_reward(self._state, action)
        terminal = reward_class == 1
        self._steps += 1
        truncated = (not terminal) and self._steps >= self.max_episode_steps
        self._state = next_state
        return StepResult(
            next_state=self._make_state(next_state),
            reward_raw=float(reward_class) - 1.0,
            reward_normalized=float(reward_class),
            terminal=bool(terminal),
            truncated=bool(truncated),
        )
