"""Value-based agent: double Q-learning over a categorical return
distribution with dueling noisy heads, multi-step returns, prioritized
replay, a target network, and an epsilon-greedy schedule.

Both exploration mechanisms (epsilon schedule and noisy layers) are active by
default and can be switched off independently for ablations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .memory import PrioritizedBuffer, Transition, TransitionBatch


@dataclass
class AgentConfig:
    hidden_layers: tuple[int, ...] = (24, 24)
    leak: float = 0.2
    # Trunk weight scale. Small-stddev inits (e.g. 0.02) leave the logits
    # nearly state-independent for these low-dimensional inputs and the
    # agent never learns; 0.5 keeps the state signal comparable to the
    # head scales.
    init_stddev: float = 0.5
    learning_rate: float = 5e-3
    gradient_clip_norm: float = 1.0
    gamma: float = 0.99
    batch_size: int = 256
    buffer_capacity: int = 10_000
    prioritization_epsilon: float = 1e-5
    prioritization_alpha: float = 0.6
    prioritization_beta_start: float = 0.4
    prioritization_beta_decay_steps: int = 50_000
    use_epsilon_greedy: bool = True
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_start: int = 1_000
    epsilon_decay_steps: int = 10_000
    use_noisy: bool = True
    noisy_sigma0: float = 0.5
    n_step: int = 3
    update_period: int = 4
    target_sync_period: int = 500
    num_atoms: int = 51
    v_min: float = 0.0
    v_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be < v_max")
        if self.num_atoms < 2:
            raise ValueError("need at least 2 atoms")
        if min(self.n_step, self.update_period, self.target_sync_period) < 1:
            raise ValueError("periods must be >= 1")
        if len(self.hidden_layers) < 1:
            raise ValueError("need at least one hidden layer")

    def support(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.num_atoms)


@dataclass
class ValueDistribution:
    """Per-action categorical return distribution over a fixed atom grid."""

    support: np.ndarray
    probabilities: np.ndarray  # (actions, atoms)

    def __post_init__(self):
        sums = self.probabilities.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(self.probabilities < -1e-12):
            raise ValueError("probabilities must be simplex vectors")
        diffs = np.diff(self.support)
        if np.any(np.abs(diffs - diffs[0]) > 1e-9 * max(1.0, abs(diffs[0]))):
            raise ValueError("support must be an affine grid")

    def expected_values(self) -> np.ndarray:
        return self.probabilities @ self.support


def project_distribution(target_probs, target_atoms, support) -> np.ndarray:
    """Project mass at arbitrary atom locations back onto a fixed grid.

    Each atom is clamped into [support[0], support[-1]] and its mass split
    linearly between the two nearest grid points; total mass is conserved.
    Accepts single distributions or (batch, atoms) arrays.
    """
    support = np.asarray(support, dtype=np.float64)
    probs = np.asarray(target_probs, dtype=np.float64)
    atoms = np.asarray(target_atoms, dtype=np.float64)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    atoms = np.broadcast_to(np.atleast_2d(atoms), probs.shape)
    n_atoms = len(support)
    v_min, v_max = support[0], support[-1]
    delta = (v_max - v_min) / (n_atoms - 1)

    b = (np.clip(atoms, v_min, v_max) - v_min) / delta
    lower = np.floor(b).astype(np.int64)
    lower = np.minimum(lower, n_atoms - 1)
    upper = np.minimum(lower + 1, n_atoms - 1)
    frac = b - lower

    batch = probs.shape[0]
    rows = np.repeat(np.arange(batch), probs.shape[1]) * n_atoms
    flat_lo = rows + lower.ravel()
    flat_hi = rows + upper.ravel()
    out = np.bincount(flat_lo, weights=(probs * (1.0 - frac)).ravel(),
                      minlength=batch * n_atoms)
    out += np.bincount(flat_hi, weights=(probs * frac).ravel(),
                       minlength=batch * n_atoms)
    out = out.reshape(batch, n_atoms)
    return out[0] if single else out


def _factorized(eps: np.ndarray) -> np.ndarray:
    return np.sign(eps) * np.sqrt(np.abs(eps))


class _Dense:
    def __init__(self, fan_in, fan_out, rng, init_stddev):
        self.w = rng.normal(0.0, init_stddev, size=(fan_out, fan_in))
        self.b = np.zeros(fan_out)
        self.noisy = False

    def params(self):
        return [self.w, self.b]

    def effective(self, rng, noisy):
        return self.w, self.b, None

    def grads(self, d_w, d_b, _noise):
        return [d_w, d_b]


class _NoisyDense:
    """Linear layer with learnable factorized Gaussian perturbations.

    Fresh noise is drawn per training forward; evaluation zeroes it, making
    the layer an ordinary affine map of the weight means. Means start
    uniform in +-1/sqrt(fan_in) and scales at sigma0/sqrt(fan_in): the
    standard pairing that keeps the noise a perturbation rather than the
    dominant term.
    """

    def __init__(self, fan_in, fan_out, rng, init_stddev, sigma0):
        bound = 1.0 / np.sqrt(fan_in)
        self.mu_w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        self.sigma_w = np.full((fan_out, fan_in), sigma0 / np.sqrt(fan_in))
        self.mu_b = rng.uniform(-bound, bound, size=fan_out)
        self.sigma_b = np.full(fan_out, sigma0 / np.sqrt(fan_in))
        self.noisy = True

    def params(self):
        return [self.mu_w, self.sigma_w, self.mu_b, self.sigma_b]

    def effective(self, rng, noisy):
        if not noisy:
            return self.mu_w, self.mu_b, None
        f_in = _factorized(rng.standard_normal(self.mu_w.shape[1]))
        f_out = _factorized(rng.standard_normal(self.mu_w.shape[0]))
        w_noise = np.outer(f_out, f_in)
        w = self.mu_w + self.sigma_w * w_noise
        b = self.mu_b + self.sigma_b * f_out
        return w, b, (w_noise, f_out)

    def grads(self, d_w, d_b, noise):
        if noise is None:
            return [d_w, np.zeros_like(self.sigma_w), d_b, np.zeros_like(self.sigma_b)]
        w_noise, f_out = noise
        return [d_w, d_w * w_noise, d_b, d_b * f_out]


@dataclass
class _QCache:
    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    eff: list[tuple]
    trunk_out: np.ndarray
    value_in: tuple
    adv_in: tuple


class QNetwork:
    """Trunk of leaky-ReLU layers feeding dueling value/advantage heads that
    emit per-action atom logits; the last hidden layer and both heads carry
    the noise parameters."""

    def __init__(self, state_dim, action_count, config: AgentConfig,
                 rng: np.random.Generator):
        self.config = config
        self.action_count = action_count
        self.num_atoms = config.num_atoms
        hidden = config.hidden_layers
        self.layers = []
        dims = [state_dim, *hidden]
        for i in range(len(hidden)):
            last_hidden = i == len(hidden) - 1
            if last_hidden and config.use_noisy:
                self.layers.append(_NoisyDense(dims[i], dims[i + 1], rng,
                                               config.init_stddev, config.noisy_sigma0))
            else:
                self.layers.append(_Dense(dims[i], dims[i + 1], rng, config.init_stddev))
        head = _NoisyDense if config.use_noisy else _Dense
        head_args = (config.init_stddev, config.noisy_sigma0) if config.use_noisy \
            else (config.init_stddev,)
        self.value_head = head(hidden[-1], config.num_atoms, rng, *head_args)
        self.adv_head = head(hidden[-1], action_count * config.num_atoms, rng, *head_args)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        out.extend(self.value_head.params())
        out.extend(self.adv_head.params())
        return out

    def copy_from(self, other: "QNetwork"):
        for dst, src in zip(self.params(), other.params()):
            np.copyto(dst, src)

    def forward(self, states, rng, noisy: bool):
        """Returns (probabilities (B, A, C), cache)."""
        h = np.atleast_2d(np.asarray(states, dtype=np.float64))
        inputs, pre_acts, effs = [], [], []
        for layer in self.layers:
            w, b, noise = layer.effective(rng, noisy and layer.noisy)
            inputs.append(h)
            z = h @ w.T + b
            pre_acts.append(z)
            effs.append((w, noise))
            h = nets.leaky_relu(z, self.config.leak)
        wv, bv, nv = self.value_head.effective(rng, noisy and self.value_head.noisy)
        wa, ba, na = self.adv_head.effective(rng, noisy and self.adv_head.noisy)
        value = h @ wv.T + bv                                   # (B, C)
        adv = (h @ wa.T + ba).reshape(len(h), self.action_count, self.num_atoms)
        logits = value[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=-1, keepdims=True)
        cache = _QCache(inputs, pre_acts, [(wv, nv), (wa, na), *effs], h,
                        (wv, nv), (wa, na))
        self._last_probs = probs
        return probs, cache

    def backward(self, cache: _QCache, d_logits) -> list[np.ndarray]:
        """Gradients for sum(d_logits * logits), ordered like params()."""
        batch = d_logits.shape[0]
        d_value = d_logits.sum(axis=1)                           # (B, C)
        d_adv = d_logits - d_logits.mean(axis=1, keepdims=True)  # (B, A, C)
        d_adv_flat = d_adv.reshape(batch, -1)

        h = cache.trunk_out
        wv, nv = cache.value_in
        wa, na = cache.adv_in
        g_value = self.value_head.grads(d_value.T @ h, d_value.sum(axis=0), nv)
        g_adv = self.adv_head.grads(d_adv_flat.T @ h, d_adv_flat.sum(axis=0), na)

        delta = d_value @ wv + d_adv_flat @ wa                   # (B, h_last)
        layer_grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            delta = delta * nets.leaky_relu_grad(cache.pre_acts[i], self.config.leak)
            w, noise = cache.eff[2 + i]
            layer = self.layers[i]
            layer_grads.append(layer.grads(delta.T @ cache.inputs[i],
                                           delta.sum(axis=0), noise))
            if i > 0:
                delta = delta @ w
        grads = []
        for g in reversed(layer_grads):
            grads.extend(g)
        grads.extend(g_value)
        grads.extend(g_adv)
        return grads


class RainbowAgent:
    """The model-free module. Owns its prioritized buffer, online/target
    networks, the n-step aggregation window, and all exploration schedules."""

    def __init__(self, config: AgentConfig, state_dim: int, action_count: int,
                 rng: np.random.Generator):
        self.config = config
        self.state_dim = state_dim
        self.action_count = action_count
        self.rng = rng
        self.support = config.support()
        self.online = QNetwork(state_dim, action_count, config, rng)
        self.target = QNetwork(state_dim, action_count, config, rng)
        self.target.copy_from(self.online)
        self.buffer = PrioritizedBuffer(
            config.buffer_capacity, state_dim,
            alpha=config.prioritization_alpha,
            epsilon=config.prioritization_epsilon,
            beta_start=config.prioritization_beta_start,
            beta_decay_steps=config.prioritization_beta_decay_steps)
        self.optimizer = nets.SgdState(config.learning_rate)
        self.train_steps_done = 0
        self._window: deque[Transition] = deque()
        self._episode_open = True

    # --- acting ---------------------------------------------------------

    def epsilon(self, global_step: int) -> float:
        cfg = self.config
        if not cfg.use_epsilon_greedy:
            return 0.0
        if global_step < cfg.epsilon_decay_start:
            return cfg.epsilon_start
        frac = min(1.0, (global_step - cfg.epsilon_decay_start) / cfg.epsilon_decay_steps)
        return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac

    def select_action(self, state, global_step: int, mode: str = "train") -> int:
        if mode not in ("train", "eval"):
            raise ValueError(f"bad mode {mode!r}")
        if mode == "train" and self.rng.random() < self.epsilon(global_step):
            return int(self.rng.integers(self.action_count))
        probs, _ = self.online.forward(state, self.rng, noisy=(mode == "train"))
        q = probs[0] @ self.support
        return int(np.argmax(q))

    def action_distribution(self, state) -> ValueDistribution:
        probs, _ = self.online.forward(state, self.rng, noisy=False)
        return ValueDistribution(self.support.copy(), probs[0])

    # --- experience -------------------------------------------------------

    def begin_episode(self):
        if self._window:
            raise RuntimeError("episode started with an unflushed n-step window")
        self._episode_open = True

    def observe(self, t: Transition):
        """Feed one raw transition; emits n-step aggregates into the buffer."""
        if not self._episode_open:
            raise ValueError("transition after a terminal without begin_episode()")
        self._window.append(t)
        if len(self._window) == self.config.n_step:
            self.buffer.push(self._aggregate_front())
            self._window.popleft()
        if t.terminal:
            self._flush()
            self._episode_open = False

    def flush_transitions(self):
        """Flush the window without a terminal (truncation or phase switch);
        the emitted records keep bootstrapping from their last next-state."""
        self._flush()

    def _aggregate_front(self) -> Transition:
        gamma = self.config.gamma
        reward = 0.0
        for k, step in enumerate(self._window):
            reward += (gamma ** k) * step.reward
        first = self._window[0]
        last = self._window[-1]
        return Transition(first.state, first.action, reward, last.next_state,
                          last.terminal, n_steps=len(self._window))

    def _flush(self):
        while self._window:
            self.buffer.push(self._aggregate_front())
            self._window.popleft()

    # --- learning ---------------------------------------------------------

    def compute_target(self, batch: TransitionBatch, *, noisy=True):
        """Projected n-step target distributions (double-Q: the online network
        picks the bootstrap action, the target network supplies its
        distribution). Returns (projected (B, C), chosen next actions)."""
        cfg = self.config
        z = self.support
        n = len(batch)
        next_online, _ = self.online.forward(batch.next_states, self.rng, noisy=noisy)
        next_actions = np.argmax(next_online @ z, axis=1)
        next_target, _ = self.target.forward(batch.next_states, self.rng, noisy=noisy)
        boot = next_target[np.arange(n), next_actions]
        discount = (cfg.gamma ** batch.n_steps) * (~batch.terminals)
        atoms = batch.rewards[:, None] + discount[:, None] * z[None, :]
        return project_distribution(boot, atoms, z), next_actions

    def compute_loss(self, batch: TransitionBatch, weights, *, noisy=True):
        """Per-batch distributional loss; returns (loss, per-sample CE, cache, d_logits)."""
        n = len(batch)
        projected, _ = self.compute_target(batch, noisy=noisy)
        probs, cache = self.online.forward(batch.states, self.rng, noisy=noisy)
        taken = probs[np.arange(n), batch.actions]
        cross_entropy = -(projected * np.log(np.clip(taken, 1e-12, None))).sum(axis=1)
        loss = float(np.mean(weights * cross_entropy))

        d_logits = np.zeros_like(probs)
        d_logits[np.arange(n), batch.actions] = \
            weights[:, None] * (taken - projected) / n
        return loss, cross_entropy, cache, d_logits

    def train_step(self, global_step: int) -> dict:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            raise ValueError("not enough stored transitions for a batch")
        batch, weights, idx = self.buffer.sample(cfg.batch_size, global_step, self.rng)
        loss, cross_entropy, cache, d_logits = self.compute_loss(batch, weights)
        grads = self.online.backward(cache, d_logits)
        nets.clip_arrays(grads, cfg.gradient_clip_norm)
        nets.update_arrays(self.online.params(), self.optimizer, grads)
        self.buffer.update_priorities(idx, cross_entropy)
        self.train_steps_done += 1
        if self.train_steps_done % cfg.target_sync_period == 0:
            self.sync_target()
        return {"loss": loss, "epsilon": self.epsilon(global_step),
                "beta": self.buffer.beta(global_step)}

    def sync_target(self):
        self.target.copy_from(self.online)

    # --- persistence --------------------------------------------------------

    def save(self, path):
        arrays = {f"p{i}": a for i, a in enumerate(self.online.params())}
        meta = {"state_dim": self.state_dim, "action_count": self.action_count,
                "hidden_layers": list(self.config.hidden_layers),
                "num_atoms": self.config.num_atoms,
                "v_min": self.config.v_min, "v_max": self.config.v_max,
                "use_noisy": self.config.use_noisy}
        nets.save_arrays(path, arrays, meta)

    def load(self, path):
        arrays, _ = nets.load_arrays(path)
        for i, a in enumerate(self.online.params()):
            np.copyto(a, arrays[f"p{i}"])
        self.sync_target()
