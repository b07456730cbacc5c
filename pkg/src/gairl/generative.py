"""Generative model families: an L1-loss MLP regressor, the original GAN, a
weight-clipped Wasserstein GAN, and WGAN-GP, all conditional-capable.

Conditioning convention: the critic/discriminator sees [condition, payload];
the generator sees [noise, condition] (noise may be zero-width for
deterministic targets). Generator outputs pass through tanh and are mapped
affinely onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import AdamState, GradientSet, NetworkSpec, backward, forward, init_network


@dataclass(frozen=True)
class ConditionedBatch:
    """Real samples for conditional training: payload given condition."""

    conditions: np.ndarray  # (batch, condition_dim); width may be zero
    payloads: np.ndarray    # (batch, payload_dim)

    def __len__(self):
        return len(self.payloads)


@dataclass
class GanConfig:
    condition_dim: int
    payload_dim: int
    noise_dim: int = 0
    generator_hidden: tuple[int, ...] = (512, 512)
    critic_hidden: tuple[int, ...] = (512, 512)
    leak: float = 0.2
    critic_steps: int = 10          # k: critic updates per generator update
    penalty_coeff: float = 10.0     # lambda (WGAN-GP)
    clip_constant: float = 0.01     # c (weight-clipped WGAN)
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    init_stddev: float = 0.1

    def __post_init__(self):
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.penalty_coeff < 0:
            raise ValueError("penalty_coeff must be >= 0")
        if self.noise_dim < 0 or self.condition_dim < 0 or self.payload_dim < 1:
            raise ValueError("bad dimensions")
        if self.noise_dim + self.condition_dim < 1:
            raise ValueError("generator needs at least one input: "
                             "noise_dim + condition_dim must be >= 1")
        if self.clip_constant <= 0:
            raise ValueError("clip_constant must be > 0")


def wgangp_config(condition_dim, payload_dim, **overrides) -> GanConfig:
    return GanConfig(condition_dim, payload_dim, **overrides)


def gan_config(condition_dim, payload_dim, **overrides) -> GanConfig:
    defaults = dict(critic_steps=1, adam_beta1=0.9, adam_beta2=0.999)
    defaults.update(overrides)
    return GanConfig(condition_dim, payload_dim, **defaults)


def wgan_config(condition_dim, payload_dim, **overrides) -> GanConfig:
    defaults = dict(critic_steps=5, adam_beta1=0.9, adam_beta2=0.999)
    defaults.update(overrides)
    return GanConfig(condition_dim, payload_dim, **defaults)


@dataclass
class RegressorConfig:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (512, 512)
    leak: float = 0.2
    dropout: float = 0.0
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    init_stddev: float = 0.1


class MlpRegressor:
    """Plain MLP trained on mean absolute error."""

    def __init__(self, config: RegressorConfig, rng: np.random.Generator):
        self.config = config
        self.spec = NetworkSpec(
            layer_sizes=(config.input_dim, *config.hidden, config.output_dim),
            leak=config.leak, dropout=config.dropout,
            init_stddev=config.init_stddev)
        self.params = init_network(self.spec, rng)
        self.optimizer = AdamState(config.learning_rate, config.adam_beta1,
                                   config.adam_beta2)

    def train_step(self, inputs, targets, rng: np.random.Generator) -> float:
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if len(inputs) == 0:
            raise ValueError("empty batch")
        pred, cache = forward(self.params, self.spec, inputs, mode="train", rng=rng)
        diff = pred - targets
        loss = float(np.mean(np.abs(diff)))
        grads = backward(self.params, self.spec, cache, np.sign(diff) / diff.size)
        nets.optimizer_step(self.params, self.optimizer, grads)
        return loss

    def predict(self, inputs) -> np.ndarray:
        out, _ = forward(self.params, self.spec, inputs, mode="eval")
        return out


class _Generator:
    def __init__(self, config: GanConfig, rng):
        self.config = config
        self.spec = NetworkSpec(
            layer_sizes=(config.noise_dim + config.condition_dim,
                         *config.generator_hidden, config.payload_dim),
            leak=config.leak, output_activation="tanh",
            init_stddev=config.init_stddev)
        self.params = init_network(self.spec, rng)
        self.optimizer = AdamState(config.learning_rate, config.adam_beta1,
                                   config.adam_beta2)

    def sample_noise(self, n, rng) -> np.ndarray:
        return rng.standard_normal((n, self.config.noise_dim)) \
            if self.config.noise_dim else np.zeros((n, 0))

    def run(self, noise, conditions):
        """Deterministic forward for given noise; payload mapped to [0, 1]."""
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        if noise.shape[1] != self.config.noise_dim:
            raise ValueError(f"noise dim {noise.shape[1]} != {self.config.noise_dim}")
        if conditions.shape[1] != self.config.condition_dim:
            raise ValueError(
                f"condition dim {conditions.shape[1]} != {self.config.condition_dim}")
        x = np.concatenate([noise, conditions], axis=1)
        y, cache = forward(self.params, self.spec, x)
        return (y + 1.0) / 2.0, cache

    def generate(self, conditions, rng):
        conditions = np.atleast_2d(conditions)
        payload, cache = self.run(self.sample_noise(len(conditions), rng), conditions)
        return payload, cache

    def apply_payload_gradient(self, cache, d_payload):
        # payload = (tanh_out + 1) / 2
        grads = backward(self.params, self.spec, cache, d_payload * 0.5)
        nets.optimizer_step(self.params, self.optimizer, grads)


class _Critic:
    def __init__(self, config: GanConfig, output_activation: str, rng):
        self.config = config
        self.spec = NetworkSpec(
            layer_sizes=(config.condition_dim + config.payload_dim,
                         *config.critic_hidden, 1),
            leak=config.leak, output_activation=output_activation,
            init_stddev=config.init_stddev)
        self.params = init_network(self.spec, rng)
        self.optimizer = AdamState(config.learning_rate, config.adam_beta1,
                                   config.adam_beta2)

    def join(self, conditions, payloads) -> np.ndarray:
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        payloads = np.atleast_2d(np.asarray(payloads, dtype=np.float64))
        return np.concatenate([conditions, payloads], axis=1)

    def value(self, conditions, payloads):
        y, cache = forward(self.params, self.spec, self.join(conditions, payloads))
        return y[:, 0], cache


def input_gradient_pass(params, spec: NetworkSpec, x):
    """Scalar-output forward plus exact input gradients.

    Returns (values, input_gradients, masks, deltas) where masks are the
    hidden leaky-ReLU derivative factors and deltas[l] is d value / d z_l.
    Requires a piecewise-linear network (leaky-ReLU hidden, linear output,
    no dropout) so the factors are locally constant; penalty_parameter_grads
    relies on exactly that property.
    """
    if spec.output_activation != "linear" or spec.dropout != 0.0:
        raise ValueError("input-gradient pass needs a linear-output, dropout-free net")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = spec.num_layers
    h = x
    masks = []
    for layer in range(n - 1):
        z = h @ params.weights[layer].T + params.biases[layer]
        masks.append(nets.leaky_relu_grad(z, spec.leak))
        h = nets.leaky_relu(z, spec.leak)
    y = h @ params.weights[n - 1].T + params.biases[n - 1]

    deltas = [None] * n
    deltas[n - 1] = np.ones((len(x), 1))
    for layer in range(n - 1, 0, -1):
        deltas[layer - 1] = (deltas[layer] @ params.weights[layer]) * masks[layer - 1]
    input_grad = deltas[0] @ params.weights[0]
    return y[:, 0], input_grad, masks, deltas


def penalty_parameter_grads(params, masks, deltas, d_input_grad) -> GradientSet:
    """Backpropagate a gradient w.r.t. the input-gradient onto the weights.

    Valid almost everywhere for piecewise-linear networks, where the
    activation factors do not move under infinitesimal weight perturbations.
    Bias gradients are identically zero there.
    """
    n = len(params.weights)
    d_weights = [np.zeros_like(w) for w in params.weights]
    d_biases = [np.zeros_like(b) for b in params.biases]
    s = np.asarray(d_input_grad, dtype=np.float64)
    d_weights[0] += deltas[0].T @ s
    s = s @ params.weights[0].T
    for layer in range(1, n):
        v = s * masks[layer - 1]
        d_weights[layer] += deltas[layer].T @ v
        s = v @ params.weights[layer].T
    return GradientSet(d_weights, d_biases)


def interpolate_payloads(real, fake, rng):
    """Per-pair convex mix u*real + (1-u)*fake, u ~ Uniform(0, 1)."""
    real = np.atleast_2d(real)
    fake = np.atleast_2d(fake)
    u = rng.random((len(real), 1))
    return u * real + (1.0 - u) * fake


def gradient_penalty_terms(critic: _Critic, conditions, mixed_payloads):
    """Penalty mean((|grad| - 1)^2) plus its exact parameter gradients.

    The norm is taken over the payload components of the critic's input
    gradient; conditions pass through unmixed and unpenalized.
    """
    cfg = critic.config
    x = critic.join(conditions, mixed_payloads)
    _, g_full, masks, deltas = input_gradient_pass(critic.params, critic.spec, x)
    g_pay = g_full[:, cfg.condition_dim:]
    norms = np.sqrt(np.sum(g_pay * g_pay, axis=1))
    batch = len(norms)
    penalty = float(np.mean((norms - 1.0) ** 2))

    safe = np.maximum(norms, 1e-12)
    coef = 2.0 * (norms - 1.0) / (batch * safe)
    coef[norms < 1e-12] = 0.0
    d_g = np.zeros_like(g_full)
    d_g[:, cfg.condition_dim:] = coef[:, None] * g_pay
    grads = penalty_parameter_grads(critic.params, masks, deltas, d_g)
    return penalty, grads, g_pay


def gradient_penalty(critic: _Critic, real_batch: ConditionedBatch,
                     fake_payloads, rng) -> float:
    """The lambda-free penalty value on freshly interpolated pairs."""
    mixed = interpolate_payloads(real_batch.payloads, fake_payloads, rng)
    penalty, _, _ = gradient_penalty_terms(critic, real_batch.conditions, mixed)
    return penalty


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softplus(x):
    return np.logaddexp(0.0, x)


class Gan:
    """Original minimax GAN with a sigmoid discriminator head.

    The generator uses the non-saturating objective (ascend log D(fake)), so
    it keeps a usable gradient even when the discriminator dominates.
    """

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        self.config = config
        self.generator = _Generator(config, rng)
        self.discriminator = _Critic(config, "sigmoid", rng)

    def generate(self, conditions, rng) -> np.ndarray:
        return self.generator.generate(conditions, rng)[0]

    def discriminator_step(self, batch: ConditionedBatch, rng) -> float:
        n = len(batch)
        fake, _ = self.generator.generate(batch.conditions, rng)
        disc = self.discriminator
        x = np.concatenate([disc.join(batch.conditions, batch.payloads),
                            disc.join(batch.conditions, fake)])
        _, cache = forward(disc.params, disc.spec, x)
        logits = cache.pre_activations[-1][:, 0]
        lr, lf = logits[:n], logits[n:]
        loss = float(np.mean(_softplus(-lr)) + np.mean(_softplus(lf)))
        d_logit = np.concatenate([-_sigmoid(-lr), _sigmoid(lf)])[:, None] / n
        grads = backward(disc.params, disc.spec, cache, d_logit,
                         wrt_preactivation=True)
        nets.optimizer_step(disc.params, disc.optimizer, grads)
        return loss

    def generator_step(self, conditions, rng) -> float:
        n = len(np.atleast_2d(conditions))
        fake, gen_cache = self.generator.generate(conditions, rng)
        disc = self.discriminator
        _, cache = forward(disc.params, disc.spec, disc.join(conditions, fake))
        logits = cache.pre_activations[-1][:, 0]
        loss = float(np.mean(_softplus(-logits)))
        d_logit = (-_sigmoid(-logits))[:, None] / n
        d_input = backward(disc.params, disc.spec, cache, d_logit,
                           wrt_preactivation=True).input_gradient
        self.generator.apply_payload_gradient(
            gen_cache, d_input[:, self.config.condition_dim:])
        return loss

    def train_step(self, batch: ConditionedBatch, rng):
        if len(batch) == 0:
            raise ValueError("empty batch")
        for _ in range(self.config.critic_steps):
            d_loss = self.discriminator_step(batch, rng)
        g_loss = self.generator_step(batch.conditions, rng)
        return d_loss, g_loss


class _WassersteinBase:
    def __init__(self, config: GanConfig, rng):
        self.config = config
        self.generator = _Generator(config, rng)
        self.critic = _Critic(config, "linear", rng)

    def generate(self, conditions, rng) -> np.ndarray:
        return self.generator.generate(conditions, rng)[0]

    def critic_estimate(self, batch: ConditionedBatch, rng) -> float:
        """E[D(real)] - E[D(fake)] under the current networks."""
        fake, _ = self.generator.generate(batch.conditions, rng)
        real_v, _ = self.critic.value(batch.conditions, batch.payloads)
        fake_v, _ = self.critic.value(batch.conditions, fake)
        return float(real_v.mean() - fake_v.mean())

    def _base_critic_grads(self, conditions, real_payloads, fake_payloads):
        """Gradients of -(E[D(real)] - E[D(fake)]) plus the estimate itself."""
        n = len(np.atleast_2d(real_payloads))
        x = np.concatenate([self.critic.join(conditions, real_payloads),
                            self.critic.join(conditions, fake_payloads)])
        values, cache = forward(self.critic.params, self.critic.spec, x)
        values = values[:, 0]
        estimate = float(values[:n].mean() - values[n:].mean())
        d_out = np.concatenate([np.full(n, -1.0 / n), np.full(n, 1.0 / n)])[:, None]
        grads = backward(self.critic.params, self.critic.spec, cache, d_out)
        return estimate, grads

    def generator_step(self, conditions, rng) -> float:
        """Descend -E[D(G(z)))] through the frozen critic."""
        conditions = np.atleast_2d(conditions)
        n = len(conditions)
        fake, gen_cache = self.generator.generate(conditions, rng)
        values, cache = forward(self.critic.params, self.critic.spec,
                                self.critic.join(conditions, fake))
        loss = float(-values[:, 0].mean())
        d_out = np.full((n, 1), -1.0 / n)
        d_input = backward(self.critic.params, self.critic.spec, cache,
                           d_out).input_gradient
        self.generator.apply_payload_gradient(
            gen_cache, d_input[:, self.config.condition_dim:])
        return loss


class Wgan(_WassersteinBase):
    """Wasserstein GAN with the Lipschitz bound enforced by weight clipping."""

    def critic_update(self, conditions, real_payloads, fake_payloads) -> float:
        estimate, grads = self._base_critic_grads(conditions, real_payloads,
                                                  fake_payloads)
        nets.optimizer_step(self.critic.params, self.critic.optimizer, grads)
        c = self.config.clip_constant
        for a in self.critic.params.arrays():
            np.clip(a, -c, c, out=a)
        return estimate

    def critic_step(self, batch: ConditionedBatch, rng) -> float:
        fake, _ = self.generator.generate(batch.conditions, rng)
        return self.critic_update(batch.conditions, batch.payloads, fake)

    def train_step(self, batch: ConditionedBatch, rng):
        if len(batch) == 0:
            raise ValueError("empty batch")
        for _ in range(self.config.critic_steps):
            estimate = self.critic_step(batch, rng)
        g_loss = self.generator_step(batch.conditions, rng)
        return estimate, g_loss


class WganGp(_WassersteinBase):
    """WGAN with a gradient penalty in place of weight clipping.

    Critic loss: -(E[D(real)] - E[D(fake)]) + lambda * E[(|grad D| - 1)^2]
    on real/fake interpolates; lambda = 0 recovers the unclipped WGAN
    objective exactly.
    """

    def critic_update(self, conditions, real_payloads, fake_payloads, rng):
        estimate, grads = self._base_critic_grads(conditions, real_payloads,
                                                  fake_payloads)
        lam = self.config.penalty_coeff
        penalty = 0.0
        if lam > 0.0:
            mixed = interpolate_payloads(real_payloads, fake_payloads, rng)
            penalty, pen_grads, _ = gradient_penalty_terms(self.critic, conditions,
                                                           mixed)
            for g, pg in zip(grads.arrays(), pen_grads.arrays()):
                g += lam * pg
        nets.optimizer_step(self.critic.params, self.critic.optimizer, grads)
        return estimate, penalty

    def critic_step(self, batch: ConditionedBatch, rng):
        fake, _ = self.generator.generate(batch.conditions, rng)
        return self.critic_update(batch.conditions, batch.payloads, fake, rng)

    def critic_loss(self, batch: ConditionedBatch, fake_payloads, rng) -> float:
        """Loss value only (no update); used to cross-check objectives."""
        real_v, _ = self.critic.value(batch.conditions, batch.payloads)
        fake_v, _ = self.critic.value(batch.conditions, fake_payloads)
        loss = float(-(real_v.mean() - fake_v.mean()))
        if self.config.penalty_coeff > 0.0:
            loss += self.config.penalty_coeff * gradient_penalty(
                self.critic, ConditionedBatch(batch.conditions, batch.payloads),
                fake_payloads, rng)
        return loss

    def train_step(self, batch: ConditionedBatch, rng):
        if len(batch) == 0:
            raise ValueError("empty batch")
        for _ in range(self.config.critic_steps):
            estimate, _ = self.critic_step(batch, rng)
        g_loss = self.generator_step(batch.conditions, rng)
        return estimate, g_loss
