"""Off-policy actor-critic agents with scikit-learn style estimators.

:class:`GACAgent` drives actions through spherical mixing and uses the
concentration score as its exploration term. :class:`GaussianSACAgent` is the
tanh-squashed Gaussian baseline with a fixed entropy temperature. Both share
the replay buffer, twin critics, Polyak targets and the training loop.

``fit(env)`` trains, ``predict(X)`` returns deterministic actions and
``sample(X, rng)`` stochastic ones.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from gaclab._validation import check_states
from gaclab.geometry import mixing_weight, sample_uniform_sphere, spherical_mix, spherical_mix_backward
from gaclab.netcore import DivergenceError, GACPolicy, GaussianPolicy, critic_network
from gaclab.rng import RngStreams

logger = logging.getLogger(__name__)

NO_KAPPA_VALUE = 1.0


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform batch sampling."""

    def __init__(self, capacity, obs_dim, action_dim, dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=dtype)
        self.next_states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.dones = np.zeros(capacity, dtype=dtype)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state, done):
        if not math.isfinite(reward):
            raise ValueError("reward must be finite")
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        return rng.choice(self.size, size=min(batch_size, self.size), replace=False)

    def sample(self, batch_size, rng):
        idx = self.sample_indices(batch_size, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])

    def get(self, i):
        """Transition at storage slot ``i`` (not insertion order)."""
        return Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.dones[i]))


@dataclass
class TrainConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    radius: float = 2.5
    steps: int = 50_000
    warmup: int = 1000
    alpha: float = 0.2
    no_kappa: bool = False
    no_normalize: bool = False
    kappa_max: float = 5.0
    seed: int = 0
    buffer_size: int = 100_000
    hidden: int = 256
    log_every: int = 1000
    final_window: int = 20
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.steps < 0 or self.warmup < 0:
            raise ValueError("steps and warmup must be non-negative")


LOG_COLUMNS = ("step", "actor_loss", "critic_loss", "kappa_mean", "kappa_min", "kappa_max",
               "episode_return")


@dataclass
class TrainReport:
    """What a training run produced.

    ``rows`` holds one record per logging window with the columns in
    :data:`LOG_COLUMNS`; ``status`` is ``"completed"`` or ``"diverged"``.
    """

    rows: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)
    episode_final_distances: list = field(default_factory=list)
    status: str = "completed"
    diverged_step: int | None = None
    steps_done: int = 0
    max_action_norm: float = 0.0
    unbounded_action: bool = False
    final_window: int = 20
    pre_squash: np.ndarray | None = None

    @property
    def diverged(self):
        return self.status == "diverged"

    def final_window_return(self):
        tail = self.episode_returns[-self.final_window:]
        return float(np.mean(tail)) if tail else float("nan")

    def final_window_step_reward(self):
        tail_r = self.episode_returns[-self.final_window:]
        tail_n = self.episode_lengths[-self.final_window:]
        return float(np.sum(tail_r) / np.sum(tail_n)) if tail_n else float("nan")

    def final_window_distance(self):
        tail = self.episode_final_distances[-self.final_window:]
        return float(np.mean(tail)) if tail else float("nan")


class _WindowStats:
    def __init__(self):
        self.reset()

    def reset(self):
        self.actor = []
        self.critic = []
        self.k_mean = []
        self.k_min = math.inf
        self.k_max = -math.inf
        self.returns = []

    def add_update(self, actor_loss, critic_loss, kappa):
        self.actor.append(actor_loss)
        self.critic.append(critic_loss)
        if kappa is None:
            return
        self.k_mean.append(float(np.mean(kappa)))
        self.k_min = min(self.k_min, float(np.min(kappa)))
        self.k_max = max(self.k_max, float(np.max(kappa)))

    def row(self, step):
        nan = float("nan")
        return {
            "step": step,
            "actor_loss": float(np.mean(self.actor)) if self.actor else nan,
            "critic_loss": float(np.mean(self.critic)) if self.critic else nan,
            "kappa_mean": float(np.mean(self.k_mean)) if self.k_mean else nan,
            "kappa_min": self.k_min if self.k_mean else nan,
            "kappa_max": self.k_max if self.k_mean else nan,
            "episode_return": float(np.mean(self.returns)) if self.returns else nan,
        }


def soft_update(critics, targets, tau):
    """Polyak-average each critic into its target network."""
    for c, t in zip(critics, targets):
        t.soft_update_from(c, tau)


def critic_loss_value(q1, q2, y):
    """Sum over both critics of the mean squared error to ``y``."""
    return float(np.mean((q1 - y) ** 2) + np.mean((q2 - y) ** 2))


class _ActorCritic(BaseEstimator):
    """Training loop shared by the GAC agent and the Gaussian baseline."""

    def _config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    @classmethod
    def from_config(cls, config, **extra):
        params = {k: v for k, v in asdict(config).items() if k in cls._get_param_names()}
        params.update(extra)
        return cls(**params)

    # subclass hooks -------------------------------------------------------
    def _build_policy(self, obs_dim, action_dim, rng, dtype):
        raise NotImplementedError

    def _act_batch(self, states, rng, deterministic):
        raise NotImplementedError

    def _bootstrap_term(self, next_states, rng):
        """Next actions and the additive exploration term of the soft target."""
        raise NotImplementedError

    def _actor_update(self, states, rng):
        raise NotImplementedError

    # ----------------------------------------------------------------------
    def _setup(self, env):
        cfg = self._config()
        self.config_ = cfg
        self.dtype_ = np.dtype(cfg.dtype)
        self.streams_ = RngStreams(cfg.seed)
        spec = env.spec
        self.env_spec_ = spec
        self.n_features_in_ = spec.observation_dim
        self.action_dim_ = spec.action_dim
        init = self.streams_["policy-init"]
        self.policy_ = self._build_policy(spec.observation_dim, spec.action_dim, init, self.dtype_)
        self.critics_ = [critic_network(spec.observation_dim, spec.action_dim, init,
                                        self.dtype_, cfg.hidden) for _ in range(2)]
        self.targets_ = [c.copy() for c in self.critics_]
        self.buffer_ = ReplayBuffer(cfg.buffer_size, spec.observation_dim, spec.action_dim,
                                    self.dtype_)
        return cfg

    def _q(self, nets, states, actions):
        x = np.concatenate([states, actions], axis=-1)
        caches = [n.forward(x) for n in nets]
        return caches, caches[0].output[:, 0], caches[1].output[:, 0]

    def _critic_update(self, batch, rng):
        cfg = self.config_
        s, a, r, s2, done = batch
        a2, extra = self._bootstrap_term(s2, rng)
        _, q1t, q2t = self._q(self.targets_, s2, a2)
        y = r + cfg.gamma * (1.0 - done) * (np.minimum(q1t, q2t) + extra)
        caches, q1, q2 = self._q(self.critics_, s, a)
        n = len(y)
        for net, cache, q in zip(self.critics_, caches, (q1, q2)):
            net.backward(cache, (2.0 * (q - y) / n)[:, None], input_grad=False)
            net.adam_step(cfg.critic_lr)
        return critic_loss_value(q1, q2, y)

    def _min_q_action_grad(self, states, actions, weight):
        """``min(Q1, Q2)`` at ``(s, a)`` and the gradient of ``weight * sum(min Q)`` w.r.t. ``a``.

        Ties go to the first critic. Critic parameters receive no gradient.
        """
        caches, q1, q2 = self._q(self.critics_, states, actions)
        first = q1 <= q2
        q = np.where(first, q1, q2)
        g = np.zeros_like(actions)
        for net, cache, mask in zip(self.critics_, caches, (first, ~first)):
            gin = net.backward(cache, (weight * mask)[:, None].astype(self.dtype_),
                               accumulate=False)
            g += gin[:, self.n_features_in_:]
        return q, g

    def _gradient_step(self, rng_noise, rng_replay):
        cfg = self.config_
        batch = self.buffer_.sample(cfg.batch_size, rng_replay)
        c_loss = self._critic_update(batch, rng_noise)
        a_loss, kappa = self._actor_update(batch[0], rng_noise)
        soft_update(self.critics_, self.targets_, cfg.tau)
        if not (math.isfinite(c_loss) and math.isfinite(a_loss)):
            raise DivergenceError("non-finite loss")
        for net in self.critics_ + list(self.policy_.networks().values()):
            if not net.all_finite():
                raise DivergenceError("non-finite parameters")
        return a_loss, c_loss, kappa

    def fit(self, env, y=None):
        """Train on ``env`` for ``steps`` environment steps.

        Divergence (a non-finite loss, gradient or parameter) stops the loop
        and is recorded in ``report_`` instead of raising.
        """
        cfg = self._setup(env)
        report = TrainReport(final_window=cfg.final_window)
        self.report_ = report
        rng_env, rng_noise = self.streams_["env"], self.streams_["noise"]
        rng_replay = self.streams_["replay"]
        env.seed(rng_env)
        obs = env.reset()
        ep_return, ep_len = 0.0, 0
        window = _WindowStats()
        pre_log = []
        step = 0
        try:
            for step in range(1, cfg.steps + 1):
                if step <= cfg.warmup:
                    action = env.sample_action(rng_noise)
                else:
                    action = self._act_batch(obs[None, :], rng_noise, deterministic=False)[0]
                    if not np.all(np.isfinite(action)):
                        raise DivergenceError("non-finite action")
                    report.max_action_norm = max(report.max_action_norm,
                                                 float(np.linalg.norm(action)))
                    if self._last_pre_squash is not None:
                        pre_log.append(self._last_pre_squash[0])
                res = env.step(action)
                self.buffer_.push(obs, action, res.reward, res.next_observation, res.terminated)
                ep_return += res.reward
                ep_len += 1
                obs = res.next_observation
                if res.terminated or res.truncated:
                    report.episode_returns.append(ep_return)
                    report.episode_lengths.append(ep_len)
                    window.returns.append(ep_return)
                    if "distance" in res.info:
                        report.episode_final_distances.append(res.info["distance"])
                    obs = env.reset()
                    ep_return, ep_len = 0.0, 0
                if step > cfg.warmup and len(self.buffer_) >= 1:
                    a_loss, c_loss, kappa = self._gradient_step(rng_noise, rng_replay)
                    window.add_update(a_loss, c_loss, kappa)
                report.steps_done = step
                if step % cfg.log_every == 0:
                    report.rows.append(window.row(step))
                    window.reset()
        except (DivergenceError, FloatingPointError) as exc:
            report.status = "diverged"
            report.diverged_step = step
            logger.warning("training diverged at step %d: %s", step, exc)
        if report.status == "completed" and report.steps_done % cfg.log_every and window.actor + window.returns:
            report.rows.append(window.row(report.steps_done))
        report.unbounded_action = self._action_bound_exceeded(report.max_action_norm)
        if pre_log:
            report.pre_squash = np.asarray(pre_log, dtype=np.float64)
        return self

    def _action_bound_exceeded(self, max_norm):
        return False

    def predict(self, X):
        """Deterministic actions for a batch of observations."""
        check_is_fitted(self, "policy_")
        X = check_states(X, self.n_features_in_, self.dtype_)
        return self._act_batch(X, None, deterministic=True).astype(np.float64)

    def sample(self, X, rng):
        """Stochastic actions for a batch of observations."""
        check_is_fitted(self, "policy_")
        X = check_states(X, self.n_features_in_, self.dtype_)
        return self._act_batch(X, rng, deterministic=False).astype(np.float64)

    def evaluate(self, env, episodes, rng, deterministic=True, record=False):
        """Roll out ``episodes`` episodes; return mean return and per-episode stats.

        With ``record=True`` the result also holds ``"trajectory"``: one
        ``(episode, t, observation, action, reward)`` tuple per step.
        """
        check_is_fitted(self, "policy_")
        env.seed(rng)
        returns, lengths, dists, steps = [], [], [], []
        for ep in range(episodes):
            obs = env.reset()
            total, n = 0.0, 0
            while True:
                if deterministic:
                    a = self.predict(obs)[0]
                else:
                    a = self.sample(obs, rng)[0]
                res = env.step(a)
                if record:
                    steps.append((ep, n, obs, a, res.reward))
                total += res.reward
                n += 1
                obs = res.next_observation
                if res.terminated or res.truncated:
                    if "distance" in res.info:
                        dists.append(res.info["distance"])
                    break
            returns.append(total)
            lengths.append(n)
        out = {"mean_return": float(np.mean(returns)), "returns": returns,
               "lengths": lengths, "final_distances": dists,
               "step_reward": float(np.sum(returns) / np.sum(lengths))}
        if record:
            out["trajectory"] = steps
        return out

    def networks(self):
        """All trainable and target networks keyed by checkpoint name."""
        check_is_fitted(self, "policy_")
        nets = {f"actor.{k}": v for k, v in self.policy_.networks().items()}
        for i, (c, t) in enumerate(zip(self.critics_, self.targets_), start=1):
            nets[f"critic{i}"] = c
            nets[f"target{i}"] = t
        return nets

    def load_networks(self, env_spec, nets):
        """Restore a fitted state from :func:`gaclab.netcore.load_checkpoint` output."""
        cfg = self._config()
        self.config_ = cfg
        self.dtype_ = np.dtype(cfg.dtype)
        self.env_spec_ = env_spec
        self.n_features_in_ = env_spec.observation_dim
        self.action_dim_ = env_spec.action_dim
        self.policy_ = self._build_policy(env_spec.observation_dim, env_spec.action_dim, None,
                                          self.dtype_)
        for name, net in self.policy_.networks().items():
            net.load_state(nets[f"actor.{name}"])
        self.critics_ = [critic_network(env_spec.observation_dim, env_spec.action_dim, None,
                                        self.dtype_, cfg.hidden) for _ in range(2)]
        self.targets_ = [c.copy() for c in self.critics_]
        for i in range(2):
            if f"critic{i + 1}" in nets:
                self.critics_[i].load_state(nets[f"critic{i + 1}"])
                self.targets_[i].load_state(nets[f"target{i + 1}"])
        return self


class GACAgent(_ActorCritic):
    """Actor-critic agent whose actions come from spherical mixing.

    Parameters mirror :class:`TrainConfig`. ``no_kappa`` pins the mixing
    weight at ``sigmoid(1)`` and drops the concentration term from both
    losses; ``no_normalize`` removes both normalizations so the action is
    ``radius * (w * f(s) + (1 - w) * xi)`` with the raw direction ``f(s)``.
    """

    _last_pre_squash = None

    def __init__(self, radius=2.5, gamma=0.99, tau=0.005, batch_size=256, actor_lr=3e-4,
                 critic_lr=1e-3, steps=50_000, warmup=1000, no_kappa=False,
                 no_normalize=False, kappa_max=5.0, seed=0, buffer_size=100_000, hidden=256,
                 log_every=1000, final_window=20, dtype="float32"):
        self.radius = radius
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.steps = steps
        self.warmup = warmup
        self.no_kappa = no_kappa
        self.no_normalize = no_normalize
        self.kappa_max = kappa_max
        self.seed = seed
        self.buffer_size = buffer_size
        self.hidden = hidden
        self.log_every = log_every
        self.final_window = final_window
        self.dtype = dtype

    def _build_policy(self, obs_dim, action_dim, rng, dtype):
        return GACPolicy(obs_dim, action_dim, rng=rng, dtype=dtype, hidden=self.hidden)

    def policy_output(self, states):
        """Direction and concentration for a batch of states (ablations applied)."""
        out, cache = self.policy_.forward(states, normalize_direction=not self.no_normalize)
        if self.no_kappa:
            out.kappa = np.full_like(out.kappa, NO_KAPPA_VALUE)
            out.kappa_active = np.zeros_like(out.kappa)
        else:
            bound = self.kappa_max
            # the clamp passes gradient only strictly inside the bound
            out.kappa_active = (np.abs(out.kappa) < bound).astype(out.kappa.dtype)
            out.kappa = np.clip(out.kappa, -bound, bound)
        return out, cache

    def _mix(self, out, xi):
        """Action and a backward closure for the current ablation setting."""
        r = self.radius
        if self.no_normalize:
            w = mixing_weight(out.kappa)[:, None]
            v = w * out.mu_raw + (1.0 - w) * xi
            action = r * v

            def backward(g_a):
                g_v = r * g_a
                g_kappa = (w * (1.0 - w))[:, 0] * np.sum((out.mu_raw - xi) * g_v, axis=-1)
                return w * g_v, g_kappa

            return action, backward
        rec = spherical_mix(out.mu, out.kappa, xi, r, mu_raw=out.mu_raw)
        if np.any(rec.degenerate):
            logger.debug("degenerate mixture in %d rows", int(rec.degenerate.sum()))
        return rec.action, lambda g_a: spherical_mix_backward(rec, g_a)

    def _act_batch(self, states, rng, deterministic):
        out, _ = self.policy_output(states)
        if np.any(out.degenerate):
            logger.warning("degenerate policy direction for %d states", int(out.degenerate.sum()))
        if deterministic:
            return self.radius * (out.mu_raw if self.no_normalize else out.mu)
        xi = sample_uniform_sphere(self.action_dim_, rng, size=len(states), dtype=self.dtype_)
        return self._mix(out, xi)[0]

    def _bootstrap_term(self, next_states, rng):
        out, _ = self.policy_output(next_states)
        xi = sample_uniform_sphere(self.action_dim_, rng, size=len(next_states), dtype=self.dtype_)
        action, _ = self._mix(out, xi)
        extra = np.zeros_like(out.kappa) if self.no_kappa else -out.kappa
        return action, extra

    def actor_loss(self, states, rng, xi=None):
        """Loss ``mean(-kappa(s) - min_i Q_i(s, a))`` with gradients left in the policy.

        Returns ``(loss, kappa)``. Critic parameters are not touched.
        """
        n = len(states)
        out, cache = self.policy_output(states)
        if xi is None:
            xi = sample_uniform_sphere(self.action_dim_, rng, size=n, dtype=self.dtype_)
        action, mix_backward = self._mix(out, xi)
        q, g_action = self._min_q_action_grad(states, action, -1.0 / n)
        g_mu_raw, g_kappa = mix_backward(g_action)
        if self.no_kappa:
            loss = float(np.mean(-q))
            g_kappa = np.zeros_like(g_kappa)
        else:
            loss = float(np.mean(-out.kappa - q))
            g_kappa = (g_kappa - 1.0 / n) * out.kappa_active
        self.policy_.backward(cache, g_mu_raw, g_kappa, input_grad=False)
        return loss, out.kappa

    def _actor_update(self, states, rng):
        loss, kappa = self.actor_loss(states, rng)
        self.policy_.adam_step(self.config_.actor_lr)
        return loss, kappa

    def _action_bound_exceeded(self, max_norm):
        return max_norm > self.radius * (1.0 + 1e-5)


class GaussianSACAgent(_ActorCritic):
    """Tanh-squashed diagonal Gaussian baseline with fixed temperature ``alpha``.

    Squashed actions in (-1, 1) are affinely mapped onto the environment's
    action box. Pre-squash samples drawn while acting are kept in
    ``report_.pre_squash`` for saturation analysis.
    """

    def __init__(self, alpha=0.2, gamma=0.99, tau=0.005, batch_size=256, actor_lr=3e-4,
                 critic_lr=1e-3, steps=50_000, warmup=1000, seed=0, buffer_size=100_000,
                 hidden=256, log_every=1000, final_window=20, dtype="float32"):
        self.alpha = alpha
        self.gamma = gamma
        self.tau = tau
        self.batch_size = batch_size
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.steps = steps
        self.warmup = warmup
        self.seed = seed
        self.buffer_size = buffer_size
        self.hidden = hidden
        self.log_every = log_every
        self.final_window = final_window
        self.dtype = dtype

    _last_pre_squash = None

    def _build_policy(self, obs_dim, action_dim, rng, dtype):
        return GaussianPolicy(obs_dim, action_dim, rng=rng, dtype=dtype, hidden=self.hidden)

    @property
    def _scale(self):
        spec = self.env_spec_
        return ((spec.action_high - spec.action_low) / 2.0).astype(self.dtype_)

    @property
    def _offset(self):
        spec = self.env_spec_
        return ((spec.action_high + spec.action_low) / 2.0).astype(self.dtype_)

    def _act_batch(self, states, rng, deterministic):
        out, _ = self.policy_.forward(states)
        if deterministic:
            return self._scale * np.tanh(out.mean) + self._offset
        squashed, _, pre, _ = self.policy_.sample(out, rng)
        self._last_pre_squash = pre
        return self._scale * squashed + self._offset

    def _bootstrap_term(self, next_states, rng):
        out, _ = self.policy_.forward(next_states)
        squashed, log_prob, _, _ = self.policy_.sample(out, rng)
        return self._scale * squashed + self._offset, -self.alpha * log_prob

    def actor_loss(self, states, rng, noise=None):
        """Loss ``mean(alpha * log pi(a|s) - min_i Q_i(s, a))``; gradients left in the policy."""
        n = len(states)
        out, cache = self.policy_.forward(states)
        squashed, log_prob, pre, z = self.policy_.sample(out, rng, noise=noise)
        action = self._scale * squashed + self._offset
        q, g_action = self._min_q_action_grad(states, action, -1.0 / n)
        loss = float(np.mean(self.alpha * log_prob - q))
        g_logp = self.alpha / n
        one_minus = 1.0 - squashed**2
        # d/d pre of -log(1 - tanh^2 + 1e-6)
        corr = 2.0 * squashed * one_minus / (one_minus + 1e-6)
        g_pre = g_action * self._scale * one_minus + g_logp * corr
        std = np.exp(out.log_std)
        g_mean = g_pre
        g_log_std = g_pre * std * z - g_logp
        self.policy_.backward(cache, g_mean, g_log_std, input_grad=False)
        return loss, None

    def _actor_update(self, states, rng):
        loss, kappa = self.actor_loss(states, rng)
        self.policy_.adam_step(self.config_.actor_lr)
        return loss, kappa


def train(env, config):
    """Train a GAC agent and return its :class:`TrainReport`."""
    return GACAgent.from_config(config).fit(env).report_


def train_baseline(env, config):
    """Train the Gaussian baseline and return its :class:`TrainReport`."""
    return GaussianSACAgent.from_config(config).fit(env).report_
