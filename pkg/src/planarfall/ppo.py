"""On-policy asymmetric actor-critic PPO.

The actor only ever sees its own (possibly noisy) observation; the critic
is evaluated on the privileged observation during collection and trained
against GAE return targets. Collection and update are deterministic given
the seeds: env streams drive action noise, a dedicated trainer stream
drives minibatch shuffles.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .env import FallEnv
from .rewards import TERM_NAMES


class PpoError(RuntimeError):
    pass


@dataclass
class PpoConfig:
    envs: int = 256
    steps: int = 100
    epochs: int = 5
    minibatches: int = 4
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    max_grad_norm: float = 1.0
    iterations: int = 2000
    lr: float = 3e-4
    actor_hidden: tuple[int, ...] = (256, 128)
    critic_hidden: tuple[int, ...] = (256, 128)
    init_log_std: float = 0.0
    checkpoint_every: int = 500

    def __post_init__(self):
        for name in ("envs", "steps", "epochs", "minibatches", "iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.clip < 1.0):
            raise ValueError("clip must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")


@dataclass
class RolloutBuffer:
    """Rectangular (envs x steps) on-policy batch."""

    actor_obs: np.ndarray    # (N, T, Da)
    critic_obs: np.ndarray   # (N, T, Dc)
    actions: np.ndarray      # (N, T, A)
    log_probs: np.ndarray    # (N, T)
    rewards: np.ndarray      # (N, T)
    values: np.ndarray       # (N, T)
    dones: np.ndarray        # (N, T) bool
    bootstrap: np.ndarray    # (N,)

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[1]


@dataclass
class EpisodeRecord:
    """Completed-episode bookkeeping for returns and the value-error metric."""

    start_value: float
    discounted_return: float
    episode_return: float
    success: bool


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-recursive generalized advantage estimation over (N, T) arrays.

    Terminal steps (done flags) bootstrap zero; the final step of a live
    episode bootstraps the provided value. Returns raw advantages and the
    value targets advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must share a shape")
    n, t_len = rewards.shape
    adv = np.zeros_like(rewards)
    carry = np.zeros(n)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[:, t].astype(np.float64)
        delta = rewards[:, t] + gamma * next_value * nonterminal - values[:, t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[:, t] = carry
        next_value = values[:, t]
    return adv, adv + values


class PolicyActor:
    """Callable actor: observation batch -> action batch (mean or sampled)."""

    def __init__(self, params: nets.MlpParams, obs_scale: np.ndarray,
                 deterministic: bool = True):
        self.params = params
        self.obs_scale = obs_scale.astype(np.float32)
        self.deterministic = deterministic

    def act(self, obs: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        mean, _ = nets.forward(self.params, obs * self.obs_scale[None, :])
        if self.deterministic or noise is None:
            return mean.astype(np.float64)
        return (mean + np.exp(self.params.log_std)[None, :] * noise).astype(np.float64)


def collect(env: FallEnv, actor: nets.MlpParams, critic: nets.MlpParams,
            steps: int, gamma: float,
            actor_scale: np.ndarray, critic_scale: np.ndarray,
            trackers: dict | None = None,
            deterministic: bool = False) -> tuple[RolloutBuffer, list[EpisodeRecord], dict]:
    """Roll the env batch forward `steps` control steps.

    `trackers` carries per-env episode accumulators across collection
    windows (episodes are longer than one window). Episodes auto-reset at
    the horizon inside the env.
    """
    n = env.n_envs
    a_dim = actor.sizes[-1]
    if trackers is None:
        trackers = {}
    start_value = trackers.get("start_value")
    disc_return = trackers.setdefault("disc_return", np.zeros(n))
    gamma_pow = trackers.setdefault("gamma_pow", np.ones(n))
    epi_return = trackers.setdefault("epi_return", np.zeros(n))
    term_sums = trackers.setdefault("term_sums", np.zeros((n, len(TERM_NAMES))))

    actor_obs = np.empty((n, steps, actor.sizes[0]), dtype=np.float32)
    critic_obs = np.empty((n, steps, critic.sizes[0]), dtype=np.float32)
    actions = np.empty((n, steps, a_dim), dtype=np.float64)
    log_probs = np.empty((n, steps), dtype=np.float64)
    rewards = np.empty((n, steps), dtype=np.float64)
    values = np.empty((n, steps), dtype=np.float64)
    dones = np.zeros((n, steps), dtype=bool)
    records: list[EpisodeRecord] = []
    term_totals = np.zeros(len(TERM_NAMES))
    fault_count = 0

    for t in range(steps):
        a_obs = env.observe_actor().astype(np.float32)
        c_obs = env.observe_critic().astype(np.float32)
        mean, _ = nets.forward(actor, a_obs * actor_scale[None, :].astype(np.float32))
        v, _ = nets.forward(critic, c_obs * critic_scale[None, :].astype(np.float32))
        v = v[:, 0].astype(np.float64)
        if start_value is None:
            start_value = v.copy()
            trackers["start_value"] = start_value
        if deterministic:
            act = mean.astype(np.float64)
            logp = nets.gaussian_log_prob(mean.astype(np.float64),
                                          actor.log_std.astype(np.float64), act)
        else:
            noise = env.draw_action_noise(a_dim)
            act, logp = nets.gaussian_sample(mean.astype(np.float64),
                                             actor.log_std.astype(np.float64), noise)
        res = env.control_step(act)

        actor_obs[:, t] = a_obs
        critic_obs[:, t] = c_obs
        actions[:, t] = act
        log_probs[:, t] = logp
        rewards[:, t] = res.reward
        values[:, t] = v
        dones[:, t] = res.done

        disc_return += gamma_pow * res.reward
        gamma_pow *= gamma
        epi_return += res.reward
        term_sums += res.breakdown
        term_totals += res.breakdown.sum(axis=0)
        fault_count += int(res.fault.sum())

        done_idx = np.flatnonzero(res.done)
        for i in done_idx:
            records.append(EpisodeRecord(
                start_value=float(start_value[i]),
                discounted_return=float(disc_return[i]),
                episode_return=float(epi_return[i]),
                success=bool(res.final_success[i]),
            ))
            disc_return[i] = 0.0
            gamma_pow[i] = 1.0
            epi_return[i] = 0.0
            term_sums[i] = 0.0
        if len(done_idx):
            c_next = env.observe_critic().astype(np.float32)
            v_next, _ = nets.forward(critic, c_next * critic_scale[None, :].astype(np.float32))
            start_value[done_idx] = v_next[done_idx, 0].astype(np.float64)

    c_obs = env.observe_critic().astype(np.float32)
    v_boot, _ = nets.forward(critic, c_obs * critic_scale[None, :].astype(np.float32))
    buffer = RolloutBuffer(actor_obs, critic_obs, actions, log_probs, rewards,
                           values, dones, v_boot[:, 0].astype(np.float64))
    info = {"term_totals": term_totals, "faults": fault_count}
    return buffer, records, info


def value_error(records: list[EpisodeRecord]) -> float:
    """MSE between the critic's episode-start value estimate and the realized
    discounted episode return."""
    if not records:
        raise PpoError("value error undefined: no completed episode")
    err = np.array([r.start_value - r.discounted_return for r in records])
    return float(np.mean(err * err))


@dataclass
class TrainStats:
    iteration: int
    env_steps: int
    wall_time: float
    mean_return: float
    success_rate: float
    value_error: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    mean_terms: np.ndarray  # (10,) mean per-step scaled term values
    faults: int = 0
    aborted: bool = False

    CSV_FIELDS = ("iteration", "env_steps", "wall_time", "mean_return", "success_rate",
                  "value_error", "policy_loss", "value_loss", "entropy", "clip_fraction",
                  "faults", "aborted")

    def csv_row(self) -> list:
        row = [self.iteration, self.env_steps, f"{self.wall_time:.3f}"]
        row += [repr(float(v)) for v in (self.mean_return, self.success_rate, self.value_error,
                                         self.policy_loss, self.value_loss, self.entropy,
                                         self.clip_fraction)]
        row += [self.faults, int(self.aborted)]
        row += [repr(float(v)) for v in self.mean_terms]
        return row

    @staticmethod
    def csv_header() -> list[str]:
        return list(TrainStats.CSV_FIELDS) + [f"rew_{n}" for n in TERM_NAMES]


def ppo_update(buffer: RolloutBuffer, actor: nets.MlpParams, critic: nets.MlpParams,
               actor_opt: nets.AdamState, critic_opt: nets.AdamState,
               cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate update over shuffled minibatches.

    A non-finite loss aborts the iteration and restores the pre-update
    parameters and optimizer state.
    """
    adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones,
                           buffer.bootstrap, cfg.gamma, cfg.lam)
    total = buffer.n_envs * buffer.n_steps
    a_obs = buffer.actor_obs.reshape(total, -1)
    c_obs = buffer.critic_obs.reshape(total, -1)
    actions = buffer.actions.reshape(total, -1)
    logp_old = buffer.log_probs.reshape(total)
    adv = adv.reshape(total)
    ret = ret.reshape(total)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)

    snap = (actor.copy(), critic.copy(),
            [m.copy() for m in actor_opt.m], [v.copy() for v in actor_opt.v], actor_opt.step,
            [m.copy() for m in critic_opt.m], [v.copy() for v in critic_opt.v], critic_opt.step)

    pol_losses, val_losses, clip_fracs = [], [], []
    entropy = nets.gaussian_entropy(actor.log_std.astype(np.float64))
    mb_size = total // cfg.minibatches
    for _ in range(cfg.epochs):
        perm = rng.permutation(total)
        for k in range(cfg.minibatches):
            idx = perm[k * mb_size:(k + 1) * mb_size]
            mean, cache_a = nets.forward(actor, a_obs[idx])
            mean64 = mean.astype(np.float64)
            log_std = actor.log_std.astype(np.float64)
            logp = nets.gaussian_log_prob(mean64, log_std, actions[idx])
            ratio = np.exp(logp - logp_old[idx])
            a_mb = adv_n[idx]
            unclipped = ratio * a_mb
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a_mb
            pol_loss = -np.mean(np.minimum(unclipped, clipped))
            entropy = nets.gaussian_entropy(log_std)
            use_ratio = unclipped <= clipped
            b = idx.shape[0]
            dlogp = np.where(use_ratio, -a_mb * ratio / b, 0.0)
            d_mean, d_log_std = nets.gaussian_log_prob_grads(mean64, log_std, actions[idx], dlogp)
            d_log_std -= cfg.entropy_coef  # entropy bonus, dH/dlog_std = 1 per dim
            grads_a = nets.backward(actor, cache_a, d_mean.astype(actor.dtype))
            grads_a.append(d_log_std.astype(actor.dtype))
            nets.clip_grad_norm(grads_a, cfg.max_grad_norm)

            v, cache_c = nets.forward(critic, c_obs[idx])
            verr = v[:, 0].astype(np.float64) - ret[idx]
            val_loss = cfg.value_coef * float(np.mean(verr * verr))
            dv = (cfg.value_coef * 2.0 * verr / b)[:, None]
            grads_c = nets.backward(critic, cache_c, dv.astype(critic.dtype))
            nets.clip_grad_norm(grads_c, cfg.max_grad_norm)

            if not (np.isfinite(pol_loss) and np.isfinite(val_loss)):
                actor.weights[:] = [w.copy() for w in snap[0].weights]
                actor.biases[:] = [b_.copy() for b_ in snap[0].biases]
                actor.log_std[:] = snap[0].log_std
                critic.weights[:] = [w.copy() for w in snap[1].weights]
                critic.biases[:] = [b_.copy() for b_ in snap[1].biases]
                actor_opt.m[:] = snap[2]
                actor_opt.v[:] = snap[3]
                actor_opt.step = snap[4]
                critic_opt.m[:] = snap[5]
                critic_opt.v[:] = snap[6]
                critic_opt.step = snap[7]
                return {"policy_loss": float("nan"), "value_loss": float("nan"),
                        "entropy": entropy, "clip_fraction": float("nan"), "aborted": True}

            nets.adam_step(actor.parameter_list(), grads_a, actor_opt)
            actor.clamp_log_std()
            nets.adam_step(critic.parameter_list(), grads_c, critic_opt)

            pol_losses.append(pol_loss)
            val_losses.append(val_loss)
            clip_fracs.append(float(np.mean(~use_ratio)))

    return {"policy_loss": float(np.mean(pol_losses)), "value_loss": float(np.mean(val_losses)),
            "entropy": entropy, "clip_fraction": float(np.mean(clip_fracs)), "aborted": False}
