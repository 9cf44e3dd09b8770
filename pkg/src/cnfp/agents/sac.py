"""Soft actor-critic with four policy variants.

``cnfp``
    Gaussian pushed through the battery disc, then the obstacle box.
``unconstrained``
    Standard tanh-squashed Gaussian on the unit action box.
``penalty``
    As ``unconstrained``, reward reduced by a fixed penalty on any violation.
``lagrangian``
    As ``unconstrained``, plus one cost critic per constraint whose value is
    weighted into the actor loss by a non-negative multiplier that follows
    dual gradient ascent.

All variants share the same critic, actor and temperature code paths.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from cnfp.agents.buffer import ReplayBuffer
from cnfp.agents.policy import FlowPolicy, box_chain, cnfp_chain, observation_scaler
from cnfp.diffcore import Adam, Mlp, NonFiniteGradientError, polyak_update
from cnfp.regions import BatteryRule, WorldLayout

VARIANTS = ("cnfp", "unconstrained", "penalty", "lagrangian")
CHECKPOINT_VERSION = 1
N_CONSTRAINTS = 2


class CheckpointError(ValueError):
    pass


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    hidden: tuple = (64, 64)
    activation: str = "relu"
    init_alpha: float = 0.2
    auto_alpha: bool = True
    # None means -dim(A).
    target_entropy: float | None = None
    penalty: float = 100.0
    lagrange_lr: float = 0.05
    lagrange_max: float = 100.0
    cost_thresholds: tuple = (0.0, 0.0)
    updates_per_step: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.cost_thresholds = tuple(float(c) for c in self.cost_thresholds)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.init_alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size <= 0 or self.buffer_capacity <= 0:
            raise ValueError("batch size and buffer capacity must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["cost_thresholds"] = list(self.cost_thresholds)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def penalty_reward(reward, violations, penalty=100.0):
    """Subtract ``penalty`` once if any violation flag is set."""
    violations = np.asarray(violations, dtype=bool)
    return np.asarray(reward, dtype=np.float64) - penalty * np.any(violations, axis=-1)


def lagrange_update(lam, mean_costs, thresholds, lr, lam_max=np.inf):
    """One projected dual-ascent step: lam <- clip(lam + lr (c - eps), 0, lam_max)."""
    lam = np.asarray(lam, dtype=np.float64)
    step = lr * (np.asarray(mean_costs, dtype=np.float64) - np.asarray(thresholds, dtype=np.float64))
    return np.clip(lam + step, 0.0, lam_max)


def temperature_gradient(log_alpha, log_probs, target_entropy):
    """d/d(log alpha) of E[-alpha (log pi + target_entropy)]."""
    return -np.exp(log_alpha) * float(np.mean(np.asarray(log_probs) + target_entropy))


def _critic_input(normalize, obs, action, max_step):
    return np.concatenate([normalize(obs), np.asarray(action) / max_step], axis=-1)


class SacAgent:
    def __init__(self, variant, config=None, layout=None, rule=None, seed=0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.config = config or SacConfig()
        self.layout = layout or WorldLayout()
        self.rule = rule or BatteryRule()
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)
        cfg = self.config
        self.normalize = observation_scaler(self.layout)
        if variant == "cnfp":
            chain_fn = cnfp_chain(self.layout, self.rule)
        else:
            chain_fn = box_chain(self.layout)
        widths_actor = [5, *cfg.hidden, 4]
        widths_critic = [7, *cfg.hidden, 1]
        act = cfg.activation
        self.policy = FlowPolicy(Mlp(widths_actor, act, rng=self.rng), chain_fn, self.normalize)
        self.critics = [Mlp(widths_critic, act, rng=self.rng) for _ in range(2)]
        self.critic_targets = [q.copy() for q in self.critics]
        self.cost_critics = []
        if variant == "lagrangian":
            self.cost_critics = [Mlp(widths_critic, act, rng=self.rng) for _ in range(N_CONSTRAINTS)]
        self.cost_targets = [q.copy() for q in self.cost_critics]
        self.actor_opt = Adam(self.policy.actor.params, lr=cfg.actor_lr)
        self.critic_opts = [Adam(q.params, lr=cfg.critic_lr) for q in self.critics]
        self.cost_opts = [Adam(q.params, lr=cfg.critic_lr) for q in self.cost_critics]
        self.log_alpha = float(np.log(cfg.init_alpha)) if cfg.init_alpha > 0 else -np.inf
        self.alpha_opt = Adam([np.zeros(1)], lr=cfg.alpha_lr)
        self.target_entropy = -2.0 if cfg.target_entropy is None else cfg.target_entropy
        self.lambdas = np.zeros(N_CONSTRAINTS)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.total_steps = 0
        self.n_updates = 0
        self.skipped_updates = 0
        self.diagnostics = []

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    def describe(self):
        """Which components this variant switches on."""
        return {
            "variant": self.variant,
            "flow": "battery_ball>obstacle_box" if self.variant == "cnfp" else "unit_box",
            "reward_penalty": self.variant == "penalty",
            "cost_critics": len(self.cost_critics),
            "actor_update": type(self).actor_update.__qualname__,
            "critic_update": type(self).critic_update.__qualname__,
        }

    # acting -----------------------------------------------------------------

    def act(self, obs, deterministic=False):
        """Executed action for one observation."""
        y, _, _, _ = self.policy.sample(np.asarray(obs)[None, :], self.rng, deterministic)
        return y[0]

    def random_action(self, obs):
        """Warmup action: a uniform pre-flow point pushed through the chain."""
        obs = np.asarray(obs)[None, :]
        a = self.rng.uniform(-2.0, 2.0, size=(1, 2))
        y, _ = self.policy.chain_fn(obs).forward(a)
        return y[0]

    def observe(self, obs, action, reward, next_obs, truncated, violations):
        self.buffer.add(obs, action, reward, next_obs, truncated, np.asarray(violations, dtype=float))
        self.total_steps += 1

    def ready(self):
        return self.total_steps >= self.config.warmup_steps and len(self.buffer) >= 1

    # learning ---------------------------------------------------------------

    def shaped_reward(self, batch):
        if self.variant == "penalty":
            return penalty_reward(batch["reward"], batch["costs"] > 0.5, self.config.penalty)
        return batch["reward"]

    def _q(self, net, obs, action):
        return net.forward(_critic_input(self.normalize, obs, action, self.layout.max_step))[:, 0]

    def critic_targets_for(self, batch, rng=None):
        cfg = self.config
        rng = self.rng if rng is None else rng
        next_a, next_logp, _, _ = self.policy.sample(batch["next_obs"], rng)
        q_next = np.minimum(self._q(self.critic_targets[0], batch["next_obs"], next_a),
                            self._q(self.critic_targets[1], batch["next_obs"], next_a))
        not_done = 1.0 - batch["done"]
        target = self.shaped_reward(batch) + cfg.gamma * not_done * (q_next - self.alpha * next_logp)
        cost_targets = []
        for k, net in enumerate(self.cost_targets):
            qc_next = self._q(net, batch["next_obs"], next_a)
            cost_targets.append(batch["costs"][:, k] + cfg.gamma * not_done * qc_next)
        return target, cost_targets

    def critic_loss_and_grads(self, batch, target, nets):
        """Summed MSE of ``nets`` against ``target`` and per-net gradients."""
        x = _critic_input(self.normalize, batch["obs"], batch["action"], self.layout.max_step)
        n = len(target)
        loss, grads = 0.0, []
        for net in nets:
            q, cache = net.forward_cached(x)
            err = q[:, 0] - target
            loss += float(np.mean(err * err))
            g, _ = net.backward(cache, (2.0 / n) * err[:, None])
            grads.append(g)
        return loss, grads

    def critic_update(self, batch, rng=None):
        target, cost_targets = self.critic_targets_for(batch, rng)
        loss, grads = self.critic_loss_and_grads(batch, target, self.critics)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite critic loss {loss}")
        for net, g, opt in zip(self.critics, grads, self.critic_opts):
            opt.step(net.params, g)
        for k, net in enumerate(self.cost_critics):
            _, (g,) = self.critic_loss_and_grads(batch, cost_targets[k], [net])
            self.cost_opts[k].step(net.params, g)
        return loss

    def actor_loss_and_grads(self, batch, rng=None, noise=None):
        """Reparametrized actor loss and its gradient w.r.t. actor parameters.

        Also returns the batch log-probabilities and, for the Lagrangian
        variant, the cost-critic values at the policy's actions.
        """
        rng = self.rng if rng is None else rng
        obs = batch["obs"]
        n = len(obs)
        y, logp, _, ctx = self.policy.sample(obs, rng, noise=noise)
        x = _critic_input(self.normalize, obs, y, self.layout.max_step)
        q1, c1 = self.critics[0].forward_cached(x)
        q2, c2 = self.critics[1].forward_cached(x)
        q1, q2 = q1[:, 0], q2[:, 0]
        use1 = (q1 <= q2).astype(np.float64)
        q_min = np.minimum(q1, q2)
        alpha = self.alpha
        loss = float(np.mean(alpha * logp - q_min))
        _, gx1 = self.critics[0].backward(c1, (-use1 / n)[:, None], param_grads=False)
        _, gx2 = self.critics[1].backward(c2, (-(1.0 - use1) / n)[:, None], param_grads=False)
        gx = gx1 + gx2
        cost_values = []
        for lam, net in zip(self.lambdas, self.cost_critics):
            qc, cc = net.forward_cached(x)
            cost_values.append(qc[:, 0])
            loss += float(lam * np.mean(qc[:, 0]))
            _, gxc = net.backward(cc, np.full((n, 1), lam / n), param_grads=False)
            gx = gx + gxc
        action_grad = gx[:, 5:] / self.layout.max_step
        grads = self.policy.backward(ctx, action_grad, np.full(n, alpha / n))
        return loss, grads, logp, cost_values

    def actor_update(self, batch, rng=None):
        loss, grads, logp, cost_values = self.actor_loss_and_grads(batch, rng)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite actor loss {loss}")
        self.actor_opt.step(self.policy.actor.params, grads)
        return loss, logp, cost_values

    def temperature_update(self, log_probs):
        if not self.config.auto_alpha:
            return self.alpha
        g = temperature_gradient(self.log_alpha, log_probs, self.target_entropy)
        p = [np.array([self.log_alpha])]
        self.alpha_opt.step(p, [np.array([g])])
        self.log_alpha = float(p[0][0])
        return self.alpha

    def update_lambdas(self, cost_values):
        # Cost critics estimate discounted violation counts; (1 - gamma)
        # turns them into per-step violation rates comparable to eps.
        cfg = self.config
        rates = [(1.0 - cfg.gamma) * float(np.mean(v)) for v in cost_values]
        self.lambdas = lagrange_update(self.lambdas, rates, cfg.cost_thresholds,
                                       cfg.lagrange_lr, cfg.lagrange_max)
        return self.lambdas

    def update(self):
        """One full SAC update from a replay batch; returns a loss record."""
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        try:
            with np.errstate(over="raise", invalid="raise"):
                critic_loss = self.critic_update(batch)
                actor_loss, logp, cost_values = self.actor_update(batch)
        except (FloatingPointError, NonFiniteGradientError) as exc:
            self.skipped_updates += 1
            self.diagnostics.append({"update": self.n_updates, "error": str(exc)})
            return None
        self.temperature_update(logp)
        if self.variant == "lagrangian":
            self.update_lambdas(cost_values)
        for target, online in zip(self.critic_targets + self.cost_targets,
                                  self.critics + self.cost_critics):
            polyak_update(target, online, cfg.tau)
        self.n_updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha": self.alpha}

    # checkpoints ------------------------------------------------------------

    def _networks(self):
        nets = {"actor": self.policy.actor}
        for i, q in enumerate(self.critics):
            nets[f"critic{i}"] = q
            nets[f"critic{i}_target"] = self.critic_targets[i]
        for i, q in enumerate(self.cost_critics):
            nets[f"cost{i}"] = q
            nets[f"cost{i}_target"] = self.cost_targets[i]
        return nets

    def _optimizers(self):
        opts = {"actor": self.actor_opt, "alpha": self.alpha_opt}
        for i, o in enumerate(self.critic_opts):
            opts[f"critic{i}"] = o
        for i, o in enumerate(self.cost_opts):
            opts[f"cost{i}"] = o
        return opts

    def save(self, path, include_buffer=True):
        """Write a versioned ``.npz`` checkpoint (bit-exact round trip)."""
        meta = {
            "version": CHECKPOINT_VERSION,
            "variant": self.variant,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "layout": self.layout.to_dict(),
            "rule": self.rule.to_dict(),
            "log_alpha": self.log_alpha,
            "lambdas": self.lambdas.tolist(),
            "total_steps": self.total_steps,
            "n_updates": self.n_updates,
            "skipped_updates": self.skipped_updates,
            "rng_state": self.rng.bit_generator.state,
            "optimizer_steps": {k: o.t for k, o in self._optimizers().items()},
            "buffer_cursor": self.buffer.cursor,
            "has_buffer": bool(include_buffer),
        }
        arrays = {"meta": np.array(json.dumps(meta))}
        for name, net in self._networks().items():
            for j, p in enumerate(net.params):
                arrays[f"net_{name}_{j}"] = p
        for name, opt in self._optimizers().items():
            for j, a in enumerate(opt.state_arrays()):
                arrays[f"opt_{name}_{j}"] = a
        if include_buffer:
            arrays.update(self.buffer.state_arrays())
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            try:
                meta = json.loads(str(data["meta"]))
            except KeyError as exc:
                raise CheckpointError(f"{path}: not a checkpoint") from exc
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}"
                )
            agent = cls(
                meta["variant"],
                SacConfig.from_dict(meta["config"]),
                WorldLayout.from_dict(meta["layout"]),
                BatteryRule.from_dict(meta["rule"]),
                seed=meta["seed"],
            )
            for name, net in agent._networks().items():
                net.params = [np.array(data[f"net_{name}_{j}"]) for j in range(len(net.params))]
            for name, opt in agent._optimizers().items():
                n = 2 * len(opt.m)
                opt.load_state_arrays([data[f"opt_{name}_{j}"] for j in range(n)],
                                      meta["optimizer_steps"][name])
            if meta["has_buffer"]:
                agent.buffer.load_state_arrays(
                    {k: np.array(data[k]) for k in data.files if k.startswith("buffer_")},
                    meta["buffer_cursor"],
                )
        agent.log_alpha = float(meta["log_alpha"])
        agent.lambdas = np.array(meta["lambdas"], dtype=np.float64)
        agent.total_steps = meta["total_steps"]
        agent.n_updates = meta["n_updates"]
        agent.skipped_updates = meta["skipped_updates"]
        agent.rng.bit_generator.state = meta["rng_state"]
        return agent
