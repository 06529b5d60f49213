"""Learnable selection threshold: a logistic-normal policy trained with
REINFORCE plus an EMA reward baseline.

Actions are thresholds tau = sigmoid(u) with u ~ N(mu, sigma^2); the
log-density follows from the change of variables through the sigmoid,
and score-function gradients have the closed form (z/sigma, z^2 - 1)
with z = (logit(tau) - mu) / sigma.
"""

import math
from dataclasses import dataclass, field

import numpy as np

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
BASELINE_DECAY = 0.9
TAU_HAT_SEED = 20240717  # fixed seed for the post-training deterministic threshold


@dataclass
class ThresholdPolicy:
    mu: float = 0.01
    log_sigma: float = -1.0
    baseline: float = 0.0
    step_size: float = 1e-2

    @property
    def sigma(self):
        return math.exp(self.log_sigma)


@dataclass
class PolicySample:
    u: float
    tau: float
    log_density: float = field(default=0.0)


def _sigmoid(u):
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def _logit(tau):
    return math.log(tau) - math.log1p(-tau)


def sample_threshold(policy, rng):
    """Draw tau = sigmoid(u), u ~ N(mu, sigma^2), with its log-density."""
    u = float(rng.normal(policy.mu, policy.sigma))
    tau = _sigmoid(u)
    return PolicySample(u=u, tau=tau, log_density=log_policy_density(policy, tau))


def log_policy_density(policy, tau):
    """log N(logit(tau); mu, sigma^2) - log(tau) - log(1 - tau)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0,1), got {tau}")
    sigma = policy.sigma
    z = (_logit(tau) - policy.mu) / sigma
    log_normal = -0.5 * z * z - policy.log_sigma - 0.5 * math.log(2.0 * math.pi)
    return log_normal - math.log(tau) - math.log1p(-tau)


def grad_log_policy(policy, tau):
    """Analytic partials of the log-density w.r.t. (mu, log_sigma)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly in (0,1), got {tau}")
    z = (_logit(tau) - policy.mu) / policy.sigma
    return z / policy.sigma, z * z - 1.0


def reinforce_update(policy, sample, reward):
    """One ascent step on (reward - baseline) * grad log pi, then the EMA
    baseline update b <- 0.9 b + 0.1 R. Mutates and returns the policy."""
    if not math.isfinite(reward):
        raise FloatingPointError(f"non-finite reward {reward}; policy update aborted")
    d_mu, d_ls = grad_log_policy(policy, sample.tau)
    advantage = reward - policy.baseline
    policy.mu += policy.step_size * advantage * d_mu
    policy.log_sigma += policy.step_size * advantage * d_ls
    policy.log_sigma = min(max(policy.log_sigma, LOG_SIGMA_MIN), LOG_SIGMA_MAX)
    policy.baseline = BASELINE_DECAY * policy.baseline + (1.0 - BASELINE_DECAY) * reward
    return policy


def deterministic_threshold(policy, k=100, seed=TAU_HAT_SEED):
    """Monte-Carlo estimate of E[tau] over the action distribution.

    tau_hat = mean of sigmoid(mu + sigma * eps_k) over k standard-normal
    draws from a fixed seed; computed once after training and stored in
    the checkpoint for deterministic deployment.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eps = np.random.default_rng(seed).standard_normal(k)
    u = policy.mu + policy.sigma * eps
    return float(np.mean(1.0 / (1.0 + np.exp(-u))))
