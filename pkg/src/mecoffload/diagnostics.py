"""Tiny deterministic MDPs with exactly known Q-values, for checking the learner."""

from __future__ import annotations

import numpy as np

from . import agents as ag
from . import neural

# transitions[state][action] = (next_state, reward)
SWITCH_CHAIN = (((0, 0.0), (1, 0.0)),
                ((1, 1.0), (0, 0.0)))


def value_iteration(transitions, gamma: float, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Optimal action values of a deterministic finite MDP."""
    q = np.zeros((len(transitions), len(transitions[0])))
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = np.array([[r + gamma * v[nxt] for nxt, r in row] for row in transitions])
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise RuntimeError("value iteration did not converge")


def fit_chain(transitions=SWITCH_CHAIN, gamma: float = 0.9, max_updates: int = 5000,
              tolerance: float = 0.05, check_every: int = 50, seed: int = 0,
              explore_steps: int = 500, hidden=(32,), learning_rate: float = 1e-3):
    """Fill a replay buffer by a random walk, then train until max|Q - Q*| < tolerance.

    States are one-hot encoded. Returns ``(updates_used or None, final_error, agent)``.
    """
    n_states, n_actions = len(transitions), len(transitions[0])
    target = value_iteration(transitions, gamma)
    settings = ag.DqnSettings(hidden=tuple(hidden), gamma=gamma, buffer_capacity=max(explore_steps, 64),
                              learning_rate=learning_rate, reward_transform="none")
    agent = ag.DqnAgent(n_states, n_actions, settings, seed=seed)
    onehot = np.eye(n_states)
    valid = np.ones(n_actions, dtype=bool)
    rng = np.random.default_rng(seed)
    state = 0
    for _ in range(explore_steps):
        action = int(rng.integers(n_actions))
        nxt, reward = transitions[state][action]
        agent.remember(onehot[state], action, reward, onehot[nxt], False, valid)
        state = nxt

    def error():
        return float(np.max(np.abs(neural.forward(agent.network, onehot) - target)))

    for update in range(1, max_updates + 1):
        agent.update()
        if update % check_every == 0:
            err = error()
            if err < tolerance:
                return update, err, agent
    return None, error(), agent
