"""Small environments shared by the test modules."""

import numpy as np

from green_oran.nn import softmax


class TwoArmedBandit:
    """One agent, constant observation, reward 1 for arm 0 and 0 for arm 1."""

    n_agents = 1
    obs_dim = 2
    head_sizes = [2]

    def __init__(self, episode_len=16):
        self.episode_len = episode_len
        self.t = 0

    def reset(self):
        self.t = 0
        return np.array([[1.0, 0.0]])

    def step(self, action_indices):
        self.t += 1
        r = np.array([1.0 if int(action_indices[0][0]) == 0 else 0.0])
        return np.array([[1.0, 0.0]]), r, self.t >= self.episode_len, {}


def best_arm_probability(actor):
    return float(softmax(actor.forward(np.array([1.0, 0.0])))[0])
