"""Derivation of the frozen maze ground-truth constants.

Bisects the goal/decoy weight (time weight pinned to 1, discount 0.9)
until the memoryless forward objective hits the 39.2 band, then reports
the resulting expert value and memory trend. Run once; the chosen values
are frozen in pomirl.envs (MAZE_GAMMA, MAZE_THETA_STAR).

Result of the recorded run:
  theta_goal = 8.3862 -> memoryless objective 39.240
  frozen constant 8.4  -> memoryless objective 39.31, M=3 objective 53.6,
  fully-observed greedy expert value 36.54.
"""

import numpy as np

from pomirl.envs import MAZE_FEATURES, fully_observed, make_maze, value_iteration
from pomirl.forward import scp_forward

TARGET = 39.24
GAMMA = 0.9


def memoryless_objective(tg):
    model, _, _ = make_maze(gamma=GAMMA)
    theta = np.array([1.0, tg, tg])
    reward = model.state_action_rewards(theta, list(MAZE_FEATURES))
    return scp_forward(model, reward).realized_cost


def main():
    lo, hi = 4.0, 12.0
    for _ in range(14):
        mid = 0.5 * (lo + hi)
        val = memoryless_objective(mid)
        print(f"theta_goal {mid:.4f} -> objective {val:.3f}")
        if val < TARGET:
            lo = mid
        else:
            hi = mid
    tg = 0.5 * (lo + hi)
    print(f"bisection result {tg:.4f}")

    model, _, _ = make_maze(gamma=GAMMA)
    theta = np.array([1.0, round(tg, 1), round(tg, 1)])
    reward = model.state_action_rewards(theta, list(MAZE_FEATURES))
    V, _Q, _g = value_iteration(fully_observed(model), reward)
    print(f"rounded theta {theta}: expert value {V @ model.initial_dist:.3f}, "
          f"memoryless objective {memoryless_objective(theta[1]):.3f}")


if __name__ == "__main__":
    main()
