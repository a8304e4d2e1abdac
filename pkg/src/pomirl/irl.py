"""Reward inference from demonstrations.

Rewards are linear in named state-action features. The learner alternates
a forward entropy-plus-reward solve with a gradient step on the weights;
the gradient is the gap between the model visitation feature counts and
the belief-weighted empirical feature expectation of the demonstrations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .forward import ScpParams, scp_forward
from .model import Belief, belief_update


@dataclass
class RewardModel:
    """Linear reward R(s,a) = theta . phi(s,a) over named features."""

    feature_names: list
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (len(self.feature_names),):
            raise ValueError("theta length must match feature_names")

    def table(self, model):
        return model.state_action_rewards(self.theta, self.feature_names)


@dataclass
class DemonstrationSet:
    """Expert trajectories as (state, observation, action) triples.

    States are carried for evaluation only; inference uses observations
    and actions through the belief filter.
    """

    traces: list
    horizon: int = None

    def __len__(self):
        return len(self.traces)

    def save(self, path):
        with open(path, "w") as fh:
            for trace in self.traces:
                fh.write(json.dumps({"trace": [list(t) for t in trace]}) + "\n")

    @staticmethod
    def load(path):
        traces = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    doc = json.loads(line)
                    traces.append([tuple(t) for t in doc["trace"]])
        return DemonstrationSet(traces=traces)


def reobserve_trace(model, trace, rng):
    """Replace each observation with a draw from the model's observation
    distribution at the visited state.

    Used to convert traces from a better-informed simulator (a
    fully-observed expert, or a memory product) into what a plain
    observer of ``model`` would have seen.
    """
    ofn = model.observation_fn
    out = []
    for s, _z, a in trace:
        row = ofn.getrow(s)
        z = int(rng.choice(row.indices, p=row.data / row.data.sum()))
        out.append((s, z, a))
    return out


def beliefs_from_trace(model, trace):
    """Belief sequence b_0, ..., b_{n-1} along one trajectory.

    b_i is the belief held when action a_i is chosen: the prior conditioned
    on z_0 at i = 0, then Bayes-filtered through (a_i, z_{i+1}).
    """
    beliefs = []
    b = None
    for i, (_s, z, a) in enumerate(trace):
        if i == 0:
            like = model.observation_fn[:, z].toarray().ravel()
            post = like * model.initial_dist
            b = Belief(post / post.sum())
        else:
            _sp, zp, _ap = trace[i - 1][0], z, a
            b = belief_update(model, b, trace[i - 1][2], z)
        beliefs.append(b)
    return beliefs


def empirical_feature_expectation(model, demos, feature_names):
    """Discounted, belief-weighted feature counts averaged over demos."""
    phi, _ = model.feature_matrix(feature_names)
    total = np.zeros(len(feature_names))
    for trace in demos.traces:
        disc = 1.0
        for b, (_s, _z, a) in zip(beliefs_from_trace(model, trace), trace):
            total += disc * phi[:, :, a].dot(b.probs)
            disc *= model.discount
    return total / max(1, len(demos))


def feature_counts(model, counts, feature_names):
    """Model-side discounted feature expectation sum_{s,a} nu(s,a) phi(s,a)."""
    phi, _ = model.feature_matrix(feature_names)
    return np.tensordot(phi, counts.nu, axes=([1, 2], [0, 1]))


def grad_theta(model, counts, demos_expectation, feature_names):
    """Gradient of the inference objective in the reward weights."""
    return feature_counts(model, counts, feature_names) - demos_expectation


@dataclass
class IrlResult:
    reward: RewardModel
    forward: object  # final ScpResult
    theta_history: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    converged: bool = False

    def save_history(self, path):
        names = self.reward.feature_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration"] + list(names) + ["grad_norm"])
            for i, theta in enumerate(self.theta_history):
                gn = self.grad_norms[i] if i < len(self.grad_norms) else ""
                w.writerow([i] + [f"{v:.12g}" for v in theta] + [gn])


def mce_irl(model, demos, feature_names, theta0=None, spec=None, params=None,
            max_iters=40, grad_tol=1e-3, eta0=None, backend="highs",
            demo_model=None, callback=None):
    """Alternating forward-solve / gradient-descent reward inference.

    Each outer iteration runs the forward solver warm-started from the
    previous policy, then takes a diminishing step eta0 / sqrt(k+1)
    against the feature-count gap. Stops when the gradient infinity norm
    falls below ``grad_tol`` or after ``max_iters`` iterations.

    When the learner uses a memory product, pass the product as ``model``
    and the base model the demonstrations were recorded on as
    ``demo_model``; features must carry the same names on both.
    """
    params = params or ScpParams()
    feat_emp = empirical_feature_expectation(demo_model or model, demos,
                                             feature_names)
    if eta0 is None:
        eta0 = 0.5 / max(np.abs(feat_emp).max(), 1e-6)
    theta = np.zeros(len(feature_names)) if theta0 is None else np.asarray(
        theta0, dtype=float).copy()

    policy = None
    history = [theta.copy()]
    grad_norms = []
    fwd = None
    converged = False
    for k in range(max_iters):
        reward = RewardModel(list(feature_names), theta)
        fwd = scp_forward(model, reward.table(model), initial_policy=policy,
                          params=params, spec=spec, backend=backend)
        policy = fwd.policy
        g = grad_theta(model, fwd.counts, feat_emp, feature_names)
        gn = float(np.abs(g).max())
        grad_norms.append(gn)
        if callback is not None:
            callback(k, theta, gn, fwd)
        if gn <= grad_tol:
            converged = True
            break
        theta = theta - (eta0 / np.sqrt(k + 1.0)) * g
        history.append(theta.copy())
    return IrlResult(reward=RewardModel(list(feature_names), theta),
                     forward=fwd, theta_history=history,
                     grad_norms=grad_norms, converged=converged)
