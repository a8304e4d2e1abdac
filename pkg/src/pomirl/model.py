"""Sparse POMDP representation, validation, belief updates, FSC products
and trajectory simulation.

Conventions: states, actions and observations are 0-based integer indices.
Transition matrices are stored per action as CSR matrices of shape (S, S)
with row ``s`` holding the distribution over successor states. The
observation function is a CSR matrix of shape (S, Z), state-conditioned
only. Feature maps are dense (S, A) arrays keyed by feature name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ZeroLikelihood

PROB_TOL = 1e-9
LOAD_TOL = 1e-6


@dataclass(frozen=True)
class Pomdp:
    """Sparse POMDP model with labelled states and named features.

    All arrays are treated as immutable after construction; instances are
    safe to share across threads.
    """

    num_states: int
    num_actions: int
    num_observations: int
    transitions: tuple  # per-action CSR matrices, shape (S, S)
    observation_fn: sp.csr_matrix  # shape (S, Z)
    initial_dist: np.ndarray  # shape (S,)
    discount: float
    labels: dict = field(default_factory=dict)  # name -> frozenset of states
    features: dict = field(default_factory=dict)  # name -> (S, A) array

    def label_states(self, name):
        return self.labels.get(name, frozenset())

    def is_absorbing(self, s):
        """True if every action loops on ``s`` with probability 1."""
        for pa in self.transitions:
            row = pa.getrow(s)
            if row.nnz != 1 or row.indices[0] != s or abs(row.data[0] - 1.0) > PROB_TOL:
                return False
        return True

    def absorbing_states(self):
        return frozenset(s for s in range(self.num_states) if self.is_absorbing(s))

    def terminal_states(self):
        """Absorbing states carrying the ``terminal`` label."""
        return frozenset(s for s in self.label_states("terminal") if self.is_absorbing(s))

    def feature_matrix(self, names=None):
        """Stack features into a (d, S, A) array in the given name order."""
        if names is None:
            names = sorted(self.features)
        return np.stack([self.features[n] for n in names]), list(names)

    def state_action_rewards(self, theta, names=None):
        """Dense (S, A) reward table for linear weights ``theta``."""
        phi, _ = self.feature_matrix(names)
        return np.tensordot(np.asarray(theta, dtype=float), phi, axes=1)


@dataclass(frozen=True)
class Belief:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if np.any(p < -PROB_TOL) or abs(p.sum() - 1.0) > 1e-7:
            raise ValueError("belief is not a probability distribution")


@dataclass(frozen=True)
class Policy:
    """Memoryless observation-based stochastic policy, shape (Z, A)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if np.any(p < -PROB_TOL):
            raise ValueError("negative action probability")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-7):
            raise ValueError("policy rows must sum to 1")

    @staticmethod
    def uniform(num_observations, num_actions):
        return Policy(np.full((num_observations, num_actions), 1.0 / num_actions))


@dataclass(frozen=True)
class FscShape:
    """Finite-state-controller skeleton: node count and fixed initial node."""

    memory_size: int
    initial_node: int = 0

    def __post_init__(self):
        if self.memory_size < 1:
            raise ValueError("memory_size must be >= 1")
        if self.initial_node != 0:
            raise ValueError("initial node is fixed to 0")


@dataclass(frozen=True)
class ProductPomdp:
    """POMDP x memory product on which an FSC is a memoryless policy.

    Product actions are (base action, next memory node) pairs: playing the
    pair executes the base action and deterministically moves the memory.
    Unreachable (state, node) pairs are trimmed by BFS from the initial
    support, and only (observation, node) pairs seen at reachable states
    are kept.
    """

    base: Pomdp
    shape: FscShape
    product: Pomdp
    state_origin: tuple  # product state -> (base state, memory node)
    action_origin: tuple  # product action -> (base action, next node)
    observation_origin: tuple  # product observation -> (base obs, node)


def validate_pomdp(model):
    """Check all model invariants; return a list of violation strings."""
    out = []
    if not 0.0 <= model.discount < 1.0:
        out.append(f"discount {model.discount} outside [0,1)")
    if len(model.transitions) != model.num_actions:
        out.append("transition matrix count != num_actions")
    for a, pa in enumerate(model.transitions):
        if pa.shape != (model.num_states, model.num_states):
            out.append(f"transition matrix for action {a} has shape {pa.shape}")
            continue
        if pa.nnz and pa.data.min() < -PROB_TOL:
            bad = np.flatnonzero(np.diff(pa.indptr))  # rows with entries
            out.append(f"negative transition probability under action {a}")
        sums = np.asarray(pa.sum(axis=1)).ravel()
        for s in np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL):
            out.append(
                f"transition row (s={s}, a={a}) sums to {sums[s]:.12g} "
                f"(residual {1.0 - sums[s]:.3g})"
            )
        if pa.nnz and pa.data.max() > 1.0 + PROB_TOL:
            out.append(f"transition probability > 1 under action {a}")
    ob = model.observation_fn
    if ob.shape != (model.num_states, model.num_observations):
        out.append(f"observation matrix has shape {ob.shape}")
    else:
        if ob.nnz and ob.data.min() < -PROB_TOL:
            out.append("negative observation probability")
        osums = np.asarray(ob.sum(axis=1)).ravel()
        for s in np.flatnonzero(np.abs(osums - 1.0) > PROB_TOL):
            out.append(f"observation row s={s} sums to {osums[s]:.12g}")
    mu0 = model.initial_dist
    if mu0.shape != (model.num_states,):
        out.append("initial distribution has wrong length")
    else:
        if abs(mu0.sum() - 1.0) > PROB_TOL:
            out.append(f"initial distribution sums to {mu0.sum():.12g}")
        for s in np.flatnonzero(mu0 < -PROB_TOL):
            out.append(f"initial distribution negative at state {s}")
    for name, states in model.labels.items():
        for s in states:
            if not 0 <= s < model.num_states:
                out.append(f"label '{name}' refers to invalid state {s}")
    for name, phi in model.features.items():
        if np.asarray(phi).shape != (model.num_states, model.num_actions):
            out.append(f"feature '{name}' has shape {np.asarray(phi).shape}")
    return out


def belief_update(model, belief, action, observation):
    """One Bayes step: condition the pushed-forward belief on an observation."""
    pred = model.transitions[action].T.dot(belief.probs)
    like = model.observation_fn[:, observation].toarray().ravel()
    post = like * pred
    norm = post.sum()
    if norm < 1e-300:
        raise ZeroLikelihood(
            f"observation {observation} has zero likelihood after action {action}"
        )
    return Belief(post / norm)


def product_with_memory(model, shape):
    """Build the POMDP x FSC-memory product of ``model``.

    The memory update is folded into the action space: product action
    (a, m) plays base action a and moves the memory node to m. An M-node
    FSC on the base model is then exactly a memoryless policy on the
    product.
    """
    M = shape.memory_size
    S, A, Z = model.num_states, model.num_actions, model.num_observations

    successors = [
        [model.transitions[a].indices[model.transitions[a].indptr[s]:model.transitions[a].indptr[s + 1]]
         for a in range(A)]
        for s in range(S)
    ]

    # BFS over (state, node) pairs from the initial support at node 0.
    init_support = np.flatnonzero(model.initial_dist > 0)
    frontier = [(int(s), 0) for s in init_support]
    seen = set(frontier)
    while frontier:
        nxt = []
        for s, _n in frontier:
            for a in range(A):
                for sp_ in successors[s][a]:
                    for m in range(M):
                        key = (int(sp_), m)
                        if key not in seen:
                            seen.add(key)
                            nxt.append(key)
        frontier = nxt
    state_origin = sorted(seen)
    sidx = {pair: i for i, pair in enumerate(state_origin)}
    nS = len(state_origin)

    action_origin = [(a, m) for a in range(A) for m in range(M)]

    # Observation alphabet: (z, n) pairs emitted at some reachable state.
    obs_pairs = set()
    ofn = model.observation_fn.tocsr()
    for (s, n) in state_origin:
        zs = ofn.indices[ofn.indptr[s]:ofn.indptr[s + 1]]
        for z in zs:
            obs_pairs.add((int(z), n))
    observation_origin = sorted(obs_pairs)
    zidx = {pair: j for j, pair in enumerate(observation_origin)}
    nZ = len(observation_origin)

    transitions = []
    for a, m in action_origin:
        pa = model.transitions[a]
        rows, cols, vals = [], [], []
        for i, (s, _n) in enumerate(state_origin):
            lo, hi = pa.indptr[s], pa.indptr[s + 1]
            for sp_, p in zip(pa.indices[lo:hi], pa.data[lo:hi]):
                rows.append(i)
                cols.append(sidx[(int(sp_), m)])
                vals.append(p)
        transitions.append(
            sp.csr_matrix((vals, (rows, cols)), shape=(nS, nS))
        )

    rows, cols, vals = [], [], []
    for i, (s, n) in enumerate(state_origin):
        lo, hi = ofn.indptr[s], ofn.indptr[s + 1]
        for z, p in zip(ofn.indices[lo:hi], ofn.data[lo:hi]):
            rows.append(i)
            cols.append(zidx[(int(z), n)])
            vals.append(p)
    observation_fn = sp.csr_matrix((vals, (rows, cols)), shape=(nS, nZ))

    initial = np.zeros(nS)
    for s in init_support:
        initial[sidx[(int(s), 0)]] = model.initial_dist[s]

    labels = {
        name: frozenset(i for i, (s, _n) in enumerate(state_origin) if s in states)
        for name, states in model.labels.items()
    }
    features = {}
    for name, phi in model.features.items():
        phi = np.asarray(phi)
        lifted = np.zeros((nS, len(action_origin)))
        base_states = np.array([s for s, _ in state_origin])
        for j, (a, _m) in enumerate(action_origin):
            lifted[:, j] = phi[base_states, a]
        features[name] = lifted

    product = Pomdp(
        num_states=nS,
        num_actions=len(action_origin),
        num_observations=nZ,
        transitions=tuple(transitions),
        observation_fn=observation_fn,
        initial_dist=initial,
        discount=model.discount,
        labels=labels,
        features=features,
    )
    return ProductPomdp(
        base=model,
        shape=shape,
        product=product,
        state_origin=tuple(state_origin),
        action_origin=tuple(action_origin),
        observation_origin=tuple(observation_origin),
    )


def rollout(model, policy, horizon, rng_seed, stop_at_terminal=True):
    """Sample one trajectory under a memoryless policy.

    Returns ``(trace, feature_totals)`` where the trace is a list of
    (state, observation, action) triples and ``feature_totals`` maps each
    feature name to its accumulated discounted value. Simulation stops at
    the horizon or, if ``stop_at_terminal``, on entering an absorbing
    state labelled ``terminal``; in that case the geometric tail of the
    terminal state's features is added analytically so totals agree with
    the infinite-horizon discounted value.
    """
    rng = np.random.default_rng(rng_seed)
    terminal = model.terminal_states() if stop_at_terminal else frozenset()
    ofn = model.observation_fn
    sigma = policy.probs
    gamma = model.discount

    totals = {name: 0.0 for name in model.features}
    trace = []
    s = int(rng.choice(model.num_states, p=model.initial_dist))
    disc = 1.0
    for _t in range(horizon):
        if s in terminal:
            for name, phi in model.features.items():
                totals[name] += disc * phi[s, 0] / (1.0 - gamma)
            break
        orow = ofn.getrow(s)
        z = int(rng.choice(orow.indices, p=orow.data / orow.data.sum()))
        a = int(rng.choice(model.num_actions, p=sigma[z]))
        trace.append((s, z, a))
        for name, phi in model.features.items():
            totals[name] += disc * phi[s, a]
        prow = model.transitions[a].getrow(s)
        s = int(rng.choice(prow.indices, p=prow.data / prow.data.sum()))
        disc *= gamma
    return trace, totals


# ---------------------------------------------------------------------------
# Model file format (JSON)

FORMAT_VERSION = 1


def _names_or_count(value, kind):
    if isinstance(value, int):
        return value, [f"{kind}{i}" for i in range(value)]
    return len(value), list(value)


def load_pomdp(path_or_dict):
    """Load a model from a JSON file path or an already-parsed dict.

    Row sums are checked within 1e-6 and then renormalized so in-memory
    invariants hold at the tighter construction tolerance.
    """
    if isinstance(path_or_dict, dict):
        doc = path_or_dict
    else:
        with open(path_or_dict) as fh:
            doc = json.load(fh)

    for key in ("states", "actions", "observations", "discount", "initial",
                "transitions", "observation_fn"):
        if key not in doc:
            raise ValueError(f"model file missing field '{key}'")

    S, _ = _names_or_count(doc["states"], "s")
    A, _ = _names_or_count(doc["actions"], "a")
    Z, _ = _names_or_count(doc["observations"], "z")
    gamma = float(doc["discount"])
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"field 'discount': {gamma} outside [0,1)")

    initial = np.zeros(S)
    for s, p in doc["initial"]:
        initial[s] = p
    if abs(initial.sum() - 1.0) > LOAD_TOL:
        raise ValueError(f"field 'initial': sums to {initial.sum():.9g}")
    initial /= initial.sum()

    trows = [[] for _ in range(A)]
    for s, a, s2, p in doc["transitions"]:
        if not (0 <= s < S and 0 <= a < A and 0 <= s2 < S):
            raise ValueError(f"field 'transitions': invalid entry {[s, a, s2, p]}")
        trows[a].append((s, s2, p))
    transitions = []
    for a in range(A):
        if trows[a]:
            rows, cols, vals = zip(*trows[a])
        else:
            rows, cols, vals = (), (), ()
        pa = sp.csr_matrix((vals, (rows, cols)), shape=(S, S))
        sums = np.asarray(pa.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(sums - 1.0) > LOAD_TOL)
        if bad.size:
            raise ValueError(
                f"field 'transitions': row (s={bad[0]}, a={a}) sums to {sums[bad[0]]:.9g}"
            )
        transitions.append(sp.csr_matrix(sp.diags(1.0 / sums).dot(pa)))

    rows, cols, vals = [], [], []
    for s, z, p in doc["observation_fn"]:
        if not (0 <= s < S and 0 <= z < Z):
            raise ValueError(f"field 'observation_fn': invalid entry {[s, z, p]}")
        rows.append(s)
        cols.append(z)
        vals.append(p)
    ofn = sp.csr_matrix((vals, (rows, cols)), shape=(S, Z))
    osums = np.asarray(ofn.sum(axis=1)).ravel()
    bad = np.flatnonzero(np.abs(osums - 1.0) > LOAD_TOL)
    if bad.size:
        raise ValueError(f"field 'observation_fn': row s={bad[0]} sums to {osums[bad[0]]:.9g}")
    ofn = sp.csr_matrix(sp.diags(1.0 / osums).dot(ofn))

    labels = {
        name: frozenset(int(s) for s in states)
        for name, states in doc.get("labels", {}).items()
    }
    features = {}
    for name, triples in doc.get("features", {}).items():
        phi = np.zeros((S, A))
        for s, a, v in triples:
            if not (0 <= s < S and 0 <= a < A):
                raise ValueError(f"field 'features': invalid entry in '{name}'")
            phi[s, a] = v
        features[name] = phi

    return Pomdp(
        num_states=S,
        num_actions=A,
        num_observations=Z,
        transitions=tuple(transitions),
        observation_fn=ofn,
        initial_dist=initial,
        discount=gamma,
        labels=labels,
        features=features,
    )


def dump_pomdp(model, path=None):
    """Serialize a model to the JSON document format; round-trips with
    :func:`load_pomdp`."""
    ttriples = []
    for a, pa in enumerate(model.transitions):
        coo = pa.tocoo()
        for s, s2, p in zip(coo.row, coo.col, coo.data):
            ttriples.append([int(s), a, int(s2), float(p)])
    ocoo = model.observation_fn.tocoo()
    doc = {
        "format_version": FORMAT_VERSION,
        "states": model.num_states,
        "actions": model.num_actions,
        "observations": model.num_observations,
        "discount": model.discount,
        "initial": [[int(s), float(p)] for s, p in enumerate(model.initial_dist) if p > 0],
        "transitions": sorted(ttriples),
        "observation_fn": sorted(
            [int(s), int(z), float(p)]
            for s, z, p in zip(ocoo.row, ocoo.col, ocoo.data)
        ),
        "labels": {name: sorted(states) for name, states in sorted(model.labels.items())},
        "features": {
            name: [[s, a, float(phi[s, a])]
                   for s in range(model.num_states)
                   for a in range(model.num_actions)
                   if phi[s, a] != 0.0]
            for name, phi in sorted(model.features.items())
        },
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    return doc
