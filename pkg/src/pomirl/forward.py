"""Forward problem: maximize discounted causal entropy plus expected
reward over observation-based policies.

The nonconvex policy-consistency constraint (state-action counts equal
state counts times the observation-averaged policy) is linearized around
the previous verified iterate, with slack penalties and a multiplicative
trust region on the policy. Every candidate from the linearized LP is
re-verified by solving the exact flow equations before acceptance, so the
counts returned are always flow-consistent, never raw LP values.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalFailure
from .lp import LinearProgram, OPTIMAL, solve_lp
from .model import Policy

FLOW_TOL = 1e-8


@dataclass(frozen=True)
class VisitationCounts:
    """Discounted occupancy measures, plus optional undiscounted spec
    counterparts."""

    mu: np.ndarray  # (S,)
    nu: np.ndarray  # (S, A)
    mu_sp: np.ndarray = None
    nu_sp: np.ndarray = None
    spec_degraded: bool = False  # undiscounted system was singular


@dataclass
class ScpParams:
    trust_init: float = 2.0
    trust_factor: float = 1.5
    trust_lim: float = 1.0001
    beta: float = None  # default 1e4 * max |reward|
    beta_sp: float = 1e3
    occupancy_floor: float = 1e-12
    max_iters: int = 200
    stall_iters: int = 15  # stop after this many non-improving accepts

    def __post_init__(self):
        if not self.trust_init > self.trust_lim > 1.0:
            raise ValueError("need trust_init > trust_lim > 1")
        if self.trust_factor <= 1.0:
            raise ValueError("trust_factor must exceed 1")
        if not 0.0 < self.occupancy_floor <= 1e-6:
            raise ValueError("occupancy_floor must lie in (0, 1e-6]")

    def resolved_beta(self, reward):
        if self.beta is not None:
            return self.beta
        scale = float(np.abs(reward).max())
        return 1e4 * max(scale, 1.0)


def policy_state_action(model, policy):
    """Per-state action probabilities pi(s, a) = sum_z O(z|s) sigma(z, a)."""
    return model.observation_fn.dot(policy.probs)


def causal_entropy(counts):
    """Discounted causal entropy from occupancy measures, 0 log 0 = 0."""
    mu = counts.mu
    nu = counts.nu
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = nu / mu[:, None]
        term = -np.log(ratio) * nu
    term[nu <= 0] = 0.0
    term[mu <= 0] = 0.0
    return float(term.sum())


def discounted_return(counts, reward):
    """Expected discounted return sum_{s,a} R(s,a) nu(s,a)."""
    return float((np.asarray(reward) * counts.nu).sum())


def _flow_matrix(model, pi, exclude=None):
    """Sparse M with M[s, s'] = sum_a P(s|s',a) pi(s',a); rows of excluded
    source states dropped."""
    S = model.num_states
    mask = np.ones(S)
    if exclude:
        mask[sorted(exclude)] = 0.0
    M = sp.csr_matrix((S, S))
    for a, pa in enumerate(model.transitions):
        M = M + pa.T.dot(sp.diags(pi[:, a] * mask))
    return M


def solve_flow_discounted(model, policy):
    """Unique solution of the discounted Bellman flow for a fixed policy."""
    pi = policy_state_action(model, policy)
    M = _flow_matrix(model, pi)
    A = sp.identity(model.num_states, format="csc") - model.discount * M.tocsc()
    mu = spla.spsolve(A, model.initial_dist)
    resid = np.abs(A.dot(mu) - model.initial_dist).max()
    if not np.all(np.isfinite(mu)) or resid > FLOW_TOL:
        raise NumericalFailure(f"discounted flow residual {resid:.3g}")
    mu = np.maximum(mu, 0.0)
    nu = mu[:, None] * pi
    return VisitationCounts(mu=mu, nu=nu)


def solve_flow_spec(reach, policy):
    """Undiscounted flow on the spec-modified model.

    Flow out of the target set and other absorbing sinks is dropped, so
    the count at a sink is the probability of ever reaching it. When the
    remaining system is still singular (the policy has a recurrent class
    that never gets absorbed), the solve falls back to discount 1 - 1e-6
    and the result is flagged as degraded.
    """
    model = reach.model
    pi = policy_state_action(model, policy)
    M = _flow_matrix(model, pi, exclude=reach.flow_exclusions).tocsc()
    eye = sp.identity(model.num_states, format="csc")
    degraded = False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            mu_sp = spla.spsolve(eye - M, model.initial_dist)
        except RuntimeError:
            mu_sp = np.full(model.num_states, np.nan)
    resid = np.inf
    if np.all(np.isfinite(mu_sp)):
        resid = np.abs((eye - M).dot(mu_sp) - model.initial_dist).max()
    if resid > FLOW_TOL:
        degraded = True
        mu_sp = spla.spsolve(eye - (1.0 - 1e-6) * M, model.initial_dist)
        resid = np.abs((eye - (1.0 - 1e-6) * M).dot(mu_sp) - model.initial_dist).max()
        if not np.all(np.isfinite(mu_sp)) or resid > FLOW_TOL:
            raise NumericalFailure(f"spec flow residual {resid:.3g}")
    mu_sp = np.maximum(mu_sp, 0.0)
    nu_sp = mu_sp[:, None] * pi
    return mu_sp, nu_sp, degraded


def realized_cost(model, reward, policy, spec=None, beta_sp=1e3):
    """Exact entropy-plus-return of a policy, with the specification
    shortfall penalty when a spec is supplied."""
    counts = solve_flow_discounted(model, policy)
    cost = causal_entropy(counts) + discounted_return(counts, reward)
    if spec is not None:
        mu_sp, _nu_sp, _deg = solve_flow_spec(spec, policy)
        sat = float(sum(mu_sp[s] for s in spec.targets))
        cost += min(0.0, (sat - spec.formula.threshold) * beta_sp)
    return cost


@dataclass
class _VarMap:
    """Column layout of the linearized LP."""

    S: int
    A: int
    Z: int
    with_spec: bool

    def __post_init__(self):
        S, A, Z = self.S, self.A, self.Z
        SA = S * A
        self.mu = 0
        self.nu = self.mu + S
        self.sigma = self.nu + SA
        self.kp = self.sigma + Z * A
        self.km = self.kp + SA
        n = self.km + SA
        if self.with_spec:
            self.mu_sp = n
            self.nu_sp = self.mu_sp + S
            self.ksp_p = self.nu_sp + SA
            self.ksp_m = self.ksp_p + SA
            self.gamma_sp = self.ksp_m + SA
            n = self.gamma_sp + 1
        self.total = n

    def v_mu(self, s):
        return self.mu + s

    def v_nu(self, s, a):
        return self.nu + s * self.A + a

    def v_sigma(self, z, a):
        return self.sigma + z * self.A + a

    def v_musp(self, s):
        return self.mu_sp + s

    def v_nusp(self, s, a):
        return self.nu_sp + s * self.A + a

    def extract_policy(self, x):
        sig = x[self.sigma:self.sigma + self.Z * self.A].reshape(self.Z, self.A)
        sig = np.maximum(sig, 0.0)
        return Policy(sig / sig.sum(axis=1, keepdims=True))


def _flow_rows(lp, model, vm, v_mu, v_nu, gamma, exclude=None):
    """mu(s) - gamma * sum_{s',a} P(s|s',a) nu(s',a) = mu0(s) for all s."""
    S, A = model.num_states, model.num_actions
    incoming = [[] for _ in range(S)]
    excl = exclude or frozenset()
    for a, pa in enumerate(model.transitions):
        coo = pa.tocoo()
        for src, dst, p in zip(coo.row, coo.col, coo.data):
            if src in excl:
                continue
            incoming[dst].append((v_nu(int(src), a), -gamma * p))
    for s in range(S):
        row = [(v_mu(s), 1.0)]
        merged = {}
        for var, coef in incoming[s]:
            merged[var] = merged.get(var, 0.0) + coef
        if v_mu(s) in merged:
            row = [(v_mu(s), 1.0 + merged.pop(v_mu(s)))]
        row += list(merged.items())
        lp.add_constraint(row, "=", model.initial_dist[s])


def _policy_rows(lp, model, vm, v_mu, v_nu, kp_base, km_base, mu_hat, pi_hat):
    """Linearized policy-consistency rows with split slack."""
    S, A = model.num_states, model.num_actions
    ofn = model.observation_fn
    for s in range(S):
        lo, hi = ofn.indptr[s], ofn.indptr[s + 1]
        zs = ofn.indices[lo:hi]
        ops = ofn.data[lo:hi]
        for a in range(A):
            idx = s * A + a
            row = [
                (v_nu(s, a), 1.0),
                (kp_base + idx, 1.0),
                (km_base + idx, -1.0),
                (v_mu(s), -pi_hat[s, a]),
            ]
            for z, op in zip(zs, ops):
                row.append((vm.v_sigma(int(z), a), -mu_hat[s] * op))
            lp.add_constraint(row, "=", -mu_hat[s] * pi_hat[s, a])


def build_linearized_lp(model, reward, prev_policy, prev_counts, params,
                        spec=None, trust=None):
    """Assemble the trust-region LP around a verified iterate.

    Returns ``(lp, varmap)``. Entropy coefficients at states whose
    previous count is below the occupancy floor are zeroed (with a
    diagnostic when reward mass sits there).
    """
    S, A, Z = model.num_states, model.num_actions, model.num_observations
    vm = _VarMap(S, A, Z, with_spec=spec is not None)
    lp = LinearProgram(vm.total, maximize=True)
    rho = trust if trust is not None else params.trust_init
    beta = params.resolved_beta(reward)
    reward = np.asarray(reward)

    sigma_hat = prev_policy.probs
    pi_hat = policy_state_action(model, prev_policy)
    mu_hat = prev_counts.mu

    live = mu_hat > params.occupancy_floor
    dead = ~live
    if np.any(dead & (np.abs(reward).sum(axis=1) > 0)):
        warnings.warn(
            "zero-visitation states carry reward mass; entropy linearization "
            "coefficients there are dropped", RuntimeWarning)

    # Objective: linearized entropy + reward - slack penalties.
    for s in range(S):
        if live[s]:
            lp.set_objective(vm.v_mu(s), float(pi_hat[s].sum()))
        for a in range(A):
            coef = 0.0
            if live[s] and pi_hat[s, a] > 0:
                coef = -(np.log(pi_hat[s, a]) + 1.0)
            coef += reward[s, a]
            if coef:
                lp.set_objective(vm.v_nu(s, a), float(coef))
            lp.set_objective(vm.kp + s * A + a, -beta)
            lp.set_objective(vm.km + s * A + a, -beta)

    # Trust region on the policy, per-observation simplex rows.
    for z in range(Z):
        for a in range(A):
            lo = sigma_hat[z, a] / rho
            hi = min(1.0, sigma_hat[z, a] * rho)
            lp.set_bounds(vm.v_sigma(z, a), lo, hi)
        lp.add_constraint([(vm.v_sigma(z, a), 1.0) for a in range(A)], "=", 1.0)

    _flow_rows(lp, model, vm, vm.v_mu, vm.v_nu, model.discount)
    for s in range(S):
        row = [(vm.v_mu(s), 1.0)] + [(vm.v_nu(s, a), -1.0) for a in range(A)]
        lp.add_constraint(row, "=", 0.0)
    _policy_rows(lp, model, vm, vm.v_mu, vm.v_nu, vm.kp, vm.km, mu_hat, pi_hat)

    if spec is not None:
        smodel = spec.model
        musp_hat, _nusp_hat, _deg = solve_flow_spec(spec, prev_policy)
        pi_hat_sp = policy_state_action(smodel, prev_policy)
        for s in range(S):
            row = [(vm.v_musp(s), 1.0)] + [(vm.v_nusp(s, a), -1.0) for a in range(A)]
            lp.add_constraint(row, "=", 0.0)
        _flow_rows(lp, smodel, vm, vm.v_musp, vm.v_nusp, 1.0,
                   exclude=spec.flow_exclusions)
        _policy_rows(lp, smodel, vm, vm.v_musp, vm.v_nusp, vm.ksp_p, vm.ksp_m,
                     musp_hat, pi_hat_sp)
        for s in range(S):
            for a in range(A):
                lp.set_objective(vm.ksp_p + s * A + a, -beta)
                lp.set_objective(vm.ksp_m + s * A + a, -beta)
        lp.set_objective(vm.gamma_sp, -params.beta_sp)
        lp.add_constraint(
            [(vm.v_musp(s), 1.0) for s in sorted(spec.targets)]
            + [(vm.gamma_sp, 1.0)],
            ">=", spec.formula.threshold)
    return lp, vm


@dataclass
class ScpResult:
    policy: Policy
    counts: VisitationCounts
    realized_cost: float
    entropy: float
    expected_return: float
    satisfaction: float = None
    log: list = field(default_factory=list)
    converged: bool = False


def _verify(model, reward, policy, spec, beta_sp):
    """Exact flow solves + realized cost for a candidate policy."""
    counts = solve_flow_discounted(model, policy)
    ent = causal_entropy(counts)
    ret = discounted_return(counts, reward)
    cost = ent + ret
    sat = None
    if spec is not None:
        mu_sp, nu_sp, degraded = solve_flow_spec(spec, policy)
        counts = VisitationCounts(mu=counts.mu, nu=counts.nu, mu_sp=mu_sp,
                                  nu_sp=nu_sp, spec_degraded=degraded)
        sat = float(sum(mu_sp[s] for s in spec.targets))
        cost += min(0.0, (sat - spec.formula.threshold) * beta_sp)
    return counts, cost, ent, ret, sat


def scp_forward(model, reward, initial_policy=None, params=None, spec=None,
                backend="highs"):
    """Sequential linearization with trust region and verification.

    Each iteration solves the linearized LP around the current verified
    iterate, renormalizes the candidate policy per observation, re-solves
    the exact flow equations, and accepts only realized-cost improvements
    (expanding the trust region on accept, contracting on reject).
    """
    params = params or ScpParams()
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (model.num_states, model.num_actions):
        raise ValueError("reward table has wrong shape")
    if spec is not None and spec.model.num_states != model.num_states:
        raise ValueError("spec model must share the state space")
    sigma = initial_policy or Policy.uniform(model.num_observations,
                                            model.num_actions)
    if np.any(sigma.probs <= 0):
        raise ValueError("initial policy must be strictly positive")

    beta_sp = params.beta_sp
    counts, cost, ent, ret, sat = _verify(model, reward, sigma, spec, beta_sp)
    rho = params.trust_init
    log = []
    stall = 0
    converged = False
    scale = max(1.0, abs(cost))
    for it in range(params.max_iters):
        t0 = time.perf_counter()
        lp, vm = build_linearized_lp(model, reward, sigma, counts, params,
                                     spec=spec, trust=rho)
        sol = solve_lp(lp, backend=backend)
        if sol.status != OPTIMAL:
            raise NumericalFailure(f"linearized LP is {sol.status}")
        cand = vm.extract_policy(sol.values)
        cand_counts, cand_cost, cand_ent, cand_ret, cand_sat = _verify(
            model, reward, cand, spec, beta_sp)
        accepted = cand_cost >= cost
        if cand_cost - cost > 1e-6 * scale:
            stall = 0
        else:
            stall += 1
        if accepted:
            sigma, counts, cost = cand, cand_counts, cand_cost
            ent, ret, sat = cand_ent, cand_ret, cand_sat
            rho = min(rho * params.trust_factor, 10.0)
        else:
            # contract in log space so rho decays toward 1 instead of
            # jumping below the stopping limit
            rho = max(rho ** (1.0 / params.trust_factor), 1.0 + 1e-12)
        log.append({
            "iteration": it,
            "trust": rho,
            "lp_objective": sol.objective,
            "realized_cost": cost,
            "spec_probability": sat,
            "accepted": accepted,
            "wall_time": time.perf_counter() - t0,
        })
        if rho <= params.trust_lim:
            converged = True
            break
        if stall >= params.stall_iters:
            converged = True
            break
    return ScpResult(policy=sigma, counts=counts, realized_cost=cost,
                     entropy=ent, expected_return=ret, satisfaction=sat,
                     log=log, converged=converged)
