"""Command-line front end.

Subcommands: env, validate, solve-forward, demo, irl, eval, bench.
Exit codes: 0 success, 1 malformed input, 2 numerical/solver failure.
All artifacts carry a format_version field; CSV/JSON outputs are
deterministic given the same config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import envs
from .errors import PomirlError
from .forward import ScpParams, scp_forward, solve_flow_spec
from .irl import (DemonstrationSet, RewardModel, mce_irl, reobserve_trace)
from .model import (FORMAT_VERSION, FscShape, Policy, dump_pomdp, load_pomdp,
                    product_with_memory, rollout, validate_pomdp)
from .specs import compile_spec, parse_spec


def _parse_theta(text):
    return np.array([float(v) for v in text.split(",")])


def _load_spec_arg(arg, override_threshold=None):
    """Spec argument: inline formula text or a path to a one-line file."""
    try:
        formula = parse_spec(arg)
    except ValueError:
        with open(arg) as fh:
            formula = parse_spec(fh.read().strip())
    if override_threshold is not None:
        formula = parse_spec(str(formula).rsplit(">=", 1)[0] + f">= {override_threshold}")
    return formula


def _scp_params(args):
    kw = {}
    if getattr(args, "trust_init", None) is not None:
        kw["trust_init"] = args.trust_init
    if getattr(args, "beta", None) is not None:
        kw["beta"] = args.beta
    if getattr(args, "beta_sp", None) is not None:
        kw["beta_sp"] = args.beta_sp
    if getattr(args, "max_iters", None) is not None:
        kw["max_iters"] = args.max_iters
    return ScpParams(**kw)


def _reward_from_args(model, args):
    names = args.features.split(",") if args.features else sorted(model.features)
    theta = _parse_theta(args.theta) if args.theta else np.ones(len(names))
    return RewardModel(names, theta)


def _write_policy(path, policy, meta=None):
    doc = {"format_version": FORMAT_VERSION, "probs": policy.probs.tolist()}
    doc.update(meta or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_policy(path):
    with open(path) as fh:
        doc = json.load(fh)
    return Policy(np.array(doc["probs"]))


def _write_iters(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "trust", "lp_objective", "realized_cost",
                    "spec_probability", "accepted", "wall_time"])
        for row in log:
            w.writerow([row["iteration"], f"{row['trust']:.6g}",
                        f"{row['lp_objective']:.12g}",
                        f"{row['realized_cost']:.12g}",
                        "" if row["spec_probability"] is None
                        else f"{row['spec_probability']:.9g}",
                        int(row["accepted"]), f"{row['wall_time']:.4f}"])


def _write_json(path, doc):
    doc = dict(doc)
    doc.setdefault("format_version", FORMAT_VERSION)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _outdir(args):
    import os
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------


def cmd_env(args):
    name = args.name
    if name == "maze":
        model, theta, formula = envs.make_maze(
            gamma=args.gamma if args.gamma is not None else envs.MAZE_GAMMA)
        extra = {"theta_star": theta.tolist(),
                 "feature_names": list(envs.MAZE_FEATURES)}
    elif name == "obstacle":
        model, formula = envs.make_obstacle(
            args.n or 10, slip=args.slip, seed=args.seed,
            gamma=args.gamma if args.gamma is not None else 0.95)
        extra = {}
    elif name == "evade":
        model, formula = envs.make_evade(
            args.n or 5, args.r, args.slip,
            gamma=args.gamma if args.gamma is not None else 0.95)
        extra = {}
    else:
        print(f"unsupported environment {name!r} "
              "(supported: maze, obstacle, evade)", file=sys.stderr)
        return 1
    dump_pomdp(model, args.out)
    with open(args.out + ".spec", "w") as fh:
        fh.write(str(formula) + "\n")
    if extra:
        with open(args.out + ".meta.json", "w") as fh:
            json.dump({"format_version": FORMAT_VERSION, **extra}, fh, indent=1)
    print(f"wrote {args.out}: {model.num_states} states, "
          f"{model.num_actions} actions, {model.num_observations} observations")
    return 0


def cmd_validate(args):
    model = load_pomdp(args.model)
    problems = validate_pomdp(model)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return 0 if not problems else 1


def _forward_once(model, args, reward_model):
    spec = None
    if args.spec:
        formula = _load_spec_arg(args.spec, args.threshold)
        spec = compile_spec(model, formula)
    prod = None
    target = model
    reward = reward_model.table(model)
    if args.memory > 1:
        prod = product_with_memory(model, FscShape(args.memory))
        target = prod.product
        reward = envs._lift_reward(model, prod, reward)
        if spec is not None:
            spec = compile_spec(target, spec.formula)
    res = scp_forward(target, reward, params=_scp_params(args), spec=spec)
    return res, target, prod, spec


def cmd_solve_forward(args):
    model = load_pomdp(args.model)
    if args.gamma is not None:
        model = _with_gamma(model, args.gamma)
    reward_model = _reward_from_args(model, args)
    out = _outdir(args)
    t0 = time.perf_counter()
    res, target, prod, spec = _forward_once(model, args, reward_model)
    wall = time.perf_counter() - t0
    meta = {}
    if prod is not None:
        meta = {"memory": args.memory,
                "observation_origin": [list(p) for p in prod.observation_origin],
                "action_origin": [list(p) for p in prod.action_origin]}
    _write_policy(f"{out}/policy.json", res.policy, meta)
    _write_iters(f"{out}/iters.csv", res.log)
    _write_json(f"{out}/summary.json", {
        "objective": res.realized_cost,
        "entropy": res.entropy,
        "return": res.expected_return,
        "spec_probability": res.satisfaction,
        "converged": res.converged,
        "iterations": len(res.log),
        "wall_time": wall,
    })
    print(f"objective {res.realized_cost:.4f} "
          f"(entropy {res.entropy:.4f}, return {res.expected_return:.4f}) "
          f"in {len(res.log)} iterations, {wall:.1f}s")
    return 0


def _with_gamma(model, gamma):
    from dataclasses import replace
    return replace(model, discount=float(gamma))


def cmd_demo(args):
    model = load_pomdp(args.model)
    reward_model = _reward_from_args(model, args)
    expert = envs.make_expert(model, reward_model.theta, args.kind,
                              M=args.memory,
                              feature_names=reward_model.feature_names)
    rng = np.random.default_rng(args.seed)
    traces = []
    for i in range(args.count):
        trace, _totals = rollout(expert.model, expert.policy, args.horizon,
                                 int(rng.integers(2 ** 31)))
        if expert.product is not None:
            origin = expert.product
            trace = [(origin.state_origin[s][0], 0, origin.action_origin[a][0])
                     for s, _z, a in trace]
        trace = reobserve_trace(model, trace, rng)
        traces.append(trace)
    DemonstrationSet(traces, horizon=args.horizon).save(args.out)
    print(f"wrote {len(traces)} demonstrations to {args.out}")
    return 0


def cmd_irl(args):
    model = load_pomdp(args.model)
    if args.gamma is not None:
        model = _with_gamma(model, args.gamma)
    demos = DemonstrationSet.load(args.demos)
    names = args.features.split(",") if args.features else sorted(model.features)
    spec = None
    if args.spec:
        spec = compile_spec(model, _load_spec_arg(args.spec, args.threshold))
    out = _outdir(args)
    res = mce_irl(model, demos, names, spec=spec, params=_scp_params(args),
                  max_iters=args.outer_iters, eta0=args.eta0)
    res.save_history(f"{out}/theta_history.csv")
    _write_policy(f"{out}/policy.json", res.forward.policy)
    _write_json(f"{out}/summary.json", {
        "theta": res.reward.theta.tolist(),
        "feature_names": names,
        "objective": res.forward.realized_cost,
        "spec_probability": res.forward.satisfaction,
        "grad_norms": res.grad_norms,
        "converged": res.converged,
    })
    if args.theta:  # ground truth supplied: evaluate learned policy on it
        truth = RewardModel(names, _parse_theta(args.theta))
        _eval_policy(model, res.forward.policy, truth, f"{out}/eval.csv",
                     args.rollouts, args.horizon, args.seed)
    print(f"theta {np.array2string(res.reward.theta, precision=4)} "
          f"grad_norm {res.grad_norms[-1]:.4g}")
    return 0


def _eval_policy(model, policy, reward_model, path, n_rollouts, horizon, seed):
    """Mean and std of cumulative discounted true reward per time step."""
    rng = np.random.default_rng(seed)
    curves = np.zeros((n_rollouts, horizon))
    theta = dict(zip(reward_model.feature_names, reward_model.theta))
    for i in range(n_rollouts):
        trace, _ = rollout(model, policy, horizon, int(rng.integers(2 ** 31)))
        acc, disc = 0.0, 1.0
        for t in range(horizon):
            if t < len(trace):
                s, _z, a = trace[t]
                acc += disc * sum(w * model.features[nm][s, a]
                                  for nm, w in theta.items())
                disc *= model.discount
            curves[i, t] = acc
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_cumulative_reward", "std_cumulative_reward"])
        for t in range(horizon):
            w.writerow([t, f"{curves[:, t].mean():.9g}", f"{curves[:, t].std():.9g}"])
    return float(curves[:, -1].mean()), float(curves[:, -1].std())


def cmd_eval(args):
    model = load_pomdp(args.model)
    policy = load_policy(args.policy)
    reward_model = _reward_from_args(model, args)
    out = _outdir(args)
    mean, std = _eval_policy(model, policy, reward_model, f"{out}/eval.csv",
                             args.rollouts, args.horizon, args.seed)
    doc = {"mean_reward": mean, "std_reward": std, "rollouts": args.rollouts}
    if args.spec:
        spec = compile_spec(model, _load_spec_arg(args.spec, args.threshold))
        mu_sp, _nu, degraded = solve_flow_spec(spec, policy)
        doc["spec_probability"] = float(sum(mu_sp[s] for s in spec.targets))
        doc["spec_degraded"] = degraded
    _write_json(f"{out}/summary.json", doc)
    print(f"mean reward {mean:.4f} +- {std:.4f} over {args.rollouts} rollouts")
    return 0


def cmd_bench(args):
    if args.name == "maze":
        model, theta, formula = envs.make_maze()
        names = list(envs.MAZE_FEATURES)
    elif args.name == "obstacle":
        model, formula = envs.make_obstacle(args.n or 10, slip=args.slip,
                                            seed=args.seed)
        theta, names = np.ones(3), sorted(model.features)
    elif args.name == "evade":
        model, formula = envs.make_evade(args.n or 5, args.r, args.slip)
        theta, names = np.ones(3), sorted(model.features)
    else:
        print(f"unsupported benchmark {args.name!r}", file=sys.stderr)
        return 1
    reward = model.state_action_rewards(theta, names)
    t0 = time.perf_counter()
    res = scp_forward(model, reward, params=_scp_params(args))
    wall = time.perf_counter() - t0
    print(f"{args.name}: {model.num_states} states, "
          f"objective {res.realized_cost:.2f}, {len(res.log)} iterations, "
          f"{wall:.2f}s")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="pomirl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        if model:
            sp.add_argument("--model", required=True)
        sp.add_argument("--spec", default=None,
                        help="inline formula like 'G !bad >= 0.9' or a file path")
        sp.add_argument("--lambda", dest="threshold", type=float, default=None,
                        help="override the spec threshold")
        sp.add_argument("--gamma", type=float, default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-iters", type=int, default=None)
        sp.add_argument("--trust-init", type=float, default=None)
        sp.add_argument("--beta", type=float, default=None)
        sp.add_argument("--beta-sp", type=float, default=None)
        sp.add_argument("--theta", default=None, help="comma-separated weights")
        sp.add_argument("--features", default=None,
                        help="comma-separated feature names (default: sorted)")

    sp = sub.add_parser("env", help="generate a benchmark model file")
    sp.add_argument("name")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--r", type=int, default=2)
    sp.add_argument("--slip", type=float, default=0.1)
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_env)

    sp = sub.add_parser("validate", help="check model invariants")
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("solve-forward", help="entropy+reward forward solve")
    common(sp)
    sp.add_argument("--memory", type=int, default=1)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_solve_forward)

    sp = sub.add_parser("demo", help="synthesize expert demonstrations")
    common(sp)
    sp.add_argument("--kind", choices=("mdp", "pomdp"), default="mdp")
    sp.add_argument("--memory", type=int, default=1)
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--horizon", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("irl", help="infer reward weights from demonstrations")
    common(sp)
    sp.add_argument("--demos", required=True)
    sp.add_argument("--outer-iters", type=int, default=20)
    sp.add_argument("--eta0", type=float, default=None)
    sp.add_argument("--rollouts", type=int, default=1000)
    sp.add_argument("--horizon", type=int, default=100)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_irl)

    sp = sub.add_parser("eval", help="Monte Carlo policy evaluation")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--rollouts", type=int, default=1000)
    sp.add_argument("--horizon", type=int, default=100)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="generate and solve one benchmark")
    common(sp, model=False)
    sp.add_argument("--name", required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--r", type=int, default=2)
    sp.add_argument("--slip", type=float, default=0.1)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except PomirlError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
