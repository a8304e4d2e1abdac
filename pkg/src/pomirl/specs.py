"""Reach-avoid task specifications.

A restricted temporal-logic fragment (eventually, globally-not, and
not-A-until-B over state labels) is compiled into a modified model with
absorbing target states. The satisfaction probability of the original
formula is then the total unnormalized flow into the target set.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyTarget, UnknownLabel
from .model import Pomdp

EVENTUALLY = "eventually"
GLOBALLY_NOT = "globally_not"
UNTIL = "until"


@dataclass(frozen=True)
class SpecFormula:
    """One of F goal, G !bad, or !a U b, with a satisfaction threshold."""

    kind: str
    labels: tuple
    threshold: float

    def __post_init__(self):
        if self.kind not in (EVENTUALLY, GLOBALLY_NOT, UNTIL):
            raise ValueError(f"unknown formula kind {self.kind!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0,1]")

    def __str__(self):
        if self.kind == EVENTUALLY:
            body = f"F {self.labels[0]}"
        elif self.kind == GLOBALLY_NOT:
            body = f"G !{self.labels[0]}"
        else:
            body = f"!{self.labels[0]} U {self.labels[1]}"
        return f"{body} >= {self.threshold}"


_SPEC_RE = re.compile(
    r"^\s*(?:F\s+(?P<goal>\w+)"
    r"|G\s+!\s*(?P<bad>\w+)"
    r"|!\s*(?P<avoid>\w+)\s+U\s+(?P<until>\w+))"
    r"\s*>=\s*(?P<thr>[0-9.eE+-]+)\s*$"
)


def parse_spec(line):
    """Parse a one-line spec: 'F goal >= 0.95', 'G !bad >= 0.9',
    '!gravel U goal >= 0.9'."""
    m = _SPEC_RE.match(line)
    if m is None:
        raise ValueError(f"cannot parse specification {line!r}")
    thr = float(m.group("thr"))
    if m.group("goal"):
        return SpecFormula(EVENTUALLY, (m.group("goal"),), thr)
    if m.group("bad"):
        return SpecFormula(GLOBALLY_NOT, (m.group("bad"),), thr)
    return SpecFormula(UNTIL, (m.group("avoid"), m.group("until")), thr)


@dataclass(frozen=True)
class ReachSpec:
    """Modified model plus target set T.

    Every state in ``targets`` is absorbing in ``model``; the satisfaction
    probability of the source formula equals the summed spec-flow into T.
    ``flow_exclusions`` are the states whose outflow is dropped from the
    undiscounted flow balance: the targets plus every other absorbing sink
    (dropping sinks keeps the system nonsingular when some mass is trapped
    outside T).
    """

    model: Pomdp
    targets: frozenset
    provenance: str
    formula: SpecFormula = None

    @property
    def flow_exclusions(self):
        # terminal-labelled states are sinks by convention even when a
        # memory product obscures their self-loops
        return (frozenset(self.targets) | self.model.absorbing_states()
                | self.model.label_states("terminal"))


def _require_label(model, name):
    if name not in model.labels:
        raise UnknownLabel(f"model defines no label {name!r}")
    return set(model.labels[name])


def _make_absorbing(model, states):
    if not states:
        return model
    states = sorted(states)
    new_trans = []
    for pa in model.transitions:
        pa = pa.tolil(copy=True)
        for s in states:
            pa.rows[s] = [s]
            pa.data[s] = [1.0]
        new_trans.append(pa.tocsr())
    return Pomdp(
        num_states=model.num_states,
        num_actions=model.num_actions,
        num_observations=model.num_observations,
        transitions=tuple(new_trans),
        observation_fn=model.observation_fn,
        initial_dist=model.initial_dist,
        discount=model.discount,
        labels=model.labels,
        features=model.features,
    )


def compile_spec(model, formula):
    """Translate a formula into a modified model and target set."""
    if formula.kind == EVENTUALLY:
        goal = _require_label(model, formula.labels[0])
        modified = _make_absorbing(model, goal)
        targets = frozenset(goal)
        provenance = f"goal states {sorted(goal)} made absorbing; T = goal"
    elif formula.kind == GLOBALLY_NOT:
        bad = _require_label(model, formula.labels[0])
        targets = frozenset(model.label_states("terminal") - bad)
        modified = _make_absorbing(model, bad | targets)
        provenance = (
            f"bad states {sorted(bad)} made absorbing; "
            "T = terminal-labelled states outside bad, made absorbing"
        )
    else:
        avoid = _require_label(model, formula.labels[0])
        until = _require_label(model, formula.labels[1])
        modified = _make_absorbing(model, avoid | until)
        targets = frozenset(until)
        provenance = (
            f"avoid states {sorted(avoid - until)} trapped, "
            f"until states {sorted(until)} absorbing; T = until states"
        )
    if not targets:
        raise EmptyTarget(f"specification {formula} yields an empty target set")
    return ReachSpec(model=modified, targets=targets, provenance=provenance,
                     formula=formula)


def satisfaction_probability(spec, mu_sp):
    """Total spec flow into the target set, clamped to [0,1]."""
    total = float(sum(mu_sp[s] for s in spec.targets))
    if total < -1e-6 or total > 1.0 + 1e-6:
        warnings.warn(
            f"satisfaction probability {total:.9g} outside [0,1]; clamping",
            RuntimeWarning,
        )
    return min(1.0, max(0.0, total))
