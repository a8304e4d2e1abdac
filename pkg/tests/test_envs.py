import numpy as np
import pytest

from pomirl.envs import (MAZE_FEATURES, MAZE_GAMMA, Expert, fully_observed,
                         make_evade, make_expert, make_maze, make_obstacle,
                         value_iteration)
from pomirl.model import (FscShape, dump_pomdp, product_with_memory,
                          validate_pomdp)
from pomirl.specs import compile_spec


def test_maze_counts_and_validity():
    m, theta, formula = make_maze()
    assert m.num_states == 17
    assert m.num_observations == 11
    assert m.num_actions == 4
    assert validate_pomdp(m) == []
    assert theta.shape == (3,)
    assert str(formula) == "G !bad >= 0.9"


def test_maze_product_counts():
    m, _, _ = make_maze()
    assert product_with_memory(m, FscShape(3)).product.num_states == 49
    assert product_with_memory(m, FscShape(3)).product.num_observations == 31
    p10 = product_with_memory(m, FscShape(10)).product
    assert (p10.num_states, p10.num_observations) == (161, 101)


def test_maze_structure():
    m, _, _ = make_maze()
    # decoy cells feed the bad sink, goal feeds the goal sink
    for a in range(4):
        assert m.transitions[a][13, 15] == 1.0
        assert m.transitions[a][12, 16] == 1.0
        assert m.transitions[a][14, 16] == 1.0
    assert m.is_absorbing(15) and m.is_absorbing(16)
    # corridor observations are aliased across corridors
    obs_row = m.observation_fn.toarray().argmax(axis=1)
    assert obs_row[6] == obs_row[7] == obs_row[8]
    assert obs_row[9] == obs_row[10] == obs_row[11]
    assert obs_row[2] == obs_row[4]
    assert len({obs_row[1], obs_row[3], obs_row[5]}) == 3
    # features
    assert np.all(m.features["time"] == -1.0)
    assert m.features["target"][13, 0] == 1.0
    assert m.features["bad"][12, 0] == -1.0


def test_maze_spec_compiles_nonempty():
    m, _, formula = make_maze()
    spec = compile_spec(m, formula)
    assert spec.targets == frozenset({15})


def test_obstacle_counts_and_validity():
    m, formula = make_obstacle(10)
    assert abs(m.num_states - 102) <= 2
    assert m.num_observations == 5
    assert validate_pomdp(m) == []
    assert len(m.labels["obstacle"]) == 5
    assert str(formula) == "!obstacle U exit >= 0.9"
    assert compile_spec(m, formula).targets


def test_obstacle_25_count():
    m, _ = make_obstacle(25)
    assert abs(m.num_states - 627) <= 2


def test_obstacle_sensing():
    m, _ = make_obstacle(10)
    obs = m.observation_fn.toarray().argmax(axis=1)
    for s in m.labels["obstacle"]:
        assert obs[s] == 1
    (exit_cell,) = m.labels["exit"]
    assert obs[exit_cell] == 2


def test_obstacle_seed_determinism():
    a, _ = make_obstacle(10, seed=3)
    b, _ = make_obstacle(10, seed=3)
    assert dump_pomdp(a) == dump_pomdp(b)
    c, _ = make_obstacle(10, seed=4)
    assert a.labels["obstacle"] != c.labels["obstacle"]


def test_evade_counts_and_validity():
    m, formula = make_evade(5, 2, 0.0)
    assert abs(m.num_states - 2081) <= 5
    assert m.num_actions == 5
    assert validate_pomdp(m) == []
    assert str(formula) == "F destination >= 0.98"
    assert compile_spec(m, formula).targets


def test_evade_deterministic_when_no_slip():
    m, _ = make_evade(4, 1, 0.0)
    # agent-turn transitions are deterministic: each row has at most two
    # entries only through the opponent's uniform walk, never through slip
    m2, _ = make_evade(4, 1, 0.3)
    assert m.transitions[0].nnz < m2.transitions[0].nnz


def test_evade_scan_visibility():
    m, _ = make_evade(4, 1, 0.0)
    obs = m.observation_fn.toarray().argmax(axis=1)
    # observations strictly refine when the scan flag is set
    assert len(set(obs.tolist())) == m.num_observations


def test_generator_preconditions():
    with pytest.raises(ValueError):
        make_obstacle(4)
    with pytest.raises(ValueError):
        make_evade(3, 1, 0.0)
    with pytest.raises(ValueError):
        make_evade(5, 0, 0.0)


def test_value_iteration_two_state_closed_form():
    # stay (reward 1) vs leave to a zero-reward sink: V = 1/(1-gamma)
    import scipy.sparse as sp
    from pomirl.model import Pomdp
    P0 = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    P1 = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 1.0]]))
    m = Pomdp(2, 2, 2, (P0, P1), sp.identity(2, format="csr"),
              np.array([1.0, 0.0]), 0.9)
    R = np.array([[1.0, 0.0], [0.0, 0.0]])
    V, Q, greedy = value_iteration(m, R)
    assert V[0] == pytest.approx(10.0, abs=1e-6)
    assert greedy[0] == 0


def test_mdp_expert_on_maze():
    m, theta, _ = make_maze()
    ex = make_expert(m, theta, "mdp", feature_names=list(MAZE_FEATURES))
    assert isinstance(ex, Expert)
    assert ex.model.num_observations == m.num_states
    # deterministic policy rows
    assert np.all(ex.policy.probs.max(axis=1) == 1.0)
    # the greedy expert never walks into a decoy cell on purpose:
    # state 10 sits above the goal, its greedy action leads to 13
    full = fully_observed(m)
    R = m.state_action_rewards(theta, list(MAZE_FEATURES))
    V, _Q, greedy = value_iteration(full, R)
    assert V @ m.initial_dist == pytest.approx(36.54, abs=0.1)


def test_pomdp_expert_trivial_model():
    import scipy.sparse as sp
    from pomirl.model import Pomdp
    P = (sp.csr_matrix(np.array([[1.0]])),)
    m = Pomdp(1, 1, 1, P, sp.csr_matrix(np.array([[1.0]])),
              np.array([1.0]), 0.5, features={"f": np.array([[1.0]])})
    ex = make_expert(m, np.array([1.0]), "pomdp", feature_names=["f"])
    assert ex.policy.probs == pytest.approx(np.array([[1.0]]))


def test_expert_kind_validation():
    m, theta, _ = make_maze()
    with pytest.raises(ValueError):
        make_expert(m, theta, "oracle")
    with pytest.raises(ValueError):
        make_expert(m, np.array([np.nan, 0, 0]), "mdp")


def test_maze_seedless_determinism():
    assert dump_pomdp(make_maze()[0]) == dump_pomdp(make_maze()[0])
