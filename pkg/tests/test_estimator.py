import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from discrete_sac.estimator import DiscreteSAC
from discrete_sac.exceptions import ContractError
from discrete_sac.mdp import build_chain
from discrete_sac.oracle import expected_return, policy_iteration


def test_params_round_trip():
    est = DiscreteSAC(total_env_steps=50, baseline=False, random_state=3)
    params = est.get_params()
    assert params["baseline"] is False and params["random_state"] == 3
    assert clone(est).get_params() == params


def test_unfitted():
    with pytest.raises(NotFittedError):
        DiscreteSAC().predict([0])


def test_fit_predict_score(tmp_path):
    mdp = build_chain(4)
    est = DiscreteSAC(total_env_steps=300, batch_size=8, eval_episodes=2, out_dir=str(tmp_path)).fit(mdp)
    assert est.n_updates_ == 600 and len(est.eval_returns_) == 2
    probs = est.predict_proba(np.arange(4))
    assert probs.shape == (4, 2) and np.allclose(probs.sum(axis=1), 1.0)
    assert est.predict([0, 1]).shape == (2,)
    optimal = expected_return(mdp, policy_iteration(mdp)[0])
    assert est.score(mdp) <= optimal + 1e-12
    with pytest.raises(ContractError):
        est.predict([9])


def test_same_seed_same_policy():
    mdp = build_chain(3)
    a = DiscreteSAC(total_env_steps=100, batch_size=8, random_state=1).fit(mdp)
    b = DiscreteSAC(total_env_steps=100, batch_size=8, random_state=1).fit(mdp)
    assert np.array_equal(a.predict_proba([0, 1, 2]), b.predict_proba([0, 1, 2]))
