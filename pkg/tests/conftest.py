import numpy as np
import pytest

from feedsim.monitor import train_nominal
from feedsim.scenario import Scenario
from feedsim.system import run_headless


@pytest.fixture(scope="session")
def scenario():
    return Scenario.default()


def _feature_events(record):
    return [e for e in record.events if e.kind == "features"]


@pytest.fixture(scope="session")
def nominal_corpus(scenario):
    """Nominal scoop and delivery feature streams at a quicker duration scale.

    12 runs per subtask: 10 train + 2 held out.  Deliveries are dry runs
    (same motions, no food needed).
    """
    fast = scenario.replace(**{"duration_scale": 0.8})
    corpus = {"scenario": fast, "scoop": [], "deliver": []}
    for seed in range(12):
        rec = run_headless(fast, [{"at": 0.3, "command": "scoop"}], seed=seed)
        fe = _feature_events(rec)
        assert len(fe) == 1
        corpus["scoop"].append((np.array(fe[0].data["features"]),
                                np.array(fe[0].data["progresses"])))
    for seed in range(12):
        rec = run_headless(fast, [{"at": 0.3, "command": "dry_run"}], seed=100 + seed)
        fe = _feature_events(rec)
        assert len(fe) == 1
        corpus["deliver"].append((np.array(fe[0].data["features"]),
                                  np.array(fe[0].data["progresses"])))
    return corpus


@pytest.fixture(scope="session")
def nominal_models(nominal_corpus):
    cfg = nominal_corpus["scenario"].monitor
    models = {}
    for sub in ("scoop", "deliver"):
        seqs = [s for s, _ in nominal_corpus[sub][:10]]
        progs = [p for _, p in nominal_corpus[sub][:10]]
        models[sub] = train_nominal(seqs, progs, sub, cfg)
    return models
