import pytest

from aflsim.config import from_dict

TINY = {
    "env": {"data_size_range": [20, 40]},
    "fl": {"l": 2, "batch_size": 8,
           "model_spec": {"input_dim": 10, "hidden": [[8, "relu"]], "output": [3, "identity"]}},
    "agent": {"batch_size": 4, "buffer_capacity": 200,
              "actor_spec": {"input_dim": 20, "hidden": [[16, "relu"], [8, "relu"]], "output": [5, "sigmoid"]},
              "critic_spec": {"input_dim": 25, "hidden": [[16, "relu"], [8, "relu"]], "output": [1, "identity"]}},
    "episode": {"N": 4, "E_max": 3, "E_test": 2, "eval_during_train": True},
    "data": {"kind": "synthetic-blobs", "n_train": 300, "n_test": 60,
             "synthetic": {"classes": 3, "dims": 10, "per_class": 100}, "synthetic_test_per_class": 20},
}


@pytest.fixture
def tiny_raw():
    import copy
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_cfg(tiny_raw):
    return from_dict(tiny_raw).check()


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdicts():
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
