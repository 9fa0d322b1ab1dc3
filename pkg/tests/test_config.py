import copy
import json

import pytest

from glevy.config import BUILTIN, QUADRATIC, RunConfig, digest
from glevy.errors import ConfigError


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_builtins_load(name):
    rc = RunConfig.load(f"builtin:{name}")
    rc.model()
    rc.grid()
    rc.terminal()
    assert rc.seed() == 20240607


def test_load_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(QUADRATIC))
    assert RunConfig.load(path).digest == digest(QUADRATIC)


def test_digest_is_key_order_independent():
    shuffled = dict(reversed(list(QUADRATIC.items())))
    assert digest(shuffled) == digest(QUADRATIC)
    changed = copy.deepcopy(QUADRATIC)
    changed["grid"]["nx"] = 401
    assert digest(changed) != digest(QUADRATIC)


def mutate(**kw):
    cfg = copy.deepcopy(QUADRATIC)
    for k, v in kw.items():
        if v is None:
            cfg.pop(k)
        else:
            cfg[k] = v
    return cfg


@pytest.mark.parametrize("cfg", [
    [],
    mutate(schema=2),
    mutate(extra={}),
    mutate(model=None),
    mutate(model={"vols": []}),
    mutate(grid={"x_min": 0, "x_max": -1, "nx": 5, "T": 1}),
    mutate(grid={"x_min": -1, "x_max": 1, "nx": 5, "T": 1, "bogus": 1}),
    mutate(payoff={"what": 1}),
])
def test_invalid_configs(cfg):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(cfg)


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)
    with pytest.raises(ConfigError):
        RunConfig.load("builtin:nope")


def test_seed_override_and_missing():
    assert RunConfig.from_dict(copy.deepcopy(QUADRATIC)).seed(5) == 5
    with pytest.raises(ConfigError):
        RunConfig.from_dict(mutate(seed=None)).seed()


def test_missing_sections():
    rc = RunConfig.from_dict(mutate(grid=None, payoff=None))
    for call in (rc.grid, rc.terminal, lambda: rc.section("cylinder")):
        with pytest.raises(ConfigError):
            call()
