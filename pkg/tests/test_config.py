import numpy as np
import pytest

from iofsmpc import config as cfgmod
from iofsmpc.errors import ConfigError
from iofsmpc.model import build_paper_example

SMALL = """
[system]
A = [[0.9]]
B = [[1.0]]
C = [[1.0]]
Sigma_wx = [[0.1]]
Sigma_wy = [[0.1]]
mu_x0 = [0.0]
Sigma_x0 = [[0.1]]

[weights]
Q = [[1.0]]
R = [[1.0]]

[[constraints]]
h = [0.5]
p = 0.9

[experiment]
num_trajectories = 5
"""


def test_presets_encode_example():
    for name, mu in (("paper-zero-mean", 0.0), ("paper-nonzero-mean", -1.5)):
        cfg = cfgmod.load_preset(name)
        ex = build_paper_example(mu_x0=(mu, 0.0, 0.0, 0.0))
        for key in ("A", "B", "C", "Sigma_wx", "Sigma_wy", "mu_x0", "Sigma_x0"):
            assert np.array_equal(getattr(cfg.system, key), getattr(ex.system, key)), (name, key)
        assert np.array_equal(cfg.weights.P, ex.weights.P)
        assert np.array_equal(cfg.constraints[0].h, ex.constraints[0].h)
        assert cfg.constraints[0].p == 0.84
        e = cfg.experiment
        assert e.horizon == 20 and e.sim_steps == 100 and e.terminal_mode == "none"
        assert len(e.controllers) == 6 and e.aggressive_Q == (1.0, 100.0, 1.0, 1.0)


def test_defaults_and_parse():
    cfg = cfgmod.parse_config(SMALL)
    assert cfg.experiment.num_trajectories == 5
    assert cfg.experiment.controllers == ("lqg", "iof")
    assert cfg.weights.P[0, 0] > 1.0
    assert cfg.constraints[0].kind == "state"


def test_round_trip_hash():
    for name in cfgmod.PRESETS:
        cfg = cfgmod.load_preset(name)
        again = cfgmod.parse_config(cfgmod.resolved_toml(cfg))
        assert cfgmod.config_hash(again) == cfgmod.config_hash(cfg)
    cfg = cfgmod.parse_config(SMALL)
    assert cfgmod.config_hash(cfgmod.parse_config(cfgmod.resolved_toml(cfg))) == cfgmod.config_hash(cfg)


def test_overrides_change_hash():
    cfg = cfgmod.load_preset("paper-zero-mean")
    other = cfgmod.with_overrides(cfg, master_seed=42, controllers=("lqg",))
    assert other.experiment.master_seed == 42 and other.experiment.controllers == ("lqg",)
    assert cfgmod.config_hash(other) != cfgmod.config_hash(cfg)
    same = cfgmod.with_overrides(cfg, master_seed=None)
    assert cfgmod.config_hash(same) == cfgmod.config_hash(cfg)


@pytest.mark.parametrize("edit,field", [
    (("A = [[0.9]]", "A = [[0.9, 1.0]]"), "system"),
    (("Sigma_wy = [[0.1]]", "Sigma_wy = [[-0.1]]"), "Sigma_wy"),
    (("mu_x0 = [0.0]\n", ""), "system.mu_x0"),
    (("p = 0.9", "p = 1.5"), "constraints[0]"),
    (("h = [0.5]", "h = [0.5, 1.0]"), "constraint h"),
    (("num_trajectories = 5", "num_trajectories = 0"), "experiment"),
    (("num_trajectories = 5", "bogus = 1"), "experiment.bogus"),
    (("[weights]", "[weights]\nS = 1"), "weights.S"),
    (("h = [0.5]", "h = [0.5]\nnormalize = \"other\""), "constraints[0].normalize"),
    (("h = [0.5]", "h = \"x\""), "constraints[0].h"),
])
def test_errors_name_the_field(edit, field):
    text = SMALL.replace(*edit)
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        cfgmod.parse_config(text, "t.toml")


def test_syntax_error_has_line():
    with pytest.raises(ConfigError, match="line 3"):
        cfgmod.parse_config("[system]\nA = [[1.0]]\nB = = 2\n", "bad.toml")


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_preset("nope")
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "missing.toml")


def test_aggressive_requires_weights():
    with pytest.raises(ConfigError, match="aggressive_Q"):
        cfgmod.parse_config(SMALL.replace("num_trajectories = 5", 'controllers = ["iof-aggressive"]'))
