import pytest

from stochtraffic.agent import AgentConfig
from stochtraffic.config import RunConfig
from stochtraffic.scenario import ConfigurationError, ScenarioConfig


def test_roundtrip_defaults():
    cfg = RunConfig()
    assert RunConfig.from_string(cfg.to_string()) == cfg


def test_roundtrip_modified(tmp_path):
    text = "[scenario]\nm = 5\nd_max = 1000.0\nv_des_range = 19.0, 24.0\n[agent]\nlr = 0.0003\n[eval]\nmode = gan\n"
    cfg = RunConfig.from_string(text)
    assert cfg.scenario == ScenarioConfig(m=5, d_max=1000.0, v_des_range=(19.0, 24.0))
    assert cfg.agent == AgentConfig(lr=3e-4) and cfg.eval.mode == "gan"
    cfg.save(tmp_path / "c.ini")
    assert RunConfig.load(tmp_path / "c.ini") == cfg
    assert RunConfig.load(tmp_path / "c.ini").to_string() == cfg.to_string()


def test_provenance_comments():
    text = RunConfig().to_string()
    lines = text.splitlines()
    i = lines.index("d_delta = 25.0")
    assert lines[i - 1] == '# provenance = "published"'
    i = lines.index("batch = 64")
    assert lines[i - 1] == '# provenance = "invented"'


def test_idm_key_case_kept():
    assert RunConfig.from_string("[idm]\nT = 2.0\n").idm.T == 2.0


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[scenario]\nwhatever = 1\n",
    "[scenario]\nm = many\n",
    "[scenario]\nd_delta = -1\n",
    "no section header\n",
])
def test_rejections(text):
    with pytest.raises(ConfigurationError):
        RunConfig.from_string(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "nope.ini")


def test_traffic_params_follow_drivers_section():
    cfg = RunConfig.from_string("[drivers]\nsr_lc = 0.2\nk_near = 0.5\n")
    p = cfg.traffic_params()
    assert p.sr_lc == 0.2 and p.steering.k_near == 0.5
