import json

import pytest

from modseg.config import RunConfig
from modseg.errors import ValidationError


def test_defaults():
    c = RunConfig()
    assert (c.K, c.t_f, c.t_m, c.strength, c.steps, c.max_timestep) == (30, 1, 281, 10.0, 50, 1000)
    assert c.feature_site == "upward-16-1" and c.modulation_site == "upward-16-3"
    assert c.embedding_timestep == 200 and c.inject_attention and c.prompt == ""
    assert c.checkpoint == "CompVis/stable-diffusion-v1-4"


@pytest.mark.parametrize("change", [{"K": 0}, {"strength": -1.0}, {"sigma": -0.1}, {"t_m": 0},
                                    {"t_f": 1001}, {"modulation_site": "upward-16-9"},
                                    {"placement": "sideways"}, {"steps": 0}, {"n_init": 0}])
def test_validation(change):
    with pytest.raises((ValidationError, ValueError)):
        RunConfig(**change)


def test_hash_ignores_operational_keys():
    a = RunConfig()
    assert a.content_hash() == a.replace(workers=8, output_dir="elsewhere", cache_dir="/tmp/x").content_hash()
    assert a.content_hash() != a.replace(K=10).content_hash()


def test_json_round_trip(tmp_path):
    c = RunConfig(K=12, sigma=2.0, placement="pre_projection", inject_attention=False)
    c.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == c


def test_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"K": 3, "lambda_": 2}))
    with pytest.raises(ValidationError, match="lambda_"):
        RunConfig.load(tmp_path / "c.json")


def test_correspondence_config():
    cc = RunConfig(strength=5.0, sigma=0.0).correspondence()
    assert cc.strength == 5.0 and cc.sigma == 0.0 and cc.timestep == 281
