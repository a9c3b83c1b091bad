from pathlib import Path

import pytest

from src.env_loader import environment_from_dict, load_environment, parse_key, parse_number
from src.environments import observation_likelihood, value
from src.errors import ConfigError, UnknownObservation
from src.presets import make_hybrid_mdp

ENV_DIR = Path(__file__).resolve().parent.parent / "config" / "environments"


@pytest.mark.parametrize("name, kind, n_models", [
    ("toy_separation.yaml", "bandit", 2),
    ("two_arm_bandit.yaml", "bandit", 2),
    ("layered_complete.yaml", "stochastic_mdp", 4),
    ("layered_small.yaml", "stochastic_mdp", 2),
    ("hybrid_alternating.yaml", "hybrid_mdp", 4),
])
def test_shipped_environments_load(name, kind, n_models):
    env = load_environment(ENV_DIR / name)
    assert env.kind == kind
    assert len(env.models) == n_models


def test_hybrid_document_matches_preset():
    loaded = load_environment(ENV_DIR / "hybrid_alternating.yaml")
    preset = make_hybrid_mdp()
    assert [m.model_id for m in loaded.models] == [m.model_id for m in preset.models]
    for policy in preset.policies:
        for model in preset.models:
            assert value(loaded.model(model.model_id), loaded.policy(policy.policy_id)) == \
                pytest.approx(value(model, policy), abs=1e-12)
    assert loaded.model_at_round(2).model_id == "Pa+R2"


def test_parse_number():
    assert parse_number("1/2") == 0.5
    assert parse_number("0.25") == 0.25
    assert parse_number(3) == 3.0
    with pytest.raises(ConfigError) as info:
        parse_number("half", key="probs")
    assert info.value.key == "probs"


def test_parse_key():
    assert parse_key("1, x, 0") == (1, "x", 0)
    with pytest.raises(ConfigError):
        parse_key("1,x")
    with pytest.raises(ConfigError):
        parse_key("one,x,0")


def test_unknown_preset_and_kind():
    with pytest.raises(ConfigError) as info:
        environment_from_dict({"preset": "chess"})
    assert info.value.key == "preset"
    with pytest.raises(ConfigError) as info:
        environment_from_dict({"kind": "pomdp"})
    assert info.value.key == "kind"
    with pytest.raises(ConfigError):
        environment_from_dict({"preset": "toy_separation", "arms": 4})


def test_missing_models():
    with pytest.raises(ConfigError) as info:
        environment_from_dict({"kind": "bandit"})
    assert info.value.key == "models"


def test_unnormalized_law_is_a_config_error():
    doc = {
        "kind": "bandit",
        "models": [{"id": "M1", "arms": [{"0": "0.3", "1": "0.3"}]}],
        "true_model": "M1",
    }
    with pytest.raises(ConfigError) as info:
        environment_from_dict(doc)
    assert info.value.key == "models[0].arms[0]"


def test_invalid_yaml_reports_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("kind: bandit\nmodels: [\n  {id: M1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_environment(path)
    assert info.value.line is not None


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_environment(tmp_path / "nowhere.yaml")


def test_bandit_models_share_the_union_of_reward_supports():
    doc = {
        "kind": "bandit",
        "models": [
            {"id": "M1", "arms": [{"0": "1/2", "1": "1/2"}]},
            {"id": "M2", "arms": [{"1/2": "1"}]},
        ],
        "true_model": "M1",
    }
    env = environment_from_dict(doc)
    assert env.model("M1").reward_support == env.model("M2").reward_support == (0.0, 0.5, 1.0)
    assert observation_likelihood(env.model("M1"), env.policies[0], 0.5) == 0.0
    with pytest.raises(UnknownObservation):
        observation_likelihood(env.model("M2"), env.policies[0], 0.25)
