import math

import numpy as np
import pandas as pd
import pytest

from src.agents import AgentConfig
from src.bench import (
    CSV_COLUMNS,
    DIGDEC_COLUMNS,
    ExperimentConfig,
    RegretRecord,
    cmd_digdec,
    cmd_run,
    parse_seeds,
    records_frame,
    run_file_name,
    run_rng,
    write_csv_atomic,
)
from src.errors import ConfigError

AGENTS = [AgentConfig(name="uniform", decision="uniform"), AgentConfig(name="phi_air")]


def _config(output_dir, **kwargs):
    data = dict(name="smoke", environment="toy_separation", T=16, seeds=[1, 2], output_dir=str(output_dir))
    data.update(kwargs)
    return ExperimentConfig(**data)


def test_parse_seeds():
    assert parse_seeds("1,2,3") == [1, 2, 3]
    assert parse_seeds("1-4") == [1, 2, 3, 4]
    assert parse_seeds("1-2, 7") == [1, 2, 7]
    assert parse_seeds(5) == [5]
    assert parse_seeds([3, 4]) == [3, 4]
    with pytest.raises(ConfigError):
        parse_seeds("a,b")


def test_config_validation():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(seeds=[])
    assert info.value.key == "seeds"
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[1, 1])
    with pytest.raises(ConfigError):
        ExperimentConfig(T=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="kl")
    assert ExperimentConfig(agents="a, b").agents == ["a", "b"]


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("environment: toy_separation\nT: 16\ncolour: red\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(path, global_config={})
    assert info.value.key == "colour"
    assert info.value.line == 3


def test_invalid_value_reports_line(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("environment: toy_separation\nseeds: []\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(path, global_config={})
    assert info.value.line == 2


def test_nested_mappings_are_rejected(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("environment: toy_separation\nsolver:\n  max_iters: 3\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_file(path, global_config={})
    assert info.value.key == "solver"


def test_override_order(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("environment: toy_separation\nT: 32\n", encoding="utf-8")
    config = ExperimentConfig.from_file(path, {"seeds": [4], "T": None}, {"bench": {"T": 8, "seeds": [1, 2]}})
    assert config.T == 32
    assert config.seeds == [4]
    assert config.name == "exp"
    assert config.preset_params() == {"T": 32}


def test_shipped_environment_by_file_name(tmp_path):
    config = _config(tmp_path, environment="two_arm_bandit.yaml")
    env = config.build_environment()
    assert env.kind == "bandit"
    with pytest.raises(ConfigError):
        _config(tmp_path, environment="missing.yaml").build_environment()


def test_rng_streams_are_independent():
    assert run_rng(1, "a").random() == run_rng(1, "a").random()
    assert run_rng(1, "a").random() != run_rng(1, "b").random()
    assert run_rng(1, "a").random() != run_rng(2, "a").random()


def test_records_must_be_contiguous():
    records = [RegretRecord("e", "a", 1, t, 0.0, 0.0, 0.0, 0.0, 0.0) for t in (1, 3)]
    with pytest.raises(ValueError):
        records_frame(records)


def test_atomic_write_leaves_no_temp_file(tmp_path):
    path = write_csv_atomic(pd.DataFrame({"x": [1.0]}), tmp_path / "out" / "x.csv")
    assert path.exists()
    assert [p.name for p in path.parent.iterdir()] == ["x.csv"]


def test_run_writes_per_seed_files_and_aggregate(tmp_path):
    config = _config(tmp_path / "run")
    result = cmd_run(config, AGENTS)
    assert len(result.runs) == 4
    for agent in AGENTS:
        for seed in config.seeds:
            frame = pd.read_csv(tmp_path / "run" / run_file_name("smoke", agent.name, seed))
            assert list(frame.columns) == CSV_COLUMNS
            assert frame["round"].tolist() == list(range(1, 17))
            assert np.all(np.diff(frame["pseudo_regret_cum"]) >= -1e-12)
    assert result.summary_path is not None and result.summary_path.exists()
    assert all(run.ledger_ok for run in result.for_agent("phi_air"))


def test_aggregate_is_recomputable(tmp_path):
    result = cmd_run(_config(tmp_path), AGENTS)
    aggregate = pd.read_csv(result.aggregate_path)
    for agent in AGENTS:
        runs = [pd.read_csv(r.path) for r in result.for_agent(agent.name)]
        mean = np.mean([r["pseudo_regret_cum"].to_numpy() for r in runs], axis=0)
        low = np.min([r["est_kl_cum"].to_numpy() for r in runs], axis=0)
        rows = aggregate[aggregate["agent"] == agent.name].sort_values("round")
        assert np.allclose(rows["pseudo_regret_cum_mean"].to_numpy(), mean, atol=1e-9)
        assert np.allclose(rows["est_kl_cum_min"].to_numpy(), low, atol=1e-9)


def test_runs_are_byte_identical(tmp_path):
    contents = []
    for label in ("a", "b"):
        cmd_run(_config(tmp_path / label, summary=False), AGENTS)
        contents.append({p.name: p.read_bytes() for p in sorted((tmp_path / label).glob("*.csv"))})
    assert contents[0] == contents[1]
    assert len(contents[0]) == 5


def test_oracle_off_leaves_est_columns_empty(tmp_path):
    result = cmd_run(_config(tmp_path, oracle=False, seeds=[1]), AGENTS[:1])
    frame = pd.read_csv(result.runs[0].path)
    assert frame["est_kl_cum"].isna().all()
    assert result.runs[0].ledger_ok is None


def test_run_requires_output_dir():
    with pytest.raises(ConfigError):
        cmd_run(ExperimentConfig(T=4), AGENTS)


def test_digdec_table(tmp_path):
    frame = cmd_digdec(["single_infoset", "bernoulli_three"], [1.0], ["av"], tmp_path, resolution=0.5, nested=False)
    assert list(frame.columns) == DIGDEC_COLUMNS
    assert len(frame) == 2
    assert frame["bound_ok"].all()
    assert frame["nested_digdec"].isna().all()
    assert (tmp_path / "digdec.csv").exists()
    with pytest.raises(ConfigError):
        cmd_digdec(["chess"], [1.0], ["av"])


def test_single_infoset_digdec_is_not_positive(tmp_path):
    frame = cmd_digdec(["single_infoset"], [1.0], ["sq"], resolution=0.5, nested=True)
    row = frame.iloc[0]
    assert row["digdec"] <= 1e-4
    assert not math.isnan(row["nested_digdec"])
