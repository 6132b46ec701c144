from pathlib import Path

import pytest

from coreason_rlv.config import (
    KEY_MAP,
    echo_config,
    env_overrides,
    env_var_name,
    load_config,
    parse_config_text,
    parse_overrides,
    resolve_config,
    run_id,
)
from coreason_rlv.errors import ConfigError
from coreason_rlv.schemas import Method, RunConfig, VerifierMode


def write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


class TestParsing:
    def test_comments_and_blank_lines(self) -> None:
        values = parse_config_text("# header\n\nrl.method = GRPO  # inline\nrun.seed=7\n", "a.cfg")
        assert values == {"rl.method": ("GRPO", "a.cfg", 3), "run.seed": ("7", "a.cfg", 4)}

    def test_malformed_line_reports_location(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config_text("rl.method = GRPO\nthis is not a pair\n", "a.cfg")
        assert exc.value.line == 2
        assert str(exc.value).startswith("a.cfg:2: ")

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError, match="unknown key 'rl.foo'"):
            parse_config_text("rl.foo = 1\n")

    def test_duplicate_key(self) -> None:
        with pytest.raises(ConfigError, match="duplicate") as exc:
            parse_config_text("run.seed = 1\nrun.seed = 2\n", "a.cfg")
        assert exc.value.line == 2

    def test_empty_value(self) -> None:
        with pytest.raises(ConfigError, match="no value"):
            parse_config_text("run.seed =\n")

    def test_env_var_name(self) -> None:
        assert env_var_name("rl.method") == "COREASON_RLV_RL_METHOD"
        assert env_var_name("verify.lambda_max") == "COREASON_RLV_VERIFY_LAMBDA_MAX"

    def test_env_overrides_only_known_keys(self) -> None:
        found = env_overrides({"COREASON_RLV_RUN_SEED": " 9 ", "COREASON_RLV_NOPE": "1", "HOME": "/root"})
        assert found == {"run.seed": ("9", "<env COREASON_RLV_RUN_SEED>", None)}

    def test_override_errors(self) -> None:
        with pytest.raises(ConfigError, match="key=value"):
            parse_overrides(["run.seed"])
        with pytest.raises(ConfigError, match="unknown key"):
            parse_overrides(["run.sed=1"])


class TestResolution:
    def test_missing_method(self) -> None:
        with pytest.raises(ConfigError, match="missing required key 'rl.method'"):
            resolve_config([parse_config_text("run.seed = 1\n")])

    def test_invalid_value_names_key_and_line(self) -> None:
        layers = [parse_config_text("rl.method = GRPO\nrl.eps_clip = 1.5\n", "a.cfg")]
        with pytest.raises(ConfigError, match="invalid value for 'rl.eps_clip'") as exc:
            resolve_config(layers)
        assert exc.value.source == "a.cfg"
        assert exc.value.line == 2

    def test_unknown_method(self) -> None:
        with pytest.raises(ConfigError, match="'rl.method'"):
            resolve_config([parse_config_text("rl.method = SARSA\n")])

    def test_defaults_apply(self) -> None:
        config = resolve_config([parse_config_text("rl.method = RLOO\n")])
        assert config == RunConfig(method=Method.RLOO)

    def test_precedence(self, tmp_path: Path) -> None:
        path = write(tmp_path, "rl.method = GRPO\nrun.seed = 1\nrun.batch = 3\nverify.mode = BCE_HEAD\n")
        environ = {"COREASON_RLV_RUN_SEED": "2", "COREASON_RLV_RUN_BATCH": "5"}
        config = load_config(path, ["run.seed=3"], environ)
        assert config.seed == 3
        assert config.batch == 5
        assert config.verifier_mode == VerifierMode.BCE_HEAD
        assert load_config(path, [], environ).seed == 2
        assert load_config(path, [], {}).seed == 1

    def test_environment_alone(self) -> None:
        config = load_config(None, [], {"COREASON_RLV_RL_METHOD": "VINEPPO"})
        assert config.method == Method.VINEPPO

    def test_env_error_names_variable(self) -> None:
        environ = {"COREASON_RLV_RL_METHOD": "PPO", "COREASON_RLV_RUN_BATCH": "zero"}
        with pytest.raises(ConfigError, match="<env COREASON_RLV_RUN_BATCH>"):
            load_config(None, [], environ)

    def test_unreadable_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "missing.cfg", [], {})


class TestEcho:
    def test_lists_every_key(self) -> None:
        echoed = echo_config(RunConfig(method=Method.PPO))
        keys = [line.split(" = ")[0] for line in echoed.splitlines()]
        assert keys == list(KEY_MAP)

    def test_round_trip(self) -> None:
        config = RunConfig(
            method=Method.VINEPPO,
            seed=11,
            beta=0.037,
            lambda_max=0.3,
            verifier_mode=VerifierMode.REG_HEAD,
            temperature=0.7,
            ramp_fraction=1.0,
        )
        assert resolve_config([parse_config_text(echo_config(config))]) == config

    def test_run_id(self) -> None:
        config = RunConfig(method=Method.GRPO, seed=5)
        rid = run_id(config)
        assert len(rid) == 12
        int(rid, 16)
        assert rid == run_id(RunConfig(method=Method.GRPO, seed=5))
        assert rid != run_id(RunConfig(method=Method.GRPO, seed=6))
