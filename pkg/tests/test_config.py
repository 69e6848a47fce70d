import pytest
import yaml

from inspectgame.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config


def write(tmp_path, text):
    path = tmp_path / "cfg.yaml"
    path.write_text(text)
    return path


def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "model: {d: 3, levels: [0, 1, 2], T: 0.5}\n"))
    m = cfg.model
    assert (m.Q, m.F, m.sigma, m.L, m.T) == (1.0, 5.0, 1.0, 1.0, 0.5)
    assert cfg.grid.K == 200 and cfg.solver.tol == 1e-9
    assert m.initial == (0.5, 0.3, 0.2)


def test_empty_document_is_the_default_config():
    assert parse_config(None) == parse_config({})
    assert parse_config({}).config_hash() == parse_config({}).config_hash()


def test_levels_not_increasing_names_levels():
    with pytest.raises(ConfigError) as exc:
        parse_config({"model": {"levels": [0, 2, 1]}})
    assert any(e.startswith("levels") for e in exc.value.errors)


def test_all_violations_reported_at_once():
    with pytest.raises(ConfigError) as exc:
        parse_config({"model": {"Q": -1, "levels": [1, 0]}, "grid": {"K": 1},
                      "solver": {"tol": "tiny"}, "sim": {"R": 1}, "bogus": 1})
    keys = " ".join(exc.value.errors)
    for k in ("model.Q", "levels", "grid.K", "solver.tol", "sim.R", "bogus"):
        assert k in keys


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="model.detection.lamda"):
        parse_config({"model": {"detection": {"lamda": 2.0}}})


def test_d_and_x0_consistency():
    with pytest.raises(ConfigError, match="model.d"):
        parse_config({"model": {"d": 2, "levels": [0, 1, 2]}})
    with pytest.raises(ConfigError, match="model.x0"):
        parse_config({"model": {"levels": [0, 1], "x0": [0.5, 0.3, 0.2]}})
    with pytest.raises(ConfigError, match="sum to 1"):
        parse_config({"model": {"x0": [0.5, 0.3, 0.3]}})


def test_exponent_float_without_dot_accepted(tmp_path):
    cfg = load_config(write(tmp_path, "solver: {tol: 1e-7}\n"))
    assert cfg.solver.tol == 1e-7


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match="line 3, column 5"):
        load_config(write(tmp_path, "model:\n  levels: [0, 1\ngrid: {K: 10}\n"))


def test_round_trip(tmp_path):
    cfg = parse_config({"model": {"levels": [0, 0.5, 3], "Q": 2, "x0": [0.2, 0.3, 0.5],
                                  "terminal": {"family": "linear", "a": -1.0, "b": 0.5}},
                        "epsnash": {"matrices": [{"name": "lazy",
                                                  "q": [[0, 0.1, 0], [0, 0, 0], [0, 0, 0]]}]},
                        "sim": {"N": [10, 20], "seed": 7}})
    again = load_config(write(tmp_path, dump_config(cfg)))
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert parse_config(yaml.safe_load(dump_config(ExperimentConfig()))) == parse_config({})


def test_hash_ignores_output_dir_only():
    a = parse_config({"output": {"dir": "a"}})
    b = parse_config({"output": {"dir": "b"}})
    c = parse_config({"sim": {"seed": 1}})
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_bad_deviation_name_and_matrix_shape():
    with pytest.raises(ConfigError) as exc:
        parse_config({"epsnash": {"deviations": ["JUMP"],
                                  "matrices": [{"name": "m", "q": [[0, 1], [0, 0]]}]}})
    text = " ".join(exc.value.errors)
    assert "epsnash.deviations" in text and "epsnash.matrices[0].q" in text
