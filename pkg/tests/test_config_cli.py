import numpy as np
import pytest

from peerflow.cli import main
from peerflow.config import ConfigError, ExperimentConfig, parse_config_text
from peerflow.experiment import read_trajectory_csv

BASE = """\
[model]
kind = ntk-mlp
widths = 2, 16, 1
seed = 3

[data]
source = half-moons
q = 4
d = 10

[run]
topology = cycle
algorithm = dgd
eta = 0.01
steps = 12
"""


def test_defaults_fill_unspecified_keys():
    cfg = parse_config_text("[data]\nsource = half-moons\n[run]\ntopology = star\n")
    assert cfg.q == 8 and cfg.d == 200 and cfg.eta == 1e-4 and cfg.steps == 200
    assert cfg.widths == (2, 256, 1) and cfg.s_w == 1.0 and cfg.s_b == 0.1


def test_misspelled_key_names_the_line():
    text = BASE.replace("algorithm = dgd", "algoritm = dgd")
    with pytest.raises(ConfigError, match=r"cfg\.ini:13: unknown key run\.algoritm"):
        parse_config_text(text, "cfg.ini")


def test_invalid_value_names_the_key_and_line():
    text = BASE.replace("eta = 0.01", "eta = -1")
    with pytest.raises(ConfigError, match=r"cfg\.ini:14: run\.eta: must be > 0"):
        parse_config_text(text, "cfg.ini")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[run]\ntopology = cycle\n", "missing required key data.source"),
        (BASE + "steps = 4\n", "duplicate key run.steps"),
        (BASE.replace("q = 4", "q = four"), "malformed value for data.q"),
        (BASE.replace("[run]", "[runs]"), "unknown section"),
        (BASE.replace("topology = cycle", "topology = torus"), "run.topology"),
    ],
)
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_text(text)


def test_snapshot_round_trips():
    cfg = parse_config_text(BASE)
    assert parse_config_text(cfg.to_text()) == cfg
    affine = parse_config_text("[model]\nkind = affine\n[data]\nsource = synthetic\n[run]\ntopology = complete\n")
    assert affine.widths is None
    assert parse_config_text(affine.to_text()) == affine


def test_seed_override():
    cfg = parse_config_text(BASE).with_seed(9)
    assert cfg.model_seed == 9 and cfg.data_seed == 9


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(BASE)
    return path


def test_end_to_end_pipeline(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    args = ["--config", str(config_file), "--out", str(out)]
    assert main(["simulate", *args]) == 0
    assert main(["predict", *args]) == 0
    assert main(["compare", *args]) == 0
    assert main(["stability", *args]) == 0
    text = capsys.readouterr().out
    assert "model: max relative loss error" in text and "verdict:" in text

    observed = read_trajectory_csv(out / "observed.csv")["observed"]
    predicted = read_trajectory_csv(out / "predicted.csv")
    assert observed.shape == (13, 4)
    assert set(predicted) == {"model", "linearized"}
    assert np.array_equal(predicted["model"][0], observed[0])

    compare = (out / "compare.txt").read_text()
    assert compare.startswith("model.max_rel_error = ")
    svg = (out / "losses.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg and 'stroke-dasharray="6,4"' in svg
    assert "verdict = " in (out / "stability.txt").read_text()
    assert parse_config_text((out / "config.ini").read_text()) == parse_config_text(BASE)


def test_simulate_is_byte_reproducible(config_file, tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(config_file), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "observed.csv").read_bytes() == (tmp_path / "b" / "observed.csv").read_bytes()
    assert main(["simulate", "--config", str(config_file), "--out", str(tmp_path / "c"), "--seed", "7"]) == 0
    assert (tmp_path / "a" / "observed.csv").read_bytes() != (tmp_path / "c" / "observed.csv").read_bytes()


def test_compare_of_a_run_against_itself_is_zero(config_file, tmp_path):
    out = tmp_path / "self"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    text = (out / "observed.csv").read_text().splitlines()
    (out / "predicted.csv").write_text("\n".join([text[0] + ",mode"] + [line + ",model" for line in text[1:]]) + "\n")
    assert main(["compare", "--config", str(config_file), "--out", str(out)]) == 0
    assert (out / "compare.txt").read_text().startswith("model.max_rel_error = 0.0\n")


def test_parameter_dumps(config_file, tmp_path):
    config_file.write_text(BASE + "record_params = true\n")
    out = tmp_path / "dump"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    raw = np.fromfile(out / "observed_params.bin", dtype="<f8")
    assert raw.size == 13 * 4 * 65


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(BASE.replace("algorithm = dgd", "algoritm = dgd"))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error[usage]:") and "algoritm" in err and err.count("\n") == 1


def test_usage_error_exit_code(capsys):
    assert main(["train"]) == 1
    assert capsys.readouterr().err.startswith("error[usage]:")


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 1


def test_runtime_error_exit_code(config_file, tmp_path, capsys):
    assert main(["compare", "--config", str(config_file), "--out", str(tmp_path / "empty")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error[runtime]:") and "observed.csv" in err


def test_missing_mnist_suggests_synthetic(tmp_path, capsys):
    path = tmp_path / "mnist.ini"
    path.write_text(
        "[model]\nkind = affine\n[data]\nsource = mnist\nimages = /nope/img\nlabels = /nope/lbl\n"
        "q = 2\nd = 5\n[run]\ntopology = complete\nsteps = 2\n"
    )
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "m")]) == 2
    assert "--synthetic" in capsys.readouterr().err
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "m"), "--synthetic"]) == 0


def test_experiment_config_validates_directly():
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="sgd").validate()
