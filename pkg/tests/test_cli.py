import json

import pytest

from coopreg.cli import main
from coopreg.experiments import EvalSpec, ExperimentSpec, make_spec
from coopreg.networks import PrimaryConfig


@pytest.fixture
def config(tmp_path):
    spec = make_spec("cli", "cae", "linear", tmp_path / "run", primary=PrimaryConfig(2, 4),
                     n_shapes=4, total_iterations=20, batch_size=2, log_every=10,
                     eval_spec=EvalSpec(posthoc_iterations=20))
    d = spec.to_dict()
    d["train"]["cae"] = {"h": 1, "levels": 2, "base_channels": 4}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(d))
    return path


def test_pipeline(config, tmp_path, capsys):
    assert main(["train", "--config", str(config)]) == 0
    assert (tmp_path / "run" / "checkpoint" / "metadata.json").exists()
    assert main(["eval", "--config", str(config)]) == 0
    row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert row["method"] == "CAE (1, beta=8)"
    assert main(["sweep", "--config", str(config), "--n-sources", "6"]) == 0
    assert (tmp_path / "run" / "figures" / "sweep.csv").read_text().count("\n") == 7
    assert main(["render", "--config", str(config), "--pair", "1"]) == 0
    assert (tmp_path / "run" / "figures" / "falsecolor_0001.png").exists()
    out = tmp_path / "report.csv"
    assert main(["report", "--config", str(config), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_seed_override(config, tmp_path):
    assert main(["train", "--config", str(config), "--seed", "7",
                 "--output-dir", str(tmp_path / "s7")]) == 0
    meta = json.loads((tmp_path / "s7" / "checkpoint" / "metadata.json").read_text())
    assert meta["seed"] == 7
    assert ExperimentSpec.from_json(tmp_path / "s7" / "config.json").train.seed == 7


def test_missing_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_eval_without_checkpoint(config, capsys):
    assert main(["eval", "--config", str(config)]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x", "method": "undr", "output_dir": str(tmp_path),
                                "train": {"cae": {"h": 1}}}))
    assert main(["train", "--config", str(path)]) == 1
    assert capsys.readouterr().err.startswith("coopreg train: error:")


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code != 0
