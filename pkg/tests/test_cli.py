import json

import pytest
from hypothesis import given, strategies as st

from permset import cli, datagen, trainer
from permset.inference import InferenceConfig
from permset.network import load_checkpoint


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tagging_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("tag")
    assert run("gen", "--task", "tagging", "--n", 100, "--seed", 1, "--out", d / "tag.jsonl") == 0
    assert run("train", "--data", d / "tag.jsonl", "--out", d / "run" / "model.json",
               "--task", "tagging", "--scenario", 1, "--M", 10, "--epochs", 2, "--batch", 16) == 0
    return d


def test_config_round_trip():
    cfg = cli.RunConfig(task="tagging", scenario=1, M=10, hidden=(64, 32), lr=0.003, U=2.36)
    back = cli.parse_config(cli.serialize_config(cfg))
    assert back == cfg
    assert cli.config_hash(back) == cli.config_hash(cfg)
    assert cli.config_hash(cli.RunConfig(seed=1)) != cli.config_hash(cli.RunConfig(seed=2))


@given(lr=st.floats(1e-6, 1.0), epochs=st.integers(0, 500), hidden=st.lists(st.integers(1, 512), min_size=1, max_size=3))
def test_config_round_trip_property(lr, epochs, hidden):
    cfg = cli.RunConfig(lr=lr, epochs=epochs, hidden=tuple(hidden))
    assert cli.parse_config(cli.serialize_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "lr = fast", "task = segmentation", "task = tagging\nscenario = 3", "M = 0", "noline"])
def test_bad_config_rejected(text):
    with pytest.raises(cli.ConfigError):
        cli.parse_config(text)


def test_exit_codes(tmp_path, tagging_run):
    (tmp_path / "bad.cfg").write_text("frobnicate = 3\n")
    assert run("train", "--config", tmp_path / "bad.cfg", "--data", tagging_run / "tag.jsonl", "--out", tmp_path / "m.json") == 1
    # detection head on tagging data
    assert run("train", "--data", tagging_run / "tag.jsonl", "--out", tmp_path / "m.json", "--task", "detect") == 1
    (tmp_path / "broken.jsonl").write_text("{not json\n")
    assert run("train", "--data", tmp_path / "broken.jsonl", "--out", tmp_path / "m.json", "--task", "tagging", "--scenario", 1) == 2
    assert run("eval", tmp_path / "missing.json", tagging_run / "tag.jsonl") == 2
    run("gen", "--task", "detect", "--n", 20, "--out", tmp_path / "det.jsonl")
    assert run("train", "--data", tmp_path / "det.jsonl", "--out", tmp_path / "m.json", "--lr", 1000, "--epochs", 5) == 3


def test_gen_train_eval_infer_smoke(tagging_run, capsys):
    model = tagging_run / "run" / "model.json"
    assert model.exists()
    assert (tagging_run / "run" / "model.log.csv").read_text().startswith("iteration,")
    capsys.readouterr()
    assert run("eval", model, tagging_run / "tag.jsonl") == 0
    report = json.loads(capsys.readouterr().out)
    assert {"o_f1", "c_f1", "card_mae", "config_hash"} <= set(report)
    assert (tagging_run / "run" / "model.report.csv").exists()
    first = (tagging_run / "tag.jsonl").read_text().splitlines()[0]
    (tagging_run / "one.jsonl").write_text(first + "\n")
    assert run("infer", model, tagging_run / "one.jsonl") == 0
    pred = json.loads(capsys.readouterr().out)
    assert pred["m"] == len(pred["elements"])


def _eval_json(capsys, *argv):
    capsys.readouterr()
    assert run(*argv) == 0
    return json.loads(capsys.readouterr().out)


def test_eval_tagging_tuned_u(tagging_run, capsys):
    model = tagging_run / "run" / "model.json"
    report = _eval_json(capsys, "eval", model, tagging_run / "tag.jsonl", "--U", 2.36)
    net, layout, _, _ = load_checkpoint(model)
    data = datagen.read_jsonl(tagging_run / "tag.jsonl")
    ref = trainer.evaluate(net, layout, data, InferenceConfig(U=2.36, mode="exact"), num_labels=layout.max_card)
    assert report["U"] == 2.36 and report["mode"] == "exact"
    assert report["o_f1"] == pytest.approx(ref.o_f1) and report["card_mae"] == pytest.approx(ref.card_mae)


def test_eval_captcha_u2(tmp_path, capsys):
    assert run("gen", "--task", "captcha", "--n", 30, "--out", tmp_path / "cap.jsonl") == 0
    assert run("train", "--data", tmp_path / "cap.jsonl", "--out", tmp_path / "cap.json", "--task", "captcha",
               "--epochs", 1, "--hidden", "32") == 0
    report = _eval_json(capsys, "eval", tmp_path / "cap.json", tmp_path / "cap.jsonl", "--U", 2)
    net, layout, _, _ = load_checkpoint(tmp_path / "cap.json")
    ref = trainer.evaluate(net, layout, datagen.read_jsonl(tmp_path / "cap.jsonl"), InferenceConfig(U=2.0))
    assert report["U"] == 2.0
    assert report["accuracy"] == pytest.approx(ref.accuracy)


def test_gradcheck_command(capsys):
    report = _eval_json(capsys, "gradcheck", "--task", "detect", "--scenario", 3)
    errs = [v for k, v in report.items() if k != "config_hash"]
    assert errs and max(errs) < 1e-4


def test_scenario2_perms_report(tmp_path, capsys):
    run("gen", "--task", "detect", "--n", 16, "--max-objects", 3, "--out", tmp_path / "d.jsonl")
    assert run("train", "--data", tmp_path / "d.jsonl", "--out", tmp_path / "s2" / "m.json", "--scenario", 2,
               "--epochs", 2, "--hidden", "16") == 0
    assert (tmp_path / "s2" / "m.perms.json").exists()
    capsys.readouterr()
    assert run("perms-report", tmp_path / "s2") == 0
    line = json.loads(capsys.readouterr().out.splitlines()[0])
    assert 0.0 < line["top_pooled_weight"] <= 1.0
    assert (tmp_path / "s2" / "m.dominant.csv").exists()
