import json
import sys

import pytest

from emonoise.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, EXIT_POLICY, main
from emonoise.harness import read_manifest
from emonoise.toy import write_toy_dataset


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    paths = write_toy_dataset(root, n_utterances=40, seed=2)
    two = root / "two.jsonl"
    two.write_text("".join(paths["manifest"].read_text().splitlines(keepends=True)[:2]))
    return {**paths, "root": root, "two": two}


@pytest.fixture(scope="module")
def model(data):
    out = data["root"] / "model.json"
    assert main(["train-ref", "--manifest", str(data["manifest"]), "--out", str(out), "--max-epochs", "5"]) == EXIT_OK
    return out


def _recipe(tmp_path, **kw):
    p = tmp_path / "recipe.json"
    p.write_text(json.dumps(kw))
    return str(p)


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_lint_exit_codes(tmp_path, capsys):
    ok = _recipe(tmp_path, env_grid=True, specs=[{"type": "synth", "kind": "Reverb"}])
    assert main(["lint-recipe", ok]) == EXIT_OK
    bad = _recipe(tmp_path, specs=[{"type": "synth", "kind": "Laugh"}])
    assert main(["lint-recipe", bad]) == EXIT_POLICY
    assert "no-emotive-events" in capsys.readouterr().out
    assert main(["lint-recipe", bad, "--allow-perception-changing"]) == EXIT_OK


def test_usage_errors_exit_4(capsys):
    with pytest.raises(SystemExit) as e:
        main(["augment"])
    assert e.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        main(["lint-recipe", "x.json", "--jobs", "0"])
    assert e.value.code == EXIT_CONFIG


def test_augment_env_grid_arity_and_determinism(data, tmp_path):
    recipe = _recipe(tmp_path, seed=4, env_grid=True)
    runs = []
    for jobs in ("1", "3", "1"):
        out = tmp_path / f"out{len(runs)}"
        argv = ["augment", "--manifest", str(data["two"]), "--recipe", recipe, "--noise-bank", str(data["noise_bank"])]
        assert main(argv + ["--out-dir", str(out), "--jobs", jobs]) == EXIT_OK
        runs.append(_tree(out))
    assert len([f for f in runs[0] if f.endswith(".wav")]) == 24
    assert runs[0] == runs[1] == runs[2]
    rows = read_manifest(tmp_path / "out0" / "manifest.jsonl")
    assert len(rows) == 24
    prov = json.loads((tmp_path / "out0" / "manifest.jsonl").read_text().splitlines()[0])["provenance"]
    assert set(prov) == {"source_utt", "tag", "kind", "spec", "seed"}


def test_augment_seed_override_changes_output(data, tmp_path):
    recipe = _recipe(tmp_path, seed=4, specs=[{"type": "env", "category": "Hum", "position": "Co", "snr_db": 5}])
    trees = []
    for seed in ("1", "2"):
        out = tmp_path / f"s{seed}"
        argv = ["augment", "--manifest", str(data["two"]), "--recipe", recipe, "--noise-bank", str(data["noise_bank"])]
        assert main(argv + ["--out-dir", str(out), "--seed", seed]) == EXIT_OK
        trees.append(_tree(out))
    assert trees[0].keys() == trees[1].keys() and trees[0] != trees[1]


def test_augment_policy_and_config_errors(data, tmp_path, capsys, monkeypatch):
    bad = _recipe(tmp_path, specs=[{"type": "synth", "kind": "Cry"}])
    argv = ["augment", "--manifest", str(data["two"]), "--out-dir", str(tmp_path / "o")]
    assert main(argv + ["--recipe", bad]) == EXIT_POLICY
    monkeypatch.delenv("EMONOISE_NOISE_BANK", raising=False)
    assert main(argv + ["--recipe", _recipe(tmp_path, env_grid=True)]) == EXIT_CONFIG
    assert "noise_bank" in capsys.readouterr().err


def test_augment_partial_failure(data, tmp_path):
    # DropW needs an alignment, which the toy manifest lacks
    recipe = _recipe(tmp_path, specs=[{"type": "synth", "kind": "DropW"}, {"type": "synth", "kind": "FadeOut"}])
    out = tmp_path / "o"
    assert main(["augment", "--manifest", str(data["two"]), "--recipe", recipe, "--out-dir", str(out)]) == EXIT_PARTIAL
    assert len(read_manifest(out / "manifest.jsonl")) == 2


def test_featurize(data, tmp_path):
    out = tmp_path / "f"
    assert main(["featurize", "--manifest", str(data["two"]), "--out-dir", str(out)]) == EXIT_OK
    assert len(list(out.glob("*.npy"))) == 2
    assert (out / "speaker_stats.json").is_file()


def test_train_ref_model_file(model):
    payload = json.loads(model.read_text())
    assert set(payload["heads"]) == {"activation", "valence"}
    assert not set(payload["train_speakers"]) & set(payload["val_speakers"])
    assert len(payload["speaker_stats"]) == 10


def test_eval_and_report(data, model, tmp_path, capsys):
    cfg = {
        "manifest": str(data["manifest"]),
        "noise_bank": str(data["noise_bank"]),
        "noise_grid": [{"type": "env", "category": "Nat", "position": "Co", "snr_db": 0}],
        "classifier": {"kind": "reference", "model": str(model)},
        "out_dir": "bundle",
    }
    (tmp_path / "eval.json").write_text(json.dumps(cfg))
    assert main(["eval", "--config", str(tmp_path / "eval.json")]) == EXIT_OK
    bundle = tmp_path / "bundle"
    assert {"results.json", "results.md", "provenance.json"} <= {p.name for p in bundle.iterdir()}
    capsys.readouterr()
    assert main(["report", str(bundle)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "| Nat Co 0dB" in out or "| Nat" in out


def test_eval_missing_url_is_config_error(data, tmp_path, capsys):
    cfg = {"manifest": str(data["two"]), "noise_grid": [{"type": "synth", "kind": "Reverb"}],
           "classifier": {"kind": "http"}, "out_dir": "x"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["eval", "--config", str(tmp_path / "c.json")]) == EXIT_CONFIG
    assert "classifier.url" in capsys.readouterr().err


def test_attack_command_classifier(data, tmp_path, capsys):
    stub = tmp_path / "stub.py"
    stub.write_text(
        "from emonoise.classifier import serve_stdio\n"
        "from emonoise.toy import rms_threshold_oracle\n"
        "serve_stdio(rms_threshold_oracle(0.08))\n"
    )
    cfg = {
        "manifest": str(data["two"]),
        "noise_bank": str(data["noise_bank"]),
        "classifier": {"kind": "command", "command": [sys.executable, str(stub)]},
        "budgets": [2, 5],
    }
    (tmp_path / "a.json").write_text(json.dumps(cfg))
    out = tmp_path / "atk"
    assert main(["attack", "--config", str(tmp_path / "a.json"), "--out-dir", str(out)]) == EXIT_OK
    results = json.loads((out / "results.json").read_text())
    assert len(results["summary"]["rows"]) == 4
    assert (out / "summary.csv").read_text().splitlines()[0] == "corr,eval,k=2,k=5"
    capsys.readouterr()
    assert main(["report", str(out / "results.json")]) == EXIT_OK
    assert "| Corr: No, Eval: Yes |" in capsys.readouterr().out


def test_report_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "nope.json")]) == EXIT_CONFIG
