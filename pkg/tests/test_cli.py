import json
from pathlib import Path

import pytest
import yaml

from condgraph.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from condgraph.config import ENV_CONFIG, PROFILES, RunConfig, load_config
from condgraph.nn import load_checkpoint

C1 = "15,34,0.32,2,8,4.5,-0.046,17,1.5,8,0.4,0.35,4,4,4"
TINY = {
    "total": 120, "n_min": 4, "n_max": 12, "feature_dim": 4, "hidden": 16, "latent": 8, "decoder_hidden": 32,
    "vae_epochs": 2, "vae_batch": 16, "timesteps": 20, "denoiser_hidden": 32, "cond_embed": 16, "ldm_epochs": 2,
    "ldm_batch": 16,
}


@pytest.fixture()
def tiny(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump({**TINY, "workdir": str(tmp_path / "run")}))
    return ["--config", str(cfg)]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump({**TINY, "workdir": str(root / "run")}))
    args = ["--config", str(cfg)]
    assert main(["forge", *args]) == EXIT_OK
    assert main(["train", "vae", *args]) == EXIT_OK
    assert main(["train", "ldm", *args]) == EXIT_OK
    assert main(["train", "ldm", "--masked", *args]) == EXIT_OK
    assert main(["train", "cvae", *args]) == EXIT_OK
    return root, args


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["forge", "--total", "-5"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_forge_empty(tmp_path, capsys):
    assert main(["forge", "--total", "0", "--workdir", str(tmp_path)]) == EXIT_OK
    data = tmp_path / "data"
    assert (data / "train.jsonl").read_text() == ""
    assert json.loads((data / "manifest.json").read_text())["total"] == 0
    assert "splits" in capsys.readouterr().out


def test_forge_is_reproducible(tmp_path, tiny):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["forge", *tiny, "--dataset", str(a)]) == EXIT_OK
    assert main(["forge", *tiny, "--dataset", str(b)]) == EXIT_OK
    for name in ("dataset.jsonl", "train.jsonl", "test.jsonl", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_forge_custom_proportions(tmp_path, capsys):
    props = json.dumps({"cycle": 0.5, "star": 0.5})
    assert main(["forge", "--total", "10", "--n-max", "12", "--proportions", props, "--workdir", str(tmp_path)]) == EXIT_OK
    counts = json.loads((tmp_path / "data" / "manifest.json").read_text())["counts"]
    assert counts["cycle"] == 5 and counts["star"] == 5


def test_train_ldm_needs_encoder(tiny, capsys):
    assert main(["forge", *tiny]) == EXIT_OK
    assert main(["train", "ldm", *tiny]) == EXIT_DATA
    assert "missing encoder" in capsys.readouterr().err


def test_missing_dataset_is_data_error(tmp_path, capsys):
    assert main(["train", "vae", "--workdir", str(tmp_path)]) == EXIT_DATA
    assert "forge" in capsys.readouterr().err


def test_divergence_exit_code(tiny):
    assert main(["forge", *tiny]) == EXIT_OK
    assert main(["train", "vae", *tiny, "--lr", "1e20", "--epochs", "5"]) == EXIT_DIVERGED


def test_train_vae_records_ordering(tiny, tmp_path):
    assert main(["forge", *tiny]) == EXIT_OK
    assert main(["train", "vae", *tiny, "--ordering", "pagerank"]) == EXIT_OK
    _, manifest = load_checkpoint(tmp_path / "run" / "vae.ckpt")
    assert manifest["ordering"] == "pagerank" and manifest["config_hash"]
    log = json.loads((tmp_path / "run" / "vae.log.json").read_text())
    assert len(log["train"]) == 2 and len(log["train_smoothed"]) == 2


def test_sample_with_full_condition(trained, tmp_path, capsys):
    _, args = trained
    out = tmp_path / "s"
    code = main(["sample", *args, "--c", C1, "--count", "2", "--out", str(out)])
    text = capsys.readouterr().out
    assert code == EXIT_OK
    assert "requested" in text and "Density" in text
    assert (out / "comparison.txt").exists()
    assert list(out.glob("*.edges")) and list(out.glob("*.dot"))


def test_sample_fully_masked_and_bad_arity(trained, tmp_path, capsys):
    _, args = trained
    code = main(["sample", *args, "--c", ",".join(["_"] * 15), "--out", str(tmp_path / "u")])
    assert code in (EXIT_OK, EXIT_DATA)
    assert "requested" not in capsys.readouterr().out
    assert main(["sample", *args, "--c", ",".join(["1"] * 14)]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore:.*config hash")  # --seed is part of every scope
def test_sample_is_deterministic(trained, tmp_path):
    _, args = trained
    for name in ("x", "y"):
        assert main(["sample", *args, "--c", C1, "--count", "3", "--seed", "5", "--out", str(tmp_path / name)]) in (0, 2)
    assert (tmp_path / "x" / "comparison.txt").read_text() == (tmp_path / "y" / "comparison.txt").read_text()


def test_eval_masked_report(trained, capsys):
    root, args = trained
    assert main(["eval", *args, "--protocol", "masked", "--limit", "8"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "NGG masked" in out and "NGG within" in out and "VGAE masked" not in out
    doc = json.loads((root / "run" / "reports" / "eval_masked.json").read_text())
    assert doc["config_hash"] and {r["protocol"] for r in doc["report"]} == {"within", "masked"}


def test_eval_within_includes_baseline(trained, capsys):
    _, args = trained
    assert main(["eval", *args, "--limit", "6"]) == EXIT_OK
    assert "VGAE within" in capsys.readouterr().out


def test_eval_triplet_needs_keep(trained):
    _, args = trained
    assert main(["eval", *args, "--protocol", "triplet"]) == EXIT_USAGE
    assert main(["eval", *args, "--protocol", "triplet", "--keep", "density", "--limit", "4"]) == EXIT_OK


def test_unique_report(trained, capsys):
    root, args = trained
    assert main(["unique", *args, "--codes", "3", "--samples", "4"]) == EXIT_OK
    assert "isomorphic fraction" in capsys.readouterr().out
    first = (root / "run" / "reports" / "uniqueness.json").read_text()
    assert main(["unique", *args, "--codes", "3", "--samples", "4"]) == EXIT_OK
    assert (root / "run" / "reports" / "uniqueness.json").read_text() == first


def test_ablate_properties(trained, capsys):
    _, args = trained
    assert main(["ablate", *args, "--target", "properties", "--limit", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert len([ln for ln in out.splitlines() if ln.strip() and ln[0] not in "-T" and not ln.startswith("report")]) == 13


def test_hash_mismatch_warns(trained):
    _, args = trained
    with pytest.warns(UserWarning, match="config hash"):
        main(["eval", *args, "--limit", "2", "--seed", "1"])


# --- configuration -------------------------------------------------------------


def test_desk_profile_defaults():
    cfg = RunConfig()
    assert (cfg.n_max, cfg.total, cfg.vae_epochs, cfg.ldm_epochs) == (32, 5000, 60, 40)
    assert cfg.ordering == "bfs_degree" and cfg.timesteps == 500 and cfg.vae_lr == 1e-3
    paper = load_config(profile="paper")
    assert (paper.n_max, paper.total, paper.vae_epochs, paper.ldm_epochs, paper.vae_batch) == (100, 10**6, 200, 100, 256)
    assert set(PROFILES) == {"desk", "paper"}


def test_config_precedence(tmp_path, monkeypatch):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 4\nn_max: 20\n")
    cfg = load_config(f, {"seed": 9, "n_max": None})
    assert cfg.seed == 9 and cfg.n_max == 20
    monkeypatch.setenv(ENV_CONFIG, str(f))
    assert load_config().n_max == 20
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"n_max": 24}))
    assert load_config(j).n_max == 24


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(vae_epochs=0)
    with pytest.raises(ValueError):
        RunConfig().updated(colour="blue")
    with pytest.raises(ValueError):
        load_config(profile="huge")
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml")


def test_hash_scopes():
    base = RunConfig()
    assert base.hash() == RunConfig().hash()
    assert base.updated(workdir="elsewhere", workers=4).hash() == base.hash()
    tweak = base.updated(ldm_epochs=3)
    assert tweak.hash("vae") == base.hash("vae") and tweak.hash("ldm") != base.hash("ldm")
    assert base.updated(seed=1).hash("dataset") != base.hash("dataset")


def test_dump_roundtrip(tmp_path):
    cfg = RunConfig(seed=3, n_max=20)
    cfg.dump(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "condgraph", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "condgraph" in res.stdout
    assert Path(__file__).parent.joinpath("..", "src", "condgraph", "__main__.py").resolve().exists()
