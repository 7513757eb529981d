import json

import pytest
import yaml

from pii_unlearn.cli import ConfigError, RunManifest, derive_seed, file_sha256, load_config
from pii_unlearn.cli import stages
from pii_unlearn.cli.main import main
from pii_unlearn.corpus import read_corpus

TINY = {
    "seed": 3,
    "corpus": {"groups": [{"i": 1, "n": 4}], "n_background": 40, "n_clean": 10, "private_pool_size": 8, "public_pool_size": 20},
    "model": {"d_model": 32, "n_layers": 1, "n_heads": 2},
    "train": {"epochs": 1},
    "inverter": {"d_model": 32, "n_layers": 1, "n_heads": 2, "epochs": 1, "n_background": 20, "n_renderings": 20, "n_heldout": 5},
    "unlearn": {"epochs": 1, "batch_size": 4},
    "decode": {"max_new_tokens": 8, "num_continuations": 2},
}


def _write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


@pytest.fixture
def tiny(tmp_path):
    return _write(tmp_path, TINY), tmp_path / "run"


def test_bundled_config_loads():
    cfg = load_config()
    assert cfg.unlearn.early_stop.max_ppl_ratio == 1.15
    assert cfg.corpus.n_samples == 20


def test_overrides_and_seed():
    cfg = load_config(None, ["unlearn.lr=1e-3", "unlearn.beta=5", "decode.mode=nucleus", "corpus.groups=[{i: 2, n: 3}]"], seed=11)
    assert cfg.unlearn.lr == 1e-3
    assert cfg.unlearn.beta == 5 and cfg.decode.mode == "nucleus" and cfg.seed == 11
    assert cfg.corpus.groups[0].i == 2 and cfg.corpus.n_samples == 3


@pytest.mark.parametrize(
    "override",
    ["unlearn.nonsense=1", "unlearn.selector=ffn", "corpus.groups=[]", "unlearn.pseudo_fraction=0", "utility=bleu", "noequals"],
)
def test_invalid_configs_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_derive_seed_is_stable_and_separated():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert len({derive_seed(0, "a"), derive_seed(0, "b"), derive_seed(1, "a")}) == 3
    assert 0 <= derive_seed(5, "x") < 2**31


def test_manifest_flags_changed_artifacts(tmp_path):
    m = RunManifest(tmp_path)
    f = tmp_path / "a.txt"
    f.write_text("x")
    m.record("s", "h1", [f], 0.1, {"n": 1})
    again = RunManifest.load(tmp_path)
    assert again.is_current("s", "h1") and not again.is_current("s", "h2")
    f.write_text("y")
    assert again.problems("s") and not again.is_current("s", "h1")
    f.unlink()
    assert "missing" in again.problems("s")[0]
    assert again.problems("other") == ["not run"]


def test_exit_code_for_bad_config(tmp_path, capsys):
    assert main(["inject", "--config", _write(tmp_path, {"unlearn": {"bogus": 1}}), "--out", str(tmp_path / "r")]) == 2
    assert "unknown key" in capsys.readouterr().err
    bad_pool = dict(TINY, corpus={**TINY["corpus"], "private_pool_file": str(tmp_path / "nope.json")})
    assert main(["inject", "--config", _write(tmp_path, bad_pool, "b.yaml"), "--out", str(tmp_path / "r")]) == 2


def test_exit_code_for_missing_stage(tiny, capsys):
    cfg, out = tiny
    assert main(["train", "--config", cfg, "--out", str(out)]) == 3
    assert "pii-unlearn inject" in capsys.readouterr().err
    assert main(["report", "--config", cfg, "--out", str(out)]) == 3
    assert main(["inject", "--config", cfg, "--out", str(out)]) == 0
    assert main(["annotate", "--config", cfg, "--out", str(out)]) == 3


def test_inject_is_byte_identical_and_rerun_is_noop(tiny, tmp_path):
    cfg, out = tiny
    assert main(["inject", "--config", cfg, "--out", str(out)]) == 0
    other = tmp_path / "run2"
    assert main(["inject", "--config", cfg, "--out", str(other)]) == 0
    for name in ("corpus/train.jsonl", "corpus/eval.jsonl", "pools/private.json"):
        assert file_sha256(out / name) == file_sha256(other / name)
    stamp = RunManifest.load(out).stages["inject"].finished_at
    (out / "manifest.json").touch()
    main(["inject", "--config", cfg, "--out", str(out)])
    assert RunManifest.load(out).stages["inject"].finished_at == stamp


def test_replication_groups(tmp_path):
    doc = dict(TINY, corpus={**TINY["corpus"], "groups": [{"i": 5, "n": 20}], "private_pool_size": 40, "n_background": 100})
    run = stages.Run.open(load_config(_write(tmp_path, doc)), tmp_path / "r")
    info = stages.cmd_inject(run)
    assert info["n_samples"] == 20 and info["n_injected"] == 1000
    corpus = read_corpus(tmp_path / "r" / "corpus")
    assert set(corpus.replication_counts().values()) == {50}


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write(root, TINY)
    out = root / "run"
    assert main(["all", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_all_produces_every_stage(full_run):
    _, out = full_run
    m = RunManifest.load(out)
    for stage in ("inject", "train", "invert-train", "synthesize", "annotate", "unlearn:oracle", "unlearn:pseudo", "unlearn:ga", "eval:original", "eval:pseudo"):
        assert not m.problems(stage), stage
    rows = json.loads((out / "reports" / "summary.json").read_text())
    assert {r["label"] for r in rows} == {"original", "oracle", "pseudo", "ga"}
    md = (out / "reports" / "summary.md").read_text()
    assert "Data-Free (Ours)" in md and "Gradient Ascent" in md
    assert m.stages["unlearn:pseudo"].info["base_checksum"] == m.stages["unlearn:oracle"].info["base_checksum"]


def test_rerun_skips_current_stages(full_run):
    cfg, out = full_run
    before = {k: v.finished_at for k, v in RunManifest.load(out).stages.items()}
    assert main(["all", "--config", cfg, "--out", str(out)]) == 0
    after = {k: v.finished_at for k, v in RunManifest.load(out).stages.items()}
    assert before == after


def test_forced_eval_reproduces_report(full_run):
    cfg, out = full_run
    first = (out / "reports" / "pseudo.json").read_text()
    bundle = (out / "reports" / "pseudo.bundle.jsonl").read_text()
    assert main(["eval", "--mode", "pseudo", "--force", "--config", cfg, "--out", str(out)]) == 0
    a, b = json.loads(first), json.loads((out / "reports" / "pseudo.json").read_text())
    a.pop("timestamp"), b.pop("timestamp")
    assert a == b
    assert (out / "reports" / "pseudo.bundle.jsonl").read_text() == bundle


def test_tagged_sweep_points_get_extra_tables(full_run):
    cfg, out = full_run
    base = ["--config", cfg, "--out", str(out), "--mode", "pseudo"]
    assert main(["unlearn", *base, "--tag", "attn", "--set", "unlearn.selector=attn"]) == 0
    assert main(["eval", *base, "--tag", "attn", "--set", "unlearn.selector=attn"]) == 0
    assert main(["unlearn", *base, "--tag", "half", "--set", "unlearn.pseudo_fraction=0.5"]) == 0
    assert main(["eval", *base, "--tag", "half", "--set", "unlearn.pseudo_fraction=0.5"]) == 0
    assert main(["report", "--config", cfg, "--out", str(out)]) == 0
    md = (out / "reports" / "summary.md").read_text()
    assert "## Adapter placement" in md and "## Pseudo-data scale" in md
    m = RunManifest.load(out)
    assert m.stages["unlearn:pseudo-half"].info["n_samples"] < m.stages["unlearn:pseudo"].info["n_samples"]


def test_report_over_single_run(tiny):
    cfg, out = tiny
    for cmd in ("inject", "train"):
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    assert main(["unlearn", "--mode", "oracle", "--config", cfg, "--out", str(out)]) == 0
    assert main(["eval", "--mode", "oracle", "--config", cfg, "--out", str(out)]) == 0
    assert main(["report", "--config", cfg, "--out", str(out)]) == 0
    rows = json.loads((out / "reports" / "summary.json").read_text())
    assert sorted(r["label"] for r in rows) == ["oracle", "original"]
    assert not (out / "pseudo").exists()


def test_upstream_change_invalidates_downstream(tiny):
    cfg, out = tiny
    for cmd in ("inject", "train"):
        main([cmd, "--config", cfg, "--out", str(out)])
    old = RunManifest.load(out).stages["train"].stage_hash
    assert main(["train", "--config", cfg, "--out", str(out), "--set", "train.lr=1e-3"]) == 0
    m = RunManifest.load(out)
    assert m.stages["train"].stage_hash != old
    run = stages.Run.open(load_config(cfg, ["train.lr=1e-3"]), out)
    assert m.stages["train"].stage_hash == run.hash_train()
    assert run.hash_train() != stages.Run.open(load_config(cfg), out).hash_train()
