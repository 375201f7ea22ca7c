import json

import pytest

from lassl import cli
from lassl.errors import ConfigError
from lassl.synthdata import read

SMALL = """\
# tiny run for the test suite
n = 400
input_dim = 24
epochs = 4
warmup_epochs = 2
update_every = 1
r = 0.1
batch_size = 64
encoder_hidden = 16
head_hidden = 8
representation_dim = 8
projection_dim = 4
probe_max_iter = 200
test_n = 300
seeds = 0, 1
"""


def write_cfg(tmp_path, extra="", name="c.txt"):
    path = tmp_path / name
    path.write_text(SMALL + extra)
    return str(path)


def test_parse_and_reject_unknown_key():
    with pytest.raises(ConfigError, match="'colour'"):
        cli.parse_config_text("n = 5\ncolour = red\n")
    with pytest.raises(ConfigError, match="duplicate"):
        cli.parse_config_text("n = 5\nn = 6\n")
    with pytest.raises(ConfigError):
        cli.parse_config_text("just words\n")
    assert cli.parse_config_text("# c\n\n n = 7  # trailing\n") == {"n": "7"}


def test_resolve_types_recipe_and_required():
    cfg = cli.resolve_config({"seeds": "1,2 3", "symmetrize": "yes"})
    assert cfg["seeds"] == (1, 2, 3) and cfg["symmetrize"] is True and cfg["test_aligned_ratio"] is None
    celeba = cli.resolve_config({}, "celeba-like")
    assert celeba["r"] == 0.1 and celeba["update_every"] == 2
    assert cli.resolve_config({"r": "0.2"}, "celeba-like")["r"] == 0.2
    with pytest.raises(ConfigError, match="mode"):
        cli.resolve_config({}, None, "pretrain")
    with pytest.raises(ConfigError, match="'n'"):
        cli.resolve_config({"n": "ten"})


def test_unknown_key_exit_code(tmp_path, capsys):
    code = cli.main(["pretrain", "-c", write_cfg(tmp_path, "mode = uniform\nbogus = 1\n"), "-o", str(tmp_path / "r")])
    assert code == cli.EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_gen_data_and_format_error(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.main(["gen-data", "-c", cfg, "-o", str(tmp_path / "d.lasd"), "--test-out", str(tmp_path / "t.lasd")]) == 0
    ds, te = read(tmp_path / "d.lasd"), read(tmp_path / "t.lasd")
    assert ds.n == 400 and te.n == 300 and te.config.split == 1
    (tmp_path / "bad.lasd").write_bytes(b"LASD\x01\x00\x00\x00")
    code = cli.main(["pretrain", "-c", write_cfg(tmp_path, "mode = uniform\n"), "--data", str(tmp_path / "bad.lasd"),
                     "-o", str(tmp_path / "r")])
    assert code == cli.EXIT_FORMAT


def test_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "mode = uniform\nlr_max = 1e300\nlr_warmup_epochs = 0\n")
    with pytest.warns(RuntimeWarning):
        code = cli.main(["pretrain", "-c", cfg, "-o", str(tmp_path / "r")])
    assert code == cli.EXIT_DIVERGENCE


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    out = {}
    for mode in ("uniform", "learning_speed"):
        cfg = base / f"{mode}.txt"
        cfg.write_text(SMALL + f"mode = {mode}\n")
        run = base / mode
        assert cli.main(["pretrain", "-c", str(cfg), "-o", str(run)]) == 0
        assert cli.main(["probe", "-c", str(cfg), str(run)]) == 0
        assert cli.main(["spectra", "-c", str(cfg), str(run), "--svg"]) == 0
        out[mode] = (cfg, run)
    return base, out


def test_pipeline_outputs(runs):
    _, out = runs
    cfg, run = out["learning_speed"]
    for name in ("summary.json", "probe.json", "spectrum.json", "spectrum.svg", "config.txt"):
        assert (run / name).exists()
    sd = run / "seed-1"
    for name in ("checkpoint.lack", "runlog.csv", "summary.json", "probe.json", "probe.csv",
                 "spectrum.json", "spectrum.csv", "similarity.svg"):
        assert (sd / name).exists()
    assert (sd / "runlog.csv").read_text().count("\n") == 5
    probe = json.loads((sd / "probe.json").read_text())
    assert set(probe["confound0"]) == {"all", "aligned", "conflicting"}
    assert (run / "spectrum.svg").read_text().startswith("<svg")
    assert not list(run.rglob("*.tmp"))


def test_rerun_is_byte_identical(runs, tmp_path):
    _, out = runs
    cfg, run = out["learning_speed"]
    again = tmp_path / "again"
    assert cli.main(["pretrain", "-c", str(cfg), "-o", str(again)]) == 0
    for seed in (0, 1):
        for name in ("runlog.csv", "checkpoint.lack"):
            assert (again / f"seed-{seed}" / name).read_bytes() == (run / f"seed-{seed}" / name).read_bytes()


def test_compare_self_is_zero_and_pair_has_deltas(runs, tmp_path, capsys):
    base, out = runs
    _, run = out["uniform"]
    assert cli.main(["compare", str(run), str(run), "-o", str(tmp_path / "self")]) == 0
    res = json.loads((tmp_path / "self" / "compare.json").read_text())
    assert res["mean"]["similarity_gap_delta"] == 0.0 and res["mean"]["tail_mass_delta"] == 0.0
    assert all(v == 0.0 for v in res["mean"]["accuracy_delta"].values())
    assert "confound0/conflicting" in res["mean"]["accuracy_delta"]
    assert cli.main(["compare", str(run), str(out["learning_speed"][1]), "-o", str(tmp_path / "pair")]) == 0
    pair = json.loads((tmp_path / "pair" / "compare.json").read_text())
    assert set(pair["per_seed"]) == {"0", "1"}


def test_compare_seed_mismatch(runs, tmp_path):
    base, out = runs
    cfg = tmp_path / "one.txt"
    cfg.write_text(SMALL.replace("seeds = 0, 1", "seeds = 0").replace("epochs = 4", "epochs = 1") + "mode = uniform\n")
    assert cli.main(["pretrain", "-c", str(cfg), "-o", str(tmp_path / "one")]) == 0
    assert cli.main(["compare", str(out["uniform"][1]), str(tmp_path / "one")]) == cli.EXIT_INPUT


def test_output_dir_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "e.txt"
    cfg.write_text(SMALL.replace("seeds = 0, 1", "seeds = 0").replace("epochs = 4", "epochs = 1") + "mode = uniform\n")
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "from-env"))
    assert cli.main(["pretrain", "-c", str(cfg)]) == 0
    assert (tmp_path / "from-env" / "seed-0" / "runlog.csv").exists()


def test_missing_run_dir(tmp_path):
    assert cli.main(["spectra", str(tmp_path / "nowhere")]) == cli.EXIT_INPUT


def test_recipe_flag_position():
    top = cli.build_parser().parse_args(["--recipe", "celeba-like", "pretrain"])
    sub = cli.build_parser().parse_args(["pretrain", "--recipe", "cifar-like"])
    none = cli.build_parser().parse_args(["pretrain"])
    assert (top.recipe, sub.recipe, none.recipe) == ("celeba-like", "cifar-like", None)
