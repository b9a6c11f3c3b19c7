import json

import numpy as np
import pytest

from splitrto.cli import SCHEMA, ConfigError, config_schema, load_config, main
from splitrto.matio import read_csv, write_matrix
from splitrto.problems import PRESETS


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


def run(tmp_path, text, name="cfg.ini", cmd="run"):
    return main([cmd, write_cfg(tmp_path / name, text)])


def test_no_args_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().out


def test_schema_lists_every_key_and_preset(capsys):
    assert main(["schema"]) == 0
    text = capsys.readouterr().out
    for name in PRESETS:
        assert name in text
    for sec, keys in SCHEMA.items():
        assert f"[{sec}]" in text
        for key in keys:
            assert f"  {key} :" in text
    assert config_schema() in text


def test_scalar_run(tmp_path):
    out = tmp_path / "out"
    cfg = f"[problem]\npreset = scalar\n[sampling]\nK = 4000\nseed = 3\n[output]\ndir = {out}\n"
    assert run(tmp_path, cfg) == 0
    header, rows = read_csv(out / "summary.csv")
    mean = float(rows[0][header.index("mean")])
    assert abs(mean - 1.0) < 4 * np.sqrt(0.5 / 4000)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and len(manifest["config_sha256"]) == 64
    assert set(manifest["files"]) == {"samples.csv", "summary.csv", "stats.csv"}


def test_desk_run_shapes_and_rerun(tmp_path):
    cfg = "[problem]\npreset = crossborehole-desk\n[sampling]\nK = 1000\n[output]\ndir = {}\n"
    assert run(tmp_path, cfg.format(tmp_path / "a"), "a.ini") == 0
    header, rows = read_csv(tmp_path / "a" / "summary.csv")
    assert len(rows) == 800
    assert header[:1] == ["coordinate"] and {"mean", "std", "q25", "q50", "q75"} <= set(header)
    hs, samples = read_csv(tmp_path / "a" / "samples.csv")
    assert len(samples) == 1000 and hs[0] == "draw" and len(hs) == 801
    assert run(tmp_path, cfg.format(tmp_path / "b"), "b.ini") == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_file_problem(tmp_path, rng):
    A = rng.standard_normal((2, 6))
    write_matrix(tmp_path / "A.txt", A)
    write_matrix(tmp_path / "b.txt", np.array([[1.0], [-1.0]]))
    cfg = (
        f"[problem]\noperator = {tmp_path / 'A.txt'}\ndata = {tmp_path / 'b.txt'}\n"
        f"[sampling]\nK = 20\nstrategy = adjoint\n[output]\ndir = {tmp_path / 'o'}\n"
    )
    assert run(tmp_path, cfg) == 0
    _, rows = read_csv(tmp_path / "o" / "summary.csv")
    assert len(rows) == 6


def test_unknown_key_suggests(tmp_path, capsys):
    path = write_cfg(tmp_path / "c.ini", "[problem]\npreset = scalar\n[sampling]\nsede = 1\n")
    with pytest.raises(ConfigError, match="'sede'.*'seed'"):
        load_config(path)
    assert main(["run", path]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and "seed" in err["message"]


def test_unknown_section_and_preset(tmp_path):
    with pytest.raises(ConfigError, match="sampling"):
        load_config(write_cfg(tmp_path / "a.ini", "[problem]\npreset = scalar\n[sampeling]\nK = 2\n"))
    with pytest.raises(ConfigError, match="scalar"):
        load_config(write_cfg(tmp_path / "b.ini", "[problem]\npreset = scalr\n"))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path / "c.ini", "[problem]\npreset = scalar\n[sampling]\nK = 0\n"))


def test_exit_codes(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.ini")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(tmp_path, f"[problem]\npreset = scalar\n[output]\ndir = {blocker}\n") == 3
    # square problem: the benchmark refuses
    assert run(tmp_path, f"[problem]\npreset = scalar\n[output]\ndir = {tmp_path / 'o'}\n", cmd="bench") == 4
    capsys.readouterr()


def test_env_overrides(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv("SPLITRTO_OUTPUT_DIR", str(target))
    monkeypatch.setenv("SPLITRTO_WORKERS", "2")
    assert run(tmp_path, f"[problem]\npreset = scalar\n[sampling]\nK = 10\n[output]\ndir = {tmp_path / 'x'}\n") == 0
    manifest = json.loads((target / "manifest.json").read_text())
    assert manifest["config"]["sampling"]["workers"] == 2
    assert not (tmp_path / "x").exists()


def test_bench_command(tmp_path, capsys):
    cfg = f"[problem]\npreset = crossborehole-desk\n[benchmark]\nsizes = 5, 20\n[output]\ndir = {tmp_path / 'o'}\n"
    assert run(tmp_path, cfg, cmd="bench") == 0
    header, rows = read_csv(tmp_path / "o" / "benchmark.csv")
    assert [int(r[0]) for r in rows] == [5, 20]
    assert "t_adjoint" in capsys.readouterr().out


def test_hierarchical_run(tmp_path):
    cfg = (
        "[problem]\npreset = blocks-meg-toy\n[sampling]\nstrategy = normal\n"
        f"[hierarchical]\nT = 50\nthin = 10\n[output]\ndir = {tmp_path / 'h'}\n"
    )
    assert run(tmp_path, cfg) == 0
    for f in ("ias_map.csv", "chain.csv", "summary.csv", "samples.csv"):
        assert (tmp_path / "h" / f).is_file()
    _, rows = read_csv(tmp_path / "h" / "chain.csv")
    assert len(rows) == 50


def test_pcn_run(tmp_path):
    cfg = f"[problem]\npreset = pcn-toy\n[pcn]\nN = 300\nthin = 50\n[output]\ndir = {tmp_path / 'p'}\n"
    assert run(tmp_path, cfg) == 0
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert 0 < manifest["timings_seconds"]["acceptance_rate"] <= 1
    header, rows = read_csv(tmp_path / "p" / "chain.csv")
    assert header[:3] == ["step", "accepted", "phi"] and len(rows) == 300
