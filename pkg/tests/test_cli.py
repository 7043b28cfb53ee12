import subprocess
import sys

import numpy as np
import pytest

from houghtrack.cli import main
from houghtrack.imageio import read_pnm

TOY = ["--preset", "toy"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--count", "2", "--seed", "3",
                 "--set", "n_frames=5", "--set", "frame_size=128"] + TOY) == 0
    return root


def run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_layout(dataset):
    seqs = sorted(p.name for p in dataset.iterdir())
    assert seqs == ["seq0000", "seq0001"]
    files = sorted(p.name for p in (dataset / "seq0000").iterdir())
    assert files == ["000000.ppm", "000001.ppm", "000002.ppm", "000003.ppm", "000004.ppm",
                     "groundtruth.txt", "meta.txt"]


def test_track_one_box_per_frame(capsys, dataset, tmp_path):
    seq = dataset / "seq0000"
    init = tmp_path / "init.txt"
    init.write_text((seq / "groundtruth.txt").read_text().splitlines()[0] + "\n")
    code, out, _ = run(capsys, ["track", "--frames", str(seq), "--init", str(init),
                                "--dump-maps", str(tmp_path / "maps")] + TOY)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 5
    assert all(len(line.split()) == 4 for line in lines)
    assert read_pnm(tmp_path / "maps" / "000001_tl.pgm").shape == (60, 60)


def test_bench_checksum_is_stable(capsys):
    argv = ["bench", "--op", "group-correlation", "--size", "31x31x456", "--repeat", "1"]
    sums = []
    for _ in range(2):
        code, out, _ = run(capsys, argv)
        assert code == 0 and "cells_per_sec" in out
        sums.append(out.split("checksum")[1].strip())
    assert sums[0] == sums[1]
    assert "output 31x31x456" in out


def test_dump_votefield(capsys, tmp_path):
    code, _, _ = run(capsys, ["dump-votefield", "--out", str(tmp_path)])
    assert code == 0
    assert read_pnm(tmp_path / "region_00.pgm").shape == (17, 17)
    rows = [l.split() for l in (tmp_path / "manifest.txt").read_text().splitlines() if not l.startswith("#")]
    weights = {}
    for dx, dy, r, w in rows:
        weights.setdefault(int(r), []).append(float(w))
    assert len(weights) == 9
    for ws in weights.values():
        assert sum(ws) == pytest.approx(1.0, abs=1e-12)


def test_gradcheck_toy(capsys):
    code, out, _ = run(capsys, ["gradcheck", "--coords", "30"] + TOY)
    assert code == 0
    assert float(out.split()[1]) <= 1e-4


def test_gradcheck_failure_exit_code(capsys):
    code, _, err = run(capsys, ["gradcheck", "--coords", "5", "--tol", "1e-30"] + TOY)
    assert code == 6 and err.startswith("error: numeric:")


@pytest.mark.parametrize("argv,code,kind", [
    (["track", "--frames", "/nonexistent", "--init", "/nonexistent"], 4, "io"),
    (["dump-votefield", "--out", "x", "--set", "nonsense=1"], 3, "config"),
    (["dump-votefield", "--out", "x", "--set", "vote_extent=16"], 3, "config"),
    (["bench", "--size", "4x4"], 5, "shape"),
    (["eval", "--data", "/nonexistent", "--params", "/nonexistent"], 4, "io"),
])
def test_error_exit_codes(capsys, argv, code, kind):
    got, _, err = run(capsys, argv)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"error: {kind}:")


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nregions = 9\nangle_bins = 4\n")
    assert run(capsys, ["dump-votefield", "--out", str(tmp_path / "v"), "--config", str(cfg)])[0] == 0
    assert run(capsys, ["dump-votefield", "--out", str(tmp_path / "v"), "--config", str(tmp_path / "no.cfg")])[0] == 4


def test_param_shape_mismatch(capsys, dataset, tmp_path):
    from houghtrack.config import toy_config
    from houghtrack.network import Network
    from houghtrack.tensor import save_params
    path = tmp_path / "p.bin"
    save_params(Network(toy_config(channels=8)).init_params(0), path)
    code, _, err = run(capsys, ["eval", "--data", str(dataset), "--params", str(path)] + TOY)
    assert code == 5 and err.startswith("error: shape:")


def test_usage_error_is_two():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_module_entrypoint(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "houghtrack", "dump-votefield", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    help_text = subprocess.run([sys.executable, "-m", "houghtrack", "--help"], capture_output=True, text=True).stdout
    assert "ring_radii" in help_text and "gen-data" in help_text
