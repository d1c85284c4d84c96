import json
import subprocess
import sys

import pytest

from hpn.backends import read_bank
from hpn.cli import main, parse_level_sets
from hpn.fusion import read_hpnf
from hpn.geometry import read_obj
from hpn.render import read_hpnd

SMALL = ["--image-size", "64", "--grid-res", "16", "--levels", "64,16", "--workers", "1", "--d-thresh", "0.05"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("compose")
    assert main(["compose", "--n", "3", "--seed", "4", "--out", str(out)]) == 0
    return out / "scenes"


def test_compose_deterministic(tmp_path, scenes):
    assert main(["compose", "--n", "3", "--seed", "4", "--out", str(tmp_path)]) == 0
    for f in sorted(scenes.glob("*.json")):
        assert (tmp_path / "scenes" / f.name).read_bytes() == f.read_bytes()
    assert len(list(scenes.glob("*.json"))) == 3


def test_render(tmp_path, scenes):
    assert main(["render", "--scenes", str(scenes), "--out", str(tmp_path), "--pgm", *SMALL]) == 0
    depth = read_hpnd(tmp_path / "depth" / "scene_0000.hpnd")
    assert depth.depth.shape == (64, 64)
    assert (tmp_path / "depth" / "scene_0000.pgm").read_bytes().startswith(b"P5")


def test_reconstruct_oracle_and_evaluate(tmp_path, scenes):
    out = tmp_path / "run"
    assert main(["reconstruct", "--scenes", str(scenes), "--output-dir", str(out), *SMALL]) == 0
    assert read_hpnf(out / "fields" / "scene_0000_L16.hpnf").kind == "logit"
    assert read_hpnf(out / "fields" / "scene_0000_fused.hpnf").kind == "probability"
    assert len(read_obj(out / "meshes" / "scene_0000.obj").faces) > 0
    csv = (out / "reports" / "reconstruct.csv").read_text().splitlines()
    assert len(csv) == 4 and csv[0].startswith("scene_id,")

    (out / "meshes" / "scene_0002.obj").unlink()
    assert main(["evaluate", "--pred", str(out / "meshes"), "--scenes", str(scenes),
                 "--out", str(out), "--name", "ev", *SMALL]) == 0
    assert (out / "reports" / "ev_missing.txt").read_text() == "scene_0002\n"
    assert len((out / "reports" / "ev.csv").read_text().splitlines()) == 3


def test_reconstruct_from_depth_file(tmp_path, scenes):
    assert main(["render", "--scenes", str(scenes / "scene_0001.json"), "--out", str(tmp_path), *SMALL]) == 0
    assert main(["reconstruct", "--scenes", str(scenes / "scene_0001.json"),
                 "--depth", str(tmp_path / "depth" / "scene_0001.hpnd"),
                 "--output-dir", str(tmp_path / "r"), *SMALL]) == 0
    assert (tmp_path / "r" / "meshes" / "scene_0001.obj").exists()


def test_bank_and_retrieval(tmp_path, scenes):
    bank = tmp_path / "b16.hpnk"
    assert main(["build-bank", "--scenes", str(scenes), "--patch", "16", "--out", str(bank), *SMALL]) == 0
    b = read_bank(bank)
    assert b.N == 16 and len(b) == 3 * 49 and b.dims == (4, 4, 16)
    assert main(["reconstruct", "--scenes", str(scenes / "scene_0000.json"), "--backend", "16=retrieval",
                 "--bank", f"16={bank}", "--output-dir", str(tmp_path / "r"), *SMALL]) == 0
    assert main(["sweep-bank", "--scenes", str(scenes), "--fractions", "0.1,1.0", "--backend", "16=retrieval",
                 "--bank", f"16={bank}", "--output-dir", str(tmp_path / "s"), *SMALL]) == 0
    rows = json.loads((tmp_path / "s" / "reports" / "sweep_bank.json").read_text())
    assert [r["bank_entries"]["16"] for r in rows] == [15, 147]
    # querying the bank's own scenes at full size is an exact lookup
    assert rows[1]["mean_fscore"] > 90.0


def test_ablate_levels(tmp_path, scenes):
    assert main(["ablate-levels", "--scenes", str(scenes), "--level-sets", "64;64+16;16",
                 "--output-dir", str(tmp_path), "--no-write", *SMALL]) == 0
    lines = (tmp_path / "reports" / "ablate_levels.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines[1:]] == ["64", "64+16", "16"]
    assert (tmp_path / "reports" / "ablate_levels.txt").exists()


def test_external_backend_from_config(tmp_path, scenes):
    cfg = {"image_size": 64, "grid_res": 16, "levels": [64, 16], "workers": 1,
           "backends": {"default": "oracle", "16": "external"},
           "external": {"16": [sys.executable, "-m", "hpn.peer", "oracle", "--scene", "{scene}",
                               "--width", "64", "--patch", "16"]},
           "output_dir": str(tmp_path / "ext")}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["reconstruct", "--config", str(tmp_path / "c.json"),
                 "--scenes", str(scenes / "scene_0000.json")]) == 0
    assert main(["reconstruct", "--scenes", str(scenes / "scene_0000.json"),
                 "--output-dir", str(tmp_path / "loc"), *SMALL]) == 0
    for name in ("scene_0000_L16.hpnf", "scene_0000_fused.hpnf"):
        assert (tmp_path / "ext" / "fields" / name).read_bytes() == (tmp_path / "loc" / "fields" / name).read_bytes()


def test_workers_bit_identical(tmp_path, scenes):
    outs = []
    for w in ("1", "4"):
        out = tmp_path / f"w{w}"
        args = ["reconstruct", "--scenes", str(scenes / "scene_0001.json"), "--output-dir", str(out),
                "--image-size", "64", "--grid-res", "16", "--levels", "64,16", "--workers", w,
                "--backend", "default=noisy_oracle", "--deterministic"]
        assert main(args) == 0
        outs.append(out)
    for rel in ("fields/scene_0001_fused.hpnf", "meshes/scene_0001.obj", "reports/reconstruct.csv"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


class TestErrors:
    def test_missing_scenes(self, tmp_path):
        assert main(["render", "--scenes", str(tmp_path / "nope*.json")]) == 1

    def test_bad_config_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"grid_resolution": 3}')
        assert main(["compose", "--n", "1", "--config", str(tmp_path / "c.json")]) == 1

    def test_failing_peer_names_patch(self, tmp_path, scenes, caplog):
        cfg = {"image_size": 64, "grid_res": 16, "levels": [16], "workers": 1,
               "backends": {"default": "external"},
               "external": {"16": [sys.executable, "-m", "hpn.peer", "short"]},
               "output_dir": str(tmp_path)}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["reconstruct", "--config", str(tmp_path / "c.json"),
                     "--scenes", str(scenes / "scene_0000.json")]) == 1
        assert "patch 0" in caplog.text
        assert not (tmp_path / "meshes").exists()

    def test_retrieval_without_bank(self, tmp_path, scenes):
        assert main(["reconstruct", "--scenes", str(scenes), "--backend", "16=retrieval",
                     "--output-dir", str(tmp_path), *SMALL]) == 1

    def test_bad_fraction(self, tmp_path, scenes):
        assert main(["sweep-bank", "--scenes", str(scenes), "--fractions", "0", "--backend", "16=retrieval",
                     "--output-dir", str(tmp_path), *SMALL]) == 1


def test_parse_level_sets():
    assert parse_level_sets("256;256+64; 32") == [[256], [256, 64], [32]]


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "hpn.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("compose", "render", "build-bank", "reconstruct", "evaluate", "sweep-bank", "ablate-levels"):
        assert cmd in res.stdout
