import json

import numpy as np
import pytest

from leyolo.cli import EXIT_MISSING_FILE, EXIT_PRECONDITION, main
from leyolo.modelio import write_ppm


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_json(capsys):
    code, out, err = run(capsys, "analyze", "--variant", "nano", "--imgsz", "320", "--format", "json")
    assert code == 0 and err == ""
    assert json.loads(out)["total"]["gflops"] == pytest.approx(0.66, rel=0.12)


def test_analyze_ablation_and_csv(capsys):
    code, out, _ = run(capsys, "analyze", "--ablate", "kernels_3x3_only", "--ablate", "no_pw=true", "--format", "csv")
    assert code == 0 and out.startswith("id,section")


def test_unknown_ablation_is_usage_error(capsys):
    code, out, err = run(capsys, "analyze", "--ablate", "magic")
    assert code == 2 and out == "" and "magic" in err


def test_dump_spec_lists_backbone(capsys):
    code, out, _ = run(capsys, "dump-spec", "--variant", "nano")
    layers = json.loads(out)["layers"]
    assert code == 0 and sum(l["id"].startswith("backbone.") for l in layers) == 15


def test_verify_all(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0 and out.count("all constraints satisfied") == 4


def test_compare(capsys):
    code, out, _ = run(capsys, "compare", "--format", "json")
    assert code == 0 and len(json.loads(out)) == 9


def test_init_random_then_infer(tmp_path, capsys):
    w, img, dets = tmp_path / "w.leyw", tmp_path / "i.ppm", tmp_path / "d.json"
    write_ppm(np.random.default_rng(0).random((3, 100, 150)), img)
    assert run(capsys, "init-random", "--seed", "4", "-o", str(w))[0] == 0
    code, out, err = run(capsys, "infer", "--weights", str(w), "--image", str(img), "--imgsz", "160", "-o", str(dets))
    assert code == 0 and out == ""
    data = json.loads(dets.read_text())
    assert isinstance(data, list)
    for d in data:
        x1, y1, x2, y2 = d["box"]
        assert 0 <= x1 < x2 <= 150 and 0 <= y1 < y2 <= 100 and set(d) == {"box", "score", "class"}


def test_infer_error_exits_are_distinct(tmp_path, capsys):
    img = tmp_path / "i.ppm"
    write_ppm(np.zeros((3, 8, 8)), img)
    code_size, out, err_size = run(capsys, "infer", "--weights", "x", "--image", str(img), "--imgsz", "100")
    code_file, _, err_file = run(capsys, "infer", "--weights", str(tmp_path / "none"), "--image", str(img),
                                 "--imgsz", "64")
    assert code_size == EXIT_PRECONDITION and code_file == EXIT_MISSING_FILE
    assert out == "" and "multiple of 32" in err_size and "weight file not found" in err_file


def test_corrupt_store_exit(tmp_path, capsys):
    w, img = tmp_path / "w.leyw", tmp_path / "i.ppm"
    w.write_bytes(b"NOPE")
    write_ppm(np.zeros((3, 8, 8)), img)
    code, _, err = run(capsys, "infer", "--weights", str(w), "--image", str(img), "--imgsz", "64")
    assert code == 5 and "magic" in err
