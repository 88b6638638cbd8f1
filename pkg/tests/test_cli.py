import csv
import io
import json

import pytest

from conftest import random_tensor
from tensorfeat.cli import main, ratio_label
from tensorfeat.tensor import load_frostt, write_frostt

GEN = ["--dims", "100,100,100", "--d-slc", "1e-1", "--d-fib", "1e-2", "--d-nz", "1e-3",
       "--cv-fib", "1", "--cv-nz", "1", "--imbal-fib", "0.5", "--imbal-nz", "0.5"]


@pytest.fixture
def example_tns(tmp_path, example_tensor):
    p = tmp_path / "ex.tns"
    write_frostt(example_tensor, p)
    return str(p)


@pytest.fixture
def four_mode_tns(tmp_path):
    p = tmp_path / "four.tns"
    write_frostt(random_tensor((6, 7, 8, 9), 150, seed=1), p)
    return str(p)


def csv_rows(text):
    return list(csv.reader(io.StringIO(text)))


class TestExtract:
    def test_hybrid_top3_json(self, tmp_path, example_tns):
        out = tmp_path / "f.json"
        assert main(["extract", "--method", "hybrid", "--modes", "top3", example_tns, "-o", str(out)]) == 0
        doc = json.loads(out.read_text())
        n = len(doc["global"]["sizes"]) + len(doc["global"]) - 1 + 15 * len(doc["blocks"])
        assert n == 146
        assert doc["meta"]["method"] == "hybrid" and "wall_time_s" in doc["meta"]

    def test_csv_to_stdout(self, capsys, example_tns):
        assert main(["extract", "--format", "csv", "--method", "sort", example_tns]) == 0
        lines = [r for r in capsys.readouterr().out.splitlines() if not r.startswith("#")]
        assert lines[0] == "feature_name,kind,modes,value" and len(lines) == 147

    def test_group_fallback(self, tmp_path, capsys, example_tns):
        out = tmp_path / "f.json"
        code = main(["extract", "--method", "group", "--group-cap", "3", "--modes", "all", example_tns, "-o", str(out)])
        assert code == 0
        assert "fell back" in capsys.readouterr().err
        assert json.loads(out.read_text())["meta"]["fallbacks"]

    def test_unsupported_combination(self, capsys, four_mode_tns):
        assert main(["extract", "--modes", "all", "--method", "sort", four_mode_tns]) == 2
        assert "UnsupportedCombination" in capsys.readouterr().err

    def test_hash_all_modes_on_four(self, capsys, four_mode_tns):
        assert main(["extract", "--modes", "all", "--method", "hash", "--format", "csv", four_mode_tns]) == 0
        lines = [r for r in capsys.readouterr().out.splitlines() if not r.startswith("#")]
        assert len(lines) - 1 == 251

    def test_missing_file(self, capsys, tmp_path):
        assert main(["extract", str(tmp_path / "nope.tns")]) == 1

    def test_bad_format(self, capsys, tmp_path):
        p = tmp_path / "bad.tns"
        p.write_text("1 1 1 1\n1 1 1\n")
        assert main(["extract", str(p)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_bad_flag(self, capsys, example_tns):
        assert main(["extract", "--method", "magic", example_tns]) == 1

    def test_config_file_and_override(self, tmp_path, example_tns):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"method": "sort", "modes": "all", "no-timing": True}))
        out = tmp_path / "f.json"
        assert main(["extract", "--config", str(cfg), example_tns, "-o", str(out)]) == 0
        meta = json.loads(out.read_text())["meta"]
        assert meta["method"] == "sort" and "wall_time_s" not in meta
        assert main(["extract", "--config", str(cfg), "--method", "hash", example_tns, "-o", str(out)]) == 0
        assert json.loads(out.read_text())["meta"]["method"] == "hash"

    def test_key_value_config(self, tmp_path, example_tns):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# settings\nmethod = group\nthreads = 2\n")
        out = tmp_path / "f.json"
        assert main(["extract", "--config", str(cfg), example_tns, "-o", str(out)]) == 0
        assert json.loads(out.read_text())["meta"]["method"] == "group"

    def test_bad_config_key(self, tmp_path, example_tns):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        assert main(["extract", "--config", str(cfg), example_tns]) == 1


class TestGenerate:
    def test_deterministic_file(self, tmp_path, capsys):
        a, b = tmp_path / "a.tns", tmp_path / "b.tns"
        assert main(["generate", *GEN, "--seed", "0", "-o", str(a)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["nnz"] == load_frostt(str(a)).nnz
        assert main(["generate", *GEN, "--seed", "0", "--threads", "3", "-o", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_other_seed_differs(self, tmp_path):
        a, b = tmp_path / "a.tns", tmp_path / "b.tns"
        main(["generate", *GEN, "--seed", "0", "-o", str(a)])
        main(["generate", *GEN, "--seed", "1", "-o", str(b)])
        assert a.read_bytes() != b.read_bytes()
        # only ten slices here, so the seed-to-seed spread is a few percent
        na, nb = load_frostt(str(a)).nnz, load_frostt(str(b)).nnz
        assert abs(na - nb) / na < 0.1

    def test_stdout_tensor(self, capsys):
        assert main(["generate", *GEN]) == 0
        cap = capsys.readouterr()
        assert cap.out.count("\n") == json.loads(cap.err)["nnz"]

    def test_infeasible(self, capsys):
        args = ["generate", "--dims", "100,100,100", "--d-slc", "0.5", "--d-fib", "0.1", "--d-nz", "1e-4"]
        assert main(args) == 2
        assert "below 1" in capsys.readouterr().err

    def test_missing_density(self, capsys):
        assert main(["generate", "--dims", "10,10,10", "--d-slc", "0.5"]) == 1

    def test_out_of_range(self, capsys):
        assert main(["generate", "--dims", "10,10,10", "--d-slc", "2", "--d-fib", "0.1", "--d-nz", "0.01"]) == 2


class TestRoundtrip:
    def test_generated_fixture_is_green(self, tmp_path, capsys):
        src = tmp_path / "g.tns"
        main(["generate", "--dims", "300,200,200", "--d-slc", "0.6", "--d-fib", "0.1", "--d-nz", "0.005",
              "--cv-fib", "0.5", "--cv-nz", "0.5", "--imbal-fib", "0.7", "--imbal-nz", "0.7", "-o", str(src)])
        capsys.readouterr()
        assert main(["roundtrip", str(src), "--seed", "5"]) == 0
        rows = {r[0]: r for r in csv_rows(capsys.readouterr().out)[1:]}
        for name in ("d_slc", "d_fib", "d_nz"):
            assert rows[name][4] == "green", rows[name]

    def test_zero_cv_is_omitted(self, tmp_path, capsys, dense222):
        src = tmp_path / "d.tns"
        write_frostt(dense222, src)
        saved = tmp_path / "gen.tns"
        assert main(["roundtrip", str(src), "--save-generated", str(saved)]) == 0
        rows = {r[0]: r for r in csv_rows(capsys.readouterr().out)[1:]}
        assert rows["cv_fib"][3] == "-" and rows["cv_nz"][3] == "-"
        assert load_frostt(str(saved)).nnz == 8

    def test_four_mode(self, capsys, four_mode_tns):
        assert main(["roundtrip", four_mode_tns]) == 0
        assert csv_rows(capsys.readouterr().out)[0] == ["feature", "original", "generated", "ratio", "label"]

    @pytest.mark.parametrize(
        "ratio,label", [(1.0, "green"), (0.9, "green"), (1.1, "green"), (0.7, "orange"), (2.0, "orange"),
                        (0.49, "red"), (2.01, "red"), (None, "-")]
    )
    def test_labels(self, ratio, label):
        assert ratio_label(ratio) == label


class TestBench:
    def test_two_methods(self, capsys, example_tns):
        assert main(["bench", example_tns, "--methods", "sort,hybrid", "--reps", "2"]) == 0
        rows = csv_rows(capsys.readouterr().out)
        assert rows[0] == ["tensor", "method", "fiber_mode", "metric", "path", "time_1", "time_2", "time_mean"]
        assert len(rows) == 1 + 2 * 3
        for r in rows[1:]:
            assert int(r[3]) == 4  # 2 x 2 leading sizes

    def test_single_rep_no_mean(self, capsys, example_tns):
        assert main(["bench", example_tns, "--methods", "group", "--reps", "1"]) == 0
        assert "time_mean" not in capsys.readouterr().out

    def test_no_timing_is_stable(self, capsys, example_tns):
        main(["bench", example_tns, "--no-timing", "--threads", "1"])
        a = capsys.readouterr().out
        main(["bench", example_tns, "--no-timing", "--threads", "4"])
        assert capsys.readouterr().out == a

    def test_hybrid_path_column(self, tmp_path, capsys):
        p = tmp_path / "wide.tns"
        p.write_text("1 1 1 1\n400000 400000 3 1\n")
        main(["bench", str(p), "--methods", "hybrid", "--reps", "1", "--no-timing"])
        paths = {r[2]: r[4] for r in csv_rows(capsys.readouterr().out)[1:]}
        assert sorted(paths.values()) == ["group", "group", "sort"]

    def test_unknown_method(self, capsys, example_tns):
        assert main(["bench", example_tns, "--methods", "magic"]) == 1


class TestCompare:
    def test_identity_and_cross_method(self, tmp_path, example_tns):
        a, b = tmp_path / "a.json", tmp_path / "b.csv"
        main(["extract", "--method", "hash", "--modes", "all", example_tns, "-o", str(a)])
        main(["extract", "--method", "sort", "--modes", "all", example_tns, "-o", str(b)])
        assert main(["compare", str(a), str(a)]) == 0
        assert main(["compare", str(a), str(b)]) == 0

    def test_mismatch(self, tmp_path, capsys, example_tns, dense222):
        d = tmp_path / "dense.tns"
        write_frostt(dense222, d)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["extract", example_tns, "-o", str(a)])
        main(["extract", str(d), "-o", str(b)])
        assert main(["compare", str(a), str(b)]) == 3
        out = capsys.readouterr().out
        assert out.startswith("feature\tkind\tmodes\ta\tb") and "nnz" in out

    def test_unreadable(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{")
        assert main(["compare", str(p), str(p)]) == 1
