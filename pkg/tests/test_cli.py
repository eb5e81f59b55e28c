import csv
import io
import json
import math

import pytest

import wdm.cli as cli
from wdm.cli import CSV_COLUMNS, ConfigError, ReportError, aggregate, main, parse_config, report, run_sweep
from wdm.datasets import OMNIGLOT_TOP9, mi_of_spec

TINY = {
    "axis": "n_characters",
    "values": [1, 2],
    "objectives": ["cpc", "wpc"],
    "seeds": [0],
    "dataset": {"n_samples": 64, "cell_px": 8, "alphabet_size": 4},
    "encoder": {"hidden_widths": [16], "repr_dim": 4},
    "train": {"steps": 6, "batch_size": 8, "eval_every": 3},
}


def write_config(tmp_path, body, name="sweep.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body, indent=2))
    return path


def write_rows(path, rows, header=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


class TestConfig:
    def test_desk_sweep_row_count(self, tmp_path):
        body = {"axis": "n_characters", "values": [1, 2, 3, 4], "objectives": ["cpc", "wpc"], "seeds": [0, 1, 2]}
        out = io.StringIO()
        assert run_sweep(write_config(tmp_path, body), dry_run=True, stream=out) == 0
        assert json.loads(out.getvalue().split("\n  axis=")[0])["cells"] == 24
        assert "mi=11.0904 K=64" in out.getvalue()
        assert not (tmp_path / "sweep_out").exists()

    def test_empty_seeds_reports_line(self, tmp_path, capsys):
        path = write_config(tmp_path, {**TINY, "seeds": []})
        assert run_sweep(path) == 2
        err = capsys.readouterr().err
        line = next(i for i, l in enumerate(path.read_text().splitlines(), 1) if '"seeds"' in l)
        assert err.startswith(f"{path}:{line}:") and "seeds" in err

    @pytest.mark.parametrize("patch, key", [
        ({"axis": "colour"}, "axis"),
        ({"objectives": ["mine"]}, "objectives"),
        ({"valuez": [1]}, "valuez"),
        ({"values": [0]}, "values"),
    ])
    def test_invalid_fields(self, patch, key):
        text = json.dumps({**TINY, **patch}, indent=2)
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert '"%s"' % key in text.splitlines()[info.value.line - 1]

    def test_malformed_json(self):
        with pytest.raises(ConfigError) as info:
            parse_config('{\n  "axis": "n_characters",\n  oops\n}')
        assert info.value.line == 3

    def test_seed_override(self, tmp_path):
        out = io.StringIO()
        run_sweep(write_config(tmp_path, TINY), seeds=[3, 4, 5], dry_run=True, stream=out)
        assert json.loads(out.getvalue().split("\n  axis=")[0])["cells"] == 12

    def test_shapes_family_has_no_character_axis(self):
        with pytest.raises(ConfigError):
            parse_config(json.dumps({**TINY, "dataset": {"family": "shapes"}}))


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    path = write_config(root, {**TINY, "seeds": [0, 1]})
    assert run_sweep(path, out_dir=root / "out", stream=io.StringIO()) == 0
    return root / "out"


class TestRunSweep:
    def test_outputs(self, sweep):
        text = (sweep / "results.csv").read_text()
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 8
        for r in rows:
            k = int(r["axis"])
            assert float(r["mi_certificate"]) == mi_of_spec([4] * k)
            assert len(r["per_factor_accuracies"].split(";")) == k
            assert 0 <= float(r["mean_probe_accuracy"]) <= 1
            assert float(r["final_mi_estimate"]) <= math.log(8) + 1e-9
        manifest = json.loads((sweep / "manifest.json").read_text())
        assert manifest["completed"] == 8 and manifest["failures"] == []
        assert manifest["config"]["dataset"]["alphabet_size"] == 4
        assert (sweep / "results.png").stat().st_size > 0
        assert "| 2 | wpc | 2 |" in (sweep / "report.md").read_text()

    def test_plots_regenerate_from_csv(self, sweep):
        (sweep / "results.png").unlink()
        report([sweep / "results.csv"], stream=io.StringIO())
        assert (sweep / "results.png").exists()

    def test_parallel_workers_match_serial(self, sweep, tmp_path):
        path = write_config(tmp_path, {**TINY, "seeds": [0, 1]})
        assert run_sweep(path, out_dir=tmp_path / "par", workers=2, stream=io.StringIO()) == 0
        strip = lambda p: [l.rsplit(",", 1)[0] for l in p.read_text().splitlines()]
        assert strip(tmp_path / "par" / "results.csv") == strip(sweep / "results.csv")

    def test_failed_cell_is_recorded(self, tmp_path, monkeypatch):
        real = cli.run_cell

        def flaky(cfg, value, objective, seed):
            if value == 2 and objective == "wpc":
                raise RuntimeError("boom")
            return real(cfg, value, objective, seed)

        monkeypatch.setattr(cli, "run_cell", flaky)
        out = tmp_path / "out"
        assert run_sweep(write_config(tmp_path, TINY), out_dir=out, stream=io.StringIO()) == 1
        rows = list(csv.DictReader(open(out / "results.csv")))
        assert [(r["axis"], r["objective"]) for r in rows] == [("1", "cpc"), ("1", "wpc"), ("2", "cpc")]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["failures"] == [{"axis": 2, "objective": "wpc", "seed": 0, "error": "RuntimeError: boom"}]

    def test_main_dry_run(self, tmp_path, capsys):
        assert main(["run-sweep", str(write_config(tmp_path, TINY)), "--dry-run"]) == 0
        assert '"cells": 4' in capsys.readouterr().out


def row(axis, objective, seed, mi, acc, est=1.0):
    return [axis, objective, seed, repr(mi), repr(est), repr(acc), repr(acc), "0.1"]


class TestReport:
    def test_single_row(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [row(1, "cpc", 0, math.log(16), 0.75)])
        (summary,) = aggregate([path])
        assert summary["acc_mean"] == 0.75 and summary["acc_std"] == 0.0
        assert summary["exceeds_dataset"] is None

    def test_flags_information_beyond_dataset(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [
            row(3, "cpc", 0, 3 * math.log(16), 0.5),   # exp(MI) = 4096 > 1024
            row(2, "cpc", 0, 2 * math.log(16), 0.9),   # 256 < 1024
        ])
        out = io.StringIO()
        summary = report([path], dataset_size=1024, stream=out)
        flags = {r["axis"]: r["exceeds_dataset"] for r in summary}
        assert flags == {2: False, 3: True}
        assert "| 3 | cpc | 1 | 0.5000 ± 0.0000" in out.getvalue()
        assert (tmp_path / "report.md").exists()

    @pytest.mark.parametrize("n", [1024, 50_000, 10 ** 14])
    def test_paper_scale_spec_is_always_flagged(self, tmp_path, n):
        mi = mi_of_spec(list(OMNIGLOT_TOP9))
        assert mi == pytest.approx(34.43, abs=5e-3)
        path = write_rows(tmp_path / "r.csv", [row(9, "wpc", 0, mi, 0.3)])
        assert aggregate([path], dataset_size=n)[0]["exceeds_dataset"]

    def test_mean_and_std_across_seeds(self, tmp_path):
        a = write_rows(tmp_path / "a.csv", [row(1, "cpc", 0, 1.0, 0.6)])
        (tmp_path / "b").mkdir()
        b = write_rows(tmp_path / "b" / "b.csv", [row(1, "cpc", 1, 1.0, 0.8)])
        (summary,) = aggregate([a, b])
        assert summary["acc_mean"] == pytest.approx(0.7) and summary["acc_std"] == pytest.approx(0.1)

    def test_schema_mismatch(self, tmp_path, capsys):
        path = write_rows(tmp_path / "r.csv", [[1, 2]], header=("axis", "accuracy"))
        with pytest.raises(ReportError):
            aggregate([path])
        assert main(["report", str(path)]) == 2
        assert "schema" in capsys.readouterr().err
