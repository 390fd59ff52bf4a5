import csv
import io

import pytest

from daup import cli
from daup.attack import MlpConfig
from daup.experiments import (ExperimentSpec, InsufficientTrafficError, pipeline_counts,
                              run_fig3, run_overhead_report, run_table)


def small_spec(**kw):
    base = dict(repetitions=2, training_sizes=(50, 100), holdout=100, table_crps=(40, 80),
                seed=5, mlp=MlpConfig(epochs=3))
    base.update(kw)
    return ExperimentSpec(**base)


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_fig3_csv_layout_and_ranges():
    res = run_fig3(small_spec())
    table = rows(res.csv())
    assert table[0][:4] == ["training_size", "scrambled", "verifier", "accuracy"]
    body = table[1:]
    assert len(body) == 2 * 2 * 5
    for r in body:
        assert 0.0 <= float(r[3]) <= 1.0
        assert r[5] == "2"           # seeds per cell
        assert int(r[6]) in (50, 100) and int(r[7]) > 0


def test_fig3_rejects_zero_size_and_short_pools():
    with pytest.raises(ValueError):
        run_fig3(small_spec(training_sizes=(0, 100)))
    with pytest.raises(InsufficientTrafficError, match="needs 200"):
        run_fig3(small_spec(fig3_crps=150))


def test_fig3_is_reproducible():
    assert run_fig3(small_spec()).csv() == run_fig3(small_spec()).csv()
    assert run_fig3(small_spec()).csv() != run_fig3(small_spec(seed=6)).csv()


def test_table_one_diagonal_is_blank():
    res = run_table(small_spec(), 1)
    m = rows(res.matrix_csv())
    assert m[0] == ["i", "j=1", "j=2", "j=3", "j=4", "j=5"]
    for i, r in enumerate(m[1:], start=1):
        assert r[i] == ""
        assert all("(" in cell for j, cell in enumerate(r[1:], start=1) if j != i)


def test_table_two_blanks_both_colluders():
    res = run_table(small_spec(), 2)
    m = rows(res.matrix_csv())
    assert len(m) == 1 + 10
    for r in m[1:]:
        i, k = map(int, r[0].split(","))
        assert r[i] == "" and r[k] == ""
        assert sum(cell == "" for cell in r[1:]) == 2


def test_table_three_rows_are_percentages():
    res = run_table(small_spec(l_values=(10, 50)), 3)
    m = rows(res.matrix_csv())
    assert [r[0] for r in m[1:]] == ["10", "50"]
    cells = rows(res.cells_csv())[1:]
    assert all(0 <= float(c[4]) <= 1 for c in cells)
    assert {c[3] for c in cells} == {"40", "80"}


def test_table_is_reproducible():
    spec = small_spec(repetitions=1)
    a, b = run_table(spec, 1), run_table(spec, 1)
    assert a.matrix_csv() == b.matrix_csv() and a.cells_csv() == b.cells_csv()


def test_invalid_table_number():
    with pytest.raises(ValueError):
        run_table(small_spec(), 4)


def test_lr_learner_runs():
    res = run_table(small_spec(learner="lr", repetitions=1), 1)
    assert len(res.cells) == 20 * 2


def test_overhead_counts():
    c = pipeline_counts(64, 1)
    assert c["puf_queries"] == 7 and c["lfsr_clocks"] == 63 and c["seed_queries"] == 6
    assert pipeline_counts(64, 32)["puf_queries"] == 38
    assert pipeline_counts(16, 1)["lfsr_clocks"] == 15
    csv_text, text = run_overhead_report(ExperimentSpec())
    assert "950400" in csv_text
    assert "63 LFSR clocks" in text


def test_spec_file_roundtrip(tmp_path):
    spec = small_spec()
    import json
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_dict()))
    assert ExperimentSpec.load(tmp_path / "spec.json") == spec
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"nope": 1})


# -- command line --------------------------------------------------------------------

def test_cli_requires_seed_for_fig3(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["fig3", "--out", str(tmp_path)])


def test_cli_table_writes_csvs(tmp_path, capsys):
    args = ["table", "--which", "1", "--seed", "3", "--repetitions", "1", "--table-crps", "30",
            "--epochs", "2", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    first = (tmp_path / "table1.csv").read_bytes()
    assert (tmp_path / "table1_cells.csv").exists()
    assert "master seed: 3" in (tmp_path / "table1_summary.txt").read_text()
    assert cli.main(args) == 0
    assert (tmp_path / "table1.csv").read_bytes() == first


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text('{"repetitions": 1, "training_sizes": [20], "holdout": 30, "mlp": {"epochs": 2}}')
    assert cli.main(["fig3", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    assert len(rows((tmp_path / "o" / "fig3.csv").read_text())) == 1 + 2 * 5


def test_cli_pipeline_enroll_traffic_attack(tmp_path, capsys):
    assert cli.main(["enroll", "--out", str(tmp_path / "e"), "--n-challenges", "60",
                     "--crp-per-verifier", "20", "--seed", "2"]) == 0
    assert len((tmp_path / "e" / "crps_v1.jsonl").read_text().splitlines()) == 20
    assert (tmp_path / "e" / "prover_puf.json").exists()
    assert cli.main(["traffic", "--out", str(tmp_path / "t"), "--n-challenges", "3000",
                     "--crp-per-verifier", "300", "--seed", "2", "--no-scrambling"]) == 0
    assert cli.main(["attack", "--learner", "lr", "--train", str(tmp_path / "t" / "capture_v1.jsonl"),
                     "--test", str(tmp_path / "t" / "capture_v2.jsonl"),
                     "--model-out", str(tmp_path / "m.json")]) == 0
    out = capsys.readouterr().out
    assert "lr: trained on 300" in out
    assert (tmp_path / "m.json").exists()


def test_cli_overhead(tmp_path, capsys):
    assert cli.main(["overhead", "--out", str(tmp_path)]) == 0
    assert "950400 bits" in capsys.readouterr().out


def test_cli_reports_bad_input(tmp_path, capsys):
    assert cli.main(["fig3", "--seed", "1", "--training-sizes", "0", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
