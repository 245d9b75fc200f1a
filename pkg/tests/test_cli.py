import json
import logging

import pytest

from src.cli import EXIT_OK, EXIT_USAGE, main
from src.corpus.synthetic import StreamSpec, generate_stream, write_jsonl


def _write_config(root, **overrides):
    records, _, boundaries = generate_stream(StreamSpec(n_brands=6, n_slices=3, docs_per_slice=150, V=80, K=3,
                                                        doc_length=20, seed=5))
    write_jsonl(records, root / "reviews.jsonl")
    config = {"input": str(root / "reviews.jsonl"), "output_dir": str(root / "run"), "boundaries": boundaries,
              "min_df": 2, "max_df_frac": 1.0, "ngram_max": 1, "K": 3, "pf_max_iters": 15, "batch": 32,
              "max_steps": 20, "checkpoint_interval": 10, "top_n": 5}
    config.update(overrides)
    path = root / "run.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = _write_config(root)
    assert main(["ingest", "--config", str(config)]) == EXIT_OK
    assert main(["train", "--config", str(config)]) == EXIT_OK
    return root, config


def test_train_writes_checkpoints_and_timing(trained_run):
    root, _ = trained_run
    train_dir = root / "run" / "train"
    assert sorted(p.name for p in train_dir.glob("slice_*.dbtm")) == ["slice_00.dbtm", "slice_01.dbtm",
                                                                      "slice_02.dbtm"]
    manifest = json.loads((train_dir / "manifest.json").read_text())
    assert manifest["gamma_history"][0] == 0.0 and manifest["failure"] is None
    assert (train_dir / "timing.csv").read_text().splitlines()[0] == "slice,steps,seconds"
    assert (train_dir / "config.sha256").exists()


def test_train_rerun_resumes_without_retraining(trained_run):
    root, config = trained_run
    before = (root / "run" / "train" / "slice_01.dbtm").read_bytes()
    assert main(["train", "--config", str(config)]) == EXIT_OK
    assert (root / "run" / "train" / "slice_01.dbtm").read_bytes() == before


def test_eval_reports_next_slice_rows_and_average(trained_run):
    root, config = trained_run
    assert main(["eval", "--config", str(config)]) == EXIT_OK
    eval_dir = root / "run" / "eval"
    lines = (eval_dir / "metrics.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines] == ["slice", "0", "1", "Average"]
    assert (eval_dir / "topics_slice_02.txt").exists()
    assert (eval_dir / "rating_series.csv").exists()

    first = (eval_dir / "metrics.csv").read_bytes()
    assert main(["eval", "--config", str(config)]) == EXIT_OK
    assert (eval_dir / "metrics.csv").read_bytes() == first


def test_eval_same_slice_ranks_every_slice(trained_run):
    root, config = trained_run
    assert main(["eval", "--config", str(config), "--same-slice"]) == EXIT_OK
    lines = (root / "run" / "eval" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 + 1


def test_report_for_known_brand(trained_run):
    root, config = trained_run
    assert main(["report", "--config", str(config), "--brand", "brand_00"]) == EXIT_OK
    report_dir = root / "run" / "report"
    series = (report_dir / "brand_00_series.csv").read_text().splitlines()
    assert len(series) == 1 + 3
    assert (report_dir / "brand_00_series.png").exists()
    grid = (report_dir / "topics_slice_00.txt").read_text()
    assert grid.count("x=") == 3 * 5

    first = (report_dir / "brand_00_series.csv").read_bytes()
    assert main(["report", "--config", str(config), "--brand", "brand_00"]) == EXIT_OK
    assert (report_dir / "brand_00_series.csv").read_bytes() == first


def test_report_unknown_brand_exits_2(trained_run, capsys):
    _, config = trained_run
    assert main(["report", "--config", str(config), "--brand", "nobody"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "brand_00" in err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "ValueError"


def test_missing_config_exits_2(tmp_path):
    assert main(["ingest", "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE


def test_missing_input_exits_2(tmp_path):
    config = _write_config(tmp_path, input=str(tmp_path / "absent.jsonl"))
    assert main(["ingest", "--config", str(config)]) == EXIT_USAGE


def test_train_before_ingest_exits_2(tmp_path):
    config = _write_config(tmp_path)
    assert main(["train", "--config", str(config)]) == EXIT_USAGE


def test_unknown_config_field_exits_2(tmp_path):
    config = _write_config(tmp_path, learning_rate=0.1)
    assert main(["ingest", "--config", str(config)]) == EXIT_USAGE


def test_missing_required_argument():
    with pytest.raises(SystemExit) as exc:
        main(["ingest"])
    assert exc.value.code == 2


def test_eval_options_do_not_invalidate_the_trained_run(trained_run, caplog):
    _, config = trained_run
    with caplog.at_level(logging.WARNING, logger="src.cli"):
        assert main(["eval", "--config", str(config), "--same-slice"]) == EXIT_OK
    assert "different config" not in caplog.text


def test_eval_with_changed_training_field_warns(trained_run, caplog):
    _, config = trained_run
    with caplog.at_level(logging.WARNING, logger="src.cli"):
        assert main(["eval", "--config", str(config), "--seed", "99"]) == EXIT_OK
    assert "different config (seed)" in caplog.text


def test_report_rejects_same_slice(trained_run):
    _, config = trained_run
    with pytest.raises(SystemExit) as exc:
        main(["report", "--config", str(config), "--brand", "brand_00", "--same-slice"])
    assert exc.value.code == 2
