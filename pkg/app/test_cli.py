import json
import shlex
from pathlib import Path

import pandas as pd
import pytest

from cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    build_parser,
    config_from_args,
    load_result,
    main,
    run_experiment,
)
from common import Arm


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "derm.csv"
    assert main(["generate", "dermatology", "--n", "120", "--k", "9", "--out", str(path)]) == EXIT_OK
    return path


def run_args(dataset, out, *extra):
    return ["run", "--dataset", str(dataset), "--target", "class", "--out", str(out), *extra]


# generate / run


def test_generate_writes_csv(dataset):
    frame = pd.read_csv(dataset)
    assert frame.shape == (120, 10)
    assert frame.columns[-1] == "class"


def test_run_baseline(dataset, tmp_path):
    out = tmp_path / "baseline"
    assert main(run_args(dataset, out, "--arm", "baseline", "--reps", "2")) == EXIT_OK
    result = load_result(out)
    assert len(result.reports) == 2
    assert result.label == "Baseline"
    assert all(sum(r.best_mask) == 9 for r in result.reports)
    assert all(not r.trace for r in result.reports)
    assert not list(out.glob("trace_*.csv"))
    assert (out / "summary.json").exists()


def test_run_chc_writes_traces(dataset, tmp_path):
    out = tmp_path / "chc"
    assert main(run_args(dataset, out, "--arm", "chc", "--pop", "6", "--reps", "2", "--seed", "5")) == 0
    result = load_result(out)
    assert [r.run_seed for r in result.reports] == [5, 6]
    assert result.label == "CHC[p=6]"
    trace = pd.read_csv(out / "trace_5.csv")
    assert trace.columns.tolist() == [
        "generation",
        "stage",
        "timestamp",
        "instances_processed",
        "surrogate_evals",
        "full_evals",
        "best_true_fitness",
    ]
    assert trace["best_true_fitness"].is_monotonic_increasing


def test_rerun_summary_is_byte_identical(dataset, tmp_path):
    out = tmp_path / "saga"
    args = run_args(dataset, out, "--arm", "saga", "--so", "1", "--p0", "8", "--reps", "2")
    assert main(args) == EXIT_OK
    first = (out / "summary.json").read_bytes()
    assert main(args) == EXIT_OK
    assert (out / "summary.json").read_bytes() == first
    summary = json.loads(first)
    assert "elapsed_mean" not in summary["summary"]
    assert len(summary["runs"]) == 2


def test_saga_label_lists_non_default_flags(dataset, tmp_path):
    out = tmp_path / "saga"
    assert main(run_args(dataset, out, "--arm", "saga", "--so", "1", "--fop", "0", "--reps", "1")) == 0
    assert load_result(out).label == "SAGA[fop=0, so=1]"


# config


def test_config_file_with_overrides(dataset, tmp_path):
    config = tmp_path / "experiment.json"
    config.write_text(
        json.dumps(
            {
                "dataset": str(dataset),
                "target": "class",
                "arm": "SAGA",
                "saga": {"b": 3, "z": 5},
                "repetitions": 4,
            }
        )
    )
    args = build_parser().parse_args(["run", "--config", str(config), "--z", "7", "--sp", "2"])
    cfg = config_from_args(args)
    assert cfg.arm == Arm.SAGA
    assert (cfg.saga.b, cfg.saga.z, cfg.saga.sp) == (3, 7, 2)
    assert cfg.repetitions == 4
    assert cfg.saga.p0 == 40 and cfg.chc.pop_size == 40


def test_defaults_follow_the_published_settings():
    args = build_parser().parse_args(["run", "--dataset", "x.csv", "--target", "y"])
    cfg = config_from_args(args)
    assert (cfg.saga.b, cfg.saga.pr, cfg.saga.z, cfg.saga.sp, cfg.saga.p0) == (4, 0.5, 10, 1, 40)
    assert cfg.saga.fop and not cfg.saga.so
    assert cfg.repetitions == 10
    assert cfg.arm_label() == "SAGA"


# exit codes


def test_missing_dataset_is_a_data_error(tmp_path):
    assert main(run_args(tmp_path / "absent.csv", tmp_path / "out", "--arm", "baseline")) == EXIT_DATA


def test_missing_target_is_a_data_error(dataset, tmp_path):
    args = ["run", "--dataset", str(dataset), "--target", "label", "--out", str(tmp_path / "o")]
    assert main(args) == EXIT_DATA


@pytest.mark.parametrize("payload", [{"arm": "knn"}, {"repetitions": 0}, {"saga": {"pr": 1.5}}])
def test_bad_config_is_a_config_error(dataset, tmp_path, payload):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"dataset": str(dataset), "target": "class", **payload}))
    assert main(["run", "--config", str(config)]) == EXIT_CONFIG


def test_unreadable_config_is_a_config_error(tmp_path):
    config = tmp_path / "broken.json"
    config.write_text("{not json")
    assert main(["run", "--config", str(config)]) == EXIT_CONFIG


# compare / tables / cost


def test_compare_and_tables(dataset, tmp_path):
    reference, baseline = tmp_path / "saga", tmp_path / "chc"
    assert main(run_args(dataset, reference, "--arm", "saga", "--so", "1", "--reps", "2")) == 0
    assert main(run_args(dataset, baseline, "--arm", "chc", "--reps", "2")) == 0

    out = tmp_path / "tables"
    assert main(["compare", "--reference", str(reference), "--baseline", str(baseline), "--out", str(out)]) == 0
    match = pd.read_csv(out / "match.csv")
    assert match["run_seed"].tolist() == [0, 1]
    assert set(match.columns) >= {"matched", "generation", "elapsed", "instances_processed"}

    assert main(["tables", str(reference), str(baseline), "--out", str(out)]) == 0
    table = pd.read_csv(out / "table.csv")
    assert len(table) == 1
    assert table.loc[0, "dataset"] == "derm@0"
    assert "CHC[p=40]:p_accuracy" in table.columns
    fig = pd.read_csv(out / "fig_trace.csv")
    assert fig.columns.tolist() == ["x", "mean", "std", "label"]
    assert len(fig) == 400
    assert not (out / "significance.csv").exists()


def test_tables_numbers_recompute_from_reports(dataset, tmp_path):
    out = tmp_path / "chc"
    assert main(run_args(dataset, out, "--arm", "chc", "--pop", "6", "--reps", "3")) == 0
    assert main(["tables", str(out), "--out", str(tmp_path / "t")]) == 0
    table = pd.read_csv(tmp_path / "t" / "table.csv")
    reports = load_result(out).reports
    expected = sum(r.test_accuracy for r in reports) / 3
    assert table.loc[0, "CHC[p=6]:test_mean"] == pytest.approx(expected, abs=1e-6)


def test_cost(tmp_path):
    assert main(["cost", "--out", str(tmp_path)]) == EXIT_OK
    table = pd.read_csv(tmp_path / "fig_cost.csv")
    row = table[table["levels"] == 4].iloc[0]
    assert row["DT"] == 0.9375
    assert row["kNN"] == pytest.approx(85 / 256, abs=1e-8)
    assert row["SVM"] == pytest.approx(585 / 4096, abs=1e-8)


# run_experiment


def test_parallel_repetitions_match_sequential(dataset, tmp_path):
    args = build_parser().parse_args(
        run_args(dataset, tmp_path / "seq", "--arm", "chc", "--pop", "6", "--reps", "3")
    )
    cfg = config_from_args(args)
    sequential = run_experiment(cfg, write=False)
    parallel = run_experiment(cfg.model_copy(update={"workers": 2}), write=False)
    strip = {"elapsed", "trace"}
    assert [r.model_dump(exclude=strip) for r in parallel.reports] == [
        r.model_dump(exclude=strip) for r in sequential.reports
    ]


# reproduce.sh


def reproduce_commands():
    script = (Path(__file__).parent.parent / "scripts" / "reproduce.sh").read_text()
    return [shlex.split(line) for line in script.replace("\\\n", " ").splitlines() if line.strip()]


def test_reproduce_runs_ablations_surrogate_only():
    ablations = [c for c in reproduce_commands() if c[:3] == ["run", "--arm", "saga"]]
    for command in ablations:
        if {"--fop", "--sp", "--pr"} & set(command):
            assert command[command.index("--so") + 1] == "1"
    assert len(ablations) == 5


def test_reproduce_tables_put_the_reference_arm_first():
    steps = [c for c in reproduce_commands() if c[:1] == ["step"] and "tables" in c]
    calls = [c[c.index("tables") + 1 :] for c in steps]
    firsts = {call[0] for call in calls}
    compared = {arg for call in calls for arg in call[1:] if arg.startswith("$out")}
    assert firsts == {"$out/saga-so"}
    assert {"$out/chc40", "$out/saga-nofop", "$out/saga-pr1", "$out/saga-sp2"} <= compared
    assert all(len(call[: call.index("--out")]) >= 2 for call in calls)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
