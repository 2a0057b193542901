import csv

from app.core.records import (
    DenoiseTrace,
    EvalReport,
    EvalRow,
    LossReport,
    MetricsRow,
    TraceStep,
    Verdict,
    create_check,
    read_metrics_csv,
    write_checks_csv,
    write_metrics_csv,
    write_trace_csv,
)


def make_trace() -> DenoiseTrace:
    return DenoiseTrace(gen_length=3, steps=[
        TraceStep(1, 1.0, 0.5, [2, 0], [0.9, 0.75]),
        TraceStep(2, 0.5, 0.0, [1], [0.5]),
    ])


def test_trace_csv(tmp_path):
    path = tmp_path / "out" / "trace.csv"
    write_trace_csv(path, make_trace())
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == [
        "step,t,s,finalized_positions,confidences",
        "1,1.0,0.5,2;0,0.9;0.75",
        "2,0.5,0.0,1,0.5",
    ]


def test_trace_json():
    trace = make_trace()
    assert DenoiseTrace.from_json(trace.to_json()) == trace
    assert trace.finalized_positions() == [2, 0, 1]


def test_metrics_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    rows = [MetricsRow(10, 2.5, 0.51, 0.49), MetricsRow(20, 1.25, 0.48, 0.5)]
    write_metrics_csv(path, rows)
    assert read_metrics_csv(path, stage="ALIGN") == [
        MetricsRow(10, 2.5, 0.51, 0.49, "ALIGN"),
        MetricsRow(20, 1.25, 0.48, 0.5, "ALIGN"),
    ]


def test_eval_report_json():
    row = EvalRow("none/random", 0.25, 0.5, 3.0, 4)
    report = EvalReport(0.25, 0.5, 3.0, 4, [row])
    assert EvalReport.from_json(report.to_json()) == report


def test_loss_report_std_error():
    report = LossReport(objective=2.0, draws=[1.0, 3.0])
    assert report.std_error == 1.0
    assert LossReport(objective=1.0, draws=[1.0]).std_error == 0.0
    assert LossReport.from_json(report.to_json()) == report


def test_checks_csv(tmp_path):
    results = [create_check("forward", "N=4,t=0.5", 0.42, 0.003, True),
               create_check("reverse", "L=2", 0.02, 0.02, False)]
    assert [r.verdict for r in results] == [Verdict.PASS, Verdict.FAIL]
    path = tmp_path / "checks.csv"
    write_checks_csv(path, results)
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["passed"] for r in rows] == ["True", "False"]
    assert rows[0]["setting"] == "N=4,t=0.5"
