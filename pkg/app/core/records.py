"""Result records exchanged between engine components and written to disk."""

import csv
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class Verdict(Enum):
    """Outcome of one oracle check."""
    PASS = "pass"
    FAIL = "fail"


@dataclass
class TraceStep:
    """Positions finalized at one reverse step, with their confidences."""
    step: int
    t: float
    s: float
    finalized: list[int] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)


@dataclass
class DenoiseTrace:
    """Per-step snapshots of one generation session."""
    gen_length: int
    steps: list[TraceStep] = field(default_factory=list)

    def finalized_positions(self) -> list[int]:
        return [p for step in self.steps for p in step.finalized]

    def to_json(self) -> str:
        return json.dumps({"gen_length": self.gen_length, "steps": [asdict(s) for s in self.steps]})

    @classmethod
    def from_json(cls, data: str) -> "DenoiseTrace":
        obj = json.loads(data)
        return cls(
            gen_length=obj["gen_length"],
            steps=[TraceStep(**s) for s in obj.get("steps", [])],
        )


@dataclass
class MetricsRow:
    """One logging interval of a training stage."""
    step: int
    loss: float
    t_mean: float
    masked_frac: float
    stage: str = ""


@dataclass
class LossReport:
    """Monte Carlo estimate of the response objective for one example."""
    objective: float
    draws: list[float] = field(default_factory=list)
    masked_counts: list[int] = field(default_factory=list)
    t_values: list[float] = field(default_factory=list)

    @property
    def std_error(self) -> float:
        n = len(self.draws)
        if n < 2:
            return 0.0
        mean = sum(self.draws) / n
        var = sum((d - mean) ** 2 for d in self.draws) / (n - 1)
        return (var / n) ** 0.5

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, data: str) -> "LossReport":
        return cls(**json.loads(data))


@dataclass
class EvalRow:
    """Metrics of one configuration cell."""
    label: str
    exact_match: float
    token_accuracy: float
    mean_bound: float
    n_examples: int


@dataclass
class EvalReport:
    """Exact match, token accuracy and mean bound, overall and per cell."""
    exact_match: float
    token_accuracy: float
    mean_bound: float
    n_examples: int
    rows: list[EvalRow] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, data: str) -> "EvalReport":
        obj = json.loads(data)
        rows = [EvalRow(**r) for r in obj.pop("rows", [])]
        return cls(rows=rows, **obj)


@dataclass
class CheckResult:
    """One oracle-check comparison."""
    suite: str
    setting: str
    statistic: float
    max_deviation: float
    verdict: Verdict

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_json(self) -> str:
        data = asdict(self)
        data["verdict"] = self.verdict.value
        return json.dumps(data)

    @classmethod
    def from_json(cls, data: str) -> "CheckResult":
        obj = json.loads(data)
        obj["verdict"] = Verdict(obj["verdict"])
        return cls(**obj)


def create_check(suite: str, setting: str, statistic: float, max_deviation: float, ok: bool) -> CheckResult:
    """Create a check result from a boolean outcome."""
    return CheckResult(suite, setting, float(statistic), float(max_deviation),
                       Verdict.PASS if ok else Verdict.FAIL)


# -- CSV writers ----------------------------------------------------------

def _open_csv(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def write_metrics_csv(path: Path, rows: Iterable[MetricsRow]) -> None:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "loss", "t_mean", "masked_frac"])
        for row in rows:
            writer.writerow([row.step, repr(row.loss), repr(row.t_mean), repr(row.masked_frac)])


def write_trace_csv(path: Path, trace: DenoiseTrace) -> None:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step", "t", "s", "finalized_positions", "confidences"])
        for step in trace.steps:
            writer.writerow([
                step.step,
                repr(step.t),
                repr(step.s),
                ";".join(str(p) for p in step.finalized),
                ";".join(repr(c) for c in step.confidences),
            ])


def write_checks_csv(path: Path, results: Iterable[CheckResult]) -> None:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["suite", "setting", "statistic", "max_deviation", "passed"])
        for r in results:
            writer.writerow([r.suite, r.setting, repr(r.statistic), repr(r.max_deviation), r.passed])


def read_metrics_csv(path: Path, stage: Optional[str] = None) -> list[MetricsRow]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [
            MetricsRow(int(r["step"]), float(r["loss"]), float(r["t_mean"]),
                       float(r["masked_frac"]), stage or "")
            for r in csv.DictReader(f)
        ]
