"""Pose trace records: the per-detection time series all evaluation runs on."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

from .geometry import Quaternion


@dataclass(frozen=True)
class TraceRecord:
    """One detection: position target, orientation, pixel center, scores."""

    frame: int
    t: float
    id: int
    e: float
    n: float
    u: float
    qw: float
    qx: float
    qy: float
    qz: float
    un: float
    vn: float
    solution: str = "A"       # chosen ambiguity candidate
    var_a: float = 0.0
    var_b: float = 0.0

    def quaternion(self) -> Quaternion:
        return Quaternion(self.qw, self.qx, self.qy, self.qz)

    def target(self) -> tuple[float, float, float]:
        return (self.e, self.n, self.u)


@dataclass
class PoseTrace:
    """Ordered, timestamped detections for one system and test case."""

    system: str
    case: str
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def duration(self) -> float:
        if len(self.records) < 2:
            return 0.0
        return self.records[-1].t - self.records[0].t

    def save_jsonl(self, path) -> None:
        path = Path(path)
        with path.open("w") as f:
            f.write(json.dumps({"system": self.system, "case": self.case})
                    + "\n")
            for r in self.records:
                f.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "PoseTrace":
        path = Path(path)
        with path.open() as f:
            lines = [json.loads(line) for line in f if line.strip()]
        if not lines or "system" not in lines[0]:
            raise ValueError(f"{path}: missing trace header line")
        trace = cls(system=lines[0]["system"], case=lines[0]["case"])
        for d in lines[1:]:
            trace.append(TraceRecord(**d))
        return trace
