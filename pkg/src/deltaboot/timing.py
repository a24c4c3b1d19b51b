"""Wall-clock accounting for a pipeline run.

Phases mirror the cost split of the two estimators: an initial phase
(ensemble training for the bootstrap, eigendecomposition for the delta
method) and a prediction phase measured separately on the training and test
sets.
"""
from __future__ import annotations

import json
import time
from contextlib import contextmanager
from pathlib import Path

BOOTSTRAP_PHASES = ("bootstrap.initial", "bootstrap.prediction_train", "bootstrap.prediction_test")
DELTA_PHASES = ("delta.initial", "delta.prediction_train", "delta.prediction_test")


class PhaseTimer:
    def __init__(self):
        self.phases = {}
        self._start = time.perf_counter()
        self._end = None

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - t0)

    def add(self, name, seconds):
        self.phases[name] = self.phases.get(name, 0.0) + max(seconds, 0.0)

    def stop(self):
        self._end = time.perf_counter()

    @property
    def total(self):
        end = self._end if self._end is not None else time.perf_counter()
        return end - self._start

    def report(self, repetitions=1):
        return TimingReport.from_phases(self.phases, self.total, repetitions)


def hms(seconds):
    """h:mm:ss.s, keeping a decimal so sub-second phases stay visible."""
    tenths = int(round(seconds * 10))
    whole, frac = divmod(tenths, 10)
    return f"{whole // 3600}:{whole // 60 % 60:02d}:{whole % 60:02d}.{frac}"


class TimingReport:
    """Per-method initial / prediction-train / prediction-test / total cells.

    Delta-method cells are per repetition (total over repetitions divided by
    their count) so both rows describe a single application of the method.
    """

    def __init__(self, methods, phases, run_total):
        self.methods = methods
        self.phases = phases
        self.run_total = run_total

    @classmethod
    def from_phases(cls, phases, run_total, repetitions=1):
        methods = {}
        for method, names, div in (("bootstrap", BOOTSTRAP_PHASES, 1), ("delta", DELTA_PHASES, repetitions)):
            initial, pred_train, pred_test = (phases.get(n, 0.0) / div for n in names)
            methods[method] = {
                "initial": initial,
                "prediction_train": pred_train,
                "prediction_test": pred_test,
                "total": initial + pred_train + pred_test,
            }
        return cls(methods, dict(phases), run_total)

    @property
    def speedup(self):
        """Bootstrap total time divided by delta total time."""
        d = self.methods["delta"]["total"]
        return self.methods["bootstrap"]["total"] / d if d > 0 else float("inf")

    @property
    def coverage(self):
        return sum(self.phases.values()) / self.run_total if self.run_total > 0 else 1.0

    def to_dict(self):
        return {
            "methods": self.methods,
            "bootstrap_over_delta_total": self.speedup,
            "phases": self.phases,
            "run_total": self.run_total,
            "phase_coverage": self.coverage,
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def table(self):
        lines = [f"{'method':<10} {'initial':>11} {'pred-train':>11} {'pred-test':>11} {'total':>11}"]
        for name, cells in self.methods.items():
            lines.append(
                f"{name:<10} {hms(cells['initial']):>11} {hms(cells['prediction_train']):>11} "
                f"{hms(cells['prediction_test']):>11} {hms(cells['total']):>11}"
            )
        lines.append(f"bootstrap/delta total-time ratio: {self.speedup:.2f}")
        return "\n".join(lines)
