"""Resource accounting shared by every estimator.

The ledger is the normative cost measure of the package: wall-clock time is
never used for scaling claims. Additive counters are charged per phase so
that the totals can always be reconciled against their breakdown.
"""
from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["CopyLedger", "BatchExhaustedError", "ResourceCapError"]

ADDITIVE = (
    "copies_consumed",
    "batches_used",
    "gate_applications",
    "copy_gate_applications",
    "destructive_shots",
    "circuit_executions",
    "learner_updates",
)


class ResourceCapError(RuntimeError):
    """A protocol exceeded a configured resource cap (qubits, enumeration size)."""

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class BatchExhaustedError(ResourceCapError):
    """Threshold search ran out of copy batches; R is too small for the instance."""


@dataclass
class CopyLedger:
    """Counters of quantum resources consumed by one estimator run.

    ``copies_total`` is the number of input-state copies the protocol
    requests up front; ``copies_consumed`` counts those actually opened.
    ``gate_applications`` counts operations on a representative register
    (a transversal operation on a whole batch counts once), whereas
    ``copy_gate_applications`` weights each operation by the number of
    copies it touched.
    """

    copies_total: int = 0
    copies_consumed: int = 0
    batches_used: int = 0
    batch_allowance: int = 0
    batch_size: int = 0
    gate_applications: int = 0
    copy_gate_applications: int = 0
    destructive_shots: int = 0
    circuit_executions: int = 0
    learner_updates: int = 0
    phases: dict = field(default_factory=dict)

    def charge(self, phase: str = "main", **counts) -> None:
        bucket = self.phases.setdefault(phase, dict.fromkeys(ADDITIVE, 0))
        for key, value in counts.items():
            if key not in ADDITIVE:
                raise KeyError(f"unknown ledger counter {key!r}")
            if value < 0:
                raise ValueError(f"negative charge for {key}")
            value = int(value)
            setattr(self, key, getattr(self, key) + value)
            bucket[key] += value

    def gates(self, count: int = 1, phase: str = "main", copies: int = 0) -> None:
        self.charge(phase, gate_applications=count, copy_gate_applications=count * copies)

    def phase_total(self, key: str) -> int:
        return sum(bucket[key] for bucket in self.phases.values())

    def check_conservation(self) -> None:
        for key in ADDITIVE:
            if self.phase_total(key) != getattr(self, key):
                raise AssertionError(f"ledger counter {key} does not match its phases")
        if self.copies_total and self.copies_consumed > self.copies_total:
            raise AssertionError("consumed more copies than were allocated")
        if self.batch_allowance and self.batches_used > self.batch_allowance:
            raise AssertionError("used more batches than allowed")

    def absorb(self, other: "CopyLedger", prefix: str = "") -> None:
        """Add another ledger's charges into this one, phase by phase."""
        for phase, bucket in other.phases.items():
            self.charge(prefix + phase, **{k: v for k, v in bucket.items() if v})
        self.copies_total += other.copies_total

    def snapshot(self) -> dict:
        out = {k: getattr(self, k) for k in ("copies_total", "batch_allowance", "batch_size")}
        out.update({k: getattr(self, k) for k in ADDITIVE})
        return out
