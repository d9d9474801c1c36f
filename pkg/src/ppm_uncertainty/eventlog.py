"""Event logs: parsing, bias-free temporal split, feature engineering and
prefix extraction.

Input CSV has a header with at least ``case_id,activity,timestamp`` (names can
be remapped) and optionally ``outcome``.  Timestamps are ISO-8601; naive
values are taken as UTC.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError, EmptySplitError, RowError, SchemaError
from .nets import EncodedBatch
from .tensor import RngStream

SECONDS_PER_DAY = 86400.0
PAD_ID = 0
OOV_ID = 1
MAX_LEN = 10

DEFAULT_SCHEMA = {"case_id": "case_id", "activity": "activity", "timestamp": "timestamp", "outcome": "outcome"}
_TRUE = {"1", "true", "yes", "y", "t", "approved"}
_FALSE = {"0", "false", "no", "n", "f", "declined", "rejected"}


def ceil_fraction(fraction: float, n: int) -> int:
    """ceil(fraction·n), immune to float noise such as 0.1·30 = 3.0000000000000004."""
    return math.ceil(round(fraction * n, 9))


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _days(delta) -> float:
    return delta.total_seconds() / SECONDS_PER_DAY


@dataclass(frozen=True)
class Event:
    case_id: str
    activity: str
    timestamp: datetime
    elapsed_days: float = 0.0


@dataclass(frozen=True)
class Case:
    case_id: str
    events: tuple
    outcome: Optional[int] = None

    @classmethod
    def from_events(cls, case_id: str, events: Iterable[Event], outcome: Optional[int] = None) -> "Case":
        ordered = sorted(events, key=lambda e: e.timestamp)  # stable for ties
        if not ordered:
            raise DataError(f"case {case_id!r} has no events")
        t0 = ordered[0].timestamp
        evs = tuple(replace(e, elapsed_days=_days(e.timestamp - t0)) for e in ordered)
        return cls(case_id, evs, outcome)

    @property
    def start(self) -> datetime:
        return self.events[0].timestamp

    @property
    def end(self) -> datetime:
        return self.events[-1].timestamp

    @property
    def duration_days(self) -> float:
        return self.events[-1].elapsed_days

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class EventLog:
    cases: tuple
    activity_vocab: Optional[Mapping[str, int]] = None
    elapsed_stats: Optional[tuple] = None  # (mean, std) fit on training events

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        ids = [c.case_id for c in self.cases]
        if len(set(ids)) != len(ids):
            raise DataError("case ids must be unique within an event log")

    def __len__(self) -> int:
        return len(self.cases)

    @property
    def n_events(self) -> int:
        return sum(len(c) for c in self.cases)

    def activities(self) -> list[str]:
        return sorted({e.activity for c in self.cases for e in c.events})

    def with_cases(self, cases) -> "EventLog":
        return EventLog(tuple(cases), self.activity_vocab, self.elapsed_stats)

    def encode(self, activity: str) -> int:
        if self.activity_vocab is None:
            raise DataError("event log has no activity vocabulary; run engineer_features first")
        return self.activity_vocab.get(activity, OOV_ID)


def _parse_outcome(text: str) -> Optional[int]:
    v = text.strip().lower()
    if v == "":
        return None
    if v in _TRUE:
        return 1
    if v in _FALSE:
        return 0
    raise ValueError(f"unrecognised outcome value {text!r}")


def parse_csv(source: Union[str, Path, IO], schema: Optional[Mapping[str, str]] = None,
              max_bad_rows: int = 0) -> EventLog:
    """Read an event log CSV.

    ``schema`` maps the canonical names (case_id, activity, timestamp,
    outcome) to the file's column names.  Rows that fail to parse are
    collected with their line numbers; more than ``max_bad_rows`` of them
    raises :class:`RowError`.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return parse_csv(fh, schema, max_bad_rows)
    raw = source.read()
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [cols[k] for k in ("case_id", "activity", "timestamp") if cols[k] not in header]
    if missing:
        raise SchemaError(f"missing required column(s) {missing}; header is {header}")
    has_outcome = cols["outcome"] in header

    events: dict[str, list[Event]] = {}
    outcomes: dict[str, Optional[int]] = {}
    bad: list[tuple[int, str]] = []
    for row in reader:
        line = reader.line_num
        try:
            case_id = row[cols["case_id"]]
            activity = row[cols["activity"]]
            if case_id is None or activity is None or case_id.strip() == "":
                raise ValueError("empty case id or missing fields")
            ts = parse_timestamp(row[cols["timestamp"]] or "")
            outcome = _parse_outcome(row[cols["outcome"]] or "") if has_outcome else None
        except (ValueError, TypeError) as exc:
            bad.append((line, str(exc)))
            continue
        events.setdefault(case_id, []).append(Event(case_id, activity, ts))
        if outcome is not None:
            outcomes[case_id] = outcome
    if len(bad) > max_bad_rows:
        raise RowError(bad)
    if bad:
        warnings.warn(f"skipped {len(bad)} malformed row(s): {bad[:5]}")
    cases = [Case.from_events(cid, evs, outcomes.get(cid)) for cid, evs in events.items()]
    cases.sort(key=lambda c: (c.start, c.case_id))
    return EventLog(tuple(cases))


def write_csv(log: EventLog, dest: Union[str, Path, IO]) -> None:
    """Write a log in the input schema; ``outcome`` is included if any case has one."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            return write_csv(log, fh)
    with_outcome = any(c.outcome is not None for c in log.cases)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["case_id", "activity", "timestamp"] + (["outcome"] if with_outcome else []))
    for case in log.cases:
        for e in case.events:
            row = [case.case_id, e.activity, e.timestamp.isoformat()]
            if with_outcome:
                row.append("" if case.outcome is None else str(case.outcome))
            w.writerow(row)


@dataclass(frozen=True)
class SplitResult:
    train: EventLog
    test: EventLog
    removed_overlap: int
    removed_debias: int


def temporal_split(log: EventLog, test_fraction: float = 0.2, debias: bool = True) -> SplitResult:
    """Chronological train/test split without leakage.

    The most recent ``ceil(test_fraction·n)`` cases by start time form the test
    set.  Training cases still running when the first test case starts are
    dropped (overlap).  With ``debias``, training cases longer than the test
    period span (earliest test start to the last timestamp in the log) are
    dropped too, since no test case can be observed for that long.
    """
    if len(log) == 0:
        raise EmptySplitError("cannot split an empty event log")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    ordered = sorted(log.cases, key=lambda c: (c.start, c.case_id))
    n_test = ceil_fraction(test_fraction, len(ordered))
    test_cases = ordered[len(ordered) - n_test:]
    candidates = ordered[:len(ordered) - n_test]
    first_test_start = test_cases[0].start

    train_cases = [c for c in candidates if c.end <= first_test_start]
    removed_overlap = len(candidates) - len(train_cases)

    removed_debias = 0
    if debias and train_cases:
        log_end = max(c.end for c in ordered)
        span = _days(log_end - first_test_start)
        kept = [c for c in train_cases if c.duration_days <= span]
        removed_debias = len(train_cases) - len(kept)
        train_cases = kept

    if not train_cases or not test_cases:
        raise EmptySplitError(
            f"split left {len(train_cases)} training and {len(test_cases)} test cases "
            f"(removed {removed_overlap} overlapping, {removed_debias} for debiasing)"
        )
    return SplitResult(log.with_cases(train_cases), log.with_cases(test_cases), removed_overlap, removed_debias)


def engineer_features(train: EventLog, other: EventLog) -> tuple[EventLog, EventLog]:
    """Fit the activity vocabulary and elapsed-time standardization on ``train``.

    Ids 0 and 1 are reserved for padding and unseen activities; the vocabulary
    is not capped.  Both returned logs carry the training-fit encoders.
    """
    if len(train) == 0:
        raise DataError("engineer_features needs a nonempty training log")
    vocab = {label: i + 2 for i, label in enumerate(train.activities())}
    elapsed = np.array([e.elapsed_days for c in train.cases for e in c.events])
    mean, std = float(elapsed.mean()), float(elapsed.std())
    if not std > 0:
        warnings.warn("elapsed time has zero variance on the training log; using std = 1")
        std = 1.0
    stats = (mean, std)
    return (EventLog(train.cases, vocab, stats), EventLog(other.cases, vocab, stats))


@dataclass(frozen=True)
class PrefixSample:
    case_id: str
    prefix_len: int
    activity_ids: tuple
    elapsed_std: tuple
    target_remaining_days: float
    prefix_duration_days: float
    target_outcome: Optional[int] = None
    # full encoded prefix, untruncated; used by the transition-system baseline
    history: tuple = field(default=(), compare=False)

    @property
    def case_duration_days(self) -> float:
        return self.prefix_duration_days + self.target_remaining_days


def extract_prefixes(log: EventLog, max_len: int = MAX_LEN, task: str = "regression") -> list[PrefixSample]:
    """Every prefix 1..n of every case, left-padded / truncated to ``max_len``
    (keeping the most recent events)."""
    if log.activity_vocab is None or log.elapsed_stats is None:
        raise DataError("extract_prefixes needs an engineered log (see engineer_features)")
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    mean, std = log.elapsed_stats
    samples = []
    for case in log.cases:
        if task == "classification" and case.outcome is None:
            raise DataError(f"case {case.case_id!r} has no outcome for the classification task")
        ids = [log.encode(e.activity) for e in case.events]
        el = [(e.elapsed_days - mean) / std for e in case.events]
        duration = case.duration_days
        for k in range(1, len(case) + 1):
            keep = min(k, max_len)
            pad = max_len - keep
            prefix_duration = case.events[k - 1].elapsed_days
            samples.append(PrefixSample(
                case_id=case.case_id,
                prefix_len=k,
                activity_ids=(PAD_ID,) * pad + tuple(ids[k - keep:k]),
                elapsed_std=(0.0,) * pad + tuple(el[k - keep:k]),
                target_remaining_days=duration - prefix_duration,
                prefix_duration_days=prefix_duration,
                target_outcome=case.outcome,
                history=tuple(ids[:k]),
            ))
    return samples


def encode_batch(samples: Sequence[PrefixSample]) -> EncodedBatch:
    if not samples:
        return EncodedBatch(np.zeros((0, MAX_LEN), dtype=np.int64), np.zeros((0, MAX_LEN)))
    return EncodedBatch(
        activity_ids=np.array([s.activity_ids for s in samples], dtype=np.int64),
        elapsed=np.array([s.elapsed_std for s in samples], dtype=np.float64),
    )


def targets(samples: Sequence[PrefixSample], task: str = "regression") -> np.ndarray:
    if task == "regression":
        return np.array([s.target_remaining_days for s in samples], dtype=np.float64)
    return np.array([s.target_outcome for s in samples], dtype=np.int64)


def subsample_fraction(train: EventLog, fraction: float, seed: int) -> EventLog:
    """ceil(fraction·n) cases drawn uniformly without replacement, original order kept."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(train)
    k = ceil_fraction(fraction, n)
    if k >= n:
        return train
    chosen = np.sort(RngStream(seed, "subsample").choice(n, size=k, replace=False))
    return train.with_cases(train.cases[i] for i in chosen)


@dataclass(frozen=True)
class DatasetStats:
    n_cases: int
    n_events: int
    avg_case_days: float
    avg_events_per_case: float
    pct_positive_outcome: Optional[float]
    n_activity_levels: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dataset_stats(log: EventLog) -> DatasetStats:
    n = len(log)
    outcomes = [c.outcome for c in log.cases if c.outcome is not None]
    return DatasetStats(
        n_cases=n,
        n_events=log.n_events,
        avg_case_days=float(np.mean([c.duration_days for c in log.cases])) if n else 0.0,
        avg_events_per_case=log.n_events / n if n else 0.0,
        pct_positive_outcome=100.0 * sum(outcomes) / len(outcomes) if outcomes else None,
        n_activity_levels=len(log.activities()),
    )


# ---------------------------------------------------------------------------
# prefix dataset files


def prefix_columns(max_len: int = MAX_LEN) -> list[str]:
    return (["case_id", "prefix_len"]
            + [f"activity_{i}" for i in range(max_len)]
            + [f"elapsed_{i}" for i in range(max_len)]
            + ["target_remaining", "target_outcome", "prefix_duration"])


def write_prefixes(samples: Sequence[PrefixSample], dest: Union[str, Path, IO], max_len: int = MAX_LEN) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            return write_prefixes(samples, fh, max_len)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(prefix_columns(max_len))
    for s in samples:
        w.writerow([s.case_id, s.prefix_len, *s.activity_ids, *(repr(v) for v in s.elapsed_std),
                    repr(s.target_remaining_days),
                    "" if s.target_outcome is None else s.target_outcome,
                    repr(s.prefix_duration_days)])


def read_prefixes(source: Union[str, Path, IO]) -> list[PrefixSample]:
    """Inverse of :func:`write_prefixes`; ``history`` is rebuilt from the (truncated) ids."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_prefixes(fh)
    reader = csv.reader(source)
    header = next(reader)
    max_len = sum(1 for h in header if h.startswith("activity_"))
    samples = []
    for row in reader:
        ids = tuple(int(v) for v in row[2:2 + max_len])
        samples.append(PrefixSample(
            case_id=row[0],
            prefix_len=int(row[1]),
            activity_ids=ids,
            elapsed_std=tuple(float(v) for v in row[2 + max_len:2 + 2 * max_len]),
            target_remaining_days=float(row[-3]),
            target_outcome=None if row[-2] == "" else int(row[-2]),
            prefix_duration_days=float(row[-1]),
            history=tuple(i for i in ids if i != PAD_ID),
        ))
    return samples


def write_stats(stats: Mapping[str, DatasetStats], dest: Union[str, Path]) -> None:
    Path(dest).write_text(json.dumps({k: v.to_dict() for k, v in stats.items()}, indent=2, sort_keys=True) + "\n")
