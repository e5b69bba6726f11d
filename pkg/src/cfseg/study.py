"""Blinded pairwise preference study: session creation with randomized
side assignment, forced-choice recording, and aggregation.

Raters compare two segmentations of the same image without knowing which
method produced which side. Sessions persist as append-only event logs and
are rebuilt from them, so every recorded choice stays auditable."""

from __future__ import annotations

import dataclasses
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io_utils
from .synth_scm import load_manifest

GROUP_NF = "NF"
GROUP_DISEASED = "diseased"
SIDES = ("left", "right")


class SessionCreationError(ValueError):
    pass


class AlreadyAnsweredError(RuntimeError):
    pass


@dataclass
class Trial:
    index: int
    image_id: str
    group: str
    image_path: str
    mask_a_path: str
    mask_b_path: str
    a_side: str  # which side method A is shown on for this trial
    choice: str | None = None
    answered_at: float | None = None

    @property
    def answered(self) -> bool:
        return self.choice is not None

    def side_mask_path(self, side: str) -> str:
        if side not in SIDES:
            raise ValueError(f"side must be left or right, got {side!r}")
        if (side == "left") == (self.a_side == "left"):
            return self.mask_a_path
        return self.mask_b_path

    def chosen_method_key(self) -> str | None:
        """Resolve the recorded side choice to 'a' or 'b'."""
        if self.choice is None:
            return None
        return "a" if self.choice == self.a_side else "b"


@dataclass
class StudySession:
    session_id: str
    rater_id: str
    method_a: str
    method_b: str
    seed: int
    trials: list = field(default_factory=list)
    created_at: float = 0.0

    @property
    def total(self) -> int:
        return len(self.trials)

    @property
    def answered_count(self) -> int:
        return sum(1 for t in self.trials if t.answered)

    @property
    def complete(self) -> bool:
        return self.answered_count == self.total

    def next_unanswered(self, start: int = 0) -> int | None:
        for t in self.trials[start:] + self.trials[:start]:
            if not t.answered:
                return t.index
        return None

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


@dataclass
class PreferenceSummary:
    total_trials: int
    answered: int
    complete: bool
    groups: dict  # group -> {total, answered, counts, percent}
    warning: str | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _load_method_masks(spec) -> dict:
    """A method spec is (name, manifest_path, mask_field); returns the
    id -> mask path mapping it denotes. Results manifests holding several
    arms are disambiguated by the method name."""
    name, manifest_path, mask_field = spec
    records = load_manifest(manifest_path)
    arms = sorted({r["arm"] for r in records if r.get("arm")})
    use_arm = None
    if mask_field == "pred_mask_path" and len(arms) > 1:
        if name not in arms:
            raise SessionCreationError(
                f"method {name!r}: manifest {manifest_path} holds arms {arms}; "
                f"name one of them to pick its masks"
            )
        use_arm = name
    mapping = {}
    for rec in records:
        path = rec.get(mask_field)
        if path is None:
            continue
        if use_arm is not None and rec.get("arm") != use_arm:
            continue
        mapping[rec["id"]] = path
    if not mapping:
        raise SessionCreationError(
            f"method {name!r}: no masks found in {manifest_path} field {mask_field!r}"
        )
    return mapping


def create_session(dataset_manifest, method_a, method_b, n_nf: int, n_diseased: int,
                   seed: int, rater_id: str, ids=None) -> StudySession:
    """Build a blinded session of n_nf + n_diseased trials.

    method_a/method_b are (name, manifest_path, mask_field) triples. With
    explicit ids, every id must have masks from both methods (error lists
    the offenders); with counts, images are drawn seeded from the covered
    pool. Trial order and per-trial side assignment are randomized."""
    dataset = {r["id"]: r for r in load_manifest(dataset_manifest)}
    masks_a = _load_method_masks(method_a)
    masks_b = _load_method_masks(method_b)
    rng = np.random.default_rng(seed)

    if ids is not None:
        missing = sorted(
            i for i in ids if i not in masks_a or i not in masks_b or i not in dataset
        )
        if missing:
            raise SessionCreationError(f"ids missing masks or records: {missing}")
        chosen = list(ids)
    else:
        covered = [i for i in sorted(dataset) if i in masks_a and i in masks_b]
        nf_pool = [i for i in covered if dataset[i]["disease"] == 0]
        dis_pool = [i for i in covered if dataset[i]["disease"] == 1]
        if len(nf_pool) < n_nf or len(dis_pool) < n_diseased:
            raise SessionCreationError(
                f"not enough covered images: have {len(nf_pool)} NF / "
                f"{len(dis_pool)} diseased, need {n_nf}/{n_diseased}"
            )
        chosen = [str(i) for i in rng.choice(nf_pool, size=n_nf, replace=False)] + [
            str(i) for i in rng.choice(dis_pool, size=n_diseased, replace=False)
        ]
    rng.shuffle(chosen)

    trials = []
    for k, sid in enumerate(chosen):
        rec = dataset[sid]
        trials.append(
            Trial(
                index=k,
                image_id=sid,
                group=GROUP_DISEASED if rec["disease"] == 1 else GROUP_NF,
                image_path=rec["image_path"],
                mask_a_path=masks_a[sid],
                mask_b_path=masks_b[sid],
                a_side="left" if rng.random() < 0.5 else "right",
            )
        )
    return StudySession(
        session_id=uuid.uuid4().hex[:12],
        rater_id=rater_id,
        method_a=method_a[0],
        method_b=method_b[0],
        seed=seed,
        trials=trials,
        created_at=time.time(),
    )


def record_choice(session: StudySession, index: int, choice: str) -> Trial:
    """Store a left/right choice; each trial accepts exactly one answer."""
    if choice not in SIDES:
        raise ValueError(f"choice must be left or right, got {choice!r}")
    if not 0 <= index < session.total:
        raise IndexError(f"trial {index} out of range (0..{session.total - 1})")
    trial = session.trials[index]
    if trial.answered:
        raise AlreadyAnsweredError(f"trial {index} already answered ({trial.choice})")
    trial.choice = choice
    trial.answered_at = time.time()
    return trial


def summarize(session: StudySession) -> PreferenceSummary:
    """Per-group preference percentages over answered trials. Partial or
    empty sessions come back flagged; the two percentages are forced to sum
    to exactly 100 (forced-choice design)."""
    groups = {}
    for group in (GROUP_NF, GROUP_DISEASED):
        trials = [t for t in session.trials if t.group == group]
        answered = [t for t in trials if t.answered]
        counts = {session.method_a: 0, session.method_b: 0}
        for t in answered:
            key = t.chosen_method_key()
            counts[session.method_a if key == "a" else session.method_b] += 1
        entry = {
            "total": len(trials),
            "answered": len(answered),
            "counts": counts,
            "percent": {},
        }
        if answered:
            pct_a = 100.0 * counts[session.method_a] / len(answered)
            entry["percent"] = {
                session.method_a: pct_a,
                session.method_b: 100.0 - pct_a,
            }
        groups[group] = entry
    answered = session.answered_count
    warning = None
    if answered == 0:
        warning = "no trials answered"
    elif not session.complete:
        warning = f"partial: {answered}/{session.total} answered"
    return PreferenceSummary(
        total_trials=session.total,
        answered=answered,
        complete=session.complete,
        groups=groups,
        warning=warning,
    )


# ---------------------------------------------------------------------------
# persistence: append-only event log per session
# ---------------------------------------------------------------------------


class StudyStore:
    """Directory of sessions, each an events.jsonl replayed on load. Choice
    recording is serialized per session."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._cache: dict[str, StudySession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()

    def _lock(self, session_id) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(session_id, threading.Lock())

    def _events_path(self, session_id) -> Path:
        return self.root / session_id / "events.jsonl"

    def add(self, session: StudySession) -> None:
        path = self._events_path(session.session_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        io_utils.write_jsonl(path, [{"type": "created", "session": session.as_dict()}])
        self._cache[session.session_id] = session

    def get(self, session_id) -> StudySession:
        if session_id in self._cache:
            return self._cache[session_id]
        path = self._events_path(session_id)
        if not path.exists():
            raise KeyError(f"unknown session {session_id!r}")
        session = None
        for event in io_utils.read_jsonl(path):
            if event["type"] == "created":
                data = event["session"]
                trials = [Trial(**t) for t in data.pop("trials")]
                session = StudySession(**data, trials=trials)
            elif event["type"] == "choice":
                t = session.trials[event["index"]]
                t.choice = event["choice"]
                t.answered_at = event["at"]
        self._cache[session_id] = session
        return session

    def list_ids(self) -> list:
        return sorted(p.parent.name for p in self.root.glob("*/events.jsonl"))

    def record_choice(self, session_id, index: int, choice: str) -> Trial:
        with self._lock(session_id):
            session = self.get(session_id)
            trial = record_choice(session, index, choice)
            io_utils.append_jsonl(
                self._events_path(session_id),
                {"type": "choice", "index": index, "choice": choice, "at": trial.answered_at},
            )
            return trial
