"""Blinded real-vs-generated study engine.

A session is a balanced, seed-shuffled deck of trials. The client-facing
payload for a trial carries only an index, re-encoded PNG bytes, and a
progress counter: no truth label, no paths, no cohort tags, no ids. Truth
stays server-side in the session and its append-only event log, which lets a
crashed study resume losslessly. Responses are forced-choice and final.
"""
from __future__ import annotations

import io
import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .dataio import DatasetManifest
from .errors import (DuplicateResponse, PoolTooSmall, SessionComplete,
                     SessionIncomplete, UnknownSession, UnknownTrial)


class Truth(str, Enum):
    REAL = "real"
    GENERATED = "generated"


class SessionState(str, Enum):
    OPEN = "open"
    COMPLETE = "complete"


@dataclass
class PoolItem:
    id: str
    path: str


def pool_from_manifest(manifest: DatasetManifest) -> list[PoolItem]:
    if manifest.root is None:
        raise ValueError("manifest needs a root directory")
    return [PoolItem(id=e.image_id, path=str(manifest.root / e.image))
            for e in manifest.entries]


@dataclass
class Trial:
    trial_index: int
    image_id: str
    truth: Truth
    image_path: str  # server-side only, never serialized to clients


@dataclass
class TrialPayload:
    """Everything a blinded client may see about one trial."""
    trial_index: int
    image_png: bytes
    answered: int
    total: int

    def to_client_dict(self, image_b64: str) -> dict:
        return {
            "trial_index": self.trial_index,
            "image": image_b64,
            "progress": {"answered": self.answered, "total": self.total},
        }


class _Done:
    def __repr__(self):
        return "DONE"


DONE = _Done()


@dataclass
class StudySession:
    session_id: str
    trials: list[Trial]
    seed: int
    responses: dict = field(default_factory=dict)  # trial_index -> record
    state: SessionState = SessionState.OPEN

    @property
    def n_trials(self) -> int:
        return len(self.trials)


def create_session(real_pool: list[PoolItem], gen_pool: list[PoolItem],
                   n_per_class: int, seed: int) -> StudySession:
    """Balanced deck: n_per_class from each pool, shuffled by seed."""
    if len(real_pool) < n_per_class or len(gen_pool) < n_per_class:
        raise PoolTooSmall(
            f"pools ({len(real_pool)} real, {len(gen_pool)} generated) "
            f"cannot supply {n_per_class} per class")
    rng = np.random.default_rng(seed)
    picks = []
    for pool, truth in ((real_pool, Truth.REAL), (gen_pool, Truth.GENERATED)):
        chosen = rng.choice(len(pool), size=n_per_class, replace=False)
        picks.extend((pool[int(i)], truth) for i in chosen)
    order = rng.permutation(len(picks))
    trials = [
        Trial(trial_index=pos, image_id=picks[int(i)][0].id,
              truth=picks[int(i)][1], image_path=picks[int(i)][0].path)
        for pos, i in enumerate(order)
    ]
    return StudySession(session_id=secrets.token_hex(8), trials=trials, seed=seed)


def _reencode_png(path: str) -> bytes:
    """Re-encode pixels only; strips any metadata that could unblind a reader."""
    with Image.open(path) as im:
        clean = Image.new("RGB", im.size)
        clean.paste(im.convert("RGB"))
    buf = io.BytesIO()
    clean.save(buf, format="PNG")
    return buf.getvalue()


def next_trial(session: StudySession):
    """Lowest-index unanswered trial, label-free; DONE once all are answered."""
    if session.state == SessionState.COMPLETE:
        raise SessionComplete(f"session {session.session_id} already complete")
    for trial in session.trials:
        if trial.trial_index not in session.responses:
            return TrialPayload(
                trial_index=trial.trial_index,
                image_png=_reencode_png(trial.image_path),
                answered=len(session.responses),
                total=session.n_trials,
            )
    session.state = SessionState.COMPLETE
    return DONE


def submit_response(session: StudySession, trial_index: int, answer) -> int:
    """Record one forced-choice answer; resubmission is rejected."""
    if session.state == SessionState.COMPLETE:
        raise SessionComplete(f"session {session.session_id} already complete")
    if not isinstance(trial_index, int) or not 0 <= trial_index < session.n_trials:
        raise UnknownTrial(f"trial {trial_index} not in session "
                           f"of {session.n_trials} trials")
    if trial_index in session.responses:
        raise DuplicateResponse(f"trial {trial_index} already answered")
    session.responses[trial_index] = {
        "answer": Truth(answer),
        "timestamp": time.time(),
    }
    return len(session.responses)


@dataclass
class StudyReport:
    accuracy: float
    per_class: dict
    n_trials: int
    confusion: dict  # truth -> answer -> count

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "n_trials": self.n_trials,
            "confusion": self.confusion,
        }


def score_session(session: StudySession) -> StudyReport:
    if session.state != SessionState.COMPLETE:
        if len(session.responses) == session.n_trials:
            session.state = SessionState.COMPLETE
        else:
            raise SessionIncomplete(
                f"{len(session.responses)}/{session.n_trials} trials answered")
    conf = {t.value: {a.value: 0 for a in Truth} for t in Truth}
    correct = 0
    for trial in session.trials:
        answer = session.responses[trial.trial_index]["answer"]
        conf[trial.truth.value][answer.value] += 1
        if answer == trial.truth:
            correct += 1
    class_totals = {t.value: sum(conf[t.value].values()) for t in Truth}
    per_class = {
        "real_correct_rate": conf["real"]["real"] / max(1, class_totals["real"]),
        "generated_correct_rate":
            conf["generated"]["generated"] / max(1, class_totals["generated"]),
    }
    return StudyReport(accuracy=correct / session.n_trials, per_class=per_class,
                       n_trials=session.n_trials, confusion=conf)


class SessionStore:
    """Append-only JSON-lines event log per session; replay on load.

    Submissions are serialized store-wide, which subsumes the per-session
    single-responder requirement.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._cache: dict[str, StudySession] = {}

    def _log_path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict):
        with self._log_path(session_id).open("a") as fh:
            fh.write(json.dumps(event) + "\n")

    def create(self, real_pool, gen_pool, n_per_class: int, seed: int) -> StudySession:
        with self._lock:
            session = create_session(real_pool, gen_pool, n_per_class, seed)
            self._append(session.session_id, {
                "event": "create",
                "session_id": session.session_id,
                "seed": seed,
                "n_per_class": n_per_class,
                "trials": [
                    {"trial_index": t.trial_index, "image_id": t.image_id,
                     "truth": t.truth.value, "image_path": t.image_path}
                    for t in session.trials
                ],
            })
            self._cache[session.session_id] = session
            return session

    def get(self, session_id: str) -> StudySession:
        with self._lock:
            return self._get_locked(session_id)

    def _get_locked(self, session_id: str) -> StudySession:
        if session_id in self._cache:
            return self._cache[session_id]
        path = self._log_path(session_id)
        if not path.exists():
            raise UnknownSession(f"no session {session_id}")
        session = self._replay(path)
        self._cache[session_id] = session
        return session

    @staticmethod
    def _replay(path: Path) -> StudySession:
        session = None
        for line in path.read_text().splitlines():
            event = json.loads(line)
            if event["event"] == "create":
                session = StudySession(
                    session_id=event["session_id"],
                    seed=event["seed"],
                    trials=[Trial(trial_index=t["trial_index"],
                                  image_id=t["image_id"],
                                  truth=Truth(t["truth"]),
                                  image_path=t["image_path"])
                            for t in event["trials"]],
                )
            elif event["event"] == "response":
                session.responses[event["trial_index"]] = {
                    "answer": Truth(event["answer"]),
                    "timestamp": event["timestamp"],
                }
            elif event["event"] == "complete":
                session.state = SessionState.COMPLETE
        if session is None:
            raise UnknownSession(f"{path}: no create event")
        return session

    def next_trial(self, session_id: str):
        with self._lock:
            session = self._get_locked(session_id)
            was_open = session.state == SessionState.OPEN
            result = next_trial(session)
            if result is DONE and was_open:
                self._append(session_id, {"event": "complete",
                                          "timestamp": time.time()})
            return result

    def submit(self, session_id: str, trial_index: int, answer) -> int:
        with self._lock:
            session = self._get_locked(session_id)
            count = submit_response(session, trial_index, answer)
            record = session.responses[trial_index]
            self._append(session_id, {
                "event": "response",
                "trial_index": trial_index,
                "answer": record["answer"].value,
                "timestamp": record["timestamp"],
            })
            return count

    def report(self, session_id: str) -> StudyReport:
        with self._lock:
            session = self._get_locked(session_id)
            was_open = session.state == SessionState.OPEN
            report = score_session(session)
            if was_open and session.state == SessionState.COMPLETE:
                self._append(session_id, {"event": "complete",
                                          "timestamp": time.time()})
            return report
