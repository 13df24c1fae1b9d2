"""Experience database with weighted multi-field top-k retrieval.

Each record holds four natural-language fields (state, task, plan, outcome)
and their cached embeddings. Retrieval is exact: every stored record is scored
as a weighted sum of per-field cosine similarities, then sorted by score
descending with ties going to the older (smaller) id.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedding import Embedder, EmbedderConfig, EmbeddingVector
from .errors import StoreError
from .grammar import parse_outcome

logger = logging.getLogger(__name__)

FIELDS = ("state", "task", "plan", "outcome")
SCAN_WARN_THRESHOLD = 100_000


@dataclass(frozen=True)
class RetrievalWeights:
    lambda_state: float = 0.4
    lambda_task: float = 0.4
    lambda_plan: float = 0.2

    def __post_init__(self):
        ws = (self.lambda_state, self.lambda_task, self.lambda_plan)
        if any(w < 0 for w in ws):
            raise ValueError(f"retrieval weights must be nonnegative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one retrieval weight must be positive")

    def scaled(self, c: float) -> "RetrievalWeights":
        return RetrievalWeights(c * self.lambda_state, c * self.lambda_task, c * self.lambda_plan)

    def for_fields(self, fields) -> dict[str, float]:
        table = {"state": self.lambda_state, "task": self.lambda_task, "plan": self.lambda_plan}
        return {f: table[f] for f in fields}


@dataclass(frozen=True)
class ExperienceTuple:
    state_text: str
    task_text: str
    plan_text: str
    outcome_text: str
    success: bool
    state_vec: EmbeddingVector
    task_vec: EmbeddingVector
    plan_vec: EmbeddingVector
    outcome_vec: EmbeddingVector
    created_at: int = 0
    id: int | None = None

    def vector(self, name: str) -> EmbeddingVector:
        return getattr(self, f"{name}_vec")

    def text(self, name: str) -> str:
        return getattr(self, f"{name}_text")

    def failure_text(self) -> str | None:
        """The outcome field of a failed record (e.g. ``failed: requires X``)."""
        if self.success:
            return None
        return parse_outcome(self.outcome_text)[0]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "state": self.state_text,
            "task": self.task_text,
            "plan": self.plan_text,
            "outcome": self.outcome_text,
            "success": self.success,
            "dim": self.state_vec.dim,
            "vectors": {f: self.vector(f).tolist() for f in FIELDS},
        }


@dataclass(frozen=True)
class RetrievalResult:
    tuple_id: int
    score: float
    per_field_sims: Mapping[str, float]
    experience: ExperienceTuple | None = field(default=None, repr=False, compare=False)


def validate_tuple(t: ExperienceTuple, dim: int) -> None:
    for name in ("state", "task", "plan"):
        if not t.text(name).strip():
            raise ValueError(f"{name}_text must be non-empty")
    for name in FIELDS:
        if t.vector(name).dim != dim:
            raise ValueError(f"{name}_vec has dim {t.vector(name).dim}, store dim is {dim}")
    _, success, _ = parse_outcome(t.outcome_text)
    if success != t.success:
        raise ValueError("outcome_text success field disagrees with the success flag")


class ExperienceStore:
    """Append-only experience database.

    Writers (``add``/``save``) are serialised by a lock; readers score a
    snapshot taken under the same lock, so a query never sees a half-inserted
    record.
    """

    def __init__(self, dim: int = 768, embedder: Embedder | None = None, log_path: str | Path | None = None):
        if embedder is not None and embedder.dim != dim:
            raise ValueError(f"embedder dim {embedder.dim} does not match store dim {dim}")
        self.dim = dim
        self.embedder = embedder or Embedder(EmbedderConfig(dim=dim))
        self.log_path = Path(log_path) if log_path is not None else None
        self._lock = threading.Lock()
        self._tuples: list[ExperienceTuple] = []
        self._ids = np.zeros(16, dtype=np.int64)
        self._mats = {f: np.zeros((16, dim)) for f in FIELDS}
        self._norms = {f: np.zeros(16) for f in FIELDS}
        self._next_id = 1

    def __len__(self):
        return len(self._tuples)

    def __iter__(self):
        return iter(list(self._tuples))

    def get(self, tuple_id: int) -> ExperienceTuple:
        for t in self._tuples:
            if t.id == tuple_id:
                return t
        raise KeyError(tuple_id)

    # -- writes ---------------------------------------------------------

    def make_tuple(self, state: str, task: str, plan: str, outcome: str, success: bool,
                   created_at: int = 0) -> ExperienceTuple:
        vecs = self.embedder.embed_many([state, task, plan, outcome])
        return ExperienceTuple(state, task, plan, outcome, success, *vecs, created_at=created_at)

    def record(self, state: str, task: str, plan: str, outcome: str, success: bool,
               created_at: int | None = None) -> int:
        """Embed the four fields and add them as one experience."""
        if created_at is None:
            created_at = len(self._tuples)
        return self.add(self.make_tuple(state, task, plan, outcome, success, created_at))

    def add(self, t: ExperienceTuple) -> int:
        validate_tuple(t, self.dim)
        with self._lock:
            stored = replace(t, id=self._next_id)
            if self.log_path is not None:
                try:
                    with open(self.log_path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(stored.to_record()) + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StoreError(f"could not append to {self.log_path}: {exc}") from exc
            self._append(stored)
            return stored.id

    def _append(self, t: ExperienceTuple) -> None:
        n = len(self._tuples)
        if n == self._ids.shape[0]:
            cap = 2 * n
            self._ids = np.resize(self._ids, cap)
            for f in FIELDS:
                grown = np.zeros((cap, self.dim))
                grown[:n] = self._mats[f][:n]
                self._mats[f] = grown
                self._norms[f] = np.resize(self._norms[f], cap)
        self._ids[n] = t.id
        for f in FIELDS:
            v = t.vector(f).components
            self._mats[f][n] = v
            self._norms[f][n] = np.sqrt(np.dot(v, v))
        self._tuples.append(t)
        self._next_id = t.id + 1
        if len(self._tuples) == SCAN_WARN_THRESHOLD + 1:
            logger.warning("experience store holds over %d records; flat scans will slow down",
                           SCAN_WARN_THRESHOLD)

    # -- reads ----------------------------------------------------------

    def _snapshot(self):
        with self._lock:
            n = len(self._tuples)
            return (n, self._ids[:n], {f: self._mats[f][:n] for f in FIELDS},
                    {f: self._norms[f][:n] for f in FIELDS}, self._tuples[:n])

    def retrieve_by_vectors(self, query: Mapping[str, EmbeddingVector], k: int,
                            weights: Mapping[str, float]) -> list[RetrievalResult]:
        """Top-k by ``sum(weights[f] * cos(stored_f, query_f))`` over the given fields."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        n, ids, mats, norms, tuples = self._snapshot()
        if n == 0:
            return []
        fields = [f for f in ("state", "task", "plan") if f in weights]
        sims = {}
        for f in fields:
            q = query[f].components
            if q.shape != (self.dim,):
                raise ValueError(f"query {f} vector has dim {q.shape[0]}, store dim is {self.dim}")
            qn = np.sqrt(np.dot(q, q))
            denom = norms[f] * qn
            dots = (mats[f] * q).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
            sims[f] = np.clip(s, -1.0, 1.0)
        score = np.zeros(n)
        for f in fields:
            score = score + weights[f] * sims[f]
        order = np.lexsort((ids, -score))[:k]
        return [
            RetrievalResult(int(ids[i]), float(score[i]), {f: float(sims[f][i]) for f in fields}, tuples[i])
            for i in order
        ]

    def _query(self, texts: Mapping[str, str]) -> dict[str, EmbeddingVector]:
        names = list(texts)
        return dict(zip(names, self.embedder.embed_many([texts[n] for n in names])))

    def retrieve_by_state_task(self, state_text: str, task_text: str, k: int,
                               weights: RetrievalWeights) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if len(self) == 0:
            return []
        q = self._query({"state": state_text, "task": task_text})
        return self.retrieve_by_vectors(q, k, weights.for_fields(("state", "task")))

    def retrieve_by_state_task_plan(self, state_text: str, task_text: str, plan_text: str, k: int,
                                    weights: RetrievalWeights) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if len(self) == 0:
            return []
        q = self._query({"state": state_text, "task": task_text, "plan": plan_text})
        return self.retrieve_by_vectors(q, k, weights.for_fields(("state", "task", "plan")))

    # -- persistence ----------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with self._lock:
            lines = [json.dumps(t.to_record()) + "\n" for t in self._tuples]
            try:
                fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.writelines(lines)
                os.replace(tmp, path)
            except OSError as exc:
                raise StoreError(f"could not save store to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path, embedder_config: EmbedderConfig | None = None,
             embedder: Embedder | None = None, log_path: str | Path | None = None) -> "ExperienceStore":
        embedder = embedder or Embedder(embedder_config or EmbedderConfig())
        store = cls(dim=embedder.dim, embedder=embedder, log_path=log_path)
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreError(f"could not read {path}: {exc}") from exc
        lines = raw.split("\n")
        # a file that does not end in a newline has an unterminated last record
        trailing_partial = not raw.endswith("\n") and raw != ""
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            is_last = lineno == len(lines)
            try:
                rec = json.loads(line)
                t = store._from_record(rec)
            except (ValueError, KeyError, TypeError) as exc:
                if is_last and trailing_partial:
                    logger.warning("%s:%d: skipping truncated trailing record", path, lineno)
                    continue
                raise StoreError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if store._tuples and t.id <= store._tuples[-1].id:
                raise StoreError(f"{path}:{lineno}: ids must increase, got {t.id}")
            store._append(t)
        return store

    def _from_record(self, rec: dict) -> ExperienceTuple:
        texts = {f: rec[f] for f in FIELDS}
        for f in FIELDS:
            if not isinstance(texts[f], str):
                raise TypeError(f"field {f} must be a string")
        vectors = rec.get("vectors") or {}
        vecs = {}
        missing = [f for f in FIELDS if f not in vectors]
        if missing:
            for f, v in zip(missing, self.embedder.embed_many([texts[f] for f in missing])):
                vecs[f] = v
        for f in FIELDS:
            if f in vectors:
                vecs[f] = EmbeddingVector(vectors[f])
        success = rec["success"]
        if not isinstance(success, bool):
            raise TypeError("success must be a boolean")
        t = ExperienceTuple(texts["state"], texts["task"], texts["plan"], texts["outcome"], success,
                            vecs["state"], vecs["task"], vecs["plan"], vecs["outcome"],
                            created_at=int(rec.get("created_at", 0)), id=int(rec["id"]))
        validate_tuple(t, self.dim)
        return t

    def copy(self) -> "ExperienceStore":
        """In-memory copy (not bound to any log file)."""
        other = ExperienceStore(self.dim, self.embedder)
        for t in self._snapshot()[4]:
            other._append(t)
        return other
