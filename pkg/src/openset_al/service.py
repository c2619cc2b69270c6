"""Interactive annotation service: serve queried samples over HTTP, accept
per-sample labels, advance rounds, report metrics.

Sessions are journaled as write-ahead JSON-lines; because the engine is
deterministic given (config, data, seed, labels), replaying a journal after
a restart reconstructs the exact session state. One mutating request per
session at a time; sessions are independent.
"""

import json
import logging
import mimetypes
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import FileResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .bundle import ExperimentBundle, load_bundle
from .data import LabelState
from .errors import ConfigError, IngestionError, OpensetALError
from .numerics import l2_normalize_rows
from .orchestrator import ActiveLearningEngine, OracleLabeler

logger = logging.getLogger(__name__)

AWAITING = "awaiting_labels"
TRAINING = "training"
DONE = "done"


def parse_label_value(value: str, id_count: int) -> LabelState:
    """Parse the wire format: ``class:<c>`` or ``non-target``."""
    if value == "non-target":
        return LabelState.non_target()
    if value.startswith("class:"):
        try:
            c = int(value.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"malformed class index in {value!r}")
        if not (0 <= c < id_count):
            raise ValueError(f"class index {c} outside [0, {id_count})")
        return LabelState.id_class(c)
    raise ValueError(f"expected 'class:<c>' or 'non-target', got {value!r}")


def label_to_value(state: LabelState) -> str:
    return f"class:{state.class_index}" if state.is_id else "non-target"


class Session:
    def __init__(
        self,
        session_id: str,
        bundle: ExperimentBundle,
        config_ref: str,
        data_ref: str,
        oracle: bool,
        journal_path: Path | None,
    ):
        self.session_id = session_id
        self.bundle = bundle
        self.config_ref = config_ref
        self.data_ref = data_ref
        self.oracle = oracle
        self.journal_path = journal_path
        self.lock = threading.Lock()
        self.state = AWAITING
        self.engine = ActiveLearningEngine(
            bundle.config,
            bundle.catalog,
            bundle.train,
            bundle.prompts,
            strategy="openpath",
            test_dataset=bundle.test,
        )
        self.received: dict[str, LabelState] = {}
        self._scatter = self._project_2d()
        self.engine.pending_query()
        if oracle:
            self._auto_label()

    # -- geometry for the UI fallback thumbnails -----------------------------

    def _project_2d(self) -> np.ndarray:
        emb = l2_normalize_rows(self.bundle.train.embeddings)
        centered = emb - emb.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        coords = centered @ vt[:2].T
        peak = np.max(np.abs(coords)) or 1.0
        return coords / peak

    def coords_of(self, sample_id: str) -> list[float]:
        row = self._scatter[self.bundle.train.index_of(sample_id)]
        return [round(float(row[0]), 4), round(float(row[1]), 4)]

    def pool_scatter(self, limit: int = 400) -> list[list[float]]:
        n = self._scatter.shape[0]
        step = max(1, n // limit)
        return [
            [round(float(x), 4), round(float(y), 4)] for x, y in self._scatter[::step]
        ]

    # -- journaling ------------------------------------------------------------

    def journal(self, event: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    # -- labeling state ----------------------------------------------------------

    def _auto_label(self) -> None:
        labeler = OracleLabeler(self.bundle.train, self.bundle.catalog.id_count)
        for sid, state in labeler(self.engine.pending_query()).items():
            self.received[sid] = state
            self.journal({"event": "label", "sid": sid, "value": label_to_value(state)})

    def pending_ids(self) -> tuple[str, ...]:
        return self.engine.pending_query()

    def remaining(self) -> int:
        return sum(1 for sid in self.pending_ids() if sid not in self.received)

    def sample_descriptor(self, sid: str) -> dict:
        record = self.bundle.train.record(sid)
        return {
            "sample_id": sid,
            "has_image": record.image_ref is not None,
            "coords": self.coords_of(sid),
            "label": label_to_value(self.received[sid]) if sid in self.received else None,
        }

    def query_payload(self) -> dict:
        pending = self.pending_ids()
        return {
            "session_id": self.session_id,
            "state": self.state,
            "round": self.engine.next_round,
            "remaining": self.remaining(),
            "query": [self.sample_descriptor(sid) for sid in pending],
        }

    def metrics_payload(self) -> dict:
        return {
            "session_id": self.session_id,
            "state": self.state,
            "rounds": [r.to_json_dict() for r in self.engine.records],
        }

    def validate_label(self, sid: str, value: str) -> LabelState:
        if self.state != AWAITING:
            raise HTTPException(409, "session is not awaiting labels")
        if sid not in set(self.pending_ids()):
            if sid in self.engine.pool.labeled or sid in self.received:
                raise HTTPException(409, f"sample {sid} is already labeled")
            raise HTTPException(404, f"sample {sid} is not part of the pending query")
        if sid in self.received:
            raise HTTPException(409, f"sample {sid} is already labeled")
        try:
            return parse_label_value(value, self.bundle.catalog.id_count)
        except ValueError as err:
            raise HTTPException(422, str(err))

    def add_labels(self, labels: dict[str, str]) -> None:
        """Validate the whole map first so a bad entry rejects it atomically."""
        parsed = {sid: self.validate_label(sid, value) for sid, value in labels.items()}
        if len(parsed) != len(labels):
            raise HTTPException(422, "duplicate sample ids in label map")
        for sid, value in labels.items():
            self.journal({"event": "label", "sid": sid, "value": value})
            self.received[sid] = parsed[sid]

    def advance(self) -> dict:
        if self.state == DONE:
            raise HTTPException(409, "session is already done")
        if self.remaining() > 0:
            raise HTTPException(409, f"{self.remaining()} samples still unlabeled")
        self.journal({"event": "advance"})
        self.state = TRAINING
        try:
            pending = self.pending_ids()
            labels = {sid: self.received[sid] for sid in pending}
            self.engine.commit(labels)
            self.received = {}
        except OpensetALError as err:
            self.state = AWAITING
            raise HTTPException(409, str(err))
        if self.engine.is_done:
            self.state = DONE
            return {
                "session_id": self.session_id,
                "state": self.state,
                "report": self.metrics_payload()["rounds"],
            }
        self.state = AWAITING
        self.engine.pending_query()
        if self.oracle:
            self._auto_label()
        return self.query_payload()


class SessionStore:
    def __init__(self, default_config: str, default_data: str, journal_dir: Path | None):
        self.default_config = default_config
        self.default_data = default_data
        self.journal_dir = journal_dir
        self.sessions: dict[str, Session] = {}
        if journal_dir is not None:
            journal_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    def _journal_path(self, session_id: str) -> Path | None:
        if self.journal_dir is None:
            return None
        return self.journal_dir / f"{session_id}.jsonl"

    def create(self, config_ref: str | None, data_ref: str | None, oracle: bool) -> Session:
        config_path = config_ref or self.default_config
        data_path = data_ref or self.default_data
        if not Path(data_path).exists():
            raise HTTPException(409, f"data directory {data_path} does not exist")
        try:
            bundle = load_bundle(config_path, data_path)
        except ConfigError as err:
            raise HTTPException(400, str(err))
        except (IngestionError, FileNotFoundError) as err:
            raise HTTPException(409, str(err))
        if bundle.config.budget_L > bundle.train.size:
            raise HTTPException(
                400,
                f"budget_L={bundle.config.budget_L} exceeds the pool size "
                f"{bundle.train.size}; lower the budget or add data",
            )
        session_id = uuid.uuid4().hex[:12]
        session = Session(
            session_id,
            bundle,
            config_ref=str(config_path),
            data_ref=str(data_path),
            oracle=oracle,
            journal_path=self._journal_path(session_id),
        )
        session.journal(
            {
                "event": "created",
                "session_id": session_id,
                "config": str(config_path),
                "data": str(data_path),
                "oracle": oracle,
            }
        )
        self.sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return session

    def _recover(self) -> None:
        for path in sorted(self.journal_dir.glob("*.jsonl")):
            try:
                self._replay(path)
            except Exception:
                logger.exception("could not recover session journal %s", path)

    def _replay(self, path: Path) -> None:
        events = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if not events or events[0].get("event") != "created":
            raise IngestionError(f"{path}: journal does not start with a created event")
        created = events[0]
        bundle = load_bundle(created["config"], created["data"])
        session = Session(
            created["session_id"],
            bundle,
            config_ref=created["config"],
            data_ref=created["data"],
            oracle=False,  # replay applies journaled labels directly
            journal_path=None,  # do not re-journal while replaying
        )
        for event in events[1:]:
            if event["event"] == "label":
                session.received[event["sid"]] = parse_label_value(
                    event["value"], bundle.catalog.id_count
                )
            elif event["event"] == "advance":
                session.advance()
        session.oracle = created["oracle"]
        session.journal_path = path
        self.sessions[created["session_id"]] = session
        logger.info("recovered session %s from %s", created["session_id"], path)


class CreateSessionRequest(BaseModel):
    config: str | None = None
    data: str | None = None
    oracle: bool = False


def create_app(
    config_path,
    data_dir,
    patches_dir=None,
    journal_dir=None,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="openset-al annotation service")
    journal = Path(journal_dir) if journal_dir else Path(data_dir) / "sessions"
    store = SessionStore(str(config_path), str(data_dir), journal)
    patches = Path(patches_dir) if patches_dir else None
    app.state.store = store

    @app.post("/sessions", status_code=201)
    def create_session(request: CreateSessionRequest):
        session = store.create(request.config, request.data, request.oracle)
        with session.lock:
            payload = session.query_payload()
            payload["budget"] = session.bundle.config.budget_L
            payload["rounds"] = session.bundle.config.rounds_R
            payload["id_class_names"] = list(session.bundle.catalog.id_class_names)
            payload["pool_scatter"] = session.pool_scatter()
            return payload

    @app.get("/sessions/{session_id}/query")
    def get_query(session_id: str):
        session = store.get(session_id)
        with session.lock:
            if session.state == DONE:
                return session.metrics_payload()
            return session.query_payload()

    @app.post("/sessions/{session_id}/labels")
    def post_labels(session_id: str, labels: dict[str, str] = Body(...)):
        session = store.get(session_id)
        with session.lock:
            session.add_labels(labels)
            return {"remaining": session.remaining()}

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.advance()

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.metrics_payload()

    @app.get("/sessions/{session_id}/samples/{sample_id}/image")
    def image(session_id: str, sample_id: str):
        session = store.get(session_id)
        try:
            record = session.bundle.train.record(sample_id)
        except KeyError:
            raise HTTPException(404, f"unknown sample {sample_id}")
        if patches is None or record.image_ref is None:
            raise HTTPException(404, "no image available for this sample")
        path = (patches / record.image_ref).resolve()
        if not path.is_relative_to(patches.resolve()) or not path.is_file():
            raise HTTPException(404, "image file not found")
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

        @app.get("/")
        def root():
            return RedirectResponse("/ui/")

    else:

        @app.get("/")
        def root():
            return {"service": "openset-al", "sessions": len(store.sessions)}

    return app
