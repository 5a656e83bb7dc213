"""Session-oriented HTTP service over the consultation engine.

Sessions live in memory, optionally journaled to an append-only JSONL file so
a restarted service can replay them. Every response embeds the config hash so
traces stay attributable; answer mutations are idempotent per (session,
round): replaying an answer for an already-advanced round returns a conflict.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import engine
from .config import AppConfig, config_hash
from .engine import AnswerRejected, ConsultationError, ConsultationState
from .harness import assemble_session_inputs, record_from_dict
from .kb import KnowledgeBase, KbError, kb_fingerprint, load_kb
from .scoring import ScoringError


@dataclass
class _Session:
    state: ConsultationState
    lock: threading.Lock = field(default_factory=threading.Lock)
    record: Mapping[str, Any] | None = None


def _state_view(
    sid: str, state: ConsultationState, kb: KnowledgeBase, cfg_hash: str, r_max: int
) -> dict[str, Any]:
    ranked = state.ranked
    survivors = set(ranked.survivors)
    ranking = [
        {
            "disease_id": e.disease_id,
            "name": kb.disease_by_id[e.disease_id].name,
            "energy": e.energy,
            "mass": e.mass,
            "survivor": e.disease_id in survivors,
        }
        for e in ranked.entries
    ]
    question = None
    if state.pending_question is not None:
        q = state.pending_question
        question = {
            "text": q.text,
            "round": state.round,
            "gaps": [
                {
                    "finding_id": p.finding_id,
                    "clause": p.clause,
                    "kind": p.kind,
                    "allows_severity": p.allows_severity,
                    "priority": g.priority,
                }
                for g, p in zip(q.gaps, q.prompts)
            ],
        }
    return {
        "session_id": sid,
        "round": state.round,
        "r_max": r_max,
        "ranking": ranking,
        "entropy": ranked.entropy,
        "max_mass": ranked.max_mass,
        "question": question,
        "terminal": None
        if state.terminal is None
        else {
            "reason": state.terminal.reason,
            "uncertainty_flag": state.terminal.uncertainty_flag,
        },
        "evidence": {
            "positive": sorted(state.evidence.positive),
            "negative": sorted(state.evidence.negative),
            "asked_unresolved": sorted(state.evidence.asked_unresolved),
        },
        "config_hash": cfg_hash,
    }


def create_app(config: AppConfig, kb: KnowledgeBase | None = None) -> FastAPI:
    if kb is None:
        if not config.kb_path:
            raise KbError("service needs a knowledge base (kb_path unset)")
        kb = load_kb(config.kb_path)
    cfg_hash = config_hash(config)
    kb_fp = kb_fingerprint(kb)
    harness_cfg = config.harness()
    consult_cfg = config.consultation()
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()
    journal_path = Path(config.server.journal_path) if config.server.journal_path else None

    app = FastAPI(title="trenddx consultation service", version="1")

    def journal(event: dict[str, Any]) -> None:
        if journal_path is None:
            return
        with registry_lock:
            with journal_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")

    def open_session(sid: str, record_data: Mapping[str, Any]) -> _Session:
        record = record_from_dict(record_data)
        evidence, predicates = assemble_session_inputs(kb, record, harness_cfg)
        state = engine.start_session(kb, evidence, predicates, consult_cfg)
        session = _Session(state=state, record=dict(record_data))
        sessions[sid] = session
        return session

    if journal_path is not None and journal_path.exists():
        for line in journal_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if event["event"] == "create":
                open_session(event["session_id"], event["record"])
            elif event["event"] == "answer":
                session = sessions[event["session_id"]]
                session.state = engine.step(kb, session.state, event["answer"], consult_cfg)

    def get_session(sid: str) -> _Session:
        session = sessions.get(sid)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return session

    if config.server.static_dir:
        static_root = Path(config.server.static_dir)
        if static_root.is_dir():
            from fastapi.staticfiles import StaticFiles

            app.mount("/ui", StaticFiles(directory=str(static_root), html=True), name="ui")

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "kb_fingerprint": kb_fp,
            "config_hash": cfg_hash,
            "sessions": len(sessions),
        }

    @app.post("/v1/sessions", status_code=201)
    def create_session(record: dict[str, Any]) -> JSONResponse:
        sid = uuid.uuid4().hex[:12]
        try:
            session = open_session(sid, record)
        except (KbError, ScoringError, ConsultationError, KeyError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        journal({"event": "create", "session_id": sid, "record": record})
        return JSONResponse(
            status_code=201,
            content=_state_view(sid, session.state, kb, cfg_hash, consult_cfg.r_max),
        )

    @app.get("/v1/sessions/{sid}")
    def read_session(sid: str) -> dict[str, Any]:
        session = get_session(sid)
        return _state_view(sid, session.state, kb, cfg_hash, consult_cfg.r_max)

    @app.post("/v1/sessions/{sid}/answers")
    def post_answers(sid: str, body: dict[str, Any]) -> dict[str, Any]:
        session = get_session(sid)
        with session.lock:
            state = session.state
            if state.is_terminal:
                raise HTTPException(status_code=409, detail="session is terminal")
            round_claim = body.get("round")
            if round_claim is not None and int(round_claim) != state.round:
                raise HTTPException(
                    status_code=409,
                    detail=f"round {round_claim} already advanced (current {state.round})",
                )
            answer: Any
            if "answers" in body:
                answer = body["answers"]
            elif "free_text" in body:
                answer = str(body["free_text"])
            else:
                raise HTTPException(status_code=422, detail="body needs 'answers' or 'free_text'")
            try:
                session.state = engine.step(kb, state, answer, consult_cfg)
            except AnswerRejected as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            journal({"event": "answer", "session_id": sid, "answer": answer})
            return _state_view(sid, session.state, kb, cfg_hash, consult_cfg.r_max)

    @app.get("/v1/sessions/{sid}/trace")
    def read_trace(sid: str) -> dict[str, Any]:
        session = get_session(sid)
        trace = engine.export_trace(session.state)
        trace["config_hash"] = cfg_hash
        trace["kb_fingerprint"] = kb_fp
        return trace

    return app


def run_server(config: AppConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.server.host, port=config.server.port, log_level="info")


if __name__ == "__main__":  # pragma: no cover
    import argparse

    from .config import load_app_config

    parser = argparse.ArgumentParser(description="run the consultation HTTP service")
    parser.add_argument("--config", default=None, help="config file (JSON or YAML)")
    parser.add_argument("--kb", default=None, help="knowledge base path override")
    args = parser.parse_args()
    cfg = load_app_config(args.config)
    if args.kb:
        import dataclasses as _dc

        cfg = _dc.replace(cfg, kb_path=args.kb)
    run_server(cfg)
