"""HTTP service for browsing trajectories and collecting recall annotations.

Exposes the dataset as browsable frames (PNG) and accepts memory dependency
pairs from the web UI. Every mutation rewrites the dataset file atomically
(temp file + rename) under a single writer lock, so the on-disk dataset
always passes full validation. Static UI assets, when built, are served
from the same process under /.
"""
from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import FileResponse
from pydantic import BaseModel

from . import data
from .render import observation_png

FRONTEND_DIST = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"


class PairSubmission(BaseModel):
    p: int
    q: int
    client_timestamp: float | None = None


def create_app(data_path, frontend_dir: Path | None = None) -> FastAPI:
    data_path = Path(data_path)
    app = FastAPI(title="memtuner annotation service")
    state = {"dataset": data.load(data_path)}
    write_lock = threading.Lock()
    by_id = lambda: {t.id: t for t in state["dataset"].trajectories}

    def persist() -> None:
        state["dataset"].validate()
        data.save(state["dataset"], data_path)

    def get_trajectory(tid: int):
        traj = by_id().get(tid)
        if traj is None:
            raise HTTPException(status_code=404, detail=f"unknown trajectory id {tid}")
        return traj

    @app.get("/api/trajectories")
    def list_trajectories():
        try:
            return [
                {
                    "id": t.id,
                    "task": t.task,
                    "length": len(t),
                    "annotated": t.annotated,
                    "pair_count": len(t.pairs),
                }
                for t in sorted(state["dataset"].trajectories, key=lambda t: t.id)
            ]
        except Exception as e:  # dataset state unreadable
            raise HTTPException(status_code=500, detail=str(e))

    @app.get("/api/trajectories/{tid}/frames/{t}")
    def frame(tid: int, t: int):
        traj = get_trajectory(tid)
        if not 0 <= t < len(traj):
            raise HTTPException(status_code=404, detail=f"frame {t} out of range [0, {len(traj)})")
        return Response(content=observation_png(traj.observations[t]), media_type="image/png")

    @app.get("/api/trajectories/{tid}/pairs")
    def pairs(tid: int):
        traj = get_trajectory(tid)
        return {"pairs": [[p, q] for p, q in sorted(traj.pairs)]}

    @app.post("/api/trajectories/{tid}/pairs")
    def add_pair(tid: int, submission: PairSubmission):
        with write_lock:
            traj = get_trajectory(tid)
            p, q = submission.p, submission.q
            if not 0 <= p < q < len(traj):
                raise HTTPException(
                    status_code=422,
                    detail=f"pair ({p}, {q}) violates 0 <= p < q < {len(traj)}",
                )
            if (p, q) in traj.pairs:
                return Response(status_code=200, content=None)
            traj.pairs.append((p, q))
            traj.pairs.sort()
            traj.annotated = True
            persist()
        return Response(status_code=201, content=None)

    @app.delete("/api/trajectories/{tid}/pairs/{p}/{q}")
    def delete_pair(tid: int, p: int, q: int):
        with write_lock:
            traj = get_trajectory(tid)
            if (p, q) not in traj.pairs:
                raise HTTPException(status_code=404, detail=f"pair ({p}, {q}) not present")
            traj.pairs.remove((p, q))
            persist()
        return Response(status_code=204, content=None)

    ui_dir = frontend_dir if frontend_dir is not None else FRONTEND_DIST
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return {"service": "memtuner annotation", "ui": "not built (see frontend/README)"}

    return app


def serve(data_path, host: str = "127.0.0.1", port: int = 8321) -> None:
    import uvicorn

    uvicorn.run(create_app(data_path), host=host, port=port, log_level="warning")
