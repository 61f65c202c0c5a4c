"""HTTP labeling service: the interactive-oracle path into a campaign.

Exposes the pending query queue with full context (raw lines, template
renders, selection scores), accepts human labels with first-final
semantics, advances rounds, and reports live metrics. All mutations funnel
through one lock; while a round advance is fine-tuning, reads are answered
from the pre-advance snapshot and writes are rejected with a training
status.
"""

from __future__ import annotations

import dataclasses
import threading
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .active import SKIP, CampaignDriver

VALID_LABELS = (0, 1, SKIP)


def _query_view(q, rank: int) -> dict:
    return {
        "query_id": q.query_id,
        "window_index": q.window_index,
        "round": q.round,
        "selection_rank": rank,
        "raw_lines": q.raw_lines,
        "template_views": q.template_views,
        "score": {
            "free_energy": q.score.free_energy,
            "uncertainty": q.score.uncertainty,
            "p0": q.score.p0,
            "p1": q.score.p1,
            "e0": q.score.e0,
            "e1": q.score.e1,
        },
        "status": q.status,
        "label": q.label,
        "labeler_id": q.labeler_id,
    }


class LabelService:
    """Serialized mutation queue around one campaign driver."""

    def __init__(self, driver: CampaignDriver, auto_start: bool = True):
        self.driver = driver
        self.lock = threading.Lock()
        self.training = False
        self.audit: list[dict] = []
        if auto_start and driver.psi is None:
            driver.pretrain()
        if auto_start and driver.cfg.rounds > 0 and not driver.state.pending_queries:
            if driver.state.round < driver.cfg.rounds and driver.state.unlabeled_target:
                driver.start_round()
        self._snapshot = self._capture()

    # -- snapshots -------------------------------------------------------

    def _capture(self) -> dict:
        d = self.driver
        queries = [_query_view(q, i + 1) for i, q in enumerate(d.state.pending_queries)]
        return {
            "round": d.state.round,
            "queries": queries,
            "metrics": [dataclasses.asdict(m) for m in d.metrics],
            "ledger": d.budget_ledger(),
            "history": d.state.history,
            "complete": self._is_complete(),
        }

    def _is_complete(self) -> bool:
        d = self.driver
        return (
            d.state.round >= d.cfg.rounds or not d.state.unlabeled_target
        ) and not d.state.pending_queries

    def _status(self) -> str:
        if self.training:
            return "training"
        if self._snapshot["complete"]:
            return "complete"
        return "labeling" if self._snapshot["queries"] else "idle"

    def _envelope(self, payload: dict) -> dict:
        payload["campaign_digest"] = self.driver.digest
        payload["round"] = self._snapshot["round"]
        payload["status"] = self._status()
        return payload

    # -- operations ------------------------------------------------------

    def campaign_info(self) -> tuple[int, dict]:
        return 200, self._envelope(
            {
                "experiment_id": self.driver.experiment_id,
                "variant": self.driver.variant,
                "rounds_configured": self.driver.cfg.rounds,
                "uncertainty_order": self.driver.cfg.uncertainty_order,
                "ledger": self._snapshot["ledger"],
            }
        )

    def pending_queries(self) -> tuple[int, dict]:
        if self.driver.psi is None:
            return 409, self._envelope({"error": "no active campaign"})
        pending = [q for q in self._snapshot["queries"] if q["status"] == "pending"]
        return 200, self._envelope(
            {"queries": pending, "total_open": len(self._snapshot["queries"])}
        )

    def submit_label(self, body: Any) -> tuple[int, dict]:
        problem = self._validate_submission(body)
        if problem:
            return 400, self._envelope({"error": problem})
        with self.lock:
            if self.training:
                return 409, self._envelope({"error": "round advance in progress"})
            outcome = self.driver.submit_label(
                body["query_id"], body["label"], body.get("labeler_id", "")
            )
            self.audit.append(
                {
                    "query_id": body["query_id"],
                    "label": body["label"],
                    "labeler_id": body.get("labeler_id", ""),
                    "outcome": outcome,
                }
            )
            self._snapshot = self._capture()
            if outcome == "unknown_query":
                return 404, self._envelope({"outcome": outcome, "query_id": body["query_id"]})
            if outcome == "duplicate":
                retained = next(
                    (
                        q
                        for q in self.driver.state.pending_queries
                        if q.query_id == body["query_id"]
                    ),
                    None,
                )
                return 200, self._envelope(
                    {
                        "outcome": outcome,
                        "query_id": body["query_id"],
                        "retained_label": retained.label if retained else None,
                        "retained_status": retained.status if retained else None,
                    }
                )
            return 201, self._envelope({"outcome": outcome, "query_id": body["query_id"]})

    @staticmethod
    def _validate_submission(body: Any) -> str | None:
        if not isinstance(body, dict):
            return "body must be a JSON object"
        if not isinstance(body.get("query_id"), str) or not body["query_id"]:
            return "query_id must be a non-empty string"
        if body.get("label") not in VALID_LABELS:
            return f"label must be one of {VALID_LABELS}"
        if "labeler_id" in body and not isinstance(body["labeler_id"], str):
            return "labeler_id must be a string"
        return None

    def relabel(self, body: Any) -> tuple[int, dict]:
        problem = self._validate_submission(body)
        if problem:
            return 400, self._envelope({"error": problem})
        if body["label"] == SKIP:
            return 400, self._envelope({"error": "relabel requires a 0/1 label"})
        with self.lock:
            if self.training:
                return 409, self._envelope({"error": "round advance in progress"})
            query = next(
                (
                    q
                    for q in self.driver.state.pending_queries
                    if q.query_id == body["query_id"]
                ),
                None,
            )
            self.audit.append(
                {
                    "query_id": body["query_id"],
                    "label": body["label"],
                    "labeler_id": body.get("labeler_id", ""),
                    "outcome": "relabel",
                }
            )
            if query is None:
                return 409, self._envelope(
                    {"error": "relabel rejected: query is not part of the open round"}
                )
            if query.status != "labeled":
                return 409, self._envelope(
                    {"error": f"relabel rejected: query status is {query.status}"}
                )
            query.label = int(body["label"])
            query.labeler_id = body.get("labeler_id") or query.labeler_id
            self._snapshot = self._capture()
            return 200, self._envelope({"outcome": "relabeled", "query_id": body["query_id"]})

    def advance_round(self) -> tuple[int, dict]:
        with self.lock:
            if self.training:
                return 409, self._envelope({"error": "round advance already in progress"})
            if self._is_complete():
                return 200, self._envelope(
                    {
                        "outcome": "campaign-complete",
                        "metrics": self._snapshot["metrics"][-1] if self._snapshot["metrics"] else None,
                        "ledger": self._snapshot["ledger"],
                    }
                )
            unresolved = [
                q.query_id for q in self.driver.state.pending_queries if q.status == "pending"
            ]
            if unresolved:
                return 409, self._envelope(
                    {"error": "pending queries remain", "pending": unresolved}
                )
            self.training = True
        try:
            report = self.driver.complete_round()
            if (
                self.driver.state.round < self.driver.cfg.rounds
                and self.driver.state.unlabeled_target
            ):
                self.driver.start_round()
        finally:
            with self.lock:
                self.training = False
                self._snapshot = self._capture()
        return 200, self._envelope(
            {
                "outcome": "advanced",
                "metrics": dataclasses.asdict(report),
                "pending_count": len(self.driver.state.pending_queries),
                "ledger": self._snapshot["ledger"],
            }
        )

    def metrics(self) -> tuple[int, dict]:
        rows = self._snapshot["metrics"]
        return 200, self._envelope(
            {
                "latest": rows[-1] if rows else None,
                "series": rows,
                "ledger": self._snapshot["ledger"],
                "audit_entries": len(self.audit),
            }
        )

    def template(self, template_id: int) -> tuple[int, dict]:
        rendered = self.driver.data.template_renders.get(template_id)
        if rendered is None:
            return 404, self._envelope({"error": f"unknown template id {template_id}"})
        return 200, self._envelope({"template_id": template_id, "rendered": rendered})


def create_app(driver: CampaignDriver, auto_start: bool = True) -> FastAPI:
    service = LabelService(driver, auto_start=auto_start)
    app = FastAPI(title="logadapt labeling service")
    app.state.service = service

    def reply(status: int, payload: dict) -> JSONResponse:
        return JSONResponse(payload, status_code=status)

    @app.get("/api/campaign")
    def campaign():
        return reply(*service.campaign_info())

    @app.get("/api/queries")
    def queries():
        return reply(*service.pending_queries())

    @app.post("/api/labels")
    async def labels(request: Request):
        try:
            body = await request.json()
        except Exception:
            return reply(400, service._envelope({"error": "body is not valid JSON"}))
        return reply(*service.submit_label(body))

    @app.post("/api/rounds/advance")
    def advance():
        return reply(*service.advance_round())

    @app.get("/api/metrics")
    def metrics():
        return reply(*service.metrics())

    @app.get("/api/templates/{template_id}")
    def template(template_id: int):
        return reply(*service.template(template_id))

    @app.post("/api/admin/relabel")
    async def relabel(request: Request):
        try:
            body = await request.json()
        except Exception:
            return reply(400, service._envelope({"error": "body is not valid JSON"}))
        return reply(*service.relabel(body))

    return app
