"""HTTP face of the calibrated engine: detection, domain metadata, feedback.

The service adds no statistics of its own. Every number in a /detect response
comes from the library detect() call over an immutable snapshot of the store;
the only service-side state is the request registry (for feedback correlation)
and the append-only feedback log.

Store layout under the root directory:
    witness.json     serialized witness spec
    provider.json    scoring provider config
    nulls/*.sgnd     calibration artifacts, one per domain
    feedback.log     append-only feedback records, one JSON object per line
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .calibration import CalibrationStore, Detector, detect
from .corpus import GENERAL, Domain, clean_text
from .errors import FingerprintMismatch, UncalibratedDomain, UnknownToken
from .remote import provider_from_config
from .witness import WitnessSpec, load_witness, save_witness

MAX_TEXT_BYTES = 32 * 1024
ALPHA_MIN, ALPHA_MAX = 0.01, 0.20
RETENTION_SECONDS = 24 * 3600.0

# static by outcome: content, not computation
INTERPRETATIONS = {
    "reject": (
        "The statistic sits above the calibrated human range at this "
        "significance level, so the text is flagged as machine-generated. "
        "Lowering alpha makes the call more conservative."
    ),
    "accept": (
        "The statistic is consistent with the human calibration set at this "
        "significance level, so there is no evidence the text is "
        "machine-generated. This is a failure to reject, not a certificate "
        "of human authorship."
    ),
}


def init_store(root: str | Path, witness: WitnessSpec, provider) -> CalibrationStore:
    """Lay out a fresh service store; returns the calibration store to fill."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_witness(root / "witness.json", witness)
    with open(root / "provider.json", "w", encoding="utf-8") as fh:
        json.dump(provider.to_config(), fh)
    return CalibrationStore(root)


class ServiceState:
    """Immutable calibration snapshot plus the two mutable bits: the served-
    decision registry and the feedback log writer."""

    def __init__(self, root: Path):
        self.root = root
        self.witness = load_witness(root / "witness.json")
        with open(root / "provider.json", encoding="utf-8") as fh:
            self.provider = provider_from_config(json.load(fh))
        self.detector = Detector(self.witness, self.provider.provider_id)
        self.store = CalibrationStore(root)
        self.feedback_path = root / "feedback.log"
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self._decisions: dict[str, float] = {}
        self._feedback_seen: set[str] = set()
        if self.feedback_path.exists():
            with open(self.feedback_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._feedback_seen.add(json.loads(line)["request_id"])

    def register(self, text: str) -> str:
        now = time.time()
        rid = "{}-{:x}-{}".format(
            hashlib.sha1(text.encode("utf-8")).hexdigest()[:12],
            time.time_ns(),
            next(self._seq),
        )
        with self._lock:
            self._purge(now)
            self._decisions[rid] = now
        return rid

    def _purge(self, now: float) -> None:
        expired = [rid for rid, t in self._decisions.items() if now - t > RETENTION_SECONDS]
        for rid in expired:
            del self._decisions[rid]

    def record_feedback(self, request_id: str, agrees: bool) -> bool:
        """True when a new record was appended, False on idempotent repeat."""
        with self._lock:
            if request_id in self._feedback_seen:
                return False
            self._purge(time.time())
            if request_id not in self._decisions:
                raise KeyError(request_id)
            record = {"request_id": request_id, "agrees": agrees, "timestamp": time.time()}
            with open(self.feedback_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
            self._feedback_seen.add(request_id)
            return True


class DetectIn(BaseModel):
    text: str = ""
    domain: str = GENERAL
    alpha: float = 0.05


class FeedbackIn(BaseModel):
    request_id: str
    agrees: bool


def _domain_label(domain) -> str:
    return domain.value if isinstance(domain, Domain) else str(domain)


def create_app(root: str | Path | None = None) -> FastAPI:
    if root is None:
        root = os.environ["STATGUARD_STORE"]
    state = ServiceState(Path(root))
    app = FastAPI(title="statguard")
    app.state.engine = state

    @app.post("/detect")
    def detect_endpoint(req: DetectIn):
        if len(req.text.encode("utf-8")) > MAX_TEXT_BYTES:
            raise HTTPException(413, f"text exceeds {MAX_TEXT_BYTES} bytes")
        if not ALPHA_MIN <= req.alpha <= ALPHA_MAX:
            raise HTTPException(
                400, f"alpha {req.alpha} outside the [{ALPHA_MIN}, {ALPHA_MAX}] range"
            )
        if req.domain == GENERAL:
            domain = GENERAL
        else:
            try:
                domain = Domain(req.domain)
            except ValueError:
                raise HTTPException(400, f"unknown domain {req.domain!r}")
        cleaned = clean_text(req.text)
        if not cleaned.strip():
            raise HTTPException(400, "text is empty after cleaning")
        try:
            decision = detect(
                cleaned, domain, req.alpha, state.detector, state.provider, state.store
            )
        except UncalibratedDomain as exc:
            raise HTTPException(503, str(exc))
        except FingerprintMismatch as exc:
            raise HTTPException(409, str(exc))
        except UnknownToken as exc:
            raise HTTPException(400, f"cannot tokenize: {exc}")
        return {
            "request_id": state.register(cleaned),
            "statistic": decision.statistic,
            "p_value": decision.p_value,
            "per_domain_p": {d.value: p for d, p in decision.per_domain_p.items()},
            "alpha": decision.alpha,
            "reject": decision.reject,
            "domain_used": _domain_label(decision.domain_used),
            "threshold": None if math.isinf(decision.threshold) else decision.threshold,
            "interpretation": INTERPRETATIONS["reject" if decision.reject else "accept"],
        }

    @app.get("/domains")
    def domains_endpoint():
        entries = []
        for domain in state.store.domains():
            null = state.store.get(domain)
            entries.append({"domain": domain.value, "m": null.m, "p_floor": null.p_floor})
        missing = [d.value for d in Domain if not state.store.has(d)]
        if not entries:
            warning = "no calibrated domains; detection unavailable"
        elif missing:
            warning = "General mode unavailable; uncalibrated: " + ", ".join(sorted(missing))
        else:
            warning = None
            m_min = min(e["m"] for e in entries)
            entries.append({"domain": GENERAL, "m": m_min, "p_floor": 1.0 / (m_min + 1)})
        return {"domains": entries, "warning": warning}

    @app.post("/feedback")
    def feedback_endpoint(req: FeedbackIn):
        try:
            recorded = state.record_feedback(req.request_id, req.agrees)
        except KeyError:
            raise HTTPException(404, f"unknown or expired request_id {req.request_id!r}")
        return {"request_id": req.request_id, "recorded": recorded}

    @app.get("/healthz")
    def healthz_endpoint():
        return {"status": "ok", "calibrated_domains": len(state.store.domains())}

    return app


def run_service(root: str | Path | None = None, port: int | None = None) -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get("STATGUARD_PORT", "8000"))
    uvicorn.run(create_app(root), host="127.0.0.1", port=port)
