"""HTTP surface: POST /score answering wire-protocol frames.

One header line {version, vocab_size, mode, tokens}, then one frame per
position, newline-delimited JSON. FullVector frames carry the whole log-prob
row when the vocabulary fits under the configured cap; otherwise the bridge
computes MomentTriple frames itself from the witness_spec in the request, by
exact summation over the vocabulary. Reals serialize through repr, which
round-trips bit-exactly on the other side.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .model import CharBigramLM, ModelLoadError, TokenizationError, load_model
from .witness_math import WitnessSpecError, moment_triples

WIRE_VERSION = 1
FULL_VECTOR = "FullVector"
MOMENT_TRIPLE = "MomentTriple"


@dataclass(frozen=True)
class BridgeConfig:
    model_id: str = "char-tiny"
    device: str = "cpu"
    vocab_cap_for_fullvector: int = 8192
    port: int = 8100

    @classmethod
    def from_env(cls) -> "BridgeConfig":
        return cls(
            model_id=os.environ.get("BRIDGE_MODEL_ID", cls.model_id),
            device=os.environ.get("BRIDGE_DEVICE", cls.device),
            vocab_cap_for_fullvector=int(
                os.environ.get("BRIDGE_FULLVECTOR_CAP", cls.vocab_cap_for_fullvector)
            ),
            port=int(os.environ.get("BRIDGE_PORT", cls.port)),
        )


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": message})


def create_app(config: BridgeConfig | None = None) -> FastAPI:
    config = config or BridgeConfig.from_env()
    app = FastAPI(title="lm-bridge")
    app.state.config = config
    app.state.model = None  # loaded on first use so load failures surface as 503

    def model() -> CharBigramLM:
        if app.state.model is None:
            app.state.model = load_model(config.model_id)
        return app.state.model

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "model_id": config.model_id, "version": WIRE_VERSION}

    @app.post("/score")
    async def score(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        if body.get("version") != WIRE_VERSION:
            return _error(400, f"protocol version {body.get('version')!r} not supported")
        text = body.get("text")
        if not isinstance(text, str) or text == "":
            return _error(422, "text must be a nonempty string")
        requested = body.get("mode", FULL_VECTOR)
        if requested not in (FULL_VECTOR, MOMENT_TRIPLE):
            return _error(400, f"unknown mode {requested!r}")

        try:
            lm = model()
        except ModelLoadError as exc:
            return _error(503, str(exc))
        try:
            ids = lm.encode(text)
        except TokenizationError as exc:
            return _error(422, str(exc))
        if not ids:
            return _error(422, "text tokenized to nothing")

        mode = requested
        if mode == FULL_VECTOR and lm.vocab_size > config.vocab_cap_for_fullvector:
            mode = MOMENT_TRIPLE
        rows = lm.log_prob_rows(ids)

        if mode == MOMENT_TRIPLE:
            spec = body.get("witness_spec")
            if spec is None:
                return _error(400, "MomentTriple scoring needs a witness_spec")
            try:
                frames = moment_triples(spec, rows, ids)
            except WitnessSpecError as exc:
                return _error(400, str(exc))
        else:
            frames = [
                {"position": t, "log_probs": [float(x) for x in row]}
                for t, row in enumerate(rows)
            ]

        header = {
            "version": WIRE_VERSION,
            "vocab_size": lm.vocab_size,
            "mode": mode,
            "tokens": ids,
        }
        lines = [json.dumps(header)] + [json.dumps(frame) for frame in frames]
        return PlainTextResponse("\n".join(lines) + "\n", media_type="application/x-ndjson")

    return app


def main() -> None:
    config = BridgeConfig.from_env()
    uvicorn.run(create_app(config), host="127.0.0.1", port=config.port)


if __name__ == "__main__":
    main()
