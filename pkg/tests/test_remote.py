"""Wire-protocol client against an in-process mock provider."""

import json
import math
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from statguard.backends import DistMode, IntTokenizer, ToyLM, ToyProvider, sample_sequences
from statguard.calibration import Detector, statistic_for_text
from statguard.errors import (
    NormalizationViolation,
    ProtocolVersionMismatch,
    ProviderUnavailable,
)
from statguard.remote import (
    FULLVECTOR_CAP,
    WIRE_VERSION,
    RemoteProvider,
    parse_score_response,
    provider_from_config,
    remote_score,
    score_request,
)
from statguard.statistics import general_stat, moment_frames
from statguard.witness import identity_witness, init_witness, witness_fingerprint
from statguard.witness import WitnessFamily


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append(payload)
        status, body = self.server.respond(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/x-ndjson")
        self.end_headers()
        self.wfile.write(body.encode("utf-8"))

    def log_message(self, *args):
        pass


@contextmanager
def mock_provider(respond):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.respond = respond
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, f"http://127.0.0.1:{server.server_address[1]}/score"
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=2)


def nd(*objs):
    return "\n".join(json.dumps(o) for o in objs)


MODEL = ToyLM.random(6, 2, np.random.default_rng(5))
TOKENS = [int(t) for t in sample_sequences(MODEL, 1, 10, np.random.default_rng(3))[0]]


def full_vector_body(model=MODEL, tokens=TOKENS):
    rows = model.log_probs_for_tokens(tokens)
    header = {
        "version": WIRE_VERSION,
        "vocab_size": model.vocab_size,
        "mode": "FullVector",
        "tokens": tokens,
    }
    frames = [
        {"position": t, "log_probs": [float(x) for x in rows[t]]}
        for t in range(len(tokens))
    ]
    return nd(header, *frames)


def moment_body(witness, model=MODEL, tokens=TOKENS):
    rows = model.log_probs_for_tokens(tokens)
    header = {
        "version": WIRE_VERSION,
        "vocab_size": model.vocab_size,
        "mode": "MomentTriple",
        "tokens": tokens,
    }
    frames = []
    for t, frame in enumerate(moment_frames(witness, rows, tokens)):
        frames.append({
            "position": t,
            "observed_logprob": frame.observed_logprob,
            "witness_mean": frame.witness_mean,
            "witness_var": frame.witness_var,
        })
    return nd(header, *frames)


# ── happy paths ───────────────────────────────────────────────────────────

class TestFullVector:
    def test_uniform_rows(self):
        row = [math.log(0.25)] * 4
        body = nd(
            {"version": 1, "vocab_size": 4, "mode": "FullVector"},
            *({"position": t, "log_probs": row} for t in range(3)),
        )
        with mock_provider(lambda req: (200, body)) as (_, url):
            result = remote_score(url, "abc")
        assert len(result.frames) == 3
        assert result.tokens is None
        for frame in result.frames:
            assert np.allclose(frame.log_probs, math.log(0.25), atol=1e-12)
            assert np.ptp(frame.log_probs) == 0.0

    def test_rows_round_trip_bitwise(self):
        # json uses shortest round-trip reprs, so doubles survive exactly
        with mock_provider(lambda req: (200, full_vector_body())) as (_, url):
            result = remote_score(url, "whatever")
        rows = np.stack([f.log_probs for f in result.frames])
        assert np.array_equal(rows, MODEL.log_probs_for_tokens(TOKENS))
        assert result.tokens == TOKENS

    def test_request_shape(self):
        with mock_provider(lambda req: (200, full_vector_body())) as (server, url):
            remote_score(url, "sample text")
        (request,) = server.requests
        assert request == {"version": 1, "text": "sample text", "mode": "FullVector"}

    def test_wire_slack_renormalized(self):
        # off by 1e-8: inside wire slack, outside engine tolerance pre-shift
        row = list(np.log(np.array([0.5, 0.5]) * (1 + 1e-8)))
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector"},
            {"position": 0, "log_probs": row},
        )
        with mock_provider(lambda req: (200, body)) as (_, url):
            result = remote_score(url, "x")
        lse = np.logaddexp.reduce(result.frames[0].log_probs)
        assert abs(lse) <= 1e-9


class TestMomentTriple:
    def test_statistic_matches_full_vector_path(self):
        w = init_witness(WitnessFamily.CONTEXT_LINEAR, np.random.default_rng(0))
        body = moment_body(w)
        with mock_provider(lambda req: (200, body)) as (server, url):
            result = remote_score(url, "t", witness=w, mode="MomentTriple")
        got = general_stat(result.frames, TOKENS, w).value
        want = general_stat(MODEL.log_probs_for_tokens(TOKENS), TOKENS, w).value
        assert got == pytest.approx(want, abs=1e-12)
        assert result.frames[0].witness_fingerprint == witness_fingerprint(w)
        (request,) = server.requests
        assert request["witness_spec"]["family"] == "ContextLinear"

    def test_witness_required(self):
        with pytest.raises(ValueError):
            remote_score("http://127.0.0.1:9/score", "t", mode="MomentTriple")
        with pytest.raises(ValueError):
            parse_score_response(
                [json.dumps({"version": 1, "vocab_size": 4, "mode": "MomentTriple"})],
                witness=None,
            )


# ── protocol violations ───────────────────────────────────────────────────

class TestProtocolErrors:
    def _parse(self, body, witness=None):
        return parse_score_response(body.splitlines(), witness=witness)

    def test_version_mismatch(self):
        body = nd({"version": 2, "vocab_size": 4, "mode": "FullVector"})
        with pytest.raises(ProtocolVersionMismatch):
            self._parse(body)

    def test_missing_version(self):
        with pytest.raises(ProviderUnavailable):
            self._parse(nd({"vocab_size": 4, "mode": "FullVector"}))

    def test_fullvector_cap(self):
        body = nd({"version": 1, "vocab_size": 256000, "mode": "FullVector"})
        with pytest.raises(ProtocolVersionMismatch, match="MomentTriple"):
            self._parse(body)
        # same vocab is fine provider-side when moments come over the wire
        parsed = parse_score_response(
            nd({"version": 1, "vocab_size": 256000, "mode": "MomentTriple"}).splitlines(),
            witness=identity_witness(),
        )
        assert parsed.vocab_size == 256000

    def test_malformed_frame_reports_index(self):
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector"},
            {"position": 0, "log_probs": [math.log(0.5)] * 2},
            {"position": 1},
        )
        with pytest.raises(ProviderUnavailable, match="frame 1"):
            self._parse(body)

    def test_out_of_order_positions(self):
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector"},
            {"position": 1, "log_probs": [math.log(0.5)] * 2},
        )
        with pytest.raises(ProviderUnavailable, match="frame 0"):
            self._parse(body)

    def test_normalization_violation(self):
        row = list(np.log(np.array([0.6, 0.6])))
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector"},
            {"position": 0, "log_probs": row},
        )
        with pytest.raises(NormalizationViolation):
            self._parse(body)

    def test_negative_variance(self):
        body = nd(
            {"version": 1, "vocab_size": 4, "mode": "MomentTriple"},
            {"position": 0, "observed_logprob": -1.0, "witness_mean": -2.0, "witness_var": -0.5},
        )
        with pytest.raises(ProviderUnavailable, match="frame 0"):
            self._parse(body, witness=identity_witness())

    def test_token_count_mismatch(self):
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector", "tokens": [0, 1]},
            {"position": 0, "log_probs": [math.log(0.5)] * 2},
        )
        with pytest.raises(ProviderUnavailable, match="tokens"):
            self._parse(body)

    def test_empty_body(self):
        with pytest.raises(ProviderUnavailable):
            self._parse("")

    def test_http_error(self):
        with mock_provider(lambda req: (500, "boom")) as (_, url):
            with pytest.raises(ProviderUnavailable, match="500"):
                remote_score(url, "t")

    def test_unreachable(self):
        with pytest.raises(ProviderUnavailable):
            remote_score("http://127.0.0.1:1/score", "t", timeout=0.2)


# ── provider wrapper and configs ──────────────────────────────────────────

class TestRemoteProvider:
    def test_matches_local_provider(self):
        w = identity_witness()
        with mock_provider(lambda req: (200, full_vector_body())) as (_, url):
            provider = RemoteProvider(endpoint=url)
            detector = Detector(w, provider.provider_id)
            got = statistic_for_text(detector, provider, "ignored")
        local = ToyProvider(MODEL, IntTokenizer(MODEL.vocab_size))
        want = statistic_for_text(
            Detector(w, local.provider_id), local, "", tokens=TOKENS
        )
        assert got == pytest.approx(want, abs=1e-12)

    def test_provider_id_stable(self):
        a = RemoteProvider(endpoint="http://host/score")
        b = RemoteProvider(endpoint="http://host/score")
        assert a.provider_id == b.provider_id
        assert a.provider_id.startswith("remote:")
        assert a.provider_id != RemoteProvider(endpoint="http://other/score").provider_id

    def test_no_tokens_anywhere(self):
        body = nd(
            {"version": 1, "vocab_size": 2, "mode": "FullVector"},
            {"position": 0, "log_probs": [math.log(0.5)] * 2},
        )
        with mock_provider(lambda req: (200, body)) as (_, url):
            provider = RemoteProvider(endpoint=url)
            with pytest.raises(ProviderUnavailable, match="tokens"):
                provider.score_for_witness("t", None, identity_witness())


class TestProviderConfig:
    def test_toy_round_trip(self):
        provider = ToyProvider(MODEL, IntTokenizer(MODEL.vocab_size))
        rebuilt = provider_from_config(provider.to_config())
        assert rebuilt.provider_id == provider.provider_id
        rows, toks = rebuilt.score_for_witness("", TOKENS, identity_witness())
        assert np.array_equal(rows, MODEL.log_probs_for_tokens(TOKENS))

    def test_remote_round_trip(self):
        provider = RemoteProvider(endpoint="http://host/score", cap=64, timeout=1.5)
        rebuilt = provider_from_config(provider.to_config())
        assert rebuilt == provider

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            provider_from_config({"kind": "mystery"})


class TestScoreRequest:
    def test_fields(self):
        req = score_request("abc", DistMode.FULL_VECTOR, None)
        assert req == {"version": WIRE_VERSION, "text": "abc", "mode": "FullVector"}
        with_w = score_request("abc", DistMode.MOMENT_TRIPLE, identity_witness())
        assert with_w["witness_spec"] == {"family": "LogProbIdentity", "params": []}
