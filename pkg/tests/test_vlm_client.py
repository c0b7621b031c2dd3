import json
import threading

import pytest

from gridcollage.dataset import GenPlan, generate_groups, predictions_to_doc
from gridcollage.vlm.base import CollageRequest, SimulatedRecognizer, evaluate
from gridcollage.vlm.client import (
    ClientConfig, FakeClock, HttpError, HttpRecognizer, QuotaExceededError, TokenBucket, UsageLedger,
    build_request_body, http_recognize,
)
from gridcollage.vlm.simulator import SimConfig, collage_stream, simulate_recognition

CATS = ["tractor", "automated teller machine", "swim trunks / shorts", "red-breasted merganser"]
REQ = CollageRequest("a72bca2a3e.jpeg", 4, b"\xff\xd8fake")


def chat(content, usage=None):
    doc = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage:
        doc["usage"] = usage
    return json.dumps(doc)


GOOD = chat(json.dumps({"a72bca2a3e.jpeg": {str(i): c for i, c in enumerate(CATS)}}),
            {"prompt_tokens": 5130, "completion_tokens": 40})


class Scripted:
    """Transport replaying (status, text) pairs and recording request bodies."""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.bodies = []
        self._lock = threading.Lock()

    def __call__(self, url, headers, body):
        with self._lock:
            self.bodies.append(body)
            reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(reply, Exception):
            raise reply
        return reply


def run(transport, cfg=ClientConfig(), clock=None, **kw):
    clock = clock or FakeClock()
    return http_recognize(cfg, [REQ], CATS, transport, TokenBucket(cfg.rpm, clock), clock,
                          api_key="test", **kw), clock


def test_canned_payload():
    res, _ = run(Scripted((200, GOOD)))
    assert res.retries == 0
    assert res.results["a72bca2a3e.jpeg"].labels == {i: c for i, c in enumerate(CATS)}


def test_retries_then_success():
    res, clock = run(Scripted((429, "slow down"), (429, "slow down"), (200, GOOD)))
    assert res.retries == 2
    assert clock.now == pytest.approx(1.0 + 2.0)


def test_transport_exception_retried():
    res, _ = run(Scripted(ConnectionError("reset"), (200, GOOD)))
    assert res.retries == 1


def test_quota_not_retried():
    t = Scripted((429, '{"error": {"code": "insufficient_quota"}}'))
    with pytest.raises(QuotaExceededError):
        run(t)
    assert len(t.bodies) == 1


def test_client_error_not_retried():
    t = Scripted((400, "bad request"))
    with pytest.raises(HttpError) as info:
        run(t)
    assert info.value.status == 400 and len(t.bodies) == 1


def test_retries_exhausted():
    with pytest.raises(HttpError) as info:
        run(Scripted((503, "down")), ClientConfig(max_retries=3))
    assert info.value.retries == 3


def test_rate_limit_on_virtual_clock():
    clock = FakeClock()
    cfg = ClientConfig(rpm=2)
    bucket = TokenBucket(cfg.rpm, clock)
    t = Scripted((200, GOOD))
    for _ in range(6):
        http_recognize(cfg, [REQ], CATS, t, bucket, clock, api_key="x")
    assert clock.now >= 120.0


def test_request_body():
    body = build_request_body(ClientConfig(seed=7), [REQ, CollageRequest("0b73a3623d.jpeg", 4, b"x")], CATS)
    assert body["model"] == "gpt-4-1106-vision-preview" and body["seed"] == 7
    parts = body["messages"][0]["content"]
    assert parts[0]["type"] == "text" and '"a72bca2a3e.jpeg", "0b73a3623d.jpeg"' in parts[0]["text"]
    assert [p["image_url"]["detail"] for p in parts[1:]] == ["low", "low"]
    assert parts[1]["image_url"]["url"].startswith("data:image/jpeg;base64,")


def test_request_body_rejects_mixed_grids_and_missing_image():
    with pytest.raises(ValueError):
        build_request_body(ClientConfig(), [REQ, CollageRequest("0b73a3623d.jpeg", 9, b"x")], CATS)
    with pytest.raises(ValueError):
        build_request_body(ClientConfig(), [CollageRequest("0b73a3623d.jpeg", 4)], CATS)


def test_oversized_batch():
    with pytest.raises(ValueError):
        http_recognize(ClientConfig(batch_size=1), [REQ, REQ], CATS, Scripted((200, GOOD)), clock=FakeClock())


def test_usage_and_audit(tmp_path):
    ledger = UsageLedger()
    cfg = ClientConfig(audit_log=str(tmp_path / "audit.jsonl"))
    res, _ = run(Scripted((500, "oops"), (200, GOOD)), cfg, ledger=ledger)
    assert res.usage.input_tokens == 5130 and res.usage.output_tokens == 40
    assert ledger.total_cost == pytest.approx(0.0513 + 0.0012)
    lines = [json.loads(x) for x in (tmp_path / "audit.jsonl").read_text().splitlines()]
    assert [x["status"] for x in lines] == [500, 200] and lines[1]["response"] == GOOD


def test_usage_estimated_without_usage_block():
    ledger = UsageLedger()
    content = json.dumps({"a72bca2a3e.jpeg": {str(i): c for i, c in enumerate(CATS)}})
    run(Scripted((200, chat(content))), ledger=ledger, label_tokens=4834)
    assert ledger.input_tokens == 211 + 4834 + 85
    before = ledger.total_cost
    ledger.record(["z"], 10, 0)
    assert ledger.total_cost >= before
    with pytest.raises(ValueError):
        ledger.record(["z"], -1, 0)


def test_config_validation():
    for kw in (dict(batch_size=0), dict(rpm=0), dict(detail="high")):
        with pytest.raises(ValueError):
            ClientConfig(**kw)


def echo_transport(specs, sim, categories):
    """Answers every request the way the simulator would for the named collages."""

    def send(url, headers, body):
        text = body["messages"][0]["content"][0]["text"]
        names = json.loads(text[text.index("(") + 1:text.index(")")])
        doc = {}
        for name in names:
            labels = simulate_recognition(specs[name], None, sim, categories, collage_stream(sim.seed, name))
            doc[name] = {str(i): v for i, v in labels.items()}
        return 200, chat(json.dumps(doc))

    return send


def test_http_and_simulated_backends_agree():
    pool = [(f"p{i}", i % 5, f"class {i % 5}") for i in range(40)]
    specs = generate_groups(pool, GenPlan(4, 10, 3, seed=1))
    cats = [f"class {c}" for c in range(5)]
    sim = SimConfig.default(2, seed=3)
    rec = HttpRecognizer(ClientConfig(rpm=1e6, max_in_flight=3),
                         transport=echo_transport({s.collage_name: s for s in specs}, sim, cats),
                         clock=FakeClock(), api_key="x")
    via_http = evaluate(rec, specs, cats, image_for=lambda s: b"img")
    via_sim = evaluate(SimulatedRecognizer(specs, sim), specs, cats)
    assert predictions_to_doc(via_http) == predictions_to_doc(via_sim)
    assert len(rec.ledger.entries) == 8


def test_failed_batch_reported_per_collage():
    rec = HttpRecognizer(ClientConfig(max_retries=0), transport=Scripted((400, "nope")),
                         clock=FakeClock(), api_key="x")
    out = rec.recognize([REQ, CollageRequest("0b73a3623d.jpeg", 4, b"x")], CATS)
    assert list(out) == ["0b73a3623d.jpeg", "a72bca2a3e.jpeg"]
    assert all(r.error and all(v is None for v in r.labels.values()) for r in out.values())
