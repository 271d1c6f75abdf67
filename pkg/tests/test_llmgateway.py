import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest

from duet.llmgateway import (ROLES, AuthError, Endpoint, GenRequest, HashedBowEmbedder, LLMClient, PromptRegistry,
                             PromptTemplate, ProtocolError, RemoteEmbedder, RetryPolicy, TemplateError,
                             TransportError, embed, parse_template_file, render_template, set_max_in_flight,
                             max_in_flight)


# ---------------------------------------------------------------- templates

def test_render_cases():
    assert render_template(PromptTemplate("t", "Hi {x}"), {"x": "there", "extra": 1}) == "Hi there"
    with pytest.raises(TemplateError, match="user_history"):
        render_template("Look at {user_history}", {})
    assert render_template("{{x}}", {"x": "ignored"}) == "{x}"


def test_unbalanced_template_rejected():
    with pytest.raises(TemplateError):
        PromptTemplate("t", "oops {x", "cue")
    with pytest.raises(TemplateError):
        PromptTemplate("t", "fine", "not_a_role")


def test_default_registry_covers_roles():
    reg = PromptRegistry.default()
    assert {t.role for t in (reg[i] for i in reg.ids())} == set(ROLES)
    assert reg["cue"].placeholders == ["history"]
    assert set(reg["predict"].placeholders) >= {"user_profile", "item_profile"}
    for i in reg.ids():
        reg[i].placeholders  # every shipped body parses


def test_registry_from_directory(tmp_path):
    (tmp_path / "a.txt").write_text("---\nid: greet\nrole: cue\n---\nHello {name}\n")
    (tmp_path / "skip.json").write_text("{}")
    reg = PromptRegistry.from_directory(tmp_path)
    assert reg.ids() == ["greet"] and render_template(reg["greet"], {"name": "x"}) == "Hello x"
    assert parse_template_file("plain {y}", "fallback").id == "fallback"


# ---------------------------------------------------------------- transport

def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def client_with(handler, retry=RetryPolicy(max_retries=3, base_delay=0.5), **kw):
    slept = []
    c = LLMClient(Endpoint("http://stub", "m", api_key="secret"), retry=retry,
                  transport=httpx.MockTransport(handler), sleep=slept.append, **kw)
    return c, slept


def test_retry_on_429_then_success():
    calls = []

    def handler(req):
        calls.append(json.loads(req.content))
        return httpx.Response(429) if len(calls) <= 2 else chat_reply("4")

    c, slept = client_with(handler)
    assert c.generate(GenRequest("predict", {"user_profile": "a", "item_profile": "b", "r_min": 1, "r_max": 5})) == "4"
    assert len(calls) == 3 and slept == [0.5, 1.0] and c.backoff_log == [0.5, 1.0]
    body = calls[0]
    assert body["model"] == "m" and body["temperature"] == 0 and [m["role"] for m in body["messages"]] == \
        ["system", "user"]


def test_auth_error_is_immediate():
    calls = []

    def handler(req):
        calls.append(req)
        assert req.headers["Authorization"] == "Bearer secret"
        return httpx.Response(401)

    c, slept = client_with(handler)
    with pytest.raises(AuthError):
        c.generate(GenRequest("cue", {"history": "x"}))
    assert len(calls) == 1 and slept == []


def test_retry_budget_exhausted():
    calls = []

    def handler(req):
        calls.append(req)
        return httpx.Response(503)

    c, slept = client_with(handler, retry=RetryPolicy(max_retries=2, base_delay=1, factor=3, max_delay=2))
    with pytest.raises(TransportError):
        c.generate(GenRequest("cue", {"history": "x"}))
    assert len(calls) == 3 and slept == [1, 2]


def test_timeout_is_retried():
    n = []

    def handler(req):
        n.append(1)
        if len(n) == 1:
            raise httpx.ReadTimeout("slow", request=req)
        return chat_reply("ok")

    c, slept = client_with(handler)
    assert c.generate(GenRequest("cue", {"history": "x"})) == "ok" and len(slept) == 1


def test_non_json_is_protocol_error():
    c, _ = client_with(lambda req: httpx.Response(200, text="<html>"))
    with pytest.raises(ProtocolError):
        c.generate(GenRequest("cue", {"history": "x"}))
    c, _ = client_with(lambda req: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(ProtocolError):
        c.generate(GenRequest("cue", {"history": "x"}))


def test_predict_role_forces_temperature_zero():
    c, _ = client_with(lambda req: chat_reply("3"))
    with pytest.raises(ValueError):
        c.generate(GenRequest("predict", {"user_profile": "a", "item_profile": "b", "r_min": 1, "r_max": 5},
                              temperature=0.7))


def test_in_flight_limit():
    old = max_in_flight()
    try:
        set_max_in_flight(2)
        assert max_in_flight() == 2
        with pytest.raises(ValueError):
            set_max_in_flight(0)
    finally:
        set_max_in_flight(old)


def test_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("DUET_EMBED_BASE_URL", "http://e/")
    monkeypatch.setenv("DUET_EMBED_API_KEY", "k")
    ep = Endpoint.from_env("m", kind="embed")
    assert ep.base_url == "http://e" and ep.api_key == "k"
    monkeypatch.delenv("DUET_LLM_BASE_URL", raising=False)
    with pytest.raises(TransportError):
        Endpoint.from_env()


class EchoHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path.endswith("/embeddings"):
            out = {"data": [{"index": n, "embedding": [float(len(t)), 1.0]} for n, t in enumerate(body["input"])]}
        else:
            out = {"choices": [{"message": {"content": body["messages"][-1]["content"]}}]}
        blob = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


@pytest.fixture
def echo_server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), EchoHandler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1"
    srv.shutdown()
    srv.server_close()


def test_real_socket_echo(echo_server):
    c = LLMClient(Endpoint(echo_server, "m"))
    prompt = render_template(c.registry["cue"], {"history": "loved the funk"})
    assert c.generate(GenRequest("cue", {"history": "loved the funk"})) == prompt
    e = RemoteEmbedder(Endpoint(echo_server, "m"), batch_size=2)
    np.testing.assert_array_equal(e.embed(["a", "bb", "ccc"]), [[1, 1], [2, 1], [3, 1]])


def test_embedding_dimension_mismatch():
    def handler(req):
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0]},
                                                  {"index": 1, "embedding": [1.0, 2.0]}]})
    e = RemoteEmbedder(Endpoint("http://stub"), transport=httpx.MockTransport(handler))
    with pytest.raises(ProtocolError):
        e.embed(["a", "b"])


# ----------------------------------------------------------------- embedder

def test_hashed_embedder():
    h = HashedBowEmbedder()
    a, b = embed(None, ["funk soul", "funk soul"])
    assert np.array_equal(a, b) and a @ b == pytest.approx(1.0)
    x, y = h.embed(["a b", "b a"])
    assert np.array_equal(x, y)
    assert np.linalg.norm(h.embed_one("several words here")) == pytest.approx(1.0)
    vocab = [f"tok{n}" for n in range(200)]
    left, right = [], []
    used = set()
    for t in vocab:
        bkt = h.bucket(t)
        if bkt in used:
            continue
        used.add(bkt)
        (left if len(left) <= len(right) else right).append(t)
    u, v = h.embed([" ".join(left[:5]), " ".join(right[:5])])
    assert u @ v == 0.0
    assert h.bucket("funk") == HashedBowEmbedder().bucket("funk")
