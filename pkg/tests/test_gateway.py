import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from mind.errors import AuthFailed, BackendError, ExhaustedRetries, PayloadTooLarge
from mind.gateway import (
    BackendConfig,
    InferenceClient,
    MockGateway,
    MockScenario,
    build_chat_request,
    mock_complete,
    mock_parity_accepts,
)
from mind.prompts import INTENTION_LEAD_IN, GenParams, PromptBundle, PromptForge, Stage
from mind.relations import RelationSet

from conftest import DATA_DIR


def bundle_for(stage=Stage.FEATURE_EXTRACTION, text="Describe the product shown in the image.",
               images=("https://img.example/p1.jpg",), seed=7):
    return PromptBundle(stage=stage, text=text, images=images, gen_params=GenParams(seed=seed))


# --- wire format -----------------------------------------------------------------


def test_request_matches_golden_fixture():
    built = build_chat_request(bundle_for(), model_name="llava-test")
    golden = json.loads((DATA_DIR / "golden_request.json").read_text(encoding="utf-8"))
    assert built == golden


def test_local_image_inlined_as_data_uri(tmp_path):
    image = tmp_path / "shot.png"
    payload = b"\x89PNG fake bytes"
    image.write_bytes(payload)
    built = build_chat_request(bundle_for(images=(str(image),)), model_name="m")
    url = built["messages"][0]["content"][1]["image_url"]["url"]
    assert url == "data:image/png;base64," + base64.b64encode(payload).decode()


def test_seed_omitted_when_unset():
    built = build_chat_request(bundle_for(seed=None), model_name="m")
    assert "seed" not in built


# --- scripted endpoint ------------------------------------------------------------


class ScriptedEndpoint:
    """Local HTTP server that replays a list of (status, body) responses."""

    def __init__(self, script=None, delay_s=0.0):
        self.script = list(script or [])
        self.delay_s = delay_s
        self.requests = 0
        self.arrivals: list[float] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                with outer._lock:
                    outer.requests += 1
                    outer.arrivals.append(time.monotonic())
                    outer.in_flight += 1
                    outer.max_in_flight = max(outer.max_in_flight, outer.in_flight)
                    status, body = (
                        outer.script.pop(0) if outer.script
                        else (200, {"choices": [{"message": {"content": "ok"}}]})
                    )
                self.rfile.read(int(self.headers.get("Content-Length", 0)))
                if outer.delay_s:
                    time.sleep(outer.delay_s)
                payload = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
                with outer._lock:
                    outer.in_flight -= 1

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture()
def endpoint():
    servers = []

    def factory(script=None, delay_s=0.0):
        server = ScriptedEndpoint(script, delay_s)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.close()


def client_for(server, **overrides) -> InferenceClient:
    fields = dict(endpoint_url=server.url, model_name="m", max_retries=3, timeout_ms=5000)
    fields.update(overrides)
    return InferenceClient(BackendConfig(**fields), sleep=lambda s: None)


def test_retries_429_then_succeeds(endpoint):
    server = endpoint(script=[(429, {"error": "slow down"})])
    response = client_for(server).complete(bundle_for())
    assert response.text == "ok"
    assert response.attempt == 2
    assert server.requests == 2


def test_auth_failure_not_retried(endpoint):
    server = endpoint(script=[(401, {"error": "bad token"})] * 5)
    with pytest.raises(AuthFailed):
        client_for(server).complete(bundle_for())
    assert server.requests == 1


def test_payload_too_large(endpoint):
    server = endpoint(script=[(413, {"error": "too big"})])
    with pytest.raises(PayloadTooLarge):
        client_for(server).complete(bundle_for())
    assert server.requests == 1


def test_other_4xx_not_retried(endpoint):
    server = endpoint(script=[(404, {"error": "nope"})] * 3)
    with pytest.raises(BackendError):
        client_for(server).complete(bundle_for())
    assert server.requests == 1


def test_persistent_5xx_exhausts_retries(endpoint):
    server = endpoint(script=[(500, {"error": "boom"})] * 10)
    with pytest.raises(ExhaustedRetries) as exc:
        client_for(server, max_retries=2).complete(bundle_for())
    assert exc.value.attempts == 3
    assert server.requests == 3


def test_connection_refused_is_transient():
    config = BackendConfig(
        endpoint_url="http://127.0.0.1:9", model_name="m", max_retries=1, timeout_ms=500
    )
    client = InferenceClient(config, sleep=lambda s: None)
    with pytest.raises(ExhaustedRetries):
        client.complete(bundle_for())


def test_max_parallel_bounds_in_flight_requests(endpoint):
    server = endpoint(delay_s=0.05)
    client = client_for(server, max_parallel=2)
    threads = [
        threading.Thread(target=client.complete, args=(bundle_for(text=f"t{i}"),))
        for i in range(6)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert server.requests == 6
    assert server.max_in_flight <= 2


def test_min_request_interval_spaces_starts(endpoint):
    server = endpoint()
    client = InferenceClient(
        BackendConfig(endpoint_url=server.url, model_name="m",
                      min_request_interval_ms=60, timeout_ms=5000)
    )
    threads = [
        threading.Thread(target=client.complete, args=(bundle_for(text=f"t{i}"),))
        for i in range(4)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    arrivals = sorted(server.arrivals)
    gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
    assert all(gap >= 0.045 for gap in gaps), gaps


# --- mock backend ------------------------------------------------------------------


@pytest.fixture(scope="module")
def rendered():
    relations = RelationSet.default()
    forge = PromptForge()
    from mind.catalog import Product

    a = Product(product_id="A", title="Mouse", image_refs=["img/a.jpg"],
                extracted_features="smooth tracking")
    b = Product(product_id="B", title="Keyboard", image_refs=["img/b.jpg"],
                extracted_features="quiet keys")
    generation = forge.render_intention_prompt((a, b), relations.get("UsedFor"))
    open_generation = forge.render_intention_prompt((a, b), relations.get("Open"))
    filtering = forge.render_filter_prompt((a, b), relations.get("UsedFor"),
                                           "they both are used for travel")
    return generation, open_generation, filtering


def test_mock_is_pure(rendered):
    generation, _, _ = rendered
    first = mock_complete(generation, MockScenario.WELL_FORMED)
    second = mock_complete(generation, MockScenario.WELL_FORMED)
    assert first.text == second.text
    assert first.attempt == 1


def test_mock_wellformed_generation_starts_with_template(rendered):
    generation, open_generation, _ = rendered
    text = mock_complete(generation, MockScenario.WELL_FORMED).text
    assert text.startswith(f"{INTENTION_LEAD_IN} they both are used for")
    open_text = mock_complete(open_generation, MockScenario.WELL_FORMED).text
    assert open_text.startswith(INTENTION_LEAD_IN)


def test_mock_always_reject_starts_with_no(rendered):
    _, _, filtering = rendered
    assert mock_complete(filtering, MockScenario.ALWAYS_REJECT).text.startswith("No, ")


def test_mock_overlong_exceeds_word_cap(rendered):
    generation, _, _ = rendered
    text = mock_complete(generation, MockScenario.OVER_LONG_INTENTION).text
    assert len(text.split()) > 120


def test_mock_verdict_matches_parity_rule(rendered):
    _, _, filtering = rendered
    text = mock_complete(filtering, MockScenario.WELL_FORMED).text
    expected = "Yes" if mock_parity_accepts(filtering) else "No"
    assert text.startswith(expected)


def test_mock_gateway_wraps_scenario(rendered):
    generation, _, _ = rendered
    gateway = MockGateway(MockScenario.MISSING_PREFIX)
    assert gateway.complete(generation).text == mock_complete(
        generation, MockScenario.MISSING_PREFIX
    ).text
