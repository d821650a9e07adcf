"""Gateway behavior: caching, retries, rate caps, digests, mocks."""

import threading

import pytest

from framecap.core import FrameRef
from framecap.gateway import (
    BackendAuthError,
    BackendConfig,
    DecodeParams,
    Gateway,
    GatewayError,
    MockBackend,
    MockScript,
    ModelRequest,
    RetriesExhaustedError,
    UnknownBackendError,
    cache_key,
    load_mock_script,
    make_mock_gateway,
)


def _req(prompt="hello", backend="m1", **kw):
    return ModelRequest(backend_id=backend, role="text_judge", prompt=prompt, **kw)


def _img_req(frames, prompt="look", backend="m1", **kw):
    return ModelRequest(
        backend_id=backend, role="vision_judge", prompt=prompt, images=tuple(frames), **kw
    )


def test_request_role_image_invariant():
    with pytest.raises(ValueError):
        ModelRequest(backend_id="b", role="text_judge", prompt="p", images=(FrameRef("v", 0, 0, "u"),))
    with pytest.raises(ValueError):
        ModelRequest(backend_id="b", role="captioner", prompt="p")


def test_mock_reply_and_cache_identity(tmp_path):
    gw = make_mock_gateway(
        {"m1": (("text_judge",), MockScript.constant("A"))}, cache_dir=tmp_path / "cache"
    )
    first = gw.complete(_req())
    assert (first.text, first.cached) == ("A", False)
    second = gw.complete(_req())
    assert (second.text, second.cached) == ("A", True)
    # the backend was only invoked once; the repeat came from cache
    assert len(gw.backend("m1").calls) == 1


def test_unknown_backend():
    gw = make_mock_gateway({"m1": (("text_judge",), MockScript.constant("A"))})
    with pytest.raises(UnknownBackendError):
        gw.complete(_req(backend="gpt9"))


def test_role_not_supported():
    gw = make_mock_gateway({"m1": (("captioner",), MockScript.constant("A"))})
    with pytest.raises(GatewayError, match="lacks role"):
        gw.complete(_req(backend="m1"))


def test_exhausted_retries_counts_attempts():
    gw = make_mock_gateway(
        {"m1": (("text_judge",), MockScript(default="error"))}, max_attempts=4
    )
    with pytest.raises(RetriesExhaustedError, match="4 attempts"):
        gw.complete(_req())
    assert len(gw.backend("m1").calls) == 4


def test_echo_default_policy():
    gw = make_mock_gateway({"m1": (("text_judge",), MockScript(default="echo"))})
    assert gw.complete(_req(prompt="ping")).text == "ping"


def test_auth_error_not_retried():
    class AuthBackend:
        def __init__(self):
            self.calls = []

        def invoke(self, request):
            self.calls.append(request)
            raise BackendAuthError("bad key")

    cfg = BackendConfig(id="m1", kind="mock", roles=("text_judge",), max_attempts=5)
    backend = AuthBackend()
    gw = Gateway({"m1": (cfg, backend)})
    with pytest.raises(BackendAuthError):
        gw.complete(_req())
    assert len(backend.calls) == 1


# --- cache_key ----------------------------------------------------------


@pytest.fixture
def two_images(tmp_path):
    p1 = tmp_path / "f0.png"
    p2 = tmp_path / "f1.png"
    p1.write_bytes(b"frame zero bytes")
    p2.write_bytes(b"frame one bytes")
    return (
        FrameRef("v", 0, 0, str(p1)),
        FrameRef("v", 1, 1, str(p2)),
    )


def test_cache_key_deterministic(two_images):
    a = cache_key(_img_req(two_images))
    b = cache_key(_img_req(two_images))
    assert a == b
    assert len(a) == 64 and set(a) <= set("0123456789abcdef")


def test_cache_key_decode_sensitivity(two_images):
    cold = cache_key(_img_req(two_images, decode=DecodeParams(temperature=0.0)))
    warm = cache_key(_img_req(two_images, decode=DecodeParams(temperature=0.7)))
    assert cold != warm


def test_cache_key_image_order_sensitivity(two_images):
    fwd = cache_key(_img_req(two_images))
    rev = cache_key(_img_req(two_images[::-1]))
    assert fwd != rev


def test_cache_key_prompt_and_backend_sensitivity(two_images):
    base = cache_key(_img_req(two_images))
    assert base != cache_key(_img_req(two_images, prompt="look again"))
    assert base != cache_key(_img_req(two_images, backend="m2"))


def test_cache_key_unreadable_image_names_frame(tmp_path):
    ghost = FrameRef("vid7", 3, 3, str(tmp_path / "missing.png"))
    with pytest.raises(GatewayError, match=r"vid7\[3\]"):
        cache_key(
            ModelRequest(backend_id="b", role="vision_judge", prompt="p", images=(ghost,))
        )


def test_cache_never_crosses_digests(tmp_path, two_images):
    calls = []

    def reply(req):
        calls.append(req.prompt)
        return f"reply to {req.prompt}"

    gw = make_mock_gateway(
        {"m1": (("vision_judge",), MockScript.responder(reply))}, cache_dir=tmp_path / "c"
    )
    r1 = gw.complete(_img_req(two_images, prompt="one"))
    r2 = gw.complete(_img_req(two_images, prompt="two"))
    assert (r1.text, r2.text) == ("reply to one", "reply to two")
    assert gw.complete(_img_req(two_images, prompt="one")).text == "reply to one"
    assert calls == ["one", "two"]


# --- rate limiting and concurrency --------------------------------------


class FakeClock:
    def __init__(self):
        self.t = 0.0
        self.lock = threading.Lock()

    def __call__(self):
        with self.lock:
            return self.t

    def sleep(self, s):
        with self.lock:
            self.t += max(s, 1e-6)


def test_rate_cap_enforced_over_every_window():
    clock = FakeClock()
    gw = make_mock_gateway(
        {"m1": (("text_judge",), MockScript.constant("A"))},
        clock=clock,
        sleep=clock.sleep,
        rpm=2,
    )
    for i in range(7):
        gw.complete(_req(prompt=f"p{i}"))
    stamps = [t for _, t in gw.call_log]
    assert len(stamps) == 7
    for i, start in enumerate(stamps):
        in_window = [t for t in stamps if start <= t < start + 60.0]
        assert len(in_window) <= 2, f"window starting at call {i} saw {len(in_window)} calls"


def test_concurrency_cap_respected():
    active = []
    peak = []
    lock = threading.Lock()
    import time as _time

    def reply(req):
        with lock:
            active.append(1)
            peak.append(len(active))
        _time.sleep(0.01)
        with lock:
            active.pop()
        return "ok"

    cfg = BackendConfig(id="m1", kind="mock", roles=("text_judge",), concurrency=2)
    gw = Gateway({"m1": (cfg, MockBackend(MockScript.responder(reply)))})
    threads = [
        threading.Thread(target=lambda i=i: gw.complete(_req(prompt=f"p{i}")))
        for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert max(peak) <= 2


def test_mock_script_file_loading(tmp_path):
    script_path = tmp_path / "script.yaml"
    script_path.write_text(
        "default: echo\n"
        "replies:\n"
        "  - contains: welding\n"
        "    text: B\n"
        "  - regex: 'Image \\d description'\n"
        "    text: A\n",
        encoding="utf-8",
    )
    script = load_mock_script(script_path)
    assert script.reply_for(_req(prompt="depicting welding here")) == "B"
    assert script.reply_for(_req(prompt="Image 1 description: x")) == "A"
    assert script.reply_for(_req(prompt="nothing matches")) == "nothing matches"
