import json
import socket
import threading
import time

import pytest


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if "test_acceptance" not in report.nodeid or report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {name}: {verdict}", flush=True)

from cardioserve.bundle import save_bundle_file
from cardioserve.cardionet import build, toy_config
from cardioserve.ecg import LeadConfiguration


def build_toy_models(seed=1):
    return {
        LeadConfiguration.SINGLE_LEAD: build(toy_config(LeadConfiguration.SINGLE_LEAD), seed=seed),
        LeadConfiguration.TWELVE_LEAD: build(toy_config(LeadConfiguration.TWELVE_LEAD), seed=seed + 1),
    }


@pytest.fixture(scope="session")
def toy_models():
    return build_toy_models()


@pytest.fixture(scope="session")
def service_dir(tmp_path_factory):
    """Bundles + token file + service config on disk, as a deployment would."""
    import os

    root = tmp_path_factory.mktemp("service")
    models = build_toy_models(seed=3)
    save_bundle_file(models[LeadConfiguration.SINGLE_LEAD].to_bundle(), root / "single_lead.bundle")
    save_bundle_file(models[LeadConfiguration.TWELVE_LEAD].to_bundle(), root / "twelve_lead.bundle")
    (root / "tokens.txt").write_text("test-token-alpha\ntest-token-beta\n")
    # leave a core's worth of headroom for the event loop and test client
    workers = max(1, (os.cpu_count() or 2) // 2)
    (root / "service.json").write_text(json.dumps({
        "token_file": "tokens.txt",
        "single_lead_bundle": "single_lead.bundle",
        "twelve_lead_bundle": "twelve_lead.bundle",
        "worker_count": workers,
        "request_timeout_s": 30.0,
        "queue_capacity": 256,
    }))
    return root


@pytest.fixture(scope="session", autouse=True)
def _single_threaded_blas():
    """Match the serve CLI's deployment posture: one BLAS thread, worker
    threads provide the parallelism."""
    try:
        import threadpoolctl
    except ImportError:
        yield
        return
    with threadpoolctl.threadpool_limits(1, user_api="blas"):
        yield


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="session")
def live_service(service_dir):
    """The real service on a real socket: config file -> engine -> uvicorn."""
    import uvicorn

    from cardioserve.service import ServiceConfig, build_service

    cfg = ServiceConfig.load(service_dir / "service.json")
    engine, app = build_service(cfg)
    engine.start()
    port = free_port()
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                           log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("uvicorn did not start in time")
        time.sleep(0.02)
    yield {"url": f"http://127.0.0.1:{port}", "token": "test-token-alpha", "engine": engine}
    server.should_exit = True
    thread.join(timeout=10.0)
    engine.shutdown()
