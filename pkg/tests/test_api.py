import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cardioserve.api import create_app, map_outcome, parse_wire_request, serialize_wire_request, WireError, WireRequest
from cardioserve.cardionet import Prediction
from cardioserve.dsp import RrMeasurements
from cardioserve.ecg import WIRE_FIELD_BY_LEAD, LeadConfiguration
from cardioserve.engine import (AcquisitionParams, Busy, Engine, EngineConfig, Failure,
                                ProcessResult, Success, Timeout, Unauthorized)
from cardioserve.synth import generate_recording, generate_twelve_lead, sinus_spec

TOKEN = "api-test-token"


@pytest.fixture(scope="module")
def client(toy_models):
    engine = Engine(EngineConfig(tokens=frozenset({TOKEN}), worker_count=2,
                                 queue_capacity=64),
                    models=toy_models)
    engine.start()
    with TestClient(create_app(engine)) as client:
        yield client
    engine.shutdown()


def wire_payload(duration_s=4.0, twelve=False, seed=0):
    generate = generate_twelve_lead if twelve else generate_recording
    rec, _, _ = generate(sinus_spec(), duration_s=duration_s, rate_hz=250.0, seed=seed)
    payload = {"sampleRate": rec.sample_rate_hz, "adcGain": rec.adc_gain,
               "baseline": rec.baseline}
    for lead, values in rec.leads.items():
        payload[WIRE_FIELD_BY_LEAD[lead]] = [float(v) for v in values]
    return payload


def post(client, payload, token=TOKEN, raw=None):
    headers = {"Authorization": f"Bearer {token}"} if token is not None else {}
    if raw is not None:
        headers["Content-Type"] = "application/json"
        return client.post("/api/v1/analyze", content=raw, headers=headers)
    return client.post("/api/v1/analyze", json=payload, headers=headers)


class TestAnalyzeRouting:
    def test_single_lead_request(self, client):
        resp = post(client, wire_payload())
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["model"] == "single_lead"
        assert len(body["predictions"]) == 7
        assert {p["code"] for p in body["predictions"]} >= {"NSR", "AF"}
        assert body["processingMs"] > 0
        assert body["requestId"]

    def test_twelve_lead_request(self, client):
        resp = post(client, wire_payload(twelve=True))
        assert resp.status_code == 200
        assert resp.json()["model"] == "twelve_lead"

    def test_completable_eight_leads(self, client):
        payload = wire_payload(twelve=True)
        for field in ("dataIII", "dataAVR", "dataAVL", "dataAVF"):
            payload.pop(field)
        resp = post(client, payload)
        assert resp.status_code == 200
        assert resp.json()["model"] == "twelve_lead"

    def test_measurements_present_for_rhythm(self, client):
        resp = post(client, wire_payload(duration_s=10.0))
        meas = resp.json()["measurements"]
        assert meas is not None
        assert meas["heartRateBpm"] > 0
        assert meas["rrMeanMs"] > 0
        assert meas["rrStdMs"] >= 0


class TestAnalyzeValidation:
    def test_missing_adc_gain(self, client):
        payload = wire_payload()
        del payload["adcGain"]
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "MISSING_PARAM"

    def test_unknown_field_rejected(self, client):
        payload = wire_payload()
        payload["dataAvr"] = [1.0, 2.0]
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "UNKNOWN_FIELD"

    def test_insufficient_leads(self, client):
        payload = wire_payload()
        payload["dataII"] = list(payload["dataI"])
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "INSUFFICIENT_LEADS"

    def test_data_i_required(self, client):
        payload = wire_payload()
        payload["dataI"] = None
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "INSUFFICIENT_LEADS"

    def test_non_positive_rate(self, client):
        payload = wire_payload()
        payload["sampleRate"] = 0
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "INVALID_PARAM"

    def test_unequal_lead_lengths(self, client):
        payload = wire_payload(twelve=True)
        payload["dataV6"] = payload["dataV6"][:-1]
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "UNEQUAL_LEAD_LENGTHS"

    def test_malformed_json(self, client):
        resp = post(client, None, raw=b"{not json")
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "MALFORMED_JSON"

    def test_non_object_body(self, client):
        resp = post(client, None, raw=b"[1,2,3]")
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "MALFORMED_JSON"

    def test_wrong_type(self, client):
        payload = wire_payload()
        payload["dataI"] = "not-an-array"
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "INVALID_PARAM"

    def test_out_of_band_sample_rate(self, client):
        payload = wire_payload()
        payload["sampleRate"] = 10_000.0
        resp = post(client, payload)
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "INVALID_RECORDING"


class TestAuth:
    def test_no_header(self, client):
        resp = post(client, wire_payload(), token=None)
        assert resp.status_code == 401
        assert resp.json()["error"]["code"] == "UNAUTHORIZED"

    def test_wrong_token(self, client):
        resp = post(client, wire_payload(), token="nope")
        assert resp.status_code == 401

    def test_wrong_scheme(self, client):
        resp = client.post("/api/v1/analyze", json=wire_payload(),
                           headers={"Authorization": "Basic abc"})
        assert resp.status_code == 401


class TestMeta:
    def test_health_idle(self, client):
        resp = client.get("/api/v1/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["queueDepth"] == 0
        assert body["workers"] == 2

    def test_models_listing(self, client):
        body = client.get("/api/v1/models").json()
        assert set(body["models"]) == {"single_lead", "twelve_lead"}
        codes = [l["code"] for l in body["models"]["single_lead"]["labels"]]
        assert "AF" in codes

    def test_unknown_path(self, client):
        assert client.get("/api/v1/nope").status_code == 404


class TestBackpressureAndTimeout:
    def test_busy_maps_to_429(self, toy_models):
        release = threading.Event()

        def slow(task):
            release.wait(10.0)
            return ProcessResult(prediction=Prediction(labels=(("AF", "x"),),
                                                       probabilities=(0.5,)),
                                 measurements=None, model_kind="single_lead")

        engine = Engine(EngineConfig(tokens=frozenset({TOKEN}), worker_count=1,
                                     queue_capacity=1),
                        processor=slow)
        engine.start()
        try:
            with TestClient(create_app(engine)) as client:
                results = []
                # one request occupies the worker, the second fills the queue
                threads = [threading.Thread(
                    target=lambda: results.append(post(client, wire_payload()).status_code))
                    for _ in range(2)]
                for t in threads:
                    t.start()
                time.sleep(0.3)
                busy = post(client, wire_payload())
                assert busy.status_code == 429
                assert busy.json()["error"]["code"] == "BUSY"
                release.set()
                for t in threads:
                    t.join()
                assert results == [200, 200]
        finally:
            release.set()
            engine.shutdown()

    def test_timeout_maps_to_504(self, toy_models):
        gate = threading.Event()

        def stall(task):
            gate.wait(5.0)
            raise RuntimeError("never reached in time")

        engine = Engine(EngineConfig(tokens=frozenset({TOKEN}), worker_count=1,
                                     request_timeout_s=0.2, queue_capacity=8),
                        processor=stall)
        engine.start()
        try:
            with TestClient(create_app(engine)) as client:
                blocker = threading.Thread(target=lambda: post(client, wire_payload()))
                blocker.start()
                time.sleep(0.05)
                resp = post(client, wire_payload())  # expires while queued
                assert resp.status_code == 504
                assert resp.json()["error"]["code"] == "TIMEOUT"
                gate.set()
                blocker.join()
        finally:
            gate.set()
            engine.shutdown()


class TestWireRoundTrip:
    def test_parse_serialize_lossless_1000(self):
        rng = np.random.default_rng(0)
        fields = list(WIRE_FIELD_BY_LEAD.values())
        for _ in range(1000):
            payload = {
                "sampleRate": float(rng.uniform(50, 2000)),
                "adcGain": float(rng.uniform(0.5, 1000)),
                "baseline": float(rng.normal(scale=100)),
                "dataI": rng.normal(size=int(rng.integers(1, 20))).tolist(),
            }
            n = len(payload["dataI"])
            for field in fields[1:]:
                if rng.random() < 0.4:
                    payload[field] = rng.normal(size=n).tolist()
            req = parse_wire_request(payload)
            dumped = serialize_wire_request(req)
            again = parse_wire_request(json.loads(json.dumps(dumped)))
            assert serialize_wire_request(again) == dumped
            for field in fields:
                if field in payload:
                    assert dumped[field] == payload[field]
                else:
                    assert dumped[field] is None

    def test_parse_rejects_unknown_everywhere(self):
        with pytest.raises(WireError) as err:
            parse_wire_request({"sampleRate": 250, "adcGain": 200,
                                "dataI": [1.0], "extraField": 1})
        assert err.value.code == "UNKNOWN_FIELD"

    def test_non_finite_rejected(self):
        with pytest.raises(WireError) as err:
            parse_wire_request({"sampleRate": 250, "adcGain": 200,
                                "dataI": [float("nan")]})
        assert err.value.code == "INVALID_PARAM"


class TestResponseSchema:
    @pytest.fixture(scope="class")
    def schema(self):
        jsonschema = pytest.importorskip("jsonschema")
        doc = json.loads(open("docs/wire-schema.json").read())
        registry_schema = {"$ref": "#/$defs/analyzeResponse", "$defs": doc["$defs"]}
        return jsonschema.Draft202012Validator(registry_schema)

    def random_outcome(self, rng):
        kind = rng.integers(0, 5)
        labels = (("NSR", "Normal sinus rhythm"), ("AF", "Atrial fibrillation"))
        if kind == 0:
            meas = None
            if rng.random() < 0.5:
                meas = RrMeasurements(heart_rate_bpm=float(rng.uniform(30, 200)),
                                      rr_mean_ms=float(rng.uniform(300, 2000)),
                                      rr_std_ms=float(rng.uniform(0, 300)),
                                      r_peak_indices=(0, 100))
            return Success(
                prediction=Prediction(labels=labels,
                                      probabilities=tuple(rng.uniform(0, 1, size=2))),
                measurements=meas,
                model_kind=str(rng.choice(["single_lead", "twelve_lead"])),
                attempts=int(rng.integers(1, 3)),
                duration_ms=float(rng.uniform(0, 500)))
        if kind == 1:
            return Failure(code="PROCESSING_ERROR", message="x", attempts=2)
        if kind == 2:
            return Timeout(waited_ms=float(rng.uniform(0, 1e4)))
        if kind == 3:
            return Unauthorized()
        return Busy()

    def test_mapped_outcomes_validate_1000(self, schema):
        rng = np.random.default_rng(1)
        for i in range(1000):
            outcome = self.random_outcome(rng)
            status, body = map_outcome(outcome, request_id=f"r{i}",
                                       processing_ms=float(rng.uniform(0, 100)))
            schema.validate(body)
            assert (body["status"] == "ok") == (status == 200)
            assert ("error" in body) != (body["status"] == "ok")

    def test_live_responses_validate(self, schema, client):
        ok = post(client, wire_payload()).json()
        schema.validate(ok)
        bad = post(client, {"sampleRate": 250}).json()
        schema.validate(bad)
        unauthorized = post(client, wire_payload(), token="wrong").json()
        schema.validate(unauthorized)


class TestExactlyOneResponse:
    def test_request_response_counters_balance(self, toy_models):
        engine = Engine(EngineConfig(tokens=frozenset({TOKEN}), worker_count=2,
                                     queue_capacity=64),
                        models=toy_models)
        engine.start()
        try:
            with TestClient(create_app(engine)) as client:
                n_ok = 12
                for i in range(n_ok):
                    assert post(client, wire_payload(seed=i)).status_code == 200
                # invalid requests also get exactly one response, no queue leak
                for i in range(5):
                    assert post(client, {"sampleRate": 250}).status_code == 400
                assert engine.stats.submitted == n_ok
                assert engine.stats.completed == n_ok
                assert engine.queue_depth == 0
        finally:
            engine.shutdown()
