"""HTTP facade: sessions, SSE streams, ingestion, stats, health."""

import json
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from gmpilot.agent import AutoMockBackend, MockBackend
from gmpilot.engine import Engine
from gmpilot.service import create_app

from conftest import (
    FORM483_ACME,
    SCENARIO_QUERY,
    build_fixture_engine,
    scenario_chunk_ids,
    scenario_script,
)


@pytest.fixture()
def service(tmp_path):
    engine = build_fixture_engine(tmp_path / "data")
    app = create_app(engine)
    with TestClient(app) as client:
        yield client, engine


def sse_events(response) -> list[dict]:
    events = []
    for line in response.iter_lines():
        if line.startswith("data: "):
            events.append(json.loads(line[len("data: ") :]))
    return events


def new_session(client) -> str:
    resp = client.post("/v1/sessions")
    assert resp.status_code == 200
    return resp.json()["session_id"]


def stream_query(client, session_id, query) -> list[dict]:
    with client.stream(
        "POST", f"/v1/sessions/{session_id}/query", json={"query": query}
    ) as resp:
        assert resp.status_code == 200
        return sse_events(resp)


# --- query streaming ------------------------------------------------------------

def test_query_streams_steps_then_final(service):
    client, engine = service
    ids = scenario_chunk_ids(engine)
    engine.backend = MockBackend(scenario_script(ids))
    events = stream_query(client, new_session(client), SCENARIO_QUERY)
    types = [e["type"] for e in events]
    assert types[-1] == "final"
    assert types.count("final") == 1
    assert "thought" in types and "action" in types and "observation" in types
    # action events are immediately followed by their observation
    for i, t in enumerate(types):
        if t == "action":
            assert types[i + 1] == "observation"
    seqs = [e["seq"] for e in events]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    final = events[-1]
    assert final["payload"]["answer"]["checklist"]
    assert final["payload"]["answer"]["regulatory_basis"]


def test_query_busy_session_rejected(service):
    client, engine = service
    sid = new_session(client)

    class SlowBackend(AutoMockBackend):
        def complete(self, prompt):
            import time

            time.sleep(0.3)
            return super().complete(prompt)

    engine.backend = SlowBackend()

    def run_stream():
        return stream_query(client, sid, "aseptic design requirements")

    with ThreadPoolExecutor(max_workers=2) as pool:
        first = pool.submit(run_stream)
        import time

        time.sleep(0.1)  # let the first query mark the session running
        second = client.post(f"/v1/sessions/{sid}/query", json={"query": "x"})
        assert second.status_code == 409
        assert second.json()["error"] == "SessionBusy"
        assert first.result()[-1]["type"] in ("final", "error")


def test_query_empty_rejected(service):
    client, _ = service
    sid = new_session(client)
    resp = client.post(f"/v1/sessions/{sid}/query", json={"query": "   "})
    assert resp.status_code == 400
    assert resp.json()["error"] == "EmptyQuery"


def test_query_unknown_session(service):
    client, _ = service
    resp = client.post("/v1/sessions/doesnotexist/query", json={"query": "x"})
    assert resp.status_code == 404


def test_backend_failure_surfaces_as_error_event_not_dropped_connection(service):
    client, engine = service
    engine.backend = MockBackend([])  # exhausted from the first call
    sid = new_session(client)
    events = stream_query(client, sid, "anything at all")
    assert events[-1]["type"] == "error"
    assert events[-1]["payload"]["error"] == "BackendUnavailable"


def test_crash_isolation_between_sessions(service):
    client, engine = service
    engine.backend = MockBackend([])
    bad = new_session(client)
    events = stream_query(client, bad, "fails")
    assert events[-1]["type"] == "error"
    # the failed session is busy-block-free but marked failed; others still work
    engine.backend = AutoMockBackend()
    good = new_session(client)
    ok_events = stream_query(client, good, "aseptic processing design requirements")
    assert ok_events[-1]["type"] == "final"


def test_stream_integrity_under_parallel_sessions(service):
    client, engine = service
    engine.backend = AutoMockBackend()

    def one_client(i):
        sid = new_session(client)
        events = stream_query(client, sid, f"aseptic query number {i}")
        seqs = [e["seq"] for e in events]
        assert seqs == list(range(len(seqs)))
        terminal = [e for e in events if e["type"] in ("final", "error")]
        assert len(terminal) == 1 and events[-1] is terminal[0]
        return events[-1]["type"]

    with ThreadPoolExecutor(max_workers=6) as pool:
        outcomes = list(pool.map(one_client, range(12)))
    assert all(o == "final" for o in outcomes)


# --- ingestion --------------------------------------------------------------------

def test_ingest_regulatory_reports_stats_delta(service):
    client, engine = service
    before = client.get("/v1/stats").json()["corpus"]
    payload = "\n".join(
        json.dumps({"title": f"extra {i}", "body": f"Sec. 210.{i} extra regulation text"})
        for i in range(3)
    )
    resp = client.post("/v1/ingest/regulatory", content=payload)
    assert resp.status_code == 200
    report = resp.json()
    assert report["documents"] == 3
    after = client.get("/v1/stats").json()["corpus"]
    assert after["documents"]["Regulatory"] - before["documents"]["Regulatory"] == 3
    assert after["chunks"]["Regulatory"] - before["chunks"]["Regulatory"] == report["chunks"]


def test_ingest_unknown_kind(service):
    client, _ = service
    resp = client.post("/v1/ingest/bogus", content="x")
    assert resp.status_code == 404
    assert resp.json()["error"] == "UnknownKind"


def test_ingest_oversized_observation_maps_to_422(service):
    client, _ = service
    body = "===OBS===\n" + "z" * 40_001
    resp = client.post("/v1/ingest/form483", content=body)
    assert resp.status_code == 422
    assert resp.json()["error"] == "ObservationTooLarge"


def test_ingest_alignment_decisions(service):
    client, _ = service
    decision = {
        "action": "merge",
        "targets": ["firm:acme pharma"],
        "confirmed_by": "qa",
        "timestamp": "2024-01-01T00:00:00+00:00",
    }
    resp = client.post("/v1/ingest/alignment_decisions", content=json.dumps(decision))
    assert resp.status_code == 200
    assert resp.json()["decisions"] == 1


# --- stats and health -----------------------------------------------------------------

def test_stats_match_corpus_module_exactly(service):
    client, engine = service
    via_http = client.get("/v1/stats").json()
    assert via_http["corpus"] == engine.store.corpus_stats().to_dict()
    assert via_http["corpus"]["documents"]["Form483"] == 2
    assert via_http["risk"]["part_counts"]["211"] >= 1


def test_fresh_server_zeroed_stats_and_healthy(tmp_path):
    engine = Engine(tmp_path / "empty")
    with TestClient(create_app(engine)) as client:
        stats = client.get("/v1/stats").json()
        assert stats["corpus"]["observations"] == 0
        assert all(v == 0 for v in stats["corpus"]["documents"].values())
        health = client.get("/v1/healthz").json()
        assert health["status"] == "ok"
        assert health["snapshot_id"]


def test_health_snapshot_swaps_atomically_on_ingest(service):
    client, engine = service
    before = client.get("/v1/healthz").json()["snapshot_id"]
    old_snapshot = engine.snapshot
    client.post("/v1/ingest/form483", content=FORM483_ACME.replace("aseptic line", "second line"))
    after = client.get("/v1/healthz").json()["snapshot_id"]
    assert after != before
    # the superseded snapshot object is untouched by the swap
    assert old_snapshot.snapshot_id == before


def test_chunk_fetch_for_citation_links(service):
    client, engine = service
    ids = scenario_chunk_ids(engine)
    resp = client.get(f"/v1/chunks/{ids['211.42']}")
    assert resp.status_code == 200
    body = resp.json()
    assert body["chunk_id"] == ids["211.42"]
    assert "Sec. 211.42" in body["text"]
    assert client.get("/v1/chunks/missing").status_code == 404
