import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from openset_al import synth
from openset_al.bundle import load_bundle
from openset_al.data import SampleRecord, write_embeddings, write_metadata
from openset_al.orchestrator import OracleLabeler, run_experiment
from openset_al.service import create_app
from openset_al.synth import SynthSpec

SERVICE_CONFIG = """\
budget_L = 8
rounds_R = 2
percentile_M = 25
batches_B = 2
tau = 0.01
seed = 4
training.epochs = 20
training.lr = 0.5
training.lr_decay_every = 15
training.hidden_dim = 16
id_class_names = id_0, id_1, id_2
ood_class_names = ood_0, ood_1, ood_2, ood_3
task_description = synthetic open-set benchmark
"""


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data"
    synth.generate(
        SynthSpec(
            id_classes=3, ood_classes=4, samples_per_class=25, dim=16,
            cluster_separation=4.0, seed=9, test_per_class=10,
        ),
        data,
    )
    config = tmp_path / "config.txt"
    config.write_text(SERVICE_CONFIG)
    journal = tmp_path / "journal"
    return config, data, journal


@pytest.fixture
def client(workspace):
    config, data, journal = workspace
    app = create_app(config, data, journal_dir=journal)
    return TestClient(app)


def _truth_label(data_dir, config_path, sid):
    bundle = load_bundle(config_path, data_dir)
    record = bundle.train.record(sid)
    if record.oracle_label < bundle.catalog.id_count:
        return f"class:{record.oracle_label}"
    return "non-target"


def _label_everything(client, workspace, session, payload=None):
    config, data, _ = workspace
    bundle = load_bundle(config, data)
    query = payload or client.get(f"/sessions/{session}/query").json()
    labels = {}
    for sample in query["query"]:
        record = bundle.train.record(sample["sample_id"])
        if record.oracle_label < bundle.catalog.id_count:
            labels[sample["sample_id"]] = f"class:{record.oracle_label}"
        else:
            labels[sample["sample_id"]] = "non-target"
    response = client.post(f"/sessions/{session}/labels", json=labels)
    assert response.status_code == 200
    return response.json()


class TestSessionCreation:
    def test_create_returns_query(self, client):
        response = client.post("/sessions", json={})
        assert response.status_code == 201
        body = response.json()
        assert body["round"] == 1
        assert body["state"] == "awaiting_labels"
        assert len(body["query"]) == 8
        assert body["id_class_names"] == ["id_0", "id_1", "id_2"]
        assert len(body["pool_scatter"]) > 0
        assert all(s["label"] is None for s in body["query"])

    def test_budget_exceeding_pool_is_400(self, workspace, tmp_path):
        config, data, journal = workspace
        big = tmp_path / "big.txt"
        big.write_text(SERVICE_CONFIG.replace("budget_L = 8", "budget_L = 9999"))
        app = create_app(big, data, journal_dir=journal)
        response = TestClient(app).post("/sessions", json={})
        assert response.status_code == 400
        assert "budget" in response.json()["detail"]

    def test_missing_data_is_409(self, client):
        response = client.post("/sessions", json={"data": "/nowhere/at/all"})
        assert response.status_code == 409

    def test_invalid_config_is_400(self, client, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("garbage_key = 1\nid_class_names = a, b\n")
        response = client.post("/sessions", json={"config": str(bad)})
        assert response.status_code == 400

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/zzz/query").status_code == 404
        assert client.post("/sessions/zzz/advance").status_code == 404


class TestLabeling:
    def test_label_and_remaining(self, client, workspace):
        session = client.post("/sessions", json={}).json()
        sid = session["query"][0]["sample_id"]
        config, data, _ = workspace
        response = client.post(
            f"/sessions/{session['session_id']}/labels",
            json={sid: _truth_label(data, config, sid)},
        )
        assert response.status_code == 200
        assert response.json()["remaining"] == 7
        refreshed = client.get(f"/sessions/{session['session_id']}/query").json()
        labeled = [s for s in refreshed["query"] if s["sample_id"] == sid]
        assert labeled[0]["label"] is not None

    def test_relabel_conflict(self, client, workspace):
        session = client.post("/sessions", json={}).json()
        sid = session["query"][0]["sample_id"]
        config, data, _ = workspace
        value = _truth_label(data, config, sid)
        assert client.post(
            f"/sessions/{session['session_id']}/labels", json={sid: value}
        ).status_code == 200
        assert client.post(
            f"/sessions/{session['session_id']}/labels", json={sid: value}
        ).status_code == 409

    def test_malformed_label_422(self, client):
        session = client.post("/sessions", json={}).json()
        sid = session["query"][0]["sample_id"]
        for bad in ("class:99", "class:x", "tumor", ""):
            response = client.post(
                f"/sessions/{session['session_id']}/labels", json={sid: bad}
            )
            assert response.status_code == 422, bad

    def test_unknown_sample_404(self, client):
        session = client.post("/sessions", json={}).json()
        response = client.post(
            f"/sessions/{session['session_id']}/labels", json={"nope": "non-target"}
        )
        assert response.status_code == 404

    def test_label_map_rejected_atomically(self, client):
        session = client.post("/sessions", json={}).json()
        sid = session["session_id"]
        good, other = (s["sample_id"] for s in session["query"][:2])
        response = client.post(
            f"/sessions/{sid}/labels", json={good: "non-target", other: "bogus"}
        )
        assert response.status_code == 422
        # the valid entry must not have been applied
        refreshed = client.get(f"/sessions/{sid}/query").json()
        assert refreshed["remaining"] == 8
        assert all(s["label"] is None for s in refreshed["query"])

    def test_advance_with_unlabeled_409(self, client):
        session = client.post("/sessions", json={}).json()
        response = client.post(f"/sessions/{session['session_id']}/advance")
        assert response.status_code == 409


class TestRoundLoop:
    def test_two_rounds_to_done(self, client, workspace):
        session = client.post("/sessions", json={}).json()
        sid = session["session_id"]
        _label_everything(client, workspace, sid, session)
        second = client.post(f"/sessions/{sid}/advance")
        assert second.status_code == 200
        body = second.json()
        assert body["state"] == "awaiting_labels"
        assert body["round"] == 2
        _label_everything(client, workspace, sid)
        final = client.post(f"/sessions/{sid}/advance").json()
        assert final["state"] == "done"
        assert len(final["report"]) == 2
        metrics = client.get(f"/sessions/{sid}/metrics").json()
        assert metrics["state"] == "done"
        assert metrics["rounds"] == final["report"]
        # a third advance is rejected
        assert client.post(f"/sessions/{sid}/advance").status_code == 409

    def test_cross_mode_equivalence(self, client, workspace):
        config_path, data_dir, _ = workspace
        session = client.post("/sessions", json={}).json()
        sid = session["session_id"]
        for _ in range(2):
            _label_everything(client, workspace, sid)
            client.post(f"/sessions/{sid}/advance")
        http_rounds = client.get(f"/sessions/{sid}/metrics").json()["rounds"]

        bundle = load_bundle(config_path, data_dir)
        records = run_experiment(
            bundle.config, bundle.catalog, bundle.train, bundle.prompts,
            OracleLabeler(bundle.train, bundle.catalog.id_count),
            "openpath", bundle.test,
        )
        cli_rounds = [r.to_json_dict() for r in records]
        assert http_rounds == cli_rounds

    def test_oracle_session_matches_simulation(self, client, workspace):
        config_path, data_dir, _ = workspace
        session = client.post("/sessions", json={"oracle": True}).json()
        sid = session["session_id"]
        assert all(s["label"] is not None for s in session["query"])
        while True:
            response = client.post(f"/sessions/{sid}/advance").json()
            if response["state"] == "done":
                break
        http_rounds = client.get(f"/sessions/{sid}/metrics").json()["rounds"]
        bundle = load_bundle(config_path, data_dir)
        records = run_experiment(
            bundle.config, bundle.catalog, bundle.train, bundle.prompts,
            OracleLabeler(bundle.train, bundle.catalog.id_count),
            "openpath", bundle.test,
        )
        assert http_rounds == [r.to_json_dict() for r in records]


class TestJournalRecovery:
    def test_restart_recovers_pending_state(self, workspace):
        config, data, journal = workspace
        app1 = create_app(config, data, journal_dir=journal)
        client1 = TestClient(app1)
        session = client1.post("/sessions", json={}).json()
        sid = session["session_id"]
        sample = session["query"][0]["sample_id"]
        client1.post(f"/sessions/{sid}/labels", json={sample: "non-target"})

        app2 = create_app(config, data, journal_dir=journal)
        client2 = TestClient(app2)
        recovered = client2.get(f"/sessions/{sid}/query").json()
        assert recovered["round"] == 1
        assert recovered["remaining"] == 7
        ids1 = [s["sample_id"] for s in session["query"]]
        ids2 = [s["sample_id"] for s in recovered["query"]]
        assert ids1 == ids2
        labeled = {s["sample_id"]: s["label"] for s in recovered["query"]}
        assert labeled[sample] == "non-target"

    def test_restart_recovers_advanced_round(self, workspace):
        config, data, journal = workspace
        client1 = TestClient(create_app(config, data, journal_dir=journal))
        session = client1.post("/sessions", json={}).json()
        sid = session["session_id"]
        _label_everything(client1, workspace, sid, session)
        client1.post(f"/sessions/{sid}/advance")

        client2 = TestClient(create_app(config, data, journal_dir=journal))
        recovered = client2.get(f"/sessions/{sid}/query").json()
        assert recovered["round"] == 2
        metrics = client2.get(f"/sessions/{sid}/metrics").json()
        assert len(metrics["rounds"]) == 1


class TestImages:
    def _image_workspace(self, tmp_path):
        data = tmp_path / "imgdata"
        data.mkdir()
        rng = np.random.default_rng(0)
        matrix = rng.normal(size=(12, 8)).astype(np.float32)
        write_embeddings(data / "train_embeddings.bin", matrix)
        records = [
            SampleRecord(
                sample_id=f"s{i}", embedding_index=i, oracle_label=i % 3,
                image_ref=f"s{i}.png" if i % 2 == 0 else None,
            )
            for i in range(12)
        ]
        write_metadata(data / "train_metadata.jsonl", records)
        prompt_matrix = rng.normal(size=(3, 8)).astype(np.float32)
        write_embeddings(data / "prompt_embeddings.bin", prompt_matrix)
        write_metadata(
            data / "prompt_metadata.jsonl",
            [SampleRecord(sample_id=n, embedding_index=i, oracle_label=i)
             for i, n in enumerate(("a", "b", "ood_x"))],
        )
        config = tmp_path / "imgconfig.txt"
        config.write_text(
            "budget_L = 4\nrounds_R = 1\nbatches_B = 1\nseed = 1\n"
            "training.epochs = 2\ntraining.hidden_dim = 4\n"
            "id_class_names = a, b\nood_class_names = ood_x\n"
        )
        patches = tmp_path / "patches"
        patches.mkdir()
        for i in range(0, 12, 2):
            (patches / f"s{i}.png").write_bytes(b"\x89PNG fake bytes " + bytes([i]))
        return config, data, patches

    def test_image_bytes_served_verbatim(self, tmp_path):
        config, data, patches = self._image_workspace(tmp_path)
        app = create_app(config, data, patches_dir=patches, journal_dir=tmp_path / "j")
        client = TestClient(app)
        session = client.post("/sessions", json={}).json()
        sid = session["session_id"]
        with_image = [s for s in session["query"] if s["has_image"]]
        without_image = [s for s in session["query"] if not s["has_image"]]
        if with_image:
            sample = with_image[0]["sample_id"]
            response = client.get(f"/sessions/{sid}/samples/{sample}/image")
            assert response.status_code == 200
            expected = (patches / f"{sample}.png").read_bytes()
            assert response.content == expected
        if without_image:
            sample = without_image[0]["sample_id"]
            response = client.get(f"/sessions/{sid}/samples/{sample}/image")
            assert response.status_code == 404

    def test_no_patches_dir_means_404(self, client):
        session = client.post("/sessions", json={}).json()
        sample = session["query"][0]["sample_id"]
        response = client.get(f"/sessions/{session['session_id']}/samples/{sample}/image")
        assert response.status_code == 404


class TestStaticUi:
    def test_ui_mounted_when_present(self, workspace, tmp_path):
        config, data, journal = workspace
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>annotator</body></html>")
        app = create_app(config, data, journal_dir=journal, ui_dir=ui)
        client = TestClient(app)
        response = client.get("/ui/", follow_redirects=True)
        assert response.status_code == 200
        assert "annotator" in response.text

    def test_root_info_without_ui(self, client):
        body = client.get("/").json()
        assert body["service"] == "openset-al"
