import json
import warnings

import numpy as np
import pytest

from posefit import ops
from posefit.config import resolve_config

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from posefit.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc")
    cfg = resolve_config("synth", overrides={
        "out_dir": str(out), "n_poses": 300, "n_frames": 1})
    summary = ops.run_synth(cfg)
    ckpt = out / "flow.bin"
    ops.run_train_prior(resolve_config("train-prior", overrides={
        "corpus": summary["corpus"], "out": str(ckpt),
        "flow": {"steps": 200}}))
    return out, summary, ckpt


class TestHealth:
    def test_ok(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert "version" in body


class TestEndpoints:
    def test_synth(self, client, tmp_path):
        resp = client.post("/synth", json={
            "config": {"n_poses": 50, "n_frames": 1},
            "sets": [f'out_dir="{tmp_path}"']})
        assert resp.status_code == 200
        body = resp.json()
        assert body["ok"] is True
        assert body["subcommand"] == "synth"
        assert (tmp_path / "corpus.csv").exists()

    def test_sample(self, client, artifacts, tmp_path):
        _, _, ckpt = artifacts
        out = tmp_path / "s.csv"
        resp = client.post("/sample", json={
            "config": {"checkpoint": str(ckpt), "n": 3, "out": str(out)},
            "seed": 4})
        assert resp.status_code == 200
        assert resp.json()["summary"]["n"] == 3
        assert ops.load_pose_csv(out).shape[0] == 3

    def test_fit_with_metrics(self, client, artifacts, tmp_path):
        _, summary, ckpt = artifacts
        out = tmp_path / "r.json"
        resp = client.post("/fit", json={"config": {
            "model": summary["model"],
            "keypoints": summary["keypoints"][0],
            "masks": summary["masks"][0],
            "flow": str(ckpt),
            "ground_truth": summary["ground_truth"],
            "max_iter": 120,
            "out": str(out)}})
        assert resp.status_code == 200
        body = resp.json()
        assert "MPJPE" in body["summary"]["metrics"]
        doc = json.loads(out.read_text())
        assert doc["format"] == "posefit-fit-v1"

    def test_seed_override_applies(self, client, artifacts, tmp_path):
        _, _, ckpt = artifacts
        outs = []
        for name, seed in (("a.csv", 1), ("b.csv", 2), ("c.csv", 1)):
            out = tmp_path / name
            client.post("/sample", json={
                "config": {"checkpoint": str(ckpt), "n": 2, "out": str(out)},
                "seed": seed})
            outs.append(ops.load_pose_csv(out))
        assert np.array_equal(outs[0], outs[2])
        assert not np.array_equal(outs[0], outs[1])


class TestErrorMapping:
    def test_config_error_is_400_exit_2(self, client):
        resp = client.post("/synth", json={"config": {"bogus_key": 1}})
        assert resp.status_code == 400
        err = resp.json()["error"]
        assert err["exit_code"] == 2
        assert "bogus_key" in err["message"]

    def test_missing_required_is_400(self, client):
        resp = client.post("/sample", json={"config": {}})
        assert resp.status_code == 400
        assert resp.json()["error"]["exit_code"] == 2

    def test_io_error_is_404_exit_4(self, client, tmp_path):
        resp = client.post("/sample", json={"config": {
            "checkpoint": str(tmp_path / "missing.bin"),
            "out": str(tmp_path / "o.csv")}})
        assert resp.status_code == 404
        assert resp.json()["error"]["exit_code"] == 4

    def test_numeric_error_is_422_exit_3(self, client, artifacts, tmp_path):
        # diverging flow training surfaces as a numeric failure
        _, summary, _ = artifacts
        resp = client.post("/train-prior", json={"config": {
            "corpus": summary["corpus"], "out": str(tmp_path / "x.bin"),
            "flow": {"architecture": "real-nvp", "steps": 400,
                     "learning_rate": 1e6}}})
        assert resp.status_code == 422
        assert resp.json()["error"]["exit_code"] == 3

    def test_invalid_body_is_422(self, client):
        resp = client.post("/sample", json={"config": "not a dict"})
        assert resp.status_code == 422
