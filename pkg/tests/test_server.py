import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from surfvae.server import create_app
from surfvae.surfaces import flatten
from surfvae.vae import decode, encode


@pytest.fixture(scope="module")
def client(tiny_model_module):
    return TestClient(create_app(tiny_model_module))


@pytest.fixture(scope="module")
def tiny_model_module():
    from surfvae.synth import SynthConfig, generate
    from surfvae.vae import TrainConfig, build_model, train

    corpus = generate(SynthConfig(seed=3, n_stocks=2, n_days=150)).corpus
    trained, _ = train(build_model(seed=5), corpus, TrainConfig(epochs=4, seed=5))
    return trained


class TestMeta:
    def test_latent_dim_and_grid(self, client):
        meta = client.get("/model/meta").json()
        assert meta["latent_dim"] == 3
        assert meta["grid"]["terms"] == [3, 6, 9, 12, 18, 24, 36, 48]
        assert len(meta["thresholds"]) == 3

    def test_cors_allows_browser_clients(self, client):
        r = client.get("/model/meta", headers={"Origin": "http://localhost:5173"})
        assert r.headers.get("access-control-allow-origin") == "*"


class TestDecode:
    def test_matches_library_decode(self, client, tiny_model_module):
        r = client.post("/decode", json={"z": [0.0, 0.0, 0.0]})
        assert r.status_code == 200
        vols = np.array(r.json()["vols"])
        expected = decode(tiny_model_module, np.zeros(3)).vols
        assert vols == pytest.approx(expected, abs=0)

    def test_byte_identical_responses(self, client):
        body = {"z": [0.12, -0.5, 0.33]}
        r1 = client.post("/decode", json=body)
        r2 = client.post("/decode", json=body)
        assert r1.content == r2.content

    def test_wrong_length_is_400(self, client):
        r = client.post("/decode", json={"z": [0.0, 0.0, 0.0, 0.0]})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "z"

    def test_missing_field_is_400(self, client):
        r = client.post("/decode", json={})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "z"

    def test_non_numeric_is_400(self, client):
        r = client.post("/decode", json={"z": ["a", "b", "c"]})
        assert r.status_code == 400

    def test_malformed_json_is_400(self, client):
        r = client.post("/decode", content=b"{nope", headers={"content-type": "application/json"})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "body"


class TestEncode:
    def test_round_trips_against_library(self, client, tiny_model_module):
        surface = decode(tiny_model_module, np.array([0.1, 0.2, -0.1]))
        r = client.post("/encode", json={"vols": surface.vols.tolist()})
        assert r.status_code == 200
        code = encode(tiny_model_module, surface)
        assert np.array(r.json()["mu"]) == pytest.approx(code.mu, abs=0)
        assert np.array(r.json()["log_sigma"]) == pytest.approx(code.log_sigma, abs=0)

    def test_wrong_shape_is_400(self, client):
        r = client.post("/encode", json={"vols": [[0.2] * 7] * 7})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "vols"

    def test_non_positive_vols_rejected(self, client):
        vols = [[0.2] * 7 for _ in range(8)]
        vols[0][0] = -0.1
        r = client.post("/encode", json={"vols": vols})
        assert r.status_code == 400


class TestExtrapolateEndpoint:
    def test_recovers_decodable_surface(self, client, tiny_model_module):
        z_star = np.array([0.2, -0.1, 0.05])
        surface = decode(tiny_model_module, z_star)
        mask = [True] * 14 + [False] * 42
        values = flatten(surface)[:14].tolist()
        r = client.post("/extrapolate", json={"mask": mask, "values": values})
        assert r.status_code == 200
        body = r.json()
        assert len(body["z_hat"]) == 3
        assert body["objective"] <= 1e-6

    def test_mask_length_validated(self, client):
        r = client.post("/extrapolate", json={"mask": [True] * 10, "values": [0.2] * 10})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "mask"

    def test_value_count_validated(self, client):
        mask = [True] * 12 + [False] * 44
        r = client.post("/extrapolate", json={"mask": mask, "values": [0.2] * 11})
        assert r.status_code == 400
        assert r.json()["error"]["field"] == "values"

    def test_empty_mask_rejected(self, client):
        r = client.post("/extrapolate", json={"mask": [False] * 56, "values": []})
        assert r.status_code == 400


def test_roles_present_for_disentangled_model(pca_model):
    client = TestClient(create_app(pca_model))
    meta = client.get("/model/meta").json()
    assert meta["roles"] is not None
    assert set(meta["roles"]) == {"level", "skew", "term"}
    dims = {info["dim"] for info in meta["roles"].values()}
    assert dims == {0, 1, 2}
