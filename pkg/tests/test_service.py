import copy

import pytest
from fastapi.testclient import TestClient

from bevkit.configs import ConfigError, default_config_path, load_config
from bevkit.service.app import app

client = TestClient(app)


@pytest.fixture(scope="module")
def small_config():
    """Default config shrunk for endpoint tests."""
    config = load_config(default_config_path())
    data = config.model_dump(mode="json")
    data["depth"]["iter_sweep"] = [0, 1]
    data["nms"]["n_suites"] = 8
    data["pool"]["bench_grid"] = [{"n": 5000, "x": 32, "y": 32, "c": 8}]
    data["pool"]["equivalence_batches"] = 2
    data["pool"]["equivalence_max_n"] = 20000
    data["pool"]["repeats"] = 1
    return data


class TestConfigLoading:
    def test_default_config_resolves_scene_paths(self):
        config = load_config(default_config_path())
        assert config.depth.scene["schema_version"] == 1
        assert config.depth.moving_scene is not None
        assert config.depth.scene_spec().d_min == 2.0

    def test_seed_override(self):
        config = load_config(default_config_path(), seed_override=7)
        assert config.seed == 7

    def test_missing_file_raises_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.yaml")

    def test_missing_scene_file_raises(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("schema_version: 1\ndepth:\n  scene: missing.yaml\n")
        with pytest.raises(ConfigError, match="scene file not found"):
            load_config(bad)

    def test_parse_error_is_diagnosed(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("depth: [unclosed\n")
        with pytest.raises(ConfigError, match="parse"):
            load_config(bad)

    def test_bad_schema_version_rejected(self, tmp_path):
        bad = tmp_path / "cfg.yaml"
        bad.write_text("schema_version: 9\ndepth:\n  scene: {}\n")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestHealth:
    def test_health_endpoint(self):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert "version" in body


class TestDepthEndpoint:
    def test_returns_checks_and_report(self, small_config):
        resp = client.post("/v1/depth", json={"config": small_config})
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"ok", "checks", "report"}
        assert "static_mu_median_non_increasing" in body["checks"]
        scenarios = body["report"]["scenarios"]
        assert {"static", "zero_baseline", "moving"} <= set(scenarios)
        rows = body["report"]["rows"]
        assert any(r["variant"] == "fused" for r in rows)
        # full resolved config embedded for provenance
        assert body["report"]["config"]["depth"]["stereo"]["k_candidates"] == 9

    def test_invalid_config_is_rejected(self, small_config):
        broken = copy.deepcopy(small_config)
        broken["depth"]["stereo"]["k_candidates"] = 1
        resp = client.post("/v1/depth", json={"config": broken})
        assert resp.status_code == 422


class TestNmsEndpoint:
    def test_smoke_run_emits_best_table(self, small_config):
        resp = client.post("/v1/nms", json={"config": small_config})
        assert resp.status_code == 200
        body = resp.json()
        assert "class_aware/size_aware" in body["report"]["best"]
        assert body["report"]["fixtures"]["concentric_analog"]["iou_small_pair"] == 0.0


class TestPoolEndpoint:
    def test_smoke_run_reports_rows_and_checks(self, small_config):
        resp = client.post("/v1/pool", json={"config": small_config})
        assert resp.status_code == 200
        body = resp.json()
        assert body["checks"]["deterministic_mode_bit_identical"]
        assert body["checks"]["atomic_mode_within_tolerance"]
        assert any(r["variant"] == "v2_atomic" for r in body["report"]["rows"])


class TestSceneEndpoint:
    @pytest.mark.parametrize("preset", ["static-planes", "moving-object", "random"])
    def test_presets_produce_valid_scenes(self, preset):
        resp = client.post("/v1/scene", json={"preset": preset, "seed": 5})
        assert resp.status_code == 200
        body = resp.json()
        assert body["scene"]["schema_version"] == 1
        assert body["scene"]["seed"] == 5
        assert "objects:" in body["yaml_text"]

    def test_unknown_preset_rejected(self):
        resp = client.post("/v1/scene", json={"preset": "volcano"})
        assert resp.status_code == 422
