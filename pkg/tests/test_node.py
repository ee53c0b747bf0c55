import json
import random
import time

import pytest
from fastapi.testclient import TestClient

from halaltrace.canonical import canonical_bytes
from halaltrace.errors import HTTP_STATUS, ConfigError, CorruptLog
from halaltrace.identity import public_key_hex
from halaltrace.ledger import create_genesis
from halaltrace.node import (
    LOG_FILENAME,
    NodeConfig,
    NodeService,
    ValidatorSpec,
    load_chain,
    parse_config,
    persist_block,
)
from helpers import Bench, cultivator_body, det_key, maker_body, merchant_body


def _write_config(tmp_path, **overrides):
    lines = {
        "listen_addr": "127.0.0.1:8470",
        "data_dir": str(tmp_path / "data"),
        "round_timer_seconds": "0.5",
        "batch_size": "50",
        "admin_id": "admin-1",
        "admin_public_key": public_key_hex(det_key("admin")),
        "validator.v1.stake": "1",
        "validator.v2.stake": "3",
    }
    lines.update(overrides)
    path = tmp_path / "node.conf"
    body = "# test node config\n" + "\n".join(
        f"{k} = {v}" for k, v in lines.items() if v is not None)
    path.write_text(body + "\n")
    return path


class TestConfig:
    def test_parse_full_config(self, tmp_path):
        config = parse_config(_write_config(tmp_path))
        assert config.listen_port == 8470
        assert config.batch_size == 50
        assert [v.validator_id for v in config.validators] == ["v1", "v2"]
        assert config.validators[1].stake == 3

    def test_unknown_key_rejected(self, tmp_path):
        path = _write_config(tmp_path)
        path.write_text(path.read_text() + "mystery = 1\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "c.conf"
        path.write_text("data_dir = /tmp/x\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_bad_timer_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(_write_config(tmp_path, **{"round_timer_seconds": "0"}))

    def test_env_var_overrides_data_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HALALTRACE_DATA_DIR", str(tmp_path / "elsewhere"))
        config = parse_config(_write_config(tmp_path))
        assert config.data_dir == tmp_path / "elsewhere"

    def test_validator_stake_required(self, tmp_path):
        path = _write_config(tmp_path)
        path.write_text(path.read_text() + "validator.v9.key_file = k\n")
        with pytest.raises(ConfigError):
            parse_config(path)


class TestPersistence:
    def test_empty_data_dir_starts_genesis_only(self, tmp_path):
        bench = Bench(tmp_path / "fresh")
        assert bench.service.chain.height == 0
        assert (tmp_path / "fresh" / LOG_FILENAME).exists()
        bench.close()

    def test_restart_preserves_tip(self, tmp_path, ready_bench_factory=None):
        bench = Bench(tmp_path / "node")
        bench.register_defaults()
        for _ in range(3):
            bench.full_product(confirm=False)
        tip = bench.service.chain.tip.hash
        height = bench.service.chain.height
        bench.close()
        again = Bench(tmp_path / "node")
        assert again.service.chain.tip.hash == tip
        assert again.service.chain.height == height
        again.close()

    def test_reload_is_byte_identical(self, tmp_path):
        bench = Bench(tmp_path / "node")
        bench.register_defaults()
        bench.full_product()
        lines_before = bench.service.chain.to_json_lines()
        bench.close()
        reloaded = load_chain(tmp_path / "node")
        assert reloaded.to_json_lines() == lines_before

    def test_empty_file_yields_genesis(self, tmp_path):
        data = tmp_path / "d"
        data.mkdir()
        (data / LOG_FILENAME).write_text("")
        chain = load_chain(data)
        assert chain.height == 0

    def test_torn_final_line_truncated_with_warning(self, tmp_path, caplog):
        data = tmp_path / "d"
        data.mkdir()
        genesis_line = create_genesis().to_json_line()
        (data / LOG_FILENAME).write_text(genesis_line + "\n" + '{"height": 1, "trunc')
        chain = load_chain(data)
        assert chain.height == 0
        assert (data / LOG_FILENAME).read_text() == genesis_line + "\n"

    def test_corrupt_middle_line_refuses_to_load(self, tmp_path):
        bench = Bench(tmp_path / "node")
        bench.register_defaults()
        bench.full_product(confirm=False)
        bench.close()
        log = tmp_path / "node" / LOG_FILENAME
        lines = log.read_text().splitlines()
        lines[1] = "not json at all"
        log.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptLog) as err:
            load_chain(tmp_path / "node")
        assert "line 2" in err.value.detail

    def test_malformed_committed_envelope_refused(self, tmp_path):
        # structurally valid block whose stage envelope lost its trace id:
        # replay must refuse to start rather than crash
        from halaltrace.canonical import canonical_dumps
        from halaltrace.identity import read_key_file, sign_hex
        from halaltrace.ledger import compute_block_hash, payload_digest

        data_dir = tmp_path / "node"
        bench = Bench(data_dir)
        bench.register_defaults()
        bench.full_product(confirm=False)
        config = bench.config
        bench.close()
        log = data_dir / LOG_FILENAME
        lines = log.read_text().splitlines()
        block = json.loads(lines[2])
        block["payload"][0].pop("trace_id")
        block["payload_digest"] = payload_digest(block["payload"])
        block["hash"] = compute_block_hash(
            block["height"], block["timestamp"], block["payload_digest"],
            block["previous_hash"], block["proposer_id"])
        key = read_key_file(data_dir / "validator_keys" / f"{block['proposer_id']}.key")
        block["proposer_signature"] = sign_hex(key, block["hash"].encode())
        lines[2] = canonical_dumps(block)
        log.write_text("\n".join(lines[:3]) + "\n")
        with pytest.raises(CorruptLog):
            NodeService(config)

    def test_non_utf8_log_refused(self, tmp_path):
        data = tmp_path / "d"
        data.mkdir()
        (data / LOG_FILENAME).write_bytes(
            create_genesis().to_json_line().encode() + b"\n\xff\xfe broken\n")
        with pytest.raises(CorruptLog) as err:
            load_chain(data)
        assert "UTF-8" in err.value.detail

    def test_out_of_order_heights_refused(self, tmp_path):
        bench = Bench(tmp_path / "node")
        bench.register_defaults()
        bench.full_product(confirm=False)
        bench.close()
        log = tmp_path / "node" / LOG_FILENAME
        lines = log.read_text().splitlines()
        lines[1], lines[2] = lines[2], lines[1]
        log.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptLog):
            load_chain(tmp_path / "node")

    def test_line_boundary_truncation_always_restarts(self, tmp_path):
        bench = Bench(tmp_path / "node")
        bench.register_defaults()
        for _ in range(4):
            bench.full_product(confirm=False)
        bench.close()
        log = tmp_path / "node" / LOG_FILENAME
        full = log.read_text()
        lines = full.splitlines(keepends=True)
        rng = random.Random(11)
        for _ in range(6):
            keep = rng.randint(0, len(lines))
            log.write_text("".join(lines[:keep]))
            revived = Bench(tmp_path / "node")
            assert revived.service.chain.height == max(0, keep - 1)
            assert revived.service.validate().ok
            revived.close()
            log.write_text(full)

    def test_persist_is_append_only(self, tmp_path):
        bench = Bench(tmp_path / "node")
        log = tmp_path / "node" / LOG_FILENAME
        sizes = [log.stat().st_size]
        bench.register_defaults()
        sizes.append(log.stat().st_size)
        bench.full_product(confirm=False)
        sizes.append(log.stat().st_size)
        assert sizes == sorted(sizes) and sizes[0] < sizes[-1]
        bench.close()


@pytest.fixture
def api(ready_bench):
    client = TestClient(create_app_for(ready_bench), raise_server_exceptions=False)
    return ready_bench, client


def create_app_for(bench):
    from halaltrace.node import create_app
    return create_app(bench.service)


class TestApi:
    def test_submit_then_trace_after_round(self, api):
        bench, client = api
        env = bench.sign("cultivator_record", cultivator_body(batch="API-1"), "cul-1")
        response = client.post("/api/v1/records/cultivator", json=env)
        assert response.status_code == 202
        trace_id = response.json()["trace_id"]
        assert client.get(f"/api/v1/trace/{trace_id}").status_code == 404  # pending
        bench.commit()
        report = client.get(f"/api/v1/trace/{trace_id}")
        assert report.status_code == 200
        assert report.json()["stages"][0]["trace_id"] == trace_id

    def test_unauthorized_post_is_403(self, api):
        bench, client = api
        env = bench.sign("cultivator_record", cultivator_body(batch="API-2"), "mer-1")
        response = client.post("/api/v1/records/cultivator", json=env)
        assert response.status_code == 403
        assert response.json()["code"] == "unauthorized"

    def test_bad_signature_is_401(self, api):
        bench, client = api
        env = bench.sign("cultivator_record", cultivator_body(batch="API-3"), "cul-1")
        env["signature"] = "ab" * 64
        response = client.post("/api/v1/records/cultivator", json=env)
        assert response.status_code == 401

    def test_validation_error_is_422_with_field(self, api):
        bench, client = api
        body = cultivator_body(batch="API-4")
        body["facility"]["latitude"] = 123.0
        env = bench.sign("cultivator_record", body, "cul-1")
        response = client.post("/api/v1/records/cultivator", json=env)
        assert response.status_code == 422
        assert response.json()["field"] == "facility.latitude"

    def test_malformed_json_is_400(self, api):
        _, client = api
        response = client.post("/api/v1/records/cultivator",
                               content=b"{not json",
                               headers={"content-type": "application/json"})
        assert response.status_code == 400

    def test_full_flow_with_confirm_qr_verify(self, api):
        bench, client = api
        cul, mak, mer = bench.full_product(confirm=False)
        conf_body = {"subject_trace_id": cul, "recorded_at": 1_750_001_000}
        env = bench.sign("confirmation", conf_body, "mak-1")
        assert client.post(f"/api/v1/records/{cul}/confirm", json=env).status_code == 202
        again = client.post(f"/api/v1/records/{cul}/confirm", json=env)
        assert again.status_code == 409  # pending duplicate
        bench.commit()

        issue_body = {"subject_trace_id": mer, "recorded_at": 1_750_002_000}
        issue_env = bench.sign("qr_issuance", issue_body, "mer-1")
        png = client.post(f"/api/v1/products/{mer}/qr", json=issue_env)
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"
        payload = png.headers["x-qr-payload"]

        verified = client.post("/api/v1/qr/verify", json={"payload": payload})
        assert verified.status_code == 200
        assert verified.json()["query_id"] == mer

        image_verified = client.post("/api/v1/qr/verify", content=png.content,
                                     headers={"content-type": "image/png"})
        assert image_verified.status_code == 200

        tampered = payload[:-8] + ("00000000" if payload[-8:] != "00000000" else "11111111")
        bad = client.post("/api/v1/qr/verify", json={"payload": tampered})
        assert bad.status_code == 422
        assert bad.json()["code"] == "integrity_mismatch"

    def test_consumer_cannot_issue_qr(self, api):
        bench, client = api
        _, _, mer = bench.full_product()
        body = {"subject_trace_id": mer, "recorded_at": 1_750_003_000}
        env = bench.sign("qr_issuance", body, "con-1")
        response = client.post(f"/api/v1/products/{mer}/qr", json=env)
        assert response.status_code == 403

    def test_incomplete_provenance_is_409(self, api):
        bench, client = api
        # merchant record whose maker chain is complete is the only way to
        # commit a MER record, so target a maker-stage id instead
        _, mak, _ = bench.full_product()
        body = {"subject_trace_id": mak, "recorded_at": 1_750_004_000}
        env = bench.sign("qr_issuance", body, "mer-1")
        response = client.post(f"/api/v1/products/{mak}/qr", json=env)
        assert response.status_code == 422  # MER grammar enforced on the body

    def test_chain_endpoints(self, api):
        bench, client = api
        bench.full_product(confirm=False)
        tip = client.get("/api/v1/chain/tip").json()
        assert tip["height"] == bench.service.chain.height
        block0 = client.get("/api/v1/chain/blocks/0").json()
        assert block0["proposer_id"] == "GENESIS"
        assert client.get("/api/v1/chain/blocks/9999").status_code == 404
        assert client.get("/api/v1/chain/validate").json() == {"ok": True}

    def test_validate_surfaces_tampering(self, tmp_path):
        bench = Bench(tmp_path / "tamper")
        bench.register_defaults()
        bench.full_product(confirm=False)
        target = bench.service.chain.blocks[2]
        from halaltrace.ledger import Block
        mutated = Block(**{**target.__dict__, "payload": target.payload + ({"x": 1},)})
        bench.service.chain.blocks[2] = mutated
        client = TestClient(create_app_for(bench))
        result = client.get("/api/v1/chain/validate").json()
        assert result["ok"] is False
        assert result["first_violation"]["height"] == 2
        bench.close()

    def test_stakeholder_registration_201(self, api):
        bench, client = api
        body = {
            "stakeholder_id": "cul-2",
            "role": "cultivator",
            "public_key": public_key_hex(det_key("cul-2")),
            "display_name": "Second Farm",
            "contact": "c2@example.test",
        }
        env = bench.sign("stakeholder_registration", body, "admin-1")
        response = client.post("/api/v1/stakeholders", json=env)
        assert response.status_code == 201
        duplicate = client.post("/api/v1/stakeholders", json=env)
        assert duplicate.status_code == 409

    def test_health_tracks_tip_and_pool(self, api):
        bench, client = api
        before = client.get("/api/v1/health").json()
        assert before["height"] == bench.service.chain.height
        env = bench.sign("cultivator_record", cultivator_body(batch="H-1"), "cul-1")
        client.post("/api/v1/records/cultivator", json=env)
        during = client.get("/api/v1/health").json()
        assert during["pending"] == 1
        bench.commit()
        after = client.get("/api/v1/health").json()
        assert after["pending"] == 0
        assert after["height"] == bench.service.chain.height
        assert after["uptime_seconds"] >= 0

    def test_unknown_trace_404_and_malformed_404(self, api):
        _, client = api
        assert client.get("/api/v1/trace/MER-ZZZZZZZZ").status_code == 404
        assert client.get("/api/v1/trace/garbage").status_code == 404

    def test_confirm_subject_must_match_url(self, api):
        bench, client = api
        cul, _, _ = bench.full_product(confirm=False)
        body = {"subject_trace_id": cul, "recorded_at": 1_750_005_000}
        env = bench.sign("confirmation", body, "mak-1")
        response = client.post("/api/v1/records/MAK-WRONGID1/confirm", json=env)
        assert response.status_code == 400


class TestErrorTable:
    def test_every_code_maps_to_exactly_one_status(self):
        from halaltrace import errors
        subclasses = [cls for cls in vars(errors).values()
                      if isinstance(cls, type)
                      and issubclass(cls, errors.HalalTraceError)
                      and cls is not errors.HalalTraceError]
        api_codes = {cls.code for cls in subclasses} - {
            "config_error", "corrupt_log", "empty_registry", "invalid_config",
            "bad_linkage", "bad_height", "bad_timestamp", "bad_hash",
        }
        for code in api_codes:
            assert code in HTTP_STATUS, f"{code} missing from the HTTP table"
        assert len(HTTP_STATUS) == len(api_codes)


class TestRoundDriver:
    def test_timer_driven_commit(self, tmp_path):
        bench = Bench(tmp_path / "auto", auto_rounds=True, round_timer=0.15)
        bench.register("cul-a", "cultivator")
        deadline = time.monotonic() + 5
        while bench.service.chain.height == 0 and time.monotonic() < deadline:
            time.sleep(0.05)
        assert bench.service.chain.height == 1
        assert "cul-a" in bench.service.registry
        bench.close()

    def test_batch_threshold_triggers_early(self, tmp_path):
        bench = Bench(tmp_path / "burst", auto_rounds=True,
                      round_timer=30.0, batch_size=3)
        bench.register("a1", "cultivator")
        bench.register("a2", "maker")
        bench.register("a3", "merchant")  # hits the batch-size trigger
        deadline = time.monotonic() + 5
        while bench.service.chain.height == 0 and time.monotonic() < deadline:
            time.sleep(0.05)
        assert bench.service.chain.height == 1
        bench.close()
