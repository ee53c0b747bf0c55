import json
import socket
import stat
import threading
import time

import httpx
import pytest
import uvicorn
from click.testing import CliRunner

from halaltrace.cli import main
from halaltrace.identity import write_key_file
from helpers import Bench, cultivator_body, det_key, maker_body, merchant_body


@pytest.fixture(scope="module")
def live_node(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-node")
    bench = Bench(root / "data", auto_rounds=True, round_timer=0.15)
    app = __import__("halaltrace.node", fromlist=["create_app"]).create_app(bench.service)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started and time.monotonic() < deadline:
        time.sleep(0.02)
    assert server.started
    port = server.servers[0].sockets[0].getsockname()[1]
    url = f"http://127.0.0.1:{port}"
    yield url, bench, root
    server.should_exit = True
    thread.join(timeout=5)
    bench.close()


def _wait_committed(url, min_height=None):
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        health = httpx.get(f"{url}/api/v1/health").json()
        if health["pending"] == 0 and (min_height is None or health["height"] >= min_height):
            return health["height"]
        time.sleep(0.05)
    raise AssertionError("commit timed out")


def _profile(root, name, stakeholder_id, url, key=None):
    key_path = root / f"{name}.key"
    write_key_file(key_path, key or det_key(stakeholder_id))
    profile_path = root / f"{name}.profile"
    profile_path.write_text(
        f"stakeholder_id = {stakeholder_id}\n"
        f"key_file = {key_path}\n"
        f"node_url = {url}\n")
    return str(profile_path)


runner = CliRunner()


class TestLocalCommands:
    def test_keygen_creates_restricted_file(self, tmp_path):
        out = tmp_path / "k.key"
        result = runner.invoke(main, ["keygen", "--out", str(out)])
        assert result.exit_code == 0
        assert len(result.output.strip()) == 64
        assert stat.S_IMODE(out.stat().st_mode) == 0o600

    def test_keygen_refuses_overwrite(self, tmp_path):
        out = tmp_path / "k.key"
        runner.invoke(main, ["keygen", "--out", str(out)])
        result = runner.invoke(main, ["keygen", "--out", str(out)])
        assert result.exit_code == 1

    def test_sim_deterministic_output(self):
        args = ["sim", "consensus", "--validators", "A:1,B:3", "--rounds", "30",
                "--seed", "9", "--records-per-round", "1"]
        first = runner.invoke(main, args)
        second = runner.invoke(main, args)
        assert first.exit_code == 0
        assert first.output == second.output
        report = json.loads(first.output)
        assert report["committed"] == 30

    def test_sim_bad_validator_spec_exits_one(self):
        result = runner.invoke(main, ["sim", "consensus", "--validators", "A",
                                      "--rounds", "5"])
        assert result.exit_code == 1

    def test_usage_error_exits_two(self):
        assert runner.invoke(main, ["sim", "consensus"]).exit_code == 2
        assert runner.invoke(main, ["record", "submit-cultivator"]).exit_code == 2

    def test_qr_decode_blank_image_exits_one(self, tmp_path):
        import io
        from PIL import Image
        blank = tmp_path / "blank.png"
        buffer = io.BytesIO()
        Image.new("L", (100, 100), 255).save(buffer, format="PNG")
        blank.write_bytes(buffer.getvalue())
        result = runner.invoke(main, ["qr", "decode", str(blank)])
        assert result.exit_code == 1
        assert "no qr found" in result.output or "no qr found" in (result.stderr or "")


class TestAgainstLiveNode:
    def test_full_fixture_flow(self, live_node, tmp_path):
        url, bench, root = live_node
        admin_profile = _profile(tmp_path, "admin", "admin-1", url, key=bench.admin_key)

        # register the three stage stakeholders through the CLI
        for sid, role in [("cli-cul", "cultivator"), ("cli-mak", "maker"),
                          ("cli-mer", "merchant")]:
            key_path = tmp_path / f"{sid}.key"
            write_key_file(key_path, det_key(sid))
            result = runner.invoke(main, [
                "stakeholder", "register", "--id", sid, "--role", role,
                "--public-key", str(key_path), "--display-name", sid,
                "--contact", f"{sid}@example.test", "--profile", admin_profile,
            ])
            assert result.exit_code == 0, result.output
        _wait_committed(url, min_height=1)

        cul_profile = _profile(tmp_path, "cul", "cli-cul", url)
        mak_profile = _profile(tmp_path, "mak", "cli-mak", url)
        mer_profile = _profile(tmp_path, "mer", "cli-mer", url)

        body_file = tmp_path / "cul.json"
        body_file.write_text(json.dumps(cultivator_body(batch="CLI-LOT")))
        result = runner.invoke(main, ["record", "submit-cultivator",
                                      "--file", str(body_file), "--profile", cul_profile])
        assert result.exit_code == 0, result.output
        cul_id = result.output.strip()
        assert cul_id.startswith("CUL-")
        height = _wait_committed(url)

        mak_file = tmp_path / "mak.json"
        mak_file.write_text(json.dumps(maker_body([cul_id], batch="CLI-B")))
        result = runner.invoke(main, ["record", "submit-maker",
                                      "--file", str(mak_file), "--profile", mak_profile])
        assert result.exit_code == 0, result.output
        mak_id = result.output.strip()
        height = _wait_committed(url, min_height=height + 1)

        mer_file = tmp_path / "mer.json"
        mer_file.write_text(json.dumps(merchant_body(mak_id, invoice_number="CLI-INV")))
        result = runner.invoke(main, ["record", "submit-merchant",
                                      "--file", str(mer_file), "--profile", mer_profile])
        assert result.exit_code == 0, result.output
        mer_id = result.output.strip()
        height = _wait_committed(url, min_height=height + 1)

        for subject, profile in [(cul_id, mak_profile), (mak_id, mer_profile)]:
            result = runner.invoke(main, ["record", "confirm", subject,
                                          "--profile", profile])
            assert result.exit_code == 0, result.output
        _wait_committed(url, min_height=height + 1)

        png_path = tmp_path / "product.png"
        result = runner.invoke(main, ["qr", "issue", mer_id, "--out", str(png_path),
                                      "--profile", mer_profile])
        assert result.exit_code == 0, result.output
        payload = result.output.strip()
        assert payload.startswith(f"HT1|{mer_id}|")
        assert png_path.stat().st_size > 0

        result = runner.invoke(main, ["qr", "decode", str(png_path)])
        assert result.exit_code == 0 and result.output.strip() == payload

        result = runner.invoke(main, ["qr", "verify", str(png_path),
                                      "--node-url", url, "--json"])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["verdict"] == "verified"
        assert [s["stage"] for s in report["stages"]] == \
            ["cultivator", "maker", "merchant"]

        result = runner.invoke(main, ["trace", mer_id, "--node-url", url])
        assert result.exit_code == 0
        assert "verdict: verified" in result.output

        result = runner.invoke(main, ["chain", "validate", "--node-url", url])
        assert result.exit_code == 0 and "chain ok" in result.output

    def test_unknown_trace_id_exits_one_with_message(self, live_node):
        url, _, _ = live_node
        result = runner.invoke(main, ["trace", "CUL-XXXXXXXX", "--node-url", url])
        assert result.exit_code == 1
        assert "unknown trace id" in result.output

    def test_env_var_node_url(self, live_node, monkeypatch):
        url, _, _ = live_node
        result = runner.invoke(main, ["chain", "validate"],
                               env={"HALALTRACE_NODE_URL": url})
        assert result.exit_code == 0

    def test_unreachable_node_exits_one(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            dead_port = s.getsockname()[1]
        result = runner.invoke(main, ["chain", "validate",
                                      "--node-url", f"http://127.0.0.1:{dead_port}"])
        assert result.exit_code == 1
        assert "unreachable" in result.output
