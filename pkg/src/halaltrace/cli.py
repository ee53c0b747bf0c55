"""Operator and stakeholder command-line client.

Profiles live in `key = value` files (stakeholder_id, key_file, node_url)
and are picked up from --profile or HALALTRACE_PROFILE; HALALTRACE_NODE_URL
overrides the node address. Exit codes: 0 success, 1 domain error, 2 usage.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

from .canonical import canonical_bytes, canonical_dumps
from .errors import ConfigError, HalalTraceError
from .identity import (
    generate_signing_key,
    public_key_hex,
    read_key_file,
    write_key_file,
)

PROFILE_ENV = "HALALTRACE_PROFILE"
NODE_URL_ENV = "HALALTRACE_NODE_URL"
DEFAULT_NODE_URL = "http://127.0.0.1:8470"


class CliError(click.ClickException):
    exit_code = 1

    def show(self, file=None):
        click.echo(self.message, err=True)


def _fail_api(body: dict, status: int) -> CliError:
    code = body.get("code", f"http_{status}")
    message = code.replace("_", " ")
    detail = body.get("detail", "")
    if detail and detail != code:
        message += f": {detail}"
    return CliError(message)


class Profile:
    def __init__(self, stakeholder_id: str | None, key_file: str | None, node_url: str | None):
        self.stakeholder_id = stakeholder_id
        self.key_file = key_file
        self.node_url = node_url

    @classmethod
    def load(cls, path: str | None) -> "Profile":
        path = path or os.environ.get(PROFILE_ENV)
        if not path:
            return cls(None, None, None)
        values = {}
        try:
            for raw in Path(path).read_text().splitlines():
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"profile {path}: expected `key = value`, got {raw!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in ("stakeholder_id", "key_file", "node_url"):
                    raise CliError(f"profile {path}: unknown key {key!r}")
                values[key] = value
        except OSError as exc:
            raise CliError(f"cannot read profile: {exc}") from None
        key_file = values.get("key_file")
        if key_file and not Path(key_file).is_absolute():
            key_file = str(Path(path).parent / key_file)
        return cls(values.get("stakeholder_id"), key_file, values.get("node_url"))

    def require_signer(self):
        if not self.stakeholder_id or not self.key_file:
            raise CliError("a profile with stakeholder_id and key_file is required "
                           f"(--profile or ${PROFILE_ENV})")
        try:
            return self.stakeholder_id, read_key_file(self.key_file)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load signing key: {exc}") from None


def _node_url(option_value: str | None, profile: Profile) -> str:
    return (option_value or os.environ.get(NODE_URL_ENV)
            or profile.node_url or DEFAULT_NODE_URL)


def _request(method: str, url: str, **kwargs) -> httpx.Response:
    try:
        return httpx.request(method, url, timeout=30.0, **kwargs)
    except httpx.HTTPError as exc:
        raise CliError(f"node unreachable: {exc}") from None


def _check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            raise _fail_api(response.json(), response.status_code)
        except (json.JSONDecodeError, ValueError):
            raise CliError(f"http {response.status_code}: {response.text[:200]}") from None
    if "application/json" in response.headers.get("content-type", ""):
        return response.json()
    return {}


def _signed_envelope(envelope_type: str, body: dict, profile: Profile) -> dict:
    stakeholder_id, key = profile.require_signer()
    return {
        "type": envelope_type,
        "body": body,
        "stakeholder_id": stakeholder_id,
        "signature": key.sign(canonical_bytes(body)).hex(),
    }


def _load_body(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path} must contain a JSON object")
    return doc


profile_option = click.option("--profile", "profile_path", default=None,
                              help=f"Profile file (default ${PROFILE_ENV}).")
node_url_option = click.option("--node-url", default=None,
                               help=f"Node base URL (default ${NODE_URL_ENV}).")


@click.group()
def main():
    """Supply-chain traceability ledger client."""


# -- node -------------------------------------------------------------------

@main.group()
def node():
    """Node operation."""


@node.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run the node until interrupted."""
    from .node import parse_config, serve as run_serve
    try:
        config = parse_config(config_path)
        run_serve(config)
    except HalalTraceError as exc:
        raise CliError(f"{exc.code.replace('_', ' ')}: {exc.detail}") from None


# -- keys and stakeholders ---------------------------------------------------

@main.command()
@click.option("--out", "out_path", required=True, type=click.Path())
def keygen(out_path):
    """Generate a signing key file (0600) and print the public key."""
    if Path(out_path).exists():
        raise CliError(f"{out_path} already exists; refusing to overwrite")
    key = write_key_file(out_path, generate_signing_key())
    click.echo(public_key_hex(key))


@main.group()
def stakeholder():
    """Identity management (admin)."""


@stakeholder.command("register")
@click.option("--id", "stakeholder_id", required=True)
@click.option("--role", required=True,
              type=click.Choice(["cultivator", "maker", "merchant", "consumer", "admin"]))
@click.option("--public-key", required=True,
              help="64-char hex verification key, or a path to a key file to derive it from.")
@click.option("--display-name", required=True)
@click.option("--contact", required=True)
@profile_option
@node_url_option
def stakeholder_register(stakeholder_id, role, public_key, display_name, contact,
                         profile_path, node_url):
    """Register a stakeholder (requires an admin profile)."""
    profile = Profile.load(profile_path)
    if Path(public_key).exists():
        public_key = public_key_hex(read_key_file(public_key))
    body = {
        "stakeholder_id": stakeholder_id,
        "role": role,
        "public_key": public_key,
        "display_name": display_name,
        "contact": contact,
    }
    envelope = _signed_envelope("stakeholder_registration", body, profile)
    url = _node_url(node_url, profile)
    result = _check(_request("POST", f"{url}/api/v1/stakeholders", json=envelope))
    click.echo(result.get("stakeholder_id", stakeholder_id))


# -- records ------------------------------------------------------------------

@main.group()
def record():
    """Stage record submission and confirmation."""


def _submit(kind: str, body_path: str, profile_path, node_url) -> None:
    profile = Profile.load(profile_path)
    envelope = _signed_envelope(f"{kind}_record", _load_body(body_path), profile)
    url = _node_url(node_url, profile)
    result = _check(_request("POST", f"{url}/api/v1/records/{kind}", json=envelope))
    click.echo(result["trace_id"])


@record.command("submit-cultivator")
@click.option("--file", "body_path", required=True, type=click.Path(exists=True))
@profile_option
@node_url_option
def submit_cultivator(body_path, profile_path, node_url):
    _submit("cultivator", body_path, profile_path, node_url)


@record.command("submit-maker")
@click.option("--file", "body_path", required=True, type=click.Path(exists=True))
@profile_option
@node_url_option
def submit_maker(body_path, profile_path, node_url):
    _submit("maker", body_path, profile_path, node_url)


@record.command("submit-merchant")
@click.option("--file", "body_path", required=True, type=click.Path(exists=True))
@profile_option
@node_url_option
def submit_merchant(body_path, profile_path, node_url):
    _submit("merchant", body_path, profile_path, node_url)


@record.command("confirm")
@click.argument("trace_id")
@profile_option
@node_url_option
def record_confirm(trace_id, profile_path, node_url):
    """Attest an upstream record as authentic."""
    import time as _time
    profile = Profile.load(profile_path)
    body = {"subject_trace_id": trace_id, "recorded_at": int(_time.time())}
    envelope = _signed_envelope("confirmation", body, profile)
    url = _node_url(node_url, profile)
    _check(_request("POST", f"{url}/api/v1/records/{trace_id}/confirm", json=envelope))
    click.echo(f"confirmation accepted for {trace_id}")


# -- trace --------------------------------------------------------------------

def _render_report(report: dict) -> str:
    lines = [f"trace {report['query_id']}  verdict: {report['verdict']}"]
    for stage in report["stages"]:
        lines.append(f"  [{stage['stage']:>10}] {stage['trace_id']}"
                     f"  block {stage['block_height']}  by {stage['stakeholder_id']}")
    for conf in report["confirmations"]:
        lines.append(f"  confirmed: {conf['subject_trace_id']} by {conf['confirmer_id']}")
    for check in report["checks"]:
        mark = {"pass": "+", "warn": "~", "fail": "x"}[check["status"]]
        lines.append(f"  {mark} {check['check_name']}: {check['detail']}")
    return "\n".join(lines)


@main.command("trace")
@click.argument("trace_id")
@click.option("--json", "as_json", is_flag=True, help="Raw report JSON.")
@profile_option
@node_url_option
def trace_cmd(trace_id, as_json, profile_path, node_url):
    """Fetch the provenance report for a trace id."""
    profile = Profile.load(profile_path)
    url = _node_url(node_url, profile)
    report = _check(_request("GET", f"{url}/api/v1/trace/{trace_id}"))
    click.echo(canonical_dumps(report) if as_json else _render_report(report))


# -- qr -----------------------------------------------------------------------

@main.group()
def qr():
    """QR issuance, decoding, and verification."""


@qr.command("issue")
@click.argument("trace_id")
@click.option("--out", "out_path", required=True, type=click.Path())
@profile_option
@node_url_option
def qr_issue(trace_id, out_path, profile_path, node_url):
    """Issue the product QR for a merchant record (merchant profile)."""
    import time as _time
    profile = Profile.load(profile_path)
    body = {"subject_trace_id": trace_id, "recorded_at": int(_time.time())}
    envelope = _signed_envelope("qr_issuance", body, profile)
    url = _node_url(node_url, profile)
    response = _request("POST", f"{url}/api/v1/products/{trace_id}/qr", json=envelope)
    _check(response)
    Path(out_path).write_bytes(response.content)
    click.echo(response.headers.get("x-qr-payload", ""))


@qr.command("decode")
@click.argument("image_path", type=click.Path(exists=True))
def qr_decode(image_path):
    """Decode a QR image locally and print the payload string."""
    from .qr import decode_qr
    try:
        click.echo(decode_qr(Path(image_path).read_bytes()))
    except HalalTraceError as exc:
        raise CliError(f"{exc.code.replace('_', ' ')}: {exc.detail}") from None


@qr.command("verify")
@click.argument("image_path", type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Raw report JSON.")
@profile_option
@node_url_option
def qr_verify(image_path, as_json, profile_path, node_url):
    """Decode a QR image and verify it against the chain."""
    from .qr import decode_qr
    try:
        payload = decode_qr(Path(image_path).read_bytes())
    except HalalTraceError as exc:
        raise CliError(f"{exc.code.replace('_', ' ')}: {exc.detail}") from None
    profile = Profile.load(profile_path)
    url = _node_url(node_url, profile)
    report = _check(_request("POST", f"{url}/api/v1/qr/verify", json={"payload": payload}))
    click.echo(canonical_dumps(report) if as_json else _render_report(report))


# -- chain ----------------------------------------------------------------------

@main.group()
def chain():
    """Chain inspection."""


@chain.command("validate")
@click.option("--json", "as_json", is_flag=True)
@profile_option
@node_url_option
def chain_validate(as_json, profile_path, node_url):
    """Ask the node to re-validate its whole chain."""
    profile = Profile.load(profile_path)
    url = _node_url(node_url, profile)
    result = _check(_request("GET", f"{url}/api/v1/chain/validate"))
    if as_json:
        click.echo(canonical_dumps(result))
    elif result.get("ok"):
        click.echo("chain ok")
    else:
        violation = result.get("first_violation", {})
        raise CliError(f"chain invalid at height {violation.get('height')}: "
                       f"{violation.get('reason')}")


# -- simulation -------------------------------------------------------------------

@main.group()
def sim():
    """Local simulations (no node required)."""


def _parse_validator_spec(spec: str) -> dict[str, int]:
    validators = {}
    for part in spec.split(","):
        if ":" not in part:
            raise CliError(f"validator spec {part!r} must be id:stake")
        vid, stake_text = part.split(":", 1)
        try:
            validators[vid.strip()] = int(stake_text)
        except ValueError:
            raise CliError(f"stake {stake_text!r} must be an integer") from None
    return validators


@sim.command("consensus")
@click.option("--validators", "validator_spec", required=True,
              help="Comma-separated id:stake pairs, e.g. A:1,B:3.")
@click.option("--rounds", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--records-per-round", type=int, default=1, show_default=True)
@click.option("--drop-rate", type=float, default=0.0, show_default=True)
def sim_consensus(validator_spec, rounds, seed, records_per_round, drop_rate):
    """Run a deterministic multi-validator consensus simulation."""
    from .consensus import SimulationConfig, simulate
    config = SimulationConfig(
        validators=_parse_validator_spec(validator_spec),
        rounds=rounds,
        records_per_round=records_per_round,
        drop_rate=drop_rate,
        rng_seed=seed,
    )
    try:
        report = simulate(config)
    except HalalTraceError as exc:
        raise CliError(f"{exc.code.replace('_', ' ')}: {exc.detail}") from None
    click.echo(report.to_json())


if __name__ == "__main__":
    main()
