"""``opal-query``: the querier's command-line client.

Exit codes: 0 fulfilled, 1 usage or transport error, 2 declined,
3 signature verification failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .canonical import to_wire
from .consent import ConsentClient, TokenDenial
from .crypto import Keypair, Role, fingerprint
from .dataset import SemanticType
from .dsl import DslError
from .gateway import FederatedResponse
from .protocol import AlgorithmTemplate, Contract, ContractResponse, InvariantError
from .transport import HttpTransport, TransportError

EXIT_OK, EXIT_USAGE, EXIT_DECLINED, EXIT_VERIFY = 0, 1, 2, 3
KEY_DIR_ENV = "OPAL_KEY_DIR"


class UsageError(Exception):
    pass


def default_key_dir() -> Path:
    return Path(os.environ.get(KEY_DIR_ENV) or Path.home() / ".opal" / "keys")


def _trusted(args) -> dict[str, bytes]:
    keys = list(args.trust or [])
    for path in args.trust_file or []:
        keys.extend(line.strip() for line in Path(path).read_text().splitlines() if line.strip())
    try:
        return {fingerprint(bytes.fromhex(k)): bytes.fromhex(k) for k in keys}
    except ValueError:
        raise UsageError("trusted keys must be hex-encoded public keys") from None


def _get(transport, path):
    status, body = transport.request("GET", path)
    if status != 200:
        raise TransportError(f"{path} returned {status}")
    return body


# --- rendering ---------------------------------------------------------------


def _cell(value) -> str:
    if isinstance(value, dict):
        return " ".join(f"{k}:{v}" for k, v in value.items())
    return str(value)


def render_table(headers: list[str], rows: list[list]) -> str:
    cells = [[_cell(c) for c in row] for row in rows]
    widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(headers)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells)
    return "\n".join(lines)


def render_response(response: ContractResponse) -> str:
    head = f"contract {response.contract_id}  provider {response.provider.short()}  status {response.status.value}"
    if not response.fulfilled:
        return f"{head}  reason {response.decline_reason.value}"
    table = response.result
    outputs = list(table.rows[0].values) if table.rows else []
    headers = list(table.group_key_columns) + outputs + ["cohort"]
    rows = [list(r.key) + [r.values[o] for o in outputs] + [r.cohort_size] for r in table.rows]
    body = render_table(headers, rows) if rows else "(no groups)"
    return f"{head}  valid {response.validity_duration}s\n{body}"


# --- commands ----------------------------------------------------------------


def cmd_keygen(args) -> int:
    key_dir = Path(args.key_dir) if args.key_dir else default_key_dir()
    if (key_dir / "private.pem").exists() and not args.force:
        raise UsageError(f"{key_dir} already holds a key (use --force to replace)")
    key = Keypair.generate(Role(args.role))
    key.save(key_dir)
    print(f"{key.role.value} {key.principal.key_fingerprint}")
    print(f"public key {key.public_key.hex()}")
    return EXIT_OK


def template_status(raw: dict, trusted: dict[str, bytes]) -> tuple[AlgorithmTemplate | None, str]:
    try:
        template = AlgorithmTemplate.from_dict(raw)
    except (KeyError, TypeError, ValueError):
        return None, "MALFORMED"
    problems = template.invariant_problems(trusted or None)
    if any("signature" in p for p in problems):
        return template, "SIGNATURE-INVALID"
    if problems:
        return template, "INVALID"
    return template, "ok"


def list_templates(transport, trusted) -> list[tuple[dict, AlgorithmTemplate | None, str]]:
    raws = _get(transport, "/templates")["templates"]
    return [(raw, *template_status(raw, trusted)) for raw in raws]


def cmd_templates(args) -> int:
    transport = HttpTransport(args.endpoint, timeout=args.timeout)
    entries = list_templates(transport, _trusted(args))
    rows = []
    for raw, template, status in entries:
        rows.append([
            raw.get("template_id", "?"),
            raw.get("algorithm_id", "?"),
            raw.get("description", ""),
            raw.get("cost_to_querier", ""),
            raw.get("terms_of_use", ""),
            status,
        ])
    print(render_table(["template_id", "algorithm_id", "description", "cost", "terms_of_use", "signature"], rows))
    return EXIT_OK


def parse_bindings(pairs, template: AlgorithmTemplate) -> dict:
    declared = template.ast.parameter_types()
    out = {}
    for pair in pairs or []:
        name, sep, text = pair.partition("=")
        if not sep:
            raise UsageError(f"binding {pair!r} is not name=value")
        kind = declared.get(name)
        if kind is None:
            raise UsageError(f"template declares no parameter {name!r}")
        try:
            if kind is SemanticType.INTEGER:
                out[name] = int(text)
            elif kind is SemanticType.DECIMAL:
                out[name] = Decimal(text)
            else:
                out[name] = text
        except (ValueError, InvalidOperation):
            raise UsageError(f"binding {name!r} must be {kind.value}") from None
    missing = set(declared) - set(out)
    if missing:
        raise UsageError(f"missing bindings: {', '.join(sorted(missing))}")
    return out


def verify_answer(body: dict, trusted: dict[str, bytes]) -> tuple[bool, list[ContractResponse]]:
    """Check every signature in a single or federated answer against trusted keys."""
    if "member_responses" in body:
        package = FederatedResponse.from_dict(body)
        gw_key = trusted.get(package.gateway.key_fingerprint)
        ok = gw_key is not None and package.verify(gw_key)
        for r in package.member_responses:
            key = trusted.get(r.provider.key_fingerprint)
            ok = ok and key is not None and r.verify_signature(key)
        return ok, list(package.member_responses)
    response = ContractResponse.from_dict(body)
    key = trusted.get(response.provider.key_fingerprint)
    return key is not None and response.verify_signature(key), [response]


def cmd_run(args) -> int:
    trusted = _trusted(args)
    if not trusted:
        raise UsageError("at least one --trust or --trust-file key is needed to verify answers")
    key = Keypair.load(Path(args.key_dir) if args.key_dir else default_key_dir())
    if key.role is not Role.QUERIER:
        raise UsageError("key directory does not hold a querier key")
    endpoint = HttpTransport(args.endpoint, timeout=args.timeout)
    consent = ConsentClient(HttpTransport(args.consent, timeout=args.timeout), public_key=b"")

    # vetting signers need not be in the answer-trust set; check key possession only
    entries = [(t, status) for _, t, status in list_templates(endpoint, {}) if t is not None]
    if args.template_id:
        chosen = [t for t, status in entries if str(t.template_id) == args.template_id]
        if not chosen:
            raise UsageError(f"template {args.template_id} not offered by {args.endpoint}")
        if dict((str(t.template_id), s) for t, s in entries)[args.template_id] != "ok":
            print("template signature does not verify", file=sys.stderr)
            return EXIT_VERIFY
    else:
        if not (args.algorithm_id and args.domain):
            raise UsageError("give --template-id, or --algorithm-id with --domain")
        chosen = [t for t, status in entries if str(t.algorithm_id) == args.algorithm_id and status == "ok"]
        if not chosen:
            raise UsageError(f"no verified template for algorithm {args.algorithm_id}")
    try:
        bindings = parse_bindings(args.bind, chosen[0])
    except DslError as exc:
        raise UsageError(f"template source does not parse: {exc}") from None

    tokens = []
    for template in chosen:
        token = consent.request_token(key.principal, template.algorithm_id, template.dataset_id, args.ttl)
        if not isinstance(token, TokenDenial):
            tokens.append(token)
    if not tokens:
        print("consent authority denied a consent token", file=sys.stderr)
        return EXIT_DECLINED

    voucher = Path(args.voucher).read_bytes() if args.voucher else None
    contract = Contract.create(
        key,
        chosen[0].algorithm_id,
        target_repository_id=None if args.domain else chosen[0].target_repository_id,
        target_domain=args.domain,
        parameter_bindings=bindings,
        consent_tokens=tokens,
        payment_voucher=voucher,
    )
    status, body = endpoint.request("POST", "/contracts", contract.to_dict())
    if status != 200:
        raise TransportError(f"endpoint returned {status}: {body.get('error')}")
    try:
        ok, responses = verify_answer(body, trusted)
    except (KeyError, TypeError, ValueError, InvariantError):
        ok, responses = False, []
    if not ok:
        print("response signature verification failed; result withheld", file=sys.stderr)
        return EXIT_VERIFY

    text = to_wire(body) if args.output == "json" else "\n\n".join(render_response(r) for r in responses)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if any(r.fulfilled for r in responses) else EXIT_DECLINED


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage, which would read as "declined"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opal-query", description="Query an OPAL provider or federation gateway.")
    sub = parser.add_subparsers(dest="command", required=True)

    keygen = sub.add_parser("keygen", help="create a key pair")
    keygen.add_argument("--role", default="querier", choices=[r.value for r in Role])
    keygen.add_argument("--key-dir")
    keygen.add_argument("--force", action="store_true")
    keygen.set_defaults(func=cmd_keygen)

    def common(p):
        p.add_argument("--endpoint", required=True, help="provider or gateway base URL")
        p.add_argument("--trust", action="append", metavar="HEX", help="trusted public key (repeatable)")
        p.add_argument("--trust-file", action="append", metavar="PATH")
        p.add_argument("--timeout", type=float, default=10.0)

    templates = sub.add_parser("templates", help="list vetted templates")
    common(templates)
    templates.set_defaults(func=cmd_templates)

    run = sub.add_parser("run", help="run a vetted algorithm")
    common(run)
    run.add_argument("--consent", required=True, help="consent authority base URL")
    run.add_argument("--key-dir", help=f"querier key directory (default ${KEY_DIR_ENV})")
    run.add_argument("--template-id")
    run.add_argument("--algorithm-id")
    run.add_argument("--domain", help="broadcast to every member of this domain")
    run.add_argument("--bind", action="append", metavar="NAME=VALUE")
    run.add_argument("--output", choices=["table", "json"], default="table")
    run.add_argument("--out", help="write the rendered answer to this file")
    run.add_argument("--voucher", help="file attached as an opaque payment voucher")
    run.add_argument("--ttl", type=float, default=3600, help="consent token lifetime in seconds")
    run.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
