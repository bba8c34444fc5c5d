"""Independent reference implementations used as test oracles.

Nothing here calls into opal's canonicalizer, evaluator, policy, consent or
audit code; only plain data types (AST nodes, enums) are shared.
"""
from __future__ import annotations

import base64
import hashlib
import re
from decimal import ROUND_HALF_EVEN, Decimal, localcontext

from opal.dsl import And, Comparison, Not, Or, ParamRef

# --- canonical encoding ------------------------------------------------------

_ESCAPES = {'"': '\\"', "\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t", "\b": "\\b", "\f": "\\f"}


def _ref_string(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _ref_decimal(d: Decimal) -> str:
    sign, digits, exp = d.as_tuple()
    digits = list(digits)
    while len(digits) > 1 and exp < 0 and digits[-1] == 0:
        digits.pop()
        exp += 1
    while len(digits) > 1 and digits[0] == 0:
        digits.pop(0)
    if all(x == 0 for x in digits):
        return "0"
    text = "".join(map(str, digits))
    if exp >= 0:
        text = text + "0" * exp
    else:
        point = len(text) + exp
        if point <= 0:
            text = "0." + "0" * (-point) + text
        else:
            text = text[:point] + "." + text[point:]
    return ("-" if sign else "") + text


def ref_canonical(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Decimal):
        return _ref_decimal(value)
    if isinstance(value, str):
        return _ref_string(value)
    if isinstance(value, bytes):
        return '"' + base64.b64encode(value).decode() + '"'
    if isinstance(value, dict):
        keys = sorted(value, key=lambda k: [ord(c) for c in k])
        return "{" + ",".join(_ref_string(k) + ":" + ref_canonical(value[k]) for k in keys) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(ref_canonical(v) for v in value) + "]"
    raise TypeError(type(value))


def ref_chain_hash(prev_hex: str, body: dict) -> str:
    return hashlib.sha256(bytes.fromhex(prev_hex) + ref_canonical(body).encode("utf-8")).hexdigest()


# --- DSL source scans --------------------------------------------------------

_DSL_WORDS = {"PARAM", "FILTER", "GROUP", "BY", "AGG", "AS", "AND", "OR", "NOT"}
_FUNCS = {"count", "sum", "mean", "min", "max", "histogram"}


def scan_columns(source: str) -> set[str]:
    """Identifiers that name columns, found by scanning tokens."""
    no_strings = re.sub(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"", " ", source)
    params = set(re.findall(r"([A-Za-z_]\w*)\s*:\s*\w+", no_strings))
    types = set(re.findall(r":\s*([A-Za-z_]\w*)", no_strings))
    outputs = set(re.findall(r"\bAS\s+([A-Za-z_]\w*)", no_strings, flags=re.I))
    refs = set(re.findall(r"\$([A-Za-z_]\w*)", no_strings))
    idents = set(re.findall(r"(?<![\$\w])([A-Za-z_]\w*)", no_strings))
    return {
        i for i in idents
        if i.upper() not in _DSL_WORDS and i.lower() not in _FUNCS
        and i not in params | types | outputs | refs
    }


def declared_param_types(source: str) -> dict[str, str]:
    m = re.match(r"\s*PARAM\s+(.*?)(?=\bFILTER\b|\bGROUP\b|\bAGG\b)", source, flags=re.I | re.S)
    if not m:
        return {}
    return {name: kind.lower() for name, kind in re.findall(r"([A-Za-z_]\w*)\s*:\s*(\w+)", m.group(1))}


def binding_type_ok(kind: str, value) -> bool:
    if type(value) is bool:
        return False
    return {
        "integer": type(value) is int,
        "decimal": type(value) in (int, Decimal),
        "categorical": type(value) is str,
    }[kind]


# --- brute-force evaluation --------------------------------------------------


def _holds(node, row, bindings) -> bool:
    if isinstance(node, Comparison):
        right = bindings[node.operand.name] if isinstance(node.operand, ParamRef) else node.operand
        left = row[node.column]
        if node.op == "=":
            return left == right
        if node.op == "!=":
            return left != right
        if node.op == "<":
            return left < right
        if node.op == "<=":
            return left <= right
        if node.op == ">":
            return left > right
        return left >= right
    if isinstance(node, And):
        return all(_holds(n, row, bindings) for n in node.items)
    if isinstance(node, Or):
        return any(_holds(n, row, bindings) for n in node.items)
    if isinstance(node, Not):
        return not _holds(node.item, row, bindings)
    raise TypeError(node)


def _r6(x) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 100
        return Decimal(x).quantize(Decimal("1e-6"), rounding=ROUND_HALF_EVEN)


def oracle_cohorts(ast, rows: list[dict], mask: list[bool], bindings: dict) -> dict[tuple, list[int]]:
    groups: dict[tuple, list[int]] = {}
    for i, row in enumerate(rows):
        if not mask[i]:
            continue
        if ast.filter is not None and not _holds(ast.filter, row, bindings):
            continue
        key = tuple(row[c] for c in ast.group_by)
        groups.setdefault(key, []).append(i)
    return groups


def oracle_evaluate(ast, rows, mask, bindings, types: dict[str, str]) -> dict[tuple, tuple[dict, int]]:
    """key -> (values, cohort size) by straightforward row loops."""
    out = {}
    for key, ids in oracle_cohorts(ast, rows, mask, bindings).items():
        values = {}
        for agg in ast.aggregates:
            col = [rows[i][agg.column] for i in ids] if agg.column else None
            f = agg.function
            if f == "count":
                values[agg.output] = len(ids)
            elif f == "histogram":
                h = {}
                for v in col:
                    h[v] = h.get(v, 0) + 1
                values[agg.output] = dict(sorted(h.items()))
            else:
                is_int = types[agg.column] == "integer"
                if f == "sum":
                    total = 0
                    for v in col:
                        total += v
                    values[agg.output] = total if is_int else _r6(total)
                elif f == "mean":
                    total = Decimal(0)
                    for v in col:
                        total += Decimal(v)
                    with localcontext() as ctx:
                        ctx.prec = 100
                        values[agg.output] = _r6(total / len(col))
                else:
                    best = col[0]
                    for v in col[1:]:
                        if (f == "min" and v < best) or (f == "max" and v > best):
                            best = v
                    values[agg.output] = best if is_int else _r6(best)
        out[key] = (values, len(ids))
    return out


def oracle_safe(evaluated: dict, k: int, marker: str = "SUPPRESSED") -> dict[tuple, tuple[dict, object]]:
    released = {}
    for key, (values, n) in evaluated.items():
        if n < k:
            released[key] = ({name: marker for name in values}, marker)
        else:
            released[key] = (values, n)
    return released


# --- consent rules -----------------------------------------------------------


def oracle_rule_applies(rule, algorithm_id, querier_fp: str, dataset_id, at) -> bool:
    if rule.revoked:
        return False
    if rule.expires_at is not None and not (at < rule.expires_at):
        return False
    if str(rule.dataset_id) != str(dataset_id):
        return False
    if rule.algorithm_pattern != "*" and rule.algorithm_pattern != str(algorithm_id):
        return False
    if rule.querier_pattern != "*" and rule.querier_pattern != querier_fp:
        return False
    return True


def oracle_subject_consents(rules, subject_fp, algorithm_id, querier_fp, dataset_id, at) -> bool:
    mine = [
        r for r in rules
        if r.subject.key_fingerprint == subject_fp and oracle_rule_applies(r, algorithm_id, querier_fp, dataset_id, at)
    ]
    if any(r.effect.value == "deny" for r in mine):
        return False
    return any(r.effect.value == "allow" for r in mine)


def oracle_mask(rules, subjects, algorithm_id, querier_fp, dataset_id, at) -> list[bool]:
    return [oracle_subject_consents(rules, s, algorithm_id, querier_fp, dataset_id, at) for s in subjects]


# --- differencing ------------------------------------------------------------


def oracle_related(previous: list[set], new: list[set], k: int) -> bool:
    for c in previous:
        for n in new:
            d = len(c - n) + len(n - c)
            if 0 < d < k:
                return True
    return False
