"""Change traces and run reports: newline-delimited JSON, one transaction per
line, canonical ordering so outputs are byte-stable."""

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ValidationError
from .zset import ZSet, validate_element


@dataclass
class Transaction:
    tx: int
    changes: dict  # relation name -> ZSet


@dataclass
class RunReport:
    mode: str
    ticks: list = field(default_factory=list)  # [{"tx": id, "changes": {view: ZSet}}]
    metrics: list = field(default_factory=list)
    verdict: dict = None  # compare mode only

    def to_jsonl(self):
        lines = []
        for t in self.ticks:
            lines.append(dump_transaction(t["tx"], t["changes"]))
        return "".join(lines)


def _coerce_value(v, decl_type, where):
    validate_element(v)
    if decl_type == "int" and not isinstance(v, int):
        raise ValidationError(f"{where}: expected int, got {v!r}")
    if decl_type == "float" and not isinstance(v, (int, float)):
        raise ValidationError(f"{where}: expected float, got {v!r}")
    if decl_type == "str" and not isinstance(v, str):
        raise ValidationError(f"{where}: expected str, got {v!r}")
    return v


def parse_transaction(obj, relations, where):
    if not isinstance(obj, dict) or "tx" not in obj or "changes" not in obj:
        raise ValidationError(f"{where}: each line needs 'tx' and 'changes'")
    tx = obj["tx"]
    if not isinstance(tx, int):
        raise ValidationError(f"{where}: 'tx' must be an integer")
    changes = {}
    for i, entry in enumerate(obj["changes"]):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ValidationError(f"{where}: change {i} must be [relation, [values...], weight]")
        rel, values, weight = entry
        if relations is not None:
            if rel not in relations:
                raise ValidationError(f"{where}: unknown relation {rel!r}")
            decl = relations[rel]
            if len(values) != decl.schema.arity:
                raise ValidationError(
                    f"{where}: relation {rel!r} expects {decl.schema.arity} values, got {len(values)}"
                )
            types = decl.schema.types or (None,) * decl.schema.arity
        else:
            types = (None,) * len(values)
        if not isinstance(weight, int) or isinstance(weight, bool) or weight == 0:
            raise ValidationError(f"{where}: weight must be a nonzero integer")
        row = tuple(_coerce_value(v, t, f"{where}: relation {rel!r}") for v, t in zip(values, types))
        changes.setdefault(rel, []).append((row, weight))
    return Transaction(tx=tx, changes={rel: ZSet(rows) for rel, rows in changes.items()})


def load_trace(path, relations=None):
    txs = []
    last_tx = None
    try:
        f = open(path)
    except OSError as e:
        raise ValidationError(f"cannot read trace {path}: {e}")
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: trace parse error at column {e.colno}: {e.msg}")
            t = parse_transaction(obj, relations, f"{path}:{lineno}")
            if last_tx is not None and t.tx <= last_tx:
                raise ValidationError(f"{path}:{lineno}: transaction ids must be strictly increasing")
            last_tx = t.tx
            txs.append(t)
    return txs


def _json_value(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else float(v)
    return v


def dump_transaction(tx, changes):
    """One canonical NDJSON line: relations sorted by name, tuples in
    canonical order, weights as signed decimal integers."""
    out = []
    for rel in sorted(changes):
        z = changes[rel]
        for row, w in z.items():
            values = list(row) if type(row) is tuple else [row]
            out.append([rel, [_json_value(v) for v in values], w])
    return json.dumps({"tx": tx, "changes": out}, sort_keys=True, separators=(",", ":")) + "\n"


def dump_metrics(report):
    lines = []
    for m in report.metrics:
        lines.append(json.dumps(m, sort_keys=True, separators=(",", ":")) + "\n")
    total = {
        "total_tuples": sum(m["tuples"] for m in report.metrics),
        "total_iterations": sum(m["iterations"] for m in report.metrics),
        "total_wall_ns": sum(m["wall_ns"] for m in report.metrics),
    }
    if report.verdict is not None:
        total["compare"] = report.verdict
    lines.append(json.dumps(total, sort_keys=True, separators=(",", ":")) + "\n")
    return "".join(lines)
