"""Circuit spec files: a JSON document declaring relations, views, and
recursive rule blocks, compiled to a scalar query circuit.

Views are expression trees over the relational operators; recursive blocks
are Datalog-style rules whose derived relations views may then reference.
"""

import json
from dataclasses import dataclass, field

from .circuit import Circuit
from .datalog import Atom, Rule, RuleProgram, compile_program_into
from .errors import ValidationError
from .expr import Col, KeyFunc, parse_expr
from .relational import (
    JoinFn,
    Schema,
    WindowSpec,
    build_aggregate,
    build_antijoin,
    build_cartesian,
    build_difference,
    build_distinct,
    build_equijoin,
    build_filter,
    build_intersect,
    build_map,
    build_projection,
    build_union,
    build_union_all,
    build_window_snapshot,
)

_SCALAR_TYPES = {"int", "float", "str"}


@dataclass
class RelationDecl:
    name: str
    schema: Schema
    kind: str = "table"  # "stream" relations are per-tick events, not integrated


@dataclass
class CircuitSpec:
    relations: dict
    view_names: list
    event_views: set
    circuit: Circuit
    program: RuleProgram = None
    raw: dict = field(default_factory=dict)


def load_spec(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: spec parse error at line {e.lineno}, column {e.colno}: {e.msg}")
    except OSError as e:
        raise ValidationError(f"cannot read spec {path}: {e}")
    return compile_spec(doc)


def compile_spec(doc):
    if not isinstance(doc, dict):
        raise ValidationError("spec document must be a JSON object")
    relations = _parse_relations(doc.get("relations", []))
    program = _parse_program(doc.get("recursive"), relations)

    c = Circuit()
    env = {}  # name -> (node, arity, is_event)
    for name, decl in relations.items():
        nid = c.add_source(name, event=decl.kind == "stream")
        env[name] = (nid, decl.schema.arity, decl.kind == "stream")

    if program is not None:
        rel_nodes = {name: env[name][0] for name in program.inputs}
        compile_program_into(c, program, rel_nodes)
        for name, arity in program.outputs.items():
            env[name] = (rel_nodes[name], arity, False)

    views = doc.get("views", [])
    if not isinstance(views, list):
        raise ValidationError("'views' must be a list")
    view_names = []
    event_views = set()
    seen = set(env)
    for v in views:
        if not isinstance(v, dict) or "name" not in v or "query" not in v:
            raise ValidationError("each view needs 'name' and 'query'")
        name = v["name"]
        if name in seen:
            raise ValidationError(f"duplicate name {name!r}")
        seen.add(name)
        node, _arity, is_event = _compile_query(c, v["query"], env, f"view {name!r}")
        c.add_sink(node, name, event=is_event)
        view_names.append(name)
        if is_event:
            event_views.add(name)
    if not view_names and program is not None:
        # No explicit views: every derived relation is a view.
        for name in sorted(program.outputs):
            c.add_sink(env[name][0], name)
            view_names.append(name)
    if not view_names:
        raise ValidationError("spec defines no views")
    return CircuitSpec(relations=relations, view_names=view_names, event_views=event_views, circuit=c, program=program, raw=doc)


def _parse_relations(items):
    if not isinstance(items, list):
        raise ValidationError("'relations' must be a list")
    out = {}
    for item in items:
        if not isinstance(item, dict) or "name" not in item or "columns" not in item:
            raise ValidationError(f"bad relation declaration: {item!r}")
        name = item["name"]
        if name in out:
            raise ValidationError(f"duplicate relation {name!r}")
        types = item.get("types")
        if types is not None:
            for t in types:
                if t not in _SCALAR_TYPES:
                    raise ValidationError(f"relation {name!r}: unknown type {t!r}")
            types = tuple(types)
        kind = item.get("kind", "table")
        if kind not in ("table", "stream"):
            raise ValidationError(f"relation {name!r}: kind must be 'table' or 'stream'")
        out[name] = RelationDecl(name, Schema(tuple(item["columns"]), types), kind)
    return out


def _parse_program(block, relations):
    if block is None:
        return None
    if not isinstance(block, dict):
        raise ValidationError("'recursive' must be an object with 'relations' and 'rules'")
    derived = {}
    for item in block.get("relations", []):
        if not isinstance(item, dict) or "name" not in item or "columns" not in item:
            raise ValidationError(f"bad derived relation declaration: {item!r}")
        if item["name"] in relations or item["name"] in derived:
            raise ValidationError(f"duplicate relation {item['name']!r}")
        derived[item["name"]] = len(item["columns"])
    rules = []
    for r in block.get("rules", []):
        if not isinstance(r, dict) or "head" not in r or "body" not in r:
            raise ValidationError(f"bad rule: {r!r}")
        rules.append(
            Rule(
                head=_parse_atom(r["head"]),
                body=tuple(_parse_atom(a) for a in r["body"]),
            )
        )
    inputs = {}
    referenced = {a.rel for rule in rules for a in (rule.head, *rule.body)}
    for name in referenced - set(derived):
        if name not in relations:
            raise ValidationError(f"rule references unknown relation {name!r}")
        if relations[name].kind == "stream":
            raise ValidationError(f"rules cannot use event-stream relation {name!r}")
        inputs[name] = relations[name].schema.arity
    program = RuleProgram(inputs=inputs, outputs=derived, rules=rules)
    program.validate()
    return program


def _parse_atom(a):
    if not isinstance(a, dict) or "rel" not in a or "terms" not in a:
        raise ValidationError(f"bad atom: {a!r}")
    return Atom(rel=a["rel"], terms=tuple(a["terms"]), negated=bool(a.get("negated", False)))


def _expr_max_col(e):
    if isinstance(e, Col):
        return e.index
    hi = -1
    for attr in ("left", "right", "inner"):
        sub = getattr(e, attr, None)
        if sub is not None:
            hi = max(hi, _expr_max_col(sub))
    return hi


def _check_cols(e, arity, where):
    if _expr_max_col(e) >= arity:
        raise ValidationError(f"{where}: column index out of range (arity {arity})")


def _parse_keys(keys, arity, where):
    if not isinstance(keys, list):
        raise ValidationError(f"{where}: keys must be a list")
    exprs = []
    for k in keys:
        e = Col(k) if isinstance(k, int) else parse_expr(k)
        _check_cols(e, arity, where)
        exprs.append(e)
    return exprs


def _compile_query(c, q, env, where):
    if not isinstance(q, dict) or "op" not in q:
        raise ValidationError(f"{where}: bad query node {q!r}")
    op = q["op"]

    if op == "rel":
        name = q.get("name")
        if name not in env:
            raise ValidationError(f"{where}: unknown relation {name!r}")
        return env[name]

    def sub(key, need=True):
        if key not in q:
            if need:
                raise ValidationError(f"{where}: {op!r} needs {key!r}")
            return None
        return _compile_query(c, q[key], env, where)

    def no_events(*parts):
        for node, _a, ev in parts:
            if ev:
                raise ValidationError(f"{where}: {op!r} cannot consume an event stream")

    if op == "filter":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        pred = parse_expr(q.get("predicate"))
        _check_cols(pred, arity, where)
        return build_filter(c, node, pred), arity, False

    if op == "project":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        cols = q.get("columns")
        if not isinstance(cols, list) or not all(isinstance(i, int) and 0 <= i < arity for i in cols):
            raise ValidationError(f"{where}: bad projection columns {cols!r}")
        return build_projection(c, node, cols), len(cols), False

    if op == "map":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        exprs = [parse_expr(e) for e in q.get("exprs", [])]
        if not exprs:
            raise ValidationError(f"{where}: map needs at least one expression")
        for e in exprs:
            _check_cols(e, arity, where)
        return build_map(c, node, exprs), len(exprs), False

    if op == "distinct":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        return build_distinct(c, node), arity, False

    if op in ("union", "union_all", "except", "intersect"):
        left, right = sub("left"), sub("right")
        no_events(left, right)
        if left[1] != right[1]:
            raise ValidationError(f"{where}: {op!r} operands have different arities")
        build = {
            "union": build_union,
            "union_all": build_union_all,
            "except": build_difference,
            "intersect": build_intersect,
        }[op]
        return build(c, left[0], right[0]), left[1], False

    if op in ("join", "antijoin", "cartesian"):
        left, right = sub("left"), sub("right")
        no_events(left, right)
        if op == "cartesian":
            return build_cartesian(c, left[0], right[0]), left[1] + right[1], False
        lk = _parse_keys(q.get("left_key", []), left[1], where)
        rk = _parse_keys(q.get("right_key", []), right[1], where)
        if len(lk) != len(rk):
            raise ValidationError(f"{where}: join key arity mismatch")
        if op == "join":
            return build_equijoin(c, left[0], right[0], lk, rk), left[1] + right[1], False
        return build_antijoin(c, left[0], right[0], lk, rk), left[1], False

    if op == "aggregate":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        kind = q.get("agg")
        column = q.get("column", 0)
        group = q.get("group_by")
        if not isinstance(column, int) or not 0 <= column < arity:
            raise ValidationError(f"{where}: bad aggregate column {column!r}")
        if group is not None:
            if not isinstance(group, list) or not all(isinstance(i, int) and 0 <= i < arity for i in group):
                raise ValidationError(f"{where}: bad group_by columns {group!r}")
        out_arity = (len(group) if group else 0) + 1
        return build_aggregate(c, node, kind, column, group), out_arity, False

    if op == "window":
        node, arity, ev = sub("input")
        no_events((node, arity, ev))
        theta = q.get("theta")
        if theta not in env or not env[theta][2]:
            raise ValidationError(f"{where}: window clock {theta!r} must be an event-stream relation")
        ts_column = q.get("ts_column", 0)
        if not isinstance(ts_column, int) or not 0 <= ts_column < arity:
            raise ValidationError(f"{where}: bad ts_column {ts_column!r}")
        spec = WindowSpec(ts_column=ts_column, width=q.get("width"))
        return build_window_snapshot(c, node, env[theta][0], spec), arity, False

    if op == "stream_join":
        left = sub("left")
        right = sub("right")
        no_events(left)
        if not right[2]:
            raise ValidationError(f"{where}: stream_join right side must be an event stream")
        lk = _parse_keys(q.get("left_key", []), left[1], where)
        rk = _parse_keys(q.get("right_key", []), right[1], where)
        if len(lk) != len(rk):
            raise ValidationError(f"{where}: join key arity mismatch")
        # Scalar reading: accumulated relation joined with the tick's events.
        # The accumulation itself comes from the surrounding integrate bracket
        # (reference) or from the incremental rewrite (optimized).
        fn = JoinFn(KeyFunc(lk), KeyFunc(rk), label="stream_join")
        node = c.add_lifted(fn, [left[0], right[0]], klass="bilinear", label="stream_join")
        return node, left[1] + right[1], True

    raise ValidationError(f"{where}: unknown operator {op!r}")
