"""Execution engine behind the CLI: incremental / reference / compare runs
over a change trace, plus the built-in benchmark workloads."""

import random
import time
from dataclasses import dataclass

from .errors import DivergenceError, ValidationError
from .groupval import ZERO
from .rewrite import consolidate_distinct, incrementalize_naive, lift_stream, optimize
from .trace import RunReport
from .zset import ZSet

MODES = ("incremental", "reference", "compare")


@dataclass
class CompiledSpec:
    spec: object
    incremental: object = None
    reference: object = None


def compile_circuits(spec, mode="compare", max_iterations=None):
    """Build the run pipelines from one consolidated query circuit.

    Both modes share the consolidated form, so compare mode checks the
    incrementalization itself and stays exact even on traces that push
    multiplicities outside set semantics.
    """
    cs = CompiledSpec(spec=spec)
    naive = incrementalize_naive(lift_stream(consolidate_distinct(spec.circuit)))
    if mode in ("incremental", "compare"):
        cs.incremental = optimize(naive)
        _apply_cap(cs.incremental, max_iterations)
    if mode in ("reference", "compare"):
        cs.reference = naive
        _apply_cap(cs.reference, max_iterations)
    return cs


def _apply_cap(circuit, cap):
    if cap is None:
        return
    for n in circuit.nodes:
        if n.kind == "stream_sum":
            n.meta["cap"] = cap
            n.meta["cap_forced"] = True
        elif n.kind == "nested":
            _apply_cap(n.meta["inner"], cap)


def _tick_inputs(spec, t):
    empty = ZSet()
    inputs = {name: empty for name in spec.relations}
    if t is not None:
        for rel, z in t.changes.items():
            inputs[rel] = z
    return inputs


def _step_circuit(circuit, inputs):
    m = circuit.metrics
    t0, i0 = m.tuples, m.iterations
    start = time.perf_counter_ns()
    out = circuit.step(inputs)
    wall = time.perf_counter_ns() - start
    return out, {"tuples": m.tuples - t0, "iterations": m.iterations - i0, "wall_ns": wall}


def run_trace(cs, trace, mode):
    """Run a trace in one of the three modes, producing per-tick view deltas.

    Compare mode runs both pipelines and records the first divergence.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    spec = cs.spec
    report = RunReport(mode=mode)
    verdict = {"equal": True} if mode == "compare" else None
    for t in trace:
        inputs = _tick_inputs(spec, t)
        tick = {"tx": t.tx, "changes": {}}
        metrics = {"tx": t.tx}
        if mode in ("incremental", "compare"):
            out_inc, m = _step_circuit(cs.incremental, inputs)
            metrics.update(m)
        if mode in ("reference", "compare"):
            out_ref, m = _step_circuit(cs.reference, inputs)
            if mode == "reference":
                metrics.update(m)
            else:
                metrics["reference_tuples"] = m["tuples"]
                metrics["reference_iterations"] = m["iterations"]
                metrics["reference_wall_ns"] = m["wall_ns"]
        primary = out_inc if mode in ("incremental", "compare") else out_ref
        for view in spec.view_names:
            tick["changes"][view] = _as_zset_out(primary[view])
        if mode == "compare" and verdict["equal"]:
            for view in spec.view_names:
                a = _as_zset_out(out_inc[view])
                b = _as_zset_out(out_ref[view])
                if a != b:
                    verdict = {
                        "equal": False,
                        "tx": t.tx,
                        "view": view,
                        "incremental": [[list(r) if type(r) is tuple else [r], w] for r, w in a.items()],
                        "reference": [[list(r) if type(r) is tuple else [r], w] for r, w in b.items()],
                    }
                    break
        report.ticks.append(tick)
        report.metrics.append(metrics)
    report.verdict = verdict
    return report


def check_verdict(report):
    v = report.verdict
    if v is not None and not v["equal"]:
        raise DivergenceError(
            f"first divergence at tx {v['tx']} in view {v['view']!r}",
            tick=v["tx"],
            view=v["view"],
            expected=v["reference"],
            actual=v["incremental"],
        )


def _as_zset_out(v):
    if isinstance(v, ZSet):
        return v
    if v is ZERO:
        return ZSet()
    raise ValidationError(f"view produced a non-relational value: {type(v).__name__}")


# -- benchmark workloads -----------------------------------------------------------


def _join_bench_spec():
    from .specfile import compile_spec

    return compile_spec(
        {
            "relations": [
                {"name": "orders", "columns": ["id", "cust"]},
                {"name": "customers", "columns": ["id", "region"]},
            ],
            "views": [
                {
                    "name": "enriched",
                    "query": {
                        "op": "join",
                        "left": {"op": "rel", "name": "orders"},
                        "right": {"op": "rel", "name": "customers"},
                        "left_key": [1],
                        "right_key": [0],
                    },
                }
            ],
        }
    )


def bench_join(base_size, delta_size, seed, ticks=8):
    """Large accumulated join, small per-tick deltas: wall-time ratio of
    reference recompute over incremental step."""
    from .trace import Transaction

    rng = random.Random(seed)
    spec = _join_bench_spec()
    cs = compile_circuits(spec, mode="compare")
    base_orders = ZSet([((i, i % (base_size // 2 + 1)), 1) for i in range(base_size)])
    base_cust = ZSet([((i, f"r{i % 7}"), 1) for i in range(base_size // 2 + 1)])
    load = Transaction(tx=0, changes={"orders": base_orders, "customers": base_cust})

    inc_ns = []
    ref_ns = []
    inputs = _tick_inputs(spec, load)
    _step_circuit(cs.incremental, inputs)
    _step_circuit(cs.reference, inputs)
    next_id = base_size
    for k in range(1, ticks + 1):
        rows = ZSet([((next_id + j, rng.randrange(base_size // 2 + 1)), 1) for j in range(delta_size)])
        next_id += delta_size
        t = Transaction(tx=k, changes={"orders": rows})
        inputs = _tick_inputs(spec, t)
        out_inc, m_inc = _step_circuit(cs.incremental, inputs)
        out_ref, m_ref = _step_circuit(cs.reference, inputs)
        for view in spec.view_names:
            if _as_zset_out(out_inc[view]) != _as_zset_out(out_ref[view]):
                raise DivergenceError(f"bench divergence at tick {k}")
        inc_ns.append(m_inc["wall_ns"])
        ref_ns.append(m_ref["wall_ns"])
    inc = sum(inc_ns) / len(inc_ns)
    ref = sum(ref_ns) / len(ref_ns)
    return {
        "workload": "join",
        "base_size": base_size,
        "delta_size": delta_size,
        "ticks": ticks,
        "incremental_ns_per_tick": int(inc),
        "reference_ns_per_tick": int(ref),
        "speedup": ref / inc if inc else float("inf"),
    }


def _closure_spec():
    from .specfile import compile_spec

    return compile_spec(
        {
            "relations": [{"name": "E", "columns": ["h", "t"]}],
            "recursive": {
                "relations": [{"name": "R", "columns": ["s", "t"]}],
                "rules": [
                    {"head": {"rel": "R", "terms": ["x", "x"]}, "body": [{"rel": "E", "terms": ["x", "_"]}]},
                    {"head": {"rel": "R", "terms": ["x", "x"]}, "body": [{"rel": "E", "terms": ["_", "x"]}]},
                    {"head": {"rel": "R", "terms": ["x", "y"]}, "body": [{"rel": "E", "terms": ["x", "y"]}]},
                    {
                        "head": {"rel": "R", "terms": ["x", "y"]},
                        "body": [{"rel": "E", "terms": ["x", "z"]}, {"rel": "R", "terms": ["z", "y"]}],
                    },
                ],
            },
        }
    )


def random_graph(n_nodes, n_edges, rng):
    edges = set()
    while len(edges) < n_edges:
        a = rng.randrange(n_nodes)
        b = rng.randrange(n_nodes)
        if a != b:
            edges.add((a, b))
    return edges


def bench_closure(n_nodes, delta_edges, seed):
    """Transitive closure under a small edge delta: inner-loop tuple counts,
    incremental versus reference recompute."""
    from .trace import Transaction

    rng = random.Random(seed)
    spec = _closure_spec()
    cs = compile_circuits(spec, mode="compare")
    edges = random_graph(n_nodes, n_nodes, rng)
    base = ZSet([(e, 1) for e in edges])
    inputs = _tick_inputs(spec, Transaction(tx=0, changes={"E": base}))
    _step_circuit(cs.incremental, inputs)
    _step_circuit(cs.reference, inputs)

    fresh = [e for e in random_graph(n_nodes, n_nodes + delta_edges, rng) if e not in edges][:delta_edges]
    t = Transaction(tx=1, changes={"E": ZSet([(e, 1) for e in fresh])})
    inputs = _tick_inputs(spec, t)
    out_inc, m_inc = _step_circuit(cs.incremental, inputs)
    out_ref, m_ref = _step_circuit(cs.reference, inputs)
    for view in spec.view_names:
        if _as_zset_out(out_inc[view]) != _as_zset_out(out_ref[view]):
            raise DivergenceError("bench divergence on closure delta")
    return {
        "workload": "closure",
        "nodes": n_nodes,
        "delta_edges": delta_edges,
        "incremental_tuples": m_inc["tuples"],
        "reference_tuples": m_ref["tuples"],
        "incremental_iterations": m_inc["iterations"],
        "reference_iterations": m_ref["iterations"],
    }
