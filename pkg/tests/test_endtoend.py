"""Randomized end-to-end fuzzing: every operator kind under compare mode,
plus the documented quick-tour snippets and the threading contract."""

import json
import random
import threading

from deltaflow import ZSet
from deltaflow.runner import compile_circuits, run_trace
from deltaflow.specfile import compile_spec
from deltaflow.trace import Transaction
from oracles import as_z

FUZZ_DOC = {
    "relations": [
        {"name": "a", "columns": ["k", "v"]},
        {"name": "b", "columns": ["k", "w"]},
        {"name": "ev", "columns": ["k", "tag"], "kind": "stream"},
        {"name": "clk", "columns": ["now"], "kind": "stream"},
    ],
    "recursive": {
        "relations": [{"name": "hop", "columns": ["x", "y"]}],
        "rules": [
            {"head": {"rel": "hop", "terms": ["x", "y"]}, "body": [{"rel": "a", "terms": ["x", "y"]}]},
            {
                "head": {"rel": "hop", "terms": ["x", "y"]},
                "body": [{"rel": "a", "terms": ["x", "z"]}, {"rel": "hop", "terms": ["z", "y"]}],
            },
        ],
    },
    "views": [
        {"name": "joined", "query": {
            "op": "join", "left": {"op": "rel", "name": "a"}, "right": {"op": "rel", "name": "b"},
            "left_key": [0], "right_key": [0]}},
        {"name": "summed", "query": {
            "op": "aggregate", "agg": "sum", "column": 1, "group_by": [0], "input": {"op": "rel", "name": "a"}}},
        {"name": "uni", "query": {
            "op": "union", "left": {"op": "rel", "name": "a"}, "right": {"op": "rel", "name": "b"}}},
        {"name": "diff", "query": {
            "op": "except", "left": {"op": "rel", "name": "a"}, "right": {"op": "rel", "name": "b"}}},
        {"name": "anti", "query": {
            "op": "antijoin", "left": {"op": "rel", "name": "a"}, "right": {"op": "rel", "name": "hop"},
            "left_key": [0], "right_key": [0]}},
        {"name": "far", "query": {
            "op": "distinct", "input": {"op": "project", "columns": [1], "input": {"op": "rel", "name": "hop"}}}},
        {"name": "recent", "query": {
            "op": "window", "input": {"op": "rel", "name": "a"}, "ts_column": 1, "width": 4, "theta": "clk"}},
        {"name": "matches", "query": {
            "op": "stream_join", "left": {"op": "rel", "name": "a"}, "right": {"op": "rel", "name": "ev"},
            "left_key": [0], "right_key": [0]}},
        {"name": "big_matches", "query": {
            "op": "stream_join",
            "left": {"op": "filter", "predicate": [">", ["col", 1], ["const", 1]], "input": {"op": "rel", "name": "a"}},
            "right": {"op": "rel", "name": "ev"},
            "left_key": [0], "right_key": [0]}},
    ],
}


def fuzz_trace(seed, ticks=8, dom=4):
    rng = random.Random(seed)
    clock = 0
    txs = []
    for t in range(ticks):
        changes = {}
        for rel in ("a", "b"):
            rows = [
                ((rng.randrange(dom), rng.randrange(dom)), rng.choice([1, 1, -1]))
                for _ in range(rng.randrange(4))
            ]
            if rows:
                changes[rel] = ZSet(rows)
        ev = [((rng.randrange(dom), "e%d" % rng.randrange(3)), 1) for _ in range(rng.randrange(2))]
        if ev:
            changes["ev"] = ZSet(ev)
        clock += rng.randrange(3)
        changes["clk"] = ZSet({(clock,): 1})
        txs.append(Transaction(tx=t, changes=changes))
    return txs


class TestCompareFuzz:
    def test_fifty_seeds_all_operators(self):
        spec = compile_spec(FUZZ_DOC)
        cs = compile_circuits(spec, mode="compare")
        for seed in range(50):
            cs.incremental.reset()
            cs.reference.reset()
            report = run_trace(cs, fuzz_trace(seed, ticks=12, dom=5), "compare")
            assert report.verdict == {"equal": True}, (seed, report.verdict)


class TestThreading:
    def test_distinct_circuits_run_concurrently(self):
        spec = compile_spec(FUZZ_DOC)
        trace = fuzz_trace(3, ticks=6)

        def worker(results, idx):
            cs = compile_circuits(spec, mode="incremental")
            report = run_trace(cs, trace, "incremental")
            results[idx] = [
                {view: tick["changes"][view] for view in spec.view_names} for tick in report.ticks
            ]

        results = [None] * 4
        threads = [threading.Thread(target=worker, args=(results, i)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == results[0] for r in results)


class TestReadmeSnippets:
    def test_quick_tour(self):
        from deltaflow import Circuit, incrementalize_query
        from deltaflow.expr import BinOp, Col, Const, KeyFunc
        from deltaflow.relational import build_distinct, build_equijoin, build_filter

        c = Circuit()
        orders = c.add_source("orders")
        custs = c.add_source("custs")
        big = build_filter(c, orders, BinOp(">", Col(2), Const(100)))
        j = build_equijoin(c, big, custs, KeyFunc([1]), KeyFunc([0]))
        c.add_sink(build_distinct(c, j), "v")

        inc = incrementalize_query(c)
        delta = ZSet({(1, 7, 250): 1})
        out = inc.step({"orders": delta, "custs": ZSet({(7, "eu"): 1})})["v"]
        assert as_z(out) == ZSet({(1, 7, 250, 7, "eu"): 1})

    def test_quick_tour_recursion(self):
        from deltaflow import Atom, Rule, RuleProgram, build_incremental_recursive

        tc = RuleProgram(
            inputs={"E": 2},
            outputs={"R": 2},
            rules=[
                Rule(Atom("R", ("x", "y")), (Atom("E", ("x", "y")),)),
                Rule(Atom("R", ("x", "y")), (Atom("E", ("x", "z")), Atom("R", ("z", "y")))),
            ],
        )
        circ = build_incremental_recursive(tc)
        out = as_z(circ.step({"E": ZSet({(1, 2): 1})})["R"])
        assert out == ZSet({(1, 2): 1})


class TestSharedDistinctNotDropped:
    def test_consolidation_respects_sharing(self):
        import random as _r

        from deltaflow import Circuit, consolidate_distinct, incrementalize_naive, lift_stream
        from deltaflow.expr import KeyFunc
        from deltaflow.relational import build_distinct, build_equijoin, build_projection

        def build():
            c = Circuit()
            s = c.add_source("s")
            d = build_distinct(c, s)  # shared by two consumers
            p = build_projection(c, d, [0])
            j = build_equijoin(c, d, d, KeyFunc([0]), KeyFunc([0]))
            c.add_sink(build_distinct(c, p), "p")
            c.add_sink(build_distinct(c, j), "j")
            return c

        base = incrementalize_naive(lift_stream(build()))
        cons = incrementalize_naive(lift_stream(consolidate_distinct(build())))
        rng = _r.Random(0)
        cur = set()
        for _ in range(25):
            ins = {(rng.randrange(4), rng.randrange(4)) for _ in range(2)} - cur
            dels = {r for r in cur if rng.random() < 0.3}
            cur = (cur | ins) - dels
            delta = ZSet([(r, 1) for r in ins] + [(r, -1) for r in dels])
            a = base.step({"s": delta})
            b = cons.step({"s": delta})
            assert as_z(a["p"]) == as_z(b["p"])
            assert as_z(a["j"]) == as_z(b["j"])
