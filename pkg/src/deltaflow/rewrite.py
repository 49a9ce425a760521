"""Circuit-to-circuit transforms: distinct consolidation, lifting to streams,
naive incrementalization, and the chain-rule optimizer.

The optimizer walks a naively incrementalized circuit and rebuilds it so that
every edge carries changes instead of snapshots:

* linear and delay-class nodes are their own incremental versions and copy
  over unchanged;
* bilinear nodes expand into three terms against delayed integrals of their
  inputs;
* distinct becomes the sign-transition form (integrate, delay, H);
* anything else keeps explicit integrate/differentiate brackets;
* feedback loops keep their shape with the incremental body (cycle rule);
* nested fixpoint domains are rebuilt with the same rules one clock level
  down, which is where the four-way join expansion and the two-level
  distinct block come from.
"""

from .circuit import BILINEAR, GENERAL, LINEAR, Circuit, _STATEFUL_KINDS
from .errors import CircuitError
from .relational import DistinctDeltaFn, build_inc_distinct, build_inc_join

_RULE_COMMUTE = {"filter", "join", "cartesian", "intersect", "semijoin"}
_RULE_ABSORB = _RULE_COMMUTE | {"project", "map", "plus"}


# -- algorithm pipeline -------------------------------------------------------


def lift_stream(c):
    """Read a scalar circuit as a stream circuit (pointwise per tick).

    Per-tick evaluation is unchanged; this marks intent for the later stages.
    """
    out = c.clone()
    out.lift_count += 1
    return out


def incrementalize_naive(c):
    """Wrap a stream circuit as integrate -> body -> differentiate.

    The result consumes per-tick deltas and emits per-tick deltas, but the
    body still computes on full snapshots.  Event-typed sources and sinks
    stay raw: they are per-tick values, not changes of anything.
    """
    out = Circuit(level=c.level)
    out.lift_count = c.lift_count
    mapping = {}
    pending_feedback = []
    for n in c.nodes:
        if n.kind == "source":
            sid = out.add_source(n.name, sort=n.meta.get("sort", "zset"), event=n.meta.get("event", False))
            if n.meta.get("event"):
                mapping[n.id] = sid
            else:
                iid = out.add_integrate(sid, depth=c.level)
                out.nodes[iid].meta["bracket"] = "i"
                mapping[n.id] = iid
        else:
            mapping[n.id] = _copy_node(out, n, mapping, pending_feedback)
    _connect_pending(out, mapping, pending_feedback)
    for name, nid in c.sinks.items():
        if name in c.event_sinks:
            out.add_sink(mapping[nid], name, event=True)
        else:
            did = out.add_differentiate(mapping[nid], depth=c.level)
            out.nodes[did].meta["bracket"] = "d"
            out.add_sink(did, name)
    return out


def deincrementalize_naive(c):
    """The inverse reading: differentiate inputs, integrate outputs."""
    out = Circuit(level=c.level)
    out.lift_count = c.lift_count
    mapping = {}
    pending_feedback = []
    for n in c.nodes:
        if n.kind == "source":
            sid = out.add_source(n.name, sort=n.meta.get("sort", "zset"), event=n.meta.get("event", False))
            mapping[n.id] = sid if n.meta.get("event") else out.add_differentiate(sid, depth=c.level)
        else:
            mapping[n.id] = _copy_node(out, n, mapping, pending_feedback)
    _connect_pending(out, mapping, pending_feedback)
    for name, nid in c.sinks.items():
        if name in c.event_sinks:
            out.add_sink(mapping[nid], name, event=True)
        else:
            out.add_sink(out.add_integrate(mapping[nid], depth=c.level), name)
    return out


def incrementalize_query(c):
    """Turn a scalar query circuit into its optimized incremental form.

    Stages: consolidate distinct operators, reinterpret the circuit over
    streams, wrap it in integrate/differentiate so it maps deltas to deltas,
    then push the incrementalization through every node so no full snapshot
    is rebuilt where a cheaper form exists.
    """
    return optimize(incrementalize_naive(lift_stream(consolidate_distinct(c))))


def differential_check(scalar, traces, raise_on_mismatch=True):
    """Randomized soundness check: the optimized incremental circuit must be
    tick-for-tick equal to the snapshot-recompute form on every given trace
    (a list of lists of source-name -> delta dicts).  Returns the first
    mismatch as (trace_index, tick, view, incremental, reference) or None.
    """
    from .groupval import gv_eq

    naive = incrementalize_naive(lift_stream(scalar))
    opt = optimize(naive)
    for ti, trace in enumerate(traces):
        naive.reset()
        opt.reset()
        for tick, inputs in enumerate(trace):
            a = opt.step(inputs)
            b = naive.step(inputs)
            for view in scalar.sinks:
                if not gv_eq(a[view], b[view]):
                    found = (ti, tick, view, a[view], b[view])
                    if raise_on_mismatch:
                        raise CircuitError(
                            f"rewrite mismatch on trace {ti} tick {tick} view {view!r}: {a[view]!r} != {b[view]!r}"
                        )
                    return found
    return None


def reference_circuit(c):
    """Snapshot-recompute form: integrate inputs, run the query, differentiate."""
    return incrementalize_naive(lift_stream(c))


# -- node copying helpers ------------------------------------------------------


def _copy_node(out, n, mapping, pending_feedback):
    if n.kind in _STATEFUL_KINDS and n.meta.get("feedback"):
        nid = out.add_feedback(depth=n.depth, delayed=n.meta.get("delayed", True))
        if n.inputs:
            pending_feedback.append((nid, n.inputs[0]))
        return nid
    meta = dict(n.meta)
    if n.kind == "nested":
        inner = meta["inner"].clone()
        inner.metrics = out.metrics
        meta["inner"] = inner
    nid = out._add(
        n.kind,
        tuple(mapping[i] for i in n.inputs),
        depth=n.depth,
        fn=n.fn,
        label=n.label,
        klass=n.klass,
        meta=meta,
    )
    if n.kind == "delta0":
        out.entry_id = nid
    elif n.kind == "stream_sum":
        out.sum_id = nid
    return nid


def _connect_pending(out, mapping, pending_feedback):
    for stub, old_from in pending_feedback:
        out.connect_feedback(mapping[old_from], stub)


# -- the chain-rule optimizer ---------------------------------------------------


def optimize(c):
    """Push the incrementalization through a naively incrementalized circuit."""
    if not any(n.meta.get("bracket") == "i" for n in c.nodes):
        raise CircuitError("optimize expects a naively incrementalized circuit (no brackets found)")
    out = Circuit(level=c.level)
    out.lift_count = c.lift_count
    seeds = {}
    for n in c.nodes:
        if n.kind == "source":
            seeds[n.id] = out.add_source(n.name, sort=n.meta.get("sort", "zset"), event=n.meta.get("event", False))
    dmap = _delta_compile(c, out, seeds, bracket_depth=c.level)
    for name, nid in c.sinks.items():
        out.add_sink(dmap[nid], name, event=name in c.event_sinks)
    return prune_dead_nodes(out)


def _delta_compile(src, out, dmap, bracket_depth):
    """Map every node of src to a node of out computing its delta stream.

    dmap is seeded with the circuit's inputs and mutated in place.
    """
    pending_feedback = []
    for n in src.nodes:
        if n.id in dmap:
            continue
        if n.meta.get("in_group"):
            dmap[n.id] = None  # folded into its fragment's dedicated rewrite
            continue
        dmap[n.id] = _delta_node(src, out, n, dmap, bracket_depth, pending_feedback)
    _connect_pending(out, dmap, pending_feedback)
    return dmap


def _delta_node(src, out, n, dmap, bracket_depth, pending_feedback):
    kind = n.kind

    if n.meta.get("bracket") in ("i", "d"):
        return dmap[n.inputs[0]]  # the delta of an integral/derivative bracket is its input

    if kind == "source":
        raise CircuitError("sources must be seeded before delta compilation")

    if kind == "delta0":
        nid = out.add_delta0(depth=n.depth)
        return nid

    if kind == "stream_sum":
        nid = out.add_stream_sum(
            dmap[n.inputs[0]],
            termination=n.meta.get("termination"),
            max_iterations=n.meta.get("cap"),
        )
        if n.meta.get("cap_forced"):
            out.nodes[nid].meta["cap_forced"] = True
        return nid

    if kind == "plus":
        group = n.meta.get("inc_join")
        if group is not None:
            return _nested_inc_join(out, n, group, dmap, bracket_depth)
        return out.add_plus([dmap[i] for i in n.inputs])

    if kind == "negate":
        return out.add_negate(dmap[n.inputs[0]])

    if kind in _STATEFUL_KINDS:
        if n.meta.get("feedback"):
            nid = out.add_feedback(depth=n.depth, delayed=n.meta.get("delayed", True))
            if n.inputs:
                pending_feedback.append((nid, n.inputs[0]))
            return nid
        meta = {"index_key": n.meta["index_key"]} if "index_key" in n.meta else {}
        return out._add(n.kind, (dmap[n.inputs[0]],), depth=n.depth, klass=n.klass, meta=meta)

    if kind == "nested":
        return _delta_nested(out, n, dmap, bracket_depth)

    if kind == "window":
        wf = out._add(
            "window_fold",
            (dmap[n.inputs[0]], dmap[n.inputs[1]]),
            klass=GENERAL,
            label="window",
            meta={"window": n.meta["window"]},
        )
        return out.add_differentiate(wf, depth=bracket_depth)

    if kind == "lifted":
        return _delta_lifted(src, out, n, dmap, bracket_depth)

    raise CircuitError(f"no incremental rewrite for node kind {kind!r}")


def _delta_lifted(src, out, n, dmap, bracket_depth):
    fn = n.meta.get("base_fn", n.fn)
    ins = [dmap[i] for i in n.inputs]

    if n.label == "distinct_delta":
        # Incremental distinct seen one clock level up: integrate the delta on
        # this axis, re-derive the inner running sums, diff the H output back.
        d = dmap[n.meta["inc_distinct_input"]]
        loop_depth = n.meta.get("depth", n.depth)
        cur = out.add_integrate(d, depth=bracket_depth)
        li = out.add_integrate(cur, depth=loop_depth)
        lz = out.add_delay(li, depth=loop_depth)
        h = out.add_lifted(DistinctDeltaFn(), [lz, cur], klass=GENERAL, label="distinct_delta")
        return out.add_differentiate(h, depth=bracket_depth)

    if n.label == "stream_join":
        keys = fn.index_keys()
        acc = out.add_integrate(ins[0], depth=bracket_depth, index_key=keys[0])
        return out.add_lifted(fn, [acc, ins[1]], klass=BILINEAR, label="stream_join")

    if n.klass == LINEAR:
        return out.add_lifted(fn, ins, klass=LINEAR, label=n.label)

    if n.klass == BILINEAR:
        return build_inc_join(out, ins[0], ins[1], None, None, depth=bracket_depth, fn=fn)

    if n.label == "distinct":
        return build_inc_distinct(out, ins[0], depth=bracket_depth)

    # General operator: keep explicit brackets around it.
    event_inputs = _event_nodes(src)
    wrapped = [
        i if old in event_inputs else out.add_integrate(i, depth=bracket_depth)
        for i, old in zip(ins, n.inputs)
    ]
    mid = out.add_lifted(fn, wrapped, klass=n.klass, label=n.label)
    return out.add_differentiate(mid, depth=bracket_depth)


def _event_nodes(c):
    return {n.id for n in c.nodes if n.kind == "source" and n.meta.get("event")}


def _nested_inc_join(out, plus_node, group, dmap, bracket_depth):
    """Dedicated rewrite for an already-incremental join one clock level up.

    The three-term expansion is bilinear as a whole, so incrementalizing it
    again would give nine join terms; they telescope into four.
    """
    fn = group["fn"]
    a = dmap[group["a"]]
    b = dmap[group["b"]]
    loop_depth = group.get("depth", bracket_depth + 1)
    ka, kb = fn.index_keys() if hasattr(fn, "index_keys") else (None, None)

    # Parent-clock state must only integrate change-typed edges (zero beyond
    # each tick's run length); running loop integrals are not.  The two axes
    # commute, so integrate on the parent clock first and rebuild the loop
    # integral inside the tick.
    lia = out.add_integrate(a, depth=loop_depth)
    ia = out.add_integrate(a, depth=bracket_depth, index_key=ka)
    zia = out.add_delay(ia, depth=bracket_depth)
    iia = out.add_integrate(ia, depth=loop_depth)

    ib = out.add_integrate(b, depth=bracket_depth, index_key=kb)
    zb = out.add_delay(ib, depth=bracket_depth)
    lib = out.add_integrate(b, depth=loop_depth)
    iib = out.add_integrate(ib, depth=loop_depth)
    ziib = out.add_delay(iib, depth=loop_depth)
    zib = out.add_delay(lib, depth=loop_depth)

    j1 = out.add_lifted(fn, [a, ziib], klass=BILINEAR, label=fn.label)
    j2 = out.add_lifted(fn, [lia, zb], klass=BILINEAR, label=fn.label)
    j3 = out.add_lifted(fn, [iia, b], klass=BILINEAR, label=fn.label)
    j4 = out.add_lifted(fn, [zia, zib], klass=BILINEAR, label=fn.label)
    return out.add_plus([j1, j2, j3, j4])


def _delta_nested(out, n, dmap, bracket_depth):
    inner_old = n.meta["inner"]
    if any(x.meta.get("bracket") == "i" for x in inner_old.nodes):
        inner_old = loop_incrementalize(inner_old)
    nid, inner_new = out.add_nested(dmap[n.inputs[0]])
    seeds = {}
    _delta_compile(inner_old, inner_new, seeds, bracket_depth=inner_new.level - 1)
    return nid


def loop_incrementalize(inner):
    """Incrementalize a fixpoint body along its own loop clock.

    For a naive evaluation body this yields the semi-naive form: the loop
    carries per-iteration changes instead of growing snapshots.
    """
    out = Circuit(level=inner.level, inner=True)
    seeds = {}
    _delta_compile(inner, out, seeds, bracket_depth=inner.level)
    return out


# -- distinct consolidation -------------------------------------------------------


def consolidate_distinct(c):
    """Push distinct operators down and drop the redundant ones (fixpoint).

    Valid only for positive (set-semantics) subgraphs, tracked per node:
    a distinct feeding an eligible operator commutes to its output, and a
    distinct whose result is re-distinct-ed downstream is dropped.
    """
    c = c.clone()
    for _ in range(1000):
        if not _consolidate_once(c):
            break
    else:
        raise CircuitError("distinct consolidation did not converge")
    return _rebuild_topological(c)


def _is_distinct(n):
    return n.kind == "lifted" and n.label == "distinct"


def _positive_nodes(c):
    pos = set()
    eligible = {"filter", "project", "map", "join", "cartesian", "intersect", "semijoin", "distinct"}
    for n in c.nodes:
        if n.kind == "source" and not n.meta.get("event"):
            pos.add(n.id)
        elif n.kind == "nested" or n.kind in ("window", "window_fold"):
            pos.add(n.id)
        elif n.kind == "lifted" and n.label in eligible and all(i in pos for i in n.inputs):
            pos.add(n.id)
        elif n.kind == "plus" and all(i in pos for i in n.inputs):
            pos.add(n.id)
    return pos


def _consumers(c):
    cons = {n.id: [] for n in c.nodes}
    for n in c.nodes:
        for i in n.inputs:
            cons[i].append(n.id)
    for nid in c.sinks.values():
        cons[nid].append(-1)  # sinks pin their node
    return cons


def _consolidate_once(c):
    pos = _positive_nodes(c)
    cons = _consumers(c)

    for n in c.nodes:
        # idempotence: distinct(distinct(x)) -> distinct(x)
        if _is_distinct(n):
            inner = c.nodes[n.inputs[0]]
            if _is_distinct(inner):
                n.inputs = (inner.inputs[0],)
                return True

        # absorb: distinct(Q(distinct(x))) -> distinct(Q(x))
        if _is_distinct(n):
            q = c.nodes[n.inputs[0]]
            label = q.label if q.kind == "lifted" else ("plus" if q.kind == "plus" else None)
            if label in _RULE_ABSORB:
                for slot, i in enumerate(q.inputs):
                    d1 = c.nodes[i]
                    if (
                        _is_distinct(d1)
                        and cons[d1.id] == [q.id]
                        and d1.inputs[0] in pos
                        and all(j in pos for j in q.inputs)
                    ):
                        q.inputs = q.inputs[:slot] + (d1.inputs[0],) + q.inputs[slot + 1 :]
                        return True

        # commute: Q(distinct(x)) -> distinct(Q(x)) for filter/join-like Q
        if n.kind == "lifted" and n.label in _RULE_COMMUTE:
            for slot, i in enumerate(n.inputs):
                d1 = c.nodes[i]
                if (
                    _is_distinct(d1)
                    and cons[d1.id] == [n.id]
                    and d1.inputs[0] in pos
                    and all(j in pos for j in n.inputs)
                ):
                    n.inputs = n.inputs[:slot] + (d1.inputs[0],) + n.inputs[slot + 1 :]
                    _insert_distinct_after(c, n)
                    return True
    return False


def _insert_distinct_after(c, node):
    from .relational import DistinctFn

    nid = c._add("lifted", (node.id,), fn=DistinctFn(), klass=GENERAL, label="distinct")
    for m in c.nodes:
        if m.id in (nid, node.id):
            continue
        if node.id in m.inputs:
            m.inputs = tuple(nid if i == node.id else i for i in m.inputs)
    for name, sid in list(c.sinks.items()):
        if sid == node.id:
            c.sinks[name] = nid


def _rebuild_topological(c):
    """Re-emit nodes so ids are again a topological order, dropping dead ones.

    Feedback stubs impose no ordering constraint on their own input edge (it
    resolves at end of tick), which is exactly why legal cycles sort.
    """
    import heapq

    roots = list(c.sinks.values())
    if c.is_inner:
        roots += [x for x in (c.entry_id, c.sum_id) if x is not None]
    reach = set()
    stack = list(roots)
    while stack:
        nid = stack.pop()
        if nid in reach:
            continue
        reach.add(nid)
        stack.extend(c.nodes[nid].inputs)

    indeg = {nid: 0 for nid in reach}
    consumers = {nid: [] for nid in reach}
    for nid in reach:
        n = c.nodes[nid]
        if n.meta.get("feedback"):
            continue
        for i in n.inputs:
            consumers[i].append(nid)
            indeg[nid] += 1
    heap = [nid for nid in reach if indeg[nid] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        nid = heapq.heappop(heap)
        order.append(nid)
        for m in consumers[nid]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    if len(order) != len(reach):
        raise CircuitError("cycle without a strict (delay) operator")

    out = Circuit(level=c.level, inner=c.is_inner)
    out.lift_count = c.lift_count
    mapping = {}
    pending = []
    for nid in order:
        n = c.nodes[nid]
        if n.kind == "source":
            mapping[nid] = out.add_source(n.name, sort=n.meta.get("sort", "zset"), event=n.meta.get("event", False))
        else:
            mapping[nid] = _copy_node(out, n, mapping, pending)
    _connect_pending(out, mapping, pending)
    for name, sid in c.sinks.items():
        out.add_sink(mapping[sid], name, event=name in c.event_sinks)
    return out


def prune_dead_nodes(c):
    """Drop nodes not reachable from any sink (or loop skeleton)."""
    return _rebuild_topological(c)
