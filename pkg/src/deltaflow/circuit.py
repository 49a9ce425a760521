"""Executable stream circuits.

A Circuit is a DAG of operator nodes evaluated once per clock tick.  Cycles
are only created through feedback stubs, which must be strict (delay-class);
the engine resolves them by reading the delay's stored previous value first
and latching its new input at the end of the tick.

Stateful operators carry a `depth` (number of liftings applied):

* depth == circuit.level: the operator runs on this circuit's own clock;
* depth == circuit.level + 1: the operator is lifted one level past the
  clock, so its per-tick value is a StreamVector and the operator acts along
  the vector (column) axis statelessly;
* depth == circuit.level - 1: the operator runs on the parent clock of a
  nested domain; its state is a vector indexed by the local tick and it
  persists across parent ticks.

Nested clock domains are bracketed by a single delta0 entry and a single
stream-sum exit.  Each parent tick runs the inner clock until the sum node's
input hits the termination predicate (default: the group zero), with a floor
of the longest run seen so far when the domain carries parent-clock state, so
corrections from earlier ticks are fully replayed.
"""

import os

from .errors import CircuitError, NonTerminationError, ValidationError
from .groupval import ZERO, StreamVector, as_vector, gv_add, gv_eq, gv_is_zero, gv_neg, gv_sub
from .zset import IndexedZSet, ZSet, group_by

DEFAULT_ITERATION_CAP = 1_000_000
ITERATION_CAP_ENV = "DELTAFLOW_MAX_ITER"

LINEAR = "linear"
BILINEAR = "bilinear"
GENERAL = "general"
DELAY_CLASS = "delay"
BOUNDARY = "boundary"

_STATEFUL_KINDS = frozenset({"delay", "integrate", "differentiate"})

# Extension node kinds (window operators live in relational.py).
NODE_EVAL = {}


def iteration_cap(node_cap=None, forced=False):
    """Resolve the fixpoint iteration cap.

    Precedence: a cap forced by the caller (CLI flag), then the
    DELTAFLOW_MAX_ITER environment variable, then the node's own cap, then
    the global default.
    """
    if forced and node_cap is not None:
        return node_cap
    env = os.environ.get(ITERATION_CAP_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"bad {ITERATION_CAP_ENV} value {env!r}")
    if node_cap is not None:
        return node_cap
    return DEFAULT_ITERATION_CAP


class Metrics:
    __slots__ = ("tuples", "iterations")

    def __init__(self):
        self.tuples = 0
        self.iterations = 0

    def snapshot(self):
        return {"tuples": self.tuples, "iterations": self.iterations}

    def reset(self):
        self.tuples = 0
        self.iterations = 0


class Node:
    __slots__ = ("id", "kind", "inputs", "depth", "fn", "label", "klass", "name", "meta")

    def __init__(self, id, kind, inputs=(), depth=0, fn=None, label="", klass="", name="", meta=None):
        self.id = id
        self.kind = kind
        self.inputs = tuple(inputs)
        self.depth = depth
        self.fn = fn
        self.label = label
        self.klass = klass
        self.name = name
        self.meta = meta if meta is not None else {}

    def __repr__(self):
        tag = self.label or self.name
        return f"<{self.kind}{f':{tag}' if tag else ''}#{self.id} d{self.depth}>"


class _InnerCtx:
    """Per-inner-tick evaluation context for a nested domain."""

    __slots__ = ("u", "entry", "acc", "prev", "cur")

    def __init__(self, u, entry, acc, prev, cur):
        self.u = u
        self.entry = entry
        self.acc = acc
        self.prev = prev
        self.cur = cur


class Circuit:
    def __init__(self, level=0, inner=False):
        self.nodes = []
        self.sources = {}
        self.sinks = {}
        self.event_sinks = set()
        self.level = level
        self.is_inner = inner
        self.lift_count = 0
        self.metrics = Metrics()
        self.entry_id = None
        self.sum_id = None
        self._state = {}
        self._validated = False

    # -- construction --------------------------------------------------------

    def _add(self, kind, inputs=(), **kw):
        for i in inputs:
            if not (0 <= i < len(self.nodes)):
                raise CircuitError(f"unknown input node {i}")
        node = Node(len(self.nodes), kind, inputs, **kw)
        self.nodes.append(node)
        self._validated = False
        return node.id

    def add_source(self, name, sort="zset", event=False):
        if name in self.sources:
            raise CircuitError(f"duplicate source name {name!r}")
        if self.is_inner:
            raise CircuitError("nested domains receive input through their delta0 entry")
        nid = self._add("source", (), name=name, meta={"sort": sort, "event": event})
        self.sources[name] = nid
        return nid

    def add_sink(self, node, name, event=False):
        if name in self.sinks:
            raise CircuitError(f"duplicate sink name {name!r}")
        if not (0 <= node < len(self.nodes)):
            raise CircuitError(f"sink on nonexistent node {node}")
        self.sinks[name] = node
        if event:
            self.event_sinks.add(name)
        return node

    def add_lifted(self, fn, inputs, klass=GENERAL, label=""):
        arity = getattr(fn, "arity", None)
        if arity is not None and arity != len(inputs):
            raise CircuitError(f"{label or 'function'} expects {arity} inputs, got {len(inputs)}")
        return self._add("lifted", tuple(inputs), fn=fn, klass=klass, label=label)

    def add_plus(self, inputs):
        return self._add("plus", tuple(inputs), klass=LINEAR)

    def add_negate(self, x):
        return self._add("negate", (x,), klass=LINEAR)

    def add_delay(self, x, depth=None):
        return self._add("delay", (x,), depth=self.level if depth is None else depth, klass=DELAY_CLASS)

    def add_integrate(self, x, depth=None, index_key=None):
        meta = {"index_key": index_key} if index_key is not None else {}
        return self._add(
            "integrate", (x,), depth=self.level if depth is None else depth, klass=DELAY_CLASS, meta=meta
        )

    def add_differentiate(self, x, depth=None):
        return self._add("differentiate", (x,), depth=self.level if depth is None else depth, klass=DELAY_CLASS)

    def add_feedback(self, depth=None, delayed=True):
        """A feedback stub: a delay whose input is wired up later."""
        return self._add(
            "delay",
            (),
            depth=self.level if depth is None else depth,
            klass=DELAY_CLASS,
            meta={"feedback": True, "delayed": delayed},
        )

    def connect_feedback(self, from_node, stub):
        if not (0 <= stub < len(self.nodes)) or not self.nodes[stub].meta.get("feedback"):
            raise CircuitError(f"node {stub} is not a feedback stub")
        node = self.nodes[stub]
        if node.inputs:
            raise CircuitError(f"feedback stub {stub} already connected")
        if not (0 <= from_node < len(self.nodes)):
            raise CircuitError(f"unknown node {from_node}")
        if not node.meta.get("delayed", True):
            raise CircuitError("feedback cycle without a strict (delay) operator")
        node.inputs = (from_node,)
        self._validated = False

    def add_delta0(self, depth=None):
        if not self.is_inner:
            raise CircuitError("delta0 is only valid on a nested-domain boundary")
        if self.entry_id is not None:
            raise CircuitError("nested domain already has a delta0 entry")
        nid = self._add("delta0", (), depth=self.level if depth is None else depth, klass=BOUNDARY)
        self.entry_id = nid
        return nid

    def add_stream_sum(self, x, termination=None, max_iterations=None):
        if not self.is_inner:
            raise CircuitError("stream-sum is only valid on a nested-domain boundary")
        if self.sum_id is not None:
            raise CircuitError("nested domain already has a stream-sum exit")
        nid = self._add(
            "stream_sum",
            (x,),
            klass=BOUNDARY,
            meta={"termination": termination, "cap": max_iterations},
        )
        self.sum_id = nid
        return nid

    def add_nested(self, x):
        """Open a nested clock domain fed by node x; returns (node id, inner circuit)."""
        inner = Circuit(level=self.level + 1, inner=True)
        inner.metrics = self.metrics
        nid = self._add("nested", (x,), klass=GENERAL, meta={"inner": inner})
        return nid, inner

    # -- introspection ---------------------------------------------------------

    def node(self, nid):
        return self.nodes[nid]

    def census(self):
        """Counter over (kind, label) incl. nested bodies; used by shape tests."""
        from collections import Counter

        c = Counter()
        for n in self.nodes:
            c[(n.kind, n.label)] += 1
            if n.kind == "nested":
                c.update(n.meta["inner"].census())
        return c

    def has_parent_axis(self):
        return any(n.kind in _STATEFUL_KINDS and n.depth == self.level - 1 for n in self.nodes)

    def validate(self):
        if self._validated:
            return
        for n in self.nodes:
            if n.kind in _STATEFUL_KINDS:
                eff = n.depth - self.level
                if n.meta.get("feedback") and not n.inputs:
                    raise CircuitError(f"feedback stub {n.id} left unconnected")
                if eff not in (-1, 0, 1):
                    raise CircuitError(f"node {n} nesting depth {n.depth} unusable at level {self.level}")
                if eff == -1 and not self.is_inner:
                    raise CircuitError(f"node {n} references a parent clock but has none")
            if n.kind == "nested":
                inner = n.meta["inner"]
                if inner.entry_id is None or inner.sum_id is None:
                    raise CircuitError("nested domain needs exactly one delta0 entry and one stream-sum exit")
                inner.validate()
        self._validated = True

    def reset(self):
        """Drop all operator state (including nested-domain caches)."""
        self._state.clear()
        for n in self.nodes:
            if n.kind == "nested":
                n.meta["inner"].reset()

    # -- evaluation ------------------------------------------------------------

    def step(self, inputs):
        """Advance one tick: one value per source in, one per sink out."""
        self.validate()
        for name in self.sources:
            if name not in inputs:
                raise ValidationError(f"missing input for source {name!r}")
        vals = self._eval_tick(inputs, ctx=None)
        return {name: vals[nid] for name, nid in self.sinks.items()}

    def run(self, ticks):
        """Feed a list of input dicts, returning the list of output dicts."""
        return [self.step(t) for t in ticks]

    def _eval_tick(self, inputs, ctx):
        vector_stubs = [
            n.id
            for n in self.nodes
            if n.kind == "delay" and n.meta.get("feedback") and n.depth - self.level == 1
        ]
        if not vector_stubs:
            vals, latches = self._pass(inputs, ctx, None)
        else:
            # Lifted feedback: solve the column-axis fixpoint by iteration.
            stub_vals = {sid: ZERO for sid in vector_stubs}
            for _ in range(iteration_cap()):
                vals, latches = self._pass(inputs, ctx, stub_vals)
                new_vals = {sid: as_vector(vals[self.nodes[sid].inputs[0]]).shift() for sid in vector_stubs}
                if all(gv_eq(new_vals[s], stub_vals[s]) for s in vector_stubs):
                    break
                stub_vals = new_vals
            else:
                raise NonTerminationError("lifted feedback did not stabilize")
        self._apply_latches(latches, ctx, vals)
        return vals

    def _pass(self, inputs, ctx, vector_stub_vals):
        vals = [None] * len(self.nodes)
        latches = []
        for node in self.nodes:
            vals[node.id] = self._eval_node(node, vals, inputs, ctx, vector_stub_vals, latches)
        return vals, latches

    def _apply_latches(self, latches, ctx, vals):
        # State changes are deferred to the end of the tick: delays must not
        # see their own new input, and the lifted-feedback fixpoint re-runs
        # the pass without committing anything.
        for kind, nid, a, b in latches:
            if kind == "acc":
                self._state[nid] = a
            elif kind == "defer_delay":
                self._state[nid] = vals[a]
            elif kind == "outer_acc":
                ctx.acc.setdefault(nid, {})[a] = b
            elif kind == "outer_cur_from":
                ctx.cur.setdefault(nid, {})[a] = vals[b]

    def _eval_node(self, node, vals, inputs, ctx, vector_stub_vals, latches):
        kind = node.kind
        ins = [vals[i] for i in node.inputs]

        if kind == "source":
            v = inputs[node.name]
            if node.meta.get("sort") == "zset" and not (isinstance(v, ZSet) or v is ZERO):
                raise ValidationError(f"source {node.name!r} expects a Z-set, got {type(v).__name__}")
            return v

        if kind == "lifted":
            v = node.fn(*ins)
            m = self.metrics
            if m is not None:
                # Probed arguments (indexed state looked up per element of the
                # other side) are not scanned, so they do not count as work.
                probed = getattr(node.fn, "probe_args", ())
                n = 0
                for i, x in enumerate(ins):
                    if isinstance(x, ZSet) and i not in probed:
                        n += len(x)
                if isinstance(v, ZSet):
                    n += len(v)
                m.tuples += n
            return v

        if kind == "plus":
            acc = ZERO
            for x in ins:
                acc = gv_add(acc, x)
            return acc

        if kind == "negate":
            return gv_neg(ins[0])

        if kind in _STATEFUL_KINDS:
            eff = node.depth - self.level
            if eff == 1:
                return self._eval_vector_op(node, vals, vector_stub_vals)
            if eff == 0:
                return self._eval_local_state(node, ins, latches)
            return self._eval_parent_state(node, ins, ctx, latches)

        if kind == "delta0":
            if ctx is None:
                raise CircuitError("delta0 evaluated outside a nested domain")
            return ctx.entry if ctx.u == 0 else ZERO

        if kind == "stream_sum":
            total = gv_add(self._state.get(node.id, ZERO), ins[0])
            latches.append(("acc", node.id, total, None))
            return total

        if kind == "nested":
            return self._run_block(node, ins[0])

        ev = NODE_EVAL.get(kind)
        if ev is not None:
            return ev(self, node, ins, latches)
        raise CircuitError(f"unknown node kind {kind!r}")

    def _eval_vector_op(self, node, vals, vector_stub_vals):
        if node.meta.get("feedback"):
            if vector_stub_vals is None or node.id not in vector_stub_vals:
                raise CircuitError("lifted feedback stub outside the fixpoint driver")
            return vector_stub_vals[node.id]
        v = as_vector(vals[node.inputs[0]])
        if node.kind == "delay":
            return v.shift()
        if node.kind == "integrate":
            return v.prefix_sum()
        return v.diff()

    def _eval_local_state(self, node, ins, latches):
        nid = node.id
        if node.kind == "delay":
            # Emits last tick's input; the new input latches after the full
            # tick so feedback consumers see the strict previous value.
            out = self._state.get(nid, ZERO)
            if node.inputs:
                latches.append(("defer_delay", nid, node.inputs[0], None))
            return out
        if node.kind == "integrate":
            cur = self._state.get(nid, ZERO)
            out = self._integrate_value(cur, ins[0], node.meta.get("index_key"))
            latches.append(("acc", nid, out, None))
            return out
        # differentiate
        prev = self._state.get(nid, ZERO)
        latches.append(("acc", nid, ins[0], None))
        return gv_sub(ins[0], prev)

    @staticmethod
    def _integrate_value(acc, delta, index_key):
        if index_key is None:
            return gv_add(acc, delta)
        if delta is ZERO or (isinstance(delta, ZSet) and delta.is_zero()):
            return acc if acc is not ZERO else IndexedZSet()
        if not isinstance(delta, ZSet):
            raise ValidationError("indexed integration expects Z-set deltas")
        base = {} if acc is ZERO else dict(acc._groups)
        for k, g in group_by(index_key, delta).raw_items():
            merged = base.get(k)
            merged = g if merged is None else merged + g
            if merged.is_zero():
                base.pop(k, None)
            else:
                base[k] = merged
        return IndexedZSet._wrap(base)

    def _eval_parent_state(self, node, ins, ctx, latches):
        if ctx is None:
            raise CircuitError(f"node {node} needs a parent clock")
        nid, u = node.id, ctx.u
        if node.kind == "integrate":
            cur = ctx.acc.get(nid, {}).get(u, ZERO)
            out = self._integrate_value(cur, ins[0], node.meta.get("index_key"))
            latches.append(("outer_acc", nid, u, out))
            return out
        if node.kind == "delay":
            src = node.inputs[0] if node.inputs else None
            if src is None:
                raise CircuitError(f"feedback stub {nid} left unconnected")
            latches.append(("outer_cur_from", nid, u, src))
            return ctx.prev.get(nid, {}).get(u, ZERO)
        # differentiate on the parent clock
        latches.append(("outer_cur_from", nid, u, node.inputs[0]))
        return gv_sub(ins[0], ctx.prev.get(nid, {}).get(u, ZERO))

    def _run_block(self, node, entry_val):
        inner = node.meta["inner"]
        sum_node = inner.nodes[inner.sum_id]
        cap = iteration_cap(sum_node.meta.get("cap"), forced=sum_node.meta.get("cap_forced", False))
        term = sum_node.meta.get("termination") or gv_is_zero
        bstate = self._state.get(node.id)
        if bstate is None:
            bstate = self._state[node.id] = {"max_len": 0, "acc": {}, "prev": {}, "term_acc": {}}
        inner._state.clear()
        cur = {}
        incremental = inner.has_parent_axis()
        # A domain with parent-clock state emits cross-tick corrections: run at
        # least as long as any earlier tick did, and test convergence on the
        # accumulated per-iteration change (the current tick's underlying
        # fixpoint progress), not on this tick's correction alone.
        floor = bstate["max_len"] if incremental else 0
        change_src = sum_node.inputs[0]
        probe = node.meta.get("probe")
        if probe is not None:
            bstate["probe_values"] = []
        u = 0
        while True:
            ctx = _InnerCtx(u, entry_val, bstate["acc"], bstate["prev"], cur)
            vals = inner._eval_tick(None, ctx)
            tick_change = vals[change_src]
            if probe is not None:
                bstate["probe_values"].append(vals[probe])
            if incremental:
                progress = gv_add(bstate["term_acc"].get(u, ZERO), tick_change)
                bstate["term_acc"][u] = progress
            else:
                progress = tick_change
            u += 1
            if u >= max(floor, 1) and term(progress):
                break
            if u >= cap:
                raise NonTerminationError(f"nested domain exceeded {cap} iterations")
        self.metrics.iterations += u
        bstate["max_len"] = max(floor, u)
        bstate["prev"] = cur
        return vals[inner.sum_id]

    def probe_nested(self, block, inner_node):
        """Record the per-iteration values of an inner node on each tick.

        Debug/test hook; read the trace back with `nested_probe_values`.
        """
        self.nodes[block].meta["probe"] = inner_node

    def nested_probe_values(self, block):
        return self._state.get(block, {}).get("probe_values", [])

    # -- transforms --------------------------------------------------------------

    def clone(self):
        """Structural copy without runtime state."""
        out = Circuit(level=self.level, inner=self.is_inner)
        out.lift_count = self.lift_count
        out.metrics = Metrics()
        for n in self.nodes:
            meta = dict(n.meta)
            if n.kind == "nested":
                inner = meta["inner"].clone()
                inner.metrics = out.metrics
                meta["inner"] = inner
            out.nodes.append(
                Node(n.id, n.kind, n.inputs, depth=n.depth, fn=n.fn, label=n.label, klass=n.klass, name=n.name, meta=meta)
            )
        out.sources = dict(self.sources)
        out.sinks = dict(self.sinks)
        out.event_sinks = set(self.event_sinks)
        out.entry_id = self.entry_id
        out.sum_id = self.sum_id
        return out


class LiftedVectorFn:
    """Apply a per-tick function independently at every inner-time slot.

    Assumes the wrapped function is zero-preserving: all-zero input slots map
    to the zero slot without calling it.
    """

    __slots__ = ("fn", "arity")

    def __init__(self, fn):
        self.fn = fn
        self.arity = getattr(fn, "arity", None)

    def __call__(self, *vecs):
        vs = [as_vector(v) for v in vecs]
        n = max((len(v) for v in vs), default=0)
        out = []
        for i in range(n):
            slot = [v[i] for v in vs]
            if all(x is ZERO for x in slot):
                out.append(ZERO)
            else:
                out.append(self.fn(*slot))
        return StreamVector(tuple(out))


def lift_circuit(c):
    """Lift a stream circuit one level: per-tick values become StreamVectors.

    Every node's nesting depth goes up by one, so delays become column delays
    and integrate/differentiate act along the inner axis; the result applies
    the original circuit independently to each row of a nested stream.
    """
    c.validate()
    out = Circuit(level=c.level, inner=c.is_inner)
    out.lift_count = c.lift_count + 1
    for n in c.nodes:
        if n.kind == "nested":
            raise CircuitError("cannot vector-lift a circuit containing nested domains")
        fn = LiftedVectorFn(n.fn) if n.kind == "lifted" else n.fn
        meta = dict(n.meta)
        if n.kind == "lifted":
            meta.setdefault("base_fn", n.fn)
        out.nodes.append(
            Node(n.id, n.kind, n.inputs, depth=n.depth + 1, fn=fn, label=n.label, klass=n.klass, name=n.name, meta=meta)
        )
    out.sources = dict(c.sources)
    out.sinks = dict(c.sinks)
    out.event_sinks = set(c.event_sinks)
    return out
