"""Relational operators over Z-sets and the circuit fragments that use them.

Each build_* function appends a fragment to a Circuit and returns the output
node id.  The function objects carry class labels (linear / bilinear /
general) and, for joins, their key functions, so the incrementalizer can pick
the right rewrite without inspecting Python code.
"""

from dataclasses import dataclass

from . import circuit as _c
from .circuit import BILINEAR, GENERAL, LINEAR, Circuit
from .errors import ValidationError
from .expr import KeyFunc, MapFunc
from .groupval import ZERO, as_zset
from .zset import (
    IndexedZSet,
    ZSet,
    aggregate_avg,
    aggregate_count,
    aggregate_max,
    aggregate_min,
    aggregate_sum,
    check_weight,
    concat_elements,
    distinct,
    element_column,
    group_by,
    makeset,
)


@dataclass(frozen=True)
class Schema:
    """Column names (unique) with optional scalar type tags."""

    columns: tuple
    types: tuple = None

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError(f"duplicate column names in {self.columns}")
        if self.types is not None and len(self.types) != len(self.columns):
            raise ValidationError("schema types must match column count")

    @property
    def arity(self):
        return len(self.columns)

    def column_index(self, name):
        try:
            return self.columns.index(name)
        except ValueError:
            raise ValidationError(f"unknown column {name!r}")


@dataclass(frozen=True)
class WindowSpec:
    """Keep tuples whose timestamp column is within `width` of the clock."""

    ts_column: int
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValidationError("window width must be positive")


# -- per-tick functions -------------------------------------------------------


class FilterFn:
    arity = 1
    klass = LINEAR

    def __init__(self, pred):
        self.pred = pred

    def __call__(self, m):
        m = as_zset(m)
        pred = self.pred
        return ZSet._wrap({x: w for x, w in m.raw_items() if pred(x)})


class MapFn:
    """Row remap; weights of colliding output rows add up (as for projection)."""

    arity = 1
    klass = LINEAR

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, m):
        m = as_zset(m)
        fn = self.fn
        d = {}
        for x, w in m.raw_items():
            y = fn(x)
            nw = check_weight(d.get(y, 0) + w)
            if nw:
                d[y] = nw
            else:
                del d[y]
        return ZSet._wrap(d)


def project_fn(cols):
    return MapFn(MapFunc(cols))


class DistinctFn:
    arity = 1
    klass = GENERAL

    def __call__(self, m):
        return distinct(as_zset(m))


class GroupByFn:
    arity = 1
    klass = LINEAR

    def __init__(self, key):
        self.key = key

    def __call__(self, m):
        return group_by(self.key, as_zset(m))


class FlatmapFn:
    arity = 1
    klass = LINEAR

    def __call__(self, i):
        from .groupval import as_indexed
        from .zset import flatmap

        return flatmap(as_indexed(i))


def _identity_key(x):
    return x


class JoinFn:
    """Equi-join / cartesian product / semijoin / intersection.

    Either side may arrive pre-indexed by its own key function (the indexed
    integrals the incremental rewrites produce); lookups then cost only the
    probe side.  Output weights multiply.
    """

    arity = 2
    klass = BILINEAR

    def __init__(self, key_left, key_right, mode="join", label=None):
        self.key_left = key_left
        self.key_right = key_right
        self.mode = mode
        self.label = label or mode

    def index_keys(self):
        return (self.key_left, self.key_right)

    def _pairs(self, a, b):
        """Yield (x, wx, y, wy) for key-matching pairs."""
        kl, kr = self.key_left, self.key_right
        if isinstance(a, IndexedZSet) and isinstance(b, ZSet):
            for y, wy in b.raw_items():
                for x, wx in a.group(kr(y)).raw_items():
                    yield x, wx, y, wy
        elif isinstance(b, IndexedZSet) and isinstance(a, ZSet):
            for x, wx in a.raw_items():
                for y, wy in b.group(kl(x)).raw_items():
                    yield x, wx, y, wy
        elif isinstance(a, ZSet) and isinstance(b, ZSet):
            if len(a) <= len(b):
                index = {}
                for x, wx in a.raw_items():
                    index.setdefault(kl(x), []).append((x, wx))
                for y, wy in b.raw_items():
                    for x, wx in index.get(kr(y), ()):
                        yield x, wx, y, wy
            else:
                index = {}
                for y, wy in b.raw_items():
                    index.setdefault(kr(y), []).append((y, wy))
                for x, wx in a.raw_items():
                    for y, wy in index.get(kl(x), ()):
                        yield x, wx, y, wy
        else:  # both indexed
            small, big, flip = (a, b, False) if len(a) <= len(b) else (b, a, True)
            for k, g in small.raw_items():
                og = big.group(k)
                if og.is_zero():
                    continue
                for u, wu in g.raw_items():
                    for v, wv in og.raw_items():
                        yield (u, wu, v, wv) if not flip else (v, wv, u, wu)

    def __call__(self, a, b):
        a = _join_operand(a)
        b = _join_operand(b)
        d = {}
        if self.mode == "join":
            for x, wx, y, wy in self._pairs(a, b):
                out = concat_elements(x, y)
                nw = check_weight(d.get(out, 0) + check_weight(wx * wy))
                if nw:
                    d[out] = nw
                else:
                    del d[out]
        else:  # semijoin flavors keep the left element
            for x, wx, y, wy in self._pairs(a, b):
                nw = check_weight(d.get(x, 0) + check_weight(wx * wy))
                if nw:
                    d[x] = nw
                else:
                    del d[x]
        return ZSet._wrap(d)


def _join_operand(v):
    if isinstance(v, (ZSet, IndexedZSet)):
        return v
    if v is ZERO:
        return ZSet()
    raise ValidationError(f"join expects Z-set operands, got {type(v).__name__}")


def cartesian_fn():
    return JoinFn(lambda x: (), lambda y: (), mode="join", label="cartesian")


def intersect_fn():
    return JoinFn(_identity_key, _identity_key, mode="semi", label="intersect")


class DistinctDeltaFn:
    """Sign-transition detector behind incremental distinct.

    Given the previously integrated input i and the tick's change d, an
    element of d enters the output with +1 when its accumulated weight turns
    positive, -1 when it stops being positive, 0 otherwise.  Only the support
    of d is inspected, so the work is bounded by the change.
    """

    arity = 2
    klass = GENERAL
    probe_args = (0,)  # the accumulated input is probed per element of d

    def __call__(self, i, d):
        i = as_zset(i)
        d = as_zset(d)
        out = {}
        for x, w in d.raw_items():
            old = i[x]
            new = old + w
            if old > 0 and new <= 0:
                out[x] = -1
            elif old <= 0 and new > 0:
                out[x] = 1
        return ZSet._wrap(out)


class AggregateFn:
    """SQL-style aggregate emitting rows; grouped when group_cols is given."""

    arity = 1
    klass = GENERAL

    _FNS = {
        "count": lambda z, col: aggregate_count(z),
        "sum": aggregate_sum,
        "min": aggregate_min,
        "max": aggregate_max,
        "avg": aggregate_avg,
    }

    def __init__(self, kind, column=0, group_cols=None):
        if kind not in self._FNS:
            raise ValidationError(f"unknown aggregate {kind!r}")
        self.kind = kind
        self.column = column
        self.group_key = KeyFunc(group_cols) if group_cols is not None else None

    def _value(self, z):
        return self._FNS[self.kind](z, self.column)

    def __call__(self, m):
        m = as_zset(m)
        if self.group_key is None:
            if m.is_zero():
                # COUNT/SUM of nothing is 0; order aggregates emit no row.
                if self.kind in ("count", "sum"):
                    return makeset((0,))
                return ZSet()
            return makeset((self._value(m),))
        out = {}
        for k, z in group_by(self.group_key, m).raw_items():
            out[k + (self._value(z),)] = 1
        return ZSet._wrap(out)


# -- fragment builders ----------------------------------------------------------


def build_filter(c: Circuit, x, pred, set_semantics=False):
    nid = c.add_lifted(FilterFn(pred), [x], klass=LINEAR, label="filter")
    return build_distinct(c, nid) if set_semantics else nid


def build_map(c: Circuit, x, fn, set_semantics=False):
    fn = fn if callable(fn) else MapFunc(fn)
    nid = c.add_lifted(MapFn(fn), [x], klass=LINEAR, label="map")
    return build_distinct(c, nid) if set_semantics else nid


def build_projection(c: Circuit, x, cols, set_semantics=False):
    nid = c.add_lifted(project_fn(cols), [x], klass=LINEAR, label="project")
    return build_distinct(c, nid) if set_semantics else nid


def build_distinct(c: Circuit, x):
    return c.add_lifted(DistinctFn(), [x], klass=GENERAL, label="distinct")


def build_union(c: Circuit, a, b):
    return build_distinct(c, c.add_plus([a, b]))


def build_union_all(c: Circuit, a, b):
    return c.add_plus([a, b])


def build_difference(c: Circuit, a, b):
    return build_distinct(c, c.add_plus([a, c.add_negate(b)]))


def build_cartesian(c: Circuit, a, b):
    return c.add_lifted(cartesian_fn(), [a, b], klass=BILINEAR, label="join")


def build_equijoin(c: Circuit, a, b, key_a, key_b):
    key_a = key_a if callable(key_a) else KeyFunc(key_a)
    key_b = key_b if callable(key_b) else KeyFunc(key_b)
    return c.add_lifted(JoinFn(key_a, key_b), [a, b], klass=BILINEAR, label="join")


def build_intersect(c: Circuit, a, b):
    return c.add_lifted(intersect_fn(), [a, b], klass=BILINEAR, label="intersect")


def build_semijoin(c: Circuit, a, b, key_a, key_b):
    key_a = key_a if callable(key_a) else KeyFunc(key_a)
    key_b = key_b if callable(key_b) else KeyFunc(key_b)
    fn = JoinFn(key_a, key_b, mode="semi", label="semijoin")
    return c.add_lifted(fn, [a, b], klass=BILINEAR, label="semijoin")


def build_antijoin(c: Circuit, a, b, key_a, key_b):
    """Rows of a with no key match in b: distinct(a - semijoin(a, b))."""
    matched = build_semijoin(c, a, b, key_a, key_b)
    return build_distinct(c, c.add_plus([a, c.add_negate(matched)]))


def build_aggregate(c: Circuit, x, kind, column=0, group_cols=None):
    fn = AggregateFn(kind, column, group_cols)
    return c.add_lifted(fn, [x], klass=GENERAL, label="aggregate")


def build_inc_distinct(c: Circuit, d, depth=None):
    """Incremental distinct: delta in, delta out, work bounded by the delta."""
    depth = c.level if depth is None else depth
    i = c.add_integrate(d, depth=depth)
    z = c.add_delay(i, depth=depth)
    h = c.add_lifted(DistinctDeltaFn(), [z, d], klass=GENERAL, label="distinct_delta")
    c.nodes[h].meta["inc_distinct_input"] = d
    c.nodes[h].meta["depth"] = depth
    for m in (i, z):
        c.nodes[m].meta["in_group"] = True
    return h


def build_inc_join(c: Circuit, a, b, key_a, key_b, depth=None, fn=None):
    """Incremental bilinear join: da*db + z(I(a))*db + da*z(I(b))."""
    depth = c.level if depth is None else depth
    if fn is None:
        key_a = key_a if callable(key_a) else KeyFunc(key_a)
        key_b = key_b if callable(key_b) else KeyFunc(key_b)
        fn = JoinFn(key_a, key_b)
    ka, kb = fn.index_keys() if hasattr(fn, "index_keys") else (None, None)
    ia = c.add_integrate(a, depth=depth, index_key=ka)
    za = c.add_delay(ia, depth=depth)
    ib = c.add_integrate(b, depth=depth, index_key=kb)
    zb = c.add_delay(ib, depth=depth)
    j0 = c.add_lifted(fn, [a, b], klass=BILINEAR, label=fn.label)
    j1 = c.add_lifted(fn, [za, b], klass=BILINEAR, label=fn.label)
    j2 = c.add_lifted(fn, [a, zb], klass=BILINEAR, label=fn.label)
    out = c.add_plus([j0, j1, j2])
    c.nodes[out].meta["inc_join"] = {"a": a, "b": b, "fn": fn, "depth": depth}
    for m in (ia, za, ib, zb, j0, j1, j2):
        c.nodes[m].meta["in_group"] = True
    return out


def build_stream_join(c: Circuit, s, t, key_s, key_t):
    """Join the accumulated relation s against the current tick of stream t."""
    key_s = key_s if callable(key_s) else KeyFunc(key_s)
    key_t = key_t if callable(key_t) else KeyFunc(key_t)
    i = c.add_integrate(s, index_key=key_s)
    return c.add_lifted(JoinFn(key_s, key_t), [i, t], klass=BILINEAR, label="join")


def build_window(c: Circuit, delta, theta, spec: WindowSpec):
    """Sliding window over an accumulated input, emitting the window content.

    Keeps only in-window tuples as state (the clock input must never
    decrease), so memory stays bounded by the window.
    """
    return c._add("window_fold", (delta, theta), klass=GENERAL, label="window", meta={"window": spec})


def build_window_snapshot(c: Circuit, snapshot, theta, spec: WindowSpec):
    """Window over a full snapshot input (the non-incremental reading)."""
    return c._add("window", (snapshot, theta), klass=GENERAL, label="window", meta={"window": spec})


# -- window node evaluators --------------------------------------------------------


def _advance_theta(old, theta_in, label):
    z = as_zset(theta_in)
    candidates = [element_column(x, 0) for x, w in z.raw_items() if w > 0]
    if not candidates:
        return old
    new = max(candidates)
    if old is not None and new < old:
        raise ValidationError(f"{label}: clock input decreased from {old} to {new}")
    return new


def _window_filter(content, theta, spec):
    if theta is None:
        return content
    bound = theta - spec.width
    col = spec.ts_column
    return ZSet._wrap({x: w for x, w in content.raw_items() if element_column(x, col) >= bound})


def _eval_window(c, node, ins, latches):
    spec = node.meta["window"]
    st = c._state.get(node.id) or {"theta": None}
    theta = _advance_theta(st["theta"], ins[1], "window")
    latches.append(("acc", node.id, {"theta": theta}, None))
    snap = as_zset(ins[0])
    out = _window_filter(snap, theta, spec)
    c.metrics.tuples += len(snap) + len(out)
    return out


def _eval_window_fold(c, node, ins, latches):
    spec = node.meta["window"]
    st = c._state.get(node.id) or {"theta": None, "content": ZSet()}
    theta = _advance_theta(st["theta"], ins[1], "window")
    content = _window_filter(st["content"] + as_zset(ins[0]), theta, spec)
    latches.append(("acc", node.id, {"theta": theta, "content": content}, None))
    c.metrics.tuples += len(as_zset(ins[0])) + len(content)
    return content


_c.NODE_EVAL["window"] = _eval_window
_c.NODE_EVAL["window_fold"] = _eval_window_fold
