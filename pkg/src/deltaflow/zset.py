"""Z-sets and indexed Z-sets: the abelian groups the circuits compute over.

A Z-set is a finite map from elements to signed integer multiplicities
(weights).  Weight 1 on everything models a set, non-negative weights model a
bag, and negative weights encode deletions.  Elements are scalars (int, float,
Fraction, str) or tuples of elements; a total order over all of them gives
Z-sets a canonical enumeration order.
"""

from fractions import Fraction

from .errors import ValidationError, WeightOverflowError

WEIGHT_MAX = 2**63 - 1
WEIGHT_MIN = -(2**63)


def check_weight(w):
    if w > WEIGHT_MAX or w < WEIGHT_MIN:
        raise WeightOverflowError(f"weight {w} outside signed 64-bit range")
    return w


def sort_key(elem):
    """Total-order key over all supported elements.

    Numbers sort together (so 1 and 1.0 stay consistent with dict equality),
    then strings, then tuples recursively.
    """
    if type(elem) is tuple:
        return (2, tuple(sort_key(x) for x in elem))
    if isinstance(elem, str):
        return (1, elem)
    return (0, elem)


def validate_element(elem):
    """Ingestion check: no NULLs, no NaN, no bools, only supported scalars."""
    if type(elem) is tuple:
        for x in elem:
            validate_element(x)
        return elem
    if elem is None:
        raise ValidationError("NULL values are not supported")
    if isinstance(elem, bool):
        raise ValidationError("boolean values are not supported")
    if isinstance(elem, float) and elem != elem:
        raise ValidationError("NaN values are not supported")
    if not isinstance(elem, (int, float, str, Fraction)):
        raise ValidationError(f"unsupported value type {type(elem).__name__!r}")
    return elem


class ZSet:
    """Finite map element -> nonzero weight; an abelian group under +."""

    __slots__ = ("_entries",)

    def __init__(self, entries=None):
        d = {}
        if entries:
            items = entries.items() if isinstance(entries, dict) else entries
            for x, w in items:
                w = check_weight(d.get(x, 0) + w)
                if w:
                    d[x] = w
                else:
                    d.pop(x, None)
        self._entries = d

    @classmethod
    def _wrap(cls, d):
        z = cls.__new__(cls)
        z._entries = d
        return z

    # -- group structure ---------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, ZSet):
            return NotImplemented
        if not other._entries:
            return self
        if not self._entries:
            return other
        big, small = (self, other) if len(self._entries) >= len(other._entries) else (other, self)
        d = dict(big._entries)
        for x, w in small._entries.items():
            nw = check_weight(d.get(x, 0) + w)
            if nw:
                d[x] = nw
            else:
                del d[x]
        return ZSet._wrap(d)

    def __sub__(self, other):
        if not isinstance(other, ZSet):
            return NotImplemented
        if not other._entries:
            return self
        d = dict(self._entries)
        for x, w in other._entries.items():
            nw = check_weight(d.get(x, 0) - w)
            if nw:
                d[x] = nw
            else:
                del d[x]
        return ZSet._wrap(d)

    def __neg__(self):
        return ZSet._wrap({x: -w for x, w in self._entries.items()})

    def scale(self, k):
        """Multiply every weight by integer k."""
        if k == 0:
            return ZSet()
        return ZSet._wrap({x: check_weight(w * k) for x, w in self._entries.items()})

    def is_zero(self):
        return not self._entries

    # -- access -------------------------------------------------------------

    def __getitem__(self, elem):
        return self._entries.get(elem, 0)

    def __contains__(self, elem):
        return elem in self._entries

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries, key=sort_key))

    def items(self):
        """Entries in canonical element order."""
        return [(x, self._entries[x]) for x in sorted(self._entries, key=sort_key)]

    def raw_items(self):
        """Entries in hash order; use in hot paths where order is irrelevant."""
        return self._entries.items()

    def __eq__(self, other):
        if isinstance(other, ZSet):
            return self._entries == other._entries
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._entries.items()))

    def __repr__(self):
        inner = ", ".join(f"{x!r}: {w}" for x, w in self.items())
        return f"ZSet({{{inner}}})"


def zset(entries=None):
    return ZSet(entries)


def zset_add(a, b):
    return a + b


def zset_negate(a):
    return -a


def zset_size(m):
    """Number of elements with nonzero weight."""
    return len(m)


def distinct(m):
    """Project onto the positive support with weight 1 (still a Z-set)."""
    return ZSet._wrap({x: 1 for x, w in m.raw_items() if w > 0})


def is_set(m):
    return all(w == 1 for w in m._entries.values())


def is_positive(m):
    return all(w > 0 for w in m._entries.values())


def to_set(m):
    return {x for x, w in m.raw_items() if w > 0}


def to_zset(s):
    return ZSet._wrap({validate_element(x): 1 for x in s})


def makeset(x):
    """Singleton Z-set carrying a scalar (or tuple) with weight 1."""
    return ZSet._wrap({x: 1})


def _as_parts(elem):
    return elem if type(elem) is tuple else (elem,)


def concat_elements(a, b):
    """Flat concatenation of two elements, promoting scalars to 1-tuples."""
    return _as_parts(a) + _as_parts(b)


def element_column(elem, col):
    if type(elem) is tuple:
        return elem[col]
    if col == 0:
        return elem
    raise ValidationError(f"column {col} out of range for scalar element")


class IndexedZSet:
    """Finite map key -> nonempty ZSet; the shape of GROUP BY output."""

    __slots__ = ("_groups",)

    def __init__(self, groups=None):
        d = {}
        if groups:
            items = groups.items() if isinstance(groups, dict) else groups
            for k, z in items:
                merged = d.get(k)
                z = z if merged is None else merged + z
                if z.is_zero():
                    d.pop(k, None)
                else:
                    d[k] = z
        self._groups = d

    @classmethod
    def _wrap(cls, d):
        i = cls.__new__(cls)
        i._groups = d
        return i

    def __add__(self, other):
        if not isinstance(other, IndexedZSet):
            return NotImplemented
        if not other._groups:
            return self
        if not self._groups:
            return other
        big, small = (self, other) if len(self._groups) >= len(other._groups) else (other, self)
        d = dict(big._groups)
        for k, z in small._groups.items():
            nz = d.get(k)
            nz = z if nz is None else nz + z
            if nz.is_zero():
                d.pop(k, None)
            else:
                d[k] = nz
        return IndexedZSet._wrap(d)

    def __neg__(self):
        return IndexedZSet._wrap({k: -z for k, z in self._groups.items()})

    def __sub__(self, other):
        return self + (-other)

    def is_zero(self):
        return not self._groups

    def group(self, key):
        return self._groups.get(key, _EMPTY_ZSET)

    def __contains__(self, key):
        return key in self._groups

    def __len__(self):
        return len(self._groups)

    def keys(self):
        return sorted(self._groups, key=sort_key)

    def items(self):
        return [(k, self._groups[k]) for k in self.keys()]

    def raw_items(self):
        return self._groups.items()

    def total_size(self):
        return sum(len(z) for z in self._groups.values())

    def __eq__(self, other):
        if isinstance(other, IndexedZSet):
            return self._groups == other._groups
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{k!r}: {z!r}" for k, z in self.items())
        return f"IndexedZSet({{{inner}}})"


_EMPTY_ZSET = ZSet()


def group_by(key_fn, m):
    """Partition m by key_fn; linear, weight-preserving."""
    groups = {}
    for x, w in m.raw_items():
        k = key_fn(x)
        g = groups.get(k)
        if g is None:
            g = groups[k] = {}
        g[x] = w
    return IndexedZSet._wrap({k: ZSet._wrap(g) for k, g in groups.items()})


def flatmap(i):
    """Undo grouping: entry (key, x) gets the weight of x in group key."""
    d = {}
    for k, z in i.raw_items():
        for x, w in z.raw_items():
            d[concat_elements(k, x)] = w
    return ZSet._wrap(d)


def indexed_aggregate(agg_fn, g):
    """Sum agg_fn(key, group) over all groups.

    agg_fn must map empty groups to the zero of its output group, otherwise
    the result is not zero-preserving.
    """
    out = ZSet()
    for k, z in g.raw_items():
        out = out + agg_fn(k, z)
    return out


def count_aggregate(k, z):
    """GROUP BY COUNT: a singleton row (key..., count)."""
    return makeset(concat_elements(k, aggregate_count(z)))


def aggregate_count(m):
    """Sum of all weights; a group homomorphism into the integers."""
    total = 0
    for w in m._entries.values():
        total += w
    return check_weight(total)


def aggregate_sum(m, col=0):
    """Weighted sum of a numeric column; linear."""
    total = 0
    for x, w in m.raw_items():
        v = element_column(x, col)
        if isinstance(v, str):
            raise ValidationError(f"SUM over non-numeric column {col}")
        total += v * w
    return total


def aggregate_general(f, m):
    """Apply a set function to the underlying set of a positive Z-set.

    This is the fallback for aggregates that are not linear (MIN, MAX, ...):
    they see the whole set, so their incremental form keeps explicit
    integrate/differentiate brackets.
    """
    if not is_positive(m):
        raise ValidationError("set-function aggregation requires a positive Z-set")
    return f(to_set(m))


def aggregate_min(m, col=0):
    if m.is_zero():
        raise ValidationError("MIN over empty input")
    return aggregate_general(lambda s: min(element_column(x, col) for x in s), m)


def aggregate_max(m, col=0):
    if m.is_zero():
        raise ValidationError("MAX over empty input")
    return aggregate_general(lambda s: max(element_column(x, col) for x in s), m)


def exact_div(a, b):
    """Division for AVG: exact rational for int operands, float otherwise."""
    if isinstance(a, int) and isinstance(b, int):
        f = Fraction(a, b)
        return int(f) if f.denominator == 1 else f
    return a / b


def aggregate_avg(m, col=0):
    cnt = aggregate_count(m)
    if cnt == 0:
        raise ValidationError("AVG over input with zero total weight")
    return exact_div(aggregate_sum(m, col), cnt)
