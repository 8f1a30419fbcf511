"""Time-invariant prefix code over the quantizer lattice.

Symbols are integer lattice points ordered by L-infinity shell, ties
broken lexicographically.  The code is Shannon-Fano-Elias: a symbol's
codeword is the binary expansion of its mid-cumulative F(q), truncated to
ceil(-log2 p(q)) + 1 bits.  Truncation is only prefix-free if F is known
exactly enough, so every cumulative quantity here is computed in exact
rational arithmetic: the empirical core is a ratio of integer counts and
the geometric tail has closed-form rational partial sums.  The working
precision enters as a cap on the expansion length; a symbol whose
codeword would exceed the doubled cap raises PrecisionExhausted.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    BadParameter,
    DimensionMismatch,
    EmptyHistogram,
    MalformedCodeword,
    ParseError,
    PrecisionExhausted,
)
from .quantizer import LatticePoint

DEFAULT_PRECISION_BITS = 256
_PRECISION_CAP = 1 << 17

DEFAULT_TAIL_EPSILON = 1e-3
DEFAULT_TAIL_DECAY = 0.5

_FORMAT_NAME = "quantlqg-lattice-pmf"
_FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# shell-then-lexicographic enumeration of Z^m


def _full_count(m: int, r: int) -> int:
    """Number of points with L-infinity norm <= r."""
    if r < 0:
        return 0
    return (2 * r + 1) ** m


def _coords_of(point) -> tuple:
    if isinstance(point, LatticePoint):
        return point.coords
    return tuple(int(c) for c in point)


class LatticeEnumeration:
    """Bijection between nonnegative integers and Z^m.

    Points are sorted by shell radius r = max|k_i| ascending, ties broken
    lexicographically ascending, so shell r is exhausted before r+1.
    """

    def __init__(self, m: int):
        if m <= 0:
            raise BadParameter(f"m must be positive, got {m}")
        self.m = m

    def index_of(self, coords) -> int:
        coords = _coords_of(coords)
        if len(coords) != self.m:
            raise DimensionMismatch(f"point has {len(coords)} coords, expected {self.m}")
        r = max(abs(c) for c in coords)
        if r == 0:
            return 0
        rank = 0
        sat = False
        for j, kj in enumerate(coords):
            n_rem = self.m - j - 1
            u = (2 * r + 1) ** n_rem
            v = u - (2 * r - 1) ** n_rem
            if kj > -r:
                rank += u  # the value -r saturates, all completions count
            lo, hi = -r + 1, min(kj - 1, r - 1)
            if lo <= hi:
                rank += (hi - lo + 1) * (u if sat else v)
            sat = sat or abs(kj) == r
        return _full_count(self.m, r - 1) + rank

    def point_at(self, index: int) -> tuple:
        if index < 0:
            raise BadParameter(f"index must be nonnegative, got {index}")
        if index == 0:
            return (0,) * self.m
        r = 1
        while _full_count(self.m, r) <= index:
            r *= 2
        lo, hi = r // 2, r
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if _full_count(self.m, mid) <= index:
                lo = mid
            else:
                hi = mid
        r = hi
        offset = index - _full_count(self.m, r - 1)
        coords = []
        sat = False
        for j in range(self.m):
            n_rem = self.m - j - 1
            u = (2 * r + 1) ** n_rem
            v = u - (2 * r - 1) ** n_rem
            if offset < u:
                coords.append(-r)
                sat = True
                continue
            offset -= u
            cm = u if sat else v
            middle = 2 * r - 1
            if cm > 0 and offset < middle * cm:
                nv = offset // cm
                coords.append(-r + 1 + nv)
                offset -= nv * cm
                continue
            offset -= middle * cm
            coords.append(r)
            sat = True
        if offset != 0:
            raise BadParameter(f"index {index} did not resolve cleanly")  # pragma: no cover
        return tuple(coords)


def enumerate_index(point) -> int:
    coords = _coords_of(point)
    return LatticeEnumeration(len(coords)).index_of(coords)


def enumerate_point(index: int, m: int, Delta: float = 1.0) -> LatticePoint:
    return LatticePoint(coords=LatticeEnumeration(m).point_at(index), Delta=Delta)


# --------------------------------------------------------------------------
# the mixture PMF


@dataclass(frozen=True)
class Codeword:
    bits: str
    length: int

    def __post_init__(self):
        if self.length <= 0 or len(self.bits) != self.length:
            raise BadParameter("codeword length disagrees with its bits")
        if any(b not in "01" for b in self.bits):
            raise BadParameter("codeword bits must be 0/1")


class LatticePmf:
    """p(k) = (1-eps) * core(k) + eps * geom(k) over Z^m.

    core is a finite empirical map with exact rational masses summing to
    one; geom is a product of symmetric two-sided geometric laws with
    parameter tail_decay, which keeps every lattice point at positive
    mass (finite codewords, finite KL).  eps=1 is the pure-geometric
    bootstrap prior; eps=0 (finite support, used by unit tests) is only
    constructible directly, never via build_pmf.
    """

    def __init__(self, m, Delta, core, tail_epsilon, tail_decay,
                 precision_bits=DEFAULT_PRECISION_BITS):
        if m <= 0:
            raise BadParameter(f"m must be positive, got {m}")
        if not (Delta > 0.0):
            raise BadParameter(f"Delta must be positive, got {Delta}")
        if not (0.0 <= tail_epsilon <= 1.0):
            raise BadParameter(f"tail_epsilon must lie in [0, 1], got {tail_epsilon}")
        if not (0.0 < tail_decay < 1.0):
            raise BadParameter(f"tail_decay must lie in (0, 1), got {tail_decay}")
        if precision_bits < 8:
            raise BadParameter("precision_bits is unreasonably small")
        self.m = int(m)
        self.Delta = float(Delta)
        self.tail_epsilon = float(tail_epsilon)
        self.tail_decay = float(tail_decay)
        self.precision_bits = int(precision_bits)

        self._enum = LatticeEnumeration(self.m)
        self._eps = Fraction(self.tail_epsilon)
        self._rho = Fraction(self.tail_decay)
        self._gnorm = (1 - self._rho) / (1 + self._rho)  # per-axis mass at 0

        core_exact = {}
        total = Fraction(0)
        for k, mass in core.items():
            coords = _coords_of(k)
            if len(coords) != self.m:
                raise DimensionMismatch("core point dimension disagrees with m")
            mass = Fraction(mass)
            if mass < 0:
                raise BadParameter("core masses must be nonnegative")
            if mass > 0:
                core_exact[coords] = core_exact.get(coords, Fraction(0)) + mass
                total += mass
        if self._eps < 1:
            if not core_exact:
                raise EmptyHistogram("core is empty but tail_epsilon < 1")
            if abs(total - 1) > Fraction(1, 10**12):
                raise BadParameter(f"core masses sum to {float(total)!r}, expected 1")
            # normalize exactly so downstream cumulative sums telescope to 1
            core_exact = {k: v / total for k, v in core_exact.items()}
        self.core = core_exact

        order = sorted(self.core, key=self._enum.index_of)
        self._core_order = order
        self._core_indices = [self._enum.index_of(k) for k in order]
        prefix = [Fraction(0)]
        for k in order:
            prefix.append(prefix[-1] + self.core[k])
        self._core_prefix = prefix

        self._pow_cache = {0: Fraction(1)}
        self._encode_cache = {}
        self._decode_cache = {}

    # -- exact mass machinery ------------------------------------------------

    def _rho_pow(self, s: int) -> Fraction:
        cache = self._pow_cache
        if s not in cache:
            cache[s] = self._rho ** s
        return cache[s]

    def _axis_mass(self, j: int) -> Fraction:
        return self._gnorm * self._rho_pow(abs(j))

    def _axis_cum(self, s: int) -> Fraction:
        """Mass of {|j| <= s} on one axis: 1 - 2 rho^(s+1) / (1+rho)."""
        if s < 0:
            return Fraction(0)
        return 1 - 2 * self._rho_pow(s + 1) / (1 + self._rho)

    def _axis_range(self, a: int, b: int) -> Fraction:
        """Sum of the axis law over integer j in [a, b]."""
        if a > b:
            return Fraction(0)

        def pow_sum(lo, hi):
            # sum of rho^u for u in [lo, hi], 0 <= lo <= hi
            return (self._rho_pow(lo) - self._rho_pow(hi + 1)) / (1 - self._rho)

        if b < 0:
            total = pow_sum(-b, -a)
        elif a > 0:
            total = pow_sum(a, b)
        else:
            total = Fraction(1)
            if a <= -1:
                total += pow_sum(1, -a)
            if b >= 1:
                total += pow_sum(1, b)
        return self._gnorm * total

    def geom_mass(self, coords) -> Fraction:
        s = sum(abs(c) for c in coords)
        return self._gnorm ** self.m * self._rho_pow(s)

    def _geom_cum_before(self, coords) -> Fraction:
        """Tail-law mass of all points strictly before coords in the order."""
        r = max(abs(c) for c in coords) if any(coords) else 0
        if r == 0:
            return Fraction(0)
        total = self._axis_cum(r - 1) ** self.m  # all earlier shells
        g_prefix = Fraction(1)
        sat = False
        for j, kj in enumerate(coords):
            n_rem = self.m - j - 1
            u = self._axis_cum(r) ** n_rem
            v = u - self._axis_cum(r - 1) ** n_rem
            if kj > -r:
                total += g_prefix * self._axis_mass(-r) * u
            lo, hi = -r + 1, min(kj - 1, r - 1)
            if lo <= hi:
                total += g_prefix * self._axis_range(lo, hi) * (u if sat else v)
            g_prefix *= self._axis_mass(kj)
            sat = sat or abs(kj) == r
        return total

    def mass(self, point) -> Fraction:
        coords = _coords_of(point)
        if len(coords) != self.m:
            raise DimensionMismatch("point dimension disagrees with the pmf")
        p = self._eps * self.geom_mass(coords)
        if coords in self.core:
            p += (1 - self._eps) * self.core[coords]
        return p

    def mass_float(self, point) -> float:
        return float(self.mass(point))

    def cumulative_before(self, point) -> Fraction:
        """P[q' < q] under the enumeration order, exact."""
        coords = _coords_of(point)
        idx = self._enum.index_of(coords)
        import bisect
        pos = bisect.bisect_left(self._core_indices, idx)
        core_part = self._core_prefix[pos]
        return (1 - self._eps) * core_part + self._eps * self._geom_cum_before(coords)

    def fbar(self, point) -> Fraction:
        return self.cumulative_before(point) + self.mass(point) / 2

    def codeword_length(self, point) -> int:
        p = self.mass(point)
        if p <= 0:
            raise BadParameter("symbol has zero mass under this pmf")
        return _ceil_neg_log2(p) + 1

    def point(self, coords) -> LatticePoint:
        return LatticePoint(coords=_coords_of(coords), Delta=self.Delta)

    def top_symbols(self, n: int) -> list:
        """The n most probable lattice points (mass desc, enumeration asc)."""
        r = 1
        while _full_count(self.m, r) < 3 * n:
            r += 1
        candidates = {self._enum.point_at(i) for i in range(_full_count(self.m, r))}
        candidates.update(self.core)
        ranked = sorted(candidates, key=lambda k: (-self.mass(k), self._enum.index_of(k)))
        return ranked[:n]

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        rows = [
            [list(k), f"{self.core[k].numerator}/{self.core[k].denominator}"]
            for k in self._core_order
        ]
        obj = {
            "format": _FORMAT_NAME,
            "version": _FORMAT_VERSION,
            "m": self.m,
            "delta": self.Delta.hex(),
            "tail_epsilon": self.tail_epsilon.hex(),
            "tail_decay": self.tail_decay.hex(),
            "precision_bits": self.precision_bits,
            "count": len(rows),
            "core": rows,
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "LatticePmf":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"pmf payload is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict) or obj.get("format") != _FORMAT_NAME:
            raise ParseError("pmf payload has the wrong format tag")
        if obj.get("version") != _FORMAT_VERSION:
            raise ParseError(f"unsupported pmf version {obj.get('version')!r}")
        try:
            core = {}
            for coords, frac in obj["core"]:
                num, den = frac.split("/")
                core[tuple(int(c) for c in coords)] = Fraction(int(num), int(den))
            if len(core) != obj["count"]:
                raise ParseError("pmf count field disagrees with the core table")
            return cls(
                m=obj["m"],
                Delta=float.fromhex(obj["delta"]),
                core=core,
                tail_epsilon=float.fromhex(obj["tail_epsilon"]),
                tail_decay=float.fromhex(obj["tail_decay"]),
                precision_bits=obj["precision_bits"],
            )
        except (KeyError, ValueError, TypeError, ZeroDivisionError) as exc:
            raise ParseError(f"pmf payload is structurally invalid: {exc}") from exc

    def save(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LatticePmf":
        with open(path, "r", encoding="ascii") as fh:
            return cls.from_json(fh.read())


def geometric_pmf(m: int, Delta: float, decay: float = 0.9) -> LatticePmf:
    """Pure two-sided-geometric prior (the warm-up bootstrap code)."""
    return LatticePmf(m=m, Delta=Delta, core={}, tail_epsilon=1.0, tail_decay=decay)


def build_pmf(histogram, tail_epsilon: float = DEFAULT_TAIL_EPSILON,
              tail_decay: float = DEFAULT_TAIL_DECAY, Delta: float = None) -> LatticePmf:
    """Empirical core + geometric tail mixture from integer counts.

    Keys may be LatticePoints (Delta inferred) or integer tuples (Delta
    keyword required, default 1.0).
    """
    if not (0.0 < tail_epsilon < 1.0):
        raise BadParameter(f"tail_epsilon must lie in (0, 1), got {tail_epsilon}")
    if not (0.0 < tail_decay < 1.0):
        raise BadParameter(f"tail_decay must lie in (0, 1), got {tail_decay}")
    items = list(histogram.items())
    if not items:
        raise EmptyHistogram("histogram has no entries")
    delta = Delta
    m = None
    counts = {}
    total = 0
    for k, c in items:
        if isinstance(k, LatticePoint):
            if delta is None:
                delta = k.Delta
            elif k.Delta != delta:
                raise BadParameter("histogram mixes points with different Delta")
            coords = k.coords
        else:
            coords = tuple(int(x) for x in k)
        if m is None:
            m = len(coords)
        elif len(coords) != m:
            raise DimensionMismatch("histogram mixes point dimensions")
        c = int(c)
        if c < 0:
            raise BadParameter(f"negative count {c} for {coords}")
        if c:
            counts[coords] = counts.get(coords, 0) + c
            total += c
    if total == 0:
        raise EmptyHistogram("histogram counts are all zero")
    core = {k: Fraction(c, total) for k, c in counts.items()}
    return LatticePmf(m=m, Delta=1.0 if delta is None else delta, core=core,
                      tail_epsilon=tail_epsilon, tail_decay=tail_decay)


# --------------------------------------------------------------------------
# the code itself


def _ceil_neg_log2(p: Fraction) -> int:
    """ceil(-log2 p) for exact rational p in (0, 1]."""
    num, den = p.numerator, p.denominator
    t = max(0, den.bit_length() - num.bit_length())
    while (num << t) < den:
        t += 1
    while t > 0 and (num << (t - 1)) >= den:
        t -= 1
    return t


def encode(q, pmf: LatticePmf) -> Codeword:
    """SFE codeword: binary expansion of F(q) cut to ceil(-log2 p)+1 bits.

    All cumulative arithmetic is exact, so the dyadic interval of the
    truncated expansion is guaranteed to sit inside q's cumulative
    interval, which is what makes the code prefix-free.
    """
    coords = _coords_of(q)
    cached = pmf._encode_cache.get(coords)
    if cached is not None:
        return cached
    p = pmf.mass(coords)
    if p <= 0:
        raise BadParameter("cannot encode a zero-mass symbol")
    length = _ceil_neg_log2(p) + 1
    precision = pmf.precision_bits
    while length > precision:
        if precision >= _PRECISION_CAP:
            raise PrecisionExhausted(
                f"codeword needs {length} bits, beyond the doubled-precision cap {_PRECISION_CAP}"
            )
        precision *= 2
    fbar = pmf.cumulative_before(coords) + p / 2
    c = (fbar.numerator << length) // fbar.denominator
    word = Codeword(bits=format(c, "b").zfill(length), length=length)
    pmf._encode_cache[coords] = word
    pmf._decode_cache[word.bits] = coords
    return word


def _locate(pmf: LatticePmf, v: Fraction):
    """Largest-index symbol whose cumulative interval starts at or below v."""
    enum = pmf._enum
    hi = 1
    while pmf.cumulative_before(enum.point_at(hi)) <= v:
        hi *= 2
    lo = 0
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if pmf.cumulative_before(enum.point_at(mid)) <= v:
            lo = mid
        else:
            hi = mid
    return enum.point_at(lo)


def decode(bits: str, pmf: LatticePmf):
    """Decode one codeword from the front of bits.

    Returns (LatticePoint, consumed_bits).  Streaming: bits may be a
    concatenation of codewords; exactly one symbol is consumed.
    """
    if not bits or any(b not in "01" for b in bits):
        raise MalformedCodeword("input is empty or not a bit string")
    # fast path: previously seen codewords
    cache = pmf._decode_cache
    limit = min(len(bits), _PRECISION_CAP)
    c = 0
    for n in range(1, limit + 1):
        c = (c << 1) | (bits[n - 1] == "1")
        prefix = bits[:n]
        hit = cache.get(prefix)
        if hit is not None:
            return pmf.point(hit), n
        lo = Fraction(c, 1 << n)
        coords = _locate(pmf, lo)
        f_lo = pmf.cumulative_before(coords)
        f_hi = f_lo + pmf.mass(coords)
        if lo >= f_lo and Fraction(c + 1, 1 << n) <= f_hi:
            word = encode(coords, pmf)
            if len(bits) >= word.length and bits[: word.length] == word.bits:
                return pmf.point(coords), word.length
            raise MalformedCodeword(
                f"prefix {prefix} brackets symbol {coords} but disagrees with its codeword"
            )
    raise MalformedCodeword("bits exhausted without bracketing any symbol")


def decode_stream(bits: str, pmf: LatticePmf, count: int = None):
    """Decode consecutive codewords; returns (points, consumed_bits)."""
    out = []
    pos = 0
    while pos < len(bits) and (count is None or len(out) < count):
        point, used = decode(bits[pos:], pmf)
        out.append(point)
        pos += used
    if count is not None and len(out) < count:
        raise MalformedCodeword(f"stream ended after {len(out)} of {count} symbols")
    return out, pos


def expected_length(pmf: LatticePmf, law) -> float:
    """Mean codeword length sum law(q) * (ceil(-log2 p(q)) + 1), in bits."""
    total = 0.0
    mass = 0.0
    for k, w in law.items():
        w = float(w)
        if w < 0:
            raise BadParameter("law probabilities must be nonnegative")
        mass += w
        if w:
            total += w * pmf.codeword_length(_coords_of(k))
    if abs(mass - 1.0) > 1e-9:
        raise BadParameter(f"law sums to {mass!r}, expected 1 within 1e-9")
    return total
