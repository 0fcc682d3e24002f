"""Exact symbolic Dyson-series engine for the renormalized two-level problem.

Coefficients are polynomials in b and b* with Gaussian-integer coefficients
(the symbol i is reduced with i^2 = -1).  Operator words are tuples of
factors ``(kind, index)``; time integrals run over the simplex
t_1 >= t_2 >= ... >= t_n.

Pipeline used for the propagator elements:

    matrix_element_word -> normal_order -> apply_markov_rule -> integrate_simplex
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache

from .errors import CapacityError, UnsupportedWordError, VerificationFailure

# -- coefficients -------------------------------------------------------------------


class Poly:
    """Polynomial sum_{p,q} c_{pq} b^p (b*)^q with c_{pq} a Gaussian integer."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms=None):
        clean = {}
        for key, (re, im) in (terms or {}).items():
            if re or im:
                clean[key] = (int(re), int(im))
        self._terms = tuple(sorted(clean.items()))
        self._hash = None

    @classmethod
    def const(cls, re=1, im=0):
        return cls({(0, 0): (re, im)})

    @classmethod
    def monomial(cls, b=0, bstar=0, re=1, im=0):
        return cls({(b, bstar): (re, im)})

    @classmethod
    def i_power(cls, k):
        return cls.const(*((1, 0), (0, 1), (-1, 0), (0, -1))[k % 4])

    @property
    def terms(self):
        return self._terms

    def is_zero(self):
        return not self._terms

    def __bool__(self):
        return bool(self._terms)

    def __add__(self, other):
        acc = dict(self._terms)
        for key, (re, im) in other._terms:
            r0, i0 = acc.get(key, (0, 0))
            acc[key] = (r0 + re, i0 + im)
        return Poly(acc)

    def __neg__(self):
        return Poly({k: (-re, -im) for k, (re, im) in self._terms})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(int(other))
        acc = defaultdict(lambda: (0, 0))
        for (p1, q1), (a, b) in self._terms:
            for (p2, q2), (c, d) in other._terms:
                key = (p1 + p2, q1 + q2)
                re, im = acc[key]
                acc[key] = (re + a * c - b * d, im + a * d + b * c)
        return Poly(dict(acc))

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, Poly) and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._terms)
        return self._hash

    def degree(self):
        """Set of total b-degrees p + q present."""
        return {p + q for (p, q), _ in self._terms}

    def evaluate(self, b: complex) -> complex:
        return sum(complex(re, im) * b**p * b.conjugate() ** q for (p, q), (re, im) in self._terms)

    def __repr__(self):
        return f"Poly({self})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for (p, q), (re, im) in self._terms:
            if im == 0:
                c = f"{re:+d}"
            elif re == 0:
                c = f"{im:+d}*i"
            else:
                c = f"+({re}{im:+d}*i)"
            mono = "".join([f"*b^{p}" if p > 1 else "*b" if p else "",
                            f"*bs^{q}" if q > 1 else "*bs" if q else ""])
            parts.append(c + mono)
        return "".join(parts)


ONE = Poly.const(1)
IB = Poly.monomial(b=1, re=0, im=1)  # i b

# -- words and kernels ----------------------------------------------------------------

# creation-type factors first, so normal-ordered words sort naturally
KIND_RANK = {"Ap": 0, "ad": 1, "A": 2, "a": 3, "sp": 4, "sm": 5, "P1": 6}
CREATORS = {"Ap", "ad"}
ANNIHILATORS = {"A", "a"}
KIND_LABEL = {"A": "A", "Ap": "A'", "a": "a", "ad": "a+", "sp": "s+", "sm": "s-", "P1": "P1"}


def A(i):
    return ("A", i)


def Ap(i):
    return ("Ap", i)


def a(i):
    return ("a", i)


def ad(i):
    return ("ad", i)


def factor_key(f):
    return (KIND_RANK[f[0]], f[1])


def is_normal_ordered(word) -> bool:
    seen_annihilator = False
    for kind, _ in word:
        if kind in ANNIHILATORS:
            seen_annihilator = True
        elif kind in CREATORS and seen_annihilator:
            return False
    return True


# A kernel is (kind, i, j, orientation) with i < j:
#   "F"  -> F^r(t_i - t_j) if orientation = +1, F^r(t_j - t_i) if -1
#   "dw" -> delta(w_i - w_j), "dt" -> delta(t_i - t_j); orientation is +1
def kernel(kind, i, j):
    if i == j:
        raise ValueError("kernel needs two distinct indices")
    if kind == "F":
        return ("F", min(i, j), max(i, j), 1 if i < j else -1)
    return (kind, min(i, j), max(i, j), 1)


def _fmt_kernel(k):
    kind, i, j, o = k
    if kind == "F":
        return f"Fr({i}-{j})" if o > 0 else f"Fr({j}-{i})"
    return f"{'dw' if kind == 'dw' else 'dt'}({i},{j})"


def _fmt_word(word):
    return " ".join(f"{KIND_LABEL[k]}({i})" for k, i in word) or "1"


@dataclass(frozen=True)
class Term:
    coeff: Poly
    kernels: tuple
    word: tuple
    dim: int | None = None

    def key(self):
        return (-1 if self.dim is None else self.dim, self.kernels,
                tuple(factor_key(f) for f in self.word))

    def sexpr(self):
        ks = " ".join(_fmt_kernel(k) for k in self.kernels) or "-"
        head = f"({self.coeff}; {ks}; {_fmt_word(self.word)}"
        if self.dim is not None:
            head += f"; dim={self.dim}"
        return head + ")"


class TermSum:
    """Canonical sum of terms; equal (dim, kernels, word) entries are merged
    and zero coefficients dropped."""

    __slots__ = ("_terms",)

    def __init__(self, terms=()):
        acc = {}
        for t in terms:
            k = (t.dim, tuple(sorted(t.kernels)), tuple(t.word))
            acc[k] = acc[k] + t.coeff if k in acc else t.coeff
        items = [Term(c, k[1], k[2], k[0]) for k, c in acc.items() if not c.is_zero()]
        items.sort(key=Term.key)
        self._terms = tuple(items)

    @classmethod
    def single(cls, coeff=ONE, kernels=(), word=(), dim=None):
        return cls([Term(coeff, tuple(kernels), tuple(word), dim)])

    @property
    def terms(self):
        return self._terms

    def __iter__(self):
        return iter(self._terms)

    def __len__(self):
        return len(self._terms)

    def is_zero(self):
        return not self._terms

    def __add__(self, other):
        return TermSum(self._terms + other._terms)

    def __neg__(self):
        return TermSum(Term(-t.coeff, t.kernels, t.word, t.dim) for t in self._terms)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c: Poly):
        return TermSum(Term(t.coeff * c, t.kernels, t.word, t.dim) for t in self._terms)

    def __matmul__(self, other):
        """Operator product: words concatenated, kernels and coefficients multiplied."""
        out = []
        for s in self._terms:
            for o in other._terms:
                out.append(Term(s.coeff * o.coeff, s.kernels + o.kernels, s.word + o.word, None))
        return TermSum(out)

    def __eq__(self, other):
        return isinstance(other, TermSum) and self._terms == other._terms

    def __hash__(self):
        return hash(self._terms)

    def dump(self) -> str:
        return "".join(t.sexpr() + "\n" for t in self._terms)

    def __repr__(self):
        return f"TermSum({len(self)} terms)"


ZERO = TermSum()

# -- matrix elements of products of the interaction Hamiltonian -------------------------

MAX_ORDER = 12


def interaction_matrix(p: int):
    """H(t_p) as a 2x2 array of TermSums indexed [bra][ket] over {0, 1}:
    <1|H|1> = i b (P1 part), <1|H|0> = A(t_p) (sigma+), <0|H|1> = A'(t_p) (sigma-)."""
    return [[ZERO, TermSum.single(word=(Ap(p),))],
            [TermSum.single(word=(A(p),)), TermSum.single(IB)]]


def _matmul2(x, y):
    return [[x[r][0] @ y[0][c] + x[r][1] @ y[1][c] for c in range(2)] for r in range(2)]


@lru_cache(maxsize=None)
def _product_matrix(n: int):
    m = [[TermSum.single(), ZERO], [ZERO, TermSum.single()]]
    for p in range(1, n + 1):
        m = _matmul2(m, interaction_matrix(p))
    return m


def matrix_element_word(n: int, bra: int, ket: int) -> TermSum:
    """<bra| H(t_1) H(t_2) ... H(t_n) |ket> as a sum of A/A' words with (ib)^k
    coefficients; the sigma algebra is carried out by 2x2 matrix products."""
    if not 1 <= n <= MAX_ORDER:
        raise CapacityError(f"order n={n} outside 1..{MAX_ORDER}")
    if bra not in (0, 1) or ket not in (0, 1):
        raise ValueError("bra and ket must be 0 or 1")
    return _product_matrix(n)[bra][ket]


def k_part(ts: TermSum, k: int) -> TermSum:
    """Terms carrying exactly (ib)^k."""
    return TermSum(t for t in ts if t.coeff.degree() == {k})


# -- Wick normal ordering -----------------------------------------------------------------

def _word_family(word):
    kinds = {k for k, _ in word}
    if kinds <= {"A", "Ap"}:
        return "A"
    if kinds <= {"a", "ad"}:
        return "a"
    raise UnsupportedWordError(f"cannot normal-order word {_fmt_word(word)}")


@lru_cache(maxsize=65536)
def _normal_order_word(word):
    """dict {(kernels, normal word): integer multiplicity}."""
    for p in range(len(word) - 1):
        (k1, i1), (k2, i2) = word[p], word[p + 1]
        if k1 in ANNIHILATORS and k2 in CREATORS:
            swapped = word[:p] + (word[p + 1], word[p]) + word[p + 2:]
            contracted = word[:p] + word[p + 2:]
            kern = kernel("F", i1, i2) if k1 == "A" else kernel("dw", i1, i2)
            out = defaultdict(int)
            for key, c in _normal_order_word(swapped).items():
                out[key] += c
            for (ks, w), c in _normal_order_word(contracted).items():
                out[(tuple(sorted(ks + (kern,))), w)] += c
            return dict(out)
    creators = sorted((f for f in word if f[0] in CREATORS), key=factor_key)
    annihilators = sorted((f for f in word if f[0] in ANNIHILATORS), key=factor_key)
    return {((), tuple(creators) + tuple(annihilators)): 1}


def normal_order(ts: TermSum) -> TermSum:
    """Rewrite each word as normal-ordered words plus contraction kernels:
    F^r(t_i - t_j) for [A(t_i), A'(t_j)], delta(w_i - w_j) for [a_i, a+_j]."""
    out = []
    for t in ts:
        if t.word:
            _word_family(t.word)
        for (ks, w), c in _normal_order_word(t.word).items():
            out.append(Term(t.coeff * c, tuple(sorted(t.kernels + ks)), w, t.dim))
    return TermSum(out)


# -- Markov rule and simplex integration ------------------------------------------------------

B = Poly.monomial(b=1)
BSTAR = Poly.monomial(bstar=1)


def apply_markov_rule(ts: TermSum) -> TermSum:
    """F^r(t_i - t_j) -> b delta(t_i - t_j) when t_i >= t_j on the simplex
    (i < j), b* delta otherwise.  Frequency deltas from a/a+ contractions go
    through F^r first and follow the same rule."""
    out = []
    for t in ts:
        coeff = t.coeff
        ks = []
        for kind, i, j, o in t.kernels:
            if kind in ("F", "dw"):
                coeff = coeff * (B if o > 0 else BSTAR)
                ks.append(("dt", i, j, 1))
            else:
                ks.append((kind, i, j, o))
        out.append(Term(coeff, tuple(ks), t.word, t.dim))
    return TermSum(out)


def _relabel(idx, gone):
    """Index after removing integration variable ``gone`` (merged into gone-1)."""
    if idx == gone:
        return gone - 1
    return idx - 1 if idx > gone else idx


def integrate_simplex(ts: TermSum, n: int) -> TermSum:
    """Integrate time deltas over the n-simplex.

    A delta between non-neighbouring times vanishes on the ordered simplex; a
    neighbouring one removes one integral (t_{i+1} is set to t_i) and the
    remaining times are relabelled 1..n-1.  Each output term records the
    dimension of the simplex left over.
    """
    out = []
    for t in ts:
        if any(k[0] != "dt" for k in t.kernels):
            raise UnsupportedWordError("integrate_simplex expects time deltas only")
        if any(j - i > 1 for _, i, j, _ in t.kernels):
            continue
        ks = list(t.kernels)
        word = list(t.word)
        dim = n if t.dim is None else t.dim
        while ks:
            _, i, j, _ = ks.pop(0)
            gone = j
            new_ks = []
            for kind, p, q, o in ks:
                p2, q2 = _relabel(p, gone), _relabel(q, gone)
                if p2 == q2:
                    raise UnsupportedWordError("delta collapses onto itself")
                new_ks.append((kind, min(p2, q2), max(p2, q2), o))
            ks = new_ks
            word = [(k, _relabel(x, gone)) for k, x in word]
            dim -= 1
        out.append(Term(t.coeff, (), tuple(word), dim))
    return TermSum(out)


# -- Cancellation check -----------------------------------------------------------------------

ELEMENTS = ((1, 1), (0, 0), (0, 1), (1, 0))
MINUS_I = Poly.const(0, -1)


def dyson_order(n: int, bra: int, ket: int) -> TermSum:
    """(-i)^n times the n-th Dyson integrand, pushed through the full pipeline."""
    if n == 0:
        return TermSum.single(dim=0) if bra == ket else ZERO
    me = matrix_element_word(n, bra, ket).scale(Poly.i_power(3 * n))
    return integrate_simplex(apply_markov_rule(normal_order(me)), n)


def closed_form_terms(bra: int, ket: int, max_dim: int) -> TermSum:
    """Closed-form normally ordered series for the element <bra|S|ket>, up to
    simplex dimension ``max_dim``."""
    out = []
    if bra == ket:
        out.append(Term(ONE, (), (), 0))
        for n in range(1, max_dim // 2 + 1):
            d = 2 * n
            odd = tuple(range(1, d, 2))
            even = tuple(range(2, d + 1, 2))
            if bra == 1:
                word = tuple(Ap(i) for i in even) + tuple(A(i) for i in odd)
            else:
                word = tuple(Ap(i) for i in odd) + tuple(A(i) for i in even)
            out.append(Term(Poly.i_power(3 * d), (), word, d))
    else:
        for n in range(1, (max_dim + 1) // 2 + 1):
            d = 2 * n - 1
            odd = tuple(range(1, d + 1, 2))
            even = tuple(range(2, d, 2))
            if bra == 0:
                word = tuple(Ap(i) for i in odd) + tuple(A(i) for i in even)
            else:
                word = tuple(Ap(i) for i in even) + tuple(A(i) for i in odd)
            out.append(Term(Poly.i_power(3 * d), (), word, d))
    return TermSum(out)


def closing_order(term: Term) -> int:
    """Highest Dyson order that can feed (dim, word): a term with m field
    operators on a d-simplex carries b^(d - m), and each such b may come from
    a collapsed contraction that used one extra order."""
    return 2 * term.dim - len(term.word)


@dataclass
class ElementReport:
    bra: int
    ket: int
    n_max: int
    residual: TermSum            # over groups closed by orders <= n_max
    residual_by_order: dict      # closing order -> TermSum
    open_terms: TermSum          # groups still waiting for higher orders

    @property
    def ok(self):
        return self.residual.is_zero()


@dataclass
class CancellationReport:
    n_max: int
    elements: list

    @property
    def ok(self):
        return all(e.ok for e in self.elements)

    def summary_lines(self):
        lines = []
        for e in self.elements:
            lines.append(f"S{e.bra}{e.ket} n_max={e.n_max} residual_terms={len(e.residual)} "
                         f"open_terms={len(e.open_terms)} {'ok' if e.ok else 'FAIL'}")
        return lines


def verify_element(n_max: int, bra: int, ket: int) -> ElementReport:
    total = ZERO
    for n in range(0, n_max + 1):
        total = total + dyson_order(n, bra, ket)
    diff = total - closed_form_terms(bra, ket, n_max)
    closed, pending = [], []
    for t in diff:
        (closed if closing_order(t) <= n_max else pending).append(t)
    by_order = defaultdict(list)
    for t in closed:
        by_order[closing_order(t)].append(t)
    return ElementReport(bra, ket, n_max, TermSum(closed),
                         {k: TermSum(v) for k, v in sorted(by_order.items())}, TermSum(pending))


def verify_theorem1(n_max: int, threads: int = 1, raise_on_failure: bool = False) -> CancellationReport:
    """Sum the renormalized Dyson series through order n_max for all four
    matrix elements and compare with the closed normally ordered series.

    A (dimension, word) group is compared once every order that can feed it
    has been included; groups that still need higher orders are reported as
    ``open_terms`` and are not counted as residual.
    """
    if not 0 <= n_max <= 8:
        raise CapacityError("verify_theorem1 supports n_max <= 8")
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            elements = list(pool.map(lambda e: verify_element(n_max, *e), ELEMENTS))
    else:
        elements = [verify_element(n_max, *e) for e in ELEMENTS]
    report = CancellationReport(n_max, elements)
    if raise_on_failure and not report.ok:
        bad = "".join(e.residual.dump() for e in elements if not e.ok)
        raise VerificationFailure("nonzero residual:\n" + bad, report)
    return report
