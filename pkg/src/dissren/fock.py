"""Numerical realization of symbolic sums on a truncated multimode Fock space.

Used as an independent oracle for the operator identities of :mod:`dyson`:
the ladder operators become (n_max+1)-dimensional matrices per mode, and a
basis column is trusted only when no word in the sum pushes an occupation
above the cutoff while acting on it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np

from .dyson import TermSum
from .errors import CapacityError, UnsupportedWordError


@dataclass
class FockAssignment:
    """Numeric meaning of the formal indices.

    ``modes`` maps the index of an a / a+ factor to a mode number.  For A / A'
    words, ``amplitudes`` maps an index to a complex vector over modes so that
    A(t_i) = sum_k u_i[k] a_k and A'(t_j) = sum_k v_j[k] a+_k, and the kernel
    F^r(t_i - t_j) evaluates to sum_k u_i[k] v_j[k].
    """

    modes: dict | None = None
    amplitudes: dict | None = None
    b: complex = 0.0


@dataclass
class FockEvaluation:
    matrix: np.ndarray
    valid: np.ndarray  # columns on which the truncated result is exact
    overflow: bool


QUBIT_OPS = {
    "sp": np.array([[0, 0], [1, 0]], dtype=complex),  # |1><0|
    "sm": np.array([[0, 1], [0, 0]], dtype=complex),
    "P1": np.array([[0, 0], [0, 1]], dtype=complex),
}


def _ladder(n_max):
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(complex)


def _mode_ops(modes, n_max):
    dim = n_max + 1
    low = _ladder(n_max)
    eye = np.eye(dim, dtype=complex)
    ops = []
    for k in range(modes):
        mats = [low if j == k else eye for j in range(modes)]
        ops.append(reduce(np.kron, mats))
    return ops


def _basis(modes, n_max):
    return np.array(list(product(range(n_max + 1), repeat=modes)), dtype=int)


def _word_mode_steps(word, assignment):
    steps = []
    for kind, idx in word:
        if kind in QUBIT_OPS:
            continue
        if kind in ("a", "ad"):
            steps.append((kind, [assignment.modes[idx]]))
        elif kind in ("A", "Ap"):
            vec = np.asarray(assignment.amplitudes[idx])
            steps.append(("a" if kind == "A" else "ad", [k for k in range(vec.size) if vec[k] != 0]))
        else:
            raise UnsupportedWordError(f"factor {kind} has no Fock realization")
    return steps


def _safe_columns(word, assignment, basis, n_max):
    """Columns whose occupations stay <= n_max for every path through the word."""
    ok = np.ones(len(basis), dtype=bool)
    occ_max = basis.copy()
    for kind, ks in reversed(_word_mode_steps(word, assignment)):
        if kind == "ad":
            bump = np.zeros(basis.shape[1], dtype=int)
            bump[ks] = 1
            occ_max = occ_max + bump
            ok &= np.all(occ_max <= n_max, axis=1)
    return ok


def _kernel_value(k, assignment):
    kind, i, j, o = k
    if kind == "dw":
        return 1.0 if assignment.modes[i] == assignment.modes[j] else 0.0
    if kind == "F":
        # stored as (min, max, orientation): orientation +1 means [A(t_i), A'(t_j)]
        first, second = (i, j) if o > 0 else (j, i)
        return complex(np.dot(assignment.amplitudes[first], assignment.amplitudes[second]))
    raise UnsupportedWordError(f"kernel {kind} has no Fock value")


def evaluate_on_truncated_fock(ts: TermSum, modes: int, n_max: int, assignment: FockAssignment) -> FockEvaluation:
    """Matrix of ``ts`` on the (n_max+1)^modes Fock space, tensored with the
    atom when any sigma or P1 factor occurs (field factor first)."""
    if not 1 <= modes <= 4 or not 1 <= n_max <= 4:
        raise CapacityError("truncated Fock evaluation supports modes <= 4 and n_max <= 4")
    ops = _mode_ops(modes, n_max)
    fdim = ops[0].shape[0]
    with_atom = any(kind in QUBIT_OPS for t in ts for kind, _ in t.word)
    adim = 2 if with_atom else 1
    eye_a = np.eye(adim, dtype=complex)
    eye_f = np.eye(fdim, dtype=complex)
    dim = fdim * adim
    basis = _basis(modes, n_max)
    out = np.zeros((dim, dim), dtype=complex)
    valid = np.ones(fdim, dtype=bool)
    for term in ts:
        mat = np.eye(dim, dtype=complex)
        for kind, idx in term.word:
            if kind in QUBIT_OPS:
                mat = mat @ np.kron(eye_f, QUBIT_OPS[kind])
                continue
            if kind == "a":
                op = ops[assignment.modes[idx]]
            elif kind == "ad":
                op = ops[assignment.modes[idx]].conj().T
            elif kind == "A":
                op = sum(u * ops[k] for k, u in enumerate(assignment.amplitudes[idx]))
            else:
                op = sum(v * ops[k].conj().T for k, v in enumerate(assignment.amplitudes[idx]))
            mat = mat @ np.kron(op, eye_a)
        c = term.coeff.evaluate(complex(assignment.b))
        for k in term.kernels:
            c *= _kernel_value(k, assignment)
        out += c * mat
        valid &= _safe_columns(term.word, assignment, basis, n_max)
    valid = np.repeat(valid, adim)
    return FockEvaluation(out, valid, bool(not valid.all()))
