import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dissren import dyson as dy
from dissren.dyson import TermSum, a, ad
from dissren.errors import CapacityError
from dissren.fock import FockAssignment, evaluate_on_truncated_fock


def _check_word(word, modes, n_max, assignment):
    ts = TermSum.single(word=word)
    diff = ts - dy.normal_order(ts)
    ev = evaluate_on_truncated_fock(diff, modes, n_max, assignment)
    ref = evaluate_on_truncated_fock(ts, modes, n_max, assignment)
    assert ev.valid.any()
    assert np.max(np.abs(ev.matrix[:, ev.valid]), initial=0.0) < 1e-12 * max(1.0, np.max(np.abs(ref.matrix)))


def test_random_words_match_normal_form():
    rng = np.random.default_rng(20240501)
    checked = 0
    while checked < 500:
        length = int(rng.integers(0, 7))
        modes = int(rng.integers(1, 4))
        kinds = rng.choice(["a", "ad"], size=length)
        word = tuple((str(k), i + 1) for i, k in enumerate(kinds))
        asg = FockAssignment(modes={i + 1: int(rng.integers(0, modes)) for i in range(length)})
        per_mode = np.bincount([asg.modes[i] for k, i in word if k == "ad"], minlength=modes)
        if per_mode.max(initial=0) > 4:
            continue  # no column survives the cutoff; draw again
        _check_word(word, modes, 4, asg)
        checked += 1


def test_four_operator_expansion_numerically():
    word = (a(1), ad(2), a(3), ad(4))
    rhs = TermSum([
        dy.Term(dy.ONE, (), (ad(2), ad(4), a(1), a(3))),
        dy.Term(dy.ONE, (dy.kernel("dw", 1, 2),), (ad(4), a(3))),
        dy.Term(dy.ONE, (dy.kernel("dw", 3, 4),), (ad(2), a(1))),
        dy.Term(dy.ONE, (dy.kernel("dw", 1, 2), dy.kernel("dw", 3, 4)), ()),
        dy.Term(dy.ONE, (dy.kernel("dw", 1, 4),), (ad(2), a(3))),
    ])
    for modes in ((0, 0, 0, 0), (0, 1, 1, 0), (0, 1, 0, 1), (1, 1, 0, 0)):
        asg = FockAssignment(modes=dict(zip(range(1, 5), modes)))
        ev = evaluate_on_truncated_fock(TermSum.single(word=word) - rhs, 2, 4, asg)
        assert np.max(np.abs(ev.matrix[:, ev.valid])) < 1e-12


def test_single_commutator_numerically():
    rng = np.random.default_rng(3)
    asg = FockAssignment(modes={1: 0, 2: 0})
    for _ in range(5):
        asg.modes[2] = int(rng.integers(0, 2))
        _check_word((a(1), ad(2)), 2, 3, asg)


@settings(max_examples=25)
@given(st.lists(st.sampled_from(["A", "Ap"]), max_size=6), st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_A_words_with_random_amplitudes(kinds, seed, modes):
    assume(kinds.count("Ap") <= 4)
    rng = np.random.default_rng(seed)
    word = tuple((k, i + 1) for i, k in enumerate(kinds))
    amps = {i + 1: rng.normal(size=modes) + 1j * rng.normal(size=modes) for i in range(len(kinds))}
    _check_word(word, modes, 4, FockAssignment(amplitudes=amps))


def test_zero_sum_gives_zero_matrix():
    ev = evaluate_on_truncated_fock(dy.ZERO, 2, 2, FockAssignment())
    assert ev.matrix.shape == (9, 9) and not ev.matrix.any()


def test_overflow_flag():
    asg = FockAssignment(modes={1: 0, 2: 0})
    ev = evaluate_on_truncated_fock(TermSum.single(word=(ad(1), ad(2))), 1, 2, asg)
    assert ev.overflow
    assert ev.valid.tolist() == [True, False, False]


def test_qubit_factors_tensor_with_field():
    ts = TermSum.single(word=(("sp", 0), a(1)))
    ev = evaluate_on_truncated_fock(ts, 1, 1, FockAssignment(modes={1: 0}))
    want = np.kron(np.array([[0, 1], [0, 0]]), np.array([[0, 0], [1, 0]]))
    np.testing.assert_allclose(ev.matrix, want)


def test_capacity_guard():
    with pytest.raises(CapacityError):
        evaluate_on_truncated_fock(dy.ZERO, 5, 2, FockAssignment())
