import numpy as np
import pytest

from corrquant import npa
from corrquant import scenario as sc
from corrquant.cg import CgLayout, strategy_cg_matrix

CHSH = (2, 2, 2, 2)


def chsh_functional():
    """CHSH as full-table coefficients: E00 + E01 + E10 - E11."""
    coeffs = np.zeros((2, 2, 2, 2))
    for x in range(2):
        for y in range(2):
            sign = -1.0 if (x, y) == (1, 1) else 1.0
            for a in range(2):
                for b in range(2):
                    coeffs[x, y, a, b] = sign * (-1.0) ** (a + b)
    return coeffs


def tsirelson_behaviour(v=1.0):
    alice = sc.paulis("XZ")
    bob = sc.bloch_measurements([
        np.array([1, 0, 1]) / np.sqrt(2),
        np.array([1, 0, -1]) / np.sqrt(2),
    ])
    return sc.measure(sc.steer(sc.werner(v), alice), bob)


def pr_box():
    tab = np.zeros((2, 2, 2, 2))
    for x in range(2):
        for y in range(2):
            for a in range(2):
                for b in range(2):
                    if (a + b) % 2 == (x * y):
                        tab[x, y, a, b] = 0.5
    return sc.Behaviour(tab)


def test_cg_roundtrip():
    layout = CgLayout(2, 2, 2, 2)
    assert layout.dim == 9
    beh = tsirelson_behaviour(0.8)
    cg = layout.of_table(beh.table)
    assert abs(cg[0] - 1.0) < 1e-12
    back = layout.table_of(cg)
    assert np.max(np.abs(back - beh.table)) < 1e-12


def test_cg_strategy_matrix_spans():
    layout = CgLayout(2, 3, 2, 2)
    S = strategy_cg_matrix(layout)
    assert S.shape == (9 * 4, layout.dim)
    assert np.linalg.matrix_rank(S) == layout.dim


def test_word_counts_chsh():
    t1 = npa.build_npa_block(CHSH, 1)
    assert t1.size == 5          # identity + 2 Alice + 2 Bob projectors
    t2 = npa.build_npa_block(CHSH, 2)
    assert t2.size == 13         # + AA', BB', AB products
    with pytest.raises(ValueError):
        npa.build_npa_block(CHSH, 3)


def test_word_canonicalization():
    a0 = (0, 0, 0)
    a1 = (0, 1, 0)
    b0 = (1, 0, 0)
    assert npa.canonical_word((b0, a0)) == (a0, b0)
    assert npa.canonical_word((a0, a0)) == (a0,)
    assert npa.canonical_word(((0, 0, 0), (0, 0, 1))) is None
    # adjoint identification: A0 A1 B and its reverse share a class key
    k1 = npa.word_class_key((), (a0, a1, b0))
    k2 = npa.word_class_key((), (b0, a1, a0))
    assert k1 == k2


def test_chsh_level1_tsirelson():
    # oracle: explicit qubit strategy achieves 2 sqrt 2 (test_scenario),
    # and the level-1 relaxation is tight for CHSH
    value, mm = npa.npa_optimize(chsh_functional(), CHSH, level=1)
    assert abs(value - 2 * np.sqrt(2)) < 1e-6
    # moment matrix PSD within the accepted margin, exactly class-shared
    gamma = mm.gamma
    assert np.linalg.eigvalsh(gamma)[0] > -1e-9
    for cells in mm.template.classes:
        vals = [gamma[c] for c in cells]
        assert max(vals) - min(vals) == 0.0


def test_level2_not_larger():
    v1, _ = npa.npa_optimize(chsh_functional(), CHSH, level=1)
    v2, _ = npa.npa_optimize(chsh_functional(), CHSH, level=2)
    assert v2 <= v1 + 1e-8


def test_constant_and_positivity_functionals():
    coeffs = np.zeros((2, 2, 2, 2))
    coeffs[0, 0, 0, 0] = 1.0     # P(00|00) <= 1
    value, _ = npa.npa_optimize(coeffs, CHSH, level=1)
    assert abs(value - 1.0) < 1e-6
    norm = np.zeros((2, 2, 2, 2))
    norm[0, 0] = 1.0             # sums to 1 for any behaviour
    value, _ = npa.npa_optimize(norm, CHSH, level=1)
    assert abs(value - 1.0) < 1e-6


def test_local_behaviour_feasible():
    rng = np.random.default_rng(0)
    w = rng.random((4, 4))
    w /= w.sum()
    beh = sc.LocalModel(w, CHSH).behaviour()
    dec = npa.npa_membership(beh, level=1)
    assert dec.feasible
    mm = dec.moment_matrix
    assert abs(mm.normalization - 1.0) < 1e-8
    # reads reproduce the behaviour's CG vector
    cg = mm.template.layout.of_table(beh.table)
    assert np.max(np.abs(mm.behaviour_reads() - cg)) < 1e-7


def test_pr_box_infeasible_level1():
    dec = npa.npa_membership(pr_box(), level=1)
    assert not dec.feasible
    func = dec.functional
    assert func.violation >= 1e-7
    # the functional separates: nonnegative on quantum behaviours
    assert func.evaluate(tsirelson_behaviour(1.0).table) >= -1e-7
    assert func.evaluate(pr_box().table) <= -1e-7


def test_tsirelson_feasible_level2():
    dec = npa.npa_membership(tsirelson_behaviour(1.0), level=2)
    assert dec.feasible
    dec1 = npa.npa_membership(tsirelson_behaviour(1.0), level=1)
    assert dec1.feasible    # level monotonicity: feasible at 2 => at 1


def test_measured_behaviours_feasible_both_levels():
    rng = np.random.default_rng(1)
    for trial in range(3):
        vecs = rng.normal(size=(2, 3))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        alice = sc.bloch_measurements(vecs)
        vecs = rng.normal(size=(2, 3))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        bob = sc.bloch_measurements(vecs)
        beh = sc.measure(sc.steer(sc.werner(rng.random()), alice), bob)
        for level in (1, 2):
            dec = npa.npa_membership(beh, level)
            assert dec.margin >= -1e-7, (trial, level)


def test_tied_normalization_row():
    tmpl = npa.build_npa_block(CHSH, 1, normalization="tied-to-scalar")
    from corrquant.conic import ConicProgram
    prog = ConicProgram("tied")
    tmpl.declare_block(prog, "G")
    prog.add_nonneg("r", 1)
    tmpl.add_structure_rows(prog, "G", ("r", 0))
    # inspect: the gnorm row ties Gamma[0,0] to r
    names = [g.name for g in prog.row_groups]
    assert ("gnorm", "G") in names
    A, b, c, _, _ = prog.build()
    grp = [g for g in prog.row_groups if g.name == ("gnorm", "G")][0]
    row = A.getrow(grp.offset).toarray().ravel()
    rfam = prog.families["r"]
    assert row[rfam.offset] == -1.0


def test_template_dump():
    tmpl = npa.build_npa_block(CHSH, 1, normalization="tied-to-scalar")
    text = tmpl.dump_triplets()
    assert "family G" in text and "gnorm" in text


def test_three_outcome_scenario_zero_cells():
    # retained same-input projector pairs generate structurally zero cells
    tmpl = npa.build_npa_block((2, 3, 2, 2), 2)
    assert tmpl.zero_cells
    rng = np.random.default_rng(4)
    w = rng.random((9, 4))
    w /= w.sum()
    beh = sc.LocalModel(w, (2, 3, 2, 2)).behaviour()
    dec = npa.npa_membership(beh, level=2)
    assert dec.feasible
    mm = dec.moment_matrix
    for cell in tmpl.zero_cells:
        assert abs(mm.gamma[cell]) < 1e-12
