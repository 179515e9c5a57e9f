"""Moment-matrix outer approximations of the quantum behaviour set.

Levels 1 and 2 of the hierarchy of moment-matrix relaxations: words are
products of measurement projectors (one outcome per input dropped via
completeness), canonicalized by party commutation, idempotence and
same-input orthogonality; matrix cells whose words coincide as operators
share one scalar.

Membership and optimization are solved in hand-dualized form so the
completed moment matrix is recovered from the solver's *dual slack*:
class sharing is then exact by construction and the matrix is exactly
PSD.  Quantifier programs that embed a scaled moment block instead add
the block as a primal variable with explicit tying rows and the
normalization Gamma[0,0] tied to the noise weight (see nonlocality).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cg import CgLayout
from .conic import ConicProgram
from .errors import SolverFailure

FEASTOL = 1e-8
GAPTOL = 1e-9

# a symbol is (party, input, outcome); words are tuples of symbols,
# canonical form keeps Alice symbols (party 0) before Bob symbols.


def _reduce_party(word):
    """Apply idempotence and same-input orthogonality until stable."""
    word = list(word)
    changed = True
    while changed:
        changed = False
        for i in range(len(word) - 1):
            s, t = word[i], word[i + 1]
            if s == t:
                del word[i + 1]
                changed = True
                break
            if s[1] == t[1]:        # same input, different outcome
                return None
    return tuple(word)


def canonical_word(word):
    """Canonical form of a projector word; None if it is the zero operator."""
    alice = tuple(s for s in word if s[0] == 0)
    bob = tuple(s for s in word if s[0] == 1)
    ra = _reduce_party(alice)
    if ra is None:
        return None
    rb = _reduce_party(bob)
    if rb is None:
        return None
    return ra + rb


def word_class_key(u, v):
    """Equivalence-class key of the moment at cell (u, v).

    The moment of w and of its adjoint have equal real part, so the key
    identifies w with reversed(w); None marks a structurally zero cell.
    """
    w = canonical_word(tuple(reversed(u)) + v)
    if w is None:
        return None
    wadj = canonical_word(tuple(reversed(w)))
    return min(w, wadj)


@dataclass
class OperatorWord:
    """A canonical projector word (exposed for inspection and tests)."""

    symbols: tuple

    def __post_init__(self):
        canon = canonical_word(self.symbols)
        if canon is None:
            raise ValueError("word reduces to the zero operator")
        self.symbols = canon

    def __len__(self):
        return len(self.symbols)


@dataclass
class NpaTemplate:
    """Word index, equivalence classes, and the CG identification map."""

    scenario: tuple          # (mA, nA, mB, nB)
    level: int
    words: list
    classes: list            # list of lists of cells (i, j), i <= j
    class_keys: list
    cell_class: dict         # (i, j) i<=j -> class index
    zero_cells: list
    layout: CgLayout = field(default=None)
    cg_class: list = field(default=None)      # cg index -> class index
    cg_cells: list = field(default=None)      # cg index -> representative cell
    normalization: str = "fixed-1"            # "fixed-1" | "tied-to-scalar"

    @property
    def size(self) -> int:
        return len(self.words)

    def identity_class(self) -> int:
        return self.cg_class[0]

    def declare_block(self, prog: ConicProgram, name: str) -> None:
        """Declare Gamma as a primal PSD block (before any rows)."""
        prog.add_psd_family(name, 1, self.size)

    def dump_triplets(self) -> str:
        """Sparse-triplet dump of the template's structure rows, for
        cross-checking against external solvers."""
        prog = ConicProgram(f"npa_template:l{self.level}")
        self.declare_block(prog, "G")
        if self.normalization == "tied-to-scalar":
            prog.add_nonneg("r", 1)
            self.add_structure_rows(prog, "G", ("r", 0))
        else:
            self.add_structure_rows(prog, "G", 1.0)
        prog.set_objective([("entry", "G", 0, (0, 0))])
        return prog.dump_triplets()

    def add_structure_rows(self, prog: ConicProgram, name: str,
                           normalization) -> None:
        """Tying rows (shared class entries), zero cells, and the
        normalization row Gamma[0,0] = 1 or Gamma[0,0] = scalar variable
        (``normalization`` a (family, index) pair)."""
        for ci, cells in enumerate(self.classes):
            rep = cells[0]
            for cell in cells[1:]:
                diff = (_cell_functional(self.size, cell)
                        - _cell_functional(self.size, rep))
                prog.add_scalar_row(("tie", name, ci, cell), 0.0,
                                    [("mat", name, 0, diff)])
        for cell in self.zero_cells:
            prog.add_scalar_row(("zero", name, cell), 0.0,
                                [("entry", name, 0, cell)])
        if isinstance(normalization, tuple):
            fam, idx = normalization
            prog.add_scalar_row(("gnorm", name), 0.0,
                                [("entry", name, 0, (0, 0)),
                                 ("lin", fam, [idx], [-1.0])])
        else:
            prog.add_scalar_row(("gnorm", name), float(normalization),
                                [("entry", name, 0, (0, 0))])


def build_npa_block(scenario, level: int, normalization="fixed-1") -> NpaTemplate:
    """Word index + class structure for one scenario and level.

    ``normalization`` is recorded for callers ("fixed-1" or
    "tied-to-scalar"); the actual tying happens when the template is
    added to a program.
    """
    mA, nA, mB, nB = scenario
    if level not in (1, 2):
        raise ValueError(f"unsupported level {level!r} (only 1 and 2)")
    asyms = [(0, x, a) for x in range(mA) for a in range(nA - 1)]
    bsyms = [(1, y, b) for y in range(mB) for b in range(nB - 1)]
    words = [()]
    words += [(s,) for s in asyms] + [(s,) for s in bsyms]
    if level == 2:
        seen = set(words)
        for group in (asyms, bsyms):
            for s in group:
                for t in group:
                    w = canonical_word((s, t))
                    if w and len(w) == 2 and w not in seen:
                        seen.add(w)
                        words.append(w)
        for s in asyms:
            for t in bsyms:
                w = canonical_word((s, t))
                if w and w not in seen:
                    seen.add(w)
                    words.append(w)

    nw = len(words)
    cell_class: dict = {}
    classes: list = []
    keys: list = []
    key_index: dict = {}
    zero_cells = []
    for i in range(nw):
        for j in range(i, nw):
            key = word_class_key(words[i], words[j])
            if key is None:
                zero_cells.append((i, j))
                continue
            if key not in key_index:
                key_index[key] = len(classes)
                classes.append([])
                keys.append(key)
            ci = key_index[key]
            classes[ci].append((i, j))
            cell_class[(i, j)] = ci

    layout = CgLayout(mA, nA, mB, nB)
    cg_class, cg_cells = [], []
    for coord in layout.coords:
        if not coord:
            word = ()
        elif coord[0] == "A":
            word = ((0, coord[1], coord[2]),)
        elif coord[0] == "B":
            word = ((1, coord[1], coord[2]),)
        else:
            word = ((0, coord[1], coord[2]), (1, coord[3], coord[4]))
        key = word_class_key((), word)
        ci = key_index[key]
        cg_class.append(ci)
        cg_cells.append(classes[ci][0])
    return NpaTemplate(scenario=tuple(scenario), level=level, words=words,
                       classes=classes, class_keys=keys, cell_class=cell_class,
                       zero_cells=zero_cells, layout=layout,
                       cg_class=cg_class, cg_cells=cg_cells,
                       normalization=normalization)


def _cell_functional(size: int, cell) -> np.ndarray:
    """Symmetric C with tr(C Gamma) = Gamma[cell]."""
    i, j = cell
    c = np.zeros((size, size))
    c[i, j] += 0.5
    c[j, i] += 0.5
    return c


def _class_indicator(tmpl: NpaTemplate, ci: int) -> np.ndarray:
    e = np.zeros((tmpl.size, tmpl.size))
    for (i, j) in tmpl.classes[ci]:
        e[i, j] = 1.0
        e[j, i] = 1.0
    return e


@dataclass
class MomentMatrix:
    """A completed moment matrix with exact class sharing."""

    template: NpaTemplate
    gamma: np.ndarray
    normalization: float

    def behaviour_reads(self) -> np.ndarray:
        """CG vector read off the matrix cells."""
        return np.array([self.gamma[c] for c in self.template.cg_cells])

    def class_values(self) -> np.ndarray:
        return np.array([self.gamma[cells[0]] for cells in self.template.classes])


@dataclass
class BellFunctional:
    """Separating functional from an infeasible membership query.

    ``coefficients`` act on the full table; every behaviour inside the
    level satisfies  value >= 0  and the queried one sits at -violation.
    """

    coefficients: np.ndarray
    level: int
    violation: float

    def evaluate(self, table: np.ndarray) -> float:
        return float(np.sum(self.coefficients * table))


@dataclass
class NpaDecision:
    feasible: bool
    margin: float
    moment_matrix: MomentMatrix | None = None
    functional: BellFunctional | None = None


def npa_membership(behaviour, level: int = 2, tol: float = 1e-9) -> NpaDecision:
    """Margin test of membership in the level-``level`` relaxation.

    Solved in dualized form: minimize <F0(P), X> over X >= 0, tr X = 1,
    <E_free, X> = 0.  The optimum is the largest w with Gamma(z) - w*I
    PSD for some completion z, so its sign decides membership and the
    optimal X yields the separating functional.
    """
    behaviour.require_no_signalling()
    tmpl = build_npa_block(
        (behaviour.mA, behaviour.nA, behaviour.mB, behaviour.nB), level)
    cgvec = tmpl.layout.of_table(behaviour.table)
    return _membership_from_cg(tmpl, cgvec, tol)


def _membership_from_cg(tmpl: NpaTemplate, cgvec, tol) -> NpaDecision:
    pinned = {}
    for k, ci in enumerate(tmpl.cg_class):
        pinned[ci] = cgvec[k]
    f0 = np.zeros((tmpl.size, tmpl.size))
    for ci, val in pinned.items():
        f0 += val * _class_indicator(tmpl, ci)

    prog = ConicProgram(f"npa_membership:l{tmpl.level}")
    prog.add_psd_family("X", 1, tmpl.size)
    for ci in range(len(tmpl.classes)):
        if ci in pinned:
            continue
        prog.add_scalar_row(("freeclass", ci), 0.0,
                            [("mat", "X", 0, _class_indicator(tmpl, ci))])
    prog.add_scalar_row(("trace",), 1.0, [("tr", "X", [0], 1.0)])
    prog.set_objective([("mat", "X", 0, f0)])
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"membership solve returned {sol.status}",
                            program=prog)
    margin = sol.value
    if margin >= -tol:
        gamma = sol.dual_slack["X"][0].real.copy()
        gamma += sol.dual_rows[("trace",)] * np.eye(tmpl.size)
        mm = MomentMatrix(template=tmpl, gamma=gamma,
                          normalization=float(gamma[0, 0]))
        return NpaDecision(True, margin, moment_matrix=mm)
    x = sol.primal["X"][0]
    coeffs_cg = np.zeros(tmpl.layout.dim)
    for k, ci in enumerate(tmpl.cg_class):
        coeffs_cg[k] = np.sum(_class_indicator(tmpl, ci) * x)
    func = BellFunctional(
        coefficients=tmpl.layout.functional_to_table(coeffs_cg),
        level=tmpl.level, violation=-margin)
    return NpaDecision(False, margin, functional=func)


def npa_optimize(coefficients, scenario, level: int = 2):
    """Upper bound on the quantum value of a full-table Bell functional.

    Returns (value, MomentMatrix); the matrix is the relaxation's
    optimizer, recovered exactly from the dual slack.
    """
    tmpl = build_npa_block(scenario, level)
    coeffs = np.asarray(coefficients, dtype=float)
    mA, nA, mB, nB = scenario
    if coeffs.shape != (mA, mB, nA, nB):
        raise ValueError(f"coefficients must be shaped {(mA, mB, nA, nB)}")
    # express the functional on CG coordinates: g' cg(table) = sum B*table
    T = tmpl.layout.table_matrix()
    g = T.T @ coeffs.ravel()

    idc = tmpl.identity_class()
    prog = ConicProgram(f"npa_optimize:l{level}")
    prog.add_psd_family("X", 1, tmpl.size)
    prog.add_free("w", 1)
    gclass = np.zeros(len(tmpl.classes))
    for k, ci in enumerate(tmpl.cg_class):
        gclass[ci] += g[k]
    for ci in range(len(tmpl.classes)):
        terms = [("mat", "X", 0, _class_indicator(tmpl, ci))]
        if ci == idc:
            terms.append(("lin", "w", [0], [-1.0]))
        prog.add_scalar_row(("class", ci), -gclass[ci], terms)
    prog.set_objective([("lin", "w", [0], [1.0])])
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"npa_optimize returned {sol.status}", program=prog)
    gamma = np.zeros((tmpl.size, tmpl.size))
    for ci in range(len(tmpl.classes)):
        z = -sol.dual_rows[("class", ci)] if ci != idc else 1.0
        gamma += z * _class_indicator(tmpl, ci)
    mm = MomentMatrix(template=tmpl, gamma=gamma, normalization=1.0)
    return float(sol.value), mm
