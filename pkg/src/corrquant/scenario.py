"""Quantum objects of the steering/nonlocality pipeline.

Measurement sets, bipartite states, assemblages, behaviours, deterministic
strategies and hidden-variable models, plus the maps between them
(steer, measure) and the named constructors used by the experiments
(Werner states, partially entangled pure states, Pauli / Bloch / lossy /
dodecahedron measurement sets).

Index conventions: measurement grids are ``(m, n, d, d)`` arrays indexed
``[x, a]``; assemblages ``(m, n, dB, dB)`` indexed ``[x, a]``; behaviour
tables ``(mA, mB, nA, nB)`` indexed ``[x, y, a, b]``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import (
    DimensionMismatch,
    InconsistentAssemblage,
    NotPositiveSemidefinite,
    SignallingError,
    StrategyCapExceeded,
)
from .operators import (
    PAULIS,
    asmatrix,
    basis_transpose,
    bloch_projectors,
    hermitize,
    matrix_sqrt,
    partial_trace,
    tensor,
)

STRATEGY_CAP = 10 ** 6
PSD_TOL = 1e-9
SUM_TOL = 1e-9


def _check_psd_grid(grid, tol=PSD_TOL, what="effect"):
    for idx in np.ndindex(grid.shape[:-2]):
        ev = np.linalg.eigvalsh(grid[idx])[0]
        if ev < -tol:
            raise NotPositiveSemidefinite(
                f"{what}{list(idx)} has eigenvalue {ev:.3e}")


class MeasurementSet:
    """m measurements with n outcomes each, acting on dimension d.

    Unequal outcome counts are padded with zero effects so the grid stays
    rectangular; padded outcomes simply never occur.
    """

    def __init__(self, effects):
        eff = np.asarray(effects, dtype=complex)
        if eff.ndim != 4 or eff.shape[2] != eff.shape[3]:
            raise DimensionMismatch(
                f"effects must be (m, n, d, d), got {eff.shape}")
        eff = (eff + eff.conj().swapaxes(2, 3)) / 2
        self.m, self.n, self.d = eff.shape[0], eff.shape[1], eff.shape[2]
        _check_psd_grid(eff)
        eye = np.eye(self.d)
        for x in range(self.m):
            dev = np.max(np.abs(eff[x].sum(axis=0) - eye))
            if dev > SUM_TOL:
                raise DimensionMismatch(
                    f"effects of input {x} sum to identity only within {dev:.2e}")
        eff.setflags(write=False)
        self.effects = eff

    def __repr__(self):
        return f"MeasurementSet(m={self.m}, n={self.n}, d={self.d})"

    def conjugated(self, u) -> "MeasurementSet":
        """Same set with every effect conjugated by the unitary ``u``."""
        u = np.asarray(u, dtype=complex)
        return MeasurementSet(np.einsum("ij,xajk,lk->xail",
                                        u, self.effects, u.conj()))

    def dropped(self, x: int) -> "MeasurementSet":
        """Set with measurement ``x`` removed."""
        keep = [i for i in range(self.m) if i != x]
        return MeasurementSet(self.effects[keep])


class BipartiteState:
    """Density matrix on dA x dB with PSD and unit-trace validation."""

    def __init__(self, rho, dims):
        self.dA, self.dB = dims
        rho = hermitize(asmatrix(rho))
        if rho.shape != (self.dA * self.dB,) * 2:
            raise DimensionMismatch(
                f"state dim {rho.shape[0]} != dA*dB = {self.dA * self.dB}")
        ev = np.linalg.eigvalsh(rho)[0]
        if ev < -PSD_TOL:
            raise NotPositiveSemidefinite(f"state eigenvalue {ev:.3e}")
        tr = np.trace(rho).real
        if abs(tr - 1) > PSD_TOL:
            raise ValueError(f"state trace {tr!r} is not 1")
        rho.setflags(write=False)
        self.rho = rho

    def __repr__(self):
        return f"BipartiteState(dA={self.dA}, dB={self.dB})"


class Assemblage:
    """Subnormalized conditional states sigma_{a|x} on Bob's side."""

    def __init__(self, members):
        mem = np.asarray(members, dtype=complex)
        if mem.ndim != 4 or mem.shape[2] != mem.shape[3]:
            raise DimensionMismatch(
                f"members must be (m, n, dB, dB), got {mem.shape}")
        mem = (mem + mem.conj().swapaxes(2, 3)) / 2
        self.m, self.n, self.dB = mem.shape[0], mem.shape[1], mem.shape[2]
        _check_psd_grid(mem, what="member")
        sums = mem.sum(axis=1)
        dev = np.max(np.abs(sums - sums[0]))
        if dev > SUM_TOL:
            raise InconsistentAssemblage(
                f"reduced state differs across inputs by {dev:.2e}")
        tr = np.trace(sums[0]).real
        if abs(tr - 1) > SUM_TOL:
            raise InconsistentAssemblage(f"total trace {tr!r} is not 1")
        mem.setflags(write=False)
        self.members = mem

    def __repr__(self):
        return f"Assemblage(m={self.m}, n={self.n}, dB={self.dB})"

    def conjugated(self, u) -> "Assemblage":
        u = np.asarray(u, dtype=complex)
        return Assemblage(np.einsum("ij,xajk,lk->xail",
                                    u, self.members, u.conj()))

    def relabeled(self, input_perm=None, outcome_perm=None) -> "Assemblage":
        mem = self.members
        if input_perm is not None:
            mem = mem[list(input_perm)]
        if outcome_perm is not None:
            mem = mem[:, list(outcome_perm)]
        return Assemblage(mem)


class Behaviour:
    """Joint conditional probability table P(ab|xy).

    Internally constructed behaviours are no-signalling to rounding;
    ingested experimental tables may violate it and carry
    ``signalling=True`` together with the observed deviation.
    """

    def __init__(self, table, signalling_tol: float = 1e-9):
        tab = np.asarray(table, dtype=float)
        if tab.ndim != 4:
            raise DimensionMismatch(f"table must be (mA, mB, nA, nB), got {tab.shape}")
        self.mA, self.mB, self.nA, self.nB = tab.shape
        if np.min(tab) < -1e-12:
            raise ValueError(f"negative probability {np.min(tab):.3e}")
        norms = tab.sum(axis=(2, 3))
        if np.max(np.abs(norms - 1)) > 1e-9:
            raise ValueError(
                f"slice normalization off by {np.max(np.abs(norms - 1)):.2e}")
        # no-signalling deviation, both directions
        pa = tab.sum(axis=3)                      # (mA, mB, nA)
        pb = tab.sum(axis=2)                      # (mA, mB, nB)
        dev = max(np.max(np.abs(pa - pa[:, :1])),
                  np.max(np.abs(pb - pb[:1, :])))
        self.signalling_deviation = float(dev)
        self.signalling = bool(dev > signalling_tol)
        tab.setflags(write=False)
        self.table = tab

    def __repr__(self):
        flag = ", signalling" if self.signalling else ""
        return (f"Behaviour(mA={self.mA}, nA={self.nA}, "
                f"mB={self.mB}, nB={self.nB}{flag})")

    def require_no_signalling(self, tol: float = 1e-9):
        if self.signalling_deviation > tol:
            raise SignallingError(
                f"signalling deviation {self.signalling_deviation:.2e} > {tol:.1e}")


def behaviour_marginal(b: Behaviour, party: str, average: bool = False) -> np.ndarray:
    """Marginal table P(a|x) (party="A") or P(b|y) (party="B").

    Signalling behaviours need ``average=True``, which averages over the
    traced party's inputs instead of failing.
    """
    if not average:
        b.require_no_signalling()
    if party in ("A", "a"):
        pa = b.table.sum(axis=3)        # (mA, mB, nA)
        return pa.mean(axis=1) if average else pa[:, 0]
    if party in ("B", "b"):
        pb = b.table.sum(axis=2)        # (mA, mB, nB)
        return pb.mean(axis=0) if average else pb[0]
    raise ValueError(f"party must be 'A' or 'B', got {party!r}")


class DeterministicStrategy:
    """Outcome assignment per input, with its lexicographic index."""

    __slots__ = ("assignment", "index")

    def __init__(self, assignment, index):
        self.assignment = tuple(int(a) for a in assignment)
        self.index = int(index)

    def __repr__(self):
        return f"DeterministicStrategy({self.assignment}, index={self.index})"

    def __eq__(self, other):
        return (isinstance(other, DeterministicStrategy)
                and self.assignment == other.assignment)

    def __hash__(self):
        return hash(self.assignment)


def strategy_count(m: int, n: int) -> int:
    return n ** m


def check_strategy_cap(m: int, n: int, cap: int = STRATEGY_CAP) -> int:
    total = strategy_count(m, n)
    if total > cap:
        raise StrategyCapExceeded(
            f"n^m = {total} deterministic strategies exceed the cap {cap}")
    return total


def enumerate_strategies(m: int, n: int, cap: int = STRATEGY_CAP):
    """All n^m deterministic strategies, lexicographic in the assignment."""
    check_strategy_cap(m, n, cap)
    return [DeterministicStrategy(assignment, idx)
            for idx, assignment in enumerate(itertools.product(range(n), repeat=m))]


def strategy_assignments(m: int, n: int, cap: int = STRATEGY_CAP) -> np.ndarray:
    """(n^m, m) integer array of assignments, same order as enumerate_strategies."""
    total = check_strategy_cap(m, n, cap)
    idx = np.arange(total)
    cols = []
    for x in range(m):
        cols.append((idx // n ** (m - 1 - x)) % n)
    return np.stack(cols, axis=1)


def strategy_masks(m: int, n: int, cap: int = STRATEGY_CAP):
    """masks[x][a] = indices of strategies assigning outcome a to input x."""
    assign = strategy_assignments(m, n, cap)
    return [[np.nonzero(assign[:, x] == a)[0] for a in range(n)]
            for x in range(m)]


class LocalModel:
    """Weights q(mu, nu) over deterministic strategy pairs."""

    def __init__(self, weights, scenario):
        self.mA, self.nA, self.mB, self.nB = scenario
        w = np.asarray(weights, dtype=float)
        la = strategy_count(self.mA, self.nA)
        lb = strategy_count(self.mB, self.nB)
        if w.shape != (la, lb):
            raise DimensionMismatch(f"weights must be ({la}, {lb}), got {w.shape}")
        if np.min(w) < -1e-9:
            raise ValueError(f"negative weight {np.min(w):.3e}")
        if abs(w.sum() - 1) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        self.weights = w

    def behaviour(self) -> Behaviour:
        da = strategy_assignments(self.mA, self.nA)
        db = strategy_assignments(self.mB, self.nB)
        tab = np.zeros((self.mA, self.mB, self.nA, self.nB))
        for x in range(self.mA):
            for y in range(self.mB):
                np.add.at(tab[x, y], (da[:, x][:, None], db[:, y][None, :]),
                          self.weights)
        return Behaviour(tab)


class LhsModel:
    """Subnormalized hidden states sigma_lambda, one per strategy."""

    def __init__(self, states, scenario):
        self.m, self.n = scenario
        st = np.asarray(states, dtype=complex)
        total = strategy_count(self.m, self.n)
        if st.ndim != 3 or st.shape[0] != total:
            raise DimensionMismatch(
                f"states must be ({total}, d, d), got {st.shape}")
        _check_psd_grid(st, what="state")
        tr = np.einsum("lii->", st).real
        if abs(tr - 1) > 1e-9:
            raise ValueError(f"model trace {tr!r} is not 1")
        self.states = st

    def assemblage(self) -> Assemblage:
        masks = strategy_masks(self.m, self.n)
        d = self.states.shape[1]
        mem = np.zeros((self.m, self.n, d, d), dtype=complex)
        for x in range(self.m):
            for a in range(self.n):
                mem[x, a] = self.states[masks[x][a]].sum(axis=0)
        return Assemblage(mem)


class ParentPovm:
    """Effects G_vec indexed by outcome vectors in strategy order."""

    def __init__(self, effects, scenario):
        self.m, self.n = scenario
        eff = np.asarray(effects, dtype=complex)
        total = strategy_count(self.m, self.n)
        if eff.ndim != 3 or eff.shape[0] != total:
            raise DimensionMismatch(
                f"effects must be ({total}, d, d), got {eff.shape}")
        self.d = eff.shape[1]
        _check_psd_grid(eff)
        dev = np.max(np.abs(eff.sum(axis=0) - np.eye(self.d)))
        if dev > SUM_TOL:
            raise ValueError(f"parent effects sum to identity within {dev:.2e} only")
        self.effects = eff

    def coarse_grain(self) -> MeasurementSet:
        """Marginal measurements sum_{vec: vec_x = a} G_vec."""
        masks = strategy_masks(self.m, self.n)
        grid = np.zeros((self.m, self.n, self.d, self.d), dtype=complex)
        for x in range(self.m):
            for a in range(self.n):
                grid[x, a] = self.effects[masks[x][a]].sum(axis=0)
        return MeasurementSet(grid)


# ---------------------------------------------------------------------------
# the two maps of the pipeline
# ---------------------------------------------------------------------------

def steer(state: BipartiteState, measurements: MeasurementSet) -> Assemblage:
    """sigma_{a|x} = tr_A[(M_{a|x} (x) 1) rho]."""
    if measurements.d != state.dA:
        raise DimensionMismatch(
            f"measurement dim {measurements.d} != Alice dim {state.dA}")
    eyeB = np.eye(state.dB)
    mem = np.empty((measurements.m, measurements.n, state.dB, state.dB),
                   dtype=complex)
    for x in range(measurements.m):
        for a in range(measurements.n):
            big = tensor(measurements.effects[x, a], eyeB) @ state.rho
            mem[x, a] = partial_trace(big, (state.dA, state.dB), "B")
    return Assemblage(mem)


def measure(assemblage: Assemblage, bob: MeasurementSet) -> Behaviour:
    """P(ab|xy) = tr[M'_{b|y} sigma_{a|x}]."""
    if bob.d != assemblage.dB:
        raise DimensionMismatch(
            f"Bob dim {bob.d} != assemblage dim {assemblage.dB}")
    tab = np.einsum("ybij,xaji->xyab", bob.effects, assemblage.members).real
    return Behaviour(np.clip(tab, 0.0, None))


def reduced_state(assemblage: Assemblage) -> np.ndarray:
    """rho_B = sum_a sigma_{a|x}; asserts x-independence within 1e-9."""
    sums = assemblage.members.sum(axis=1)
    dev = np.max(np.abs(sums - sums[0]))
    if dev > SUM_TOL:
        raise InconsistentAssemblage(
            f"reduced state differs across inputs by {dev:.2e}")
    return sums[0]


def pure_state_assemblage(state: BipartiteState,
                          measurements: MeasurementSet) -> Assemblage:
    """Closed form rho_B^1/2 M^T rho_B^1/2 for pure states.

    The transpose is taken in the eigenbasis of rho_B.
    """
    rho_b = partial_trace(state.rho, (state.dA, state.dB), "B")
    _, basis = np.linalg.eigh(rho_b)
    root = matrix_sqrt(rho_b)
    mem = np.array([[root @ basis_transpose(eff, basis) @ root
                     for eff in row] for row in measurements.effects])
    return Assemblage(mem)


# ---------------------------------------------------------------------------
# named constructors
# ---------------------------------------------------------------------------

def max_entangled(d: int = 2) -> BipartiteState:
    """|phi+> = sum_i |ii>/sqrt(d)."""
    vec = np.zeros(d * d, dtype=complex)
    vec[:: d + 1] = 1 / np.sqrt(d)
    return BipartiteState(np.outer(vec, vec.conj()), (d, d))


def singlet() -> BipartiteState:
    """(|01> - |10>)/sqrt(2)."""
    vec = np.zeros(4, dtype=complex)
    vec[1], vec[2] = 1 / np.sqrt(2), -1 / np.sqrt(2)
    return BipartiteState(np.outer(vec, vec.conj()), (2, 2))


def werner(v: float, psi: str = "phi+") -> BipartiteState:
    """v |psi><psi| + (1-v) 1/4 with |psi> maximally entangled.

    ``psi`` picks the entangled component: "phi+" (default) or "singlet".
    """
    if not 0 <= v <= 1:
        raise ValueError(f"visibility {v!r} outside [0, 1]")
    base = max_entangled(2) if psi == "phi+" else singlet()
    rho = v * base.rho + (1 - v) * np.eye(4) / 4
    return BipartiteState(rho, (2, 2))


def pure_theta(theta: float) -> BipartiteState:
    """cos(theta)|00> + sin(theta)|11>, full Schmidt rank for 0 < theta <= pi/4."""
    if not 0 < theta <= np.pi / 4:
        raise ValueError(f"theta {theta!r} outside (0, pi/4]")
    vec = np.zeros(4, dtype=complex)
    vec[0], vec[3] = np.cos(theta), np.sin(theta)
    return BipartiteState(np.outer(vec, vec.conj()), (2, 2))


def paulis(which: str = "XYZ") -> MeasurementSet:
    """Sharp qubit measurements of the named Pauli operators."""
    grid = []
    for ch in which:
        sigma = PAULIS[ch.upper()]
        vals, vecs = np.linalg.eigh(sigma)
        # outcome 0 = +1 eigenvalue, outcome 1 = -1
        order = np.argsort(-vals)
        grid.append([np.outer(vecs[:, i], vecs[:, i].conj()) for i in order])
    return MeasurementSet(np.asarray(grid))


def bloch_measurements(vectors) -> MeasurementSet:
    """Projective qubit measurements along unit Bloch vectors."""
    grid = [bloch_projectors(v) for v in np.asarray(vectors, dtype=float)]
    return MeasurementSet(np.asarray(grid))


def lossy(base: MeasurementSet, etas) -> MeasurementSet:
    """Lossy POVMs: effects (eta_x P_0, eta_x P_1, (1-eta_x) I).

    ``base`` must be dichotomic; the third outcome collects no-click events.
    """
    etas = np.broadcast_to(np.asarray(etas, dtype=float), (base.m,))
    if np.any((etas < 0) | (etas > 1)):
        raise ValueError(f"efficiencies {etas} outside [0, 1]")
    if base.n != 2:
        raise DimensionMismatch("lossy() expects a dichotomic base set")
    eye = np.eye(base.d)
    grid = np.zeros((base.m, 3, base.d, base.d), dtype=complex)
    for x in range(base.m):
        grid[x, 0] = etas[x] * base.effects[x, 0]
        grid[x, 1] = etas[x] * base.effects[x, 1]
        grid[x, 2] = (1 - etas[x]) * eye
    return MeasurementSet(grid)


def dodecahedron_vectors() -> np.ndarray:
    """Ten unit Bloch vectors: antipodal-pair representatives of the 20
    vertices (+-1,+-1,+-1), (0,+-1/phi,+-phi) and cyclic permutations,
    picked with positive first nonzero coordinate."""
    phi = (1 + np.sqrt(5)) / 2
    verts = []
    for signs in itertools.product([1, -1], repeat=3):
        verts.append([signs[0], signs[1], signs[2]])
    for s1, s2 in itertools.product([1, -1], repeat=2):
        verts.append([0, s1 / phi, s2 * phi])
        verts.append([s1 / phi, s2 * phi, 0])
        verts.append([s1 * phi, 0, s2 / phi])
    verts = np.asarray(verts, dtype=float)
    reps = []
    for v in verts:
        first = v[np.nonzero(v)[0][0]]
        if first > 0:
            reps.append(v / np.linalg.norm(v))
    reps = np.asarray(reps)
    assert reps.shape == (10, 3)
    return reps


def dodecahedron() -> MeasurementSet:
    """Ten projective qubit measurements along dodecahedron vertex pairs."""
    return bloch_measurements(dodecahedron_vectors())


def make_state(spec: dict) -> BipartiteState:
    """Dispatch on {"family": "werner"|"pure_theta"|"max_entangled"|"singlet", ...}."""
    family = spec["family"]
    if family == "werner":
        return werner(spec["v"], psi=spec.get("psi", "phi+"))
    if family == "pure_theta":
        return pure_theta(spec["theta"])
    if family == "max_entangled":
        return max_entangled(spec.get("d", 2))
    if family == "singlet":
        return singlet()
    raise ValueError(f"unknown state family {family!r}")


def make_measurements(spec: dict) -> MeasurementSet:
    """Dispatch on {"family": "paulis"|"bloch"|"lossy"|"dodecahedron", ...}."""
    family = spec["family"]
    if family == "paulis":
        return paulis(spec.get("which", "XYZ"))
    if family == "bloch":
        return bloch_measurements(spec["vectors"])
    if family == "lossy":
        return lossy(make_measurements(spec["base"]), spec["etas"])
    if family == "dodecahedron":
        return dodecahedron()
    raise ValueError(f"unknown measurement family {family!r}")
