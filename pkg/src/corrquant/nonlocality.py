"""Local-polytope membership, the seven nonlocality quantifiers,
no-signalling projection of experimental data, and Bell-inequality
extraction.

All linear programs run on Collins-Gisin coordinates (full tables are
rank deficient under no-signalling).  Kinds whose noise ranges over the
quantum set embed a scaled moment block Qtilde = r*Q with
Gamma[0,0] = r, which keeps the bilinear product linear and makes the
reported value a certified lower bound at the chosen relaxation level;
kinds with polyhedral noise (uniform-marginal, local, consistent-local)
are LP-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cg import CgLayout, strategy_cg_matrix
from .conic import ConicProgram, ConicSolution
from .errors import SolverFailure
from .npa import NpaTemplate, build_npa_block
from .scenario import (
    Behaviour,
    LocalModel,
    behaviour_marginal,
    check_strategy_cap,
)

FEASTOL = 1e-8
GAPTOL = 1e-9


class NonlocalityKind(str, Enum):
    NLR = "NLR"                  # arbitrary quantum noise (SDP-relaxed)
    NLR_mar = "NLR_mar"          # uniform-Alice marginal noise (LP)
    NLR_lhv = "NLR_lhv"          # local noise (LP)
    NLW = "NLW"                  # nonlocal weight / EPR2 (SDP-relaxed)
    NLR_c = "NLR_c"              # consistent quantum noise (SDP-relaxed)
    NLR_c_lhv = "NLR_c_lhv"      # consistent local noise (LP)
    NLW_c = "NLW_c"              # consistent weight (SDP-relaxed)

    @property
    def lp_exact(self) -> bool:
        return self in (NonlocalityKind.NLR_mar, NonlocalityKind.NLR_lhv,
                        NonlocalityKind.NLR_c_lhv)

    @property
    def weight_like(self) -> bool:
        return self in (NonlocalityKind.NLW, NonlocalityKind.NLW_c)

    @property
    def consistent(self) -> bool:
        return self in (NonlocalityKind.NLR_c, NonlocalityKind.NLR_c_lhv,
                        NonlocalityKind.NLW_c)


def parse_nonlocality_kind(text: str) -> NonlocalityKind:
    key = text.strip().replace("^", "_").replace("/", "_").replace("-", "_")
    for kind in NonlocalityKind:
        if key.lower() == kind.value.lower():
            return kind
    flat = key.lower().replace("_", "")
    aliases = {"nlrc": NonlocalityKind.NLR_c, "nlrmar": NonlocalityKind.NLR_mar,
               "nlrlhv": NonlocalityKind.NLR_lhv, "nlwc": NonlocalityKind.NLW_c,
               "nlrclhv": NonlocalityKind.NLR_c_lhv}
    if flat in aliases:
        return aliases[flat]
    raise ValueError(f"unknown nonlocality kind {text!r}")


@dataclass
class BellInequality:
    """Bell functional with its enumerated classical bound.

    Every local behaviour R satisfies sum coeffs*R <= bound; the
    certified behaviour violates it by ``violation``, which equals the
    quantifier value for LP-exact kinds.  For SDP-relaxed kinds the
    certificate is valid at the stated relaxation level only and
    ``level`` records it (None for LP-exact).
    """

    coefficients: np.ndarray     # (mA, mB, nA, nB)
    bound: float
    violation: float
    level: int | None = None

    def evaluate(self, table: np.ndarray) -> float:
        return float(np.sum(self.coefficients * table))


@dataclass
class LocalDecision:
    local: bool
    margin: float
    model: LocalModel | None = None
    inequality: BellInequality | None = None


@dataclass
class NonlocalityResult:
    kind: NonlocalityKind
    value: float
    certified_lower_bound: bool          # True for SDP-relaxed kinds
    level: int | None
    noise_table: np.ndarray | None       # witness noise behaviour table
    model: LocalModel                    # local model of mixture / remainder
    noise_model: LocalModel | None       # for local-noise kinds
    inequality: BellInequality
    gap: float
    solution: ConicSolution


def _scenario(b: Behaviour):
    return (b.mA, b.nA, b.mB, b.nB)


def _pair_weights_to_model(q: np.ndarray, scenario) -> LocalModel:
    mA, nA, mB, nB = scenario
    la = nA ** mA
    lb = nB ** mB
    w = np.clip(q, 0.0, None).reshape(la, lb)
    w = w / w.sum()
    return LocalModel(w, scenario)


def _inequality_from_duals(sol: ConicSolution, layout: CgLayout,
                           S: np.ndarray, table: np.ndarray,
                           level=None) -> BellInequality:
    y = np.array([sol.dual_rows[("cg", k)] for k in range(layout.dim)])
    coeffs = layout.functional_to_table(y)
    bound = float(np.max(S @ y))
    value = float(np.sum(coeffs * table))
    return BellInequality(coefficients=coeffs, bound=bound,
                          violation=value - bound, level=level)


def is_local(b: Behaviour, tol: float = 5e-8, cap: int = 10 ** 6) -> LocalDecision:
    """Max-margin LP membership in the local polytope.

    Maximizes w with weights q = u + w/N, u >= 0; w* >= 0 means local and
    the duals of the CG rows give a Bell inequality otherwise.
    """
    b.require_no_signalling()
    mA, nA, mB, nB = _scenario(b)
    check_strategy_cap(mA, nA, cap)
    check_strategy_cap(mB, nB, cap)
    layout = CgLayout(mA, nA, mB, nB)
    S = strategy_cg_matrix(layout)
    npairs = S.shape[0]
    if npairs > cap:
        raise SolverFailure(f"strategy-pair count {npairs} exceeds cap {cap}")
    cg = layout.of_table(b.table)

    prog = ConicProgram("is_local")
    prog.add_nonneg("u", npairs)
    prog.add_free("w", 1)
    mean_s = S.mean(axis=0)
    for k in range(layout.dim):
        prog.add_scalar_row(("cg", k), cg[k],
                            [("lin", "u", np.arange(npairs), S[:, k]),
                             ("lin", "w", [0], [mean_s[k]])])
    prog.set_objective([("lin", "w", [0], [-1.0])])
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"is_local returned {sol.status}", program=prog)
    margin = -sol.value
    if margin >= -tol:
        q = sol.primal["u"] + margin / npairs
        model = _pair_weights_to_model(q, _scenario(b))
        return LocalDecision(True, margin, model=model)
    ineq = _inequality_from_duals(sol, layout, S, b.table)
    return LocalDecision(False, margin, inequality=ineq)


def _build_lp_program(b: Behaviour, kind: NonlocalityKind, layout, S):
    npairs = S.shape[0]
    cg = layout.of_table(b.table)
    prog = ConicProgram(f"nonlocality:{kind.value}")
    idx = np.arange(npairs)
    if kind is NonlocalityKind.NLR_mar:
        pb = behaviour_marginal(b, "B")
        noise = np.broadcast_to(pb[None, :, None, :] / b.nA,
                                (b.mA, b.mB, b.nA, b.nB))
        ncg = layout.of_table(np.asarray(noise))
        prog.add_nonneg("q", npairs)
        prog.add_nonneg("r", 1)
        for k in range(layout.dim):
            prog.add_scalar_row(("cg", k), cg[k],
                                [("lin", "q", idx, S[:, k]),
                                 ("lin", "r", [0], [-ncg[k]])])
        prog.set_objective([("lin", "r", [0], [1.0])])
    elif kind is NonlocalityKind.NLR_lhv:
        prog.add_nonneg("q", npairs)
        prog.add_nonneg("p", npairs)
        for k in range(layout.dim):
            prog.add_scalar_row(("cg", k), cg[k],
                                [("lin", "q", idx, S[:, k]),
                                 ("lin", "p", idx, -S[:, k])])
        prog.set_objective([("lin", "p", idx, np.ones(npairs))])
    elif kind is NonlocalityKind.NLR_c_lhv:
        pb = behaviour_marginal(b, "B")
        prog.add_nonneg("q", npairs)
        prog.add_nonneg("p", npairs)
        for k in range(layout.dim):
            prog.add_scalar_row(("cg", k), cg[k],
                                [("lin", "q", idx, S[:, k]),
                                 ("lin", "p", idx, -S[:, k])])
        for y in range(b.mB):
            for bb in range(b.nB - 1):
                k = layout.index[("B", y, bb)]
                prog.add_scalar_row(
                    ("consis", y, bb), 0.0,
                    [("lin", "p", idx, S[:, k] - pb[y, bb])])
        prog.set_objective([("lin", "p", idx, np.ones(npairs))])
    else:
        raise ValueError(kind)
    return prog


def _build_sdp_program(b: Behaviour, kind: NonlocalityKind, layout, S,
                       tmpl: NpaTemplate):
    npairs = S.shape[0]
    cg = layout.of_table(b.table)
    pb = behaviour_marginal(b, "B")
    prog = ConicProgram(f"nonlocality:{kind.value}:l{tmpl.level}")
    tmpl.declare_block(prog, "G")
    prog.add_nonneg("q", npairs)
    prog.add_nonneg("r", 1)
    idx = np.arange(npairs)
    # mixture rows: weight kinds decompose P = Qtilde + Rtilde, robustness
    # kinds mix P + Qtilde = (1+r)-scaled local part
    sign = 1.0 if kind.weight_like else -1.0
    for k in range(layout.dim):
        cell = tmpl.cg_cells[k]
        cmat = np.zeros((tmpl.size, tmpl.size))
        cmat[cell[0], cell[1]] += sign / 2
        cmat[cell[1], cell[0]] += sign / 2
        prog.add_scalar_row(("cg", k), cg[k],
                            [("lin", "q", idx, S[:, k]),
                             ("mat", "G", 0, cmat)])
    tmpl.add_structure_rows(prog, "G", ("r", 0))
    if kind.consistent:
        for y in range(b.mB):
            for bb in range(b.nB - 1):
                cell = tmpl.cg_cells[layout.index[("B", y, bb)]]
                cmat = np.zeros((tmpl.size, tmpl.size))
                cmat[cell[0], cell[1]] += 0.5
                cmat[cell[1], cell[0]] += 0.5
                prog.add_scalar_row(
                    ("consis", y, bb), 0.0,
                    [("mat", "G", 0, cmat),
                     ("lin", "r", [0], [-pb[y, bb]])])
    prog.set_objective([("lin", "r", [0], [1.0])])
    return prog


def nonlocality_quantifier(b: Behaviour, kind: NonlocalityKind | str,
                           level: int = 2, cap: int = 10 ** 6,
                           pin_party: str = "B") -> NonlocalityResult:
    """One of NLR, NLR^mar, NLR^lhv, NLW, NLR^c, NLR^c/lhv, NLW^c.

    ``level`` selects the moment-matrix relaxation for the SDP-relaxed
    kinds (quantum-noise sets); their values are certified lower bounds.
    ``pin_party`` picks whose marginal the consistency/marginal kinds
    pin: "B" (default, estimating Alice's incompatibility) or "A".
    """
    kind = parse_nonlocality_kind(kind) if isinstance(kind, str) else kind
    if pin_party not in ("A", "B"):
        raise ValueError(f"pin_party must be 'A' or 'B', got {pin_party!r}")
    if pin_party == "A":
        swapped = Behaviour(np.ascontiguousarray(b.table.transpose(1, 0, 3, 2)))
        res = nonlocality_quantifier(swapped, kind, level=level, cap=cap)
        res.inequality.coefficients = np.ascontiguousarray(
            res.inequality.coefficients.transpose(1, 0, 3, 2))
        if res.noise_table is not None:
            res.noise_table = np.ascontiguousarray(
                res.noise_table.transpose(1, 0, 3, 2))
        return res
    b.require_no_signalling()
    mA, nA, mB, nB = _scenario(b)
    check_strategy_cap(mA, nA, cap)
    check_strategy_cap(mB, nB, cap)
    layout = CgLayout(mA, nA, mB, nB)
    S = strategy_cg_matrix(layout)
    if S.shape[0] > cap:
        raise SolverFailure(f"strategy-pair count {S.shape[0]} exceeds cap {cap}")

    tmpl = None
    if kind.lp_exact:
        prog = _build_lp_program(b, kind, layout, S)
    else:
        tmpl = build_npa_block((mA, nA, mB, nB), level,
                               normalization="tied-to-scalar")
        prog = _build_sdp_program(b, kind, layout, S, tmpl)
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"{kind.value} returned {sol.status}", program=prog)

    if kind is NonlocalityKind.NLR_mar:
        r = float(sol.primal["r"][0])
        pb = behaviour_marginal(b, "B")
        noise = np.broadcast_to(pb[None, :, None, :] / nA,
                                (mA, mB, nA, nB)).copy()
        noise_model = None
        model = _pair_weights_to_model(sol.primal["q"], _scenario(b))
    elif kind in (NonlocalityKind.NLR_lhv, NonlocalityKind.NLR_c_lhv):
        r = float(np.sum(sol.primal["p"]))
        model = _pair_weights_to_model(sol.primal["q"], _scenario(b))
        if r > 1e-9:
            noise_model = _pair_weights_to_model(sol.primal["p"], _scenario(b))
            noise = noise_model.behaviour().table
        else:
            noise_model = None
            noise = None
    else:
        r = float(sol.primal["r"][0])
        model = _pair_weights_to_model(sol.primal["q"], _scenario(b))
        noise_model = None
        gamma = sol.primal["G"][0]
        if r > 1e-9:
            reads = np.array([gamma[c] for c in tmpl.cg_cells]) / r
            noise = layout.table_of(reads)
        else:
            noise = None
    ineq = _inequality_from_duals(sol, layout, S, b.table,
                                  level=None if kind.lp_exact else level)
    return NonlocalityResult(
        kind=kind, value=max(r, 0.0),
        certified_lower_bound=not kind.lp_exact,
        level=None if kind.lp_exact else level,
        noise_table=noise, model=model, noise_model=noise_model,
        inequality=ineq, gap=abs(sol.pobj - sol.dobj), solution=sol)


def bell_certificate(result: NonlocalityResult, b: Behaviour) -> BellInequality:
    """Inequality record re-verified against full strategy enumeration."""
    if result.solution.status != "optimal":
        raise ValueError("certificate requires an optimal solve")
    layout = CgLayout(*_scenario(b))
    S = strategy_cg_matrix(layout)
    coeffs = result.inequality.coefficients
    # evaluate the functional on every deterministic strategy pair
    fcg = layout.table_matrix().T @ coeffs.ravel()
    bound = float(np.max(S @ fcg))
    value = float(np.sum(coeffs * b.table))
    return BellInequality(coefficients=coeffs, bound=bound,
                          violation=value - bound, level=result.level)


# ---------------------------------------------------------------------------
# no-signalling projection
# ---------------------------------------------------------------------------

@dataclass
class NsProjection:
    behaviour: Behaviour
    divergence: float            # relative entropy D(raw || projected)
    kkt_residual: float          # stationarity of the true objective
    iterations: int
    boundary_flag: bool          # raw mass on events the projection floors


def ns_project(raw_table: np.ndarray, weights=None, barrier: float = 1e-12,
               maxiter: int = 200) -> NsProjection:
    """Closest no-signalling behaviour in relative entropy.

    Minimizes  sum_xy w_xy sum_ab raw log(raw / P(z))  over the
    no-signalling polytope, parameterized affinely in Collins-Gisin
    coordinates, by damped Newton with a log-barrier 1e-12 keeping the
    iterate in the relative interior.  Weights default to uniform
    1/(mA*mB) per setting pair.
    """
    raw = np.asarray(raw_table, dtype=float)
    if raw.ndim != 4:
        raise ValueError(f"table must be 4-d, got shape {raw.shape}")
    mA, mB, nA, nB = raw.shape
    if np.min(raw) < -1e-12:
        raise ValueError("raw table has negative entries")
    sums = raw.sum(axis=(2, 3))
    if np.max(np.abs(sums - 1)) > 1e-6:
        raise ValueError(
            f"raw slices sum to 1 within {np.max(np.abs(sums - 1)):.2e} only")
    if weights is None:
        weights = np.full((mA, mB), 1.0 / (mA * mB))
    w = np.broadcast_to(np.asarray(weights, dtype=float), (mA, mB))

    layout = CgLayout(mA, nA, mB, nB)
    T = layout.table_matrix()            # vec(table) = T @ cg
    cvec = (w[:, :, None, None] * raw).ravel()
    # start from the uniform behaviour (strictly interior)
    z = layout.of_table(np.full((mA, mB, nA, nB), 1.0 / (nA * nB)))
    Tred = T[:, 1:]
    t0 = T[:, 0]
    v = z[1:]

    def table_vec(vv):
        return t0 + Tred @ vv

    it = 0
    for it in range(1, maxiter + 1):
        p = table_vec(v)
        if np.min(p) <= 0:
            raise SolverFailure("ns_project iterate left the positive orthant")
        coef = cvec + barrier
        g = -Tred.T @ (coef / p)
        h = Tred.T @ ((coef / p ** 2)[:, None] * Tred)
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, -g, rcond=None)[0]
        decrement = float(-g @ step)
        alpha = 1.0
        # keep strictly positive, then backtrack on the objective
        dvec = Tred @ step
        neg = dvec < 0
        if np.any(neg):
            alpha = min(alpha, 0.95 * np.min(-p[neg] / dvec[neg]))
        f0 = -coef @ np.log(p)
        while alpha > 1e-16:
            pn = table_vec(v + alpha * step)
            if np.min(pn) > 0 and -coef @ np.log(pn) <= f0 + 1e-12:
                break
            alpha /= 2
        v = v + alpha * step
        if decrement < 1e-16:
            break

    p = table_vec(v)
    kkt = float(np.max(np.abs(Tred.T @ (cvec / p))))
    table = p.reshape(mA, mB, nA, nB)
    mask = raw > 0
    div = float(np.sum((w[:, :, None, None] * raw)[mask]
                       * np.log(raw[mask] / table[mask])))
    floored = bool(np.min(table) < 10 * barrier)
    norms = table.sum(axis=(2, 3))[:, :, None, None]
    beh = Behaviour(np.clip(table, 0.0, None) / norms)
    return NsProjection(behaviour=beh, divergence=div, kkt_residual=kkt,
                        iterations=it, boundary_flag=floored)


def behaviour_from_counts(counts) -> Behaviour:
    """Empirical behaviour from integer count tables counts[x][y][a][b]."""
    arr = np.asarray(counts, dtype=float)
    if arr.ndim != 4:
        raise ValueError(f"counts must be 4-d, got {arr.shape}")
    if np.any(arr < 0):
        raise ValueError("counts must be nonnegative")
    totals = arr.sum(axis=(2, 3), keepdims=True)
    if np.any(totals == 0):
        raise ValueError("every (x, y) slice needs at least one count")
    return Behaviour(arr / totals, signalling_tol=1e-9)
