"""LHS membership and the seven steering quantifiers.

Same scaled-variable linearization as the incompatibility module: model
states absorb the mixture denominator (sigtilde = (1+s)*sigma_lambda,
or (1-s)*sigma_lambda for the weight kinds) and scaled noise
pitilde = s*pi keeps everything linear.  Coarse-graining rows are pruned
exactly where the fixed reduced state makes them dependent (last outcome
of every input except the first); full-rank row sets are asserted in the
tests.

Dual multipliers of the model-matching rows are steering-inequality
coefficients F_{a|x}: every LHS assemblage gamma satisfies
sum tr[F gamma] <= bound with bound enumerated over deterministic
strategies, and the certified input violates the bound by exactly the
quantifier value.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .conic import ConicProgram, ConicSolution
from .errors import SolverFailure
from .scenario import (
    Assemblage,
    LhsModel,
    check_strategy_cap,
    reduced_state,
    strategy_assignments,
    strategy_masks,
)

FEASTOL = 1e-8
GAPTOL = 1e-9


class SteeringKind(str, Enum):
    SR = "SR"                # arbitrary noise robustness
    SR_red = "SR_red"        # reduced-state noise
    SR_lhs = "SR_lhs"        # LHS noise
    SW = "SW"                # steering weight
    SR_c = "SR_c"            # consistent robustness
    SR_c_lhs = "SR_c_lhs"    # consistent LHS robustness
    SW_c = "SW_c"            # consistent weight

    @property
    def consistent(self) -> bool:
        return self in (SteeringKind.SR_c, SteeringKind.SR_c_lhs, SteeringKind.SW_c)

    @property
    def weight_like(self) -> bool:
        return self in (SteeringKind.SW, SteeringKind.SW_c)


def parse_steering_kind(text: str) -> SteeringKind:
    key = text.strip().replace("^", "_").replace("/", "_").replace("-", "_")
    for kind in SteeringKind:
        if key.lower() == kind.value.lower():
            return kind
    aliases = {"src": SteeringKind.SR_c, "srred": SteeringKind.SR_red,
               "srlhs": SteeringKind.SR_lhs, "swc": SteeringKind.SW_c,
               "srclhs": SteeringKind.SR_c_lhs, "sr_clhs": SteeringKind.SR_c_lhs}
    flat = key.lower().replace("_", "")
    if flat in aliases:
        return aliases[flat]
    raise ValueError(f"unknown steering kind {text!r}")


@dataclass
class SteeringInequality:
    """Linear steering inequality from the dual of a quantifier solve.

    LHS assemblages obey  sum_{a,x} tr[F_{a|x} gamma_{a|x}] <= bound;
    the certified assemblage violates it by ``violation``, which equals
    the quantifier value (the documented monotone relation is the
    identity for all seven kinds).
    """

    coefficients: np.ndarray        # (m, n, dB, dB)
    bound: float
    violation: float

    def evaluate(self, assemblage: Assemblage) -> float:
        return float(np.einsum("xaij,xaji->", self.coefficients,
                               assemblage.members).real)

    def lhs_bound_by_enumeration(self) -> float:
        m, n = self.coefficients.shape[:2]
        assign = strategy_assignments(m, n)
        stacked = self.coefficients[np.arange(m)[None, :], assign]
        sums = stacked.sum(axis=1)
        return float(np.max(np.linalg.eigvalsh(sums)[:, -1]))

    def to_text(self) -> str:
        """Human-readable inequality: coefficients per (a|x) plus the bound."""
        m, n = self.coefficients.shape[:2]
        lines = [f"sum_ax tr[F(a|x) sigma(a|x)] <= {self.bound!r} "
                 "for every LHS assemblage"]
        for x in range(m):
            for a in range(n):
                f = self.coefficients[x, a]
                entries = "; ".join(
                    f"[{i},{j}]={f[i, j]:.6g}" for i in range(f.shape[0])
                    for j in range(f.shape[1]) if abs(f[i, j]) > 1e-12)
                lines.append(f"F({a}|{x}): {entries or '0'}")
        lines.append(f"certified violation: {self.violation!r}")
        return "\n".join(lines)


@dataclass
class LhsDecision:
    has_model: bool
    margin: float
    model: LhsModel | None = None
    inequality: SteeringInequality | None = None


@dataclass
class SteeringResult:
    kind: SteeringKind
    value: float
    noise: np.ndarray               # optimal noise assemblage (pi or gamma grid)
    model: LhsModel                 # LHS model of the mixture / remainder
    noise_model: LhsModel | None    # gamma_lambda for the lhs-noise kinds
    inequality: SteeringInequality
    gap: float
    solution: ConicSolution


def _pruned_rows(m: int, n: int):
    return [(x, a) for x in range(m) for a in range(n if x == 0 else n - 1)]


def _all_rows(m: int, n: int):
    return [(x, a) for x in range(m) for a in range(n)]


def _collect_f(sol: ConicSolution, m, n, d) -> np.ndarray:
    f = np.zeros((m, n, d, d), dtype=complex)
    for key, val in sol.dual_rows.items():
        if key[0] == "match":
            _, x, a = key
            f[x, a] = val
    return f


def _inequality(sol: ConicSolution, asm: Assemblage) -> SteeringInequality:
    f = _collect_f(sol, asm.m, asm.n, asm.dB)
    ineq = SteeringInequality(coefficients=f, bound=0.0, violation=0.0)
    ineq.bound = ineq.lhs_bound_by_enumeration()
    ineq.violation = ineq.evaluate(asm) - ineq.bound
    return ineq


def has_lhs_model(assemblage: Assemblage, tol: float = 5e-8,
                  cap: int = 10 ** 6) -> LhsDecision:
    """Max-margin LHS membership: maximize w such that the model states
    omega_lambda - w*I/L stay PSD while reproducing the assemblage."""
    m, n, d = assemblage.m, assemblage.n, assemblage.dB
    total = check_strategy_cap(m, n, cap)
    masks = strategy_masks(m, n, cap)

    prog = ConicProgram("has_lhs_model")
    prog.add_hermitian_family("S", total, d)
    prog.add_free("w", 1)
    eye = np.eye(d)
    for x, a in _pruned_rows(m, n):
        prog.add_matrix_row_group(
            ("match", x, a), assemblage.members[x, a],
            [("sum", "S", masks[x][a], 1.0), ("scalar_mat", "w", 0, eye / n)])
    prog.set_objective([("lin", "w", [0], [-1.0])])
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"LHS membership returned {sol.status}", program=prog)
    margin = -sol.value
    if margin >= -tol:
        states = sol.primal["S"] + (margin / total) * eye
        vals, vecs = np.linalg.eigh(states)
        states = np.einsum("lik,lk,ljk->lij", vecs, np.clip(vals, 0, None),
                           vecs.conj())
        states /= np.einsum("lii->", states).real   # exact unit trace
        return LhsDecision(True, margin, model=LhsModel(states, (m, n)))
    ineq = _inequality(sol, assemblage)
    return LhsDecision(False, margin, inequality=ineq)


def _build_program(assemblage: Assemblage, kind: SteeringKind,
                   cap: int = 10 ** 6) -> ConicProgram:
    m, n, d = assemblage.m, assemblage.n, assemblage.dB
    total = check_strategy_cap(m, n, cap)
    masks = strategy_masks(m, n, cap)
    rho_b = reduced_state(assemblage)
    sig = assemblage.members

    prog = ConicProgram(f"steering:{kind.value}")
    all_lam = np.arange(total)
    if kind is SteeringKind.SR:
        prog.add_hermitian_family("pi", m * n, d)
        prog.add_hermitian_family("sig", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _all_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("sum", "sig", masks[x][a], 1.0), ("one", "pi", x * n + a, -1.0)])
        prog.add_scalar_row(("norm",), 1.0, [("tr", "sig", all_lam, 1.0),
                                             ("lin", "s", [0], [-1.0])])
    elif kind is SteeringKind.SR_red:
        prog.add_hermitian_family("sig", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _pruned_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("sum", "sig", masks[x][a], 1.0),
                 ("scalar_mat", "s", 0, -rho_b / n)])
    elif kind is SteeringKind.SR_lhs:
        prog.add_hermitian_family("sig", total, d)
        prog.add_hermitian_family("gam", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _pruned_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("sum", "sig", masks[x][a], 1.0),
                 ("sum", "gam", masks[x][a], -1.0)])
        prog.add_scalar_row(("gnorm",), 0.0, [("tr", "gam", all_lam, 1.0),
                                              ("lin", "s", [0], [-1.0])])
    elif kind is SteeringKind.SW:
        prog.add_hermitian_family("pi", m * n, d)
        prog.add_hermitian_family("sig", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _all_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("one", "pi", x * n + a, 1.0), ("sum", "sig", masks[x][a], 1.0)])
        prog.add_scalar_row(("norm",), 1.0, [("tr", "sig", all_lam, 1.0),
                                             ("lin", "s", [0], [1.0])])
    elif kind is SteeringKind.SR_c:
        prog.add_hermitian_family("pi", m * n, d)
        prog.add_hermitian_family("sig", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _pruned_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("sum", "sig", masks[x][a], 1.0), ("one", "pi", x * n + a, -1.0)])
        for x in range(m):
            prog.add_matrix_row_group(
                ("consis", x), np.zeros((d, d)),
                [("sum", "pi", x * n + np.arange(n), 1.0),
                 ("scalar_mat", "s", 0, -rho_b)])
    elif kind is SteeringKind.SR_c_lhs:
        prog.add_hermitian_family("sig", total, d)
        prog.add_hermitian_family("gam", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _pruned_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("sum", "sig", masks[x][a], 1.0),
                 ("sum", "gam", masks[x][a], -1.0)])
        prog.add_matrix_row_group(
            ("consis",), np.zeros((d, d)),
            [("sum", "gam", all_lam, 1.0), ("scalar_mat", "s", 0, -rho_b)])
    elif kind is SteeringKind.SW_c:
        prog.add_hermitian_family("pi", m * n, d)
        prog.add_hermitian_family("sig", total, d)
        prog.add_nonneg("s", 1)
        for x, a in _pruned_rows(m, n):
            prog.add_matrix_row_group(
                ("match", x, a), sig[x, a],
                [("one", "pi", x * n + a, 1.0), ("sum", "sig", masks[x][a], 1.0)])
        for x in range(m):
            prog.add_matrix_row_group(
                ("consis", x), np.zeros((d, d)),
                [("sum", "pi", x * n + np.arange(n), 1.0),
                 ("scalar_mat", "s", 0, -rho_b)])
    else:
        raise ValueError(f"unknown kind {kind!r}")
    prog.set_objective([("lin", "s", [0], [1.0])])
    return prog


def steering_quantifier(assemblage: Assemblage, kind: SteeringKind | str,
                        cap: int = 10 ** 6) -> SteeringResult:
    """One of SR, SR^red, SR^lhs, SW, SR^c, SR^c/lhs, SW^c."""
    kind = parse_steering_kind(kind) if isinstance(kind, str) else kind
    m, n = assemblage.m, assemblage.n
    masks = strategy_masks(m, n, cap)
    rho_b = reduced_state(assemblage)
    prog = _build_program(assemblage, kind, cap)
    sol = prog.solve(feastol=FEASTOL, gaptol=GAPTOL)
    if sol.status != "optimal":
        raise SolverFailure(f"{kind.value} solve returned {sol.status}",
                            program=prog)
    s = max(float(sol.primal["s"][0]), 0.0)
    noise, model, noise_model = _reconstruct(kind, sol, assemblage, masks,
                                             rho_b, s)
    ineq = _inequality(sol, assemblage)
    return SteeringResult(kind=kind, value=s, noise=noise, model=model,
                          noise_model=noise_model, inequality=ineq,
                          gap=abs(sol.pobj - sol.dobj), solution=sol)


def _states_clip_normalize(states: np.ndarray, trace: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(states)
    states = np.einsum("lik,lk,ljk->lij", vecs, np.clip(vals, 0, None),
                       vecs.conj())
    tr = np.einsum("lii->", states).real
    if tr > 0 and trace > 0:
        states = states * (trace / tr)
    return states


def _blend_psd_rows(grid: np.ndarray) -> np.ndarray:
    """Repair tiny negative eigenvalues in an (m, n, d, d) grid by blending
    each input's row toward its outcome average, which preserves the
    per-input sums exactly."""
    out = grid.copy()
    n = grid.shape[1]
    for x in range(grid.shape[0]):
        lam = float(np.min(np.linalg.eigvalsh(out[x])))
        if lam >= 0:
            continue
        target = np.broadcast_to(out[x].sum(axis=0) / n, out[x].shape)
        lam_t = float(np.min(np.linalg.eigvalsh(target[0])))
        if lam_t <= 0:
            continue    # caller-level clip handles the degenerate case
        w = min(1.0, -lam / (-lam + lam_t) * (1 + 1e-9))
        out[x] = (1 - w) * out[x] + w * target
    return out


def _coarse(states: np.ndarray, masks, m, n) -> np.ndarray:
    d = states.shape[1]
    out = np.zeros((m, n, d, d), dtype=complex)
    for x in range(m):
        for a in range(n):
            out[x, a] = states[masks[x][a]].sum(axis=0)
    return out


def _reconstruct(kind, sol, assemblage, masks, rho_b, s):
    m, n, d = assemblage.m, assemblage.n, assemblage.dB
    total = sol.primal["sig"].shape[0]
    tiny = 1e-9
    denom = (1.0 - s) if kind.weight_like else (1.0 + s)
    if denom > tiny:
        states = _states_clip_normalize(sol.primal["sig"] / denom, 1.0)
    else:
        states = np.broadcast_to(np.eye(d) / (total * d),
                                 (total, d, d)).astype(complex)
    model = LhsModel(states, (m, n))
    noise_model = None
    if kind in (SteeringKind.SR_lhs, SteeringKind.SR_c_lhs):
        if s > tiny:
            gstates = _states_clip_normalize(sol.primal["gam"] / s, 1.0)
        else:
            gstates = np.broadcast_to(np.eye(d) / (total * d),
                                      (total, d, d)).astype(complex)
        noise_model = LhsModel(gstates, (m, n))
        noise = _coarse(noise_model.states, masks, m, n)
    elif kind is SteeringKind.SR_red:
        noise = np.broadcast_to(rho_b / n, (m, n, d, d)).copy()
    else:
        # rebuild the noise from the exactly normalized model, so the
        # defining decomposition holds to rounding instead of to the
        # (1/s)-amplified solver residual; then repair PSD sum-preservingly
        if s > tiny:
            model_grid = model.assemblage().members
            if kind.weight_like:
                noise = (assemblage.members - (1 - s) * model_grid) / s
            else:
                noise = ((1 + s) * model_grid - assemblage.members) / s
            noise = _blend_psd_rows(noise)
        else:
            noise = np.asarray(assemblage.members).copy()
    return np.asarray(noise), model, noise_model


def steering_certificate(result: SteeringResult,
                         assemblage: Assemblage) -> SteeringInequality:
    """Re-derive the inequality record for ``assemblage`` and re-verify the
    enumerated LHS bound; raises if the solve was not optimal."""
    if result.solution.status != "optimal":
        raise ValueError("certificate requires an optimal solve")
    ineq = SteeringInequality(coefficients=result.inequality.coefficients,
                              bound=0.0, violation=0.0)
    ineq.bound = ineq.lhs_bound_by_enumeration()
    ineq.violation = ineq.evaluate(assemblage) - ineq.bound
    return ineq


def lhs_mixture(assemblage: Assemblage, noise: np.ndarray, s: float) -> Assemblage:
    """(sigma + s*noise)/(1+s), the mixture the robustness kinds certify."""
    return Assemblage((assemblage.members + s * noise) / (1 + s))


def weight_remainder(assemblage: Assemblage, noise: np.ndarray,
                     s: float) -> Assemblage:
    """gamma = (sigma - s*pi)/(1-s), the LHS part of the weight split."""
    if 1 - s < 1e-9:
        d = assemblage.dB
        grid = np.broadcast_to(np.eye(d) / (assemblage.n * d),
                               (assemblage.m, assemblage.n, d, d))
        return Assemblage(grid.copy())
    return Assemblage((assemblage.members - s * noise) / (1 - s))
