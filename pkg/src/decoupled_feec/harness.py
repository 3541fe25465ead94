"""Manufactured solutions, error norms and convergence studies."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np
import sympy as sym

from .exterior import hodge_matrix, index_lookup, index_sets, sort_with_sign
from .mesh import box_mesh
from .quadrature import simplex_rule
from .system import SolverConfig, cell_coefficients, solve_fourth_order

PROBLEMS = ("biharmonic", "quadcurl", "fourthdiv")
COORDS = sym.symbols("x1:4", real=True)


# ---------------------------------------------------------------------------
# symbolic exterior calculus on component lists


def sym_d(comps, d, j):
    """Exterior derivative of a ``j``-form given by its components."""
    look = index_lookup(d, j + 1)
    out = [sym.Integer(0)] * comb(d, j + 1)
    for a, sigma in enumerate(index_sets(d, j)):
        for i in range(d):
            tau, sign = sort_with_sign((i,) + sigma)
            if sign:
                out[look[tau]] += sign * sym.diff(comps[a], COORDS[i])
    return out


def sym_star(comps, d, j):
    H = hodge_matrix(d, j)
    return [sum(int(H[b, a]) * comps[a] for a in range(len(comps))) for b in range(H.shape[0])]


def sym_inverse_star(comps, d, j):
    """Inverse of ``star: Alt^j -> Alt^(d-j)`` applied to a ``(d-j)``-form."""
    H = hodge_matrix(d, j)  # signed permutation, so the inverse is the transpose
    return [sum(int(H[b, a]) * comps[b] for b in range(H.shape[0])) for a in range(H.shape[1])]


def sym_delta(comps, d, j):
    """``delta = (-1)^j star^{-1} d star`` on ``j``-forms."""
    if j == 0:
        raise ValueError("codifferential of a 0-form")
    s = sym_d(sym_star(comps, d, j), d, d - j)
    return [(-1) ** j * c for c in sym_inverse_star(s, d, j - 1)]


def sym_laplace(comps, d):
    return [sum(sym.diff(c, COORDS[i], 2) for i in range(d)) for c in comps]


def _vectorize(exprs, d):
    """Numeric callable ``(N, d) -> (N, len(exprs))``."""
    fn = sym.lambdify(COORDS[:d], list(exprs), "numpy", cse=True)

    def call(x):
        x = np.asarray(x, dtype=float)
        vals = fn(*(x[:, i] for i in range(d)))
        return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],)) for v in vals], axis=1)

    return call


# ---------------------------------------------------------------------------
# manufactured cases


@dataclass
class ManufacturedCase:
    """Exact data for ``(delta d)^2 u = f`` with ``delta u = g``.

    ``phi = d u``; all callables map points ``(N, d)`` to components.
    """

    name: str
    d: int
    j: int
    u_expr: list = field(repr=False)
    f: callable = field(repr=False)
    g: callable | None = field(repr=False)
    u: callable = field(repr=False)
    du: callable = field(repr=False)
    grad_u: callable = field(repr=False)
    phi: callable = field(repr=False)
    grad_phi: callable = field(repr=False)

    @property
    def seminorm_label(self):
        return "H1" if self.j == 0 else "d"


def _bump(d):
    return sym.Mul(*[sym.sin(sym.pi * COORDS[i]) ** 3 for i in range(d)])


def make_case(problem: str, d: int) -> ManufacturedCase:
    """Manufactured solution for ``problem`` in dimension ``d``.

    ``biharmonic`` (``j = 0``): ``u = prod sin^3(pi x_i)``.
    ``quadcurl`` (``d = 3, j = 1``): ``u = curl(S (1, 1, 1))`` with ``S`` the
    same bump, so ``delta u = 0``.
    ``fourthdiv`` (``j = d-1``): every component of ``u`` equals ``S``.
    """
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    S = _bump(d)
    if problem == "biharmonic":
        j = 0
        u = [S]
    elif problem == "quadcurl":
        if d != 3:
            raise ValueError("quadcurl is defined for d = 3")
        j = 1
        psi = [S, S, S]
        u = sym_inverse_star(sym_d(psi, 3, 1), 3, 1)  # curl as a 1-form
    elif problem == "fourthdiv":
        j = d - 1
        u = [S] * comb(d, j)
    else:
        raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    du = sym_d(u, d, j)
    lap = sym_laplace(du, d)
    if j == 0:
        f = [-c for c in sym_delta(lap, d, 1)]
        g = None
    else:
        f = [-c for c in sym_delta(lap, d, j + 1)]
        g_expr = sym_delta(u, d, j)
        g = None if all(sym.expand(c) == 0 for c in g_expr) else _vectorize(g_expr, d)
    grad = lambda comps: [sym.diff(c, COORDS[i]) for c in comps for i in range(d)]
    ncomp_phi = comb(d, j + 1)
    grad_u_fn = _vectorize(grad(u), d)
    grad_phi_fn = _vectorize(grad(du), d)
    return ManufacturedCase(
        name=problem, d=d, j=j, u_expr=u,
        f=_vectorize(f, d), g=g,
        u=_vectorize(u, d), du=_vectorize(du, d),
        grad_u=lambda x: grad_u_fn(x).reshape(-1, comb(d, j), d),
        phi=_vectorize(du, d),
        grad_phi=lambda x: grad_phi_fn(x).reshape(-1, ncomp_phi, d),
    )


# ---------------------------------------------------------------------------
# errors


def _error_integrals(space, coeffs, cells_iter, rule, exact, op, chunk):
    total = 0.0
    mesh = space.mesh
    for cls, cells in cells_iter:
        B = space.local_basis(cls, op) if op != "grad" else space.local_basis(cls)
        if op == "grad":
            vals = B.evaluate_gradient(rule.bary)  # (nloc, nq, ncomp, d)
        else:
            vals = B.evaluate(rule.bary)  # (nloc, nq, ncomp)
        vol = mesh.class_geometry(cls).volume
        for s in range(0, cells.size, chunk):
            cc = cells[s:s + chunk]
            x = np.einsum("qv,cvd->cqd", rule.bary, mesh.vertices[mesh.cells_sorted[cc]])
            ex = exact(x.reshape(-1, mesh.d)).reshape((cc.size, rule.num_points) + vals.shape[2:])
            c = cell_coefficients(space, coeffs, cc)
            uh = np.tensordot(c, vals, axes=(1, 0))
            diff = (ex - uh).reshape(cc.size, rule.num_points, -1)
            total += vol * float(np.einsum("q,cqk->", rule.weights, diff ** 2))
    return np.sqrt(total)


def error_norms(solution, case: ManufacturedCase, degree=10, chunk=4000) -> dict:
    """``L^2`` and seminorm errors of ``u_h`` and ``phi_h``.

    The ``u`` seminorm is ``||grad(u - u_h)||`` for ``j = 0`` and
    ``||d(u - u_h)||`` otherwise; the ``phi`` seminorm is the componentwise
    ``H^1`` seminorm.
    """
    S = solution.spaces
    rule = simplex_rule(case.d, degree)
    cells = lambda sp_: list(sp_.class_cells())
    if case.j == 0:
        semi = _error_integrals(S.u, solution.u, cells(S.u), rule, case.grad_u, "grad", chunk)
    else:
        semi = _error_integrals(S.u, solution.u, cells(S.u), rule, case.du, "d", chunk)
    return {
        "u_l2": _error_integrals(S.u, solution.u, cells(S.u), rule, case.u, "id", chunk),
        "u_h1": semi,
        "phi_l2": _error_integrals(S.phi, solution.phi, cells(S.phi), rule, case.phi, "id", chunk),
        "phi_h1": _error_integrals(S.phi, solution.phi, cells(S.phi), rule, case.grad_phi, "grad", chunk),
    }


# ---------------------------------------------------------------------------
# convergence studies

ERROR_KEYS = ("u_l2", "u_h1", "phi_l2", "phi_h1")
CSV_HEADER = ["n", "h", "err_u_l2", "rate_u_l2", "err_u_h1", "rate_u_h1", "err_phi_l2",
              "rate_phi_l2", "err_phi_h1", "rate_phi_h1", "mult_norm_max", "seconds"]


@dataclass
class LevelResult:
    n: int
    h: float
    errors: dict
    rates: dict
    mult_ratio: float
    seconds: float
    infos: dict = field(default_factory=dict, repr=False)


@dataclass
class ConvergenceReport:
    problem: str
    d: int
    j: int
    k: int
    levels: list

    def column(self, key):
        return np.array([lv.errors[key] for lv in self.levels])

    def rates(self, key):
        return np.array([lv.rates[key] for lv in self.levels[1:]])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for lv in self.levels:
            row = [lv.n, repr(lv.h)]
            for key in ERROR_KEYS:
                rate = lv.rates.get(key)
                row += [repr(float(lv.errors[key])), "" if rate is None else repr(float(rate))]
            row += [repr(float(lv.mult_ratio)), repr(float(lv.seconds))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_markdown(self):
        head = "| h | " + " | ".join(f"{k} | rate" for k in ERROR_KEYS) + " |"
        sep = "|" + "---|" * (1 + 2 * len(ERROR_KEYS))
        lines = [head, sep]
        for lv in self.levels:
            cells = [f"2^-{int(round(np.log2(lv.n)))}" if lv.n & (lv.n - 1) == 0 else f"1/{lv.n}"]
            for key in ERROR_KEYS:
                rate = lv.rates.get(key)
                cells += [f"{lv.errors[key]:.5e}", "-" if rate is None else f"{rate:.4f}"]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines)


def read_csv(path) -> list:
    """Rows of a report CSV as dictionaries of floats (empty rates become ``None``)."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (None if v == "" else (int(v) if k == "n" else float(v))) for k, v in row.items()})
    return out


def observed_rate(e_coarse, e_fine, h_coarse, h_fine):
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


def run_convergence(problem: str, d: int, k: int, levels, cfg: SolverConfig | None = None,
                    progress=None) -> ConvergenceReport:
    """Solve on ``box_mesh(d, n)`` for each ``n`` in ``levels`` and tabulate errors."""
    levels = [int(n) for n in levels]
    if any(n < 1 for n in levels) or levels != sorted(set(levels)):
        raise ValueError("levels must be increasing positive integers")
    cfg = SolverConfig() if cfg is None else cfg
    case = make_case(problem, d)
    results = []
    for n in levels:
        t0 = time.perf_counter()
        mesh = box_mesh(d, n)
        sol = solve_fourth_order(mesh, k, case.j, case.f, case.g, cfg)
        errs = error_norms(sol, case, cfg.quad_degree)
        h = 1.0 / n
        rates = {}
        if results:
            prev = results[-1]
            rates = {key: observed_rate(prev.errors[key], errs[key], prev.h, h) for key in ERROR_KEYS}
        lv = LevelResult(n, h, errs, rates, sol.multiplier_ratio, time.perf_counter() - t0, sol.infos)
        results.append(lv)
        if progress is not None:
            progress(lv)
    return ConvergenceReport(problem, d, case.j, k, results)


# ---------------------------------------------------------------------------
# structural audits


@dataclass
class AuditResult:
    name: str
    ok: bool
    detail: str = ""


def koszul_rank_expected(d, r, j):
    """Rank of the Koszul operator on ``P_r Lambda^j`` from the homogeneous
    exact sequence: on degree-``s`` forms it is the alternating sum of
    ``dim H_{s-i} Lambda^{j+i}``."""
    dim_h = lambda s, m: comb(s + d - 1, d - 1) * comb(d, m) if s >= 0 and 0 <= m <= d else 0
    return sum((-1) ** i * dim_h(s - i, j + i) for s in range(r + 1) for i in range(d - j + 1))


def dim_P(d, r, j):
    return comb(r + d, d) * comb(d, j)


def dim_Pminus(d, r, j):
    return comb(r + j - 1, j) * comb(r + d, d - j)


def run_audits(d: int, ks=(1, 2), koszul_degrees=(0, 1, 2, 3), seed=0) -> list:
    """Local bases and unisolvence, ``dd = 0``, ``delta delta = 0``, the ``star star``
    sign law, Koszul ranks and discrete exactness on ``box_mesh(d, 1)``."""
    from .exterior import AlternatingForm, hodge_star
    from .fespaces import exactness_audit
    from .polyforms import (check_unisolvence, reference_cell, space_P, space_Phi,
                            space_Pminus, span_rank)

    cell = reference_cell(d)
    out = []
    for k in ks:
        for j in range(d + 1):
            for label, fn, dim in (("P", space_P, dim_P(d, k, j)), ("P-", space_Pminus, dim_Pminus(d, k, j))):
                B = fn(k, j, cell)
                rank = span_rank(B.functions)
                out.append(AuditResult(f"basis {label}_{k} Lambda^{j}", rank == B.dim == dim,
                                       f"rank={rank} size={B.dim} dim={dim}"))
        for j in range(d):
            rep = check_unisolvence(space_Phi(k, j, cell))
            out.append(AuditResult(f"unisolvent Phi_{k} j={j}", rep.ok, f"cond={rep.condition:.3g}"))
    for j in range(d + 1):
        B = space_P(3, j, cell).functions
        if j + 2 <= d:
            dd = float(np.abs(B.exterior_derivative().exterior_derivative().coeffs).max())
            out.append(AuditResult(f"dd=0 on P_3 Lambda^{j}", dd < 1e-9, f"max={dd:.2e}"))
        if j >= 2:
            cc = float(np.abs(B.codifferential().codifferential().coeffs).max())
            out.append(AuditResult(f"delta delta=0 on P_3 Lambda^{j}", cc < 1e-9, f"max={cc:.2e}"))
    rng = np.random.default_rng(seed)
    for j in range(d + 1):
        a = AlternatingForm(d, j, rng.standard_normal(comb(d, j)))
        law = hodge_star(hodge_star(a)).allclose(a * (-1) ** (j * (d - j)))
        out.append(AuditResult(f"star star sign law j={j}", bool(law)))
    for r in koszul_degrees:
        for j in range(1, d + 1):
            got = span_rank(space_P(r, j, cell).functions.koszul())
            want = koszul_rank_expected(d, r, j)
            out.append(AuditResult(f"Koszul rank P_{r} Lambda^{j}", got == want, f"{got} vs {want}"))
    mesh = box_mesh(d, 1)
    for k in ks:
        for j in range(d + 1):
            rep = exactness_audit(mesh, k, j)
            out.append(AuditResult(f"exactness k={k} j={j} n=1", rep.ok,
                                   ", ".join(f"{c.name}:{c.kernel_dim}/{c.image_rank}" for c in rep.checks)))
    return out
