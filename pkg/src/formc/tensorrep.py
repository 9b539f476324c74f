"""Tensor-contraction kernels: precomputed reference tensor, per-cell
geometry tensor, fully unrolled contraction with exact-zero dropping.

Monomials that share their basis-factor structure share one reference
tensor; their geometry products are summed inside the geometry-tensor
entries.  Division cannot be expressed in this representation and is a hard
error.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .elements import tabulate
from .kernel import (
    AssignA,
    AssignScalar,
    BinOp,
    CoefRef,
    Comment,
    DetRef,
    IxConst,
    IxLin,
    JinvRef,
    KernelIR,
    Lit,
    ScalarRef,
    TermSum,
)
from .lowering import BasisFactor, Monomial, MonomialSum, SumIndex
from .quadrature import simplex_rule

SNAP_TOLERANCE = 1e-12
DEGREE_MARGIN = 2


class UnsupportedDivision(Exception):
    """Forms with coefficient division have no tensor-contraction kernel."""


def _as_group(monomials) -> tuple:
    group = (monomials,) if isinstance(monomials, Monomial) else tuple(monomials)
    if not group:
        raise ValueError("empty monomial group")
    sig = group[0].signature()
    if any(m.signature() != sig for m in group):
        raise ValueError("monomials in a group must share their basis structure")
    if group[0].denominators:
        raise UnsupportedDivision("monomial divides by a coefficient")
    return group


def _factor_block(form, f: BasisFactor):
    """Dof block (global ids within the element) carrying component f.component."""
    element = form.element_of(f.role, f.coef)
    n = element.n_scalar
    if element.is_vector:
        return element, np.arange(f.component * n, (f.component + 1) * n)
    return element, np.arange(n)


def _net_degree(form, f: BasisFactor) -> int:
    element = form.element_of(f.role, f.coef)
    return max(element.degree - len(f.derivs), 0)


@dataclass(eq=False)
class ReferenceTensor:
    """Cell-independent integrals over the reference cell.

    ``values`` has one axis per test/trial dof block, then one per
    coefficient factor (dof axis), then one per bound chain-rule index.
    Entries below the snap tolerance are exactly zero.
    """

    values: np.ndarray
    test_dofs: np.ndarray
    trial_dofs: np.ndarray | None
    coef_axes: tuple  # ((coef_id, dof_ids), ...) in canonical factor order
    bound_extents: tuple
    monomials: tuple


def reference_tensor(
    monomials, form, *, snap: float = SNAP_TOLERANCE, margin: int = DEGREE_MARGIN
) -> ReferenceTensor:
    """Integrate the group's basis-factor product over the reference cell.

    The quadrature degree is the exact degree of the (polynomial) reference
    integrand plus a safety margin that guards the snap to zero.
    """
    group = _as_group(monomials)
    lead = group[0]
    cell = form.cell
    d = cell.dim
    degree = sum(_net_degree(form, f) for f in lead.factors) + margin
    rule = simplex_rule(cell, degree)

    letters = iter("abcdefghijklmnopqrstuvwxyz")
    bound_letter = {i: next(letters) for i in range(lead.n_bound)}
    operands = []
    subs = []
    test_dofs = trial_dofs = None
    coef_axes = []
    out_dof = []
    out_coef = []
    for f in lead.factors:
        element, dofs = _factor_block(form, f)
        tab = tabulate(element, rule.points, nderiv=len(f.derivs))
        scalar_ids = dofs % element.n_scalar
        if len(f.derivs) == 0:
            arr = tab.scalar_tables[()][:, scalar_ids]
        elif len(f.derivs) == 1:
            arr = np.stack(
                [tab.scalar_tables[(a,)][:, scalar_ids] for a in range(d)], axis=-1
            )
        else:
            arr = np.stack(
                [
                    np.stack(
                        [
                            tab.scalar_tables[tuple(sorted((a, b)))][:, scalar_ids]
                            for b in range(d)
                        ],
                        axis=-1,
                    )
                    for a in range(d)
                ],
                axis=-2,
            )
        dof_letter = next(letters)
        subs.append(dof_letter + "".join(bound_letter[x.ident] for x in f.derivs))
        operands.append(arr)
        if f.role == "test":
            test_dofs = dofs
            test_letter = dof_letter
        elif f.role == "trial":
            trial_dofs = dofs
            trial_letter = dof_letter
        else:
            coef_axes.append((f.coef, dofs))
            out_coef.append(dof_letter)
    out = test_letter
    if trial_dofs is not None:
        out += trial_letter
    out += "".join(out_coef)
    out += "".join(bound_letter[i] for i in range(lead.n_bound))
    script = ",".join(subs) + "->" + out

    out_shape = [len(test_dofs)]
    if trial_dofs is not None:
        out_shape.append(len(trial_dofs))
    out_shape += [len(dofs) for _, dofs in coef_axes]
    out_shape += [d] * lead.n_bound
    A0 = np.zeros(tuple(out_shape))
    for q in range(rule.n_points):
        A0 += rule.weights[q] * np.einsum(script, *[op[q] for op in operands])
    A0[np.abs(A0) < snap] = 0.0
    return ReferenceTensor(
        values=A0,
        test_dofs=test_dofs,
        trial_dofs=trial_dofs,
        coef_axes=tuple(coef_axes),
        bound_extents=(d,) * lead.n_bound,
        monomials=group,
    )


@dataclass(eq=False)
class GeometryTensorSpec:
    """Per-cell products matching one reference tensor.

    ``entries[k]`` corresponds to the k-th flattened alpha index (coefficient
    dof axes first, then chain-rule axes) and holds the coefficient-dof reads
    plus, per monomial of the group, (constant, Jinv index pairs).
    """

    coef_axes: tuple
    bound_extents: tuple
    entries: tuple  # ((coef_reads, ((const, jprod), ...)), ...)
    monomials: tuple


def _resolve(ix, assignment):
    return assignment[ix.ident] if isinstance(ix, SumIndex) else ix


def geometry_tensor_spec(monomials, form) -> GeometryTensorSpec:
    group = _as_group(monomials)
    lead = group[0]
    d = form.cell.dim
    coef_axes = []
    for f in lead.factors:
        if f.role == "coef":
            _, dofs = _factor_block(form, f)
            coef_axes.append((f.coef, dofs))
    bound_extents = (d,) * lead.n_bound
    entries = []
    coef_ranges = [range(len(dofs)) for _, dofs in coef_axes]
    bound_ranges = [range(d)] * lead.n_bound
    for alpha in product(*coef_ranges, *bound_ranges):
        coef_part = alpha[: len(coef_axes)]
        assignment = alpha[len(coef_axes) :]
        reads = tuple(
            (coef, int(dofs[k])) for (coef, dofs), k in zip(coef_axes, coef_part)
        )
        terms = tuple(
            (
                m.constant,
                tuple(
                    sorted(
                        (_resolve(j.ref, assignment), _resolve(j.phys, assignment))
                        for j in m.jinvs
                    )
                ),
            )
            for m in group
        )
        entries.append((reads, terms))
    return GeometryTensorSpec(tuple(coef_axes), bound_extents, tuple(entries), group)


def _group_key(group) -> tuple:
    lead = group[0]
    return (
        tuple(f.sort_key() for f in lead.factors),
        tuple(f.sort_key() for f in lead.denominators),
        lead.n_bound,
        tuple(sorted(tuple(j.sort_key() for j in m.jinvs) for m in group)),
    )


def build_tensor_kernel(
    ms: MonomialSum,
    *,
    snap: float = SNAP_TOLERANCE,
    margin: int = DEGREE_MARGIN,
    drop_zeros: bool = True,
    term_budget: int | None = None,
    name: str = "form",
) -> KernelIR:
    """Unrolled-contraction kernel: A[e] = sum_alpha A0[e, alpha] * G[alpha].

    Terms whose reference-tensor entry is exactly zero are omitted;
    coefficients of magnitude one skip their multiply.  ``term_budget``
    bounds the unrolled size (MemoryError beyond it), mirroring the failure
    mode of tensor code generation for very complicated forms.
    """
    form = ms.form
    if any(m.denominators for m in ms.monomials):
        raise UnsupportedDivision("form divides by a coefficient")
    bilinear = form.arity == 2
    n1 = form.test_element.space_dim
    n2 = form.trial_element.space_dim if bilinear else 1
    shape = (n1, n2) if bilinear else (n1,)

    by_sig: dict = {}
    for m in ms.monomials:
        by_sig.setdefault(m.signature(), []).append(m)
    groups = sorted((tuple(g) for g in by_sig.values()), key=_group_key)

    if term_budget is not None:
        upper = 0
        d = form.cell.dim
        for group in groups:
            lead = group[0]
            size = d**lead.n_bound
            for f in lead.factors:
                size *= len(_factor_block(form, f)[1])
            upper += size
        if upper > term_budget:
            raise MemoryError(
                f"unrolled contraction needs up to {upper} terms"
                f" (budget {term_budget})"
            )

    k_names: dict = {}
    k_stmts: list = []
    g_stmts: list = []
    g_slots: list = []
    entry_terms: dict = {}
    n_terms = 0

    for group in groups:
        rt = reference_tensor(group, form, snap=snap, margin=margin)
        spec = geometry_tensor_spec(group, form)
        base_slot = len(g_slots)
        # One geometry scalar per alpha; Jinv sums are hoisted and shared.
        for reads, terms in spec.entries:
            gexpr = _geometry_expr(reads, terms, k_names, k_stmts)
            gname = f"G{len(g_slots)}"
            g_slots.append(gname)
            g_stmts.append(AssignScalar(gname, gexpr))
        values = rt.values if drop_zeros else rt.values.copy()
        nz = np.nonzero(values) if drop_zeros else tuple(
            idx.ravel() for idx in np.indices(values.shape)
        )
        coeffs = values[nz] if drop_zeros else values.ravel()
        n_terms += len(coeffs)
        if term_budget is not None and n_terms > term_budget:
            raise MemoryError(
                f"unrolled contraction exceeds the term budget ({term_budget})"
            )
        test_ids = rt.test_dofs[nz[0]]
        if bilinear:
            entry_ids = test_ids * n2 + rt.trial_dofs[nz[1]]
            alpha_axes = nz[2:]
        else:
            entry_ids = test_ids
            alpha_axes = nz[1:]
        alpha_shape = values.shape[(2 if bilinear else 1) :]
        if alpha_shape:
            flat_alpha = np.ravel_multi_index(alpha_axes, alpha_shape)
        else:
            flat_alpha = np.zeros(len(coeffs), dtype=np.intp)
        slots = base_slot + flat_alpha
        order = np.argsort(entry_ids, kind="stable")
        sorted_e = entry_ids[order]
        sorted_c = coeffs[order]
        sorted_s = slots[order]
        uniq, starts = np.unique(sorted_e, return_index=True)
        ends = np.append(starts[1:], len(sorted_e))
        for e, s0, s1 in zip(uniq, starts, ends):
            lst = entry_terms.setdefault(int(e), ([], []))
            lst[0].append(sorted_c[s0:s1])
            lst[1].append(sorted_s[s0:s1])

    stmts: list = [Comment("Geometry tensor")]
    stmts.extend(k_stmts)
    stmts.extend(g_stmts)
    stmts.append(Comment("Unrolled contraction"))
    for e in range(int(np.prod(shape))):
        if e in entry_terms:
            cs, ss = entry_terms[e]
            expr = TermSum(
                np.concatenate(cs), np.concatenate(ss).astype(np.int32)
            )
        else:
            expr = Lit(0.0)
        stmts.append(AssignA(IxLin((), e), expr))

    coef_sizes = tuple(elem.space_dim for _, elem in form.coefficients)
    return KernelIR(
        name=name,
        representation="tensor",
        shape=shape,
        dim=form.cell.dim,
        coef_sizes=coef_sizes,
        const_scalars=(),
        tables={},
        statements=tuple(stmts),
        g_slots=tuple(g_slots),
        meta={
            "n_groups": len(groups),
            "n_terms": n_terms,
            "drop_zeros": drop_zeros,
        },
    )


def _geometry_expr(reads, terms, k_names, k_stmts):
    """det * coefficient dofs * (hoisted sum of Jinv products)."""
    jpart_key = terms
    const_only = all(not jprod for _, jprod in terms)
    parts = [DetRef()]
    for coef, dof in reads:
        parts.append(CoefRef(coef, IxConst(dof)))
    if const_only:
        total = sum(c for c, _ in terms)
        if total != 1.0:
            parts.append(Lit(total))
    else:
        kname = k_names.get(jpart_key)
        if kname is None:
            summands = []
            for c, jprod in terms:
                factors = [JinvRef(a, b) for a, b in jprod]
                if c != 1.0 or not factors:
                    factors.append(Lit(c))
                summand = factors[0]
                for f in factors[1:]:
                    summand = BinOp("*", summand, f)
                summands.append(summand)
            kexpr = summands[0]
            for s in summands[1:]:
                kexpr = BinOp("+", kexpr, s)
            kname = f"K{len(k_names)}"
            k_names[jpart_key] = kname
            k_stmts.append(AssignScalar(kname, kexpr))
        parts.append(ScalarRef(kname))
    expr = parts[0]
    for p in parts[1:]:
        expr = BinOp("*", expr, p)
    return expr
