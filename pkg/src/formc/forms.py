"""Builders for the benchmark form sources.

All forms are generated as source text and compiled through the full
front end, so the DSL is the single entry point.  The families follow the
benchmark pattern: a base bilinear form over a degree-q space, premultiplied
by n_f coefficient functions of degree p (p = 0 uses piecewise constants).
"""

from __future__ import annotations

_CELL = {2: "triangle", 3: "tetrahedron"}


def _coef_element_line(dim: int, p: int) -> str:
    family = "Lagrange" if p >= 1 else "Discontinuous Lagrange"
    return f'element_f = FiniteElement("{family}", "{_CELL[dim]}", {p})'


def _premultiplier(n_f: int) -> tuple[str, str]:
    decls = "\n".join(f"f{k} = Function(element_f)" for k in range(n_f))
    factor = "".join(f"f{k}*" for k in range(n_f))
    return decls, factor


def mass(dim: int, q: int, n_f: int = 0, p: int = 1) -> str:
    """Mass matrix, optionally premultiplied by n_f functions of degree p."""
    lines = [f'element = FiniteElement("Lagrange", "{_CELL[dim]}", {q})']
    if n_f:
        lines.append(_coef_element_line(dim, p))
    lines += ["v = TestFunction(element)", "u = TrialFunction(element)"]
    if n_f:
        decls, factor = _premultiplier(n_f)
        lines += [decls, f"a = {factor}dot(v, u)*dx"]
    else:
        lines.append("a = dot(v, u)*dx")
    return "\n".join(lines) + "\n"


def weighted_laplacian(dim: int, q: int) -> str:
    """w grad(v).grad(u) with all functions in the same degree-q space."""
    return (
        f'element = FiniteElement("Lagrange", "{_CELL[dim]}", {q})\n'
        "v = TestFunction(element)\n"
        "u = TrialFunction(element)\n"
        "w = Function(element)\n"
        "a = w*dot(grad(v), grad(u))*dx\n"
    )


def poisson(dim: int, q: int) -> str:
    return (
        f'element = FiniteElement("Lagrange", "{_CELL[dim]}", {q})\n'
        "v = TestFunction(element)\n"
        "u = TrialFunction(element)\n"
        "a = dot(grad(v), grad(u))*dx\n"
    )


def elasticity(dim: int, q: int, n_f: int = 0, p: int = 1) -> str:
    """Symmetric-gradient inner product on a vector space, premultiplied."""
    lines = [f'element = VectorElement("Lagrange", "{_CELL[dim]}", {q})']
    if n_f:
        lines.append(_coef_element_line(dim, p))
    lines += ["v = TestFunction(element)", "u = TrialFunction(element)"]
    factor = ""
    if n_f:
        decls, factor = _premultiplier(n_f)
        lines.append(decls)
    lines += [
        "epsv = grad(v) + transp(grad(v))",
        "epsu = grad(u) + transp(grad(u))",
        f"a = {factor}0.25*dot(epsv, epsu)*dx",
    ]
    return "\n".join(lines) + "\n"


def vector_poisson_div(q: int, n_f: int = 1, p: int = 1, dim: int = 2) -> str:
    """Vector Poisson premultiplied by divergences of vector coefficients."""
    lines = [
        f'element = VectorElement("Lagrange", "{_CELL[dim]}", {q})',
        f'element_f = VectorElement("Lagrange", "{_CELL[dim]}", {p})',
        "v = TestFunction(element)",
        "u = TrialFunction(element)",
    ]
    lines += [f"f{k} = Function(element_f)" for k in range(n_f)]
    factor = "".join(f"div(f{k})*" for k in range(n_f))
    lines.append(f"a = {factor}dot(grad(v), grad(u))*dx")
    return "\n".join(lines) + "\n"


def pressure_equation() -> str:
    """The coefficient-heavy stabilised pressure form (2D, with division)."""
    lines = [
        'scalar_p = FiniteElement("Lagrange", "triangle", 2)',
        'scalar = FiniteElement("Lagrange", "triangle", 1)',
        'dscalar = FiniteElement("Discontinuous Lagrange", "triangle", 0)',
        'vector = VectorElement("Discontinuous Lagrange", "triangle", 1)',
        "q = TestFunction(scalar_p)",
        "p = TrialFunction(scalar_p)",
    ]
    lines += [f"f{k} = Function(scalar)" for k in range(7)]
    lines += [f"g{k} = Function(dscalar)" for k in range(8)]
    lines += [f"u{k} = Function(vector)" for k in range(3)]
    lines += [
        "Sgu = mult(g0, u0) + mult(g1, u1) + mult(g2, u2)",
        "S = g6*(1 - g5)*(f1/f2 + f3/f4 + f5/f6)",
        "a_0 = q*g3*f0*g2/g4*p - q*(1 - g5)*dot(Sgu, grad(p)) - S*dot(grad(q), grad(p))",
        "a_1 = g7*dot(Sgu, grad(q))*g3*f0*g2/g4*p"
        " - g7*dot(Sgu, grad(q))*(1 - g5)*dot(Sgu, grad(p))"
        " + g7*dot(Sgu, grad(q))*S*div(grad(p))",
        "a = (a_0 + a_1)*dx",
    ]
    return "\n".join(lines) + "\n"


def figure_sources() -> dict[str, str]:
    """The five compiler inputs used throughout the benchmark write-up."""
    return {
        "weighted_laplacian_3d_q3": weighted_laplacian(3, 3),
        "elasticity_3d_q3": elasticity(3, 3),
        "mass_2d_q2": mass(2, 2),
        "mass_premultiplied_2d": mass(2, 2, n_f=2, p=3),
        "pressure_equation_2d": pressure_equation(),
    }
