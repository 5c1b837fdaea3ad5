"""Binary ILP instances: LP/JSON parsing, random generation, decomposition, exact oracle.

All problems are of the form  min <c, x>  over x in {0,1}^n  subject to linear
rows  a^T x <= b  or  a^T x = b.  Maximization and >= rows are normalized away
at parse time so the rest of the library only ever sees this single form.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

REL_LE = "le"
REL_EQ = "eq"

MAX_ENUM_VARS = 25


class ParseError(ValueError):
    """Raised by parse_lp / from_json on malformed input."""


class InfeasibleError(ValueError):
    """Raised when a problem (or a single constraint) admits no binary solution."""


@dataclass(frozen=True)
class Constraint:
    """One linear row over binary variables, vars sorted by global index."""

    vars: tuple[int, ...]
    coeffs: tuple[float, ...]
    rel: str  # REL_LE or REL_EQ
    rhs: float

    def __post_init__(self):
        if len(self.vars) == 0:
            raise ValueError("constraint has no variables")
        if len(self.vars) != len(self.coeffs):
            raise ValueError("vars/coeffs length mismatch")
        if self.rel not in (REL_LE, REL_EQ):
            raise ValueError(f"unknown relation {self.rel!r}")
        if len(set(self.vars)) != len(self.vars):
            raise ValueError("duplicate variable in one row")
        if any(v1 >= v2 for v1, v2 in zip(self.vars, self.vars[1:])):
            raise ValueError("constraint vars must be sorted")
        if not all(math.isfinite(a) for a in self.coeffs) or not math.isfinite(self.rhs):
            raise ValueError("non-finite coefficient or rhs")


def make_constraint(var_idx, coeffs, rel, rhs) -> Constraint:
    """Build a Constraint, sorting terms by variable index."""
    order = sorted(range(len(var_idx)), key=lambda k: var_idx[k])
    return Constraint(
        vars=tuple(int(var_idx[k]) for k in order),
        coeffs=tuple(float(coeffs[k]) for k in order),
        rel=rel,
        rhs=float(rhs),
    )


@dataclass(frozen=True, eq=False)
class IlpInstance:
    """A 0-1 integer linear program in minimization form."""

    num_vars: int
    objective: np.ndarray  # shape (num_vars,), float64
    constraints: tuple[Constraint, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.objective, dtype=np.float64))
        object.__setattr__(self, "objective", c)
        if c.shape != (self.num_vars,):
            raise ValueError("objective length != num_vars")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite objective coefficient")
        for row in self.constraints:
            if row.vars[-1] >= self.num_vars:
                raise ValueError("constraint references unknown variable index")
        if self.names is not None and len(self.names) != self.num_vars:
            raise ValueError("names length != num_vars")

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def var_name(self, i: int) -> str:
        return self.names[i] if self.names is not None else f"x{i + 1}"

    def equal(self, other: "IlpInstance") -> bool:
        return (
            self.num_vars == other.num_vars
            and np.array_equal(self.objective, other.objective)
            and self.constraints == other.constraints
            and self.names == other.names
        )


@dataclass(frozen=True)
class Decomposition:
    """One subproblem per constraint plus the variable <-> subproblem incidence."""

    subproblem_vars: tuple[tuple[int, ...], ...]  # I_j, sorted by variable index
    var_subproblems: tuple[tuple[int, ...], ...]  # J_i, sorted by subproblem index
    num_dual_vars: int
    isolated: tuple[int, ...]  # variables in no constraint (excluded from the dual)
    isolated_offset: float  # sum of min(c_i, 0) over isolated variables

    @property
    def num_subproblems(self) -> int:
        return len(self.subproblem_vars)


@dataclass(frozen=True)
class ExactSolution:
    assignment: tuple[int, ...]
    value: float


# ---------------------------------------------------------------------------
# LP-format subset
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"<=|>=|[<>=:+\-]|[A-Za-z_][A-Za-z0-9_\.\#\(\)\[\]]*"
    r"|[0-9]+\.?[0-9]*(?:[eE][+-]?[0-9]+)?|\.[0-9]+(?:[eE][+-]?[0-9]+)?"
)

_SECTION_KEYWORDS = {
    "minimize": "objective",
    "min": "objective",
    "maximize": "objective",
    "max": "objective",
    "subject": "constraints",  # "subject to"
    "st": "constraints",
    "s.t.": "constraints",
    "such": "constraints",  # "such that"
    "binary": "binary",
    "binaries": "binary",
    "bin": "binary",
    "end": "end",
}

_UNSUPPORTED_SECTIONS = {
    "bounds", "general", "generals", "gen", "integer", "integers",
    "semi-continuous", "semis", "sos", "free", "ranges",
}


def _strip_comment(line: str) -> str:
    pos = line.find("\\")
    return line if pos < 0 else line[:pos]


def _is_number(tok: str) -> bool:
    return tok[0].isdigit() or tok[0] == "."


def _parse_terms(tokens, what: str):
    """Parse '[+-] [coef] var ...' into (names, coeffs); rejects duplicates."""
    names, coeffs, seen = [], [], set()
    k = 0
    while k < len(tokens):
        sign = 1.0
        while k < len(tokens) and tokens[k] in "+-":
            if tokens[k] == "-":
                sign = -sign
            k += 1
        if k >= len(tokens):
            raise ParseError(f"dangling sign in {what}")
        coef = 1.0
        if _is_number(tokens[k]):
            coef = float(tokens[k])
            k += 1
        if k >= len(tokens):
            raise ParseError(f"expected variable name in {what}")
        if _is_number(tokens[k]) or tokens[k] in "+-:<>=":
            raise ParseError(f"expected variable name in {what}, got {tokens[k]!r}")
        name = tokens[k]
        k += 1
        if name in seen:
            raise ParseError(f"duplicate variable {name!r} in {what}")
        seen.add(name)
        names.append(name)
        coeffs.append(sign * coef)
    return names, coeffs


def parse_lp(text: str) -> IlpInstance:
    """Parse the supported LP-format subset (Minimize/Subject To/Binary/End).

    Maximize is normalized to Minimize by negating the objective; >= rows are
    normalized to <= by negating coefficients and rhs.  Every variable that
    appears anywhere must be declared in the Binary section; variable indices
    follow declaration order.  One constraint per line; '\\' starts a comment.
    """
    section = None
    sense = 1.0
    obj_tokens: list[str] = []
    row_lines: list[list[str]] = []
    binary_names: list[str] = []

    for raw in text.splitlines():
        line = _strip_comment(raw).strip()
        if not line:
            continue
        tokens = _TOKEN_RE.findall(line)
        if not tokens:
            raise ParseError(f"cannot tokenize line: {raw!r}")
        head = tokens[0].lower()
        if head in _SECTION_KEYWORDS:
            new_section = _SECTION_KEYWORDS[head]
            if new_section == "objective":
                sense = -1.0 if head in ("maximize", "max") else 1.0
                tokens = tokens[1:]
            elif head == "subject":
                if len(tokens) < 2 or tokens[1].lower() != "to":
                    raise ParseError("expected 'Subject To'")
                tokens = tokens[2:]
            elif head == "such":
                if len(tokens) < 2 or tokens[1].lower() != "that":
                    raise ParseError("expected 'Such That'")
                tokens = tokens[2:]
            else:
                tokens = tokens[1:]
            section = new_section
            if section == "end":
                break
            if not tokens:
                continue
        elif head in _UNSUPPORTED_SECTIONS:
            raise ParseError(f"unsupported section keyword: {tokens[0]!r}")
        if section is None:
            raise ParseError(f"content before any section: {raw!r}")
        if section == "objective":
            obj_tokens.extend(tokens)
        elif section == "constraints":
            row_lines.append(tokens)
        elif section == "binary":
            for tok in tokens:
                if _is_number(tok) or tok in "+-:<>=":
                    raise ParseError(f"bad variable name in Binary section: {tok!r}")
                binary_names.append(tok)

    if section is None:
        raise ParseError("empty LP input")

    index = {}
    for name in binary_names:
        if name in index:
            raise ParseError(f"variable {name!r} declared binary twice")
        index[name] = len(index)
    n = len(index)

    def resolve(name: str) -> int:
        if name not in index:
            raise ParseError(f"variable {name!r} not declared binary")
        return index[name]

    # Objective (optionally prefixed with "label:").
    if len(obj_tokens) >= 2 and obj_tokens[1] == ":":
        obj_tokens = obj_tokens[2:]
    c = np.zeros(n, dtype=np.float64)
    if obj_tokens:
        names, coeffs = _parse_terms(obj_tokens, "objective")
        for name, a in zip(names, coeffs):
            c[resolve(name)] = sense * a

    constraints = []
    for tokens in row_lines:
        if len(tokens) >= 2 and tokens[1] == ":":
            tokens = tokens[2:]
        rel_pos = [k for k, t in enumerate(tokens) if t in ("<=", ">=", "=", "<", ">")]
        if len(rel_pos) != 1:
            raise ParseError(f"constraint must contain exactly one relation: {' '.join(tokens)}")
        k = rel_pos[0]
        rel_tok = tokens[k]
        if rel_tok in ("<", ">"):
            raise ParseError(f"unsupported relation {rel_tok!r}")
        lhs, rhs_tokens = tokens[:k], tokens[k + 1:]
        sign = 1.0
        while rhs_tokens and rhs_tokens[0] in "+-":
            if rhs_tokens[0] == "-":
                sign = -sign
            rhs_tokens = rhs_tokens[1:]
        if len(rhs_tokens) != 1 or not _is_number(rhs_tokens[0]):
            raise ParseError(f"right-hand side must be a single number: {' '.join(tokens)}")
        rhs = sign * float(rhs_tokens[0])
        names, coeffs = _parse_terms(lhs, "constraint row")
        if not names:
            raise ParseError("empty constraint row")
        idx = [resolve(name) for name in names]
        if rel_tok == ">=":
            coeffs = [-a for a in coeffs]
            rhs = -rhs
            rel = REL_LE
        else:
            rel = REL_LE if rel_tok == "<=" else REL_EQ
        constraints.append(make_constraint(idx, coeffs, rel, rhs))

    return IlpInstance(
        num_vars=n,
        objective=c,
        constraints=tuple(constraints),
        names=tuple(binary_names) if binary_names else None,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def to_lp(instance: IlpInstance) -> str:
    """Serialize to the supported LP subset; parse_lp(to_lp(p)) reproduces p."""
    lines = ["Minimize", " obj:"]
    terms = []
    for i in range(instance.num_vars):
        a = float(instance.objective[i])
        if a != 0.0:
            terms.append(f" + {_fmt(a)} {instance.var_name(i)}" if a >= 0
                         else f" - {_fmt(-a)} {instance.var_name(i)}")
    lines[1] += "".join(terms) if terms else ""
    lines.append("Subject To")
    for j, row in enumerate(instance.constraints):
        parts = [f" c{j + 1}:"]
        for i, a in zip(row.vars, row.coeffs):
            parts.append(f" + {_fmt(a)} {instance.var_name(i)}" if a >= 0
                         else f" - {_fmt(-a)} {instance.var_name(i)}")
        rel = "<=" if row.rel == REL_LE else "="
        parts.append(f" {rel} {_fmt(row.rhs)}")
        lines.append("".join(parts))
    lines.append("Binary")
    lines.append(" " + " ".join(instance.var_name(i) for i in range(instance.num_vars)))
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# JSON instance format
# ---------------------------------------------------------------------------

def to_json(instance: IlpInstance) -> str:
    doc = {
        "n": instance.num_vars,
        "c": [float(x) for x in instance.objective],
        "constraints": [
            {"vars": list(row.vars), "coeffs": list(row.coeffs), "rel": row.rel,
             "rhs": row.rhs}
            for row in instance.constraints
        ],
    }
    if instance.names is not None:
        doc["names"] = list(instance.names)
    return json.dumps(doc, indent=1) + "\n"


def from_json(text: str) -> IlpInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc}") from exc
    try:
        n = int(doc["n"])
        c = doc["c"]
        rows = doc["constraints"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing field in JSON instance: {exc}") from exc
    constraints = []
    for row in rows:
        rel = row.get("rel", REL_LE)
        if rel not in (REL_LE, REL_EQ):
            raise ParseError(f"unknown relation {rel!r} in JSON instance")
        try:
            constraints.append(make_constraint(row["vars"], row["coeffs"], rel, row["rhs"]))
        except ValueError as exc:
            raise ParseError(str(exc)) from exc
    names = tuple(doc["names"]) if "names" in doc else None
    try:
        return IlpInstance(num_vars=n, objective=np.asarray(c, dtype=np.float64),
                           constraints=tuple(constraints), names=names)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def load_instance(path: str) -> IlpInstance:
    """Read an instance from a .lp or .json file (decided by extension)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return from_json(text)
    return parse_lp(text)


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def generate_independent_set(n: int, p: float, seed: int) -> IlpInstance:
    """Maximum independent set on an Erdos-Renyi graph G(n, p) as a 0-1 ILP.

    Objective c_i = -1 for all vertices, one row x_u + x_v <= 1 per edge.
    Bit-deterministic in (n, p, seed): one uniform draw per vertex pair in
    lexicographic order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random(n * (n - 1) // 2)
    constraints = []
    k = 0
    for u in range(n):
        for v in range(u + 1, n):
            if draws[k] < p:
                constraints.append(Constraint(vars=(u, v), coeffs=(1.0, 1.0),
                                              rel=REL_LE, rhs=1.0))
            k += 1
    return IlpInstance(
        num_vars=n,
        objective=-np.ones(n, dtype=np.float64),
        constraints=tuple(constraints),
        names=tuple(f"x{i + 1}" for i in range(n)),
    )


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def decompose(instance: IlpInstance) -> Decomposition:
    """One subproblem per constraint; variables in no constraint are dropped
    from the dual (warning) and their optimal contribution min(c_i, 0) is
    reported as a constant bound offset."""
    subproblem_vars = tuple(row.vars for row in instance.constraints)
    j_lists: list[list[int]] = [[] for _ in range(instance.num_vars)]
    for j, row in enumerate(instance.constraints):
        for i in row.vars:
            j_lists[i].append(j)
    isolated = tuple(i for i in range(instance.num_vars) if not j_lists[i])
    if isolated:
        log.warning(
            "%d variable(s) appear in no constraint and are excluded from the dual: %s",
            len(isolated), [instance.var_name(i) for i in isolated[:8]],
        )
    offset = float(sum(min(float(instance.objective[i]), 0.0) for i in isolated))
    return Decomposition(
        subproblem_vars=subproblem_vars,
        var_subproblems=tuple(tuple(js) for js in j_lists),
        num_dual_vars=sum(len(row.vars) for row in instance.constraints),
        isolated=isolated,
        isolated_offset=offset,
    )


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------

def ordered_dot(coeffs, bits) -> float:
    """Objective of one assignment accumulated in ascending index order.

    Matches the accumulation order of BDD shortest-path sums so that equality
    comparisons between the oracle and the solver are exact for exactly
    representable data.
    """
    acc = 0.0
    for a, b in zip(coeffs, bits):
        acc = acc + (float(a) if b else 0.0)
    return acc


def enumerate_optimum(instance: IlpInstance) -> ExactSolution:
    """Exhaustive minimum over all 2^n assignments (n <= 25).

    Ties are broken toward the lexicographically smallest assignment.  Raises
    InfeasibleError when no assignment satisfies all constraints.
    """
    n = instance.num_vars
    if n > MAX_ENUM_VARS:
        raise ValueError(f"enumerate_optimum supports n <= {MAX_ENUM_VARS}, got {n}")
    total = 1 << n
    chunk = min(total, 1 << 20)
    best_val = math.inf
    best_key = None  # integer with x_1 as most significant bit
    c = instance.objective
    found = False
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        # bits[:, i] = value of variable i; bit i of idx taken so that idx
        # ascending == lexicographic ascending on (x_1 .. x_n).
        bits = ((idx[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.float64)
        feas = np.ones(len(idx), dtype=bool)
        for row in instance.constraints:
            act = np.zeros(len(idx))
            for i, a in zip(row.vars, row.coeffs):
                act += a * bits[:, i]
            if row.rel == REL_LE:
                feas &= act <= row.rhs
            else:
                feas &= act == row.rhs
        if not feas.any():
            continue
        # Ordered accumulation, vectorized over assignments.
        vals = np.zeros(len(idx))
        for i in range(n):
            vals = vals + c[i] * bits[:, i]
        vals = np.where(feas, vals, np.inf)
        k = int(np.argmin(vals))  # argmin returns first minimum = smallest key
        if vals[k] < best_val or (vals[k] == best_val and found and int(idx[k]) < best_key):
            best_val = float(vals[k])
            best_key = int(idx[k])
        found = found or bool(feas.any())
    if not found or best_key is None:
        raise InfeasibleError("instance has no feasible binary assignment")
    assignment = tuple((best_key >> (n - 1 - i)) & 1 for i in range(n))
    return ExactSolution(assignment=assignment, value=ordered_dot(c, assignment))


def tiny_instance() -> IlpInstance:
    """min -x1-x2-x3 s.t. x1+x2 <= 1, x2+x3 <= 1; the standard toy problem."""
    return IlpInstance(
        num_vars=3,
        objective=np.array([-1.0, -1.0, -1.0]),
        constraints=(
            Constraint(vars=(0, 1), coeffs=(1.0, 1.0), rel=REL_LE, rhs=1.0),
            Constraint(vars=(1, 2), coeffs=(1.0, 1.0), rel=REL_LE, rhs=1.0),
        ),
        names=("x1", "x2", "x3"),
    )
