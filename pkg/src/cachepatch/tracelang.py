"""Line-oriented trace DSL: parsing and execution.

Programs declare integer parameters and byte-addressable arrays, then run
affine loop nests of load/store/emit statements. Executing a program
yields the ordered list of emitted values (the observable output) plus the
byte-address stream of every load and store, which feeds the cache model.
One statement per line keeps every construct independently editable at
line granularity.

Grammar (one statement per line; blank lines and ``#`` comments ignored)::

    param NAME
    array NAME LENGTH ELEM_SIZE [index|zero]
    loop VAR LO HI          # VAR runs over [LO, HI); LO/HI contain no spaces
    end
    load NAME[EXPR]
    store NAME[EXPR]
    emit EXPR

LO, HI and every EXPR are affine integer expressions over parameters and
enclosing loop variables: terms like ``12``, ``i``, ``4*i`` or ``i*4``
joined with ``+`` or ``-``. ``emit`` may additionally reference ``sum``,
the running total of every value loaded so far. Array cells start out
holding their own index (``index``, the default) or zero (``zero``);
``store`` writes the current value of ``sum`` into the addressed cell.
Declarations live at top level and must precede their first use.

Arrays are laid out contiguously at 64-byte-aligned base addresses in
declaration order, so every address is a deterministic function of the
program text and its parameter bindings. Store-free programs whose emits
all sit at top level run on a vectorized path; anything else (and any run
that is going to fault) takes the plain interpreter, which is also the
reference the fast path is tested against.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "TraceParseError",
    "TraceRuntimeError",
    "AccessLimitExceeded",
    "Affine",
    "ArrayDecl",
    "Load",
    "Store",
    "Emit",
    "Loop",
    "TraceProgram",
    "TraceRun",
    "parse_trace_program",
    "run_trace_program",
    "canonical_bytes",
]

ARRAY_ALIGN = 64
SUM_REGISTER = "sum"
INT_LIMIT = 2**63


class TraceParseError(ValueError):
    """Rejected program text; message carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


class TraceRuntimeError(RuntimeError):
    """Runtime fault (out-of-bounds index, overflow, bad parameter binding).

    ``partial_emitted`` holds whatever the program emitted before failing,
    so error-path behaviour stays comparable against expected output.
    """

    def __init__(self, message: str, partial_emitted=()):
        super().__init__(message)
        self.partial_emitted = list(partial_emitted)


class AccessLimitExceeded(RuntimeError):
    """The run issued more memory accesses than the configured limit."""


@dataclass(frozen=True)
class Affine:
    """Affine integer expression: const + sum(coeff * var)."""

    const: int
    terms: tuple[tuple[str, int], ...]  # sorted by variable name, no zero coeffs

    def evaluate(self, env) -> int:
        total = self.const
        for var, coeff in self.terms:
            total += coeff * env[var]
        return total

    def as_obj(self):
        return [self.const, [[var, coeff] for var, coeff in self.terms]]


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    length: int
    elem_size: int
    init: str  # "index" or "zero"
    line_no: int


@dataclass(frozen=True)
class Load:
    array: str
    index: Affine
    line_no: int


@dataclass(frozen=True)
class Store:
    array: str
    index: Affine
    line_no: int


@dataclass(frozen=True)
class Emit:
    expr: Affine  # may reference the pseudo-variable "sum"
    line_no: int


@dataclass(frozen=True)
class Loop:
    var: str
    lo: Affine
    hi: Affine
    body: tuple["Stmt", ...]
    line_no: int


Stmt = Union[Load, Store, Emit, Loop]


@dataclass(frozen=True)
class TraceProgram:
    params: tuple[str, ...]
    arrays: tuple[ArrayDecl, ...]
    body: tuple[Stmt, ...]

    def base_addresses(self) -> dict[str, int]:
        bases = {}
        cursor = 0
        for decl in self.arrays:
            bases[decl.name] = cursor
            end = cursor + decl.length * decl.elem_size
            cursor = (end + ARRAY_ALIGN - 1) // ARRAY_ALIGN * ARRAY_ALIGN
        return bases

    def array(self, name: str) -> ArrayDecl:
        for decl in self.arrays:
            if decl.name == name:
                return decl
        raise KeyError(name)


@dataclass
class TraceRun:
    emitted: list[int]
    addresses: np.ndarray  # int64 byte addresses in execution order
    access_count: int
    access_size: int  # uniform element size when known, else 0 (mixed)
    sizes: np.ndarray | None = None  # per-access sizes when mixed


# --- parsing ----------------------------------------------------------------

_IDENT = r"[A-Za-z_][A-Za-z_0-9]*"
_PARAM_RE = re.compile(rf"^param\s+({_IDENT})$")
_ARRAY_RE = re.compile(rf"^array\s+({_IDENT})\s+(-?\d+)\s+(-?\d+)(?:\s+(index|zero))?$")
_LOOP_RE = re.compile(rf"^loop\s+({_IDENT})\s+(\S+)\s+(\S+)$")
_MEM_RE = re.compile(rf"^(load|store)\s+({_IDENT})\s*\[(.+)\]$")
_EMIT_RE = re.compile(r"^emit\s+(.+)$")
_TERM_RE = re.compile(rf"^(?:(\d+)|({_IDENT})|(\d+)\*({_IDENT})|({_IDENT})\*(\d+))$")


def _parse_affine(text: str, line_no: int, in_scope, allow_sum: bool) -> Affine:
    compact = text.replace(" ", "").replace("\t", "")
    if not compact:
        raise TraceParseError(line_no, "empty expression")
    pieces = re.findall(r"[+-]?[^+-]+", compact)
    if "".join(pieces) != compact:
        raise TraceParseError(line_no, f"malformed expression {text!r}")
    const = 0
    coeffs: dict[str, int] = {}
    for piece in pieces:
        sign = 1
        if piece[0] == "+":
            piece = piece[1:]
        elif piece[0] == "-":
            sign = -1
            piece = piece[1:]
        match = _TERM_RE.match(piece)
        if match is None:
            if "*" in piece:
                raise TraceParseError(
                    line_no, f"non-affine term {piece!r} (only constant * variable allowed)"
                )
            raise TraceParseError(line_no, f"malformed term {piece!r}")
        literal, bare, lit_coeff, var_a, var_b, lit_coeff_b = match.groups()
        if literal is not None:
            const += sign * int(literal)
            continue
        if bare is not None:
            var, coeff = bare, 1
        elif var_a is not None:
            var, coeff = var_a, int(lit_coeff)
        else:
            var, coeff = var_b, int(lit_coeff_b)
        if var == SUM_REGISTER:
            if not allow_sum:
                raise TraceParseError(line_no, "'sum' may only appear in emit expressions")
        elif var not in in_scope:
            raise TraceParseError(line_no, f"undeclared identifier {var!r}")
        coeffs[var] = coeffs.get(var, 0) + sign * coeff
    terms = tuple(sorted((v, c) for v, c in coeffs.items() if c != 0))
    return Affine(const=const, terms=terms)


def parse_trace_program(text: str) -> TraceProgram:
    """Parse program text; raises TraceParseError with a line number on any
    unbalanced loop/end, undeclared identifier, non-affine expression or
    malformed statement."""
    params: list[str] = []
    arrays: list[ArrayDecl] = []
    array_names: set[str] = set()
    top: list[Stmt] = []
    stack: list[tuple[str, Affine, Affine, int, list[Stmt]]] = []
    scope: list[str] = []  # loop variables currently in scope

    def declared() -> set[str]:
        return set(params) | set(scope)

    def sink() -> list[Stmt]:
        return stack[-1][4] if stack else top

    last_line_no = 0
    for line_no, raw in enumerate(text.split("\n"), start=1):
        last_line_no = line_no
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword = line.split(None, 1)[0]

        if keyword in ("param", "array"):
            if stack:
                raise TraceParseError(line_no, "declarations are not allowed inside loops")
            if keyword == "param":
                match = _PARAM_RE.match(line)
                if match is None:
                    raise TraceParseError(line_no, f"malformed param declaration {line!r}")
                name = match.group(1)
            else:
                match = _ARRAY_RE.match(line)
                if match is None:
                    raise TraceParseError(line_no, f"malformed array declaration {line!r}")
                name = match.group(1)
            if name == SUM_REGISTER:
                raise TraceParseError(line_no, "'sum' is a reserved name")
            if name in params or name in array_names:
                raise TraceParseError(line_no, f"duplicate declaration of {name!r}")
            if keyword == "param":
                params.append(name)
            else:
                length, esize = int(match.group(2)), int(match.group(3))
                if length < 1:
                    raise TraceParseError(line_no, "array length must be >= 1")
                if not 1 <= esize <= 8:
                    raise TraceParseError(line_no, "element size must be between 1 and 8 bytes")
                arrays.append(ArrayDecl(name, length, esize, match.group(4) or "index", line_no))
                array_names.add(name)
        elif keyword == "loop":
            match = _LOOP_RE.match(line)
            if match is None:
                raise TraceParseError(line_no, f"malformed loop header {line!r}")
            var, lo_s, hi_s = match.groups()
            if var == SUM_REGISTER:
                raise TraceParseError(line_no, "'sum' is a reserved name")
            if var in params or var in array_names or var in scope:
                raise TraceParseError(line_no, f"loop variable {var!r} is already in scope")
            lo = _parse_affine(lo_s, line_no, declared(), allow_sum=False)
            hi = _parse_affine(hi_s, line_no, declared(), allow_sum=False)
            stack.append((var, lo, hi, line_no, []))
            scope.append(var)
        elif keyword == "end":
            if line != "end":
                raise TraceParseError(line_no, f"malformed end {line!r}")
            if not stack:
                raise TraceParseError(line_no, "unbalanced 'end' (no open loop)")
            var, lo, hi, header_line, body = stack.pop()
            scope.pop()
            sink().append(Loop(var, lo, hi, tuple(body), header_line))
        elif keyword in ("load", "store"):
            match = _MEM_RE.match(line)
            if match is None:
                raise TraceParseError(line_no, f"malformed {keyword} statement {line!r}")
            op, name, index_s = match.groups()
            if name not in array_names:
                raise TraceParseError(line_no, f"undeclared array {name!r}")
            index = _parse_affine(index_s, line_no, declared(), allow_sum=False)
            node = Load(name, index, line_no) if op == "load" else Store(name, index, line_no)
            sink().append(node)
        elif keyword == "emit":
            match = _EMIT_RE.match(line)
            if match is None:
                raise TraceParseError(line_no, f"malformed emit statement {line!r}")
            sink().append(Emit(_parse_affine(match.group(1), line_no, declared(), True), line_no))
        else:
            raise TraceParseError(line_no, f"unknown statement {line!r}")

    if stack:
        raise TraceParseError(last_line_no, f"unbalanced loop: {len(stack)} missing 'end'")
    return TraceProgram(tuple(params), tuple(arrays), tuple(top))


def canonical_bytes(program: TraceProgram) -> bytes:
    """Structure-only serialization of the parse tree. Line numbers are
    deliberately excluded so textually different but structurally identical
    programs serialize to the same bytes (the dedup key for compiled
    candidates)."""

    def node_obj(node):
        if isinstance(node, Loop):
            return ["loop", node.var, node.lo.as_obj(), node.hi.as_obj(),
                    [node_obj(child) for child in node.body]]
        if isinstance(node, Load):
            return ["load", node.array, node.index.as_obj()]
        if isinstance(node, Store):
            return ["store", node.array, node.index.as_obj()]
        return ["emit", node.expr.as_obj()]

    obj = {
        "params": list(program.params),
        "arrays": [[a.name, a.length, a.elem_size, a.init] for a in program.arrays],
        "body": [node_obj(node) for node in program.body],
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


# --- execution ---------------------------------------------------------------


def run_trace_program(program: TraceProgram, bindings, access_limit: int,
                      force_slow: bool = False) -> TraceRun:
    """Execute a program under the given parameter bindings.

    Returns the emitted values and the ordered access stream. Raises
    TraceRuntimeError for out-of-bounds indices, overflow or bad bindings,
    and AccessLimitExceeded once more than ``access_limit`` accesses have
    been issued (the simulator's timeout analogue).
    """
    if access_limit < 1:
        raise ValueError("access_limit must be >= 1")
    env = _check_bindings(program, bindings)
    if not force_slow and _fast_path_eligible(program):
        total = _count_accesses(program.body, env)
        if total > access_limit:
            raise AccessLimitExceeded(f"{total} accesses exceed limit {access_limit}")
        if _bounds_ok(program, env):
            return _run_fast(program, env, total)
        # A fault is certain; re-run on the interpreter for the exact
        # first-in-execution-order error and partial output.
    return _run_slow(program, env, access_limit)


def _check_bindings(program: TraceProgram, bindings) -> dict[str, int]:
    env = {}
    for name, value in dict(bindings).items():
        if name not in program.params:
            raise TraceRuntimeError(f"unknown parameter binding {name!r}")
        if not isinstance(value, int) or isinstance(value, bool):
            raise TraceRuntimeError(f"parameter {name!r} must be bound to an integer")
        env[name] = value
    for name in program.params:
        if name not in env:
            raise TraceRuntimeError(f"unbound parameter {name!r}")
    return env


def _fast_path_eligible(program: TraceProgram) -> bool:
    """Vectorizable: store-free, emits only at top level, loop bounds that
    depend on parameters only (rectangular iteration spaces)."""

    def walk(nodes, depth):
        for node in nodes:
            if isinstance(node, Store):
                return False
            if isinstance(node, Emit) and depth > 0:
                return False
            if isinstance(node, Loop):
                bound_vars = [v for v, _ in node.lo.terms] + [v for v, _ in node.hi.terms]
                if any(v not in program.params for v in bound_vars):
                    return False
                if not walk(node.body, depth + 1):
                    return False
        return True

    return walk(program.body, 0)


def _count_accesses(nodes, env) -> int:
    total = 0
    for node in nodes:
        if isinstance(node, (Load, Store)):
            total += 1
        elif isinstance(node, Loop):
            count = max(0, node.hi.evaluate(env) - node.lo.evaluate(env))
            if count:
                total += count * _count_accesses(node.body, env)
    return total


def _bounds_ok(program: TraceProgram, env) -> bool:
    """Exact feasibility check: affine indices over rectangular boxes attain
    their extremes at box corners, so interval arithmetic decides whether
    any executed access would be out of bounds."""

    def walk(nodes, ranges) -> bool:
        for node in nodes:
            if isinstance(node, Loop):
                lo, hi = node.lo.evaluate(env), node.hi.evaluate(env)
                if hi <= lo:
                    continue  # empty loop: body never executes
                if not walk(node.body, {**ranges, node.var: (lo, hi - 1)}):
                    return False
            elif isinstance(node, (Load, Store)):
                low = high = node.index.const
                for var, coeff in node.index.terms:
                    if var in env:
                        low += coeff * env[var]
                        high += coeff * env[var]
                    else:
                        a, b = ranges[var]
                        low += min(coeff * a, coeff * b)
                        high += max(coeff * a, coeff * b)
                decl = program.array(node.array)
                if low < 0 or high >= decl.length:
                    return False
                if abs(low) >= INT_LIMIT or abs(high) >= INT_LIMIT:
                    return False
        return True

    return walk(program.body, {})


def _expand_block(nodes, program, env, bases):
    """Expand a store-free, emit-free statement block into aligned arrays:

    returns (addresses, addr_coeffs, values, value_coeffs, sizes) where the
    coefficient dicts map still-open loop variables to per-element
    coefficient arrays. Once every enclosing loop is expanded the
    coefficient dicts are empty and ``addresses`` is the concrete stream.
    """
    seq = []
    for node in nodes:
        if isinstance(node, Load):
            decl = program.array(node.array)
            const = node.index.const
            addr_coeffs = {}
            value_coeffs = {}
            for var, coeff in node.index.terms:
                if var in env:
                    const += coeff * env[var]
                else:
                    addr_coeffs[var] = np.array([coeff * decl.elem_size], dtype=np.int64)
                    if decl.init == "index":
                        value_coeffs[var] = np.array([coeff], dtype=np.int64)
            address = np.array([bases[node.array] + const * decl.elem_size], dtype=np.int64)
            value = np.array([const if decl.init == "index" else 0], dtype=np.int64)
            size = np.array([decl.elem_size], dtype=np.int64)
            seq.append((address, addr_coeffs, value, value_coeffs, size))
        elif isinstance(node, Loop):
            lo, hi = node.lo.evaluate(env), node.hi.evaluate(env)
            count = max(0, hi - lo)
            if count == 0:
                continue
            addresses, addr_coeffs, values, value_coeffs, sizes = _expand_block(
                node.body, program, env, bases)
            length = addresses.size
            if length == 0:
                continue
            reps = np.repeat(np.arange(lo, hi, dtype=np.int64), length)
            addresses = np.tile(addresses, count)
            values = np.tile(values, count)
            sizes = np.tile(sizes, count)
            a_var = addr_coeffs.pop(node.var, None)
            if a_var is not None:
                addresses = addresses + reps * np.tile(a_var, count)
            v_var = value_coeffs.pop(node.var, None)
            if v_var is not None:
                values = values + reps * np.tile(v_var, count)
            addr_coeffs = {v: np.tile(c, count) for v, c in addr_coeffs.items()}
            value_coeffs = {v: np.tile(c, count) for v, c in value_coeffs.items()}
            seq.append((addresses, addr_coeffs, values, value_coeffs, sizes))
        # Emit nodes cannot occur here (fast path keeps them at top level).

    if not seq:
        empty = np.zeros(0, dtype=np.int64)
        return empty, {}, empty.copy(), {}, empty.copy()
    if len(seq) == 1:
        return seq[0]
    all_addr_vars = set().union(*(part[1].keys() for part in seq))
    all_value_vars = set().union(*(part[3].keys() for part in seq))
    addresses = np.concatenate([part[0] for part in seq])
    values = np.concatenate([part[2] for part in seq])
    sizes = np.concatenate([part[4] for part in seq])

    def gather(var, index):
        return np.concatenate([
            part[index].get(var, np.zeros(part[0].size, dtype=np.int64)) for part in seq
        ])

    addr_coeffs = {var: gather(var, 1) for var in all_addr_vars}
    value_coeffs = {var: gather(var, 3) for var in all_value_vars}
    return addresses, addr_coeffs, values, value_coeffs, sizes


def _safe_int_sum(values: np.ndarray, program: TraceProgram) -> int:
    # int64 accumulation is fine unless max-cell-value * count could reach
    # 2**62; fall back to exact Python ints in that (pathological) case.
    max_len = max((decl.length for decl in program.arrays), default=1)
    if max_len * max(values.size, 1) < 2**62:
        return int(values.sum(dtype=np.int64))
    return sum(int(v) for v in values)


def _run_fast(program: TraceProgram, env, total_accesses: int) -> TraceRun:
    bases = program.base_addresses()
    emitted: list[int] = []
    chunks: list[np.ndarray] = []
    size_chunks: list[np.ndarray] = []
    running_sum = 0
    for node in program.body:
        if isinstance(node, Emit):
            value = node.expr.evaluate({**env, SUM_REGISTER: running_sum})
            if abs(value) >= INT_LIMIT:
                raise TraceRuntimeError("arithmetic overflow in emit",
                                        partial_emitted=emitted)
            emitted.append(value)
        else:
            addresses, addr_coeffs, values, value_coeffs, sizes = _expand_block(
                [node], program, env, bases)
            assert not addr_coeffs and not value_coeffs
            if addresses.size:
                chunks.append(addresses)
                size_chunks.append(sizes)
                running_sum += _safe_int_sum(values, program)
                if abs(running_sum) >= INT_LIMIT:
                    raise TraceRuntimeError("arithmetic overflow in sum",
                                            partial_emitted=emitted)
    if chunks:
        addresses = np.concatenate(chunks)
        sizes = np.concatenate(size_chunks)
    else:
        addresses = np.zeros(0, dtype=np.int64)
        sizes = np.zeros(0, dtype=np.int64)
    uniform = int(sizes[0]) if sizes.size and np.all(sizes == sizes[0]) else 0
    return TraceRun(emitted=emitted, addresses=addresses,
                    access_count=int(addresses.size),
                    access_size=uniform,
                    sizes=None if uniform else sizes)


def _run_slow(program: TraceProgram, env, access_limit: int) -> TraceRun:
    """Reference interpreter: handles stores, emits anywhere, loop bounds
    over outer loop variables, and reports the first fault precisely."""
    bases = program.base_addresses()
    contents: dict[str, np.ndarray] = {}
    for decl in program.arrays:
        if decl.init == "index":
            contents[decl.name] = np.arange(decl.length, dtype=np.int64)
        else:
            contents[decl.name] = np.zeros(decl.length, dtype=np.int64)

    emitted: list[int] = []
    addresses: list[int] = []
    sizes: list[int] = []
    state = {"sum": 0, "count": 0}
    scope: dict[str, int] = dict(env)

    def touch(node, writing: bool):
        decl = program.array(node.array)
        index = node.index.evaluate(scope)
        if abs(index) >= INT_LIMIT:
            raise TraceRuntimeError(
                f"line {node.line_no}: arithmetic overflow in index expression",
                partial_emitted=emitted)
        if not 0 <= index < decl.length:
            raise TraceRuntimeError(
                f"line {node.line_no}: index {index} out of bounds for "
                f"array {node.array}[{decl.length}]",
                partial_emitted=emitted)
        state["count"] += 1
        if state["count"] > access_limit:
            raise AccessLimitExceeded(
                f"access limit {access_limit} exceeded at line {node.line_no}")
        addresses.append(bases[node.array] + index * decl.elem_size)
        sizes.append(decl.elem_size)
        if writing:
            contents[node.array][index] = state["sum"]
        else:
            state["sum"] += int(contents[node.array][index])
            if abs(state["sum"]) >= INT_LIMIT:
                raise TraceRuntimeError(
                    f"line {node.line_no}: arithmetic overflow in sum",
                    partial_emitted=emitted)

    def execute(nodes):
        for node in nodes:
            if isinstance(node, Load):
                touch(node, writing=False)
            elif isinstance(node, Store):
                touch(node, writing=True)
            elif isinstance(node, Emit):
                value = node.expr.evaluate({**scope, SUM_REGISTER: state["sum"]})
                if abs(value) >= INT_LIMIT:
                    raise TraceRuntimeError(
                        f"line {node.line_no}: arithmetic overflow in emit",
                        partial_emitted=emitted)
                emitted.append(value)
            else:
                lo = node.lo.evaluate(scope)
                hi = node.hi.evaluate(scope)
                for value in range(lo, hi):
                    scope[node.var] = value
                    execute(node.body)
                scope.pop(node.var, None)

    execute(program.body)
    addr_array = np.array(addresses, dtype=np.int64) if addresses else np.zeros(0, np.int64)
    size_array = np.array(sizes, dtype=np.int64) if sizes else np.zeros(0, np.int64)
    uniform = int(size_array[0]) if size_array.size and np.all(size_array == size_array[0]) else 0
    return TraceRun(emitted=emitted, addresses=addr_array,
                    access_count=len(addresses),
                    access_size=uniform,
                    sizes=None if uniform else size_array)
