"""Prompt template engine.

Templates are UTF-8 text files (extension ``.pt``) combining literal prompt
text with a small embedded statement language:

* lines starting with ``#`` are comments and render to nothing;
* a line starting with ``$ `` holds one statement, executed at render time;
* ``$begin`` ... ``$end`` wraps a multi-line statement block (statements
  start at column zero, nested suites are indented with spaces, tabs are a
  parse error);
* ``{{ expr }}`` inside a line is replaced by the expression value;
* everything else is emitted verbatim.

``print(...)`` inside directives and blocks appends a line to the rendered
output. ``read_template(name, key=value, ...)`` includes another template;
the included text is spliced without its trailing newline so the including
line controls line breaks.

Escapes: ``\\$`` at the start of a line emits a literal ``$``; ``\\{{``
emits literal braces.

The statement language is a closed subset of Python syntax: identifiers,
attribute access, indexing, literals (including f-strings), ``+ - * /``,
comparisons, ``and/or/not``, assignment, ``for``/``if``/``elif``/``else``,
and the callables ``print``, ``len``, ``enumerate``, ``range``, ``str``,
``join`` and ``read_template``. Anything else is rejected at parse time.

Rendering is deterministic: the same (template, bindings) pair always
produces byte-identical output, ending in exactly one newline (empty
templates render to the empty string). Unbound identifiers are a hard
error, never silent empty output.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

TEMPLATE_SUFFIX = ".pt"
MAX_INCLUDE_DEPTH = 16

# Placeholder for escaped "{{" while scanning a line for inline expressions.
_BRACE_SENTINEL = "\x00"


class TemplateError(Exception):
    """Base class for template parse/render failures."""

    def __init__(self, message: str, template: str = "<template>", line: Optional[int] = None):
        self.template = template
        self.line = line
        where = template if line is None else f"{template}:{line}"
        super().__init__(f"{where}: {message}")


class TemplateSyntaxError(TemplateError):
    pass


class TemplateRenderError(TemplateError):
    pass


class MissingTemplateError(TemplateError):
    pass


@dataclass
class LiteralLine:
    text: str
    lineno: int


@dataclass
class CommentLine:
    lineno: int


@dataclass
class Directive:
    statement: ast.stmt
    source: str
    lineno: int


@dataclass
class Block:
    statements: list
    source: str
    lineno: int  # line of the first statement (the line after $begin)


@dataclass
class InlineExprLine:
    # segments: ("text", str) or ("expr", ast.expr, source_snippet)
    segments: list
    lineno: int


Node = Union[LiteralLine, CommentLine, Directive, Block, InlineExprLine]


@dataclass
class TemplateAst:
    nodes: list = field(default_factory=list)
    name: str = "<template>"


# --- parsing ---------------------------------------------------------------

_ALLOWED_STMTS = (ast.Expr, ast.Assign, ast.For, ast.If, ast.Pass)
_ALLOWED_EXPRS = (
    ast.Name,
    ast.Constant,
    ast.Attribute,
    ast.Subscript,
    ast.Slice,
    ast.Tuple,
    ast.List,
    ast.Dict,
    ast.BinOp,
    ast.UnaryOp,
    ast.BoolOp,
    ast.Compare,
    ast.Call,
    ast.JoinedStr,
    ast.FormattedValue,
    ast.IfExp,
)
_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_ALLOWED_UNARYOPS = (ast.Not, ast.USub, ast.UAdd)
_ALLOWED_CMPOPS = (ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE)


def _validate_tree(tree: ast.AST, name: str, base_line: int) -> None:
    """Reject syntax outside the template statement language."""
    for node in ast.walk(tree):
        line = base_line + getattr(node, "lineno", 1) - 1
        if isinstance(node, (ast.Module, ast.Expression)):
            continue
        if isinstance(node, ast.stmt):
            if not isinstance(node, _ALLOWED_STMTS):
                raise TemplateSyntaxError(
                    f"statement not supported in templates: {type(node).__name__}", name, line
                )
            if isinstance(node, ast.Assign) and len(node.targets) != 1:
                raise TemplateSyntaxError("chained assignment not supported", name, line)
            if isinstance(node, (ast.For, ast.If)) and getattr(node, "orelse", None):
                pass  # else/elif branches are fine
            continue
        if isinstance(node, ast.expr):
            if not isinstance(node, _ALLOWED_EXPRS):
                raise TemplateSyntaxError(
                    f"expression not supported in templates: {type(node).__name__}", name, line
                )
            if isinstance(node, ast.BinOp) and not isinstance(node.op, _ALLOWED_BINOPS):
                raise TemplateSyntaxError(
                    f"operator not supported: {type(node.op).__name__}", name, line
                )
            if isinstance(node, ast.UnaryOp) and not isinstance(node.op, _ALLOWED_UNARYOPS):
                raise TemplateSyntaxError(
                    f"operator not supported: {type(node.op).__name__}", name, line
                )
            if isinstance(node, ast.Compare):
                for op in node.ops:
                    if not isinstance(op, _ALLOWED_CMPOPS):
                        raise TemplateSyntaxError(
                            f"comparison not supported: {type(op).__name__}", name, line
                        )
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name):
                    raise TemplateSyntaxError(
                        "only plain named callables may be called", name, line
                    )
                if any(kw.arg is None for kw in node.keywords):
                    raise TemplateSyntaxError("** argument unpacking not supported", name, line)
                if any(isinstance(a, ast.Starred) for a in node.args):
                    raise TemplateSyntaxError("* argument unpacking not supported", name, line)
            if isinstance(node, ast.Attribute) and node.attr.startswith("_"):
                raise TemplateSyntaxError("underscore attributes are not accessible", name, line)
            continue
        # expression contexts, operators, keywords, comprehension guards etc.
        if isinstance(
            node,
            (ast.Load, ast.Store, ast.operator, ast.unaryop, ast.boolop, ast.cmpop, ast.keyword),
        ):
            continue
        raise TemplateSyntaxError(
            f"construct not supported in templates: {type(node).__name__}", name, line
        )


def _parse_statements(source: str, name: str, base_line: int) -> list:
    if "\t" in "".join(ln[: len(ln) - len(ln.lstrip())] for ln in source.splitlines()):
        raise TemplateSyntaxError("tabs are not allowed in block indentation", name, base_line)
    try:
        tree = ast.parse(source, mode="exec")
    except SyntaxError as exc:
        line = base_line + (exc.lineno or 1) - 1
        raise TemplateSyntaxError(f"invalid statement: {exc.msg}", name, line) from exc
    _validate_tree(tree, name, base_line)
    return tree.body


def _parse_inline(line: str, name: str, lineno: int) -> Optional[InlineExprLine]:
    """Split a line on {{ expr }} markers; None when the line has no marker."""
    protected = line.replace("\\{{", _BRACE_SENTINEL)
    if "{{" not in protected:
        return None
    segments = []
    rest = protected
    while True:
        head, sep, tail = rest.partition("{{")
        if not sep:
            if "}}" in head:
                raise TemplateSyntaxError("'}}' without matching '{{'", name, lineno)
            if head:
                segments.append(("text", head.replace(_BRACE_SENTINEL, "{{")))
            break
        if "}}" in head:
            raise TemplateSyntaxError("'}}' without matching '{{'", name, lineno)
        if head:
            segments.append(("text", head.replace(_BRACE_SENTINEL, "{{")))
        expr_src, sep, rest = tail.partition("}}")
        if not sep:
            raise TemplateSyntaxError("'{{' without matching '}}'", name, lineno)
        try:
            expr = ast.parse(expr_src.strip(), mode="eval")
        except SyntaxError as exc:
            raise TemplateSyntaxError(f"invalid expression: {exc.msg}", name, lineno) from exc
        _validate_tree(expr, name, lineno)
        segments.append(("expr", expr.body, expr_src.strip()))
    return InlineExprLine(segments, lineno)


def parse(source: str, name: str = "<template>") -> TemplateAst:
    """Parse template text into an AST. Raises TemplateSyntaxError."""
    nodes = []
    # Split on "\n" only (not splitlines): unicode line separators inside a
    # line are content, and the final newline is not an extra blank line.
    lines = source.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    while i < len(lines):
        line = lines[i]
        lineno = i + 1
        stripped = line.rstrip()
        if line.startswith("\\$"):
            nodes.append(LiteralLine(line[1:], lineno))
        elif line.startswith("#"):
            nodes.append(CommentLine(lineno))
        elif stripped == "$begin":
            body = []
            j = i + 1
            while j < len(lines) and lines[j].rstrip() != "$end":
                j += 1
            if j >= len(lines):
                raise TemplateSyntaxError("'$begin' without matching '$end'", name, lineno)
            body = lines[i + 1 : j]
            statements = _parse_statements("\n".join(body), name, lineno + 1)
            nodes.append(Block(statements, "\n".join(body), lineno + 1))
            i = j
        elif stripped == "$end":
            raise TemplateSyntaxError("'$end' without matching '$begin'", name, lineno)
        elif line.startswith("$ "):
            statements = _parse_statements(line[2:].strip(), name, lineno)
            for stmt in statements:
                nodes.append(Directive(stmt, line[2:].strip(), lineno))
        elif line.startswith("$"):
            raise TemplateSyntaxError(
                "malformed directive (expected '$ <statement>', '$begin' or '$end')", name, lineno
            )
        else:
            inline = _parse_inline(line, name, lineno)
            if inline is not None:
                nodes.append(inline)
            else:
                nodes.append(LiteralLine(line.replace("\\{{", "{{"), lineno))
        i += 1
    return TemplateAst(nodes, name)


# --- rendering -------------------------------------------------------------

class _Interpreter:
    """Evaluates the template statement language against a scope dict."""

    def __init__(self, scope: dict, out: list, name: str, resolver, depth: int):
        self.scope = scope
        self.out = out
        self.name = name
        self.resolver = resolver
        self.depth = depth

    # -- errors

    def _err(self, message: str, line: int) -> TemplateRenderError:
        return TemplateRenderError(message, self.name, line)

    # -- builtins

    def _print(self, line: int, *args: Any) -> None:
        self.out.append(" ".join(_to_text(a) for a in args) + "\n")

    def _join(self, line: int, items: Any, sep: Any = ", ") -> str:
        try:
            return str(sep).join(_to_text(x) for x in items)
        except TypeError as exc:
            raise self._err(f"join() expects an iterable: {exc}", line) from exc

    def _read_template(self, line: int, template_name: Any, **bindings: Any) -> str:
        if self.resolver is None:
            raise self._err("read_template() is unavailable: no resolver configured", line)
        if self.depth + 1 > MAX_INCLUDE_DEPTH:
            raise self._err(
                f"recursive sub-template inclusion beyond depth {MAX_INCLUDE_DEPTH}", line
            )
        source = self.resolver(str(template_name))
        sub_ast = parse(source, str(template_name))
        text = _render_raw(sub_ast, bindings, self.resolver, self.depth + 1)
        # The including line supplies its own newline.
        return text.rstrip("\n")

    # -- statements

    def run(self, statements, base_line: int) -> None:
        for stmt in statements:
            self.exec_stmt(stmt, base_line)

    def exec_stmt(self, stmt: ast.stmt, base_line: int) -> None:
        line = base_line + getattr(stmt, "lineno", 1) - 1
        if isinstance(stmt, ast.Expr):
            self.eval(stmt.value, base_line)
        elif isinstance(stmt, ast.Assign):
            value = self.eval(stmt.value, base_line)
            self._bind(stmt.targets[0], value, line)
        elif isinstance(stmt, ast.For):
            seq = self.eval(stmt.iter, base_line)
            try:
                iterator = iter(seq)
            except TypeError as exc:
                raise self._err(f"cannot iterate over {type(seq).__name__}", line) from exc
            for item in iterator:
                self._bind(stmt.target, item, line)
                self.run(stmt.body, base_line)
            if stmt.orelse:
                self.run(stmt.orelse, base_line)
        elif isinstance(stmt, ast.If):
            if self.eval(stmt.test, base_line):
                self.run(stmt.body, base_line)
            else:
                self.run(stmt.orelse, base_line)
        elif isinstance(stmt, ast.Pass):
            pass
        else:  # pragma: no cover - parser whitelists statements
            raise self._err(f"statement not supported: {type(stmt).__name__}", line)

    def _bind(self, target: ast.expr, value: Any, line: int) -> None:
        if isinstance(target, ast.Name):
            self.scope[target.id] = value
        elif isinstance(target, ast.Tuple):
            try:
                values = list(value)
            except TypeError as exc:
                raise self._err("cannot unpack non-sequence", line) from exc
            if len(values) != len(target.elts):
                raise self._err(
                    f"cannot unpack {len(values)} values into {len(target.elts)} names", line
                )
            for elt, item in zip(target.elts, values):
                self._bind(elt, item, line)
        else:
            raise self._err("assignment target must be a name or tuple of names", line)

    # -- expressions

    def eval(self, node: ast.expr, base_line: int) -> Any:
        line = base_line + getattr(node, "lineno", 1) - 1
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in self.scope:
                raise self._err(f"unbound identifier '{node.id}'", line)
            return self.scope[node.id]
        if isinstance(node, ast.Attribute):
            obj = self.eval(node.value, base_line)
            if isinstance(obj, Mapping):
                if node.attr in obj:
                    return obj[node.attr]
                raise self._err(f"record has no field '{node.attr}'", line)
            if hasattr(obj, node.attr):
                return getattr(obj, node.attr)
            raise self._err(f"{type(obj).__name__} has no attribute '{node.attr}'", line)
        if isinstance(node, ast.Subscript):
            obj = self.eval(node.value, base_line)
            key = self.eval(node.slice, base_line)
            try:
                return obj[key]
            except (KeyError, IndexError, TypeError) as exc:
                raise self._err(f"bad index: {exc}", line) from exc
        if isinstance(node, ast.Slice):
            lower = self.eval(node.lower, base_line) if node.lower else None
            upper = self.eval(node.upper, base_line) if node.upper else None
            step = self.eval(node.step, base_line) if node.step else None
            return slice(lower, upper, step)
        if isinstance(node, ast.Tuple):
            return tuple(self.eval(e, base_line) for e in node.elts)
        if isinstance(node, ast.List):
            return [self.eval(e, base_line) for e in node.elts]
        if isinstance(node, ast.Dict):
            result = {}
            for k, v in zip(node.keys, node.values):
                if k is None:
                    raise self._err("** expansion not supported in dict literals", line)
                result[self.eval(k, base_line)] = self.eval(v, base_line)
            return result
        if isinstance(node, ast.BinOp):
            left = self.eval(node.left, base_line)
            right = self.eval(node.right, base_line)
            try:
                if isinstance(node.op, ast.Add):
                    return left + right
                if isinstance(node.op, ast.Sub):
                    return left - right
                if isinstance(node.op, ast.Mult):
                    return left * right
                return left / right
            except (TypeError, ZeroDivisionError) as exc:
                raise self._err(f"arithmetic error: {exc}", line) from exc
        if isinstance(node, ast.UnaryOp):
            value = self.eval(node.operand, base_line)
            if isinstance(node.op, ast.Not):
                return not value
            try:
                return -value if isinstance(node.op, ast.USub) else +value
            except TypeError as exc:
                raise self._err(f"arithmetic error: {exc}", line) from exc
        if isinstance(node, ast.BoolOp):
            if isinstance(node.op, ast.And):
                result = True
                for operand in node.values:
                    result = self.eval(operand, base_line)
                    if not result:
                        return result
                return result
            for operand in node.values:
                result = self.eval(operand, base_line)
                if result:
                    return result
            return result
        if isinstance(node, ast.Compare):
            left = self.eval(node.left, base_line)
            for op, comparator in zip(node.ops, node.comparators):
                right = self.eval(comparator, base_line)
                try:
                    ok = _compare(op, left, right)
                except TypeError as exc:
                    raise self._err(f"cannot compare values: {exc}", line) from exc
                if not ok:
                    return False
                left = right
            return True
        if isinstance(node, ast.IfExp):
            if self.eval(node.test, base_line):
                return self.eval(node.body, base_line)
            return self.eval(node.orelse, base_line)
        if isinstance(node, ast.JoinedStr):
            return "".join(self._format_part(part, base_line) for part in node.values)
        if isinstance(node, ast.FormattedValue):
            return self._format_part(node, base_line)
        if isinstance(node, ast.Call):
            return self._call(node, base_line, line)
        raise self._err(f"expression not supported: {type(node).__name__}", line)

    def _format_part(self, part: ast.expr, base_line: int) -> str:
        if isinstance(part, ast.Constant):
            return str(part.value)
        assert isinstance(part, ast.FormattedValue)
        value = self.eval(part.value, base_line)
        if part.conversion == 114:  # !r
            value = repr(value)
        elif part.conversion == 115:  # !s
            value = str(value)
        elif part.conversion == 97:  # !a
            value = ascii(value)
        spec = ""
        if part.format_spec is not None:
            spec = self.eval(part.format_spec, base_line)
        return format(value, spec)

    def _call(self, node: ast.Call, base_line: int, line: int) -> Any:
        builtins = {
            "print": self._print,
            "len": lambda ln, x: len(x),
            "enumerate": lambda ln, x, start=0: enumerate(x, start),
            "range": lambda ln, *a: range(*a),
            "str": lambda ln, x="": _to_text(x),
            "join": self._join,
            "read_template": self._read_template,
        }
        func_name = node.func.id
        if func_name not in builtins:
            raise self._err(f"callable not allowed: '{func_name}'", line)
        args = [self.eval(a, base_line) for a in node.args]
        kwargs = {kw.arg: self.eval(kw.value, base_line) for kw in node.keywords}
        try:
            return builtins[func_name](line, *args, **kwargs)
        except TemplateError:
            raise
        except Exception as exc:
            raise self._err(f"{func_name}() failed: {exc}", line) from exc


def _compare(op: ast.cmpop, left: Any, right: Any) -> bool:
    if isinstance(op, ast.Eq):
        return left == right
    if isinstance(op, ast.NotEq):
        return left != right
    if isinstance(op, ast.Lt):
        return left < right
    if isinstance(op, ast.LtE):
        return left <= right
    if isinstance(op, ast.Gt):
        return left > right
    return left >= right


def _to_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "True" if value else "False"
    return str(value)


def _render_raw(
    tpl: TemplateAst, bindings: Mapping[str, Any], resolver, depth: int
) -> str:
    scope = dict(bindings)
    out: list = []
    interp = _Interpreter(scope, out, tpl.name, resolver, depth)
    for node in tpl.nodes:
        if isinstance(node, LiteralLine):
            out.append(node.text + "\n")
        elif isinstance(node, CommentLine):
            continue
        elif isinstance(node, Directive):
            interp.exec_stmt(node.statement, node.lineno)
        elif isinstance(node, Block):
            interp.run(node.statements, node.lineno)
        elif isinstance(node, InlineExprLine):
            pieces = []
            for segment in node.segments:
                if segment[0] == "text":
                    pieces.append(segment[1])
                else:
                    pieces.append(_to_text(interp.eval(segment[1], node.lineno)))
            out.append("".join(pieces) + "\n")
        else:  # pragma: no cover
            raise TemplateRenderError(f"unknown node {node!r}", tpl.name)
    return "".join(out)


def render(
    tpl: TemplateAst,
    bindings: Mapping[str, Any],
    resolver: Optional[Callable[[str], str]] = None,
) -> str:
    """Render a parsed template with the given bindings.

    The output ends with exactly one newline unless it is empty. Raises
    TemplateRenderError for unbound identifiers, expression failures, and
    include errors (with template name and line attached).
    """
    text = _render_raw(tpl, bindings, resolver, depth=0)
    if not text.strip("\n"):
        return "" if not text else "\n"
    return text.rstrip("\n") + "\n"


class TemplateDir:
    """Resolves template names against a prompt-asset root directory."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def source(self, name: str) -> str:
        path = self.root / (name + TEMPLATE_SUFFIX)
        if not path.is_file():
            raise MissingTemplateError(f"no template file at {path}", name)
        return path.read_text(encoding="utf-8")

    def read(self, name: str, **bindings: Any) -> str:
        return render(parse(self.source(name), name), bindings, resolver=self.source)


def read_template(root: Union[str, Path], name: str, **bindings: Any) -> str:
    """Load ``<root>/<name>.pt``, render it, and return the text."""
    return TemplateDir(root).read(name, **bindings)
