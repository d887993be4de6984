"""The skill language: parsing, validation, rendering, and templates.

A program is a sequence of skill calls, e.g.::

    move_to(pose(0.5,-0.3,0.2,0,0,0));
    close_gripper()

Calls are separated by semicolons and/or newlines.  Argument literals are
numbers (meters / radians), ``pose(x,y,z,roll,pitch,yaw)`` literals,
double-quoted strings (used as object references where the registry expects
one), and ``true``/``false``.  There is deliberately no control flow.

Templates lift literal values out of a successful program: pose literals
that match a scene object become pose lookups, numbers that match an object
dimension become dimension lookups, and everything else becomes a free
parameter with the original literal as its default.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union


class DslError(Exception):
    pass


class DslSyntaxError(DslError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class MissingObjectError(DslError):
    def __init__(self, label: str):
        super().__init__(f"scene has no object labeled {label!r}")
        self.label = label


class MissingParamError(DslError):
    def __init__(self, name: str):
        super().__init__(f"no assignment for template parameter {name!r}")
        self.name = name


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Pose:
    xyzrpy: tuple  # (x, y, z, roll, pitch, yaw)

    def __post_init__(self):
        object.__setattr__(self, "xyzrpy", tuple(float(v) for v in self.xyzrpy))
        if len(self.xyzrpy) != 6:
            raise ValueError("pose literal needs exactly 6 components")


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Bool:
    value: bool


@dataclass(frozen=True)
class Slot:
    """Placeholder inside a template body; ``index`` points into the
    template's binding list."""

    index: int


Value = Union[Num, Pose, Str, Bool, Slot]


@dataclass(frozen=True)
class SkillCall:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class SkillProgram:
    calls: tuple

    def __post_init__(self):
        if not self.calls:
            raise ValueError("a skill program must contain at least one call")

    @property
    def source_text(self) -> str:
        return render(self)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<newline>\r?\n)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<punct>[();,])
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        raw = m.group()
        if kind == "newline":
            tokens.append(_Token("sep", "\n", line, col))
            line += 1
            col = 1
        else:
            if kind == "punct" and raw == ";":
                tokens.append(_Token("sep", ";", line, col))
            elif kind != "ws":
                tokens.append(_Token(kind, raw, line, col))
            col += len(raw)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text if text is not None else kind
            got = tok.text if tok.text else "end of input"
            raise DslSyntaxError(f"expected {want!r}, got {got!r}", tok.line, tok.column)
        return self.next()

    def skip_seps(self):
        while self.peek().kind == "sep":
            self.next()

    def program(self) -> SkillProgram:
        calls = []
        self.skip_seps()
        while self.peek().kind != "eof":
            calls.append(self.call())
            if self.peek().kind == "sep":
                self.skip_seps()
            elif self.peek().kind != "eof":
                tok = self.peek()
                raise DslSyntaxError(
                    f"expected ';' or newline before {tok.text!r}", tok.line, tok.column
                )
        if not calls:
            tok = self.peek()
            raise DslSyntaxError("empty program", tok.line, tok.column)
        return SkillProgram(tuple(calls))

    def call(self) -> SkillCall:
        name = self.expect("ident").text
        self.expect("punct", "(")
        args = []
        if not (self.peek().kind == "punct" and self.peek().text == ")"):
            args.append(self.value(allow_pose=True))
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.next()
                args.append(self.value(allow_pose=True))
        self.expect("punct", ")")
        return SkillCall(name, tuple(args))

    def value(self, allow_pose: bool) -> Value:
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            return Num(float(tok.text))
        if tok.kind == "string":
            self.next()
            body = tok.text[1:-1]
            return Str(body.replace('\\"', '"').replace("\\\\", "\\"))
        if tok.kind == "ident":
            if tok.text in ("true", "false"):
                self.next()
                return Bool(tok.text == "true")
            if tok.text == "pose" and allow_pose:
                self.next()
                self.expect("punct", "(")
                comps = [self.number()]
                for _ in range(5):
                    self.expect("punct", ",")
                    comps.append(self.number())
                self.expect("punct", ")")
                return Pose(tuple(comps))
        raise DslSyntaxError(
            f"expected a literal, got {tok.text or 'end of input'!r}", tok.line, tok.column
        )

    def number(self) -> float:
        tok = self.expect("number")
        return float(tok.text)


def parse(text: str) -> SkillProgram:
    """Parse DSL source into a :class:`SkillProgram`.

    Raises :class:`DslSyntaxError` with line/column on malformed input,
    including empty input.
    """
    if not text or not text.strip():
        raise DslSyntaxError("empty program", 1, 1)
    return _Parser(_tokenize(text)).program()


# ---------------------------------------------------------------------------
# Rendering


def _fmt_num(v: float) -> str:
    # repr(float) is the shortest round-trip form and is parse-stable.
    return repr(float(v))


def _render_value(v: Value) -> str:
    if isinstance(v, Num):
        return _fmt_num(v.value)
    if isinstance(v, Pose):
        return "pose(" + ",".join(_fmt_num(c) for c in v.xyzrpy) + ")"
    if isinstance(v, Str):
        return '"' + v.value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, Bool):
        return "true" if v.value else "false"
    if isinstance(v, Slot):
        raise DslError("cannot render an uninstantiated template slot")
    raise DslError(f"unknown value {v!r}")


def _render_call(call: SkillCall) -> str:
    return f"{call.name}(" + ", ".join(_render_value(a) for a in call.args) + ")"


def render(program: SkillProgram) -> str:
    """Canonical text form: one call per line, ';'-terminated except the last."""
    return ";\n".join(_render_call(c) for c in program.calls)


# ---------------------------------------------------------------------------
# Registry and validation


class Kind(enum.Enum):
    NUM = "number"
    POSE = "pose"
    OBJ = "object"
    STR = "string"
    BOOL = "bool"


@dataclass(frozen=True)
class Signature:
    name: str
    params: tuple
    description: str


@dataclass(frozen=True)
class ValidationIssue:
    call_index: int
    message: str

    def __str__(self):
        return f"call {self.call_index}: {self.message}"


class SkillRegistry:
    def __init__(self):
        self._signatures: dict = {}

    def register(self, name: str, params: Sequence[Kind], description: str) -> None:
        if name in self._signatures:
            raise ValueError(f"skill {name!r} already registered")
        if not description:
            raise ValueError("skill description must be non-empty")
        self._signatures[name] = Signature(name, tuple(params), description)

    def signature(self, name: str) -> Optional[Signature]:
        return self._signatures.get(name)

    @property
    def signatures(self) -> Mapping[str, Signature]:
        return dict(self._signatures)

    def names(self) -> list:
        return sorted(self._signatures)


_KIND_ACCEPTS = {
    Kind.NUM: (Num,),
    Kind.POSE: (Pose,),
    Kind.OBJ: (Str,),
    Kind.STR: (Str,),
    Kind.BOOL: (Bool,),
}


def validate(program: SkillProgram, registry: SkillRegistry) -> list:
    """Check every call against the registry.  Returns a list of
    :class:`ValidationIssue`; empty means the program is well-formed."""
    issues = []
    for i, call in enumerate(program.calls):
        sig = registry.signature(call.name)
        if sig is None:
            issues.append(ValidationIssue(i, f"unknown skill {call.name!r}"))
            continue
        if len(call.args) != len(sig.params):
            issues.append(
                ValidationIssue(
                    i,
                    f"{call.name} expects {len(sig.params)} argument(s), got {len(call.args)}",
                )
            )
            continue
        for j, (arg, kind) in enumerate(zip(call.args, sig.params)):
            if not isinstance(arg, _KIND_ACCEPTS[kind]):
                issues.append(
                    ValidationIssue(
                        i,
                        f"{call.name} argument {j} must be a {kind.value}, "
                        f"got {type(arg).__name__.lower()}",
                    )
                )
    return issues


def default_registry() -> SkillRegistry:
    """The built-in skill library executed by the simulated environment."""
    r = SkillRegistry()
    r.register("move_to", [Kind.POSE], "Move the end-effector in a straight line to the given pose.")
    r.register(
        "move_delta",
        [Kind.NUM, Kind.NUM, Kind.NUM],
        "Translate the end-effector by (dx, dy, dz) meters.",
    )
    r.register(
        "grasp",
        [Kind.OBJ],
        "Close the gripper on the named object; it must be graspable and within reach.",
    )
    r.register("release", [], "Open the gripper and let go of whatever is held.")
    r.register("open_gripper", [], "Open the gripper fingers without moving.")
    r.register("close_gripper", [], "Close the gripper fingers without moving.")
    r.register(
        "rotate_joint",
        [Kind.OBJ, Kind.NUM],
        "Advance the articulated joint attached to the named handle by the given "
        "angle/displacement; the handle must currently be grasped.",
    )
    r.register("set_yaw", [Kind.NUM], "Rotate the end-effector about the vertical axis to the given yaw.")
    return r


# ---------------------------------------------------------------------------
# Templates

MATCH_TOL = 1e-6  # component-wise literal-to-scene match tolerance


@dataclass(frozen=True)
class ObjectPoseBinding:
    label: str


@dataclass(frozen=True)
class ObjectDimBinding:
    label: str
    axis: int  # 0=x, 1=y, 2=z


@dataclass(frozen=True)
class FreeParamBinding:
    name: str


Binding = Union[ObjectPoseBinding, ObjectDimBinding, FreeParamBinding]


@dataclass(frozen=True)
class TemplateParam:
    name: str
    kind: str  # "number" | "pose"
    default: Value


@dataclass(frozen=True)
class Template:
    name: str
    params: tuple  # of TemplateParam
    bindings: tuple  # slot index -> Binding
    body: SkillProgram  # contains Slot values

    def default_args(self) -> dict:
        return {p.name: p.default for p in self.params}


def _pose_matches(lit: Pose, pose: Sequence[float]) -> bool:
    return all(abs(a - b) <= MATCH_TOL for a, b in zip(lit.xyzrpy, pose))


def templatize(program: SkillProgram, scene, name: str = "template") -> Template:
    """Lift scene-dependent literals out of a successful program.

    ``scene`` must expose ``labels() -> iterable[str]``,
    ``pose_of(label) -> (x,y,z,r,p,y)`` and ``dims_of(label) -> (dx,dy,dz)``.
    Deterministic: scene labels are consulted in sorted order.
    """
    labels = sorted(scene.labels())
    bindings = []
    params = []
    new_calls = []
    for call in program.calls:
        new_args = []
        for arg in call.args:
            binding = None
            if isinstance(arg, Pose):
                for label in labels:
                    if _pose_matches(arg, scene.pose_of(label)):
                        binding = ObjectPoseBinding(label)
                        break
                if binding is None:
                    pname = f"p{len(params)}"
                    params.append(TemplateParam(pname, "pose", arg))
                    binding = FreeParamBinding(pname)
            elif isinstance(arg, Num):
                for label in labels:
                    dims = scene.dims_of(label)
                    if dims is None:
                        continue
                    for axis in range(3):
                        if abs(arg.value - dims[axis]) <= MATCH_TOL:
                            binding = ObjectDimBinding(label, axis)
                            break
                    if binding is not None:
                        break
                if binding is None:
                    pname = f"p{len(params)}"
                    params.append(TemplateParam(pname, "number", arg))
                    binding = FreeParamBinding(pname)
            if binding is None:
                new_args.append(arg)
            else:
                new_args.append(Slot(len(bindings)))
                bindings.append(binding)
        new_calls.append(SkillCall(call.name, tuple(new_args)))
    return Template(name, tuple(params), tuple(bindings), SkillProgram(tuple(new_calls)))


def instantiate(
    template: Template,
    scene,
    args: Optional[Mapping[str, Value]] = None,
    object_map: Optional[Mapping[str, str]] = None,
) -> SkillProgram:
    """Fill a template's slots against a scene.

    ``args`` assigns free parameters (every free parameter must be
    assigned; use ``template.default_args()`` to reproduce the original
    literals).  ``object_map`` remaps template object labels onto the
    current scene, e.g. ``{"toaster handle": "cabinet handle"}``.
    """
    args = dict(args or {})
    object_map = dict(object_map or {})
    labels = set(scene.labels())

    def mapped(label: str) -> str:
        target = object_map.get(label, label)
        if target not in labels:
            raise MissingObjectError(target)
        return target

    resolved = []
    for binding in template.bindings:
        if isinstance(binding, ObjectPoseBinding):
            resolved.append(Pose(tuple(scene.pose_of(mapped(binding.label)))))
        elif isinstance(binding, ObjectDimBinding):
            dims = scene.dims_of(mapped(binding.label))
            resolved.append(Num(float(dims[binding.axis])))
        else:
            if binding.name not in args:
                raise MissingParamError(binding.name)
            resolved.append(args[binding.name])

    calls = []
    for call in template.body.calls:
        new_args = []
        for arg in call.args:
            if isinstance(arg, Slot):
                new_args.append(resolved[arg.index])
            elif isinstance(arg, Str) and arg.value in object_map:
                new_args.append(Str(mapped(arg.value)))
            else:
                new_args.append(arg)
        calls.append(SkillCall(call.name, tuple(new_args)))
    return SkillProgram(tuple(calls))


def _render_binding(b: Binding) -> str:
    if isinstance(b, ObjectPoseBinding):
        return f'object("{b.label}").pose'
    if isinstance(b, ObjectDimBinding):
        return f'object("{b.label}").dims[{b.axis}]'
    return b.name


def render_template(t: Template) -> str:
    """Readable template source, used when injecting templates into prompts."""
    header_params = ", ".join(
        f"{p.name}: {p.kind} = {_render_value(p.default)}" for p in t.params
    )
    lines = [f"template {t.name}({header_params}):"]
    for i, call in enumerate(t.body.calls):
        parts = []
        for arg in call.args:
            if isinstance(arg, Slot):
                parts.append(_render_binding(t.bindings[arg.index]))
            else:
                parts.append(_render_value(arg))
        suffix = ";" if i < len(t.body.calls) - 1 else ""
        lines.append(f"  {call.name}(" + ", ".join(parts) + ")" + suffix)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Template serialization (used by the skillbook file format)


def _value_to_json(v: Value):
    if isinstance(v, Num):
        return {"t": "num", "v": v.value}
    if isinstance(v, Pose):
        return {"t": "pose", "v": list(v.xyzrpy)}
    if isinstance(v, Str):
        return {"t": "str", "v": v.value}
    if isinstance(v, Bool):
        return {"t": "bool", "v": v.value}
    if isinstance(v, Slot):
        return {"t": "slot", "v": v.index}
    raise DslError(f"unknown value {v!r}")


def _value_from_json(d) -> Value:
    t, v = d["t"], d["v"]
    if t == "num":
        return Num(float(v))
    if t == "pose":
        return Pose(tuple(v))
    if t == "str":
        return Str(v)
    if t == "bool":
        return Bool(bool(v))
    if t == "slot":
        return Slot(int(v))
    raise DslError(f"unknown serialized value tag {t!r}")


def _binding_to_json(b: Binding):
    if isinstance(b, ObjectPoseBinding):
        return {"t": "object_pose", "label": b.label}
    if isinstance(b, ObjectDimBinding):
        return {"t": "object_dim", "label": b.label, "axis": b.axis}
    return {"t": "free", "name": b.name}


def _binding_from_json(d) -> Binding:
    if d["t"] == "object_pose":
        return ObjectPoseBinding(d["label"])
    if d["t"] == "object_dim":
        return ObjectDimBinding(d["label"], int(d["axis"]))
    if d["t"] == "free":
        return FreeParamBinding(d["name"])
    raise DslError(f"unknown serialized binding tag {d['t']!r}")


def program_to_json(p: SkillProgram):
    return [
        {"name": c.name, "args": [_value_to_json(a) for a in c.args]} for c in p.calls
    ]


def program_from_json(data) -> SkillProgram:
    return SkillProgram(
        tuple(
            SkillCall(c["name"], tuple(_value_from_json(a) for a in c["args"]))
            for c in data
        )
    )


def template_to_json(t: Template) -> dict:
    return {
        "name": t.name,
        "params": [
            {"name": p.name, "kind": p.kind, "default": _value_to_json(p.default)}
            for p in t.params
        ],
        "bindings": [_binding_to_json(b) for b in t.bindings],
        "body": program_to_json(t.body),
    }


def template_from_json(d: dict) -> Template:
    return Template(
        d["name"],
        tuple(
            TemplateParam(p["name"], p["kind"], _value_from_json(p["default"]))
            for p in d["params"]
        ),
        tuple(_binding_from_json(b) for b in d["bindings"]),
        program_from_json(d["body"]),
    )
