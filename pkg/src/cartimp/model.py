"""Robot description parsing and serial-chain extraction.

Supports the subset of URDF needed for fixed-base revolute arms: ``robot``,
``link`` with ``inertial`` (``origin``, ``mass``, ``inertia``), and ``joint``
(``revolute`` or ``fixed``) with ``parent``, ``child``, ``origin``, ``axis``
and ``limit``. Anything else is skipped and reported in
:attr:`RobotModel.warnings`.
"""

from __future__ import annotations

import math
import xml.parsers.expat
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ModelSemanticError, ModelSyntaxError, PathError
from .spatial import rpy_to_matrix

SUPPORTED_JOINTS = ("revolute", "fixed")
REJECTED_JOINTS = ("prismatic", "continuous", "planar", "floating")

_AXIS_TOL = 1e-9
_SYM_TOL = 1e-12


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str
    parent: str
    child: str
    xyz: tuple = (0.0, 0.0, 0.0)
    rpy: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)
    lower: float | None = None
    upper: float | None = None
    effort: float | None = None

    @property
    def position_limits(self):
        if self.lower is None:
            return None
        return (self.lower, self.upper)


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float = 0.0
    com: tuple = (0.0, 0.0, 0.0)
    # 3x3 inertia about the centre of mass, expressed in the link frame
    inertia: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    @property
    def inertia_matrix(self):
        return np.array(self.inertia, dtype=float)


@dataclass(frozen=True)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    root: str
    warnings: tuple = field(default=(), compare=False)

    def link(self, name):
        for link in self.links:
            if link.name == name:
                return link
        raise KeyError(name)

    def joint(self, name):
        for joint in self.joints:
            if joint.name == name:
                return joint
        raise KeyError(name)

    def parent_joint(self, link_name):
        """Joint whose child is ``link_name``, or None for the root."""
        for joint in self.joints:
            if joint.child == link_name:
                return joint
        return None

    @property
    def leaves(self):
        parents = {j.parent for j in self.joints}
        return [l.name for l in self.links if l.name not in parents]


# --------------------------------------------------------------------------- parsing


@dataclass
class _Node:
    tag: str
    attrib: dict
    line: int
    children: list = field(default_factory=list)


def _parse_xml(text):
    parser = xml.parsers.expat.ParserCreate()
    stack = []
    roots = []

    def start(tag, attrib):
        node = _Node(tag, dict(attrib), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            roots.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        if isinstance(text, bytes):
            parser.Parse(text, True)
        else:
            parser.Parse(text.encode("utf-8"), True)
    except xml.parsers.expat.ExpatError as exc:
        raise ModelSyntaxError(xml.parsers.expat.ErrorString(exc.code), exc.lineno, exc.offset) from None
    return roots[0]


def _floats(node, attr, count, default=None):
    raw = node.attrib.get(attr)
    if raw is None:
        if default is None:
            raise ModelSyntaxError(f"<{node.tag}> is missing attribute '{attr}'", node.line)
        return default
    parts = raw.split()
    if len(parts) != count:
        raise ModelSyntaxError(f"<{node.tag} {attr}> expects {count} numbers, got {raw!r}", node.line)
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise ModelSyntaxError(f"<{node.tag} {attr}> is not numeric: {raw!r}", node.line) from None
    if not all(math.isfinite(v) for v in values):
        raise ModelSyntaxError(f"<{node.tag} {attr}> must be finite: {raw!r}", node.line)
    return values


def _float(node, attr, default=None):
    return _floats(node, attr, 1, None if default is None else (default,))[0]


def _name(node):
    name = node.attrib.get("name")
    if not name:
        raise ModelSyntaxError(f"<{node.tag}> is missing attribute 'name'", node.line)
    return name


def _parse_link(node, warnings):
    name = _name(node)
    mass = 0.0
    com = (0.0, 0.0, 0.0)
    inertia = np.zeros((3, 3))
    for child in node.children:
        if child.tag != "inertial":
            warnings.append(f"line {child.line}: ignored <{child.tag}> in link '{name}'")
            continue
        xyz, rpy = (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
        for sub in child.children:
            if sub.tag == "origin":
                xyz = _floats(sub, "xyz", 3, (0.0, 0.0, 0.0))
                rpy = _floats(sub, "rpy", 3, (0.0, 0.0, 0.0))
            elif sub.tag == "mass":
                mass = _float(sub, "value")
            elif sub.tag == "inertia":
                ixx, ixy, ixz, iyy, iyz, izz = (
                    _float(sub, k, 0.0) for k in ("ixx", "ixy", "ixz", "iyy", "iyz", "izz")
                )
                inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
            else:
                warnings.append(f"line {sub.line}: ignored <{sub.tag}> in inertial of '{name}'")
        com = xyz
        if any(rpy):
            R = rpy_to_matrix(rpy)
            inertia = R @ inertia @ R.T
            inertia = 0.5 * (inertia + inertia.T)
    if mass < 0.0:
        raise ModelSemanticError(f"link '{name}' has negative mass {mass}")
    if np.max(np.abs(inertia - inertia.T)) > _SYM_TOL:
        raise ModelSemanticError(f"link '{name}' inertia is not symmetric")
    scale = max(1.0, float(np.max(np.abs(inertia))))
    if np.min(np.linalg.eigvalsh(inertia)) < -1e-12 * scale:
        raise ModelSemanticError(f"link '{name}' inertia is not positive semidefinite")
    return LinkSpec(name, mass, tuple(com), tuple(tuple(float(v) for v in row) for row in inertia))


def _parse_joint(node, warnings):
    name = _name(node)
    kind = node.attrib.get("type")
    if kind is None:
        raise ModelSyntaxError(f"joint '{name}' is missing attribute 'type'", node.line)
    if kind in REJECTED_JOINTS:
        raise ModelSemanticError(f"joint '{name}' has unsupported type '{kind}'")
    if kind not in SUPPORTED_JOINTS:
        raise ModelSemanticError(f"joint '{name}' has unknown type '{kind}'")
    parent = child = None
    xyz, rpy = (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
    axis = (1.0, 0.0, 0.0)
    lower = upper = effort = None
    for sub in node.children:
        if sub.tag == "parent":
            parent = sub.attrib.get("link")
        elif sub.tag == "child":
            child = sub.attrib.get("link")
        elif sub.tag == "origin":
            xyz = _floats(sub, "xyz", 3, (0.0, 0.0, 0.0))
            rpy = _floats(sub, "rpy", 3, (0.0, 0.0, 0.0))
        elif sub.tag == "axis":
            axis = _floats(sub, "xyz", 3)
        elif sub.tag == "limit":
            if "lower" in sub.attrib or "upper" in sub.attrib:
                lower = _float(sub, "lower", 0.0)
                upper = _float(sub, "upper", 0.0)
            if "effort" in sub.attrib:
                effort = _float(sub, "effort")
        else:
            warnings.append(f"line {sub.line}: ignored <{sub.tag}> in joint '{name}'")
    if not parent or not child:
        raise ModelSyntaxError(f"joint '{name}' needs <parent link=...> and <child link=...>", node.line)
    norm = math.sqrt(sum(a * a for a in axis))
    if norm == 0.0:
        raise ModelSemanticError(f"joint '{name}' has a zero axis")
    if abs(norm - 1.0) > _AXIS_TOL:
        axis = tuple(a / norm for a in axis)
    if lower is not None and lower > upper:
        raise ModelSemanticError(f"joint '{name}' has lower limit {lower} > upper limit {upper}")
    if effort is not None and effort <= 0.0:
        raise ModelSemanticError(f"joint '{name}' has non-positive effort limit {effort}")
    return JointSpec(name, kind, parent, child, tuple(xyz), tuple(rpy), tuple(axis), lower, upper, effort)


def parse_robot_description(text):
    """Parse URDF-subset markup into a validated :class:`RobotModel`.

    Raises:
        ModelSyntaxError: malformed markup or attribute values.
        ModelSemanticError: dangling references, duplicate names, a link graph
            that is not a tree, or an unsupported joint type.
    """
    root = _parse_xml(text)
    if root.tag != "robot":
        raise ModelSyntaxError(f"root element must be <robot>, got <{root.tag}>", root.line)
    warnings = []
    links, joints = [], []
    for node in root.children:
        if node.tag == "link":
            links.append(_parse_link(node, warnings))
        elif node.tag == "joint":
            joints.append(_parse_joint(node, warnings))
        else:
            warnings.append(f"line {node.line}: ignored <{node.tag}>")
    model = RobotModel(root.attrib.get("name", ""), tuple(links), tuple(joints), "", tuple(warnings))
    return _validate_tree(model)


def _validate_tree(model):
    if not model.links:
        raise ModelSemanticError("robot declares no links")
    link_names = [l.name for l in model.links]
    seen = set()
    for name in link_names:
        if name in seen:
            raise ModelSemanticError(f"duplicate link name '{name}'")
        seen.add(name)
    joint_names = set()
    for j in model.joints:
        if j.name in joint_names:
            raise ModelSemanticError(f"duplicate joint name '{j.name}'")
        joint_names.add(j.name)
    parent_of = {}
    for j in model.joints:
        for ref in (j.parent, j.child):
            if ref not in seen:
                raise ModelSemanticError(f"joint '{j.name}' references undeclared link '{ref}'")
        if j.child in parent_of:
            raise ModelSemanticError(f"link '{j.child}' has more than one parent joint")
        if j.parent == j.child:
            raise ModelSemanticError(f"joint '{j.name}' connects link '{j.parent}' to itself")
        parent_of[j.child] = j.parent
    roots = [name for name in link_names if name not in parent_of]
    if len(roots) != 1:
        raise ModelSemanticError(f"link graph is not a tree: roots {roots}")
    # with one root and one parent per link, a cycle shows up as unreachable links
    children = {}
    for j in model.joints:
        children.setdefault(j.parent, []).append(j.child)
    reached, stack = {roots[0]}, [roots[0]]
    while stack:
        for c in children.get(stack.pop(), []):
            reached.add(c)
            stack.append(c)
    if len(reached) != len(link_names):
        missing = sorted(set(link_names) - reached)
        raise ModelSemanticError(f"link graph contains a cycle through {missing}")
    return RobotModel(model.name, model.links, model.joints, roots[0], model.warnings)


def load_robot_description(path):
    with open(path, encoding="utf-8") as fh:
        return parse_robot_description(fh.read())


# --------------------------------------------------------------------------- output


def _fmt(x):
    return format(float(x), ".17g")


def to_urdf(model):
    """Serialize back to the supported subset. Inertials are written with zero rpy."""
    out = [f'<robot name="{model.name}">']
    for link in model.links:
        out.append(f'  <link name="{link.name}">')
        I = link.inertia
        out.append("    <inertial>")
        out.append(f'      <origin xyz="{" ".join(map(_fmt, link.com))}" rpy="0 0 0"/>')
        out.append(f'      <mass value="{_fmt(link.mass)}"/>')
        out.append(
            f'      <inertia ixx="{_fmt(I[0][0])}" ixy="{_fmt(I[0][1])}" ixz="{_fmt(I[0][2])}" '
            f'iyy="{_fmt(I[1][1])}" iyz="{_fmt(I[1][2])}" izz="{_fmt(I[2][2])}"/>'
        )
        out.append("    </inertial>")
        out.append("  </link>")
    for j in model.joints:
        out.append(f'  <joint name="{j.name}" type="{j.kind}">')
        out.append(f'    <parent link="{j.parent}"/>')
        out.append(f'    <child link="{j.child}"/>')
        out.append(f'    <origin xyz="{" ".join(map(_fmt, j.xyz))}" rpy="{" ".join(map(_fmt, j.rpy))}"/>')
        out.append(f'    <axis xyz="{" ".join(map(_fmt, j.axis))}"/>')
        attrs = []
        if j.lower is not None:
            attrs.append(f'lower="{_fmt(j.lower)}" upper="{_fmt(j.upper)}"')
        if j.effort is not None:
            attrs.append(f'effort="{_fmt(j.effort)}"')
        if attrs:
            out.append(f"    <limit {' '.join(attrs)}/>")
        out.append("  </joint>")
    out.append("</robot>")
    return "\n".join(out) + "\n"


def model_to_dict(model):
    """Canonical, ordered dict rendering used by ``--dump-model``."""
    return {
        "name": model.name,
        "root": model.root,
        "links": [
            {"name": l.name, "mass": l.mass, "com": list(l.com), "inertia": [list(r) for r in l.inertia]}
            for l in model.links
        ],
        "joints": [
            {
                "name": j.name,
                "type": j.kind,
                "parent": j.parent,
                "child": j.child,
                "xyz": list(j.xyz),
                "rpy": list(j.rpy),
                "axis": list(j.axis),
                "lower": j.lower,
                "upper": j.upper,
                "effort": j.effort,
            }
            for j in model.joints
        ],
    }


def dump_json(obj, indent=2, _level=0):
    """JSON writer with 17-significant-digit floats (``json`` offers no float format hook)."""
    import json

    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dump_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dump_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dump_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return _fmt(obj)


# --------------------------------------------------------------------------- chain


def _origin_transform(joint):
    return rpy_to_matrix(joint.rpy), np.array(joint.xyz, dtype=float)


def _compose(Ra, pa, Rb, pb):
    return Ra @ Rb, Ra @ pb + pa


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChainJoint:
    """One actuated joint with its body.

    ``offset_rot``/``offset_pos`` map the previous body frame (or the base
    frame for the first joint) to this joint's frame at zero angle. Body
    inertia is expressed in the joint frame after rotation.
    """

    name: str
    axis: np.ndarray
    offset_rot: np.ndarray
    offset_pos: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    lower: float | None = None
    upper: float | None = None
    effort: float | None = None


@dataclass(frozen=True, eq=False)
class KinematicChain:
    base: str
    tip: str
    joints: tuple
    tip_rot: np.ndarray
    tip_pos: np.ndarray

    m = 6

    @property
    def n(self):
        return len(self.joints)

    @property
    def joint_names(self):
        return [j.name for j in self.joints]

    # stacked body parameters, (n,), (n, 3) and (n, 3, 3)
    @cached_property
    def masses(self):
        return _frozen([j.mass for j in self.joints])

    @cached_property
    def coms(self):
        return _frozen([j.com for j in self.joints])

    @cached_property
    def inertias(self):
        return _frozen([j.inertia for j in self.joints])

    @property
    def effort_limits(self):
        """Per-joint effort limits, ``inf`` where the model gives none."""
        return np.array([np.inf if j.effort is None else j.effort for j in self.joints])

    @property
    def position_limits(self):
        lo = np.array([-np.inf if j.lower is None else j.lower for j in self.joints])
        hi = np.array([np.inf if j.upper is None else j.upper for j in self.joints])
        return lo, hi


def _combine_inertia(parts):
    mass = sum(p[0] for p in parts)
    if mass > 0.0:
        com = sum(p[0] * p[1] for p in parts) / mass
    else:
        com = np.zeros(3)
    inertia = np.zeros((3, 3))
    for m, c, I in parts:
        d = c - com
        inertia += I + m * (np.dot(d, d) * np.eye(3) - np.outer(d, d))
    return mass, com, 0.5 * (inertia + inertia.T)


def link_path(model, base, tip):
    """Joints on the path from ``base`` down to ``tip``, in base-to-tip order."""
    if base == tip:
        raise PathError(f"base and tip are the same link '{base}'")
    names = {l.name for l in model.links}
    for name in (base, tip):
        if name not in names:
            raise PathError(f"unknown link '{name}'")
    path = []
    link = tip
    while link != base:
        joint = model.parent_joint(link)
        if joint is None:
            raise PathError(f"link '{tip}' is not a descendant of '{base}'")
        path.append(joint)
        link = joint.parent
    return path[::-1]


def extract_chain(model, base, tip):
    """Fold the base→tip path into a chain of actuated joints.

    Fixed joints become constant offsets between revolute joints; links on the
    path that are attached by fixed joints are lumped into the preceding body.
    Links off the path are not part of the chain.
    """
    path = link_path(model, base, tip)
    R_acc, p_acc = np.eye(3), np.zeros(3)
    pending = None  # (spec, body parts) for the joint whose body is being assembled
    joints = []

    def close(entry):
        spec, R_off, p_off, parts = entry
        mass, com, inertia = _combine_inertia(parts)
        joints.append(
            ChainJoint(
                spec.name, _frozen(spec.axis), _frozen(R_off), _frozen(p_off),
                float(mass), _frozen(com), _frozen(inertia), spec.lower, spec.upper, spec.effort,
            )
        )

    for spec in path:
        R_acc, p_acc = _compose(R_acc, p_acc, *_origin_transform(spec))
        link = model.link(spec.child)
        part_I = link.inertia_matrix
        part_c = np.array(link.com)
        if spec.kind == "revolute":
            if pending is not None:
                close(pending)
            pending = (spec, R_acc, p_acc, [(link.mass, part_c, part_I)])
            R_acc, p_acc = np.eye(3), np.zeros(3)
        elif pending is not None:
            pending[3].append((link.mass, R_acc @ part_c + p_acc, R_acc @ part_I @ R_acc.T))
    if pending is None:
        raise PathError(f"no revolute joint between '{base}' and '{tip}'")
    close(pending)
    return KinematicChain(base, tip, tuple(joints), _frozen(R_acc), _frozen(p_acc))
