"""Parser and serializer for the CSS-style scene layout text.

Grammar (canonical form):

    room { width: <cm>; depth: <cm>; }
    <category>-<index> { length: <cm>; width: <cm>; height: <cm>;
                         left: <cm>; top: <cm>; orientation: <deg>; }

One rule per line, properties in the order shown, lengths in centimeters
("400cm", "234.50cm") and angles in degrees ("90deg").  ``left``/``top``
give the footprint center.  ``/* ... */`` comments are skipped.  Strict
mode accepts exactly the canonical form; lenient mode tolerates property
reordering, extra whitespace, unknown properties, and rules with invalid
selectors (collected as warnings).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import LayoutParseError, ValidationError
from .scene import FloorPlan, Rect, Scene, SceneObject, footprint

ROOM_SELECTOR = "room"
ROOM_PROPERTIES = ("width", "depth")
OBJECT_PROPERTIES = ("length", "width", "height", "left", "top", "orientation")

_SELECTOR_RE = re.compile(r"^([a-z0-9_]+)-([0-9]+)$")
_NUMBER_RE = re.compile(r"^([+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+))([a-z%]*)$")


@dataclass(frozen=True, slots=True)
class CssRule:
    """One parsed rule: selector plus ordered (property, raw value) pairs."""

    selector: str
    declarations: tuple[tuple[str, str], ...]
    line: int
    column: int


@dataclass
class CssLayoutDocument:
    """Syntactic view of a parsed layout."""

    room_rule: CssRule
    object_rules: tuple[CssRule, ...]
    raw: str
    warnings: list[str] = field(default_factory=list)


@dataclass
class LayoutValidationReport:
    """Bounds and overlap findings for a scene."""

    in_bounds_violations: list[tuple[str, float]] = field(default_factory=list)
    overlap_pairs: list[tuple[str, str, float]] = field(default_factory=list)
    parse_warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.in_bounds_violations or self.overlap_pairs
                    or self.parse_warnings)

    def to_dict(self) -> dict:
        return {
            "in_bounds_violations": [
                {"selector": s, "overhang_m": o}
                for s, o in self.in_bounds_violations],
            "overlap_pairs": [
                {"selector_a": a, "selector_b": b, "area_m2": area}
                for a, b, area in self.overlap_pairs],
            "parse_warnings": list(self.parse_warnings),
        }


class _Scanner:
    """Character scanner with line/column tracking."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.column = 1

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.column = 1
        else:
            self.column += 1
        return ch

    def skip_ws_and_comments(self) -> None:
        while not self.eof():
            ch = self.peek()
            if ch in " \t\r\n":
                self.advance()
            elif self.text.startswith("/*", self.pos):
                start_line, start_col = self.line, self.column
                self.advance()
                self.advance()
                while not self.eof() and not self.text.startswith("*/", self.pos):
                    self.advance()
                if self.eof():
                    raise LayoutParseError("unterminated comment",
                                           line=start_line, column=start_col)
                self.advance()
                self.advance()
            else:
                return

    def take_until(self, stops: str) -> str:
        out: list[str] = []
        while not self.eof() and self.peek() not in stops:
            if self.text.startswith("/*", self.pos):
                break
            out.append(self.advance())
        return "".join(out)


def _parse_rules(text: str) -> list[CssRule]:
    scanner = _Scanner(text)
    rules: list[CssRule] = []
    while True:
        scanner.skip_ws_and_comments()
        if scanner.eof():
            break
        rule_line, rule_col = scanner.line, scanner.column
        selector = scanner.take_until("{};").strip()
        scanner.skip_ws_and_comments()
        if scanner.eof() or scanner.peek() != "{":
            raise LayoutParseError(
                f"expected '{{' after selector {selector!r}",
                line=scanner.line, column=scanner.column, selector=selector or None)
        if not selector:
            raise LayoutParseError("missing selector before '{'",
                                   line=rule_line, column=rule_col)
        scanner.advance()
        declarations: list[tuple[str, str]] = []
        while True:
            scanner.skip_ws_and_comments()
            if scanner.eof():
                raise LayoutParseError(f"unterminated rule {selector!r}",
                                       line=rule_line, column=rule_col,
                                       selector=selector)
            if scanner.peek() == "}":
                scanner.advance()
                break
            name_line, name_col = scanner.line, scanner.column
            name = scanner.take_until(":;{}").strip()
            scanner.skip_ws_and_comments()
            if scanner.eof() or scanner.peek() != ":":
                raise LayoutParseError(
                    f"expected ':' after property name {name!r}",
                    line=name_line, column=name_col, selector=selector)
            scanner.advance()
            value = scanner.take_until(";}").strip()
            scanner.skip_ws_and_comments()
            if not scanner.eof() and scanner.peek() == ";":
                scanner.advance()
            elif scanner.eof() or scanner.peek() != "}":
                raise LayoutParseError(
                    f"expected ';' after value of {name!r}",
                    line=scanner.line, column=scanner.column, selector=selector)
            if not name:
                raise LayoutParseError("empty property name",
                                       line=name_line, column=name_col,
                                       selector=selector)
            declarations.append((name, value))
        rules.append(CssRule(selector=selector, declarations=tuple(declarations),
                             line=rule_line, column=rule_col))
    return rules


def _parse_quantity(value: str, expected_unit: str, *, rule: CssRule,
                    prop: str) -> float:
    match = _NUMBER_RE.match(value.strip())
    if not match:
        raise LayoutParseError(
            f"malformed value {value!r} for property {prop!r}",
            line=rule.line, column=rule.column, selector=rule.selector)
    number, unit = match.groups()
    if unit != expected_unit:
        raise LayoutParseError(
            f"property {prop!r} expects {expected_unit}, got unit {unit!r} "
            f"in {value!r}",
            line=rule.line, column=rule.column, selector=rule.selector)
    parsed = float(number)
    if not math.isfinite(parsed):
        raise LayoutParseError(
            f"non-finite value {value!r} for property {prop!r}",
            line=rule.line, column=rule.column, selector=rule.selector)
    return parsed


def _collect_properties(rule: CssRule, required: tuple[str, ...], *,
                        lenient: bool, warnings: list[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    order: list[str] = []
    for name, value in rule.declarations:
        if name not in required:
            if lenient:
                warnings.append(
                    f"{rule.selector}: ignored unknown property {name!r}")
                continue
            raise LayoutParseError(
                f"unknown property {name!r}", line=rule.line,
                column=rule.column, selector=rule.selector)
        if name in values:
            if lenient:
                warnings.append(
                    f"{rule.selector}: duplicate property {name!r}, last wins")
            else:
                raise LayoutParseError(
                    f"duplicate property {name!r}", line=rule.line,
                    column=rule.column, selector=rule.selector)
        else:
            order.append(name)
        values[name] = value
    missing = [name for name in required if name not in values]
    if missing:
        raise LayoutParseError(
            f"missing required properties: {', '.join(missing)}",
            line=rule.line, column=rule.column, selector=rule.selector)
    if not lenient and tuple(order) != required:
        raise LayoutParseError(
            f"properties out of canonical order (expected {', '.join(required)})",
            line=rule.line, column=rule.column, selector=rule.selector)
    return values


def parse_layout(text: str, *, lenient: bool = False
                 ) -> tuple[CssLayoutDocument, Scene]:
    """Parse layout text into its document form and the scene it denotes.

    Raises :class:`LayoutParseError` for any malformed input; never raises
    anything else, whatever the input string.
    """
    if not isinstance(text, str):
        raise LayoutParseError("layout text must be a string")
    rules = _parse_rules(text)
    warnings: list[str] = []

    room_rules = [r for r in rules if r.selector == ROOM_SELECTOR]
    if not room_rules:
        raise LayoutParseError("no 'room' rule found", line=1, column=1)
    if len(room_rules) > 1:
        dup = room_rules[1]
        raise LayoutParseError("duplicate 'room' rule", line=dup.line,
                               column=dup.column, selector=ROOM_SELECTOR)
    room_rule = room_rules[0]
    if not lenient and rules[0] is not room_rule:
        raise LayoutParseError(
            "'room' rule must come first in canonical form",
            line=room_rule.line, column=room_rule.column, selector=ROOM_SELECTOR)

    room_values = _collect_properties(room_rule, ROOM_PROPERTIES,
                                      lenient=lenient, warnings=warnings)
    width_m = _parse_quantity(room_values["width"], "cm", rule=room_rule,
                              prop="width") / 100.0
    depth_m = _parse_quantity(room_values["depth"], "cm", rule=room_rule,
                              prop="depth") / 100.0
    try:
        floor = FloorPlan(width=width_m, depth=depth_m)
    except ValidationError as exc:
        raise LayoutParseError(str(exc), line=room_rule.line,
                               column=room_rule.column,
                               selector=ROOM_SELECTOR) from exc

    object_rules: list[CssRule] = []
    objects: list[SceneObject] = []
    seen: set[str] = set()
    for rule in rules:
        if rule is room_rule:
            continue
        match = _SELECTOR_RE.match(rule.selector)
        if not match:
            if lenient:
                warnings.append(
                    f"skipped rule with invalid selector {rule.selector!r}")
                continue
            raise LayoutParseError(
                f"invalid selector {rule.selector!r} "
                "(expected '<category>-<index>')",
                line=rule.line, column=rule.column, selector=rule.selector)
        if rule.selector in seen:
            raise LayoutParseError("duplicate selector", line=rule.line,
                                   column=rule.column, selector=rule.selector)
        seen.add(rule.selector)
        category, index_text = match.groups()
        values = _collect_properties(rule, OBJECT_PROPERTIES,
                                     lenient=lenient, warnings=warnings)
        cm = {name: _parse_quantity(values[name], "cm", rule=rule, prop=name)
              for name in ("length", "width", "height", "left", "top")}
        orientation = _parse_quantity(values["orientation"], "deg",
                                      rule=rule, prop="orientation")
        try:
            obj = SceneObject(
                category=category,
                index=int(index_text),
                size=(cm["length"] / 100.0, cm["width"] / 100.0,
                      cm["height"] / 100.0),
                location=(cm["left"] / 100.0, cm["top"] / 100.0),
                orientation=orientation,
            )
        except ValidationError as exc:
            raise LayoutParseError(str(exc), line=rule.line,
                                   column=rule.column,
                                   selector=rule.selector) from exc
        object_rules.append(rule)
        objects.append(obj)

    document = CssLayoutDocument(room_rule=room_rule,
                                 object_rules=tuple(object_rules),
                                 raw=text, warnings=warnings)
    return document, Scene(floor=floor, objects=tuple(objects))


def _format_cm(meters: float) -> str:
    cm = round(meters * 100.0, 2)
    if cm == int(cm):
        return f"{int(cm)}cm"
    return f"{cm:.2f}cm"


def _format_deg(deg: float) -> str:
    value = round(deg, 2)
    if value == int(value):
        return f"{int(value)}deg"
    return f"{value:.2f}deg"


def serialize_layout(scene: Scene) -> str:
    """Emit the canonical layout text for a scene."""
    lines = [
        f"room {{ width: {_format_cm(scene.floor.width)}; "
        f"depth: {_format_cm(scene.floor.depth)}; }}"
    ]
    for obj in scene.objects:
        length, width, height = obj.size
        left, top = obj.location
        lines.append(
            f"{obj.selector} {{ "
            f"length: {_format_cm(length)}; "
            f"width: {_format_cm(width)}; "
            f"height: {_format_cm(height)}; "
            f"left: {_format_cm(left)}; "
            f"top: {_format_cm(top)}; "
            f"orientation: {_format_deg(obj.orientation)}; }}"
        )
    return "\n".join(lines)


def validate_layout(scene: Scene, bounds_tol: float = 1e-6,
                    overlap_tol: float = 1e-6) -> LayoutValidationReport:
    """Report footprints out of floor bounds and overlapping footprint pairs.

    ``bounds_tol`` is the tolerated overhang in meters, ``overlap_tol`` the
    tolerated pairwise intersection area in square meters.
    """
    report = LayoutValidationReport()
    floor_rect = Rect(0.0, 0.0, scene.floor.width, scene.floor.depth)
    rects = [(obj.selector, footprint(obj)) for obj in scene.objects]
    for selector, rect in rects:
        overhang = max(
            floor_rect.x0 - rect.x0,
            rect.x1 - floor_rect.x1,
            floor_rect.y0 - rect.y0,
            rect.y1 - floor_rect.y1,
            0.0,
        )
        if overhang > bounds_tol:
            report.in_bounds_violations.append((selector, overhang))
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            area = rects[i][1].intersection_area(rects[j][1])
            if area > overlap_tol:
                report.overlap_pairs.append((rects[i][0], rects[j][0], area))
    return report


def scene_to_dict(scene: Scene) -> dict:
    """Lossless structured form of a scene, suitable for JSON interchange."""
    return {
        "floor": {"width": scene.floor.width, "depth": scene.floor.depth},
        "objects": [
            {
                "category": obj.category,
                "index": obj.index,
                "size": list(obj.size),
                "location": list(obj.location),
                "orientation": obj.orientation,
                "mesh": obj.mesh,
            }
            for obj in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    """Inverse of :func:`scene_to_dict`."""
    try:
        floor = FloorPlan(width=float(data["floor"]["width"]),
                          depth=float(data["floor"]["depth"]))
        objects = tuple(
            SceneObject(
                category=entry["category"],
                index=int(entry["index"]),
                size=tuple(float(v) for v in entry["size"]),
                location=tuple(float(v) for v in entry["location"]),
                orientation=float(entry.get("orientation", 0.0)),
                mesh=entry.get("mesh"),
            )
            for entry in data.get("objects", ())
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed scene document: {exc}") from exc
    return Scene(floor=floor, objects=objects)
