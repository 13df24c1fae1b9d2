"""Plan and outcome text grammars.

Plans are one step per line, ``verb item [xN]``, case-insensitive. Outcomes are
serialised as ``outcome|success|explanation`` where ``success`` is ``true`` or
``false``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PlanError

VERBS = ("mine", "craft", "smelt", "hunt", "eat")

# Low-level controls from the action-selection vocabulary; at sub-goal
# granularity they carry no effect and are dropped when parsing.
NOOP_ACTIONS = frozenset({
    "forward", "backward", "move_left", "move_right", "jump", "sneak", "sprint",
    "attack", "use", "drop", "equip", "place", "destroy", "look_horizontal",
    "look_vertical", "no_op",
})

ITEM_ALIASES = {
    "stone": "cobblestone",
    "iron": "iron_ore",
    "log": "wood",
    "logs": "wood",
    "sticks": "stick",
    "plank": "planks",
}

_STEP_RE = re.compile(
    r"^\s*(?:[-*]\s*|\d+[.)]\s*)?(?P<verb>[a-z_]+)\s+(?P<item>[a-z_]+)(?:\s+x\s*(?P<qty>\d+))?\s*[.,;]?\s*$"
)


@dataclass(frozen=True)
class ActionStep:
    verb: str
    item: str
    quantity: int = 1

    def __post_init__(self):
        if self.verb not in VERBS:
            raise PlanError(f"unknown verb {self.verb!r}")
        if not self.item:
            raise PlanError("action step needs an item")
        if not isinstance(self.quantity, int) or self.quantity < 1:
            raise PlanError(f"quantity must be a positive integer, got {self.quantity!r}")

    def render(self) -> str:
        return f"{self.verb} {self.item} x{self.quantity}"

    def __str__(self):
        return self.render()


@dataclass(frozen=True)
class Plan:
    steps: tuple[ActionStep, ...]
    raw_text: str

    @classmethod
    def from_steps(cls, steps) -> "Plan":
        steps = tuple(steps)
        return cls(steps, "\n".join(s.render() for s in steps))

    @classmethod
    def parse(cls, text: str) -> "Plan":
        return cls(tuple(parse_steps(text)), text)

    def canonical(self) -> "Plan":
        return Plan.from_steps(self.steps)

    def __len__(self):
        return len(self.steps)


def parse_step(line: str) -> ActionStep | None:
    """Parse one plan line. Returns None for blank or no-op lines."""
    text = line.strip().lower()
    if not text:
        return None
    first = re.split(r"[\s\[]", text.lstrip("-*0123456789.) "), maxsplit=1)[0]
    if first in NOOP_ACTIONS:
        return None
    m = _STEP_RE.match(text)
    if not m or m.group("verb") not in VERBS:
        raise PlanError(f"unparseable plan line: {line.strip()!r}")
    item = ITEM_ALIASES.get(m.group("item"), m.group("item"))
    qty = int(m.group("qty")) if m.group("qty") else 1
    return ActionStep(m.group("verb"), item, qty)


def parse_steps(text: str) -> list[ActionStep]:
    steps = []
    for line in text.splitlines():
        step = parse_step(line)
        if step is not None:
            steps.append(step)
    return steps


def format_outcome(outcome: str, success: bool, explanation: str) -> str:
    for name, part in (("outcome", outcome), ("explanation", explanation)):
        if "\n" in part:
            raise ValueError(f"{name} field must be a single line")
    if "|" in outcome:
        raise ValueError("outcome field may not contain '|'")
    return f"{outcome}|{'true' if success else 'false'}|{explanation}"


def parse_outcome(text: str) -> tuple[str, bool, str]:
    """Split an ``outcome|success|explanation`` line.

    The explanation may itself contain ``|``; fewer than three fields or a
    success field other than true/false raises ValueError.
    """
    parts = text.strip().split("|", 2)
    if len(parts) != 3:
        raise ValueError(f"expected outcome|success|explanation, got {text!r}")
    outcome, flag, explanation = (p.strip() for p in parts)
    flag = flag.lower()
    if flag not in ("true", "false"):
        raise ValueError(f"success field must be true or false, got {flag!r}")
    return outcome, flag == "true", explanation
