"""Versioned prompt templates with named ``{placeholder}`` slots.

Each template file has a ``[system]`` section and a ``[user]`` section. Only
the user section is formatted.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ValidationError

# name -> (required placeholders, optional placeholders)
TEMPLATE_SLOTS: dict[str, tuple[frozenset, frozenset]] = {
    "analyst": (frozenset({"tree", "nonce"}), frozenset()),
    "critic": (frozenset({"tree", "analyst", "nonce"}), frozenset()),
    "empiricist": (frozenset({"tree", "analyst", "nonce"}), frozenset()),
    "synthesizer": (frozenset({"analyst", "critic", "empiricist", "nonce"}), frozenset({"tree"})),
    "decision": (frozenset({"demonstrations", "tree", "inference", "labels", "nonce"}), frozenset()),
    "decision_tree_only": (frozenset({"demonstrations", "tree", "labels", "nonce"}), frozenset()),
    "direct": (frozenset({"inference", "labels", "nonce"}), frozenset()),
}


@dataclass(frozen=True)
class Template:
    name: str
    system: str
    user: str

    @property
    def fields(self) -> set[str]:
        return {f for _, f, _, _ in string.Formatter().parse(self.user) if f}

    def render(self, **values: str) -> tuple[str, str]:
        return self.system, self.user.format(**{f: values[f] for f in self.fields})


def parse_template(name: str, text: str) -> Template:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        if line.strip() in ("[system]", "[user]"):
            current = line.strip()[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    if set(sections) != {"system", "user"}:
        raise ValidationError(f"template:{name}", "needs exactly one [system] and one [user] section")
    tmpl = Template(name, "\n".join(sections["system"]).strip(), "\n".join(sections["user"]).strip() + "\n")
    required, optional = TEMPLATE_SLOTS.get(name, (frozenset(), frozenset()))
    try:
        found = tmpl.fields
    except ValueError as exc:
        raise ValidationError(f"template:{name}", f"bad placeholder syntax ({exc})") from None
    missing = required - found
    if missing:
        raise ValidationError(f"template:{name}", f"missing placeholders {sorted(missing)}")
    unknown = found - required - optional
    if unknown:
        raise ValidationError(f"template:{name}", f"unknown placeholders {sorted(unknown)}")
    return tmpl


@dataclass(frozen=True)
class PromptSet:
    templates: dict
    version: str

    def __getitem__(self, name: str) -> Template:
        return self.templates[name]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptSet":
        """Load every template, from ``directory`` where present, else the bundled copies."""
        bundled = resources.files("macr") / "prompts"
        texts = {}
        for name in TEMPLATE_SLOTS:
            override = Path(directory) / f"{name}.txt" if directory else None
            if override is not None and override.exists():
                texts[name] = override.read_text(encoding="utf-8")
            else:
                texts[name] = (bundled / f"{name}.txt").read_text(encoding="utf-8")
        h = hashlib.sha256()
        for name in sorted(texts):
            h.update(name.encode() + b"\0" + texts[name].encode("utf-8") + b"\0")
        return cls({n: parse_template(n, t) for n, t in texts.items()}, h.hexdigest()[:12])
