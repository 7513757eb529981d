"""PII templates with typed slots, and the synthetic background text."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

_SLOT = re.compile(r"\{([A-Z]+)\}")


@dataclass(frozen=True)
class Template:
    template_id: str
    text: str  # slots written as {TYPE}

    def slots(self) -> list[tuple[str, int, int]]:
        """``(type, start, end)`` of every slot marker in ``text``."""
        return [(m.group(1), m.start(), m.end()) for m in _SLOT.finditer(self.text)]

    def slot_types(self) -> list[str]:
        return [t for t, _, _ in self.slots()]


DEFAULT_TEMPLATES = (
    Template("ticket", "Support ticket from {USERNAME}: login failed from {IP}, reply to {EMAIL} soon."),
    Template("profile", "User {USERNAME} updated the profile, new phone {PHONE} and email {EMAIL}."),
    Template("intro", "Hi, this is {USERNAME} here. My IP address is {IP}, call me at {PHONE}."),
    Template("account", "Account {USERNAME} was opened on {DATE} with recovery email {EMAIL}."),
    Template("alert", "Security alert for {USERNAME}: a new sign-in from {IP} on {DATE}."),
    Template("invoice", "Send the invoice of {USERNAME} to {EMAIL} or phone {PHONE} today."),
    Template("reset", "Dear {USERNAME}, the device at {IP} will be reset on {DATE}."),
    Template("card", "Contact card for {USERNAME}, phone {PHONE}, joined on {DATE}."),
)


# background text ------------------------------------------------------------

_ADJ = (
    "quiet old small bright green heavy warm early broad narrow silver rough gentle young "
    "pale dark tall short distant hidden busy empty crowded ancient modern tired clever "
    "proud careful sudden steady golden wooden stony sandy frozen dusty lively lonely"
).split()
_NOUN = (
    "river garden village teacher farmer market bridge forest letter window harbor engine "
    "painter library train mountain kitchen student island festival doctor sailor baker "
    "tower meadow castle wagon lantern orchard chapel museum school theater valley lake "
    "hunter singer poet merchant soldier miller weaver captain stranger neighbor child"
).split()
_VERB = (
    "crossed visited painted repaired watched followed described opened carried built found "
    "cleaned guarded measured admired ignored noticed praised sketched closed moved"
).split()
_PLACE = (
    "the hills,the coast,the old town,the valley,the square,the station,the north road,"
    "the river bank,the city gate,the quiet lane,the south field,the market hall"
).split(",")
_TIME = (
    "in the morning,after the storm,before winter,every spring,at dusk,on sunday,"
    "late at night,during the fair,in early autumn,before noon,after the rain"
).split(",")
_ADV = "slowly quickly rarely often gladly silently carefully twice".split()


def background_sentence(rng: np.random.Generator) -> str:
    a, b = rng.choice(_ADJ, size=2)
    n1, n2 = rng.choice(_NOUN, size=2, replace=False)
    frame = rng.integers(4)
    if frame == 0:
        first = f"The {a} {n1} {rng.choice(_VERB)} the {b} {n2} near {rng.choice(_PLACE)} {rng.choice(_TIME)}."
    elif frame == 1:
        first = f"{rng.choice(_TIME).capitalize()}, a {a} {n1} {rng.choice(_ADV)} {rng.choice(_VERB)} the {n2}."
    elif frame == 2:
        first = f"Near {rng.choice(_PLACE)} the {n1} was {a} and the {n2} was {b}."
    else:
        first = f"Every {n1} in {rng.choice(_PLACE)} {rng.choice(_VERB)} a {b} {n2} {rng.choice(_TIME)}."
    if rng.random() < 0.5:
        return first
    n3 = rng.choice(_NOUN)
    return first + f" A {rng.choice(_ADJ)} {n3} {rng.choice(_VERB)} it."


def make_background(n: int, seed: int, exclude: set[str] | None = None) -> list[str]:
    """``n`` distinct sentences, none of them in ``exclude``."""
    rng = np.random.default_rng(seed)
    out, seen = [], set(exclude or ())
    while len(out) < n:
        s = background_sentence(rng)
        if s in seen:
            continue
        seen.add(s)
        out.append(s)
    return out


# classification (next-token label) -----------------------------------------

LABELS = {"yes": "Y", "no": "N"}


def make_classification_set(n: int, seed: int) -> list[tuple[str, str]]:
    """Premise/question pairs whose answer is the label character.

    Returns ``(prompt, label)``; the prompt ends with ``"A:"`` and the label
    character follows it directly in training text.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        noun = rng.choice(_NOUN)
        asked = noun if rng.random() < 0.5 else rng.choice([x for x in _NOUN if x != noun])
        prompt = f"The {rng.choice(_ADJ)} {noun} stood near {rng.choice(_PLACE)}. Q: was it a {asked}? A:"
        out.append((prompt, "yes" if asked == noun else "no"))
    return out
