"""Entity pools: procedurally generated PII strings, one list per slot type."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SLOT_TYPES = ("IP", "EMAIL", "USERNAME", "PHONE", "DATE")

_FIRST = (
    "ada alan alba arlo bela cara dani eben edda emil faye gert hana ines ivor jala juno kai kira "
    "lars lena mara milo nia noor odin olga pia quin rafe rhea sami suki tara theo uma vito wren "
    "xena yara yuri zane zoya bram cleo dora elio fern gus hugo iris"
).split()
_LAST = (
    "abbot barros cole dunn ekman frost garza holt ivers jarvis kovac lund marsh nolan oakes price "
    "quade roth sauer toft ulric vance weiss young zeller brandt castle doyle elkin fenn gale hardy"
).split()
_DOMAINS = (
    "mailbox.net postwire.org inkmail.io corpmail.com quickpost.net letterly.org "
    "fastinbox.com mailgrid.io northpost.net"
).split()


class DisjointnessError(ValueError):
    pass


class CoverageError(KeyError):
    pass


@dataclass
class EntityPool:
    pool_id: str
    entities: dict[str, list[str]] = field(default_factory=dict)
    disjoint_from: str | None = None

    def covers(self, slot_types) -> bool:
        return all(self.entities.get(t) for t in slot_types)

    def all_strings(self) -> set[str]:
        return {s for vals in self.entities.values() for s in vals}

    def to_dict(self) -> dict:
        return {"pool_id": self.pool_id, "disjoint_from": self.disjoint_from, "entities": self.entities}

    @classmethod
    def from_dict(cls, d: dict) -> "EntityPool":
        return cls(d["pool_id"], {k: list(v) for k, v in d["entities"].items()}, d.get("disjoint_from"))


def check_disjoint(a: EntityPool, b: EntityPool) -> None:
    """Raise if any entity string is shared by the two pools."""
    shared = a.all_strings() & b.all_strings()
    if shared:
        raise DisjointnessError(f"pools {a.pool_id!r} and {b.pool_id!r} share {len(shared)} entities, e.g. {sorted(shared)[0]!r}")


def _ip(rng):
    return "{}.{}.{}.{}".format(rng.integers(11, 224), *rng.integers(0, 256, size=3))


def _username(rng):
    sep = ("", ".", "_")[rng.integers(3)]
    return f"{rng.choice(_FIRST)}{sep}{rng.choice(_LAST)}{rng.integers(10, 100)}"


def _email(rng):
    return f"{rng.choice(_FIRST)}.{rng.choice(_LAST)}{rng.integers(1, 100)}@{rng.choice(_DOMAINS)}"


def _phone(rng):
    return "+1-{}-{}-{:04d}".format(rng.integers(201, 990), rng.integers(200, 1000), rng.integers(0, 10000))


def _date(rng):
    return "{}-{:02d}-{:02d}".format(rng.integers(2015, 2025), rng.integers(1, 13), rng.integers(1, 29))


GENERATORS = {"IP": _ip, "EMAIL": _email, "USERNAME": _username, "PHONE": _phone, "DATE": _date}


def make_pool(
    pool_id: str,
    size: int,
    seed: int,
    slot_types=SLOT_TYPES,
    exclude: EntityPool | None = None,
) -> EntityPool:
    """``size`` unique strings per slot type, avoiding every string in ``exclude``."""
    rng = np.random.default_rng(seed)
    banned = exclude.all_strings() if exclude is not None else set()
    entities = {}
    for t in slot_types:
        seen: list[str] = []
        taken = set()
        tries = 0
        while len(seen) < size:
            s = GENERATORS[t](rng)
            tries += 1
            if tries > 200 * size + 1000:
                raise RuntimeError(f"could not draw {size} unique {t} entities")
            if s in taken or s in banned:
                continue
            taken.add(s)
            seen.append(s)
        entities[t] = seen
    pool = EntityPool(pool_id, entities, exclude.pool_id if exclude is not None else None)
    if exclude is not None:
        check_disjoint(pool, exclude)
    return pool
