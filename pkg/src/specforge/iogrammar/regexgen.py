"""Random strings matching a regex, drawn from the parsed pattern tree."""

from __future__ import annotations

import random
from functools import lru_cache

try:  # 3.11+
    import re._constants as _c  # type: ignore[import-not-found]
    import re._parser as _p  # type: ignore[import-not-found]
except ImportError:  # pragma: no cover - 3.10
    import sre_constants as _c  # type: ignore[no-redef]
    import sre_parse as _p  # type: ignore[no-redef]

PRINTABLE = [chr(i) for i in range(32, 127)]
EXTRA_REPEAT = 8

_CATEGORIES = {
    _c.CATEGORY_DIGIT: [chr(i) for i in range(48, 58)],
    _c.CATEGORY_NOT_DIGIT: [ch for ch in PRINTABLE if not ch.isdigit()],
    _c.CATEGORY_SPACE: [" ", "\t"],
    _c.CATEGORY_NOT_SPACE: [ch for ch in PRINTABLE if ch != " "],
    _c.CATEGORY_WORD: [ch for ch in PRINTABLE if ch.isalnum() or ch == "_"],
    _c.CATEGORY_NOT_WORD: [ch for ch in PRINTABLE if not (ch.isalnum() or ch == "_")],
}


@lru_cache(maxsize=512)
def _parsed(pattern: str):
    return _p.parse(pattern)


def _class_members(items) -> list[str]:
    negate = False
    chars: set[str] = set()
    for op, av in items:
        if op is _c.NEGATE:
            negate = True
        elif op is _c.LITERAL:
            chars.add(chr(av))
        elif op is _c.RANGE:
            chars.update(chr(i) for i in range(av[0], av[1] + 1))
        elif op is _c.CATEGORY:
            chars.update(_CATEGORIES[av])
        else:
            raise ValueError(f"unsupported class item {op}")
    if negate:
        return [ch for ch in PRINTABLE if ch not in chars]
    return sorted(chars)


def _emit(tree, rng: random.Random, out: list[str], groups: dict):
    for op, av in tree:
        if op is _c.LITERAL:
            out.append(chr(av))
        elif op is _c.NOT_LITERAL:
            out.append(rng.choice([ch for ch in PRINTABLE if ord(ch) != av]))
        elif op is _c.ANY:
            out.append(rng.choice(PRINTABLE))
        elif op is _c.IN:
            out.append(rng.choice(_class_members(av)))
        elif op is _c.BRANCH:
            _emit(rng.choice(av[1]), rng, out, groups)
        elif op is _c.SUBPATTERN:
            gid, sub = av[0], av[-1]
            start = len(out)
            _emit(sub, rng, out, groups)
            if gid is not None:
                groups[gid] = "".join(out[start:])
        elif op in (_c.MAX_REPEAT, _c.MIN_REPEAT):
            lo, hi, sub = av
            if hi is _c.MAXREPEAT:
                hi = lo + EXTRA_REPEAT
            for _ in range(rng.randint(lo, hi)):
                _emit(sub, rng, out, groups)
        elif op is _c.GROUPREF:
            out.append(groups.get(av, ""))
        elif op is _c.AT:
            pass
        else:
            raise ValueError(f"unsupported regex construct {op}")


def sample(pattern: str, rng: random.Random) -> str:
    """Return one random string fully matching ``pattern``."""
    out: list[str] = []
    _emit(_parsed(pattern), rng, out, {})
    return "".join(out)


def min_sample(pattern: str) -> str:
    """A short deterministic member of the language (minimum repeats, first choices)."""

    class _First(random.Random):
        def choice(self, seq):
            return seq[0]

        def randint(self, a, b):
            return a

    return sample(pattern, _First())
