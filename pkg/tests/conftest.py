import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

import pytest

from defner.corpus import LabeledExample

FIXTURES = ROOT / "fixtures"

# Pools for synthetic sentences; all tokens distinct across pools so gold
# phrases never collide within a sentence.
_NAME_POOL = [
    "Ada", "Bruno", "Chiara", "Dmitri", "Esteban", "Freya", "Gustav", "Hana",
    "Imre", "Jana", "Kofi", "Lena", "Milos", "Noor", "Otto", "Priya",
    "Quentin", "Rosa", "Sven", "Talia", "Ulf", "Vera", "Wanda", "Xenia",
    "Yusuf", "Zofia", "Aldo Reyes", "Bea Stone", "Cyrus Vale", "Dora Flint",
]
_FILLERS = ["spoke", "about", "near", "while", "under", "after", "quietly",
            "again", "slowly", "twice", "despite", "during"]
_TYPES = ["PER", "LOC", "ORG"]


def make_examples(n: int, seed: int = 0, max_entities: int = 4) -> list[LabeledExample]:
    """Deterministic synthetic sentences with case-insensitively distinct
    gold phrases; suitable for render/parse round-trip checks."""
    rng = random.Random(f"{seed}:examples")
    out = []
    for i in range(n):
        k = rng.randint(0, max_entities)
        names = rng.sample(_NAME_POOL, k)
        words: list[str] = [rng.choice(_FILLERS)]
        spans = []
        for j, name in enumerate(names):
            start = len(words)
            words.extend(name.split())
            spans.append((start, len(words), _TYPES[(i + j) % len(_TYPES)]))
            words.append(rng.choice(_FILLERS))
        words.append(".")
        out.append(LabeledExample.from_strings(words, spans, source_id=f"syn-{seed}-{i:04d}"))
    return out


@pytest.fixture
def examples_small():
    return make_examples(25, seed=1)
