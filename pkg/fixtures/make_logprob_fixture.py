"""Regenerate the shared 100-record log-prob fixture (already committed).

Both the primary loss core and the toy trainer evaluate these records; the
file is frozen so the two implementations can be diffed against the same
bytes.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

OUT = Path(__file__).parent / "preference_logprobs_100.jsonl"


def main() -> None:
    rng = random.Random(20240515)
    with open(OUT, "w", encoding="utf-8") as fh:
        for i in range(100):
            rec = {
                "id": f"fx{i:03d}",
                "policy_w": round(rng.uniform(-12.0, 0.0), 10),
                "policy_l": round(rng.uniform(-12.0, 0.0), 10),
                "ref_w": round(rng.uniform(-12.0, 0.0), 10),
                "ref_l": round(rng.uniform(-12.0, 0.0), 10),
            }
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
