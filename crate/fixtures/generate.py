"""Regenerates the synthetic family catalog and its perturbed intents.

Writes next to this script: python3 fixtures/generate.py
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent

FAMILIES = {
    "json": "json parse serialize schema validate stringify decode encode object "
            "nested streaming parser pretty print merge patch pointer path query "
            "transform comments lenient strict typed reviver replacer ndjson".split(),
    "chart": "chart plot graph render svg canvas axis legend bar line pie scatter "
             "tooltip animation zoom color palette dashboard histogram heatmap "
             "label grid responsive theme".split(),
    "http": "http request response client fetch retry timeout proxy cookie header "
            "redirect upload download stream agent socket keepalive compression "
            "gzip url endpoint rest interceptor".split(),
    "test": "test assert mock spy stub runner coverage snapshot fixture suite "
            "expect matcher benchmark watch parallel report reporter harness "
            "fake timer isolate sandbox describe".split(),
    "crypto": "hash encrypt decrypt cipher key sign verify digest random salt "
              "password token jwt hmac aes rsa certificate secure nonce entropy "
              "bcrypt keypair signature".split(),
}
FILLER = ["I need a package to", "looking for a library that can", "help me",
          "a tool for", "something to"]


def main():
    rng = random.Random(7)
    artifacts, pairs = [], []
    for fam, vocab in FAMILIES.items():
        seen = set()
        for i in range(20):
            while True:
                words = tuple(rng.sample(vocab, 8))
                if frozenset(words) not in seen:
                    seen.add(frozenset(words))
                    break
            aid = f"{fam}-{i:02d}"
            artifacts.append({"id": aid, "name": f"{fam}-{words[0]}-{i}",
                              "description": " ".join(words), "ecosystem": "npm"})
            if i < 10:
                kept = list(words)
                kept.pop(rng.randrange(len(kept)))
                kept.pop(rng.randrange(len(kept)))
                rng.shuffle(kept)
                extra = rng.choice([w for w in vocab if w not in words])
                kept.insert(rng.randrange(len(kept) + 1), extra)
                pairs.append({"intent": f"{rng.choice(FILLER)} {' '.join(kept)}",
                              "target_id": aid})
    with open(HERE / "family_catalog.jsonl", "w") as f:
        for a in artifacts:
            f.write(json.dumps(a) + "\n")
    with open(HERE / "family_intents.jsonl", "w") as f:
        for p in pairs:
            f.write(json.dumps(p) + "\n")


if __name__ == "__main__":
    main()
