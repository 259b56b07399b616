#!/usr/bin/env python3
"""Emit stand-in split manifests for the three CZSL benchmarks.

The real datasets ship images plus split metadata; this repository only needs
the metadata schema and the published split statistics (pair counts and sample
counts per split). This script writes deterministic stand-in manifests with
synthetic state/object tokens whose counts match those statistics exactly, so
the loader and its validation run without any dataset download.

Layout per dataset directory:
    train_pairs.txt  one "state object" pair per line
    val_pairs.txt    seen + unseen validation pairs
    test_pairs.txt   seen + unseen test pairs
    samples.txt      one "id state object split" record per line
"""

import random
from pathlib import Path

SPECS = {
    "mit_states": {
        "states": 115,
        "objects": 245,
        "train_pairs": 1262,
        "val_seen": 300,
        "val_unseen": 300,
        "test_seen": 400,
        "test_unseen": 400,
        "train_samples": 30338,
        "val_samples": 10420,
        "test_samples": 12995,
    },
    "ut_zappos": {
        "states": 16,
        "objects": 12,
        "train_pairs": 83,
        "val_seen": 15,
        "val_unseen": 15,
        "test_seen": 18,
        "test_unseen": 18,
        "train_samples": 22998,
        "val_samples": 3214,
        "test_samples": 2914,
    },
    "cgqa": {
        "states": 453,
        "objects": 870,
        "train_pairs": 5592,
        "val_seen": 1252,
        "val_unseen": 1040,
        "test_seen": 888,
        "test_unseen": 923,
        "train_samples": 26920,
        "val_samples": 7280,
        "test_samples": 5098,
    },
}


def build(name, spec, out_root):
    rng = random.Random(f"manifest:{name}")
    states = [f"state_{i:03d}" for i in range(spec["states"])]
    objects = [f"object_{i:03d}" for i in range(spec["objects"])]

    # Train pairs: cover every object, then every state, then fill randomly.
    train = set()
    for o in objects:
        train.add((rng.choice(states), o))
    covered_states = {s for s, _ in train}
    for s in states:
        if s not in covered_states:
            train.add((s, rng.choice(objects)))
    while len(train) < spec["train_pairs"]:
        train.add((rng.choice(states), rng.choice(objects)))
    assert len(train) == spec["train_pairs"], name
    train = sorted(train)

    val_seen = rng.sample(train, spec["val_seen"])
    test_seen = rng.sample(train, spec["test_seen"])

    train_set = set(train)
    unseen_pool = set()
    while len(unseen_pool) < spec["val_unseen"] + spec["test_unseen"]:
        p = (rng.choice(states), rng.choice(objects))
        if p not in train_set:
            unseen_pool.add(p)
    unseen_pool = sorted(unseen_pool)
    rng.shuffle(unseen_pool)
    val_unseen = unseen_pool[: spec["val_unseen"]]
    test_unseen = unseen_pool[spec["val_unseen"] :]

    val_pairs = sorted(set(val_seen) | set(val_unseen))
    test_pairs = sorted(set(test_seen) | set(test_unseen))
    assert len(val_pairs) == spec["val_seen"] + spec["val_unseen"]
    assert len(test_pairs) == spec["test_seen"] + spec["test_unseen"]

    out = Path(out_root) / name
    out.mkdir(parents=True, exist_ok=True)
    for fname, pairs in [
        ("train_pairs.txt", train),
        ("val_pairs.txt", val_pairs),
        ("test_pairs.txt", test_pairs),
    ]:
        (out / fname).write_text("".join(f"{s} {o}\n" for s, o in pairs))

    counter = 0
    lines = []
    for split, pairs, total in [
        ("train", train, spec["train_samples"]),
        ("val", val_pairs, spec["val_samples"]),
        ("test", test_pairs, spec["test_samples"]),
    ]:
        base, rem = divmod(total, len(pairs))
        for idx, (s, o) in enumerate(pairs):
            count = base + (1 if idx < rem else 0)
            for _ in range(count):
                lines.append(f"{name}_{counter:06d} {s} {o} {split}\n")
                counter += 1
    (out / "samples.txt").write_text("".join(lines))
    print(
        f"{name}: train {len(train)}/{spec['train_samples']}, "
        f"val {spec['val_seen']}+{spec['val_unseen']}/{spec['val_samples']}, "
        f"test {spec['test_seen']}+{spec['test_unseen']}/{spec['test_samples']}"
    )


if __name__ == "__main__":
    import sys

    root = sys.argv[1] if len(sys.argv) > 1 else "data/splits"
    for name, spec in SPECS.items():
        build(name, spec, root)
