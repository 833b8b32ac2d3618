#!/usr/bin/env python3
"""End-to-end smoke test for the backdoor_lab_py extension module.

Build the module first:

    cargo build -p backdoor-lab-py --release --features extension-module

The script locates the compiled library in target/, exposes it under its
importable name, and runs a miniature attack/defense round trip.
"""

import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "release" / "libbackdoor_lab_py.so",
        REPO / "target" / "debug" / "libbackdoor_lab_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "libbackdoor_lab_py.so not found; run "
            "`cargo build -p backdoor-lab-py --release --features extension-module`"
        )
    stage = Path(tempfile.mkdtemp(prefix="backdoor_lab_py_"))
    shutil.copy2(built, stage / "backdoor_lab_py.so")
    sys.path.insert(0, str(stage))
    import backdoor_lab_py

    return backdoor_lab_py


def main():
    bl = import_module()

    train, test = bl.synthetic_reviews(400, 100, seed=7)
    assert len(train) == 400 and len(test) == 100
    assert train.labels == ["Positive", "Negative"]

    # determinism
    again, _ = bl.synthetic_reviews(400, 100, seed=7)
    assert train.samples() == again.samples()

    mixed = bl.poison_train(
        train, kind="rare_word", payload="bb", rate=0.2, target_label="Positive", seed=7
    )
    poisoned_rows = [s for s in mixed.samples() if s[3]]
    assert len(poisoned_rows) == 80, len(poisoned_rows)
    assert all("bb" in text for _, text, _, _ in poisoned_rows)

    model = bl.train_victim(mixed, seed=7, epochs=8, eta_max=0.5, dimension=1 << 14)
    clean_acc = bl.cacc(model, test)
    assert clean_acc >= 0.9, clean_acc

    ptest = bl.poison_test(test, kind="rare_word", payload="bb", target_label="Positive", seed=7)
    attack_rate = bl.asr(model, ptest, "Positive")
    assert attack_rate >= 0.9, attack_rate

    # dual-trigger rewrite closes the loop with the detectors
    rewritten = bl.rewrite_dual("the movie was quite lovely .")
    assert bl.detect(rewritten) == (True, True), rewritten
    assert bl.detect("the movie was quite lovely .") == (False, False)

    label, probs = model.predict("the movie was truly great and lovely .")
    assert label in ("Positive", "Negative")
    assert abs(sum(probs) - 1.0) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "model.json")
        model.save(path)
        back = bl.VictimModel.load(path)
        assert back.predict("a dull and tedious plot .") == model.predict(
            "a dull and tedious plot ."
        )

        data_path = str(Path(d) / "test.jsonl")
        test.save(data_path)
        loaded = bl.Dataset.load(data_path, ["Positive", "Negative"])
        assert loaded.samples() == test.samples()

    print(f"smoke test passed: cacc={clean_acc:.3f} asr={attack_rate:.3f}")


if __name__ == "__main__":
    main()
