"""Smoke test for the eegtext extension module.

Build and install first, e.g. `maturin build --release -m crates/python/Cargo.toml`
followed by `pip install target/wheels/eegtext-*.whl`.
"""

import math
import tempfile
from pathlib import Path

import eegtext


def main():
    assert eegtext.parse_channel("Cz") == ("central", "midline", 0)
    assert eegtext.parse_channel("T6")[1] == "right"
    try:
        eegtext.parse_channel("Q9")
    except ValueError:
        pass
    else:
        raise AssertionError("bad label accepted")

    same = [[1.0, 0.0], [1.0, 0.0]]
    assert abs(eegtext.info_nce(same, same, 0.07) - math.log(2)) < 1e-12
    assert eegtext.balanced_accuracy([0, 0, 1, 1], [0, 1, 1, 1], 2) == (1.0 + 2 / 3) / 2
    assert abs(eegtext.auc_pr([0.9, 0.8, 0.7, 0.6], [True, False, True, False]) - 0.8333333333333333) < 1e-12

    config = eegtext.Config("data.n_subjects = 96\ntrain.epochs = 3\n")
    assert len(config.hash()) == 64
    assert max(eegtext.gradcheck(config, seed=0, seeds=2)) < 1e-4

    corpus = eegtext.Corpus.generate(config)
    assert dict(corpus.sizes()) == {"train": 64, "val": 16, "test": 16}
    assert corpus.report("train", 0).strip()

    model, curve = eegtext.Model.train(config, corpus, seed=0)
    assert len(curve) == 3 and all(math.isfinite(x) for x in curve)

    rows = [[math.sin(0.1 * t + c) for t in range(256)] for c in range(3)]
    emb = model.embed_eeg(rows, ["FP1", "CZ", "T3-T5"])
    assert len(emb) == 64 and abs(sum(v * v for v in emb) - 1.0) < 1e-9
    assert len(model.embed_text("focal slowing over the temporal regions")) == 64

    records = model.evaluate(corpus)
    methods = {r[1] for r in records}
    assert {"zero_shot_single", "zero_shot_ensemble", "linear_probe"} <= methods
    assert all(-1.0 <= r[4] <= 1.0 for r in records)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt.json"
        model.save(str(path))
        again = eegtext.Model.load(config, str(path))
        assert again.embed_eeg(rows, ["FP1", "CZ", "T3-T5"]) == emb
        corpus.write(config, tmp)
        assert dict(eegtext.Corpus.load(config, tmp).sizes()) == dict(corpus.sizes())

    print("python smoke test passed")


if __name__ == "__main__":
    main()
