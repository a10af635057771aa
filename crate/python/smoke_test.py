"""Smoke test for the zsc extension module.

Build and install first, e.g. ``maturin develop -m crates/python/Cargo.toml``,
then run ``python python/smoke_test.py``.
"""

import math
import tempfile
from pathlib import Path

import zsc


def check_metrics():
    assert abs(zsc.harmonic_mean(7.3, 19.2) - 10.5781) < 1e-4
    assert zsc.harmonic_mean(0.0, 27.4) == 0.0

    box = (0.0, 0.0, 1.0, 1.0)
    other = (2.0, 2.0, 3.0, 3.0)
    assert zsc.average_precision([("a", box, 0.9)], [("a", box), ("a", other)]) == 0.5

    assert zsc.bleu("a man rides a horse", ["a man rides a horse"]) == [1.0] * 4
    assert abs(zsc.bleu("the cat", ["the cat sat down"], 1)[0] - math.exp(-1)) < 1e-12
    assert zsc.rouge_l("a b c d", ["a c b d"]) == 0.75
    assert zsc.meteor_lite("sofa", ["couch"], [("couch", "sofa")]) == 0.5

    try:
        zsc.harmonic_mean(-1.0, 1.0)
    except zsc.ZscError:
        pass
    else:
        raise AssertionError("negative input accepted")


def check_building_blocks():
    vectors = {"horse": [1.0, 0.0, 0.0], "dog": [0.0, 1.0, 0.0], "zebra": [0.9, 0.1, 0.1]}
    emb = zsc.similarity_embeddings(vectors, ["horse", "dog"], ["horse", "zebra"])
    assert abs(emb["horse"][0] - 2.0) < 1e-12
    assert all(0.0 <= v <= 2.0 for v in emb["zebra"])

    scaled = zsc.scale_unseen({"zebra": 0.4, "horse": 0.4}, 2.0, {"zebra"})
    assert scaled == {"zebra": 0.8, "horse": 0.4}

    sentence = zsc.fill_template("a <animal> next to a <vehicle>", [("zebra", 0.9), ("bus", 0.8)])
    assert sentence == "a zebra next to a bus", sentence


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        config = zsc.write_synthetic(tmp, 7)
        exp = zsc.Experiment(str(config), output_dir=str(Path(tmp) / "out"), alpha=3.0)
        assert exp.unseen == ["zebra", "bus"]
        assert len(exp.embed()) == 8
        assert exp.train() is not None
        assert exp.calibrate() == 3.0
        dets = exp.detect()
        assert any(cls in exp.unseen for _, cls, _, _ in dets)
        captions = exp.caption()
        assert len(captions) == 48
        per_class, u_map, s_map, hm = exp.eval_det()
        assert 0.0 < hm <= 1.0 and set(per_class) >= set(exp.unseen)
        report = exp.eval_cap()
        assert report["avg_f1"] > 0.0
        print(f"U-mAP {u_map:.3f}  S-mAP {s_map:.3f}  HM {hm:.3f}  "
              f"F1 {report['avg_f1']:.3f}  METEOR {report['meteor']:.3f}")


if __name__ == "__main__":
    check_metrics()
    check_building_blocks()
    check_pipeline()
    print("smoke test passed")
