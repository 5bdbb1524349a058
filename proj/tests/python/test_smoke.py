import json
import math
from pathlib import Path

import numpy as np
import pytest

import dadee

SMOKE = Path(__file__).resolve().parents[2] / "configs" / "smoke.json"


@pytest.fixture(scope="module")
def config():
    cfg = dadee.load_config(SMOKE)
    cfg.seeds = [7]
    return cfg


@pytest.fixture(scope="module")
def run_dir(config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    dadee.train_source(config, out)
    dadee.adapt(config, out)
    return out


def test_speedup_and_d_a():
    assert dadee.speedup([0, 0, 0, 250]) == 1.0
    assert dadee.speedup([0] * 5 + [250] + [0] * 6) == 2.0
    assert dadee.d_a_from_error(0.5) == 0.0
    assert dadee.d_a_from_error(0.0) == 2.0


def test_a_distance_separates_blobs():
    rng = np.random.default_rng(0)
    a = rng.normal(-1.5, 1.0, size=(300, 4))
    b = rng.normal(1.5, 1.0, size=(300, 4))
    assert dadee.a_distance(a, b, seed=1).d_a >= 1.5
    same = dadee.a_distance(a[:150], a[150:], seed=1)
    assert same.d_a <= 0.5


def test_config_errors_are_value_errors():
    with pytest.raises(dadee.ValidationError, match="bogus"):
        dadee.parse_config(json.dumps({"bogus": 1}))
    assert issubclass(dadee.ValidationError, ValueError)


def test_digest_ignores_seeds(config):
    before = config.digest()
    other = dadee.load_config(SMOKE)
    other.seeds = [1, 2, 3]
    assert other.digest() == before


def test_checkpoints_and_early_exit(config, run_dir):
    ckpt = dadee.load_checkpoint(run_dir / "adapted-seed0007.ckpt.json")
    assert ckpt.phase == "adapted"
    assert ckpt.seed == 7
    assert ckpt.config_digest == config.digest()
    model = ckpt.model
    data = dadee.prepare_data(config, 7)
    assert model.vocab_size == data.vocab_size

    ids, _ = data.examples("target_test")[0]
    probs = model.exit_probabilities(ids)
    assert len(probs) == model.num_layers
    for p in probs:
        assert math.isclose(sum(p), 1.0, abs_tol=1e-5)

    for alpha in (0.8, 0.9, 1.0):
        d = model.infer(ids, alpha)
        expected = next(i for i, p in enumerate(probs) if i + 1 == len(probs) or max(p) >= alpha)
        assert d.exit_layer == expected + 1
        assert d.label == int(np.argmax(probs[expected]))

    points = model.sweep(data, "target_test")
    assert [p.alpha for p in points] == [0.8, 0.85, 0.9, 0.95, 1.0]
    assert points[-1].accuracy == pytest.approx(model.per_exit_accuracy(data, "target_test")[-1])
    feats = model.features(data, "source_test", model.num_layers)
    assert feats.shape == (data.size("source_test"), json.loads(config.to_json())["encoder"]["d_model"])


def test_evaluate_writes_report(config, run_dir):
    written = [Path(p) for p in dadee.evaluate(config, run_dir)]
    report = json.loads(next(p for p in written if p.name.startswith("report-")).read_text())
    assert report["seed"] == 7
    assert 0.0 <= report["final_target_accuracy"] <= 1.0


def test_adapt_rejects_wrong_phase(config, run_dir):
    with pytest.raises(dadee.ValidationError):
        dadee.adapt(config, run_dir, run_dir / "adapted-seed0007.ckpt.json")
