"""Smoke tests for the _echoplan extension module."""

import json
import sys
import tempfile

import numpy as np

import _echoplan as ep


def test_episode_generation():
    e = ep.generate_episode(1, ep.Scenario.LEFT_TURN)
    assert len(e.frames) >= 8
    f = e.frames[0]
    raster = f.raster
    assert raster.shape == (32, 32, 5)
    assert np.isfinite(raster).all()
    assert f.gt_future.shape == (6, 2)
    assert ep.reverse_command(ep.Command.LEFT) == ep.Command.RIGHT


def test_dataset_roundtrip():
    eps = [ep.generate_episode(s, ep.Scenario.STRAIGHT) for s in (1, 2)]
    with tempfile.TemporaryDirectory() as d:
        ep.save_dataset(eps, d)
        loaded = ep.load_dataset(d)
        assert len(loaded) == 2
        assert ep.dataset_hash(d) == ep.dataset_hash(d)
        a = eps[0].frames[3]
        b = next(l for l in loaded if l.seed == 1).frames[3]
        assert np.array_equal(a.raster, b.raster)
        assert np.array_equal(a.gt_future, b.gt_future)


def test_train_and_evaluate():
    eps = [ep.generate_episode(s, ep.Scenario.STRAIGHT) for s in (1, 2)]
    with tempfile.TemporaryDirectory() as d:
        ep.save_dataset(eps, d)
        config = ep.TrainConfig()
        config.epochs = 1
        config.batch_size = 4
        config.n_s = 4
        config.k = 8
        config.dataset = d
        ckpt = ep.train(config)
        assert ckpt.step > 0

        pred = ckpt.infer(eps[0].frames[0].raster, ep.Command.STRAIGHT)
        assert pred.shape == (6, 2)
        assert np.isfinite(pred).all()

        report = json.loads(ep.evaluate_open_loop(ckpt, d))
        assert "final_max" in report and "average" in report
        assert np.isfinite(report["final_max"]["l2"]["avg"])

        closed = json.loads(ep.evaluate_closed_loop(ckpt, 3))
        assert "success_rate_pct" in closed and "score" in closed


def test_checkpoint_file_roundtrip():
    eps = [ep.generate_episode(9, ep.Scenario.RIGHT_TURN)]
    with tempfile.TemporaryDirectory() as d:
        ep.save_dataset(eps, d)
        config = ep.TrainConfig()
        config.epochs = 1
        config.n_s = 4
        config.k = 8
        config.dataset = d
        ckpt = ep.train(config)
        path = d + "/model.ckpt"
        ckpt.save(path)
        back = ep.Checkpoint.load(path)
        assert back.step == ckpt.step
        r = eps[0].frames[0].raster
        assert np.array_equal(back.infer(r, ep.Command.RIGHT), ckpt.infer(r, ep.Command.RIGHT))


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
