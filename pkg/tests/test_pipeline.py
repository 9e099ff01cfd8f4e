import json
from dataclasses import replace

import numpy as np
import pytest

from hazecast import pipeline as pl
from hazecast.cluster import series_distance
from hazecast.data import generate_synthetic
from hazecast.errors import NoModels, ValidationError
from hazecast.retnet import HyperParams, RetNetConfig, predict

SMALL_MODEL = RetNetConfig(d=8, h=2, L=1, ffn_dim=16, conv_channels=(4, 8))


def _cfg(**kw):
    base = dict(model=SMALL_MODEL, hyper=HyperParams(epochs=3, batch=16), seed=7)
    base.update(kw)
    return pl.PipelineConfig(**base)


@pytest.fixture(scope="module")
def trained():
    data = generate_synthetic(14, 2, 0.4)
    cfg = _cfg()
    return data, cfg, pl.run_training_pipeline(data, cfg)


def test_config_validation():
    with pytest.raises(ValidationError):
        pl.PipelineConfig(alpha=1.5)
    with pytest.raises(ValidationError):
        pl.PipelineConfig(assign_mode="nearest")
    with pytest.raises(ValidationError):
        pl.PipelineConfig(k=0)
    with pytest.raises(ValidationError):
        pl.PipelineConfig(k_range=(1, 3))
    cfg = _cfg(k=3)
    assert pl.PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_one_cluster_per_group():
    data = generate_synthetic(10, 0, 0.0)
    res = pl.run_training_pipeline(data, _cfg(k=1))
    assert len(res.models) == 2
    assert sorted(m.group for m in res.models.models) == ["high", "low"]


def test_clusters_nonempty_and_routing_total(trained):
    data, cfg, res = trained
    labels = res.clustering.labels
    assert labels.min() >= 0
    assert sorted(set(labels.tolist())) == list(range(len(res.models)))
    assert all(m.n_train >= cfg.hyper.batch for m in res.models.models)
    routed = pl.assign_all(res.prepared.test, res.models)
    assert routed.shape == (len(res.prepared.test),)
    assert set(routed.tolist()) <= set(range(len(res.models)))


def test_sixty_days_default_model_clusters_nonempty():
    data = generate_synthetic(60, 11, 0.3)
    # default clustering and model; two epochs keep the smoke run short
    res = pl.run_training_pipeline(data, pl.PipelineConfig(hyper=HyperParams(epochs=2), seed=1))
    counts = np.bincount(res.clustering.labels)
    assert len(counts) == len(res.models) and counts.min() > 0
    assert [m.n_train for m in res.models.models] == counts.tolist()


def test_zero_windows_are_routed(trained):
    _, _, res = trained
    zero = [i for i, s in enumerate(res.prepared.train) if s.target_history.sum() == 0]
    assert zero, "synthetic nights should produce all-zero windows"
    norms = [np.linalg.norm(m.medoid) for m in res.models.models]
    assert set(res.clustering.labels[zero].tolist()) == {int(np.argmin(norms))}


def test_deterministic_weights(trained):
    data, cfg, res = trained
    again = pl.run_training_pipeline(data, cfg)
    for a, b in zip(res.models.models, again.models.models):
        assert a.params.arrays.keys() == b.params.arrays.keys()
        for k in a.params.arrays:
            np.testing.assert_array_equal(a.params[k], b.params[k])


def test_assign_matches_bruteforce(trained):
    _, _, res = trained
    models = res.models.models
    for s in res.prepared.val[:40]:
        x = s.target_history
        if x.sum() != 0:
            d = [series_distance(x, m.medoid) for m in models]
            assert pl.assign_cluster(s.inputs, res.models, "medoid") == int(np.argmin(d))
        shifted = np.vstack([s.inputs[:1], s.inputs[:-1]])
        errs = [(predict(m.params, shifted[None])[0, 0] - s.inputs[-1, -1]) ** 2 for m in models]
        assert pl.assign_cluster(s.inputs, res.models, "loss") == int(np.argmin(errs))


def test_assign_medoid_and_single_model(trained):
    _, _, res = trained
    for m in res.models.models:
        window = np.zeros((12, 4))
        window[:, -1] = m.medoid
        assert pl.assign_cluster(window, res.models, "medoid") == m.label
    one = replace(res.models, models=res.models.models[:1])
    assert pl.assign_cluster(np.ones((12, 4)), one, "loss") == 0
    with pytest.raises(NoModels):
        pl.assign_cluster(np.ones((12, 4)), [], "medoid")


def test_forecast_report_roundtrip(trained, tmp_path):
    _, cfg, res = trained
    rep = pl.forecast(res.prepared.test, res.models, cfg, res.prepared.denorm)
    assert all(len(yh) == len(y) == cfg.horizon for _, _, yh, y in rep.predictions)
    assert rep.metrics["rmse"] >= rep.metrics["mae"] >= 0
    paths = pl.emit_report(rep, tmp_path)
    back = pl.metrics_from_forecast_csv(paths[0])
    written = json.loads(paths[1].read_text())
    for k in ("rmse", "mae", "r2"):
        assert abs(back[k] - written[k]) <= 1e-9
    assert written["flops"] == rep.flops and written["params"] == rep.param_count
    expected = cfg.alpha * np.mean([m.train_loss for m in res.models.models])
    Y = np.stack([s.target_future for s in res.prepared.test])
    Yhat = np.zeros_like(Y)
    for i, (s, (_, lab, _, _)) in enumerate(zip(res.prepared.test, rep.predictions)):
        Yhat[i] = predict(res.models.models[lab].params, s.inputs[None])[0]
    expected += (1 - cfg.alpha) * np.mean((Y - Yhat) ** 2)
    assert rep.combined_objective == pytest.approx(expected, rel=1e-12)


def test_empty_report(trained, tmp_path):
    _, cfg, res = trained
    rep = pl.forecast([], res.models, cfg)
    paths = pl.emit_report(rep, tmp_path)
    assert paths[0].read_text() == "origin_index,cluster_id,step,actual,predicted\n"
    m = json.loads(paths[1].read_text())
    assert m["rmse"] is None and m["mae"] is None and m["r2"] is None


def test_model_set_roundtrip(trained, tmp_path):
    _, cfg, res = trained
    pl.save_model_set(res.models, tmp_path)
    back = pl.load_model_set(tmp_path)
    assert back.config == res.models.config
    X = np.stack([s.inputs for s in res.prepared.test])
    for a, b in zip(res.models.models, back.models):
        assert (a.label, a.group) == (b.label, b.group)
        np.testing.assert_array_equal(predict(a.params, X), predict(b.params, X))
        np.testing.assert_array_equal(a.medoid, b.medoid)


def test_merge_small_clusters():
    D = np.array([
        [0, 1, 9, 9, 8],
        [1, 0, 9, 9, 8],
        [9, 9, 0, 1, 7],
        [9, 9, 1, 0, 7],
        [8, 8, 7, 7, 0.0],
    ])
    merged = pl._merge_small(np.array([0, 0, 1, 1, 2]), D, 2)
    assert merged.tolist() == [0, 0, 1, 1, 1]


def test_repair_genome():
    g = pl.repair_genome({"d": 32, "h": 8, "L": 1})
    assert g["h"] == 8  # d_h = 4, even
    for d in (32, 64, 128):
        for h in (1, 2, 4, 8):
            g = pl.repair_genome({"d": d, "h": h})
            assert d % g["h"] == 0 and (d // g["h"]) % 2 == 0


def test_optimize_small(tmp_path):
    data = generate_synthetic(8, 1, 0.3)
    cfg = _cfg(optimizer="nsga2", search_epochs=1,
               search=pl.SearchConfig(population=4, generations=1, seed=0))
    search = pl.optimize(pl.prepare(data, cfg), cfg)
    assert search["front"]
    pl.write_search(search, tmp_path)
    lines = (tmp_path / "trials.csv").read_text().splitlines()
    assert lines[0].endswith("rmse,flops,rank")
    assert len(lines) - 1 == len(search["trials"])
    pareto = json.loads((tmp_path / "pareto.json").read_text())
    assert pareto["best"]["rmse"] == min(p["rmse"] for p in pareto["pareto"])
