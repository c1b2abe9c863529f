import warnings

import numpy as np
import pytest

from mmeda.data import MultiModalDataset, SynthSpec, generate_synthetic
from mmeda.models import (
    AemfConfig,
    AemfModel,
    CmfConfig,
    CmfModel,
    Mmeda1Config,
    Mmeda1Model,
    Mmeda2Config,
    Mmeda2Model,
    MlpConfig,
    MlpModel,
)
from mmeda.nn import Optimizer, make_rng
from mmeda.training import (
    DivergenceError,
    DroppedRowsWarning,
    TrainConfig,
    TrainHistory,
    batch_schedule,
    embed_dataset,
    fit,
    inner_schedule,
    steps_per_epoch,
    train_epoch,
    train_epoch_mmeda2,
)
from mmeda.autodiff import ShapeError


def mmeda2_for(ds, b, d=3, seed=0):
    cfg = Mmeda2Config(ds.image_shape, ds.n2, batch_size=b, embed_dim=d, channels=(2, 2))
    return Mmeda2Model(cfg, make_rng(seed))


def mmeda1_for(ds, b, d=3, seed=0):
    cfg = Mmeda1Config(ds.image_shape, ds.n2, batch_size=b, embed_dim=d, channels=(2, 2))
    return Mmeda1Model(cfg, make_rng(seed))


# -- schedules -----------------------------------------------------------------


@pytest.mark.parametrize(
    "n, b, expected",
    [
        (10, 3, [(0, 3), (3, 6), (6, 9)]),
        (6, 3, [(0, 3), (3, 6)]),
        (3, 3, [(0, 3)]),
    ],
)
def test_batch_schedule_examples(n, b, expected):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert batch_schedule(n, b) == expected


def test_batch_schedule_warns_on_drop():
    with pytest.warns(DroppedRowsWarning, match="dropping 1"):
        batch_schedule(10, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        batch_schedule(6, 3)


def test_batch_schedule_keep_partial():
    assert batch_schedule(10, 3, drop_last=False) == [(0, 3), (3, 6), (6, 9), (9, 10)]


def test_batch_larger_than_n():
    with pytest.raises(ValueError, match="exceeds"):
        batch_schedule(4, 5)


def test_inner_schedule():
    assert inner_schedule(100, 50) == [(0, 50), (50, 100)]
    assert inner_schedule(4, 50) == [(0, 4)]
    assert inner_schedule(7, 3) == [(0, 3), (3, 6), (6, 7)]


def test_steps_per_epoch_counts():
    assert steps_per_epoch("mmeda2", 100, 50, 100) == 4
    assert steps_per_epoch("mmeda2", 100, 50, 30) == 2
    assert steps_per_epoch("mmeda1", 103, 50) == 2
    assert steps_per_epoch("cmf", 103, 50) == 3


# -- epochs --------------------------------------------------------------------


@pytest.fixture(scope="module")
def wide_ds():
    # n2 = 2b so the inner loop runs twice per outer batch
    return generate_synthetic(SynthSpec(n=8, rank=2, image_shape=(1, 4, 4), n2=8, seed=3))


def test_mmeda2_epoch_step_count(wide_ds):
    model = mmeda2_for(wide_ds, 4)
    cfg = TrainConfig(batch_size=4, lr=1e-3)
    opt = Optimizer(model.parameters(), "adam", cfg.lr)
    _, _, steps = train_epoch(model, wide_ds, cfg, opt)
    assert steps == steps_per_epoch("mmeda2", 8, 4, 8) == 4
    assert opt.state.step == 4


def test_mmeda2_epoch_returns_mean_of_steps(wide_ds):
    model = mmeda2_for(wide_ds, 4)
    cfg = TrainConfig(batch_size=4, lr=1e-3)
    loss = train_epoch_mmeda2(model, wide_ds.m0, wide_ds.m1, cfg, Optimizer(model.parameters(), "adam", cfg.lr))
    assert np.isfinite(loss) and loss > 0


def test_mmeda2_full_batch_descent(wide_ds):
    model = mmeda2_for(wide_ds, 8)
    cfg = TrainConfig(batch_size=8, lr=1e-4, optimizer="sgd", max_epochs=2, tol=1e-12)
    _, hist = fit(model, wide_ds, cfg)
    assert hist.losses[1] <= hist.losses[0]


def test_mmeda1_full_batch_non_increasing(small_dataset):
    model = mmeda1_for(small_dataset, small_dataset.n)
    cfg = TrainConfig(batch_size=small_dataset.n, lr=1e-3, optimizer="sgd", max_epochs=10, tol=1e-15)
    _, hist = fit(model, small_dataset, cfg)
    assert hist.epochs_run == 10
    assert all(b <= a for a, b in zip(hist.losses, hist.losses[1:]))


def test_empty_schedule_rejected():
    ds = MultiModalDataset(np.zeros((2, 1, 4, 4)), np.zeros((2, 3)))
    model = Mmeda1Model(Mmeda1Config((1, 4, 4), 3, batch_size=2, embed_dim=2, channels=(2, 2)), make_rng(0))
    with pytest.raises(ValueError):
        train_epoch(model, ds, TrainConfig(batch_size=2), Optimizer(model.parameters()), rows=np.array([0]))


# -- fit -----------------------------------------------------------------------


def test_fit_single_epoch(small_dataset):
    _, hist = fit(mmeda2_for(small_dataset, 8), small_dataset, TrainConfig(batch_size=8, max_epochs=1))
    assert hist.epochs_run == 1 and len(hist.terms) == 1
    assert not hist.converged


def test_fit_deterministic(small_dataset):
    cfg = TrainConfig(batch_size=8, lr=1e-3, max_epochs=3, shuffle=True, seed=5)
    _, h1 = fit(mmeda2_for(small_dataset, 8), small_dataset, cfg)
    _, h2 = fit(mmeda2_for(small_dataset, 8), small_dataset, cfg)
    assert h1.losses == h2.losses
    assert h1.terms == h2.terms


def test_fit_converges_on_tiny_set(small_dataset):
    model = CmfModel(CmfConfig(small_dataset.n, [64, small_dataset.n2], embed_dim=3), make_rng(0))
    cfg = TrainConfig(batch_size=small_dataset.n, lr=1e-2, tol=1e-4, max_epochs=2000)
    _, hist = fit(model, small_dataset, cfg)
    assert hist.converged
    assert hist.epochs_run < cfg.max_epochs
    assert abs(hist.losses[-1] - hist.losses[-2]) < cfg.tol


def test_converged_flag_uses_absolute_difference(small_dataset):
    # loose tolerance: second epoch is always within it
    model = CmfModel(CmfConfig(small_dataset.n, [64, small_dataset.n2], embed_dim=3), make_rng(0))
    _, hist = fit(model, small_dataset, TrainConfig(batch_size=24, lr=1e-6, tol=1.0, max_epochs=50))
    assert hist.converged and hist.epochs_run == 2


def test_fit_divergence_reports_epoch_and_term(small_dataset):
    model = mmeda1_for(small_dataset, 8)
    model.conv.dconv2.bias.value[...] = np.inf
    with pytest.raises(DivergenceError) as err:
        fit(model, small_dataset, TrainConfig(batch_size=8, max_epochs=2))
    assert err.value.epoch == 1 and err.value.term == "x0"


def test_fit_shape_mismatch(small_dataset):
    model = mmeda1_for(small_dataset, 6)
    with pytest.raises(ShapeError):
        fit(model, small_dataset, TrainConfig(batch_size=8))


def test_cmf_trains_every_row_with_partial_batch():
    ds = generate_synthetic(SynthSpec(n=10, rank=2, image_shape=(1, 4, 4), n2=4, seed=0))
    model = CmfModel(CmfConfig(10, [16, 4], embed_dim=2), make_rng(0))
    before = model.row.value.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit(model, ds, TrainConfig(batch_size=4, lr=1e-2, max_epochs=1))
    assert np.all(np.any(model.row.value != before, axis=1))


def test_aemf_and_mlp_fit(small_dataset):
    aemf = AemfModel(AemfConfig([64, small_dataset.n2], batch_size=8, embed_dim=3), make_rng(0))
    _, h = fit(aemf, small_dataset, TrainConfig(batch_size=8, lr=1e-3, max_epochs=3))
    assert h.term_names == ["view0", "view1", "cat", "col0", "col1"]
    mlp = MlpModel(MlpConfig(64 + small_dataset.n2, hidden=[8, 4]), make_rng(0))
    _, h = fit(mlp, small_dataset, TrainConfig(batch_size=8, lr=1e-3, max_epochs=3))
    assert h.term_names == ["ce"]
    assert embed_dataset(mlp, small_dataset).shape == (small_dataset.n, 4)


def test_history_csv_header():
    hist = TrainHistory(["x0", "x1", "x2", "x1pp"], [1.5], [[0.5, 0.5, 0.25, 0.25]])
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,total,term_x0,term_x1,term_x2,term_x1pp"
    assert lines[1] == "1,1.5,0.5,0.5,0.25,0.25"


def test_embed_dataset_shapes(small_dataset):
    model = mmeda2_for(small_dataset, 8)
    assert embed_dataset(model, small_dataset).shape == (small_dataset.n, 3)
    cmf = CmfModel(CmfConfig(small_dataset.n, [64, small_dataset.n2], embed_dim=3), make_rng(0))
    np.testing.assert_array_equal(embed_dataset(cmf, small_dataset), cmf.row.value)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(tol=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
