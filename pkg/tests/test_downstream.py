import numpy as np
import pytest

from mechmeta import downstream, langs, nn
from mechmeta.downstream import TrainSchedule
from mechmeta.errors import ScheduleError
from mechmeta.langs import get_language
from mechmeta.nn import ArchDescriptor

ARCH = ArchDescriptor(cell="lstm", layers=1, hidden_dim=8)


@pytest.mark.parametrize("n,sgd,adam,steps", [(1, 5, 1, 6), (10, 5, 1, 6), (100, 10, 5, 60)])
def test_schedule_rows(n, sgd, adam, steps):
    s = TrainSchedule.for_n(n)
    assert (s.sgd_epochs, s.adam_epochs, s.batch_size) == (sgd, adam, 32)
    assert (s.sgd_lr, s.adam_lr) == (1.0, 5e-4)
    assert s.total_steps == steps


def test_nonstandard_n_needs_explicit_epochs():
    with pytest.raises(ScheduleError):
        TrainSchedule.for_n(7)
    s = TrainSchedule.for_n(7, sgd_epochs=2, adam_epochs=0)
    assert s.total_steps == 2
    with pytest.raises(ScheduleError):
        TrainSchedule.for_n(10, sgd_epochs=-1)


def test_step_count_and_provenance():
    init = nn.init_params(ARCH, np.random.default_rng(0))
    lang = get_language("anbn")
    trained = downstream.train(init, lang, TrainSchedule.for_n(100), np.random.default_rng(1), seed=1)
    assert len(trained.losses) == 60
    prov = trained.provenance
    assert prov["init"] == "unmetatrained" and prov["target"] == "anbn" and prov["n_strings"] == 100
    assert len(prov["train_set"]) == 100
    assert all(langs.membership(lang, s) and 1 <= langs.prefix_length(lang, s) <= 10 for s in prov["train_set"])


def test_training_is_deterministic_and_does_not_touch_init():
    init = nn.init_params(ARCH, np.random.default_rng(0))
    before = init.copy()
    lang = get_language("dyck")
    a = downstream.train(init, lang, TrainSchedule.for_n(10), np.random.default_rng(5))
    b = downstream.train(init, lang, TrainSchedule.for_n(10), np.random.default_rng(5))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in init)
    assert a.losses == b.losses
    assert all(np.array_equal(init[k], before[k]) for k in init)


def test_fixed_train_set_is_used():
    init = nn.init_params(ARCH, np.random.default_rng(0))
    lang = get_language("anbn")
    fixed = [(3, 4)] * 10
    t = downstream.train(init, lang, TrainSchedule.for_n(10), np.random.default_rng(0), train_set=fixed)
    assert t.provenance["train_set"] == [[3, 4]] * 10


def test_loss_decreases():
    init = nn.init_params(ArchDescriptor(cell="lstm", layers=1, hidden_dim=16), np.random.default_rng(0))
    lang = get_language("anbn")
    s = TrainSchedule.for_n(100)
    t = downstream.train(init, lang, s, np.random.default_rng(0))
    assert np.mean(t.losses[-4:]) < t.losses[0]


def test_sample_train_set_validation():
    with pytest.raises(ValueError):
        downstream.sample_train_set(get_language("an"), 0, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_single_string_is_memorised(seed):
    arch = ArchDescriptor(cell="lstm", layers=2, hidden_dim=16)
    init = nn.init_params(arch, np.random.default_rng(seed))
    t = downstream.train(init, get_language("dyck"), TrainSchedule.for_n(1), np.random.default_rng(seed))
    batch = nn.pad_batch(t.provenance["train_set"])
    assert len(t.losses) == 6
    assert nn.loss(t.params, batch) <= nn.loss(init, batch)
