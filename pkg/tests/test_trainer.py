import math

import numpy as np
import pytest

from travelgan import losses as L
from travelgan import trainer as T
from travelgan.data import DatasetSpec, gen_domain, to_tensor
from travelgan.networks import ArchitectureSpec, ConfigError

ARCH = ArchitectureSpec(image_size=16, base_filters=4, latent_dim=8)


def tiny_config(**kw):
    base = dict(arch=ARCH, batch_size=4, steps=5, seed=3, log_every=1)
    base.update(kw)
    return T.TrainingConfig(**base)


@pytest.fixture(scope="module")
def data():
    x = to_tensor(gen_domain(DatasetSpec(kind="beads", count=24, seed=1, image_size=16))[0])
    y = to_tensor(gen_domain(DatasetSpec(kind="grid", count=24, seed=1, image_size=16))[0])
    return x, y


def snapshot(state):
    return {n: {k: v.copy() for k, v in net.params.items()} for n, net in state.nets.items()}


def test_network_layout():
    assert set(T.init_state(tiny_config()).nets) == {"G_XY", "D_Y", "S_XY", "G_YX", "D_X", "S_YX"}
    assert set(T.init_state(tiny_config(directions="xy_only")).nets) == {"G_XY", "D_Y", "S_XY"}
    shared = T.init_state(tiny_config(siamese_sharing="shared"))
    assert set(shared.nets) == {"G_XY", "D_Y", "G_YX", "D_X", "S"}
    assert shared.siamese("xy") is shared.siamese("yx")


def test_adam_defaults():
    state = T.init_state(tiny_config())
    for st in state.adam.values():
        assert (st.lr, st.beta1, st.beta2) == (0.0002, 0.5, 0.9)


@pytest.mark.parametrize("kw", [{"batch_size": 1}, {"steps": -1}, {"directions": "yx"},
                                {"siamese_sharing": "pooled"}])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        tiny_config(**kw)


def test_config_round_trip():
    cfg = tiny_config(loss=L.LossConfig(margin=2.0))
    assert T.TrainingConfig.from_dict(cfg.to_dict()) == cfg


def test_one_step_changes_every_parameter(data):
    x, y = data
    state = T.init_state(tiny_config())
    before = snapshot(state)
    T.train_step(state, x[:4], y[:4])
    for name, params in before.items():
        for k, v in params.items():
            if k.endswith("bias") and name.startswith("S") and k.startswith("fc"):
                continue  # translation-invariant under every siamese loss
            assert not np.array_equal(v, state.nets[name].params[k]), (name, k)
    assert state.step == 1 and len(state.history) == 1


def test_update_isolation_and_order(data, monkeypatch):
    x, y = data
    state = T.init_state(tiny_config())
    order = []
    original = T._update

    def watched(st, name, loss, tag, parts):
        before = snapshot(st)
        grads = original(st, name, loss, tag, parts)
        after = snapshot(st)
        for n in before:
            same = all(np.array_equal(before[n][k], after[n][k]) for k in before[n])
            assert same == (n != name), f"{tag} update of {name} touched {n}"
        order.append(name)
        return grads

    monkeypatch.setattr(T, "_update", watched)
    T.train_step(state, x[:4], y[:4])
    assert order == ["D_Y", "G_XY", "S_XY", "D_X", "G_YX", "S_YX"]
    assert all(st.step == 1 for st in state.adam.values())


def test_discriminator_batches_distinct(data, monkeypatch):
    x, y = data
    state = T.init_state(tiny_config(directions="xy_only"))
    seen = []
    original = T.forward

    def spy(net, inp, mode="train", **kw):
        if net is state.nets["D_Y"]:
            arr = inp.data if hasattr(inp, "data") else np.asarray(inp)
            seen.append((arr.shape[0], kw.get("trainable", False)))
        return original(net, inp, mode, **kw)

    monkeypatch.setattr(T, "forward", spy)
    T.train_step(state, x[:4], y[:4])
    trained = [n for n, tr in seen if tr]
    assert trained == [4, 4]  # one real pass and one generated pass, never concatenated
    assert all(n == 4 for n, _ in seen)


def test_siamese_zero_gradient_degenerate(data, monkeypatch):
    x, y = data
    cfg = tiny_config(directions="xy_only", loss=L.LossConfig(margin=1e-9, travel_weight=0.0))
    state = T.init_state(cfg)
    grads = {}
    original = T._update

    def capture(st, name, loss, tag, parts):
        g = original(st, name, loss, tag, parts)
        grads[name] = g
        return g

    monkeypatch.setattr(T, "_update", capture)
    before = snapshot(state)["S_XY"]
    T.train_step(state, x[:4], y[:4])
    assert all(np.all(g == 0) for g in grads["S_XY"].values())
    assert all(np.array_equal(before[k], state.nets["S_XY"].params[k]) for k in before)


def test_determinism_50_steps(data):
    x, y = data
    cfg = tiny_config(steps=50)
    a, b = T.MemorySink(), T.MemorySink()
    sa = T.train(cfg, x, y, a)
    sb = T.train(cfg, x, y, b)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    assert strip(a.rows) == strip(b.rows) and len(a.rows) == 50
    for n in sa.nets:
        for k in sa.nets[n].params:
            assert np.array_equal(sa.nets[n].params[k], sb.nets[n].params[k])


def test_different_seeds_differ(data):
    x, y = data
    a, b = T.MemorySink(), T.MemorySink()
    T.train(tiny_config(steps=2, seed=1), x, y, a)
    T.train(tiny_config(steps=2, seed=2), x, y, b)
    assert a.rows[-1]["l_d"] != b.rows[-1]["l_d"]


def test_steps_zero_initial_checkpoint_only(data):
    x, y = data
    sink = T.MemorySink()
    state = T.train(tiny_config(steps=0), x, y, sink)
    assert state.step == 0 and sink.rows == [] and sink.checkpoints == [0]


def test_log_and_checkpoint_cadence(data):
    x, y = data
    sink = T.MemorySink()
    T.train(tiny_config(steps=7, log_every=3, checkpoint_every=2), x, y, sink)
    assert [r["step"] for r in sink.rows] == [0, 3, 6]
    assert sink.checkpoints == [2, 4, 6, 7]
    row = sink.rows[0]
    assert set(row) == {"step", "l_d", "l_adv_g", "l_travel", "l_sc", "wall_ms", "per_direction"}
    assert all(math.isfinite(row[k]) for k in ("l_d", "l_adv_g", "l_travel", "l_sc"))


def test_long_run_logs_every_step():
    x = to_tensor(gen_domain(DatasetSpec(kind="beads", count=32, seed=2, image_size=16))[0])
    y = to_tensor(gen_domain(DatasetSpec(kind="grid", count=32, seed=2, image_size=16))[0])
    sink = T.MemorySink()
    cfg = T.TrainingConfig(arch=ArchitectureSpec(16, 2, 4), batch_size=4, steps=500, seed=0,
                           directions="xy_only", log_every=1)
    state = T.train(cfg, x, y, sink)
    assert len(sink.rows) == 500 and state.step == 500
    assert all(math.isfinite(v) for h in state.history for d in h.values() for v in d.values())


def test_dataset_errors(data):
    x, y = data
    with pytest.raises(ConfigError, match="fewer than batch_size"):
        T.train(tiny_config(batch_size=8), x[:5], y)
    with pytest.raises(ConfigError, match="empty"):
        T.train(tiny_config(), x[:0], y)


def test_divergence_diagnostics(data):
    x, y = data
    bad = x.copy()
    bad[:] = np.nan
    with pytest.raises(T.TrainingDiverged) as exc:
        T.train(tiny_config(), bad, y)
    diag = exc.value.diagnostics
    assert diag["step"] == 0 and "loss_parts" in diag and "grad_norms" in diag


def test_shared_siamese_trains(data):
    x, y = data
    state = T.init_state(tiny_config(siamese_sharing="shared"))
    before = snapshot(state)["S"]
    T.train_step(state, x[:4], y[:4])
    assert state.adam["S"].step == 1
    assert any(not np.array_equal(before[k], state.nets["S"].params[k]) for k in before)
