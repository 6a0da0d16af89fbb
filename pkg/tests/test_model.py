import numpy as np
import pytest

from airmm import rng
from airmm.backbone import Backbone, BackboneConfig
from airmm.encoders import Encoders
from airmm.errors import CheckpointError, ConfigError
from airmm.instructions import TASK_ORDER
from airmm.model import CONFIGS, TRAINABLE, ModelSpec, UniversalModel, load_model
from airmm.numerics import Tensor, grad_check
from airmm.tasks import task_loss

SMALL = BackboneConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32)
N_T = N_C = 4


def make(config, dtype=np.float64, seed=0, cfg=SMALL, n_t=N_T, n_c=N_C):
    enc = Encoders(n_t, n_c, rng.stream(seed, 1), d_enc=6, hidden=8, dtype=dtype)
    bb = Backbone(cfg, rng.stream(seed, 2), dtype)
    bb.freeze()
    return UniversalModel(ModelSpec(config, n_t, n_c, lora_rank=2), enc, bb, seed)


def batch(model, task_id, n=3, seed=5):
    g = rng.stream(seed)
    spec = model.tasks[task_id]
    if spec.modality == "channel":
        feats = model.encoders.channel_tensor(g.normal(size=(n, 2 * N_T * N_C)))
    else:
        x = np.concatenate([g.integers(2, size=(n, 256)), g.uniform(size=(n, 4))], axis=1)
        feats = model.encoders.environment_tensor(x)
    target = {
        "positioning": g.uniform(size=(n, 2)),
        "los_nlos": g.integers(2, size=n),
        "precoding": g.normal(size=(n, N_T)) + 1j * g.normal(size=(n, N_T)),
        "beam_selection": g.integers(N_T, size=n),
        "path_loss": g.normal(size=(n, 1)),
    }[task_id]
    return feats, target


def loss_fn(model, task_id, feats, target):
    spec = model.tasks[task_id]
    return lambda _=None: task_loss(spec, model.forward(task_id, model.codes(spec.modality, feats)), target)


def test_unknown_config():
    with pytest.raises(ConfigError):
        ModelSpec("xx", 4, 4)


@pytest.mark.parametrize("config", CONFIGS)
def test_component_presence(config):
    m = make(config)
    g = m.groups()
    assert bool(g["prefix"]) == (config not in ("fp", "wm"))
    assert bool(g["lora"]) == (config not in ("wl", "wm"))
    assert set(m.census()) == set(TRAINABLE[config])
    trainable = {p.name for p in m.trainable_parameters()}
    for name, params in g.items():
        for p in params:
            assert p.requires_grad == (name in TRAINABLE[config])
            assert (p.name in trainable) == (name in TRAINABLE[config])


def test_wl_has_no_lora_parameters():
    m = make("wl")
    assert m.loras == {}
    assert not any(".A" in p.name or ".B" in p.name for p in m.trainable_parameters())


def test_wm_bypasses_backbone():
    m = make("wm")
    m.backbone.calls = 0
    for t in TASK_ORDER:
        feats, target = batch(m, t)
        loss_fn(m, t, feats, target)().backward()
    assert m.backbone.calls == 0


def test_sp_instruction_identical_for_all_tasks():
    m = make("sp")
    blocks = [m.instruction(t).data for t in TASK_ORDER]
    assert all(np.array_equal(b, blocks[0]) for b in blocks)
    full = make("full")
    assert not np.array_equal(full.instruction("precoding").data, full.instruction("path_loss").data)


def test_instruction_lengths():
    assert make("full").instruction("positioning").shape[0] == 5
    assert make("fp").instruction("positioning").shape[0] == 2


def test_te_tc_reinitialise_one_encoder():
    ref = make("full")
    te, tc = make("te"), make("tc")
    same = lambda a, b: all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    assert not same(te.encoders.epnn, ref.encoders.epnn) and same(te.encoders.cfenn, ref.encoders.cfenn)
    assert not same(tc.encoders.cfenn, ref.encoders.cfenn) and same(tc.encoders.epnn, ref.encoders.epnn)


def test_prefix_gradient_after_one_step_keyword_rows_frozen():
    for config in ("full", "sp", "te", "tc", "wl", "rl"):
        m = make(config)
        feats, target = batch(m, "precoding")
        loss_fn(m, "precoding", feats, target)().backward()
        key = "shared" if config == "sp" else "precoding"
        assert np.any(m.prefix.embeddings[key].grad != 0)
        assert m.backbone.tok_emb.grad is None


def _randomise_lora(m, seed=3):
    g = rng.stream(seed)
    for s in m.loras.values():
        for layer in s.layers:
            for ad in layer.values():
                ad.B.data = g.normal(size=ad.B.shape) * 0.1


@pytest.mark.parametrize("config", CONFIGS)
@pytest.mark.parametrize("task_id", TASK_ORDER)
def test_full_loss_gradient_through_model(config, task_id):
    m = make(config)
    _randomise_lora(m)
    feats, target = batch(m, task_id)
    f = loss_fn(m, task_id, feats, target)
    modality = m.tasks[task_id].modality
    checked = 0
    for p in m.trainable_parameters():
        # parameters another modality or task owns get no gradient from this loss
        if "adapter." in p.name and modality not in p.name:
            continue
        if p.name.startswith("lora.") and not p.name.startswith(f"lora.{modality}"):
            continue
        if p.name.startswith("head.") and not p.name.startswith(f"head.{task_id}"):
            continue
        if p.name.startswith("prefix.") and not (p.name.endswith(task_id) or p.name.endswith("shared")):
            continue
        if p.name.startswith("epnn") and modality != "environment":
            continue
        if p.name.startswith("cfenn") and modality != "channel":
            continue
        err = grad_check(f, p, coords=range(min(p.size, 12)))
        assert err < 1e-4, (p.name, err)
        checked += 1
    assert checked > 0


def test_checkpoint_round_trip_and_topology(tmp_path):
    m = make("full", dtype=np.float32)
    m.save(tmp_path / "m.aimc", {"pl_mean": 1.0, "pl_std": 2.0})
    again, header = load_model(tmp_path / "m.aimc")
    assert header["pl_std"] == 2.0
    for p, q in zip(m.parameters(), again.parameters()):
        assert p.name == q.name and np.array_equal(p.data, q.data)
    again.save(tmp_path / "n.aimc", {"pl_mean": 1.0, "pl_std": 2.0})
    assert (tmp_path / "m.aimc").read_bytes() == (tmp_path / "n.aimc").read_bytes()
    # a model file whose tensors do not fit the declared config is rejected
    wl = make("wl", dtype=np.float32)
    wl.save(tmp_path / "wl.aimc")
    raw = (tmp_path / "wl.aimc").read_bytes().replace(b'"config":"wl"', b'"config":"fp"')
    (tmp_path / "bad.aimc").write_bytes(raw)
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "bad.aimc")


def test_group_hashes_track_changes():
    m = make("full")
    before = m.group_hashes()
    m.heads["positioning"].bias.data = m.heads["positioning"].bias.data + 1
    after = m.group_hashes()
    assert [g for g in before if before[g] != after[g]] == ["heads"]
