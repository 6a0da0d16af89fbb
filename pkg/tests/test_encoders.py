import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airmm import rng
from airmm.encoders import (
    Adapter,
    Encoders,
    align,
    alignment_corpus,
    channel_features,
    codes,
    contrastive_align,
    info_nce,
    load_encoders,
    matched_mismatched,
    retrieval_top1,
    save_encoders,
)
from airmm.errors import BatchError, DimensionError
from airmm.numerics import Tensor, grad_check, l2_normalize
from airmm.scene import ChannelConfig, build_record, generate_scene, place_ue


@pytest.fixture(scope="module")
def enc():
    return Encoders(16, 16, rng.stream(0), dtype=np.float64, csi_scale=1.0)


def test_environment_code_unit_norm(enc):
    x = rng.stream(1).uniform(size=(5, 260))
    z = enc.encode_environment(x).data
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)


def test_channel_code_unit_norm_and_deterministic(enc):
    x = rng.stream(2).normal(size=(4, 512))
    a, b = enc.encode_channel(x).data, enc.encode_channel(x).data
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-6)


def test_zero_csi_gives_finite_code(enc):
    # zero-initialised biases: the code is the (finite) zero vector before training
    z = enc.encode_channel(np.zeros((1, 512))).data
    assert np.all(np.isfinite(z))


def test_wrong_widths_rejected(enc):
    with pytest.raises(DimensionError):
        enc.encode_environment(np.zeros((2, 259)))
    with pytest.raises(DimensionError):
        enc.encode_channel(np.zeros((2, 500)))


def test_channel_features_are_phase_invariant():
    x = rng.stream(3).normal(size=(2, 512))
    z = x[:, 0::2] + 1j * x[:, 1::2]
    z2 = z * np.exp(1j * 0.7)
    x2 = np.empty_like(x)
    x2[:, 0::2], x2[:, 1::2] = z2.real, z2.imag
    assert np.allclose(channel_features(x, 16, 16), channel_features(x2, 16, 16), atol=1e-12)


def test_adapter_affine_and_shape():
    ad = Adapter(32, 64, rng.stream(4), np.float64)
    ad.weight.data[:] = 0
    ad.bias.data = np.arange(64.0)
    out = ad(Tensor(rng.stream(5).normal(size=(3, 32))))
    assert out.shape == (3, 64)
    assert np.array_equal(out.data, np.tile(np.arange(64.0), (3, 1)))
    with pytest.raises(DimensionError):
        ad(Tensor(np.zeros((1, 31))))


def test_adapter_gradient():
    ad = Adapter(8, 6, rng.stream(6), np.float64)
    x = Tensor(rng.stream(7).normal(size=(4, 8)))
    f = lambda _=None: (ad(x) ** 2).sum()
    assert grad_check(f, ad.weight) < 1e-5
    assert grad_check(f, ad.bias) < 1e-5


def test_single_pair_batch_rejected():
    z = Tensor(np.ones((1, 4)) / 2)
    with pytest.raises(BatchError):
        contrastive_align(z, z, 0.07)


def test_perfect_alignment_limit():
    sim = -np.ones((2, 2)) + 2 * np.eye(2)
    assert float(info_nce(Tensor(sim), 0.07).data) < 1e-6


def test_learnable_temperature_matches_float():
    sim = Tensor(rng.stream(8).uniform(-1, 1, size=(6, 6)))
    t = Tensor(np.array([np.log(1 / 0.07)]))
    assert abs(float(info_nce(sim, t).data) - float(info_nce(sim, 0.07).data)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_contrastive_loss_permutation_equivariant(seed):
    g = rng.stream(seed)
    a = l2_normalize(Tensor(g.normal(size=(8, 5)))).data
    b = l2_normalize(Tensor(g.normal(size=(8, 5)))).data
    p = g.permutation(8)
    l1 = float(contrastive_align(Tensor(a), Tensor(b), 0.1).data)
    l2 = float(contrastive_align(Tensor(a[p]), Tensor(b[p]), 0.1).data)
    assert abs(l1 - l2) < 1e-10


def test_contrastive_gradient_wrt_encoder_weights():
    enc64 = Encoders(4, 4, rng.stream(9), d_enc=6, hidden=8, dtype=np.float64)
    env = enc64.environment_tensor(rng.stream(10).uniform(size=(5, 260)))
    csi = enc64.channel_tensor(rng.stream(11).normal(size=(5, 32)))
    f = lambda _=None: contrastive_align(enc64.epnn_codes(env), enc64.cfenn_codes(csi), enc64.log_inv_temp)
    for p in (enc64.epnn.layers[0].weight, enc64.cfenn.layers[-1].weight, enc64.log_inv_temp):
        assert grad_check(f, p, coords=range(min(p.size, 40))) < 1e-5


def test_retrieval_perfect_and_too_small():
    z = np.eye(64)
    assert retrieval_top1(z, z) == 1.0
    with pytest.raises(BatchError):
        retrieval_top1(z[:10], z[:10])


@pytest.fixture(scope="module")
def small_alignment():
    train, held = alignment_corpus(3, n_areas=4, per_area=40, held_out_per_area=16)
    enc, history = align(train, 3, epochs=15, batch=32)
    return train, held, enc, history


def test_alignment_lowers_loss_and_freezes(small_alignment):
    _, _, enc, history = small_alignment
    assert history[-1] < history[0]
    assert not any(p.requires_grad for p in enc.parameters())


def test_zero_csi_code_after_alignment_is_bias_path(small_alignment):
    _, _, enc, _ = small_alignment
    a = enc.encode_channel(np.zeros((1, 512))).data
    b = enc.encode_channel(np.zeros((1, 512))).data
    assert np.all(np.isfinite(a)) and np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1) < 1e-6


def test_alignment_separates_matched_pairs(small_alignment):
    _, held, enc, _ = small_alignment
    e, c = codes(enc, held)
    matched, mismatched = matched_mismatched(e, c)
    assert matched > mismatched
    # codes of different areas are distinct
    assert float(e[0] @ e[-1]) < 1 - 1e-6


def test_nearby_ues_have_closer_channel_codes(small_alignment):
    _, _, enc, _ = small_alignment
    cfg = ChannelConfig()
    scene = generate_scene(3, 1000)
    g = rng.stream(12)

    def code_at(xy):
        built = build_record(scene.with_ue(xy), cfg)
        if built is None:
            return None
        csi = np.asarray(built[0].csi).reshape(1, -1) / enc.csi_scale
        inter = np.empty((1, 2 * csi.shape[1]))
        inter[:, 0::2], inter[:, 1::2] = csi.real, csi.imag
        return enc.encode_channel(inter).data[0]

    near, far = [], []
    k = 0
    while len(near) < 100:
        k += 1
        a, _ = place_ue(scene, 3, 1000, 500 + k, cfg)
        b, _ = place_ue(scene, 3, 1000, 900 + k, cfg)
        shift = g.normal(size=2)
        shift *= 0.9 * g.uniform() / np.linalg.norm(shift)
        xy = (a.ue_pos[0] + shift[0], a.ue_pos[1] + shift[1])
        if any(x0 < xy[0] < x1 and y0 < xy[1] < y1 for x0, y0, x1, y1 in scene.buildings):
            continue
        ca, cn, cb = code_at(a.ue_pos), code_at(xy), code_at(b.ue_pos)
        if cn is None:
            continue
        near.append(ca @ cn)
        far.append(ca @ cb)
    assert np.mean(near) > np.mean(far)


def test_encoder_checkpoint_round_trip(tmp_path, small_alignment):
    _, _, enc, _ = small_alignment
    ads = {"channel": Adapter(enc.d_enc, 16, rng.stream(13), name="adapter.channel")}
    save_encoders(tmp_path / "e.aimw", enc, ads)
    again, ads2 = load_encoders(tmp_path / "e.aimw")
    assert again.csi_scale == enc.csi_scale
    for p, q in zip(enc.parameters(), again.parameters()):
        assert np.array_equal(p.data, q.data)
    assert np.array_equal(ads2["channel"].weight.data, ads["channel"].weight.data)
    save_encoders(tmp_path / "f.aimw", again, ads2)
    assert (tmp_path / "e.aimw").read_bytes() == (tmp_path / "f.aimw").read_bytes()
