"""Modality encoders, their contrastive alignment, and the adapters into token space.

EPNN reads the 260-number environment vector (occupancy grid, BS and UE
coordinates); CFENN reads the interleaved CSI scaled by a dataset RMS.
Both are 3-layer MLPs with L2-normalised outputs, trained jointly with a
symmetric InfoNCE objective on matched (environment, channel) pairs.

Each MLP sits behind a fixed feature map.  EPNN appends sin/cos features of
the BS and UE coordinates so a small network can resolve positions; CFENN
moves the CSI into the angle-delay domain (2D DFT over antennas and
subcarriers) and keeps log(1 + magnitude), which discards the per-path
carrier phase the tasks do not depend on.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import checkpoint as ckpt
from . import rng as rngmod
from .errors import BatchError, CheckpointError, DimensionError
from .layers import MLP, Linear, param, set_trainable
from .numerics import Adam, Tensor, cross_entropy, dft_codebook, exp, l2_normalize, matmul
from .scene import ChannelConfig, Dataset, csi_rms, generate_area

log = logging.getLogger(__name__)

ENV_DIM = 260
HIDDEN = 128
D_ENC = 32
INIT_TEMPERATURE = 0.07
COORD_FREQS = np.pi * np.arange(1, 5)

# alignment corpus lives on area indices no downstream run uses
ALIGN_FIRST_AREA = 1000
ALIGN_AREAS = 20
ALIGN_PAIRS_PER_AREA = 100
ALIGN_HELD_OUT_PER_AREA = 25


def environment_features(x: np.ndarray) -> np.ndarray:
    """(N, 260) -> (N, 260 + 8 * len(COORD_FREQS)): raw vector plus sin/cos of the four coordinates."""
    xy = x[:, 256:260, None] * COORD_FREQS
    n = len(x)
    return np.concatenate([x, np.sin(xy).reshape(n, -1), np.cos(xy).reshape(n, -1)], axis=1)


def channel_features(x: np.ndarray, n_t: int, n_c: int) -> np.ndarray:
    """(N, 2*n_t*n_c) interleaved CSI -> (N, n_t*n_c) log angle-delay magnitudes."""
    z = (x[:, 0::2] + 1j * x[:, 1::2]).reshape(len(x), n_t, n_c)
    ad = dft_codebook(n_t).conj().T @ z @ dft_codebook(n_c)
    return np.log1p(np.abs(ad)).reshape(len(x), -1)


class Encoders:
    """EPNN + CFENN with a shared learnable temperature (stored as log 1/T)."""

    def __init__(self, n_t: int, n_c: int, gen: np.random.Generator, d_enc: int = D_ENC, hidden: int = HIDDEN,
                 dtype=np.float32, csi_scale: float = 1.0):
        self.n_t, self.n_c, self.d_enc = n_t, n_c, d_enc
        self.csi_dim = 2 * n_t * n_c
        self.csi_scale = float(csi_scale)
        env_width = ENV_DIM + 4 * 2 * len(COORD_FREQS)
        self.epnn = MLP([env_width, hidden, hidden, d_enc], gen, dtype, name="epnn")
        self.cfenn = MLP([n_t * n_c, hidden, hidden, d_enc], gen, dtype, name="cfenn")
        self.log_inv_temp = param([math.log(1.0 / INIT_TEMPERATURE)], dtype, "log_inv_temp")

    @property
    def dtype(self):
        return self.log_inv_temp.dtype

    @property
    def temperature(self) -> float:
        return float(np.exp(-self.log_inv_temp.data[0]))

    def parameters(self) -> list[Tensor]:
        return self.epnn.parameters() + self.cfenn.parameters() + [self.log_inv_temp]

    def freeze(self):
        set_trainable(self.parameters(), False)

    def _check(self, x, width: int, what: str) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[-1] != width:
            raise DimensionError(f"{what} input has shape {x.shape}, expected width {width}")
        return x

    def environment_tensor(self, x) -> Tensor:
        """Fixed feature map of raw 260-vectors, ready for the EPNN MLP."""
        return Tensor(environment_features(self._check(x, ENV_DIM, "environment")).astype(self.dtype))

    def channel_tensor(self, x) -> Tensor:
        return Tensor(channel_features(self._check(x, self.csi_dim, "channel"), self.n_t, self.n_c)
                      .astype(self.dtype))

    def encode_environment(self, x) -> Tensor:
        """Raw (N, 260) environment vectors -> (N, d_enc) unit codes."""
        return self.epnn_codes(self.environment_tensor(x))

    def encode_channel(self, x) -> Tensor:
        """``x`` is interleaved CSI already divided by the dataset RMS -> (N, d_enc) unit codes."""
        return self.cfenn_codes(self.channel_tensor(x))

    # feature-level entry points, so callers can compute the fixed maps once
    def epnn_codes(self, feats: Tensor) -> Tensor:
        return l2_normalize(self.epnn(feats))

    def cfenn_codes(self, feats: Tensor) -> Tensor:
        return l2_normalize(self.cfenn(feats))

    # -- persistence --------------------------------------------------------
    def header(self, frozen: bool = True) -> dict:
        return {"n_t": self.n_t, "n_c": self.n_c, "d_enc": self.d_enc, "hidden": self.epnn.layers[0].d_out,
                "csi_scale": self.csi_scale, "frozen": frozen}


class Adapter(Linear):
    """Affine map from an encoder code to one backbone token."""

    def __init__(self, d_enc: int, d_model: int, gen: np.random.Generator, dtype=np.float32, name="adapter"):
        super().__init__(d_enc, d_model, gen, dtype, name=name)


def info_nce(sim: Tensor, temperature) -> Tensor:
    """Symmetric InfoNCE on a B x B similarity matrix whose diagonal holds the matched pairs.

    ``temperature`` is a float or a (1,)-tensor holding log(1/T).
    """
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {sim.shape}")
    b = sim.shape[0]
    if b < 2:
        raise BatchError(f"contrastive loss needs at least 2 pairs, got {b}")
    if isinstance(temperature, Tensor):
        logits = sim * exp(temperature)
    else:
        logits = sim * (1.0 / float(temperature))
    target = np.arange(b)
    return (cross_entropy(logits, target) + cross_entropy(logits.T, target)) * 0.5


def contrastive_align(env_codes: Tensor, csi_codes: Tensor, temperature) -> Tensor:
    """Loss for matched rows of two L2-normalised code batches."""
    if env_codes.shape != csi_codes.shape:
        raise DimensionError(f"code batches differ: {env_codes.shape} vs {csi_codes.shape}")
    if env_codes.shape[0] < 2:
        raise BatchError(f"contrastive loss needs at least 2 pairs, got {env_codes.shape[0]}")
    return info_nce(matmul(env_codes, csi_codes.T), temperature)


def alignment_corpus(seed: int, config: ChannelConfig | None = None, n_areas: int = ALIGN_AREAS,
                     per_area: int = ALIGN_PAIRS_PER_AREA, held_out_per_area: int = ALIGN_HELD_OUT_PER_AREA,
                     first_area: int = ALIGN_FIRST_AREA) -> tuple[Dataset, Dataset]:
    """Training pairs and held-out pairs (fresh UE positions in the same areas).

    The CSI normalisation constant is the RMS of the training pairs and is
    stored in both metadata dicts.
    """
    config = config or ChannelConfig()
    train, held = [], []
    for a in range(first_area, first_area + n_areas):
        _, recs = generate_area(seed, a, range(per_area + held_out_per_area), config)
        train.append(Dataset.from_records(recs[:per_area], {"area_index": a}))
        if held_out_per_area:
            held.append(Dataset.from_records(recs[per_area:], {"area_index": a}))
    train = Dataset.concatenate(train)
    rms = csi_rms(train.csi)
    train.metadata["csi_rms"] = rms
    held = Dataset.concatenate(held) if held else None
    if held is not None:
        held.metadata["csi_rms"] = rms
    return train, held


def encoder_inputs(enc: Encoders, data: Dataset, csi_scale: float | None = None) -> tuple[Tensor, Tensor]:
    """Feature-mapped (environment, channel) tensors for a whole dataset."""
    scale = enc.csi_scale if csi_scale is None else csi_scale
    return enc.environment_tensor(data.environment_inputs()), enc.channel_tensor(data.channel_inputs(scale))


def align(data: Dataset, seed: int, epochs: int = 50, batch: int = 64, lr: float = 1e-3,
          d_enc: int = D_ENC, dtype=np.float32) -> tuple[Encoders, list[float]]:
    """Contrastive pretraining of a fresh encoder pair; returns frozen encoders and per-epoch loss."""
    scale = float(data.metadata.get("csi_rms") or csi_rms(data.csi))
    enc = Encoders(data.n_t, data.n_c, rngmod.stream(seed, 1, rngmod.INIT), d_enc, dtype=dtype, csi_scale=scale)
    env, csi = encoder_inputs(enc, data)
    set_trainable(enc.parameters(), True)
    opt = Adam(enc.parameters(), lr=lr)
    history = []
    n = len(data)
    for epoch in range(epochs):
        order = rngmod.stream(seed, epoch, rngmod.SHUFFLE).permutation(n)
        losses = []
        for s in range(0, n - 1, batch):
            idx = order[s : s + batch]
            if len(idx) < 2:
                break
            opt.zero_grad()
            loss = contrastive_align(enc.epnn_codes(Tensor(env.data[idx])), enc.cfenn_codes(Tensor(csi.data[idx])),
                                     enc.log_inv_temp)
            loss.backward()
            opt.step()
            # keep 1/T within a sane range, as CLIP-style training does
            np.clip(enc.log_inv_temp.data, 0.0, math.log(100.0), out=enc.log_inv_temp.data)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        if epoch % 10 == 0 or epoch == epochs - 1:
            log.info("align epoch %d loss %.4f T %.4f", epoch, history[-1], enc.temperature)
    enc.freeze()
    return enc, history


def codes(enc: Encoders, data: Dataset, csi_scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    env, csi = encoder_inputs(enc, data, csi_scale)
    return enc.epnn_codes(env).data, enc.cfenn_codes(csi).data


def retrieval_top1(env_codes: np.ndarray, csi_codes: np.ndarray, batch: int = 64, seed: int | None = 0) -> float:
    """In-batch top-1: fraction of environment codes whose best channel match is their own pair.

    Pairs are shuffled (seeded, like training batches) and cut into chunks of
    ``batch`` candidates; a short final chunk is dropped.  ``seed=None``
    keeps the given order.
    """
    n = (len(env_codes) // batch) * batch
    if n == 0:
        raise BatchError(f"need at least {batch} pairs for retrieval, got {len(env_codes)}")
    if seed is not None:
        perm = rngmod.stream(seed, rngmod.EVAL).permutation(len(env_codes))
        env_codes, csi_codes = env_codes[perm], csi_codes[perm]
    hits = 0
    for s in range(0, n, batch):
        sim = env_codes[s : s + batch] @ csi_codes[s : s + batch].T
        hits += int(np.sum(np.argmax(sim, axis=1) == np.arange(batch)))
    return hits / n


def matched_mismatched(env_codes: np.ndarray, csi_codes: np.ndarray) -> tuple[float, float]:
    """Mean cosine similarity of matched pairs and of all mismatched pairs."""
    sim = env_codes @ csi_codes.T
    n = len(sim)
    diag = float(np.trace(sim)) / n
    off = (float(sim.sum()) - diag * n) / (n * n - n)
    return diag, off


# -- checkpoint ----------------------------------------------------------------

def save_encoders(path, enc: Encoders, adapters: dict | None = None) -> None:
    tensors = [(p.name, p.data) for p in enc.parameters()]
    header = enc.header(frozen=not any(p.requires_grad for p in enc.parameters()))
    if adapters:
        header["adapters"] = sorted(adapters)
        header["d_model"] = next(iter(adapters.values())).d_out
        for key in sorted(adapters):
            tensors += [(f"{key}:{p.name}", p.data) for p in adapters[key].parameters()]
    ckpt.save(path, ckpt.MAGIC_ENCODERS, header, tensors)


def load_encoders(path) -> tuple[Encoders, dict]:
    header, tensors = ckpt.load(path, ckpt.MAGIC_ENCODERS, stage="align")
    try:
        enc = Encoders(header["n_t"], header["n_c"], rngmod.stream(0), header["d_enc"], header["hidden"],
                       csi_scale=header["csi_scale"])
    except KeyError as exc:
        raise CheckpointError(f"encoder checkpoint header lacks {exc}") from None
    ckpt.assign(enc.parameters(), tensors)
    enc.freeze()
    adapters = {}
    for key in header.get("adapters", []):
        ad = Adapter(enc.d_enc, header["d_model"], rngmod.stream(0), name=f"adapter.{key}")
        ckpt.assign(ad.parameters(), tensors, prefix=f"{key}:")
        adapters[key] = ad
    return enc, adapters
