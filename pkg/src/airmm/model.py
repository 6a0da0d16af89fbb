"""The assembled universal model and the ablation configurations.

Path for one task batch (all configs but ``wm``)::

    modality code -> adapter -> 1 token
    [token, prefix(0 or 3), keyword(2)] -> backbone (+ modality LoRA) -> last position -> head

``wm`` skips the instruction and backbone: code -> adapter -> head.
Parameters are grouped by component so a run can verify which groups moved.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import rng as rngmod
from .backbone import Backbone, BackboneConfig, LoraSet
from .encoders import Adapter, Encoders
from .errors import CheckpointError, ConfigError
from .instructions import MODALITIES, TASK_ORDER, VOCAB, PrefixPrompt, Vocab, build_instruction, task_specs
from .layers import MLP, set_trainable
from .numerics import Tensor, broadcast_to, concat
from .tasks import TaskHead

CONFIGS = ("full", "fp", "sp", "te", "tc", "wl", "rl", "wm")
GROUPS = ("epnn", "cfenn", "temperature", "backbone", "lora", "prefix", "adapters", "heads")

_BASE = frozenset({"prefix", "adapters", "lora", "heads"})
TRAINABLE = {
    "full": _BASE,
    "fp": frozenset({"adapters", "lora", "heads"}),
    "sp": _BASE,
    "te": _BASE | {"epnn"},
    "tc": _BASE | {"cfenn"},
    "wl": frozenset({"prefix", "adapters", "heads"}),
    "rl": _BASE,
    "wm": frozenset({"adapters", "heads"}),
}

LORA_RANK = 4

# sub-stream ids under rng.INIT for each freshly initialised component
_INIT_IDS = {"adapters": 10, "lora": 11, "prefix": 12, "heads": 13, "epnn": 14, "cfenn": 15, "backbone": 16}


@dataclass(frozen=True)
class ModelSpec:
    config: str
    n_t: int
    n_c: int
    lora_rank: int = LORA_RANK

    def __post_init__(self):
        if self.config not in CONFIGS:
            raise ConfigError(f"unknown configuration {self.config!r}; expected one of {', '.join(CONFIGS)}")

    @property
    def uses_backbone(self) -> bool:
        return self.config != "wm"

    @property
    def uses_prefix(self) -> bool:
        return self.config not in ("fp", "wm")

    @property
    def uses_lora(self) -> bool:
        return self.config not in ("wl", "wm")

    @property
    def shared_instruction(self) -> bool:
        return self.config == "sp"


class UniversalModel:
    def __init__(self, spec: ModelSpec, encoders: Encoders, backbone: Backbone, seed: int, vocab: Vocab = VOCAB):
        self.spec = spec
        self.seed = seed
        self.vocab = vocab
        self.encoders = encoders
        self.backbone = backbone
        self.tasks = task_specs(spec.n_t)
        d, dt = backbone.cfg.d_model, backbone.dtype
        init = lambda comp: rngmod.stream(seed, _INIT_IDS[comp], rngmod.INIT)

        # te / tc replace one encoder's MLP with a fresh random one
        if spec.config in ("te", "tc"):
            which = "epnn" if spec.config == "te" else "cfenn"
            old: MLP = getattr(encoders, which)
            sizes = [old.layers[0].d_in] + [layer.d_out for layer in old.layers]
            setattr(encoders, which, MLP(sizes, init(which), dt, name=which))

        g = init("adapters")
        self.adapters = {m: Adapter(encoders.d_enc, d, g, dt, name=f"adapter.{m}") for m in MODALITIES}
        self.loras = {}
        if spec.uses_lora:
            g = init("lora")
            self.loras = {m: LoraSet(backbone.cfg, spec.lora_rank, g, dt, name=f"lora.{m}") for m in MODALITIES}
        self.prefix = None
        if spec.uses_prefix:
            self.prefix = PrefixPrompt(d, init("prefix"), TASK_ORDER, shared=spec.shared_instruction, dtype=dt)
        g = init("heads")
        self.heads = {t: TaskHead(self.tasks[t], d, g, dt) for t in TASK_ORDER}
        self.apply_trainable()

    # -- parameter bookkeeping ----------------------------------------------
    def groups(self) -> dict[str, list[Tensor]]:
        enc = self.encoders
        return {
            "epnn": enc.epnn.parameters(),
            "cfenn": enc.cfenn.parameters(),
            "temperature": [enc.log_inv_temp],
            "backbone": self.backbone.parameters(),
            "lora": [p for m in MODALITIES if m in self.loras for p in self.loras[m].parameters()],
            "prefix": self.prefix.parameters() if self.prefix is not None else [],
            "adapters": [p for m in MODALITIES for p in self.adapters[m].parameters()],
            "heads": [p for t in TASK_ORDER for p in self.heads[t].parameters()],
        }

    def parameters(self) -> list[Tensor]:
        return [p for grp in self.groups().values() for p in grp]

    def trainable_groups(self) -> frozenset:
        return TRAINABLE[self.spec.config]

    def trainable_parameters(self) -> list[Tensor]:
        g = self.groups()
        return [p for name in GROUPS if name in self.trainable_groups() for p in g[name]]

    def apply_trainable(self):
        for name, params in self.groups().items():
            set_trainable(params, name in self.trainable_groups())

    def group_hashes(self) -> dict[str, str]:
        """SHA-256 over every parameter's bytes, per component group."""
        out = {}
        for name, params in self.groups().items():
            h = hashlib.sha256()
            for p in params:
                h.update(p.name.encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
            out[name] = h.hexdigest()
        return out

    def census(self) -> dict[str, int]:
        """Trainable parameter count per group."""
        g = self.groups()
        return {name: sum(p.size for p in g[name]) for name in GROUPS if name in self.trainable_groups()}

    # -- forward --------------------------------------------------------------
    def codes(self, modality: str, feats: Tensor) -> Tensor:
        """Encoder codes for already feature-mapped inputs."""
        if modality == "channel":
            return self.encoders.cfenn_codes(feats)
        return self.encoders.epnn_codes(feats)

    def instruction(self, task_id: str) -> Tensor:
        return build_instruction(self.tasks[task_id], self.prefix, self.backbone.tok_emb, self.vocab,
                                 shared_keyword=self.spec.shared_instruction)

    def forward(self, task_id: str, codes: Tensor) -> Tensor:
        """Head output for a batch of encoder codes of the task's modality."""
        task = self.tasks[task_id]
        token = self.adapters[task.modality](codes)
        if not self.spec.uses_backbone:
            return self.heads[task_id](token)
        b, d = token.shape
        instr = self.instruction(task_id)
        seq = concat([token.reshape(b, 1, d), broadcast_to(instr.reshape(1, *instr.shape), (b,) + instr.shape)],
                     axis=1)
        feat = self.backbone.forward(seq, self.loras.get(task.modality))
        return self.heads[task_id](feat)

    # -- persistence ------------------------------------------------------------
    def header(self, extra: dict | None = None) -> dict:
        h = {
            "config": self.spec.config,
            "n_t": self.spec.n_t,
            "n_c": self.spec.n_c,
            "lora_rank": self.spec.lora_rank,
            "seed": self.seed,
            "backbone": self.backbone.cfg.to_dict(),
            "encoders": self.encoders.header(frozen=not {"epnn", "cfenn"} & self.trainable_groups()),
            "vocab": self.vocab.word_to_id,
            "vocab_hash": self.vocab.digest(),
        }
        h.update(extra or {})
        return h

    def save(self, path, extra: dict | None = None):
        ckpt.save(path, ckpt.MAGIC_MODEL, self.header(extra), [(p.name, p.data) for p in self.parameters()])

    def save_loras(self, path):
        if not self.loras:
            raise ConfigError(f"configuration {self.spec.config!r} has no LoRA adapters")
        tensors = [(p.name, p.data) for m in MODALITIES for p in self.loras[m].parameters()]
        header = {"rank": self.spec.lora_rank, "modalities": list(MODALITIES), "n_layers": self.backbone.cfg.n_layers,
                  "targets": ["wq", "wk"], "vocab_hash": self.vocab.digest()}
        ckpt.save(path, ckpt.MAGIC_LORA, header, tensors)


def load_model(path, stage: str = "train") -> tuple[UniversalModel, dict]:
    """Rebuild a model from an AIMC file; tensor names and shapes must match the stored topology."""
    header, tensors = ckpt.load(path, ckpt.MAGIC_MODEL, stage=stage)
    try:
        spec = ModelSpec(header["config"], header["n_t"], header["n_c"], header["lora_rank"])
        vocab = Vocab.from_word_to_id(header["vocab"])
        if vocab.digest() != header["vocab_hash"]:
            raise CheckpointError("vocabulary hash does not match the stored word map")
        eh = header["encoders"]
        enc = Encoders(eh["n_t"], eh["n_c"], rngmod.stream(0), eh["d_enc"], eh["hidden"], csi_scale=eh["csi_scale"])
        bb = Backbone(BackboneConfig(**header["backbone"]), rngmod.stream(0))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"model checkpoint header is incomplete: {exc}") from None
    model = UniversalModel(spec, enc, bb, header["seed"], vocab)
    params = model.parameters()
    names = {p.name for p in params}
    if names != set(tensors):
        missing, extra = sorted(names - set(tensors)), sorted(set(tensors) - names)
        raise CheckpointError(f"checkpoint topology mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    ckpt.assign(params, tensors)
    model.apply_trainable()
    return model, header
