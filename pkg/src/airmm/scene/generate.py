from __future__ import annotations

import logging
from pathlib import Path

from .channel import ChannelConfig
from .dataset import Dataset, csi_rms, write_dataset
from .labels import generate_area

log = logging.getLogger(__name__)


def area_filename(area_index: int, split: str) -> str:
    return f"area_{area_index:05d}.{split}.aimm"


def generate_dataset_dir(out_dir, seed: int, n_areas: int, n_train: int, n_test: int,
                         first_area: int = 0, config: ChannelConfig | None = None) -> list[Path]:
    """Write one train and one test file per area; test samples use indices after the train ones."""
    config = config or ChannelConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for a in range(first_area, first_area + n_areas):
        scene, recs = generate_area(seed, a, range(n_train + n_test), config)
        train, test = recs[:n_train], recs[n_train:]
        rms = csi_rms(Dataset.from_records(train).csi)
        for split, part in (("train", train), ("test", test)):
            if not part:
                continue
            meta = {
                "config": config.to_dict(),
                "seed": seed,
                "area_index": a,
                "split": split,
                "side_length": scene.side_length,
                "csi_rms": rms,
                "scene": {
                    "buildings": [list(r) for r in scene.buildings],
                    "bs_pos": list(scene.bs_pos),
                    "bs_boresight": scene.bs_boresight,
                },
            }
            path = out / area_filename(a, split)
            write_dataset(part, path, meta)
            written.append(path)
        log.info("area %d: %d train / %d test samples, LOS fraction %.2f", a, len(train), len(test),
                 sum(r.los for r in recs) / len(recs))
    return written
