"""Synthetic long-range activities built as partially ordered sets.

An activity class is an ordered list of segments; each segment is an
unordered set of unit-actions. A sample allots timesteps to segments in
macro order, and inside a segment plays its unit-actions in random order
with random repetitions. Features are a fixed Gaussian embedding per
unit-action plus isotropic noise.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .container import read_file, write_file
from .exceptions import ConfigError, FormatError

PROTOCOLS = ("uniform", "coarse", "fine")
DATASET_MAGIC = b"PICD"


@dataclass
class ActivityTaxonomy:
    classes: list[list[tuple[int, ...]]]   # class -> segment -> action ids
    embedding: np.ndarray                   # (U, C)
    seed: int
    layout: str = "disjoint"

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_actions(self) -> int:
        return self.embedding.shape[0]

    @property
    def channels(self) -> int:
        return self.embedding.shape[1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "layout": self.layout,
            "classes": [[list(seg) for seg in cls] for cls in self.classes],
            "num_actions": self.num_actions,
            "channels": self.channels,
        }


@dataclass
class ActivitySample:
    X: np.ndarray                    # (N, C)
    label: int | np.ndarray          # class id, or multi-hot over unit-actions
    segment_boundaries: list[int]    # cut points, 0 first and N last
    actions: np.ndarray = field(default=None)   # unit-action id per timestep
    class_id: int = -1

    @property
    def length(self) -> int:
        return self.X.shape[0]

    def segments(self):
        b = self.segment_boundaries
        return [(b[k], b[k + 1]) for k in range(len(b) - 1)]


def make_taxonomy(seed, num_classes, segments_per_class, actions_per_segment, num_actions, channels,
                  layout="disjoint", segment_pool=None) -> ActivityTaxonomy:
    """Deterministic class definitions and unit-action embedding table.

    ``disjoint`` gives every segment of every class its own unit-actions.
    ``shared`` draws each class as a distinct ordered arrangement of segments
    from a common pool, so classes can differ only in macro order.
    """
    rng = np.random.default_rng(seed)
    S, A = segments_per_class, actions_per_segment
    if layout == "disjoint":
        need = num_classes * S * A
        if num_actions < need:
            raise ConfigError(f"vocabulary of {num_actions} unit-actions cannot fill {need} disjoint slots")
        ids = rng.permutation(num_actions)[:need].reshape(num_classes, S, A)
        classes = [[tuple(sorted(int(a) for a in seg)) for seg in cls] for cls in ids]
    elif layout == "shared":
        pool = S + 2 if segment_pool is None else segment_pool
        if pool < S:
            raise ConfigError("segment pool smaller than segments per class")
        if num_actions < pool * A:
            raise ConfigError(f"vocabulary of {num_actions} unit-actions cannot fill a pool of {pool} segments")
        segs = rng.permutation(num_actions)[:pool * A].reshape(pool, A)
        pool_sets = [tuple(sorted(int(a) for a in seg)) for seg in segs]
        arrangements = list(itertools.islice(itertools.permutations(range(pool), S), 100_000))
        if len(arrangements) < num_classes:
            raise ConfigError(f"only {len(arrangements)} distinct segment arrangements for {num_classes} classes")
        pick = rng.choice(len(arrangements), size=num_classes, replace=False)
        classes = [[pool_sets[j] for j in arrangements[i]] for i in pick]
    else:
        raise ConfigError(f"unknown layout {layout!r}")
    embedding = rng.standard_normal((num_actions, channels))
    return ActivityTaxonomy(classes, embedding, seed, layout)


def _split(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if k < rem else 0) for k in range(parts)]


def sample_video(taxonomy: ActivityTaxonomy, class_id: int, N: int, noise_sigma: float,
                 repeat_max: int, rng: np.random.Generator) -> ActivitySample:
    segments = taxonomy.classes[class_id]
    sizes = _split(N, len(segments))
    widest = max(len(seg) for seg in segments)
    if min(sizes) < widest:
        raise ConfigError(f"N={N} leaves a segment fewer than {widest} timesteps")
    actions = []
    for seg, n_k in zip(segments, sizes):
        acts = np.asarray(seg, dtype=np.int64)
        counts = rng.integers(1, repeat_max + 1, size=len(acts))
        extras = rng.permutation(np.repeat(acts, counts - 1))[: n_k - len(acts)]
        tokens = rng.permutation(np.concatenate([acts, extras]))
        actions.append(np.repeat(tokens, _split(n_k, len(tokens))))
    actions = np.concatenate(actions)
    X = taxonomy.embedding[actions]
    if noise_sigma > 0:
        X = X + noise_sigma * rng.standard_normal(X.shape)
    bounds = [0] + list(np.cumsum(sizes).tolist())
    return ActivitySample(X, class_id, bounds, actions, class_id)


def permute_protocol(sample: ActivitySample, protocol: str, rng: np.random.Generator) -> ActivitySample:
    """Test-time reordering: ``uniform`` keeps order, ``coarse`` shuffles whole
    segment blocks, ``fine`` shuffles timesteps inside each segment."""
    if protocol == "uniform":
        return sample
    blocks = sample.segments()
    if protocol == "coarse":
        order = rng.permutation(len(blocks))
        idx = np.concatenate([np.arange(*blocks[k]) for k in order])
        lengths = [blocks[k][1] - blocks[k][0] for k in order]
        bounds = [0] + list(np.cumsum(lengths).tolist())
    elif protocol == "fine":
        idx = np.concatenate([a + rng.permutation(b - a) for a, b in blocks])
        bounds = list(sample.segment_boundaries)
    else:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    actions = None if sample.actions is None else sample.actions[idx]
    return replace(sample, X=sample.X[idx], segment_boundaries=bounds, actions=actions)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class SyntheticDataset:
    config: RunConfig
    taxonomy: ActivityTaxonomy
    train: list[ActivitySample]
    test: list[ActivitySample]

    @property
    def samples(self) -> list[ActivitySample]:
        return self.train + self.test


def stack(samples) -> tuple[np.ndarray, np.ndarray]:
    """Batch samples into ``X (B, N, C)`` and labels."""
    X = np.stack([s.X for s in samples])
    y = np.asarray([s.label for s in samples])
    return X, y


def make_dataset(cfg: RunConfig) -> SyntheticDataset:
    d = cfg.data
    tax = make_taxonomy(d.seed, d.num_classes, d.segments_per_class, d.actions_per_segment,
                        d.vocabulary, cfg.channels, d.layout, d.segment_pool)
    total = d.n_train + d.n_test
    streams = np.random.SeedSequence([d.seed, 1]).spawn(total)
    samples = []
    for i, ss in enumerate(streams):
        s = sample_video(tax, i % d.num_classes, d.length, d.noise_sigma, d.repeat_max, np.random.default_rng(ss))
        if cfg.task == "multi_label":
            hot = np.zeros(tax.num_actions)
            hot[np.unique(s.actions)] = 1.0
            s.label = hot
        samples.append(s)
    return SyntheticDataset(cfg, tax, samples[:d.n_train], samples[d.n_train:])


def dataset_payload(ds: SyntheticDataset) -> tuple[dict, dict]:
    records, arrays = [], {"embedding": ds.taxonomy.embedding}
    for split, samples in (("train", ds.train), ("test", ds.test)):
        for s in samples:
            i = len(records)
            label = s.label.tolist() if isinstance(s.label, np.ndarray) else int(s.label)
            records.append({"split": split, "label": label, "class_id": int(s.class_id),
                            "boundaries": [int(b) for b in s.segment_boundaries]})
            arrays[f"sample.{i}.features"] = s.X
            arrays[f"sample.{i}.actions"] = s.actions.astype(np.float64)
    header = {"kind": "dataset", "config": ds.config.to_dict(), "taxonomy": ds.taxonomy.to_dict(),
              "records": records}
    return header, arrays


def save_dataset(path, ds: SyntheticDataset) -> str:
    """Write the dataset container; returns its sha256 checksum."""
    header, arrays = dataset_payload(ds)
    payload = write_file(path, DATASET_MAGIC, header, arrays)
    return hashlib.sha256(payload).hexdigest()


def load_dataset(path) -> SyntheticDataset:
    header, arrays = read_file(path, DATASET_MAGIC)
    if header.get("kind") != "dataset":
        raise FormatError("container is not a dataset")
    cfg = RunConfig.from_dict(header["config"])
    t = header["taxonomy"]
    tax = ActivityTaxonomy([[tuple(seg) for seg in cls] for cls in t["classes"]],
                           arrays["embedding"], t["seed"], t["layout"])
    train, test = [], []
    for i, rec in enumerate(header["records"]):
        label = rec["label"]
        label = np.asarray(label, dtype=np.float64) if isinstance(label, list) else int(label)
        s = ActivitySample(arrays[f"sample.{i}.features"], label, rec["boundaries"],
                           arrays[f"sample.{i}.actions"].astype(np.int64), rec["class_id"])
        (train if rec["split"] == "train" else test).append(s)
    return SyntheticDataset(cfg, tax, train, test)


def file_checksum(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
