"""
Sub-Dataset Mixing
------------------
Draws training batches from the four sub-datasets with fixed mixing ratios
and turns them into model inputs. Every iteration's batch comes from its own
RNG seeded by (seed, stage, iteration), so a resumed run sees exactly the
batches an uninterrupted run would.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, IterableDataset, get_worker_info

from coca_cxr.corpus_generator.subdatasets import load_image, load_subdataset, subdataset_path
from coca_cxr.errors import EmptyDatasetError
from coca_cxr.model.vocabulary import PAD_ID, POOL_ID

logger = logging.getLogger(__name__)

SUBDATASET_IDS = (1, 2, 3, 4)


@dataclass
class PairSample:
    current: np.ndarray
    prior: np.ndarray
    text: str
    subdataset: int
    study_id: str = ""
    reversed: bool = False


class CorpusImageLoader:
    """Picklable loader of corpus-relative image paths (prefetch workers may be spawned)."""

    def __init__(self, corpus_dir, side=None):
        self.corpus_dir = corpus_dir
        self.side = side

    def __call__(self, rel_path):
        return load_image(os.path.join(self.corpus_dir, rel_path), self.side)


class SubDatasets:
    """The four record lists plus a cached image loader."""

    def __init__(self, records, image_loader):
        self.records = {i: list(records.get(i, [])) for i in SUBDATASET_IDS}
        self._load = image_loader
        self._cache = {}

    @classmethod
    def from_directory(cls, data_dir, corpus_dir=None, side=None):
        """Load subdataset_{1..4}.jsonl from `data_dir`; image paths resolve against `corpus_dir`."""
        corpus_dir = corpus_dir or data_dir
        records = {}
        for i in SUBDATASET_IDS:
            path = subdataset_path(data_dir, i)
            records[i] = load_subdataset(path) if os.path.exists(path) else []
        sizes = ", ".join(f"{i}: {len(records[i])}" for i in SUBDATASET_IDS)
        logger.info("✓ Loaded sub-datasets (%s)", sizes)
        return cls(records, CorpusImageLoader(corpus_dir, side))

    def image(self, path):
        if path not in self._cache:
            self._cache[path] = self._load(path)
        return self._cache[path]

    def sample(self, subdataset, index):
        record = self.records[subdataset][index]
        current = self.image(record["current"])
        prior = self.image(record["prior"]) if record.get("prior") else current
        return PairSample(current, prior, record["text"], subdataset,
                          record.get("study_id", ""), bool(record.get("reversed", False)))

    def __len__(self):
        return sum(len(r) for r in self.records.values())


def sample_mixed_batch(datasets, ratios, rng, n):
    """
    `n` samples whose sources are drawn i.i.d. with probabilities `ratios`.
    Sub-dataset 1 samples come back as identity pairs (prior is current).
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    for i, r in zip(SUBDATASET_IDS, ratios):
        if r > 0 and not datasets.records[i]:
            raise EmptyDatasetError(f"sub-dataset {i} is empty but has mixing ratio {r}")
    sources = rng.choice(len(SUBDATASET_IDS), size=n, p=ratios / ratios.sum())
    batch = []
    for source in sources:
        subdataset = SUBDATASET_IDS[source]
        index = int(rng.integers(len(datasets.records[subdataset])))
        batch.append(datasets.sample(subdataset, index))
    return batch


def batch_rng(seed, stage, iteration):
    return np.random.default_rng([int(seed), int(stage), int(iteration)])


def collate(samples, vocab, max_len):
    """Stack images and lay out [<bos> w.. <eos> <pool> <pad>..] token rows."""
    rows = [vocab.encode_caption(s.text, max_len) + [POOL_ID] for s in samples]
    length = max(len(r) for r in rows)
    token_ids = torch.full((len(rows), length), PAD_ID, dtype=torch.long)
    for i, row in enumerate(rows):
        token_ids[i, :len(row)] = torch.tensor(row, dtype=torch.long)
    return {
        "current": torch.from_numpy(np.stack([s.current for s in samples])),
        "prior": torch.from_numpy(np.stack([s.prior for s in samples])),
        "token_ids": token_ids,
        "subdatasets": torch.tensor([s.subdataset for s in samples]),
    }


class MixedBatchStream(IterableDataset):
    """Yields (iteration, batch) for iterations [start, stop); workers take iterations i % num_workers."""

    def __init__(self, datasets, vocab, stage_config, max_len, start, stop, seed):
        super().__init__()
        self.datasets = datasets
        self.vocab = vocab
        self.stage_config = stage_config
        self.max_len = max_len
        self.start, self.stop = start, stop
        self.seed = seed

    def batch(self, iteration):
        rng = batch_rng(self.seed, self.stage_config.stage, iteration)
        samples = sample_mixed_batch(self.datasets, self.stage_config.ratios, rng,
                                     self.stage_config.batch_size)
        return collate(samples, self.vocab, self.max_len)

    def __iter__(self):
        info = get_worker_info()
        worker, workers = (0, 1) if info is None else (info.id, info.num_workers)
        for iteration in range(self.start + worker, self.stop, workers):
            yield iteration, self.batch(iteration)


def capped_workers(requested=0):
    """Worker count capped by COCA_PAIR_THREADS."""
    cap = os.environ.get("COCA_PAIR_THREADS")
    if cap is not None:
        requested = min(requested, max(0, int(cap)))
    return max(0, requested)


def batch_loader(stream, workers=0):
    """Bounded prefetch queue over the stream; batches arrive in iteration order."""
    workers = capped_workers(workers)
    if workers == 0:
        return iter(stream)
    loader = DataLoader(stream, batch_size=None, num_workers=workers, prefetch_factor=2)
    return iter(loader)
