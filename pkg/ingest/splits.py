import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from configs.schema import group_key
from utils.exceptions import ArgumentError, SplitError

from .records import parse_runs

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "id_val", "ood_val")


@dataclass
class DatasetSplits:
    train: list = field(default_factory=list)
    id_val: list = field(default_factory=list)
    ood_val: list = field(default_factory=list)
    ood_threshold_N: float = 430.0
    seed: int = 0
    ratio: float = 0.8

    def get(self, name):
        if name not in SPLIT_NAMES:
            raise ArgumentError(f"Unknown split {name!r}; expected one of {SPLIT_NAMES}", module="ingest")
        return getattr(self, name)

    def sizes(self):
        return {name: len(self.get(name)) for name in SPLIT_NAMES}


def split_dataset(runs, ood_threshold_N=430.0, ratio=0.8, seed=0):
    """
    Split filtered runs into train / id_val / ood_val.

    Runs larger than ``ood_threshold_N`` go to ood_val. The rest are grouped by
    (optimizer, N, D) and whole groups are assigned to train or id_val by a
    seeded permutation; ``round(ratio * groups)`` groups (at least one on each
    side) go to train. Runs keep their input order within a split.
    """
    if not 0.0 < ratio < 1.0:
        raise ArgumentError(f"Split ratio must lie in (0, 1), got {ratio!r}", module="ingest")
    ood_val = [run for run in runs if run.config.model_size_N > ood_threshold_N]
    in_range = [run for run in runs if run.config.model_size_N <= ood_threshold_N]

    groups = defaultdict(list)
    for run in in_range:
        groups[group_key(run.config)].append(run)
    keys = sorted(groups)
    if len(keys) < 2:
        raise SplitError(
            f"Need at least 2 (optimizer, N, D) groups at or below N={ood_threshold_N} to split, got {len(keys)}"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    n_train = min(max(round(ratio * len(keys)), 1), len(keys) - 1)
    train_keys = {keys[index] for index in order[:n_train]}

    splits = DatasetSplits(ood_val=ood_val, ood_threshold_N=ood_threshold_N, seed=seed, ratio=ratio)
    for run in in_range:
        (splits.train if group_key(run.config) in train_keys else splits.id_val).append(run)
    logger.info(f"Split {len(runs)} runs over {len(keys)} groups: {splits.sizes()}")
    return splits


def write_manifests(splits, output_dir, rejection_counts=None):
    """Write ``train.txt``, ``id_val.txt`` and ``ood_val.txt`` run-id manifests with a provenance header."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    header = [
        f"# seed={splits.seed}",
        f"# ood_threshold_N={splits.ood_threshold_N!r}",
        f"# ratio={splits.ratio!r}",
    ]
    for rule, count in sorted((rejection_counts or {}).items()):
        header.append(f"# rejected.{rule}={count}")
    paths = {}
    for name in SPLIT_NAMES:
        path = output_dir / f"{name}.txt"
        lines = header + [run.run_id for run in splits.get(name)]
        path.write_text("\n".join(lines) + "\n")
        paths[name] = path
    return paths


def read_manifest(path):
    """Return (provenance, run_ids) from one manifest file."""
    provenance, run_ids = {}, []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line.lstrip("# ").partition("=")
            provenance[key] = value
        else:
            run_ids.append(line)
    return provenance, run_ids


def load_splits(runs, manifest_dir):
    """Rebuild ``DatasetSplits`` from manifests written by ``write_manifests``."""
    by_id = {run.run_id: run for run in runs}
    splits = DatasetSplits()
    for name in SPLIT_NAMES:
        provenance, run_ids = read_manifest(Path(manifest_dir) / f"{name}.txt")
        missing = [run_id for run_id in run_ids if run_id not in by_id]
        if missing:
            raise SplitError(f"Manifest {name}.txt names {len(missing)} unknown runs, e.g. {missing[0]!r}")
        getattr(splits, name).extend(by_id[run_id] for run_id in run_ids)
        splits.seed = int(provenance.get("seed", splits.seed))
        splits.ood_threshold_N = float(provenance.get("ood_threshold_N", splits.ood_threshold_N))
        splits.ratio = float(provenance.get("ratio", splits.ratio))
    return splits


def load_dataset(runs_path, manifest_dir=None, smoothing_coeff=0.99):
    """Parse ingested runs and attach their split manifests; without manifests every run is training data."""
    runs = parse_runs(runs_path, smoothing_coeff=smoothing_coeff)
    if manifest_dir is None:
        return DatasetSplits(train=list(runs))
    return load_splits(runs, manifest_dir)
