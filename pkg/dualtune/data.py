"""Synthetic generators, libsvm parsing, splits and dataset files.

All randomness comes from numpy's PCG64 generator (numpy.random.default_rng), so datasets
reproduce bit for bit across platforms for a fixed seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

SUPPORT_SIZE = 15
NOISE_LEVEL = 2.0
SGL_SIGNAL = np.arange(1.0, 6.0)
SGL_SIGNAL_GROUPS = 3
CHOLESKY_LIMIT = 2000
CORRELATION = 0.5


class DatasetError(ValueError):
    """Raised for invalid generator sizes or inconsistent split data."""


class LibsvmParseError(ValueError):
    """Raised for malformed libsvm text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f'{message} at line {line}')
        self.line = line


@dataclass(eq=False)
class Dataset:
    """Feature matrix, targets and named index sets.

    Regression datasets use the splits 'train', 'val' and 'test'; classification datasets
    use 'cv' (the cross-validation training set) and 'test', with folds assigned over 'cv'.
    """

    features: np.ndarray | sp.csr_matrix
    targets: np.ndarray
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    folds: Optional[np.ndarray] = None
    groups: Optional[list[np.ndarray]] = None
    signal: Optional[np.ndarray] = None
    manifest: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def classification(self) -> bool:
        return bool(np.all(np.isin(self.targets, (-1.0, 1.0))))

    def dense(self) -> np.ndarray:
        return self.features.toarray() if sp.issparse(self.features) else np.asarray(self.features)

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Dense features and targets of one split.

        Raises:
            DatasetError: unknown split name
        """

        if name not in self.splits:
            raise DatasetError(f'dataset has no split {name!r}, available: {sorted(self.splits)}')
        index = self.splits[name]
        return self.dense()[index], self.targets[index]

    def check(self):
        """Raises DatasetError unless the index sets are disjoint, in range and labels are +-1 where needed."""

        seen = np.zeros(self.n_samples, dtype=bool)
        for name, index in self.splits.items():
            if index.size and (index.min() < 0 or index.max() >= self.n_samples):
                raise DatasetError(f'split {name!r} out of range')
            if np.any(seen[index]) or np.unique(index).size != index.size:
                raise DatasetError(f'split {name!r} overlaps another split')
            seen[index] = True

        if 'cv' in self.splits and not self.classification:
            raise DatasetError('classification splits require labels in {-1, +1}')
        if self.folds is not None and 'cv' in self.splits and self.folds.size != self.splits['cv'].size:
            raise DatasetError(f'fold assignment of length {self.folds.size} for {self.splits["cv"].size} samples')

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.dense(), other.dense()) and np.array_equal(self.targets, other.targets) and
                self.splits.keys() == other.splits.keys() and
                all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits))


def _consecutive(*sizes: int) -> list[np.ndarray]:
    offsets = np.cumsum((0,) + sizes)
    return [np.arange(offsets[i], offsets[i + 1]) for i in range(len(sizes))]


def ar1_features(rng: np.random.Generator, rows: int, cols: int, correlation: float = CORRELATION) -> np.ndarray:
    """Standard normal rows with cor(a_j, a_k) = correlation^|j-k|."""

    if cols <= CHOLESKY_LIMIT:
        factor = scipy.linalg.cholesky(scipy.linalg.toeplitz(correlation**np.arange(cols)), lower=True)
        return rng.standard_normal((rows, cols)) @ factor.T

    innovations = rng.standard_normal((rows, cols))
    features = np.empty((rows, cols))
    features[:, 0] = innovations[:, 0]
    scale = np.sqrt(1.0 - correlation**2)
    for j in range(1, cols):
        features[:, j] = correlation * features[:, j - 1] + scale * innovations[:, j]
    return features


def gen_elastic_net(seed: int, n_tr: int, n_val: int, n_te: int, p: int, noise: float = NOISE_LEVEL) -> Dataset:
    """Correlated Gaussian regression data with a 15-sparse 0/1 signal.

    Args:
        seed (int): generator seed
        n_tr (int): training samples
        n_val (int): validation samples
        n_te (int): test samples
        p (int): features, at least 15
        noise (float): noise level sigma in b = A beta + sigma * e

    Raises:
        DatasetError: p < 15 or a non-positive sample count

    Returns:
        Dataset: splits 'train', 'val', 'test'
    """

    if p < SUPPORT_SIZE:
        raise DatasetError(f'p ≥ {SUPPORT_SIZE} required, got p = {p}')
    if min(n_tr, n_val, n_te) < 1:
        raise DatasetError(f'sample counts must be positive, got {n_tr}, {n_val}, {n_te}')

    rng = np.random.default_rng(seed)
    total = n_tr + n_val + n_te
    features = ar1_features(rng, total, p)

    signal = np.zeros(p)
    signal[rng.choice(p, SUPPORT_SIZE, replace=False)] = 1.0
    targets = features @ signal + noise * rng.standard_normal(total)

    train, val, test = _consecutive(n_tr, n_val, n_te)
    logging.info('generate (elastic-net, seed=%d) - %d x %d samples', seed, total, p)
    return Dataset(features, targets, {'train': train, 'val': val, 'test': test},
                   signal=signal,
                   manifest={'generator': 'elastic-net', 'seed': seed, 'ntr': n_tr, 'nval': n_val, 'nte': n_te, 'p': p})


def gen_sgl(seed: int, n: int, p: int, groups: int, n_te: int = 100, noise: float = NOISE_LEVEL) -> Dataset:
    """Group-structured regression data with signal (1, 2, 3, 4, 5, 0, ...) in the first three groups.

    Args:
        seed (int): generator seed
        n (int): training samples; n // 3 validation samples are added
        p (int): features, divisible into groups of at least 5
        groups (int): number of equal groups M
        n_te (int): test samples
        noise (float): noise level sigma

    Raises:
        DatasetError: p not divisible by M, groups smaller than 5, or n < 3

    Returns:
        Dataset: splits 'train', 'val', 'test' and the group partition
    """

    if groups < 1 or p % groups != 0:
        raise DatasetError(f'p = {p} is not divisible into {groups} equal groups')
    size = p // groups
    if size < SGL_SIGNAL.size:
        raise DatasetError(f'group size {size} < {SGL_SIGNAL.size}')
    if n < 3 or n_te < 1:
        raise DatasetError(f'need n >= 3 and n_te >= 1, got {n}, {n_te}')

    rng = np.random.default_rng(seed)
    n_val = n // 3
    total = n + n_val + n_te
    features = rng.standard_normal((total, p))

    signal = np.zeros(p)
    for g in range(min(SGL_SIGNAL_GROUPS, groups)):
        signal[g * size:g * size + SGL_SIGNAL.size] = SGL_SIGNAL
    targets = features @ signal + noise * rng.standard_normal(total)

    train, val, test = _consecutive(n, n_val, n_te)
    partition = [np.arange(g * size, (g + 1) * size) for g in range(groups)]
    logging.info('generate (sgl, seed=%d) - %d x %d samples, %d groups', seed, total, p, groups)
    return Dataset(features, targets, {'train': train, 'val': val, 'test': test},
                   groups=partition,
                   signal=signal,
                   manifest={'generator': 'sgl', 'seed': seed, 'n': n, 'p': p, 'groups': groups, 'nte': n_te})


def gen_svm(seed: int, n: int, p: int, noise: float = 0.1, folds: int = 3) -> Dataset:
    """Linearly separable labels sign(a'w) with a fraction of flipped labels.

    Raises:
        DatasetError: too few samples for the fold count
    """

    if p < 1 or not 0.0 <= noise < 0.5:
        raise DatasetError(f'need p >= 1 and 0 <= noise < 0.5, got {p}, {noise}')

    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    direction = rng.standard_normal(p)
    labels = np.where(features @ direction >= 0.0, 1.0, -1.0)
    flipped = rng.random(n) < noise
    labels[flipped] *= -1.0

    dataset = Dataset(features, labels, signal=direction,
                      manifest={'generator': 'svm', 'seed': seed, 'n': n, 'p': p, 'noise': noise})
    svm_split(dataset, folds, seed)
    logging.info('generate (svm, seed=%d) - %d x %d samples, %d flipped', seed, n, p, int(flipped.sum()))
    return dataset


def kfold_split(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold id per sample; shuffled, fold sizes differ by at most one.

    Raises:
        DatasetError: folds < 2 or n < folds
    """

    if folds < 2 or n < folds:
        raise DatasetError(f'need folds >= 2 and n >= folds, got n = {n}, folds = {folds}')

    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % folds
    return assignment


def svm_split(dataset: Dataset, folds: int, seed: int) -> Dataset:
    """Puts 3 * floor(N / 6) shuffled samples into the cross-validation set, the rest into 'test'.

    The dataset is updated in place and returned.

    Raises:
        DatasetError: the cross-validation set is smaller than the fold count
    """

    n = dataset.n_samples
    order = np.random.default_rng(seed).permutation(n)
    size = 3 * (n // 6)
    if size < folds:
        raise DatasetError(f'cross-validation set of {size} samples cannot hold {folds} folds')

    dataset.splits = {'cv': np.sort(order[:size]), 'test': np.sort(order[size:])}
    dataset.folds = kfold_split(size, folds, seed)
    dataset.manifest['folds'] = folds
    return dataset


def random_split(dataset: Dataset, n_tr: int, n_val: int, seed: int) -> Dataset:
    """Shuffled 'train' / 'val' / 'test' split of a parsed dataset, updated in place."""

    n = dataset.n_samples
    if n_tr < 1 or n_val < 1 or n_tr + n_val >= n:
        raise DatasetError(f'cannot split {n} samples into {n_tr} train and {n_val} validation samples')

    order = np.random.default_rng(seed).permutation(n)
    dataset.splits = {
        'train': np.sort(order[:n_tr]),
        'val': np.sort(order[n_tr:n_tr + n_val]),
        'test': np.sort(order[n_tr + n_val:])
    }
    return dataset


def _label(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError as err:
        raise LibsvmParseError(f'malformed label {token!r}', line) from err

    if value in (1.0, -1.0):
        return value
    if value == 0.0:
        return -1.0
    raise LibsvmParseError(f'unmappable label {token!r}', line)


def parse_libsvm(text: str) -> Dataset:
    """Parses the sparse libsvm text format.

    Each nonempty line reads 'label idx:val idx:val ...' with 1-based, strictly increasing
    indices. Labels 0/1 and -1/+1 map to -1/+1.

    Args:
        text (str): file content

    Raises:
        LibsvmParseError: malformed token, non-increasing indices or unmappable label

    Returns:
        Dataset: sparse features, labels and no splits
    """

    labels, rows, cols, vals = [], [], [], []
    width = 0

    for number, line in enumerate(text.splitlines(), start=1):
        tokens = line.split('#', 1)[0].split()
        if not tokens:
            continue

        row = len(labels)
        labels.append(_label(tokens[0], number))
        last = 0
        for token in tokens[1:]:
            index, sep, value = token.partition(':')
            if not sep:
                raise LibsvmParseError(f'malformed token {token!r}', number)
            try:
                col, val = int(index), float(value)
            except ValueError as err:
                raise LibsvmParseError(f'malformed token {token!r}', number) from err
            if col <= last:
                raise LibsvmParseError('indices not increasing', number)
            last = col
            rows.append(row)
            cols.append(col - 1)
            vals.append(val)
        width = max(width, last)

    features = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), width))
    logging.debug('parse_libsvm - %d samples, %d features, %d nonzeros', len(labels), width, len(vals))
    return Dataset(features, np.asarray(labels, dtype=float), manifest={'generator': 'libsvm'})


def serialize_libsvm(dataset: Dataset) -> str:
    """libsvm text of a classification dataset; zeros are omitted."""

    features = sp.csr_matrix(dataset.features)
    lines = []
    for i, label in enumerate(dataset.targets):
        start, stop = features.indptr[i], features.indptr[i + 1]
        entries = sorted(zip(features.indices[start:stop], features.data[start:stop]))
        tokens = [f'{int(label):+d}'.replace('+', '')]
        tokens += [f'{col + 1}:{val:.17g}' for col, val in entries if val != 0.0]
        lines.append(' '.join(tokens))
    return '\n'.join(lines) + '\n'


def save(dataset: Dataset, path: str | Path) -> Path:
    """Writes <path>.npz with the arrays and <path>.json with splits and manifest.

    Returns:
        Path: path of the .npz file
    """

    path = Path(path).with_suffix('.npz')
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {'features': dataset.dense(), 'targets': dataset.targets}
    if dataset.signal is not None:
        arrays['signal'] = dataset.signal
    np.savez(path, **arrays)

    sidecar = {
        'manifest': dataset.manifest,
        'splits': {name: index.tolist() for name, index in dataset.splits.items()},
        'folds': dataset.folds.tolist() if dataset.folds is not None else None,
        'groups': [g.tolist() for g in dataset.groups] if dataset.groups is not None else None
    }
    path.with_suffix('.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding='utf-8')
    logging.info('save (%s) - %d samples', path, dataset.n_samples)
    return path


def load(path: str | Path) -> Dataset:
    """Reads a dataset written by save, or a libsvm text file (any other suffix).

    Raises:
        FileNotFoundError: missing file
        DatasetError: inconsistent sidecar
    """

    path = Path(path)
    if path.suffix not in ('.npz', '.json'):
        return parse_libsvm(path.read_text(encoding='utf-8'))

    path = path.with_suffix('.npz')
    with np.load(path) as arrays:
        features, targets = arrays['features'], arrays['targets']
        signal = arrays['signal'] if 'signal' in arrays else None

    sidecar = json.loads(path.with_suffix('.json').read_text(encoding='utf-8'))
    splits = {name: np.asarray(index, dtype=np.int64) for name, index in sidecar['splits'].items()}
    folds = np.asarray(sidecar['folds'], dtype=np.int64) if sidecar.get('folds') is not None else None
    groups = [np.asarray(g, dtype=np.int64) for g in sidecar['groups']] if sidecar.get('groups') else None

    dataset = Dataset(features,
                      targets,
                      splits,
                      folds=folds,
                      groups=groups,
                      signal=signal,
                      manifest=sidecar.get('manifest', {}))
    dataset.check()
    return dataset
