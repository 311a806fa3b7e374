import shutil
from pathlib import Path

import numpy as np

from dualtune import data
from dualtune.models import ElasticNet, SparseGroupLasso, SvmCv

out_dir = Path('tests/results')


def identity_elastic_net(b_tr=(3.0, -0.5, 1.5, 0.2), b_val=(2.0, 0.0, 1.0, 0.0)) -> ElasticNet:
    """Elastic net with A_tr = A_val = A_te = I, whose solution is a scaled soft threshold of b_tr."""

    n = len(b_tr)
    identity = np.eye(n)
    return ElasticNet(identity, np.asarray(b_tr), identity, np.asarray(b_val), identity, np.asarray(b_val))


def soft_threshold(b: np.ndarray, lam1: float, lam2: float) -> np.ndarray:
    return np.sign(b) * np.maximum(np.abs(b) - lam1, 0.0) / (1.0 + lam2)


def random_elastic_net(seed: int = 0, n_tr: int = 20, n_val: int = 10, p: int = 15) -> ElasticNet:
    dataset = data.gen_elastic_net(seed, n_tr, n_val, 10, p)
    return ElasticNet(*dataset.part('train'), *dataset.part('val'), *dataset.part('test'))


def random_sgl(seed: int = 0, n: int = 15, p: int = 10, groups: int = 2) -> SparseGroupLasso:
    dataset = data.gen_sgl(seed, n, p, groups, n_te=10)
    return SparseGroupLasso(*dataset.part('train'), *dataset.part('val'), *dataset.part('test'), dataset.groups)


def small_svm(seed: int = 0, n: int = 36, p: int = 2, folds: int = 3) -> SvmCv:
    dataset = data.gen_svm(seed, n, p, noise=0.1, folds=folds)
    return SvmCv(*dataset.part('cv'), dataset.folds, *dataset.part('test'))


def cleanup():
    if out_dir.exists():
        shutil.rmtree(out_dir)
