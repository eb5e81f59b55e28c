"""Linear probes on frozen representations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

L2_REG = 1e-4
TOL = 1e-6
TEST_FRACTION = 0.2


@dataclass
class ProbeResult:
    per_factor_accuracy: list[float]
    mean_accuracy: float
    n_train: int
    n_test: int
    factor_cardinalities: list[int]
    degenerate_factors: list[int] = field(default_factory=list)


def _unique_rows(reps: np.ndarray, labels: np.ndarray):
    """Collapse identical (representation, label) rows, keeping multiplicities."""
    joined = np.concatenate([reps.astype(np.float64), labels.astype(np.float64)], axis=1)
    _, first, inverse = np.unique(joined, axis=0, return_index=True, return_inverse=True)
    counts = np.bincount(inverse.ravel(), minlength=first.size)
    order = np.argsort(first)
    return reps[first[order]], labels[first[order]], counts[order].astype(np.float64)


def _split(labels: np.ndarray, seed: int):
    idx = np.arange(labels.shape[0])
    _, counts = np.unique(labels, return_counts=True)
    n_test = int(np.ceil(TEST_FRACTION * idx.size))
    stratify = labels if counts.min() >= 2 and n_test >= counts.size else None
    return train_test_split(idx, test_size=TEST_FRACTION, random_state=seed, stratify=stratify)


def _majority_accuracy(y: np.ndarray, weights: np.ndarray) -> float:
    _, inv = np.unique(y, return_inverse=True)
    return float(np.bincount(inv, weights=weights).max() / weights.sum())


def fit_linear_probe(representations, labels, cardinalities, split_seed: int = 0) -> ProbeResult:
    """Fit one multinomial logistic-regression probe per latent factor.

    Identical (representation, label) rows are collapsed into one weighted
    row before splitting, so a sample never lands in both train and test and
    duplicating the data changes nothing. Each factor gets its own 80/20 split,
    stratified when every class has at least two members. Representations
    with no variance at all cannot separate anything; they score the majority
    class frequency. ``n_train``/``n_test`` count distinct rows.
    """
    reps = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if reps.shape[0] != labels.shape[0]:
        raise ValueError("representations and labels disagree on sample count")
    constant = np.ptp(reps, axis=0).max(initial=0.0) == 0.0
    reps, labels, weights = _unique_rows(reps, labels)

    accs, degenerate = [], []
    n_train = n_test = 0
    for f in range(labels.shape[1]):
        y = labels[:, f]
        if np.unique(y).size < 2:
            accs.append(1.0)
            degenerate.append(f)
            continue
        if constant:
            accs.append(_majority_accuracy(y, weights))
            continue
        tr, te = _split(y, split_seed)
        n_train, n_test = tr.size, te.size
        if np.unique(y[tr]).size < 2:
            # only one class seen in training: the probe can only predict it
            accs.append(float(np.average(y[te] == y[tr][0], weights=weights[te])))
            continue
        scaler = StandardScaler().fit(reps[tr], sample_weight=weights[tr])
        clf = LogisticRegression(C=1.0 / (L2_REG * weights[tr].sum()), tol=TOL, max_iter=5000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            clf.fit(scaler.transform(reps[tr]), y[tr], sample_weight=weights[tr])
        hits = clf.predict(scaler.transform(reps[te])) == y[te]
        accs.append(float(np.average(hits, weights=weights[te])))
    return ProbeResult(accs, float(np.mean(accs)) if accs else 0.0, n_train, n_test,
                       [int(c) for c in cardinalities], degenerate)


@torch.no_grad()
def encode_dataset(critic, images, batch_size: int = 256) -> np.ndarray:
    was_training = critic.training
    critic.eval()
    out = [critic.encode("x", images[i:i + batch_size]).cpu().numpy()
           for i in range(0, len(images), batch_size)]
    critic.train(was_training)
    return np.concatenate(out)


def evaluate_model(critic, dataset, split_seed: int = 0) -> ProbeResult:
    reps = encode_dataset(critic, dataset.x)
    return fit_linear_probe(reps, dataset.z, dataset.factor_cardinalities, split_seed)
