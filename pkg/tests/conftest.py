import numpy as np
import pytest

from smoothcal.nn import ArchitectureSpec, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_arch():
    return ArchitectureSpec(input_dim=2, hidden_layers=(8, 8), num_classes=3)


@pytest.fixture
def fast_train_cfg():
    return TrainConfig(max_epochs=60, early_stop_patience=10, batch_size=None)


def brute_force_ece(probs, labels, num_bins=15):
    """Literal two-loop implementation of the confidence calibration error."""
    n = len(labels)
    conf = [max(row) for row in probs]
    pred = [int(np.argmax(row)) for row in probs]
    total = 0.0
    for b in range(1, num_bins + 1):
        members = []
        for i in range(n):
            lo, hi = (b - 1) / num_bins, b / num_bins
            inside = (conf[i] <= hi) if b == 1 else (lo < conf[i] <= hi)
            if inside:
                members.append(i)
        if not members:
            continue
        acc = sum(1.0 for i in members if pred[i] == labels[i]) / len(members)
        avg_conf = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(acc - avg_conf)
    return total


def brute_force_cwece(probs, labels, num_bins=15):
    """Literal two-loop implementation of the classwise calibration error."""
    n, k = np.asarray(probs).shape
    total = 0.0
    for j in range(k):
        for b in range(1, num_bins + 1):
            members = []
            for i in range(n):
                pj = probs[i][j]
                lo, hi = (b - 1) / num_bins, b / num_bins
                inside = (pj <= hi) if b == 1 else (lo < pj <= hi)
                if inside:
                    members.append(i)
            if not members:
                continue
            actual = sum(1.0 for i in members if labels[i] == j) / len(members)
            predicted = sum(probs[i][j] for i in members) / len(members)
            total += len(members) / n * abs(actual - predicted)
    return total / k


def random_prob_matrix(rng, n, k):
    raw = rng.gamma(1.0, 1.0, size=(n, k))
    return raw / raw.sum(axis=1, keepdims=True)
