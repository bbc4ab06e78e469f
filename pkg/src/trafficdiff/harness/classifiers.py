"""Downstream classifiers with a common fit / predict_proba surface.

conv2d and conv1d are the same network; only the convolution dimensionality
differs. The tree and Bayes models see flattened inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

KINDS = ("conv2d", "conv1d", "mlp", "naive_bayes", "random_forest", "gradient_boosted_trees")


@dataclass
class ClassifierConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    width: int = 16
    trees: int = 100
    mlp_hidden: int = 128


class ConvNet(nn.Module):
    def __init__(self, dims: int, num_classes: int, width: int = 16):
        super().__init__()
        conv = nn.Conv2d if dims == 2 else nn.Conv1d
        pool = nn.MaxPool2d if dims == 2 else nn.MaxPool1d
        gap = nn.AdaptiveAvgPool2d if dims == 2 else nn.AdaptiveAvgPool1d
        self.features = nn.Sequential(
            conv(1, width, 3, padding=1), nn.ReLU(), pool(2),
            conv(width, 2 * width, 3, padding=1), nn.ReLU(), pool(2),
            conv(2 * width, 4 * width, 3, padding=1), nn.ReLU(), gap(4),
        )
        self.head = nn.Linear(4 * width * 4 ** dims, num_classes)

    def forward(self, x):
        return self.head(self.features(x).flatten(1))


class TorchClassifier:
    def __init__(self, dims: int, cfg: ClassifierConfig, seed: int):
        self.dims = dims
        self.cfg = cfg
        self.seed = seed

    def fit(self, x: np.ndarray, y: np.ndarray):
        self.classes_ = np.unique(y)
        yi = np.searchsorted(self.classes_, y)
        xt = torch.as_tensor(x, dtype=torch.float32).unsqueeze(1)
        yt = torch.as_tensor(yi, dtype=torch.long)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.net = ConvNet(self.dims, len(self.classes_), self.cfg.width)
        g = torch.Generator().manual_seed(self.seed + 1)
        opt = torch.optim.Adam(self.net.parameters(), lr=self.cfg.lr)
        n = len(xt)
        self.net.train()
        for _ in range(self.cfg.epochs):
            perm = torch.randperm(n, generator=g)
            for s in range(0, n, self.cfg.batch_size):
                idx = perm[s:s + self.cfg.batch_size]
                loss = F.cross_entropy(self.net(xt[idx]), yt[idx])
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
        self.net.eval()
        return self

    @torch.no_grad()
    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        xt = torch.as_tensor(x, dtype=torch.float32).unsqueeze(1)
        return torch.softmax(self.net(xt), dim=1).double().numpy()

    def predict(self, x):
        return self.classes_[self.predict_proba(x).argmax(1)]


class FlatClassifier:
    """sklearn estimator over flattened inputs."""

    def __init__(self, estimator):
        self.est = estimator

    def fit(self, x, y):
        self.est.fit(x.reshape(len(x), -1), y)
        self.classes_ = self.est.classes_
        return self

    def predict_proba(self, x):
        return self.est.predict_proba(x.reshape(len(x), -1))

    def predict(self, x):
        return self.est.predict(x.reshape(len(x), -1))


def make_classifier(kind: str, seed: int, cfg: ClassifierConfig | None = None):
    cfg = cfg or ClassifierConfig()
    if kind == "conv2d":
        return TorchClassifier(2, cfg, seed)
    if kind == "conv1d":
        return TorchClassifier(1, cfg, seed)
    if kind == "mlp":
        from sklearn.neural_network import MLPClassifier
        return FlatClassifier(MLPClassifier((cfg.mlp_hidden,), max_iter=300, random_state=seed))
    if kind == "naive_bayes":
        from sklearn.naive_bayes import GaussianNB
        return FlatClassifier(GaussianNB())
    if kind == "random_forest":
        from sklearn.ensemble import RandomForestClassifier
        return FlatClassifier(RandomForestClassifier(cfg.trees, random_state=seed))
    if kind == "gradient_boosted_trees":
        from sklearn.ensemble import HistGradientBoostingClassifier
        return FlatClassifier(HistGradientBoostingClassifier(max_iter=cfg.trees, random_state=seed))
    raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")


def train_and_eval(kind: str, train_x, train_y, test_x, test_y, seed: int,
                   cfg: ClassifierConfig | None = None) -> float:
    """Percent accuracy on the test set."""
    train_y = np.asarray(train_y)
    test_y = np.asarray(test_y)
    unseen = set(np.unique(test_y)) - set(np.unique(train_y))
    if unseen:
        raise ValueError(f"test classes {sorted(unseen)} absent from training data")
    if len(np.unique(train_y)) == 1:
        # a one-class problem has a single possible answer
        return 100.0 * float(np.mean(test_y == train_y[0]))
    clf = make_classifier(kind, seed, cfg).fit(np.asarray(train_x), train_y)
    return 100.0 * float(np.mean(clf.predict(np.asarray(test_x)) == test_y))


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    """Entropy (nats) of each row of a probability matrix."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return np.clip(terms.sum(axis=-1), 0.0, np.log(p.shape[-1]))
