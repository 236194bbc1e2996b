"""The two training experiments on the synthetic cylinder dataset.

Both keep one dataset (seed 0) fixed and vary the model initialization seed.
Compared arms share every hyperparameter.
"""

from __future__ import annotations

from dataclasses import dataclass

from .train import (
    CylinderCase,
    FvgcNet,
    Scaling,
    TrainConfig,
    input_features,
    make_samples,
    synthetic_cylinder_dataset,
    train_model,
)

N_TRAIN, N_VAL = 20, 5
EPOCHS = 300
LR = 0.03
WIDTH = 16


@dataclass(frozen=True)
class ExperimentSettings:
    epochs: int = EPOCHS
    lr: float = LR
    width: int = WIDTH
    n_train: int = N_TRAIN
    n_val: int = N_VAL
    data_seed: int = 0
    k: int = 3


def _raw(cases, features, fvf, lr_input, s: ExperimentSettings):
    return [input_features(c, features, fvf, lr_input, s.k) for c in cases]


def _samples(cases, raw, residual, s: ExperimentSettings):
    scaling = Scaling.fit(raw[:s.n_train])
    samples = make_samples(cases, raw, scaling, residual, s.k)
    return samples[:s.n_train], samples[s.n_train:s.n_train + s.n_val]


def dataset(s: ExperimentSettings = ExperimentSettings()) -> list[CylinderCase]:
    return synthetic_cylinder_dataset(s.n_train + s.n_val, seed=s.data_seed)


@dataclass(frozen=True)
class FeatureRun:
    seed: int
    sdf_val: float
    geo_val: float

    @property
    def geo_wins(self) -> bool:
        return self.geo_val < self.sdf_val


def feature_benefit(seeds=range(5), s: ExperimentSettings = ExperimentSettings(), cases=None) -> list[FeatureRun]:
    """Final validation MSE of SV+DID+FVF inputs against SDF-only inputs without FVF."""
    cases = cases or dataset(s)
    arms = {"sdf": _samples(cases, _raw(cases, "sdf", False, False, s), False, s),
            "geo": _samples(cases, _raw(cases, "geo", True, False, s), False, s)}
    runs = []
    for seed in seeds:
        final = {}
        for name, (train, val) in arms.items():
            model = FvgcNet(train[0].x.shape[1], width=s.width, seed=seed)
            hist = train_model(model, train, val, TrainConfig("direct", "mse", s.epochs, s.lr, seed))
            final[name] = hist.val_loss[-1]
        runs.append(FeatureRun(seed, final["sdf"], final["geo"]))
    return runs


@dataclass(frozen=True)
class ResidualRun:
    seed: int
    epochs: int
    direct_final: float
    residual_epoch: int | None

    @property
    def fraction(self) -> float:
        return float("inf") if self.residual_epoch is None else self.residual_epoch / self.epochs

    def residual_wins(self, max_fraction: float = 0.6) -> bool:
        return self.fraction <= max_fraction


def residual_benefit(seeds=range(5), s: ExperimentSettings = ExperimentSettings(), cases=None) -> list[ResidualRun]:
    """Epochs the residual scheme needs to reach the direct scheme's final validation MSE.

    Both schemes receive the upsampled coarse field as an input feature; only
    the residual scheme adds it to the network output.
    """
    cases = cases or dataset(s)
    raw = _raw(cases, "geo", True, True, s)
    direct, residual = _samples(cases, raw, False, s), _samples(cases, raw, True, s)
    runs = []
    for seed in seeds:
        d_in = direct[0][0].x.shape[1]
        hist = train_model(FvgcNet(d_in, width=s.width, seed=seed), *direct,
                           TrainConfig("direct", "mse", s.epochs, s.lr, seed))
        target = hist.val_loss[-1]
        r_hist = train_model(FvgcNet(d_in, width=s.width, seed=seed), *residual,
                             TrainConfig("residual", "mse", s.epochs, s.lr, seed), stop_below=target)
        runs.append(ResidualRun(seed, s.epochs, target, r_hist.first_epoch_below(target)))
    return runs
