"""Experiment flows binding models to the evaluation protocol: fitting and
scoring over cross-validation folds, out-of-distribution holdouts, and the
end-to-end classify-then-estimate pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import EmptyPredictions, UnknownTaxon, ZeroVariance
from .evaluation import (
    MetricReport,
    SplitPlan,
    compute_metrics,
    ks_two_sample,
    make_cv_splits,
    pearson_r,
    pool_folds,
)
from .features import SpecimenFeatures, compute_features
from .linear import (
    FeatureSpec,
    LinearModel,
    TargetSpace,
    build_rows,
    fit_ols,
    predict_specimen,
)
from .neural.model import ModelConfig
from .neural.training import TrainConfig, TrainedModel, predict_specimen_masses, train
from .records import Dataset, PredictionEntry, PredictionSet
from .rng import derive_seed, substream


def feature_table(dataset: Dataset) -> dict[str, SpecimenFeatures]:
    return {s.specimen_id: compute_features(s) for s in dataset.specimens}


def fit_linear(
    dataset: Dataset,
    specimen_ids,
    feature_spec: FeatureSpec,
    target_space: TargetSpace = TargetSpace.RAW,
    per_image: bool = True,
    features: dict[str, SpecimenFeatures] | None = None,
) -> LinearModel:
    features = features or feature_table(dataset)
    rows = build_rows(
        dataset.subset(specimen_ids), features, feature_spec, target_space, per_image
    )
    return fit_ols(rows, target_space, feature_spec)


def predict_linear(
    model: LinearModel,
    dataset: Dataset,
    specimen_ids,
    features: dict[str, SpecimenFeatures] | None = None,
    trim_fraction: float = 0.05,
) -> PredictionSet:
    """Per-specimen predictions for every weighed, scorable specimen."""
    features = features or feature_table(dataset)
    entries = []
    for record in dataset.subset(specimen_ids):
        if record.dry_mass_ug is None:
            continue
        feats = features[record.specimen_id]
        if model.feature_spec is FeatureSpec.AREA_PLUS_SPEED and feats.sinking_speed is None:
            continue
        mass = predict_specimen(model, record, feats, trim_fraction)
        entries.append(
            PredictionEntry(record.specimen_id, record.taxon, record.dry_mass_ug, mass)
        )
    return PredictionSet(tuple(entries))


def predict_neural(
    model: TrainedModel,
    dataset: Dataset,
    specimen_ids,
    features: dict[str, SpecimenFeatures] | None = None,
    trim_fraction: float = 0.05,
) -> PredictionSet:
    features = features or feature_table(dataset)
    masses = predict_specimen_masses(model, dataset, specimen_ids, features, trim_fraction)
    entries = []
    for record in dataset.subset(specimen_ids):
        if record.dry_mass_ug is None or record.specimen_id not in masses:
            continue
        entries.append(
            PredictionEntry(
                record.specimen_id, record.taxon, record.dry_mass_ug, masses[record.specimen_id]
            )
        )
    return PredictionSet(tuple(entries))


@dataclass(frozen=True)
class CrossvalResult:
    plan: SplitPlan
    fold_reports: tuple[MetricReport, ...]
    pooled_report: MetricReport
    pooled_predictions: PredictionSet
    fold_val_histories: tuple[tuple[float, ...], ...] = ()


def crossval_linear(
    dataset: Dataset,
    feature_spec: FeatureSpec,
    target_space: TargetSpace = TargetSpace.RAW,
    k: int = 5,
    seed: int = 0,
    trim_fraction: float = 0.05,
    per_image: bool = True,
) -> CrossvalResult:
    """Five-fold protocol for a linear model: fit on each fold's train split,
    score its test fold, then pool the test predictions."""
    features = feature_table(dataset)
    plan = make_cv_splits(dataset, k=k, seed=seed)
    fold_sets = []
    for fold in plan.folds:
        model = fit_linear(dataset, fold.train, feature_spec, target_space, per_image, features)
        fold_sets.append(
            predict_linear(model, dataset, fold.test, features, trim_fraction)
        )
    pooled = pool_folds(fold_sets)
    return CrossvalResult(
        plan=plan,
        fold_reports=tuple(compute_metrics(s) for s in fold_sets),
        pooled_report=compute_metrics(pooled),
        pooled_predictions=pooled,
    )


def crossval_neural(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    k: int = 5,
    seed: int = 0,
    trim_fraction: float = 0.05,
) -> CrossvalResult:
    """Five-fold protocol for a neural model: one training per fold with a
    fold-derived seed, scored on that fold's test specimens."""
    features = feature_table(dataset)
    plan = make_cv_splits(dataset, k=k, seed=seed)
    fold_sets = []
    histories = []
    for f, fold in enumerate(plan.folds):
        fold_tc = replace(train_config, seed=derive_seed(seed, "fold", f))
        model = train(dataset, fold.train, fold.val, model_config, fold_tc, features)
        histories.append(tuple(model.val_loss_history))
        fold_sets.append(
            predict_neural(model, dataset, fold.test, features, trim_fraction)
        )
    pooled = pool_folds(fold_sets)
    return CrossvalResult(
        plan=plan,
        fold_reports=tuple(compute_metrics(s) for s in fold_sets),
        pooled_report=compute_metrics(pooled),
        pooled_predictions=pooled,
        fold_val_histories=tuple(histories),
    )


def ood_split(dataset: Dataset, holdout_taxon: str) -> tuple[list[str], list[str]]:
    """Specimen ids for (rest-of-dataset, holdout taxon)."""
    if holdout_taxon not in dataset.taxon_set:
        raise UnknownTaxon(f"taxon {holdout_taxon!r} not present in dataset")
    rest, held = [], []
    for s in dataset.specimens:
        (held if s.taxon == holdout_taxon else rest).append(s.specimen_id)
    return rest, held


def ood_linear(
    dataset: Dataset,
    holdout_taxon: str,
    feature_spec: FeatureSpec,
    target_space: TargetSpace = TargetSpace.RAW,
    trim_fraction: float = 0.05,
    per_image: bool = True,
) -> tuple[MetricReport, PredictionSet]:
    rest, held = ood_split(dataset, holdout_taxon)
    features = feature_table(dataset)
    model = fit_linear(dataset, rest, feature_spec, target_space, per_image, features)
    predictions = predict_linear(model, dataset, held, features, trim_fraction)
    return compute_metrics(predictions), predictions


def ood_neural(
    dataset: Dataset,
    holdout_taxon: str,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int = 0,
    val_fraction: float = 0.2,
    trim_fraction: float = 0.05,
) -> tuple[MetricReport, PredictionSet]:
    """Train on every other taxon (with an internal stratified train/val
    split) and evaluate only on the held-out taxon."""
    rest, held = ood_split(dataset, holdout_taxon)
    features = feature_table(dataset)
    rng = substream(seed, "ood_val")
    by_taxon: dict[str, list[str]] = {}
    for sid in rest:
        by_taxon.setdefault(dataset.specimen(sid).taxon, []).append(sid)
    train_ids: list[str] = []
    val_ids: list[str] = []
    for taxon in sorted(by_taxon):
        ids = sorted(by_taxon[taxon])
        rng.shuffle(ids)
        n_val = max(1, int(round(val_fraction * len(ids))))
        val_ids.extend(ids[:n_val])
        train_ids.extend(ids[n_val:])
    model = train(dataset, train_ids, val_ids, model_config, train_config, features)
    predictions = predict_neural(model, dataset, held, features, trim_fraction)
    return compute_metrics(predictions), predictions


@dataclass(frozen=True)
class PipelineGroup:
    taxon: str
    n: int
    n_misclassified: int
    ks_d: float | None
    ks_p: float | None
    pearson: float | None


@dataclass(frozen=True)
class PipelineReport:
    groups: tuple[PipelineGroup, ...]
    predictions: PredictionSet
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "groups": [
                {
                    "taxon": g.taxon,
                    "n": g.n,
                    "n_misclassified": g.n_misclassified,
                    "ks_d": g.ks_d,
                    "ks_p": g.ks_p,
                    "pearson_r": g.pearson,
                }
                for g in self.groups
            ],
        }


def run_pipeline(
    dataset: Dataset,
    classify_fn,
    predict_fn,
    taxa: tuple[str, ...] | None = None,
    log_pearson: bool = True,
) -> PipelineReport:
    """Classify every weighed specimen, estimate its mass, then compare the
    per-group predicted mass distribution against the true masses.

    Groups are formed by the *predicted* taxon, so misclassified specimens
    stay in the group the classifier put them in. ``classify_fn`` maps a
    SpecimenRecord to a taxon; ``predict_fn`` maps (record, predicted_taxon)
    to a mass. Group statistics are the two-sample KS test between the
    group's predicted and true masses plus Pearson's r (on log masses by
    default); degenerate groups report None.
    """
    records = [s for s in dataset.specimens if s.dry_mass_ug is not None]
    if not records:
        raise EmptyPredictions("pipeline needs weighed specimens")
    if taxa is None:
        taxa = tuple(sorted({r.taxon for r in records}))
    entries = []
    for record in records:
        predicted_taxon = classify_fn(record)
        mass = predict_fn(record, predicted_taxon)
        entries.append(
            PredictionEntry(
                record.specimen_id,
                record.taxon,
                record.dry_mass_ug,
                mass,
                predicted_taxon=predicted_taxon,
            )
        )
    predictions = PredictionSet(tuple(entries))
    groups = []
    correct = 0
    for taxon in taxa:
        members = [e for e in entries if e.predicted_taxon == taxon]
        n_mis = sum(1 for e in members if e.taxon != taxon)
        correct += len(members) - n_mis
        ks_d = ks_p = pearson = None
        if members:
            true_masses = [e.true_mass_ug for e in members]
            pred_masses = [e.predicted_mass_ug for e in members]
            ks_d, ks_p = ks_two_sample(true_masses, pred_masses)
            if len(members) >= 2:
                try:
                    if log_pearson:
                        pearson = pearson_r(
                            [math.log(v) for v in true_masses],
                            [math.log(v) for v in pred_masses],
                        )
                    else:
                        pearson = pearson_r(true_masses, pred_masses)
                except ZeroVariance:
                    pearson = None
        groups.append(
            PipelineGroup(
                taxon=taxon,
                n=len(members),
                n_misclassified=n_mis,
                ks_d=ks_d,
                ks_p=ks_p,
                pearson=pearson,
            )
        )
    return PipelineReport(
        groups=tuple(groups),
        predictions=predictions,
        accuracy=correct / len(entries),
    )
