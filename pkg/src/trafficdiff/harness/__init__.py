from .classifiers import KINDS, ClassifierConfig, make_classifier, predictive_entropy, train_and_eval
from .data import SCENARIOS, EvalReport, EvalRow, ImageSet, build_training_set, select_synthetic
from .protocols import (
    AnomalySetup,
    DatasetBundle,
    UncertaintyReport,
    anomaly_case1,
    anomaly_case2_uncertainty,
    compare_1d_2d,
    crop_image_set,
    evaluate_scenarios,
    hierarchical_eval,
    limited_data_sweep,
    prefix_length,
    realtime_eval,
    synth_count_sweep,
)
from .synth import DiffusionSynthesizer, ImportedSynthesizer
