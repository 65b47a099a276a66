"""Monte-Carlo studies built on the estimators."""
from .cohort import (
    CohortConfig,
    LogRegModel,
    classify_experiment,
    evaluate_cohort,
    gen_cohort,
    stratified_split,
    train_logreg,
)
from .sweeps import (
    ACCURACY_FIELDS,
    DIAGNOSIS_FIELDS,
    AccuracyRecord,
    DiagnosisRecord,
    TrialSettings,
    diagnose_bayes,
    mean_by,
    run_trial,
    sweep_nodes,
    sweep_samples,
)
