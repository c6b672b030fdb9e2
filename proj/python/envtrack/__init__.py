"""Speech envelope tracking analyses: GCMI, TMIF, permutation statistics and classification."""

from ._core import (
    EnvtrackError,
    InvalidInput,
    SvmModel,
    band_envelopes,
    band_filter,
    copula_transform,
    count_relabelings,
    extract_envelope,
    fisher_z_compare,
    gcmi,
    knee_point,
    mix_seed,
    pearson,
    preprocess_eeg,
    roc_auc,
    significance_level,
    spectrum_matched_noise,
    svm_fit,
    synth_subject,
    temporal_cluster_test,
    tmif,
    welch_t,
)

__all__ = [name for name in dir() if not name.startswith("_")]
