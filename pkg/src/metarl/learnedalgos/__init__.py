"""Learned algorithm family: drift functions and per-parameter update rules."""

from .container import from_dict, load_algorithm, save_algorithm, to_dict
from .drift import (
    LPO_SPEC,
    N_LPO_FEATURES,
    DriftDomainError,
    DriftFunction,
    DriftInitError,
    drift_and_grad_r,
    drift_eval,
    drift_values,
    init_lpo_near_ppo,
    lpo_feature_dr,
    lpo_featurize,
    ppo_drift,
    sample_drift_inputs,
)
from .optim import (
    LEARNED_OPT_SPEC,
    N_NO_FEATURES,
    N_OPEN_FEATURES,
    DivergenceError,
    OptState,
    UpdateContext,
    UpdateRule,
    apply_update_rule,
    compute_update,
    dormancy_per_param,
    dormancy_scores,
    layer_proportions,
    no_features_featurize,
    open_featurize,
    update_momenta,
)
