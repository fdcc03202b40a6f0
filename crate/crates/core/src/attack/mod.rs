//! Inference attacks run by the adversarial participant over its observations.

pub mod membership;
pub mod property;

pub use membership::{
    eval_membership, extract_batch_vocab, extract_log_vocabs, infer_membership, write_membership_csv, MembershipDecision,
    MembershipEval, MembershipQuery, VocabSet, DEFAULT_ZERO_TOL,
};
pub use property::{
    collect_shadow_gradients, emulate_model_averaging_attack, infer_dataset_level, infer_occurrence_timeline,
    infer_single_batch, mean_score, attack_features, pool_features, pool_values, run_active_attack, smooth_scores, write_scores_csv,
    ActiveAdversary, AttackSummary, AuxiliaryData, FedAvgMeta, HeadSpec, PropertyClassifier, ShadowConfig,
    DEFAULT_POOL_WINDOW,
};
