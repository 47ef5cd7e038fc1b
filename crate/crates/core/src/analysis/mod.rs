//! Latent-code injection analysis: the conv decomposition z = y + o, the
//! batch-normalization inconsistency demos, instance-norm elimination, the
//! consistency/diversity criteria and the feature-statistics probe.

mod criteria;
mod decomposition;
mod demos;
mod latent;
mod probe;

pub use criteria::{check_criteria, CriterionReport, CriterionThresholds};
pub use decomposition::{lci_conv, DecompositionReport};
pub use demos::{
    demo_in_elimination, demo_inter_batch_identity, demo_intra_batch_inconsistency,
    inter_batch_trial, intra_batch_gap, random_code_pairs, InterBatchReport, InterBatchTrial,
    IntraBatchGap, IntraBatchReport, MIN_DEMO_STD,
};
pub use latent::{codes_tensor, replicate_latent, CodeKind, LatentCode};
pub use probe::{
    feature_stat_probe, interior_means, kmeans, pca, purity, Pca, ProbeOptions, ProbeReport,
    KMEANS_MAX_ITERS, PCA_TOL,
};
