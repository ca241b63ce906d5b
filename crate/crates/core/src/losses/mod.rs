//! Conditioning and adversarial losses with closed-form gradient oracles.

mod adversarial;
mod ce;
mod d2dce;
mod similarity;
mod two_c;

pub use adversarial::{
    adversarial_losses, discriminator_loss, generator_loss, projection_graph, projection_term,
    AdversarialKind,
};
pub use ce::{
    acgan_ce, acgan_ce_grad_w, ce_weight_grad_from_probs, cross_entropy, feature_normalized_ce,
    logits_against_rows, target_probabilities,
};
pub use d2dce::{
    anchor_similarity_nodes, d2dce, d2dce_embedding_grads, d2dce_from_similarities,
    d2dce_global_minimum, d2dce_graph, d2dce_per_sample, d2dce_per_sample_graph,
    d2dce_similarity_grads, modified_ce, modified_ce_from_similarities, similarity_nodes,
    D2dceParams, EmbeddingGrads, SimilarityGrads,
};
pub(crate) use similarity::check_labels;
pub use similarity::{
    exact_negative_mask, false_negative_mask, random_pairwise, EmbeddingBatch, NegativeMask,
    SimilarityBundle, UNIT_NORM_TOL,
};
pub use two_c::{
    two_c_embedding_grads, two_c_from_similarities, two_c_loss, two_c_loss_with, Denominator,
};
