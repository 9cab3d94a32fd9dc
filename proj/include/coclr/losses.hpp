#pragma once

#include <span>

#include "coclr/mining.hpp"
#include "coclr/numerics.hpp"
#include "coclr/queue.hpp"

namespace coclr {

/// Temperature-scaled logits for one batch of queries.
///
/// Column 0 holds the current-key positive zq_i·zk_i/τ, columns 1.. the
/// history zq_i·queue_j/τ. The keys are kept alongside so losses can
/// back-propagate to the query embeddings; they are constants (no gradient).
struct LogitsBlock {
    Matrix logits;        // N x (1 + fill), already divided by tau
    double tau = 0.07;
    Matrix current_keys;  // N x C
    Matrix history_keys;  // fill x C, storage order
};

struct LossResult {
    double loss = 0.0;      // batch mean
    Matrix d_query;         // dLoss/dQueryEmbeddings, N x C
    Matrix d_logits;        // dLoss/dLogits, N x (1 + fill)
};

/// Query and key rows are expected to be unit-norm (not checked).
LogitsBlock build_logits(const Matrix& zq, const Matrix& zk, const Matrix& history, double tau);
LogitsBlock build_logits(const Matrix& zq, const Matrix& zk, const FeatureQueue& q, double tau);

/// Multi-instance InfoNCE: per row −log Σ_{p∈mask} softmax(logits)_p,
/// averaged over the batch. Throws if a mask row has no positive.
LossResult mil_nce(const LogitsBlock& block, const PositiveMask& mask);

/// mil_nce with the self-only mask.
LossResult info_nce(const LogitsBlock& block);

/// Oracle positives: column 0 plus every queue column of the query's class.
/// Paired with mil_nce this is UberNCE.
PositiveMask uber_nce_mask(std::span<const int> query_labels, std::span<const int> queue_labels);
/// As above, checking that the labels line up with the block's rows and columns.
PositiveMask uber_nce_mask(const LogitsBlock& block, std::span<const int> query_labels,
                           std::span<const int> queue_labels);

/// Cross-view instance contrast: view-1 query i against its own view-2
/// embedding as the positive and the other view's queue as negatives.
LossResult cmc_cross_view(const Matrix& z1, const Matrix& z2, const FeatureQueue& q_other, double tau);

}  // namespace coclr
