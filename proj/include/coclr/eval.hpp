#pragma once

#include <span>
#include <vector>

#include "coclr/encoder.hpp"
#include "coclr/numerics.hpp"

namespace coclr {

/// Which activations of a frozen encoder feed the downstream protocols.
/// Backbone drops the projection head; Embedding keeps it. Both are
/// L2-normalized.
enum class FeatureLayer { Backbone, Embedding };

Matrix extract_features(const MlpParams& encoder, const Matrix& x, FeatureLayer layer);

struct ProbeHyper {
    int steps = 500;       // full-batch gradient descent budget
    double lr = 2.0;
    double l2 = 1e-4;
    double tolerance = 1e-6;  // stop once the gradient max-norm drops below this

    friend bool operator==(const ProbeHyper&, const ProbeHyper&) = default;
};

/// Single linear layer: logits = x·W + b.
struct LinearHead {
    Matrix weight;  // D x C
    std::vector<double> bias;

    Matrix logits(const Matrix& x) const;
};

struct ProbeResult {
    double accuracy = 0.0;
    LinearHead head;
    std::vector<double> per_class_accuracy;
    Matrix test_logits;
    int steps_run = 0;
};

/// Mean softmax cross-entropy plus (l2/2)·‖W‖². Fills the gradient when asked.
double probe_loss(const LinearHead& head, const Matrix& x, std::span<const int> labels, double l2,
                  LinearHead* grad = nullptr);

/// Multinomial logistic regression on frozen features, zero-initialized,
/// trained by full-batch gradient descent. Deterministic.
ProbeResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x,
                         std::span<const int> test_y, int classes, const ProbeHyper& hyper);

/// Argmax accuracy with ties to the lower class index.
double accuracy_from_logits(const Matrix& logits, std::span<const int> labels,
                            std::vector<double>* per_class = nullptr, int classes = 0);

struct RetrievalResult {
    std::vector<int> ks;
    std::vector<double> recall;  // aligned with ks

    double at(int k) const;
};

inline const std::vector<int> kDefaultRecallKs{1, 5, 10, 20};

/// R@k: a query counts as correct if any of its k most similar gallery items
/// shares its label. Cosine ranking, ties to the lower gallery index.
RetrievalResult retrieval(const Matrix& query, std::span<const int> query_labels, const Matrix& gallery,
                          std::span<const int> gallery_labels, const std::vector<int>& ks = kDefaultRecallKs);
RetrievalResult retrieval_from_similarity(const Matrix& sim, std::span<const int> query_labels,
                                          std::span<const int> gallery_labels,
                                          const std::vector<int>& ks = kDefaultRecallKs);

/// Elementwise mean of two equally shaped score matrices.
Matrix two_stream_fuse(const Matrix& a, const Matrix& b);

struct FinetuneHyper {
    int steps = 500;
    double lr_head = 2.0;
    double lr_encoder = 0.05;  // 0 keeps the encoder frozen
    double l2 = 1e-4;
    FeatureLayer layer = FeatureLayer::Embedding;  // where the classifier attaches

    friend bool operator==(const FinetuneHyper&, const FinetuneHyper&) = default;
};

struct FinetuneResult {
    ProbeResult probe;
    MlpParams encoder;  // finetuned network up to hyper.layer
};

/// Joint full-batch gradient descent on the encoder (truncated to
/// hyper.layer, output normalized) and a zero-initialized linear classifier.
FinetuneResult finetune(const MlpParams& encoder, const Matrix& train_x, std::span<const int> train_y,
                        const Matrix& test_x, std::span<const int> test_y, int classes, const FinetuneHyper& hyper);

}  // namespace coclr
