#include "coclr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace coclr {

Matrix extract_features(const MlpParams& encoder, const Matrix& x, FeatureLayer layer) {
    return layer == FeatureLayer::Backbone ? embed(backbone(encoder), x) : embed(encoder, x);
}

Matrix LinearHead::logits(const Matrix& x) const {
    Matrix out = matmul(x, weight);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
    return out;
}

namespace {

void check_labels(const Matrix& x, std::span<const int> y, int classes, const char* what) {
    if (x.rows() != y.size())
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(y.size()) + " labels for " +
                                    std::to_string(x.rows()) + " rows");
    for (int v : y)
        if (v < 0 || v >= classes) throw std::invalid_argument(std::string(what) + ": label out of range");
}

// Softmax cross-entropy pieces shared by probe and finetune. Returns mean
// loss and fills d_logits (already divided by N).
double softmax_xent(const Matrix& logits, std::span<const int> y, Matrix& d_logits) {
    const std::size_t n = logits.rows();
    d_logits = softmax_rows(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - mx);
        loss += std::log(s) + mx - row[static_cast<std::size_t>(y[i])];
        d_logits(i, static_cast<std::size_t>(y[i])) -= 1.0;
    }
    for (double& v : d_logits.data()) v /= static_cast<double>(n);
    return loss / static_cast<double>(n);
}

LinearHead zero_head(std::size_t dim, int classes) {
    return {Matrix(dim, static_cast<std::size_t>(classes)), std::vector<double>(static_cast<std::size_t>(classes), 0.0)};
}

void require_two_classes(std::span<const int> y, const char* what) {
    std::set<int> seen(y.begin(), y.end());
    if (seen.size() < 2) throw std::invalid_argument(std::string(what) + ": training set has a single class");
}

}  // namespace

double probe_loss(const LinearHead& head, const Matrix& x, std::span<const int> labels, double l2, LinearHead* grad) {
    Matrix d_logits;
    double loss = softmax_xent(head.logits(x), labels, d_logits);
    double reg = 0.0;
    for (double w : head.weight.data()) reg += w * w;
    loss += 0.5 * l2 * reg;
    if (grad) {
        grad->weight = matmul_at(x, d_logits);
        for (std::size_t i = 0; i < grad->weight.size(); ++i) grad->weight.data()[i] += l2 * head.weight.data()[i];
        grad->bias.assign(head.bias.size(), 0.0);
        for (std::size_t i = 0; i < d_logits.rows(); ++i)
            for (std::size_t j = 0; j < d_logits.cols(); ++j) grad->bias[j] += d_logits(i, j);
    }
    return loss;
}

double accuracy_from_logits(const Matrix& logits, std::span<const int> labels, std::vector<double>* per_class,
                            int classes) {
    if (logits.rows() != labels.size()) throw std::invalid_argument("accuracy_from_logits: label count mismatch");
    if (labels.empty()) return 0.0;
    std::vector<std::size_t> hit(static_cast<std::size_t>(std::max(classes, 0)), 0);
    std::vector<std::size_t> tot(hit.size(), 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto r = logits.row(i);
        const auto pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        const bool ok = pred == labels[i];
        correct += ok;
        const auto c = static_cast<std::size_t>(labels[i]);
        if (c < tot.size()) {
            ++tot[c];
            hit[c] += ok;
        }
    }
    if (per_class) {
        per_class->assign(tot.size(), 0.0);
        for (std::size_t c = 0; c < tot.size(); ++c)
            if (tot[c] > 0) (*per_class)[c] = static_cast<double>(hit[c]) / static_cast<double>(tot[c]);
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ProbeResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x,
                         std::span<const int> test_y, int classes, const ProbeHyper& hyper) {
    check_labels(train_x, train_y, classes, "linear_probe");
    check_labels(test_x, test_y, classes, "linear_probe");
    require_two_classes(train_y, "linear_probe");
    if (test_y.empty()) throw std::invalid_argument("linear_probe: empty test set");
    if (test_x.cols() != train_x.cols()) throw std::invalid_argument("linear_probe: train/test feature dims differ");

    ProbeResult res;
    res.head = zero_head(train_x.cols(), classes);
    LinearHead grad;
    for (int step = 0; step < hyper.steps; ++step) {
        probe_loss(res.head, train_x, train_y, hyper.l2, &grad);
        double gmax = 0.0;
        for (double g : grad.weight.data()) gmax = std::max(gmax, std::abs(g));
        for (double g : grad.bias) gmax = std::max(gmax, std::abs(g));
        if (gmax < hyper.tolerance) break;
        for (std::size_t i = 0; i < grad.weight.size(); ++i) res.head.weight.data()[i] -= hyper.lr * grad.weight.data()[i];
        for (std::size_t j = 0; j < grad.bias.size(); ++j) res.head.bias[j] -= hyper.lr * grad.bias[j];
        res.steps_run = step + 1;
    }
    res.test_logits = res.head.logits(test_x);
    res.accuracy = accuracy_from_logits(res.test_logits, test_y, &res.per_class_accuracy, classes);
    return res;
}

double RetrievalResult::at(int k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return recall[i];
    throw std::out_of_range("RetrievalResult: R@" + std::to_string(k) + " not computed");
}

RetrievalResult retrieval_from_similarity(const Matrix& sim, std::span<const int> query_labels,
                                          std::span<const int> gallery_labels, const std::vector<int>& ks) {
    if (sim.cols() == 0) throw std::invalid_argument("retrieval: empty gallery");
    if (sim.rows() != query_labels.size() || sim.cols() != gallery_labels.size())
        throw std::invalid_argument("retrieval: label counts do not match similarity shape");
    int kmax = 0;
    for (int k : ks) {
        if (k < 1 || static_cast<std::size_t>(k) > sim.cols())
            throw std::out_of_range("retrieval: k=" + std::to_string(k) + " exceeds gallery size " +
                                    std::to_string(sim.cols()));
        kmax = std::max(kmax, k);
    }
    RetrievalResult res;
    res.ks = ks;
    res.recall.assign(ks.size(), 0.0);
    std::vector<std::size_t> order(sim.cols());
    for (std::size_t i = 0; i < sim.rows(); ++i) {
        auto row = sim.row(i);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + kmax, order.end(),
                          [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        // Rank of the first same-class hit within the top kmax.
        int first_hit = kmax + 1;
        for (int r = 0; r < kmax; ++r)
            if (gallery_labels[order[static_cast<std::size_t>(r)]] == query_labels[i]) {
                first_hit = r + 1;
                break;
            }
        for (std::size_t t = 0; t < ks.size(); ++t)
            if (first_hit <= ks[t]) res.recall[t] += 1.0;
    }
    for (double& r : res.recall) r /= static_cast<double>(sim.rows());
    return res;
}

RetrievalResult retrieval(const Matrix& query, std::span<const int> query_labels, const Matrix& gallery,
                          std::span<const int> gallery_labels, const std::vector<int>& ks) {
    if (gallery.rows() == 0) throw std::invalid_argument("retrieval: empty gallery");
    return retrieval_from_similarity(matmul_bt(query, gallery), query_labels, gallery_labels, ks);
}

Matrix two_stream_fuse(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("two_stream_fuse: shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = 0.5 * (a.data()[i] + b.data()[i]);
    return out;
}

FinetuneResult finetune(const MlpParams& encoder, const Matrix& train_x, std::span<const int> train_y,
                        const Matrix& test_x, std::span<const int> test_y, int classes, const FinetuneHyper& hyper) {
    check_labels(train_x, train_y, classes, "finetune");
    check_labels(test_x, test_y, classes, "finetune");
    require_two_classes(train_y, "finetune");

    FinetuneResult res;
    res.encoder = hyper.layer == FeatureLayer::Backbone ? backbone(encoder) : encoder;
    LinearHead head = zero_head(res.encoder.output_dim(), classes);
    for (int step = 0; step < hyper.steps; ++step) {
        auto fwd = forward(res.encoder, train_x, true);
        Matrix d_logits;
        softmax_xent(head.logits(fwd.embeddings), train_y, d_logits);

        Matrix d_feat = matmul_bt(d_logits, head.weight);
        LinearHead g;
        g.weight = matmul_at(fwd.embeddings, d_logits);
        g.bias.assign(head.bias.size(), 0.0);
        for (std::size_t i = 0; i < d_logits.rows(); ++i)
            for (std::size_t j = 0; j < d_logits.cols(); ++j) g.bias[j] += d_logits(i, j);
        for (std::size_t i = 0; i < g.weight.size(); ++i) {
            double& w = head.weight.data()[i];
            w -= hyper.lr_head * (g.weight.data()[i] + hyper.l2 * w);
        }
        for (std::size_t j = 0; j < head.bias.size(); ++j) head.bias[j] -= hyper.lr_head * g.bias[j];
        if (hyper.lr_encoder > 0.0)
            sgd_step_inplace(res.encoder, backward(res.encoder, fwd.tape, d_feat), hyper.lr_encoder, 0.0);
    }
    res.probe.head = std::move(head);
    res.probe.steps_run = hyper.steps;
    res.probe.test_logits = res.probe.head.logits(embed(res.encoder, test_x));
    res.probe.accuracy = accuracy_from_logits(res.probe.test_logits, test_y, &res.probe.per_class_accuracy, classes);
    return res;
}

}  // namespace coclr
