#include "coclr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coclr {

LogitsBlock build_logits(const Matrix& zq, const Matrix& zk, const Matrix& history, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("build_logits: tau must be positive");
    if (zq.rows() != zk.rows() || zq.cols() != zk.cols())
        throw std::invalid_argument("build_logits: queries " + shape_string(zq) + " and keys " + shape_string(zk) +
                                    " differ in shape");
    if (history.rows() > 0 && history.cols() != zq.cols())
        throw std::invalid_argument("build_logits: queue dim " + std::to_string(history.cols()) +
                                    " != embedding dim " + std::to_string(zq.cols()));
    const std::size_t n = zq.rows();
    const std::size_t fill = history.rows();
    LogitsBlock b;
    b.tau = tau;
    b.logits = Matrix(n, 1 + fill);
    for (std::size_t i = 0; i < n; ++i) {
        auto out = b.logits.row(i);
        out[0] = dot(zq.row(i), zk.row(i)) / tau;
        for (std::size_t j = 0; j < fill; ++j) out[1 + j] = dot(zq.row(i), history.row(j)) / tau;
    }
    if (!b.logits.all_finite()) throw std::domain_error("build_logits: non-finite logits");
    b.current_keys = zk;
    b.history_keys = fill > 0 ? history : Matrix(0, zq.cols());
    return b;
}

LogitsBlock build_logits(const Matrix& zq, const Matrix& zk, const FeatureQueue& q, double tau) {
    if (!q.empty() && q.dim() != zq.cols())
        throw std::invalid_argument("build_logits: queue dim " + std::to_string(q.dim()) + " != embedding dim " +
                                    std::to_string(zq.cols()));
    return build_logits(zq, zk, q.snapshot(), tau);
}

LossResult mil_nce(const LogitsBlock& block, const PositiveMask& mask) {
    const Matrix& logits = block.logits;
    if (mask.rows() != logits.rows() || mask.cols() != logits.cols())
        throw std::invalid_argument("mil_nce: mask shape (" + std::to_string(mask.rows()) + "x" +
                                    std::to_string(mask.cols()) + ") != logits shape " + shape_string(logits));
    const std::size_t n = logits.rows();
    const std::size_t cols = logits.cols();
    const std::size_t dim = block.current_keys.cols();
    LossResult res;
    res.d_logits = Matrix(n, cols);
    res.d_query = Matrix(n, dim);
    if (n == 0) return res;

    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<double> e(cols);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double s_all = 0.0;
        double s_pos = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            e[j] = std::exp(row[j] - mx);
            s_all += e[j];
            if (mask(i, j)) s_pos += e[j];
        }
        if (mask.row_count(i) == 0)
            throw std::invalid_argument("mil_nce: row " + std::to_string(i) + " has no positive");
        // s_pos underflowing to zero leaves the loss undefined.
        if (!(s_pos > 0.0)) throw std::domain_error("mil_nce: positive mass underflow in row " + std::to_string(i));
        total += std::max(0.0, std::log(s_all) - std::log(s_pos));

        auto dl = res.d_logits.row(i);
        for (std::size_t j = 0; j < cols; ++j)
            dl[j] = (e[j] / s_all - (mask(i, j) ? e[j] / s_pos : 0.0)) * inv_n;

        // dL/dzq_i = Σ_j dL/dl_ij · key_j / τ
        auto dq = res.d_query.row(i);
        auto k0 = block.current_keys.row(i);
        for (std::size_t c = 0; c < dim; ++c) dq[c] = dl[0] * k0[c];
        for (std::size_t j = 1; j < cols; ++j) {
            auto kj = block.history_keys.row(j - 1);
            for (std::size_t c = 0; c < dim; ++c) dq[c] += dl[j] * kj[c];
        }
        for (double& v : dq) v /= block.tau;
    }
    res.loss = total * inv_n;
    return res;
}

LossResult info_nce(const LogitsBlock& block) {
    return mil_nce(block, PositiveMask::self_only(block.logits.rows(), block.logits.cols()));
}

PositiveMask uber_nce_mask(std::span<const int> query_labels, std::span<const int> queue_labels) {
    PositiveMask m = PositiveMask::self_only(query_labels.size(), queue_labels.size() + 1);
    for (std::size_t i = 0; i < query_labels.size(); ++i)
        for (std::size_t j = 0; j < queue_labels.size(); ++j)
            if (queue_labels[j] == query_labels[i]) m.set(i, j + 1, true);
    return m;
}

PositiveMask uber_nce_mask(const LogitsBlock& block, std::span<const int> query_labels,
                           std::span<const int> queue_labels) {
    if (query_labels.size() != block.logits.rows())
        throw std::invalid_argument("uber_nce_mask: " + std::to_string(query_labels.size()) + " query labels for " +
                                    std::to_string(block.logits.rows()) + " logit rows");
    if (queue_labels.size() + 1 != block.logits.cols())
        throw std::invalid_argument("uber_nce_mask: " + std::to_string(queue_labels.size()) + " queue labels for " +
                                    std::to_string(block.logits.cols() - 1) + " queue columns");
    return uber_nce_mask(query_labels, queue_labels);
}

LossResult cmc_cross_view(const Matrix& z1, const Matrix& z2, const FeatureQueue& q_other, double tau) {
    return info_nce(build_logits(z1, z2, q_other, tau));
}

}  // namespace coclr
