#include "coclr/mining.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace coclr {

PositiveMask::PositiveMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

PositiveMask PositiveMask::self_only(std::size_t rows, std::size_t cols) {
    if (cols == 0) throw std::invalid_argument("PositiveMask: need at least the self column");
    PositiveMask m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) m.set(r, 0, true);
    return m;
}

std::size_t PositiveMask::row_count(std::size_t r) const noexcept {
    std::size_t n = 0;
    for (std::size_t c = 0; c < cols_; ++c) n += bits_[r * cols_ + c];
    return n;
}

IndexLists topk_indices(const Matrix& sim, std::size_t k) {
    if (k < 1 || k > sim.cols())
        throw std::out_of_range("topk_indices: k=" + std::to_string(k) + " outside [1, " + std::to_string(sim.cols()) +
                                "]");
    IndexLists out(sim.rows());
    std::vector<std::size_t> order(sim.cols());
    for (std::size_t i = 0; i < sim.rows(); ++i) {
        auto row = sim.row(i);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

PositiveMask build_mask(const Matrix& cross_view_sim, std::size_t k) {
    PositiveMask mask = PositiveMask::self_only(cross_view_sim.rows(), cross_view_sim.cols() + 1);
    if (k == 0) return mask;
    const auto top = topk_indices(cross_view_sim, k);
    for (std::size_t i = 0; i < top.size(); ++i)
        for (std::size_t j : top[i]) mask.set(i, j + 1, true);
    return mask;
}

MaskQuality mask_quality(const PositiveMask& mask, std::span<const int> query_labels,
                         std::span<const int> queue_labels) {
    if (query_labels.size() != mask.rows())
        throw std::invalid_argument("mask_quality: " + std::to_string(query_labels.size()) +
                                    " query labels for " + std::to_string(mask.rows()) + " mask rows");
    if (queue_labels.size() + 1 != mask.cols())
        throw std::invalid_argument("mask_quality: " + std::to_string(queue_labels.size()) +
                                    " queue labels for " + std::to_string(mask.cols() - 1) + " queue columns");
    MaskQuality q;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        for (std::size_t c = 1; c < mask.cols(); ++c) {
            const bool same = queue_labels[c - 1] == query_labels[r];
            q.same_class_available += same;
            if (mask(r, c)) {
                ++q.mined;
                q.mined_same_class += same;
            }
        }
    }
    if (q.mined > 0) q.precision = static_cast<double>(q.mined_same_class) / static_cast<double>(q.mined);
    if (q.same_class_available > 0)
        q.recall = static_cast<double>(q.mined_same_class) / static_cast<double>(q.same_class_available);
    return q;
}

}  // namespace coclr
