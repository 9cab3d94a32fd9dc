#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "coclr/numerics.hpp"

namespace coclr {

/// Boolean N x (1 + fill) positive mask. Column 0 is the sample's own
/// augmentation; columns 1.. line up with queue entries in storage order.
class PositiveMask {
public:
    PositiveMask() = default;
    PositiveMask(std::size_t rows, std::size_t cols, bool fill = false);

    /// Column 0 true, everything else false: plain instance discrimination.
    static PositiveMask self_only(std::size_t rows, std::size_t cols);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool operator()(std::size_t r, std::size_t c) const noexcept { return bits_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) noexcept { bits_[r * cols_ + c] = v ? 1 : 0; }
    std::size_t row_count(std::size_t r) const noexcept;

    friend bool operator==(const PositiveMask&, const PositiveMask&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
};

using IndexLists = std::vector<std::vector<std::size_t>>;

/// Per row, the k largest entries in descending order; equal values are
/// ordered by lower column index first. Requires 1 <= k <= cols.
IndexLists topk_indices(const Matrix& sim, std::size_t k);

/// Mask with column 0 set and the topK queue columns of cross_view_sim set.
/// k == 0 yields the self-only mask.
PositiveMask build_mask(const Matrix& cross_view_sim, std::size_t k);

struct MaskQuality {
    double precision = 0.0;  // mined entries sharing the query class / mined entries
    double recall = 0.0;     // mined same-class entries / same-class entries available
    std::size_t mined = 0;
    std::size_t mined_same_class = 0;
    std::size_t same_class_available = 0;
};

/// Pooled over all rows; ratios with an empty denominator are reported as 0.
/// Queue columns only (column 0 is excluded).
MaskQuality mask_quality(const PositiveMask& mask, std::span<const int> query_labels,
                         std::span<const int> queue_labels);

}  // namespace coclr
