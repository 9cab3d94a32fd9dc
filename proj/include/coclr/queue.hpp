#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coclr/numerics.hpp"

namespace coclr {

/// Fixed-capacity FIFO of unit-norm key features (a MoCo-style history queue).
///
/// Storage is a ring buffer. Similarities are reported against valid entries
/// in *storage* order; fifo_ids() gives the oldest-to-newest view. Sample ids
/// ride along for diagnostics only and are never read by training.
///
/// A sample re-encountered while its stale entry is still queued keeps that
/// entry among its negatives; no id-based exclusion is applied.
class FeatureQueue {
public:
    FeatureQueue() = default;
    FeatureQueue(std::size_t capacity, std::size_t dim);

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t fill() const noexcept { return fill_; }
    std::size_t cursor() const noexcept { return cursor_; }
    bool empty() const noexcept { return fill_ == 0; }

    /// Appends a batch; on overflow exactly the oldest rows are overwritten.
    void push_batch(const Matrix& keys, std::span<const std::int64_t> ids);

    /// Valid rows in storage order (fill x dim).
    Matrix snapshot() const;
    /// Ids of valid rows in storage order, aligned with snapshot().
    std::vector<std::int64_t> ids() const;
    /// Ids oldest to newest.
    std::vector<std::int64_t> fifo_ids() const;
    /// Rows oldest to newest.
    Matrix fifo_entries() const;

    friend bool operator==(const FeatureQueue&, const FeatureQueue&) = default;

private:
    std::size_t capacity_ = 0;
    std::size_t dim_ = 0;
    Matrix storage_;
    std::vector<std::int64_t> ids_;
    std::size_t cursor_ = 0;
    std::size_t fill_ = 0;
};

FeatureQueue push_batch(FeatureQueue q, const Matrix& keys, std::span<const std::int64_t> ids);

/// N x fill dot products of z against the valid entries, storage order.
/// Throws std::logic_error on an empty queue and std::invalid_argument on a
/// dimension mismatch.
Matrix similarity_to_queue(const Matrix& z, const FeatureQueue& q);

/// Snapshot dump in the checkpoint container (entries oldest first, then ids).
std::vector<std::uint8_t> encode_queue(const FeatureQueue& q);
FeatureQueue decode_queue(std::span<const std::uint8_t> bytes);
void save_queue(const FeatureQueue& q, const std::string& path);
FeatureQueue load_queue(const std::string& path);

}  // namespace coclr
