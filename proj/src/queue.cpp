#include "coclr/queue.hpp"

#include <algorithm>
#include <stdexcept>

#include "coclr/binio.hpp"

namespace coclr {

FeatureQueue::FeatureQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity, dim), ids_(capacity, -1) {
    if (capacity == 0 || dim == 0) throw std::invalid_argument("FeatureQueue: capacity and dim must be positive");
}

void FeatureQueue::push_batch(const Matrix& keys, std::span<const std::int64_t> ids) {
    if (keys.rows() == 0) return;
    if (keys.cols() != dim_)
        throw std::invalid_argument("push_batch: key dim " + std::to_string(keys.cols()) + " != queue dim " +
                                    std::to_string(dim_));
    if (keys.rows() > capacity_)
        throw std::invalid_argument("push_batch: batch of " + std::to_string(keys.rows()) + " exceeds capacity " +
                                    std::to_string(capacity_));
    if (ids.size() != keys.rows()) throw std::invalid_argument("push_batch: ids length does not match batch");
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        std::copy(keys.row(i).begin(), keys.row(i).end(), storage_.row(cursor_).begin());
        ids_[cursor_] = ids[i];
        cursor_ = (cursor_ + 1) % capacity_;
    }
    fill_ = std::min(capacity_, fill_ + keys.rows());
}

Matrix FeatureQueue::snapshot() const {
    Matrix out(fill_, dim_);
    std::copy_n(storage_.data().begin(), fill_ * dim_, out.data().begin());
    return out;
}

std::vector<std::int64_t> FeatureQueue::ids() const { return {ids_.begin(), ids_.begin() + fill_}; }

namespace {

// Storage slot of the i-th oldest entry.
std::size_t fifo_slot(std::size_t i, std::size_t cursor, std::size_t fill, std::size_t capacity) {
    const std::size_t oldest = fill < capacity ? 0 : cursor;
    return (oldest + i) % capacity;
}

}  // namespace

std::vector<std::int64_t> FeatureQueue::fifo_ids() const {
    std::vector<std::int64_t> out(fill_);
    for (std::size_t i = 0; i < fill_; ++i) out[i] = ids_[fifo_slot(i, cursor_, fill_, capacity_)];
    return out;
}

Matrix FeatureQueue::fifo_entries() const {
    Matrix out(fill_, dim_);
    for (std::size_t i = 0; i < fill_; ++i) {
        auto src = storage_.row(fifo_slot(i, cursor_, fill_, capacity_));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

FeatureQueue push_batch(FeatureQueue q, const Matrix& keys, std::span<const std::int64_t> ids) {
    q.push_batch(keys, ids);
    return q;
}

Matrix similarity_to_queue(const Matrix& z, const FeatureQueue& q) {
    if (q.empty()) throw std::logic_error("similarity_to_queue: queue is empty");
    if (z.cols() != q.dim())
        throw std::invalid_argument("similarity_to_queue: feature dim " + std::to_string(z.cols()) +
                                    " != queue dim " + std::to_string(q.dim()));
    return matmul_bt(z, q.snapshot());
}

std::vector<std::uint8_t> encode_queue(const FeatureQueue& q) {
    binio::Container c;
    c.kind = binio::Kind::QueueSnapshot;
    c.aux = static_cast<std::uint32_t>(q.capacity());
    const auto ids = q.fifo_ids();
    Matrix idm(1, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) idm(0, i) = static_cast<double>(ids[i]);
    Matrix entries = q.fifo_entries();
    if (entries.rows() == 0) entries = Matrix(0, q.dim());
    c.records.push_back({1, std::move(entries)});
    c.records.push_back({2, std::move(idm)});
    return binio::encode(c);
}

FeatureQueue decode_queue(std::span<const std::uint8_t> bytes) {
    const auto c = binio::decode(bytes);
    if (c.kind != binio::Kind::QueueSnapshot || c.records.size() != 2)
        throw std::runtime_error("decode_queue: container is not a queue snapshot");
    const auto& entries = c.records[0].value;
    const auto& idm = c.records[1].value;
    FeatureQueue q(c.aux, entries.cols());
    std::vector<std::int64_t> ids(idm.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(idm.data()[i]);
    q.push_batch(entries, ids);
    return q;
}

void save_queue(const FeatureQueue& q, const std::string& path) { binio::write_file(path, encode_queue(q)); }

FeatureQueue load_queue(const std::string& path) { return decode_queue(binio::read_file(path)); }

}  // namespace coclr
