#include "coclr/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace coclr::binio {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * b);
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * b);
        return std::bit_cast<double>(v);
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("binio: truncated container");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'C', 'C', 'L', 'R'};

}  // namespace

std::vector<std::uint8_t> encode(const Container& c) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(c.kind));
    put_u32(out, c.aux);
    put_u32(out, static_cast<std::uint32_t>(c.records.size()));
    for (const auto& r : c.records) {
        put_u32(out, r.tag);
        put_u32(out, static_cast<std::uint32_t>(r.value.rows()));
        put_u32(out, static_cast<std::uint32_t>(r.value.cols()));
        for (double d : r.value.data()) put_f64(out, d);
    }
    return out;
}

Container decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("binio: bad magic");
    Reader rd(bytes.subspan(4));
    const auto version = rd.u32();
    if (version != kVersion) throw std::runtime_error("binio: unsupported version " + std::to_string(version));
    Container c;
    c.kind = static_cast<Kind>(rd.u32());
    c.aux = rd.u32();
    const auto n = rd.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        Record r;
        r.tag = rd.u32();
        const std::size_t rows = rd.u32();
        const std::size_t cols = rd.u32();
        std::vector<double> data(rows * cols);
        for (double& d : data) d = rd.f64();
        r.value = Matrix(rows, cols, std::move(data));
        c.records.push_back(std::move(r));
    }
    if (!rd.done()) throw std::runtime_error("binio: trailing bytes");
    return c;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace coclr::binio
