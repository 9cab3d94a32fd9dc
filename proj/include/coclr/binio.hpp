#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coclr/numerics.hpp"

namespace coclr::binio {

// Little-endian container shared by checkpoints and queue snapshots:
//
//   "CCLR" | u32 version | u32 kind | u32 aux | u32 n_records
//   n_records x ( u32 tag | u32 rows | u32 cols | rows*cols f64 )

inline constexpr std::uint32_t kVersion = 1;

enum class Kind : std::uint32_t { MlpParams = 1, QueueSnapshot = 2 };

struct Record {
    std::uint32_t tag = 0;
    Matrix value;
};

struct Container {
    Kind kind = Kind::MlpParams;
    std::uint32_t aux = 0;
    std::vector<Record> records;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(std::span<const std::uint8_t> bytes);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace coclr::binio
