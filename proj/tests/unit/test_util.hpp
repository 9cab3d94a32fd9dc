#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "coclr/numerics.hpp"

namespace testutil {

inline coclr::Matrix random_matrix(std::size_t r, std::size_t c, coclr::Rng& rng, double scale = 1.0) {
    coclr::Matrix m(r, c);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

inline coclr::Matrix random_unit_rows(std::size_t r, std::size_t c, coclr::Rng& rng) {
    return coclr::l2_normalize_rows(random_matrix(r, c, rng));
}

inline double max_abs_diff(const coclr::Matrix& a, const coclr::Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), with a floor so two zero vectors compare equal.
template <class V>
double relative_error(const V& a, const V& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-10});
}

inline double relative_error(const coclr::Matrix& a, const coclr::Matrix& b) {
    return relative_error(a.data(), b.data());
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("coclr_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
