#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace coclr {

/// Dense row-major matrix of doubles.
///
/// The universal carrier for embeddings, parameters, gradients and logits.
/// Every public operation either leaves all entries finite or throws.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline constexpr double kNormEps = 1e-12;

Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b without materializing the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Rows divided by max(‖row‖₂, eps).
Matrix l2_normalize_rows(const Matrix& a, double eps = kNormEps);
std::vector<double> row_norms(const Matrix& a);

/// Row-wise softmax with max subtraction. Throws on non-finite input.
Matrix softmax_rows(const Matrix& logits);

/// Selects rows by index, in the given order.
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> idx);

double dot(std::span<const double> a, std::span<const double> b);
double frobenius_norm(const Matrix& a);

using ScalarFn = std::function<double(const Matrix&)>;

/// Central-difference gradient (f(x+h·e) − f(x−h·e)) / 2h, coordinate by
/// coordinate. Throws naming the coordinate if f goes non-finite.
Matrix finite_difference_grad(const ScalarFn& f, const Matrix& x, double h);

/// Seeded random stream.
///
/// Engine: std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniforms take the top 53 bits of one draw; normals use the
/// Box-Muller transform on two uniforms (no cached second value), so the
/// stream does not depend on any library distribution implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::size_t below(std::size_t n);
    void shuffle(std::vector<std::size_t>& v);

    /// Independent child stream derived from (seed, stream id) by SplitMix64.
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a over the raw bytes of a double sequence; used for exact
/// equality checks on parameters and metrics.
std::uint64_t hash_doubles(std::span<const double> v, std::uint64_t h = 1469598103934665603ULL) noexcept;

std::string shape_string(const Matrix& m);

}  // namespace coclr
