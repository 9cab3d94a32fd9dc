#include <doctest.h>

#include <cmath>
#include <set>

#include "coclr/numerics.hpp"
#include "test_util.hpp"

using namespace coclr;
using testutil::max_abs_diff;
using testutil::random_matrix;

TEST_CASE("matmul small cases") {
    const Matrix a{{1, 2}, {3, 4}};
    CHECK(matmul(Matrix::identity(2), a) == a);
    CHECK(matmul(a, Matrix::identity(2)) == a);
    CHECK(matmul(a, Matrix{{0}, {1}}) == Matrix{{2}, {4}});
    CHECK_THROWS_AS(matmul(a, Matrix(3, 1)), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(7, 5, rng), b = random_matrix(5, 3, rng);
        const Matrix c = matmul(a, b);
        Matrix ref(7, 3);
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                long double s = 0;
                for (std::size_t k = 0; k < 5; ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
                ref(i, j) = static_cast<double>(s);
            }
        CHECK(max_abs_diff(c, ref) < 1e-12);
        CHECK(max_abs_diff(matmul_bt(a, transpose(b)), c) < 1e-12);
        CHECK(max_abs_diff(matmul_at(transpose(a), b), c) < 1e-12);
    }
}

TEST_CASE("l2_normalize_rows") {
    CHECK(max_abs_diff(l2_normalize_rows(Matrix{{3, 4}}), Matrix{{0.6, 0.8}}) < 1e-15);
    CHECK(l2_normalize_rows(Matrix{{0, 0}}) == Matrix{{0, 0}});
    Rng rng(1);
    const Matrix x = random_matrix(4, 6, rng);
    const Matrix n = l2_normalize_rows(x);
    for (double r : row_norms(n)) CHECK(std::abs(r - 1.0) < 1e-12);
    CHECK(max_abs_diff(l2_normalize_rows(n), n) < 1e-12);
}

TEST_CASE("softmax_rows") {
    CHECK(max_abs_diff(softmax_rows(Matrix{{0, 0}}), Matrix{{0.5, 0.5}}) < 1e-15);
    CHECK(max_abs_diff(softmax_rows(Matrix{{1000, 1000, 1000}}), Matrix{{1.0 / 3, 1.0 / 3, 1.0 / 3}}) < 1e-15);
    CHECK_THROWS_AS(softmax_rows(Matrix{{0, std::nan("")}}), std::domain_error);
    CHECK_THROWS_AS(softmax_rows(Matrix{{0, INFINITY}}), std::domain_error);

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = random_matrix(3, 5, rng, 4.0);
        const Matrix p = softmax_rows(x);
        for (std::size_t i = 0; i < 3; ++i) {
            long double s = 0;
            for (std::size_t j = 0; j < 5; ++j) s += std::exp(static_cast<long double>(x(i, j)));
            double total = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(std::abs(p(i, j) - static_cast<double>(std::exp(static_cast<long double>(x(i, j))) / s)) < 1e-12);
                total += p(i, j);
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
        Matrix shifted = x;
        for (double& v : shifted.data()) v += 37.5;
        CHECK(max_abs_diff(softmax_rows(shifted), p) < 1e-12);
    }
}

TEST_CASE("finite_difference_grad") {
    Rng rng(2);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix g1 = finite_difference_grad([](const Matrix& m) {
        double s = 0;
        for (double v : m.data()) s += v;
        return s;
    }, x, 1e-5);
    CHECK(max_abs_diff(g1, Matrix(3, 4, 1.0)) < 1e-9);
    const Matrix g2 = finite_difference_grad([](const Matrix& m) {
        double s = 0;
        for (double v : m.data()) s += 0.5 * v * v;
        return s;
    }, x, 1e-5);
    CHECK(max_abs_diff(g2, x) < 1e-8);

    try {
        finite_difference_grad([](const Matrix& m) { return m(1, 2) > 0.5 ? INFINITY : 0.0; }, Matrix(2, 3, 0.5), 0.1);
        FAIL("expected a throw");
    } catch (const std::domain_error& e) {
        CHECK(std::string(e.what()).find("(1, 2)") != std::string::npos);
    }
}

TEST_CASE("Rng streams") {
    Rng a(42), b(42);
    bool same = true;
    for (int i = 0; i < 1'000'000; ++i) same = same && a.next_u64() == b.next_u64();
    CHECK(same);

    Rng r(5);
    double mean = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        mean += u;
    }
    CHECK(std::abs(mean / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));

    // fork: deterministic, distinct per stream id, independent of the parent's position.
    Rng p(9);
    const auto f1 = p.fork(1).next_u64();
    p.next_u64();
    CHECK(p.fork(1).next_u64() == f1);
    CHECK(p.fork(2).next_u64() != f1);

    std::vector<std::size_t> v(50);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    Rng s(11);
    s.shuffle(v);
    CHECK(std::set<std::size_t>(v.begin(), v.end()).size() == 50);
    for (int i = 0; i < 1000; ++i) CHECK(s.below(7) < 7);
}

TEST_CASE("Matrix construction errors") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), std::invalid_argument);
    CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), std::invalid_argument);
}
