#include <doctest.h>

#include <cmath>

#include "coclr/encoder.hpp"
#include "test_util.hpp"

using namespace coclr;
using testutil::max_abs_diff;
using testutil::random_matrix;
using testutil::relative_error;

namespace {

// Independent forward: explicit loops, no library matmul.
Matrix oracle_forward(const MlpParams& p, const Matrix& x) {
    Matrix h = x;
    for (const auto& l : p.layers) {
        Matrix out(h.rows(), l.weight.cols());
        for (std::size_t i = 0; i < h.rows(); ++i)
            for (std::size_t j = 0; j < l.weight.cols(); ++j) {
                double s = l.bias[j];
                for (std::size_t k = 0; k < h.cols(); ++k) s += h(i, k) * l.weight(k, j);
                out(i, j) = l.act == Activation::Relu ? std::max(0.0, s) : s;
            }
        h = std::move(out);
    }
    for (std::size_t i = 0; i < h.rows(); ++i) {
        double n = 0;
        for (double v : h.row(i)) n += v * v;
        n = std::max(std::sqrt(n), kNormEps);
        for (double& v : h.row(i)) v /= n;
    }
    return h;
}

// Loss Σ c_ij z_ij over the embeddings, as a function of the flat parameters.
double linear_loss(const MlpParams& p, const Matrix& x, const Matrix& c) {
    const Matrix z = embed(p, x);
    double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += c.data()[i] * z.data()[i];
    return s;
}

// Away from ReLU kinks and from the zero-output branch of the normalization,
// where central differences straddle a non-smooth point.
bool smooth_at(const MlpParams& p, const Matrix& x) {
    const auto f = forward(p, x, true);
    for (double n : f.tape->norms)
        if (n < 0.1) return false;
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        if (p.layers[l].act == Activation::Relu)
            for (double v : f.tape->preacts[l].data())
                if (std::abs(v) < 1e-3) return false;
    return true;
}

}  // namespace

TEST_CASE("init_params shapes and determinism") {
    const std::vector<std::size_t> dims{4, 8, 3};
    Rng a(0), b(0);
    const MlpParams p = init_params(dims, a), q = init_params(dims, b);
    CHECK(p == q);
    REQUIRE(p.layers.size() == 2);
    CHECK(p.layers[0].weight.rows() == 4);
    CHECK(p.layers[0].weight.cols() == 8);
    CHECK(p.layers[1].weight.rows() == 8);
    CHECK(p.layers[1].weight.cols() == 3);
    CHECK(p.layers[0].bias.size() == 8);
    CHECK(p.layers[1].bias.size() == 3);
    CHECK(p.layers[0].act == Activation::Relu);
    CHECK(p.layers[1].act == Activation::None);
    CHECK(p.parameter_count() == 4 * 8 + 8 + 8 * 3 + 3);
    const double s = std::sqrt(6.0 / 12.0);
    for (double w : p.layers[0].weight.data()) CHECK(std::abs(w) <= s);

    Rng c(0);
    CHECK_THROWS(init_params(std::vector<std::size_t>{4}, c));
    CHECK_THROWS(init_params(std::vector<std::size_t>{4, 0, 3}, c));
}

TEST_CASE("init weight mean is consistent with the uniform law") {
    const std::vector<std::size_t> dims{400, 250};
    Rng rng(17);
    const MlpParams p = init_params(dims, rng);
    const auto& w = p.layers[0].weight.data();
    double mean = 0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    const double s = std::sqrt(6.0 / 650.0);
    const double sigma = s / std::sqrt(3.0);
    CHECK(w.size() == 100000);
    CHECK(std::abs(mean) < 3 * sigma / std::sqrt(static_cast<double>(w.size())));
}

TEST_CASE("init_encoder splits backbone and head") {
    EncoderDims d;
    d.input = 12;
    Rng rng(1);
    const MlpParams p = init_encoder(d, rng);
    CHECK(p.layers.size() == 4);
    CHECK(p.head_start == 2);
    CHECK(p.output_dim() == 16);
    CHECK(backbone(p).layers.size() == 2);
    CHECK(backbone(p).output_dim() == 64);
    CHECK(p.layers[1].act == Activation::Relu);
    CHECK(p.layers[3].act == Activation::None);
}

TEST_CASE("forward degenerate and identity networks") {
    Rng rng(2);
    const Matrix x = random_matrix(5, 4, rng);
    MlpParams zero = init_params(std::vector<std::size_t>{4, 6, 3}, rng);
    for (auto& l : zero.layers) {
        std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    auto f = forward(zero, x, true);
    CHECK(f.tape->output == Matrix(5, 3));
    CHECK(f.embeddings == Matrix(5, 3));

    MlpParams ident;
    ident.layers.push_back({Matrix::identity(4), std::vector<double>(4, 0.0), Activation::None});
    ident.head_start = 1;
    CHECK(max_abs_diff(embed(ident, x), l2_normalize_rows(x)) < 1e-15);
    CHECK_THROWS_AS(embed(ident, Matrix(2, 5)), std::invalid_argument);
}

TEST_CASE("forward matches layer-by-layer oracle and gives unit rows") {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        EncoderDims d;
        d.input = 6;
        d.backbone = {9, 7};
        d.head = {5, 4};
        const MlpParams p = init_encoder(d, rng);
        const Matrix x = random_matrix(8, 6, rng);
        const Matrix z = embed(p, x);
        CHECK(max_abs_diff(z, oracle_forward(p, x)) < 1e-12);
        // Rows whose ReLUs all died stay at zero.
        for (double n : row_norms(z)) CHECK((std::abs(n - 1.0) < 1e-10 || n == 0.0));
    }
}

TEST_CASE("backward trivial cases") {
    Rng rng(5);
    const MlpParams p = init_params(std::vector<std::size_t>{3, 5, 2}, rng);
    const Matrix x = random_matrix(4, 3, rng);
    auto f = forward(p, x, true);
    const Grads g = backward(p, f.tape, Matrix(4, 2));
    for (const auto& l : g.layers) {
        for (double v : l.weight.data()) CHECK(v == 0.0);
        for (double v : l.bias) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(backward(p, forward(p, x).tape, Matrix(4, 2)), std::invalid_argument);
    CHECK_THROWS_AS(backward(p, f.tape, Matrix(3, 2)), std::invalid_argument);

    // Single linear layer, loss = sum of the raw output: dW = xᵀ·1, db = N·1.
    MlpParams lin = init_params(std::vector<std::size_t>{3, 2}, rng);
    auto fl = forward(lin, x, true);
    const Grads gl = backward_output(lin, fl.tape, Matrix(4, 2, 1.0));
    CHECK(max_abs_diff(gl.layers[0].weight, matmul_at(x, Matrix(4, 2, 1.0))) < 1e-15);
    CHECK(gl.layers[0].bias == std::vector<double>{4.0, 4.0});
}

TEST_CASE("backward matches finite differences on every parameter") {
    Rng rng(6);
    for (int trial = 0; trial < 25; ++trial) {
        EncoderDims d;
        d.input = 3 + rng.below(4);
        d.backbone = {4 + rng.below(4)};
        d.head = {3 + rng.below(3), 2 + rng.below(3)};
        const MlpParams p = init_encoder(d, rng);
        Matrix x = random_matrix(2 + rng.below(4), d.input, rng);
        while (!smooth_at(p, x)) x = random_matrix(x.rows(), d.input, rng);
        const Matrix c = random_matrix(x.rows(), p.output_dim(), rng);
        auto f = forward(p, x, true);
        Matrix d_input;
        const auto analytic = flatten(backward(p, f.tape, c, &d_input));

        const auto flat = flatten(p);
        const Matrix theta(1, flat.size(), flat);
        const Matrix numeric = finite_difference_grad([&](const Matrix& t) {
            MlpParams q = p;
            unflatten_into(q, t.data());
            return linear_loss(q, x, c);
        }, theta, 1e-5);
        CHECK(relative_error(analytic, numeric.data()) < 1e-4);

        const Matrix num_x = finite_difference_grad([&](const Matrix& xx) { return linear_loss(p, xx, c); }, x, 1e-5);
        // Saturated nets can have an input gradient that is zero up to rounding.
        CHECK((relative_error(d_input, num_x) < 1e-4 || max_abs_diff(d_input, num_x) < 1e-9));
    }
}

TEST_CASE("momentum update") {
    Rng rng(7);
    const MlpParams q = init_params(std::vector<std::size_t>{3, 4, 2}, rng);
    const MlpParams k0 = init_params(std::vector<std::size_t>{3, 4, 2}, rng);

    EncoderPair fixed{q, k0, 1.0};
    CHECK(momentum_update(fixed).key == k0);
    EncoderPair copy{q, k0, 0.0};
    CHECK(momentum_update(copy).key == q);

    MlpParams one;
    one.layers.push_back({Matrix{{1.0}}, {1.0}, Activation::None});
    MlpParams zero;
    zero.layers.push_back({Matrix{{0.0}}, {0.0}, Activation::None});
    EncoderPair sub{zero, one, 0.999};
    CHECK(momentum_update(sub).key.layers[0].weight(0, 0) == doctest::Approx(0.999).epsilon(1e-15));

    // Contraction: ‖key_t − query‖ = m^t ‖key_0 − query‖.
    auto dist = [&](const MlpParams& a) {
        const auto fa = flatten(a), fq = flatten(q);
        double s = 0;
        for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fq[i]) * (fa[i] - fq[i]);
        return std::sqrt(s);
    };
    EncoderPair pair{q, k0, 0.9};
    const double d0 = dist(k0);
    for (int t = 1; t <= 50; ++t) {
        momentum_update_inplace(pair);
        CHECK(std::abs(dist(pair.key) - std::pow(0.9, t) * d0) < 1e-10);
    }
    CHECK(pair.query == q);

    EncoderPair init = EncoderPair::from_query(q, 0.999);
    CHECK(init.key == init.query);

    EncoderPair bad{q, init_params(std::vector<std::size_t>{3, 5, 2}, rng), 0.5};
    CHECK_THROWS_AS(momentum_update(bad), std::invalid_argument);
}

TEST_CASE("sgd step") {
    Rng rng(8);
    const MlpParams p = init_params(std::vector<std::size_t>{3, 2}, rng);
    CHECK(sgd_step(p, Grads::zeros_like(p), 0.1, 0.0) == p);

    MlpParams one;
    one.layers.push_back({Matrix{{1.0}}, {1.0}, Activation::None});
    Grads g = Grads::zeros_like(one);
    g.layers[0].weight(0, 0) = 1.0;
    CHECK(sgd_step(one, g, 0.1, 0.0).layers[0].weight(0, 0) == doctest::Approx(0.9).epsilon(1e-15));

    // Quadratic bowl f = ½‖p‖²: gradient = p, so p_t = 0.9^t p_0.
    MlpParams bowl = init_params(std::vector<std::size_t>{4, 3}, rng);
    for (double& b : bowl.layers[0].bias) b = rng.normal();
    double norm0 = 0;
    for (double v : flatten(bowl)) norm0 += v * v;
    norm0 = std::sqrt(norm0);
    for (int t = 0; t < 100; ++t) {
        Grads gb = Grads::zeros_like(bowl);
        for (std::size_t l = 0; l < bowl.layers.size(); ++l) {
            gb.layers[l].weight = bowl.layers[l].weight;
            gb.layers[l].bias = bowl.layers[l].bias;
        }
        sgd_step_inplace(bowl, gb, 0.1, 0.0);
    }
    double norm = 0;
    for (double v : flatten(bowl)) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - std::pow(0.9, 100) * norm0) < 1e-10);

    CHECK_THROWS_AS(sgd_step(p, Grads::zeros_like(init_params(std::vector<std::size_t>{3, 3}, rng)), 0.1, 0.0),
                    std::invalid_argument);
}

TEST_CASE("adam step") {
    MlpParams one;
    one.layers.push_back({Matrix{{1.0}}, {0.0}, Activation::None});
    Grads g = Grads::zeros_like(one);
    g.layers[0].weight(0, 0) = 0.5;
    AdamState st;
    adam_step_inplace(one, g, st, 0.01, 0.0);
    // First bias-corrected step moves every coordinate with a gradient by lr·sign(g).
    CHECK(one.layers[0].weight(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
    CHECK(one.layers[0].bias[0] == 0.0);
    CHECK(st.t == 1);
    CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
    CHECK(to_string(OptimizerKind::Sgd) == "sgd");
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
    Rng rng(9);
    EncoderDims d;
    d.input = 5;
    const MlpParams p = init_encoder(d, rng);
    const auto bytes = encode_params(p);
    CHECK(decode_params(bytes) == p);
    const auto dir = testutil::scratch_dir("ckpt");
    save_params(p, (dir / "p.ckpt").string());
    const MlpParams back = load_params((dir / "p.ckpt").string());
    CHECK(back == p);
    CHECK(params_hash(back) == params_hash(p));

    auto corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS(decode_params(corrupt));
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS(decode_params(truncated));
}
