#include "coclr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "coclr/binio.hpp"

namespace coclr {

std::size_t MlpParams::input_dim() const {
    if (layers.empty()) throw std::logic_error("MlpParams: no layers");
    return layers.front().weight.rows();
}

std::size_t MlpParams::output_dim() const {
    if (layers.empty()) throw std::logic_error("MlpParams: no layers");
    return layers.back().weight.cols();
}

std::size_t MlpParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

void MlpParams::validate() const {
    if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
    if (head_start > layers.size()) throw std::invalid_argument("MlpParams: head_start beyond layer count");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].weight.cols())
            throw std::invalid_argument("MlpParams: layer " + std::to_string(l) + " bias length mismatch");
        if (l > 0 && layers[l].weight.rows() != layers[l - 1].weight.cols())
            throw std::invalid_argument("MlpParams: layer " + std::to_string(l) + " does not chain");
    }
}

Grads Grads::zeros_like(const MlpParams& p) {
    Grads g;
    for (const auto& l : p.layers)
        g.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
    return g;
}

void Grads::add(const Grads& other) {
    if (other.layers.size() != layers.size()) throw std::invalid_argument("Grads::add: shape mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& a = layers[l];
        const auto& b = other.layers[l];
        if (a.weight.size() != b.weight.size() || a.bias.size() != b.bias.size())
            throw std::invalid_argument("Grads::add: shape mismatch");
        for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight.data()[i] += b.weight.data()[i];
        for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
    }
}

MlpParams init_params(std::span<const std::size_t> dims, Rng& rng, std::size_t head_start, InitRule) {
    if (dims.size() < 2) throw std::invalid_argument("init_params: need at least two layer dims");
    if (std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; }))
        throw std::invalid_argument("init_params: layer dims must be positive");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l];
        const std::size_t fan_out = dims[l + 1];
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Layer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0),
                    l + 2 < dims.size() ? Activation::Relu : Activation::None};
        for (double& w : layer.weight.data()) w = rng.uniform(-s, s);
        p.layers.push_back(std::move(layer));
    }
    if (head_start > p.layers.size()) throw std::invalid_argument("init_params: head_start beyond layer count");
    p.head_start = head_start;
    return p;
}

MlpParams init_params(std::span<const std::size_t> dims, Rng& rng, InitRule rule) {
    return init_params(dims, rng, dims.size() < 2 ? 0 : dims.size() - 2, rule);
}

MlpParams init_encoder(const EncoderDims& dims, Rng& rng) {
    if (dims.head.empty()) throw std::invalid_argument("init_encoder: projection head needs at least one layer");
    std::vector<std::size_t> all{dims.input};
    all.insert(all.end(), dims.backbone.begin(), dims.backbone.end());
    all.insert(all.end(), dims.head.begin(), dims.head.end());
    return init_params(all, rng, dims.backbone.size());
}

ForwardResult forward(const MlpParams& params, const Matrix& x, bool record) {
    params.validate();
    if (x.cols() != params.input_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                                    std::to_string(params.input_dim()));
    ForwardResult res;
    Tape tape;
    Matrix h = x;
    for (const auto& layer : params.layers) {
        Matrix z = matmul(h, layer.weight);
        for (std::size_t i = 0; i < z.rows(); ++i) {
            auto r = z.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
        }
        Matrix a = z;
        if (layer.act == Activation::Relu)
            for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
        if (record) {
            tape.inputs.push_back(std::move(h));
            tape.preacts.push_back(std::move(z));
        }
        h = std::move(a);
    }
    res.embeddings = l2_normalize_rows(h, kNormEps);
    if (record) {
        tape.norms = row_norms(h);
        tape.output = std::move(h);
        res.tape = std::move(tape);
    }
    return res;
}

Matrix embed(const MlpParams& params, const Matrix& x) { return forward(params, x, false).embeddings; }

Grads backward_output(const MlpParams& params, const std::optional<Tape>& tape, Matrix dh, Matrix* d_input) {
    if (!tape) throw std::invalid_argument("backward: forward was run without recording a tape");
    const Tape& t = *tape;
    if (t.inputs.size() != params.layers.size()) throw std::invalid_argument("backward: tape does not match network");
    if (dh.rows() != t.output.rows() || dh.cols() != t.output.cols())
        throw std::invalid_argument("backward: gradient shape " + shape_string(dh) + " does not match output " +
                                    shape_string(t.output));
    Grads g = Grads::zeros_like(params);
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        if (layer.act == Activation::Relu) {
            const auto& z = t.preacts[l];
            for (std::size_t i = 0; i < dh.size(); ++i)
                if (!(z.data()[i] > 0.0)) dh.data()[i] = 0.0;
        }
        g.layers[l].weight = matmul_at(t.inputs[l], dh);
        auto& db = g.layers[l].bias;
        for (std::size_t i = 0; i < dh.rows(); ++i) {
            auto r = dh.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
        }
        if (l > 0 || d_input) dh = matmul_bt(dh, layer.weight);
    }
    if (d_input) *d_input = std::move(dh);
    return g;
}

Grads backward(const MlpParams& params, const std::optional<Tape>& tape, const Matrix& d_emb) {
    return backward(params, tape, d_emb, nullptr);
}

Grads backward(const MlpParams& params, const std::optional<Tape>& tape, const Matrix& d_emb, Matrix* d_input) {
    if (!tape) throw std::invalid_argument("backward: forward was run without recording a tape");
    const Tape& t = *tape;
    if (t.inputs.size() != params.layers.size()) throw std::invalid_argument("backward: tape does not match network");
    if (d_emb.rows() != t.output.rows() || d_emb.cols() != t.output.cols())
        throw std::invalid_argument("backward: gradient shape " + shape_string(d_emb) + " does not match embeddings " +
                                    shape_string(t.output));

    // Row normalization z = y / max(|y|, eps):
    //   |y| >= eps: dy = (dz − z (z·dz)) / |y|
    //   |y| <  eps: dy = dz / eps
    Matrix dh(d_emb.rows(), d_emb.cols());
    for (std::size_t i = 0; i < d_emb.rows(); ++i) {
        const double n = t.norms[i];
        auto dz = d_emb.row(i);
        auto out = dh.row(i);
        if (n >= t.eps) {
            auto y = t.output.row(i);
            const double zdz = dot(y, dz) / n;
            for (std::size_t j = 0; j < dz.size(); ++j) out[j] = (dz[j] - (y[j] / n) * zdz) / n;
        } else {
            for (std::size_t j = 0; j < dz.size(); ++j) out[j] = dz[j] / t.eps;
        }
    }

    return backward_output(params, tape, std::move(dh), d_input);
}

MlpParams truncate(const MlpParams& params, std::size_t n_layers) {
    if (n_layers == 0 || n_layers > params.layers.size())
        throw std::invalid_argument("truncate: layer count out of range");
    MlpParams out;
    out.layers.assign(params.layers.begin(), params.layers.begin() + static_cast<std::ptrdiff_t>(n_layers));
    out.head_start = std::min(params.head_start, n_layers);
    return out;
}

MlpParams backbone(const MlpParams& params) { return truncate(params, params.head_start); }

EncoderPair EncoderPair::from_query(MlpParams query, double momentum) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("EncoderPair: momentum must lie in [0, 1]");
    EncoderPair p;
    p.key = query;
    p.query = std::move(query);
    p.momentum = momentum;
    return p;
}

namespace {

void require_congruent(const MlpParams& a, const MlpParams& b, const char* op) {
    bool ok = a.layers.size() == b.layers.size();
    for (std::size_t l = 0; ok && l < a.layers.size(); ++l)
        ok = a.layers[l].weight.rows() == b.layers[l].weight.rows() &&
             a.layers[l].weight.cols() == b.layers[l].weight.cols() &&
             a.layers[l].bias.size() == b.layers[l].bias.size();
    if (!ok) throw std::invalid_argument(std::string(op) + ": parameter shapes differ");
}

void require_congruent(const MlpParams& p, const Grads& g, const char* op) {
    bool ok = p.layers.size() == g.layers.size();
    for (std::size_t l = 0; ok && l < p.layers.size(); ++l)
        ok = p.layers[l].weight.rows() == g.layers[l].weight.rows() &&
             p.layers[l].weight.cols() == g.layers[l].weight.cols() &&
             p.layers[l].bias.size() == g.layers[l].bias.size();
    if (!ok) throw std::invalid_argument(std::string(op) + ": gradient shape does not match parameters");
}

}  // namespace

void momentum_update_inplace(EncoderPair& pair) {
    require_congruent(pair.key, pair.query, "momentum_update");
    const double m = pair.momentum;
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum_update: momentum must lie in [0, 1]");
    for (std::size_t l = 0; l < pair.key.layers.size(); ++l) {
        auto& k = pair.key.layers[l];
        const auto& q = pair.query.layers[l];
        for (std::size_t i = 0; i < k.weight.size(); ++i)
            k.weight.data()[i] = m * k.weight.data()[i] + (1.0 - m) * q.weight.data()[i];
        for (std::size_t i = 0; i < k.bias.size(); ++i) k.bias[i] = m * k.bias[i] + (1.0 - m) * q.bias[i];
    }
}

EncoderPair momentum_update(EncoderPair pair) {
    momentum_update_inplace(pair);
    return pair;
}

void sgd_step_inplace(MlpParams& params, const Grads& grads, double lr, double weight_decay) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd_step: weight_decay must be non-negative");
    require_congruent(params, grads, "sgd_step");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
            double& w = p.weight.data()[i];
            w -= lr * (g.weight.data()[i] + weight_decay * w);
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * (g.bias[i] + weight_decay * p.bias[i]);
    }
}

MlpParams sgd_step(MlpParams params, const Grads& grads, double lr, double weight_decay) {
    sgd_step_inplace(params, grads, lr, weight_decay);
    return params;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

AdamState AdamState::zeros_like(const MlpParams& p) { return {Grads::zeros_like(p), Grads::zeros_like(p), 0}; }

void adam_step_inplace(MlpParams& params, const Grads& grads, AdamState& state, double lr, double weight_decay,
                       double beta1, double beta2, double eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("adam_step: weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("adam_step: betas must lie in [0, 1)");
    require_congruent(params, grads, "adam_step");
    if (state.m.layers.empty()) state = AdamState::zeros_like(params);
    require_congruent(params, state.m, "adam_step");
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    auto update = [&](double& p, double g, double& m, double& v) {
        g += weight_decay * p;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        p -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        auto& m = state.m.layers[l];
        auto& v = state.v.layers[l];
        for (std::size_t i = 0; i < p.weight.size(); ++i)
            update(p.weight.data()[i], g.weight.data()[i], m.weight.data()[i], v.weight.data()[i]);
        for (std::size_t i = 0; i < p.bias.size(); ++i) update(p.bias[i], g.bias[i], m.bias[i], v.bias[i]);
    }
}

std::vector<double> flatten(const MlpParams& p) {
    std::vector<double> out;
    out.reserve(p.parameter_count());
    for (const auto& l : p.layers) {
        out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

std::vector<double> flatten(const Grads& g) {
    std::vector<double> out;
    for (const auto& l : g.layers) {
        out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

void unflatten_into(MlpParams& p, std::span<const double> flat) {
    if (flat.size() != p.parameter_count()) throw std::invalid_argument("unflatten_into: length mismatch");
    std::size_t k = 0;
    for (auto& l : p.layers) {
        for (double& w : l.weight.data()) w = flat[k++];
        for (double& b : l.bias) b = flat[k++];
    }
}

std::uint64_t params_hash(const MlpParams& p) {
    const auto flat = flatten(p);
    return hash_doubles(flat);
}

namespace {
constexpr std::uint32_t kBiasTag = 0xB1A5;
}

std::vector<std::uint8_t> encode_params(const MlpParams& p) {
    p.validate();
    binio::Container c;
    c.kind = binio::Kind::MlpParams;
    c.aux = static_cast<std::uint32_t>(p.head_start);
    for (const auto& l : p.layers) {
        c.records.push_back({static_cast<std::uint32_t>(l.act), l.weight});
        c.records.push_back({kBiasTag, Matrix(1, l.bias.size(), l.bias)});
    }
    return binio::encode(c);
}

MlpParams decode_params(std::span<const std::uint8_t> bytes) {
    const auto c = binio::decode(bytes);
    if (c.kind != binio::Kind::MlpParams) throw std::runtime_error("decode_params: container is not a checkpoint");
    if (c.records.size() % 2 != 0) throw std::runtime_error("decode_params: odd record count");
    MlpParams p;
    for (std::size_t i = 0; i < c.records.size(); i += 2) {
        const auto& w = c.records[i];
        const auto& b = c.records[i + 1];
        if (w.tag > 1 || b.tag != kBiasTag || b.value.rows() != 1)
            throw std::runtime_error("decode_params: malformed layer record " + std::to_string(i / 2));
        p.layers.push_back({w.value, b.value.data(), static_cast<Activation>(w.tag)});
    }
    p.head_start = c.aux;
    p.validate();
    return p;
}

void save_params(const MlpParams& p, const std::string& path) { binio::write_file(path, encode_params(p)); }

MlpParams load_params(const std::string& path) { return decode_params(binio::read_file(path)); }

}  // namespace coclr
