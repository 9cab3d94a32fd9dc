#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coclr/numerics.hpp"

namespace coclr {

enum class Activation : std::uint8_t { None = 0, Relu = 1 };

struct Layer {
    Matrix weight;  // fan_in x fan_out
    std::vector<double> bias;
    Activation act = Activation::None;

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// MLP backbone followed by a projection head. Layers [0, head_start) form
/// the backbone; the rest are the head that is dropped for evaluation.
struct MlpParams {
    std::vector<Layer> layers;
    std::size_t head_start = 0;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;
    /// Throws if consecutive layer dimensions do not chain.
    void validate() const;

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

struct LayerGrad {
    Matrix weight;
    std::vector<double> bias;
};

struct Grads {
    std::vector<LayerGrad> layers;

    static Grads zeros_like(const MlpParams& p);
    void add(const Grads& other);
};

enum class InitRule { FanBalancedUniform };

/// Layer-dimension description of an encoder: backbone widths then head widths.
struct EncoderDims {
    std::size_t input = 0;
    std::vector<std::size_t> backbone{64, 64};
    std::vector<std::size_t> head{32, 16};

    friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// Weights i.i.d. uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero bias.
/// Every layer but the last is ReLU. head_start defaults to the last layer
/// (a plain MLP with a single linear output layer).
MlpParams init_params(std::span<const std::size_t> layer_dims, Rng& rng,
                      InitRule rule = InitRule::FanBalancedUniform);
MlpParams init_params(std::span<const std::size_t> layer_dims, Rng& rng, std::size_t head_start,
                      InitRule rule = InitRule::FanBalancedUniform);
MlpParams init_encoder(const EncoderDims& dims, Rng& rng);

/// Everything backward needs from a forward pass.
struct Tape {
    std::vector<Matrix> inputs;       // input to layer l
    std::vector<Matrix> preacts;      // x·W + b of layer l
    Matrix output;                    // un-normalized network output
    std::vector<double> norms;        // row norms of output
    double eps = kNormEps;
};

struct ForwardResult {
    Matrix embeddings;  // L2-normalized rows
    std::optional<Tape> tape;
};

ForwardResult forward(const MlpParams& params, const Matrix& x, bool record = false);
/// Convenience: forward without a tape.
Matrix embed(const MlpParams& params, const Matrix& x);

/// Reverse-mode gradients of a scalar loss given dLoss/dEmbeddings, including
/// the Jacobian of the row normalization.
Grads backward(const MlpParams& params, const std::optional<Tape>& tape, const Matrix& d_embeddings);

/// As backward, and also returns dLoss/dInput when d_input is non-null.
Grads backward(const MlpParams& params, const std::optional<Tape>& tape, const Matrix& d_embeddings,
               Matrix* d_input);

/// Gradients given dLoss/dOutput of the un-normalized network output.
Grads backward_output(const MlpParams& params, const std::optional<Tape>& tape, Matrix d_output,
                      Matrix* d_input = nullptr);

/// First n layers as a standalone network (its output is still normalized
/// by forward). backbone(p) == truncate(p, p.head_start).
MlpParams truncate(const MlpParams& params, std::size_t n_layers);
MlpParams backbone(const MlpParams& params);

/// Query encoder plus its momentum-updated key twin.
struct EncoderPair {
    MlpParams query;
    MlpParams key;
    double momentum = 0.999;

    /// key := query, the initialization of the key encoder.
    static EncoderPair from_query(MlpParams query, double momentum);
};

/// key ← m·key + (1−m)·query for every parameter; query untouched.
EncoderPair momentum_update(EncoderPair pair);
void momentum_update_inplace(EncoderPair& pair);

/// p ← p − lr·(g + weight_decay·p).
MlpParams sgd_step(MlpParams params, const Grads& grads, double lr, double weight_decay);
void sgd_step_inplace(MlpParams& params, const Grads& grads, double lr, double weight_decay);

enum class OptimizerKind { Sgd, Adam };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

/// First and second moment estimates for Adam, shaped like the parameters.
struct AdamState {
    Grads m;
    Grads v;
    std::int64_t t = 0;

    static AdamState zeros_like(const MlpParams& p);
};

/// Adam with L2 weight decay folded into the gradient (g + weight_decay·p),
/// bias-corrected moments.
void adam_step_inplace(MlpParams& params, const Grads& grads, AdamState& state, double lr, double weight_decay,
                       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

std::uint64_t params_hash(const MlpParams& p);
/// Flattened view used by gradient checks: all weights then bias per layer.
std::vector<double> flatten(const MlpParams& p);
std::vector<double> flatten(const Grads& g);
void unflatten_into(MlpParams& p, std::span<const double> flat);

/// Checkpoint container, see docs/FORMATS.md.
void save_params(const MlpParams& p, const std::string& path);
MlpParams load_params(const std::string& path);
std::vector<std::uint8_t> encode_params(const MlpParams& p);
MlpParams decode_params(std::span<const std::uint8_t> bytes);

}  // namespace coclr
