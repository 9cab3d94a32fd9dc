#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coclr/numerics.hpp"

namespace coclr {

/// Generator parameters for the two-view dataset.
///
/// View 2 is the "easy" view: tight clusters around mutually orthogonal
/// unit class means. View 1 is the "hard" view: the class signal lives in
/// the first signal_dims coordinates and is swamped by nuisance_dims
/// coordinates of per-sample noise with spread sigma_nuisance.
struct DatasetSpec {
    int classes = 10;
    int per_class = 40;
    int signal_dims = 8;
    int nuisance_dims = 24;
    int view2_dims = 16;
    double signal_scale = 3.0;      // norm of a view-1 class mean
    double sigma_signal = 0.25;     // within-class spread on the signal coordinates
    double sigma_nuisance = 2.0;
    double sigma_view2 = 0.1;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    int view1_dims() const { return signal_dims + nuisance_dims; }
    int samples() const { return classes * per_class; }
    void validate() const;

    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct TwoViewDataset {
    DatasetSpec spec;
    Matrix view1;                    // N x d1
    Matrix view2;                    // N x d2
    std::vector<int> labels;         // hidden from every self-supervised path
    std::vector<std::size_t> train;  // stratified split, ascending
    std::vector<std::size_t> test;

    std::size_t size() const { return labels.size(); }

    friend bool operator==(const TwoViewDataset&, const TwoViewDataset&) = default;
};

TwoViewDataset generate(const DatasetSpec& spec);

/// ψ(x; a): additive Gaussian noise, then each coordinate independently
/// zeroed with probability dropout (no rescaling).
struct AugmentSpec {
    double noise_sigma = 0.0;
    double dropout = 0.0;

    void validate() const;
    friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

Matrix augment(const Matrix& x, const AugmentSpec& spec, Rng& rng);

/// Exact leave-nothing-out 1-NN accuracy (squared Euclidean, ties to the lower
/// gallery index) of the test rows against the train rows.
double nearest_neighbor_accuracy(const Matrix& features, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& train, const std::vector<std::size_t>& test);

/// Columnar text export, see docs/FORMATS.md.
std::string export_dataset(const TwoViewDataset& d);
TwoViewDataset import_dataset(const std::string& text);
void save_dataset(const TwoViewDataset& d, const std::string& path);
TwoViewDataset load_dataset(const std::string& path);

std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace coclr
