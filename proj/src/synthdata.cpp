#include "coclr/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace coclr {

void DatasetSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("dataset.classes must be >= 2");
    if (per_class < 2) throw std::invalid_argument("dataset.per_class must be >= 2");
    if (signal_dims < 2) throw std::invalid_argument("dataset.signal_dims must be >= 2");
    if (nuisance_dims < 0) throw std::invalid_argument("dataset.nuisance_dims must be >= 0");
    if (view2_dims < 2) throw std::invalid_argument("dataset.view2_dims must be >= 2");
    if (!(signal_scale > 0.0)) throw std::invalid_argument("dataset.signal_scale must be positive");
    if (!(sigma_signal >= 0.0) || !(sigma_nuisance >= 0.0) || !(sigma_view2 >= 0.0))
        throw std::invalid_argument("dataset sigmas must be non-negative");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
        throw std::invalid_argument("dataset.train_fraction must lie in (0, 1]");
}

namespace {

std::vector<double> gaussian_vector(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    return v;
}

void normalize(std::vector<double>& v) {
    double n = std::sqrt(dot(v, v));
    for (double& x : v) x /= n;
}

// Unit class means. Orthonormal (Gram-Schmidt) when classes fit in the
// dimension, otherwise random unit vectors drawn one at a time until each
// is at least 60 degrees from all earlier ones.
std::vector<std::vector<double>> class_means(int classes, int dims, Rng& rng) {
    std::vector<std::vector<double>> means;
    const auto d = static_cast<std::size_t>(dims);
    if (classes <= dims) {
        while (static_cast<int>(means.size()) < classes) {
            auto v = gaussian_vector(d, rng);
            for (const auto& m : means) {
                const double p = dot(v, m);
                for (std::size_t i = 0; i < d; ++i) v[i] -= p * m[i];
            }
            if (std::sqrt(dot(v, v)) < 1e-6) continue;
            normalize(v);
            means.push_back(std::move(v));
        }
        return means;
    }
    for (int attempt = 0; static_cast<int>(means.size()) < classes; ++attempt) {
        if (attempt > 100000) throw std::runtime_error("generate: cannot place separated class means");
        auto v = gaussian_vector(d, rng);
        normalize(v);
        const bool ok = std::all_of(means.begin(), means.end(), [&](const auto& m) { return dot(v, m) <= 0.5; });
        if (ok) means.push_back(std::move(v));
    }
    return means;
}

}  // namespace

TwoViewDataset generate(const DatasetSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    Rng mean_rng = root.fork(1);
    Rng sample_rng = root.fork(2);
    Rng split_rng = root.fork(3);

    const auto means2 = class_means(spec.classes, spec.view2_dims, mean_rng);
    const auto means1 = class_means(spec.classes, spec.signal_dims, mean_rng);

    TwoViewDataset d;
    d.spec = spec;
    const auto n = static_cast<std::size_t>(spec.samples());
    const auto d1 = static_cast<std::size_t>(spec.view1_dims());
    const auto d2 = static_cast<std::size_t>(spec.view2_dims);
    const auto ds = static_cast<std::size_t>(spec.signal_dims);
    d.view1 = Matrix(n, d1);
    d.view2 = Matrix(n, d2);
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(i / static_cast<std::size_t>(spec.per_class));
        d.labels[i] = static_cast<int>(c);
        auto r1 = d.view1.row(i);
        for (std::size_t j = 0; j < ds; ++j) r1[j] = spec.signal_scale * means1[c][j] + spec.sigma_signal * sample_rng.normal();
        for (std::size_t j = ds; j < d1; ++j) r1[j] = spec.sigma_nuisance * sample_rng.normal();
        auto r2 = d.view2.row(i);
        for (std::size_t j = 0; j < d2; ++j) r2[j] = means2[c][j] + spec.sigma_view2 * sample_rng.normal();
    }

    const auto per = static_cast<std::size_t>(spec.per_class);
    auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(per)));
    if (spec.train_fraction < 1.0) n_train = std::clamp<std::size_t>(n_train, 1, per - 1);
    else n_train = per;
    for (int c = 0; c < spec.classes; ++c) {
        std::vector<std::size_t> members(per);
        for (std::size_t j = 0; j < per; ++j) members[j] = static_cast<std::size_t>(c) * per + j;
        split_rng.shuffle(members);
        d.train.insert(d.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        d.test.insert(d.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    std::sort(d.train.begin(), d.train.end());
    std::sort(d.test.begin(), d.test.end());
    return d;
}

void AugmentSpec::validate() const {
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("augment noise sigma must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("augment dropout must lie in [0, 1)");
}

Matrix augment(const Matrix& x, const AugmentSpec& spec, Rng& rng) {
    spec.validate();
    Matrix out = x;
    if (spec.noise_sigma > 0.0)
        for (double& v : out.data()) v += spec.noise_sigma * rng.normal();
    if (spec.dropout > 0.0)
        for (double& v : out.data())
            if (rng.uniform() < spec.dropout) v = 0.0;
    return out;
}

double nearest_neighbor_accuracy(const Matrix& features, const std::vector<int>& labels,
                                 const std::vector<std::size_t>& train, const std::vector<std::size_t>& test) {
    if (train.empty() || test.empty()) throw std::invalid_argument("nearest_neighbor_accuracy: empty split");
    std::size_t correct = 0;
    for (std::size_t q : test) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t g : train) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < features.cols(); ++j) {
                const double diff = features(q, j) - features(g, j);
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                best_idx = g;
            }
        }
        correct += labels[best_idx] == labels[q];
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

namespace {

nlohmann::ordered_json spec_to_json(const DatasetSpec& s) {
    nlohmann::ordered_json j;
    j["classes"] = s.classes;
    j["per_class"] = s.per_class;
    j["signal_dims"] = s.signal_dims;
    j["nuisance_dims"] = s.nuisance_dims;
    j["view2_dims"] = s.view2_dims;
    j["signal_scale"] = s.signal_scale;
    j["sigma_signal"] = s.sigma_signal;
    j["sigma_nuisance"] = s.sigma_nuisance;
    j["sigma_view2"] = s.sigma_view2;
    j["train_fraction"] = s.train_fraction;
    j["seed"] = s.seed;
    return j;
}

DatasetSpec spec_from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.classes = j.at("classes").get<int>();
    s.per_class = j.at("per_class").get<int>();
    s.signal_dims = j.at("signal_dims").get<int>();
    s.nuisance_dims = j.at("nuisance_dims").get<int>();
    s.view2_dims = j.at("view2_dims").get<int>();
    s.signal_scale = j.at("signal_scale").get<double>();
    s.sigma_signal = j.at("sigma_signal").get<double>();
    s.sigma_nuisance = j.at("sigma_nuisance").get<double>();
    s.sigma_view2 = j.at("sigma_view2").get<double>();
    s.train_fraction = j.at("train_fraction").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

constexpr const char* kDatasetMagic = "# coclr-dataset v1";

}  // namespace

std::string export_dataset(const TwoViewDataset& d) {
    std::ostringstream out;
    out << kDatasetMagic << '\n';
    out << "# spec " << spec_to_json(d.spec).dump() << '\n';
    out << "id\tsplit\tlabel";
    for (std::size_t j = 0; j < d.view1.cols(); ++j) out << "\tv1_" << j;
    for (std::size_t j = 0; j < d.view2.cols(); ++j) out << "\tv2_" << j;
    out << '\n';
    std::vector<char> split(d.size(), '?');
    for (auto i : d.train) split[i] = 'T';
    for (auto i : d.test) split[i] = 'E';
    for (std::size_t i = 0; i < d.size(); ++i) {
        out << i << '\t' << (split[i] == 'T' ? "train" : split[i] == 'E' ? "test" : "none") << '\t' << d.labels[i];
        for (double v : d.view1.row(i)) out << '\t' << format_double(v);
        for (double v : d.view2.row(i)) out << '\t' << format_double(v);
        out << '\n';
    }
    return out.str();
}

TwoViewDataset import_dataset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kDatasetMagic) throw std::runtime_error("import_dataset: missing header");
    if (!std::getline(in, line) || line.rfind("# spec ", 0) != 0)
        throw std::runtime_error("import_dataset: missing spec line");
    TwoViewDataset d;
    d.spec = spec_from_json(nlohmann::json::parse(line.substr(7)));
    if (!std::getline(in, line)) throw std::runtime_error("import_dataset: missing column header");
    const auto d1 = static_cast<std::size_t>(d.spec.view1_dims());
    const auto d2 = static_cast<std::size_t>(d.spec.view2_dims);
    std::vector<double> v1, v2;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1)
            fields.push_back(line.substr(start, pos - start));
        fields.push_back(line.substr(start));
        if (fields.size() != 3 + d1 + d2)
            throw std::runtime_error("import_dataset: row " + std::to_string(rows) + " has " +
                                     std::to_string(fields.size()) + " fields");
        if (std::stoul(fields[0]) != rows) throw std::runtime_error("import_dataset: ids must be 0..N-1 in order");
        if (fields[1] == "train") d.train.push_back(rows);
        else if (fields[1] == "test") d.test.push_back(rows);
        d.labels.push_back(std::stoi(fields[2]));
        for (std::size_t j = 0; j < d1; ++j) v1.push_back(parse_double(fields[3 + j]));
        for (std::size_t j = 0; j < d2; ++j) v2.push_back(parse_double(fields[3 + d1 + j]));
        ++rows;
    }
    d.view1 = Matrix(rows, d1, std::move(v1));
    d.view2 = Matrix(rows, d2, std::move(v2));
    return d;
}

void save_dataset(const TwoViewDataset& d, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << export_dataset(d);
}

TwoViewDataset load_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return import_dataset(ss.str());
}

}  // namespace coclr
