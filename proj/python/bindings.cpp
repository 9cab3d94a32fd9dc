#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "coclr/experiment.hpp"
#include "coclr/losses.hpp"

namespace py = pybind11;
using namespace coclr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

PositiveMask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("mask must be 2-d");
    PositiveMask m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    auto v = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) m.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j), v(i, j));
    return m;
}

py::array_t<bool> from_mask(const PositiveMask& m) {
    py::array_t<bool> out({m.rows(), m.cols()});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) v(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = m(i, j);
    return out;
}

// Logits-only block; the key matrices are placeholders.
LogitsBlock raw_block(Matrix logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (c == 0) throw std::invalid_argument("logits need at least one column");
    return {std::move(logits), 1.0, Matrix(n, 1), Matrix(c - 1, 1)};
}

py::dict summary_dict(const SummaryTable& t) {
    py::dict out;
    for (const auto& r : t) {
        py::dict row;
        row["median"] = r.median;
        row["per_seed"] = r.per_seed;
        out[py::str(r.metric)] = row;
    }
    return out;
}

py::dict record_dict(const MetricsRecord& r) {
    py::dict d;
    d["schema"] = r.schema;
    d["run"] = r.run;
    d["seed"] = r.seed;
    d["stage"] = r.stage;
    d["stage_name"] = r.stage_name;
    d["epoch"] = r.epoch;
    d["metric"] = r.metric;
    d["value"] = r.value;
    d["wall_clock"] = r.wall_clock;
    if (!r.message.empty()) d["message"] = r.message;
    return d;
}

}  // namespace

PYBIND11_MODULE(_coclr, m) {
    m.doc() = "Two-view co-training core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def(
        "generate_dataset",
        [](int classes, int per_class, int signal_dims, int nuisance_dims, int view2_dims, double signal_scale,
           double sigma_signal, double sigma_nuisance, double sigma_view2, double train_fraction, std::uint64_t seed) {
            DatasetSpec s{classes, per_class, signal_dims, nuisance_dims, view2_dims, signal_scale,
                          sigma_signal, sigma_nuisance, sigma_view2, train_fraction, seed};
            const auto d = generate(s);
            py::dict out;
            out["view1"] = to_array(d.view1);
            out["view2"] = to_array(d.view2);
            out["labels"] = d.labels;
            out["train"] = d.train;
            out["test"] = d.test;
            return out;
        },
        py::arg("classes") = 10, py::arg("per_class") = 40, py::arg("signal_dims") = 8, py::arg("nuisance_dims") = 24,
        py::arg("view2_dims") = 16, py::arg("signal_scale") = 3.0, py::arg("sigma_signal") = 0.25,
        py::arg("sigma_nuisance") = 2.0, py::arg("sigma_view2") = 0.1, py::arg("train_fraction") = 0.8,
        py::arg("seed") = 0);

    m.def(
        "build_logits",
        [](const Array& zq, const Array& zk, const Array& history, double tau) {
            return to_array(build_logits(to_matrix(zq), to_matrix(zk), to_matrix(history), tau).logits);
        },
        py::arg("zq"), py::arg("zk"), py::arg("history"), py::arg("tau"));

    m.def(
        "info_nce",
        [](const Array& logits) {
            const auto r = info_nce(raw_block(to_matrix(logits)));
            return py::make_tuple(r.loss, to_array(r.d_logits));
        },
        py::arg("logits"), "Loss and its gradient with respect to the logits; column 0 is the positive.");

    m.def(
        "mil_nce",
        [](const Array& logits, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask) {
            const auto r = mil_nce(raw_block(to_matrix(logits)), to_mask(mask));
            return py::make_tuple(r.loss, to_array(r.d_logits));
        },
        py::arg("logits"), py::arg("mask"));

    m.def(
        "build_mask",
        [](const Array& sim, std::size_t k) { return from_mask(build_mask(to_matrix(sim), k)); },
        py::arg("similarity"), py::arg("k"), "Self column plus the top-k columns of each similarity row.");

    m.def(
        "linear_probe",
        [](const Array& train_x, const std::vector<int>& train_y, const Array& test_x, const std::vector<int>& test_y,
           int classes, int steps, double lr, double l2) {
            const auto r = linear_probe(to_matrix(train_x), train_y, to_matrix(test_x), test_y, classes,
                                        ProbeHyper{steps, lr, l2, 1e-6});
            return py::make_tuple(r.accuracy, to_array(r.test_logits));
        },
        py::arg("train_x"), py::arg("train_y"), py::arg("test_x"), py::arg("test_y"), py::arg("classes"),
        py::arg("steps") = 500, py::arg("lr") = 2.0, py::arg("l2") = 1e-4);

    m.def(
        "retrieval",
        [](const Array& query, const std::vector<int>& ql, const Array& gallery, const std::vector<int>& gl,
           const std::vector<int>& ks) {
            const auto r = retrieval(to_matrix(query), ql, to_matrix(gallery), gl, ks);
            std::map<int, double> out;
            for (std::size_t i = 0; i < r.ks.size(); ++i) out[r.ks[i]] = r.recall[i];
            return out;
        },
        py::arg("query"), py::arg("query_labels"), py::arg("gallery"), py::arg("gallery_labels"),
        py::arg("ks") = kDefaultRecallKs);

    m.def(
        "default_config",
        [](const std::string& name, const std::string& loss, const std::string& granularity) {
            return serialize_config(default_config(name, parse_loss_kind(loss), parse_granularity(granularity)));
        },
        py::arg("name") = "coclr", py::arg("loss") = "coclr", py::arg("granularity") = "cycle",
        "Benchmark config as file text.");

    m.def(
        "override_config",
        [](const std::string& text, const std::vector<std::pair<std::string, std::string>>& overrides) {
            auto cfg = parse_config(text);
            for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
            validate_config(cfg);
            return serialize_config(cfg);
        },
        py::arg("config"), py::arg("overrides"), "Sets several keys, validating once at the end.");

    m.def("config_keys", &config_keys);
    m.def(
        "normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
        py::arg("config"), "Parses, validates and re-serializes a config.");

    m.def(
        "run_experiment",
        [](const std::string& text, const std::string& out_root, bool normalize_timestamps, int jobs, bool plots) {
            const auto cfg = parse_config(text);
            RunOptions opts;
            opts.out_root = out_root;
            opts.normalize_timestamps = normalize_timestamps;
            opts.jobs = jobs;
            opts.plots = plots;
            ExperimentOutcome out;
            {
                py::gil_scoped_release release;
                out = run_experiment(cfg, opts);
            }
            py::dict res;
            res["dir"] = out.dir;
            res["ok"] = out.ok();
            py::dict errors;
            for (const auto& s : out.seeds)
                if (s.error) errors[py::int_(s.seed)] = *s.error;
            res["errors"] = errors;
            res["summary"] = summary_dict(out.summary);
            return res;
        },
        py::arg("config"), py::arg("out_root"), py::arg("normalize_timestamps") = false, py::arg("jobs") = 1,
        py::arg("plots") = false);

    m.def(
        "read_metrics",
        [](const std::string& path) {
            py::list out;
            for (const auto& r : read_metrics(path)) out.append(record_dict(r));
            return out;
        },
        py::arg("path"));

    m.def(
        "summarize_run", [](const std::string& run_dir) { return summary_dict(summarize(read_run(run_dir))); },
        py::arg("run_dir"));
}
