#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/functional.h>

#include <optional>

#include "oscar/config.hpp"
#include "oscar/diffusion.hpp"
#include "oscar/error.hpp"
#include "oscar/federation.hpp"
#include "oscar/pipeline.hpp"
#include "oscar/synthdata.hpp"

namespace py = pybind11;
using namespace oscar;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Tensor({r, c}, std::vector<float>(a.data(), a.data() + r * c));
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

ExperimentConfig load(const std::string& path, std::optional<std::uint64_t> seed) {
    auto c = load_config(path);
    if (seed) c.seed = seed;
    require_seed(c);
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "OSCAR one-shot federated learning simulator";

    // Translators are tried newest first, so the base class goes in first.
    py::register_exception<Error>(m, "OscarError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("canonical_config", [](const std::string& text) { return to_ini(parse_config(text)); },
          py::arg("text"), "Parse INI text and echo every key with its effective value.");

    m.def(
        "run_stage",
        [](const std::string& config_path, const std::string& stage, const std::string& out_dir,
           std::optional<std::uint64_t> seed, std::optional<std::function<void(std::string)>> log) {
            const auto cfg = load(config_path, seed);
            LogFn fn;
            if (log) fn = [cb = *log](const std::string& s) {
                py::gil_scoped_acquire gil;
                cb(s);
            };
            py::gil_scoped_release release;
            run_pipeline(cfg, parse_stage(stage), out_dir, fn);
        },
        py::arg("config"), py::arg("stage"), py::arg("out_dir"), py::arg("seed") = py::none(),
        py::arg("log") = py::none());

    m.def("manifest", [](const std::string& out_dir) { return build_manifest(out_dir); }, py::arg("out_dir"));

    m.def(
        "render_image",
        [](std::uint32_t category, std::uint32_t domain, std::uint64_t seed, std::uint32_t size) {
            const auto img = render_image(category, domain, seed, size);
            py::array_t<float> out({size, size});
            std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
            return out;
        },
        py::arg("category"), py::arg("domain"), py::arg("seed"), py::arg("size") = 16);

    m.def(
        "alpha_bar",
        [](std::uint32_t steps, double beta_start, double beta_end) {
            const auto s = make_schedule(steps, beta_start, beta_end);
            py::array_t<double> out(steps);
            for (std::uint32_t t = 1; t <= steps; ++t) out.mutable_at(t - 1) = s.alpha_bar(t);
            return out;
        },
        py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"));

    m.def(
        "cfg_epsilon",
        [](const Array& cond, const Array& uncond, double s) {
            return to_array(cfg_epsilon(to_tensor(cond), to_tensor(uncond), s));
        },
        py::arg("eps_cond"), py::arg("eps_uncond"), py::arg("s"));
    m.def(
        "classifier_guided_epsilon",
        [](const Array& eps, const Array& grad, double s, double sigma) {
            return to_array(classifier_guided_epsilon(to_tensor(eps), to_tensor(grad), s, sigma));
        },
        py::arg("eps"), py::arg("grad_log_p"), py::arg("s"), py::arg("sigma_t"));

    m.def("oscar_upload_params", &oscar_upload_params, py::arg("categories"), py::arg("dim"));
    m.def("fedavg_upload_millions", &fedavg_upload_millions, py::arg("model_millions"), py::arg("rounds"));
    m.def("reduction_ratio", &reduction_ratio, py::arg("oscar_params"), py::arg("other_params"));
}
