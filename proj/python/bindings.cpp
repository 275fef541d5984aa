#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "favae/checkpoint.hpp"
#include "favae/datasets.hpp"
#include "favae/error.hpp"
#include "favae/harness.hpp"
#include "favae/images.hpp"
#include "favae/spectral.hpp"

namespace py = pybind11;
using namespace favae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Tensor<T> to_tensor(const A& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor<T>::from(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<T> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::array_t<float> dataset_pixels(const data::Dataset& d) {
    py::array_t<float> out({d.count, d.channels, d.size, d.size});
    std::copy(d.pixels.begin(), d.pixels.end(), out.mutable_data());
    return out;
}

data::Dataset to_dataset(const ArrayF& x) {
    if (x.ndim() != 4 || x.shape(2) != x.shape(3)) throw DimensionError("images must have shape [N, C, S, S]");
    data::Dataset d;
    d.count = static_cast<int>(x.shape(0));
    d.channels = static_cast<int>(x.shape(1));
    d.size = static_cast<int>(x.shape(2));
    d.pixels.assign(x.data(), x.data() + x.size());
    d.labels.assign(d.count, 0);
    return d;
}

py::dict evaluation(const harness::Evaluation& e) {
    py::dict out;
    out["psnr"] = e.psnr;
    out["band_error"] = std::vector<double>(e.band_error.begin(), e.band_error.end());
    return out;
}

class PyModel {
   public:
    explicit PyModel(const std::string& path) : model_(checkpoint::load(path).make_model()) {}

    std::string spec() const { return model_.spec().canonical(); }

    py::array_t<float> reconstruct(const ArrayF& x) const {
        NoGradGuard guard;
        return to_array(model_.forward(to_tensor<float>(x)).reconstruction);
    }

    py::array_t<std::int32_t> encode(const ArrayF& x) const {
        NoGradGuard guard;
        const auto idx = model_.encode_indices(to_tensor<float>(x));
        const int h = model_.spec().latent_size();
        py::array_t<std::int32_t> out({static_cast<py::ssize_t>(x.shape(0)), py::ssize_t(h), py::ssize_t(h)});
        std::copy(idx.begin(), idx.end(), out.mutable_data());
        return out;
    }

    std::vector<double> sigmas() const {
        const auto s = model_.sigma_bank().sigmas();
        return {s.begin(), s.end()};
    }

    py::dict evaluate(const ArrayF& x) const { return evaluation(harness::evaluate(model_, to_dataset(x))); }

   private:
    model::Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "FA-VAE core bindings";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "dft2",
        [](const Array& x) {
            const auto f = spectral::dft2(to_tensor<double>(x));
            return py::make_tuple(to_array(f.real), to_array(f.imag));
        },
        py::arg("x"), "Unnormalized 2D DFT over the last two axes; returns (real, imag).");
    m.def(
        "ffl",
        [](const Array& a, const Array& c, bool normalize_weight) {
            spectral::FflOptions o;
            o.normalize_weight = normalize_weight;
            return spectral::ffl(to_tensor<double>(a), to_tensor<double>(c), o).item();
        },
        py::arg("a"), py::arg("c"), py::arg("normalize_weight") = false, "Focal frequency loss of two arrays [..., M, N].");
    m.def(
        "freq_map", [](const Array& x) { return to_array(spectral::freq_map(to_tensor<double>(x))); }, py::arg("x"),
        "Center-shifted log-magnitude spectrum of x[C, M, N], channel-averaged and scaled to [0, 1].");
    m.def(
        "band_fraction",
        [](const Array& x) {
            const auto b = spectral::band_fraction(to_tensor<double>(x));
            return std::vector<double>(b.begin(), b.end());
        },
        py::arg("x"), "Low, mid and high radial band energy fractions.");

    m.def(
        "make_dataset",
        [](const std::string& kind, int n, int size, std::uint64_t seed) {
            const auto d = data::make_dataset(data::parse_kind(kind), n, size, seed);
            return py::make_tuple(dataset_pixels(d), d.labels);
        },
        py::arg("kind"), py::arg("n"), py::arg("size"), py::arg("seed"),
        "Synthetic images in [-1, 1] as (pixels[N, 3, S, S], labels).");

    m.def(
        "read_pnm",
        [](const std::filesystem::path& path) {
            const auto img = images::read_pnm(path);
            py::array_t<std::uint8_t> out({img.height, img.width, img.channels});
            std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
            return out;
        },
        py::arg("path"), "8-bit PGM/PPM as an array [H, W, C].");

    m.def(
        "gradcheck",
        [](const std::string& scope) {
            py::list out;
            for (const auto& l : harness::gradcheck_battery(scope)) out.append(py::make_tuple(l.scope, l.op, l.max_rel_error, l.pass));
            return out;
        },
        py::arg("scope") = "all", "Runs the gradient battery; returns (scope, op, max_rel_error, passed) tuples.");

    m.def(
        "default_config", [] { return harness::Config::defaults().text(); }, "Every configuration key with its default.");
    m.def(
        "train",
        [](const std::string& config, const std::filesystem::path& out, const std::string& resume) {
            const auto run = harness::RunConfig::from(harness::Config::parse(config));
            harness::TrainResult r;
            {
                py::gil_scoped_release release;
                r = harness::train_favae(run, out, resume);
            }
            auto d = evaluation(r.final_eval);
            d["steps"] = r.steps.size();
            d["checkpoint"] = r.checkpoint;
            return d;
        },
        py::arg("config"), py::arg("out"), py::arg("resume") = "",
        "Trains the autoencoder from config text, writing outputs under out.");

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def_property_readonly("spec", &PyModel::spec)
        .def_property_readonly("sigmas", &PyModel::sigmas)
        .def("reconstruct", &PyModel::reconstruct, py::arg("images"))
        .def("encode", &PyModel::encode, py::arg("images"))
        .def("evaluate", &PyModel::evaluate, py::arg("images"));
}
