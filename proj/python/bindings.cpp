#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dmsr/cli.hpp"
#include "dmsr/evaluation.hpp"
#include "dmsr/training.hpp"

namespace py = pybind11;
using namespace dmsr;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ImageTensor to_image(const FloatArray& a) {
    if (a.ndim() == 2) {
        ImageTensor img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
        std::copy(a.data(), a.data() + a.size(), img.data().begin());
        return img;
    }
    if (a.ndim() != 3) throw py::value_error("expected an H x W x C array");
    ImageTensor img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), img.data().begin());
    return img;
}

FloatArray to_array(const ImageTensor& img) {
    FloatArray out({img.height(), img.width(), img.channels()});
    std::copy(img.data().begin(), img.data().end(), out.mutable_data());
    return out;
}

py::array_t<double> kernel_array(const BlurKernel& k) {
    py::array_t<double> out({k.size, k.size});
    std::copy(k.weights.begin(), k.weights.end(), out.mutable_data());
    return out;
}

BlurKernel kernel_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw py::value_error("kernel must be a square 2-D array");
    BlurKernel k;
    k.size = static_cast<int>(a.shape(0));
    k.weights.assign(a.data(), a.data() + a.size());
    return k;
}

ModelConfig preset(const std::string& name, int scale) {
    if (name == "paper") return paper_config(scale);
    if (name == "tiny") return tiny_config(scale);
    throw py::value_error("unknown preset '" + name + "'");
}

class Model {
public:
    explicit Model(Network<float> net) : net_(std::move(net)) {}

    static Model load(const std::filesystem::path& path) { return Model(load_checkpoint(path).net); }
    static Model random(const std::string& name, int scale, std::uint64_t seed) {
        return Model(make_network<float>(preset(name, scale), seed));
    }

    FloatArray super_resolve(const FloatArray& lr) const {
        const auto img = to_image(lr);
        ImageTensor sr;
        {
            py::gil_scoped_release release;
            sr = dmsr::super_resolve(net_, img);
        }
        return to_array(sr);
    }

    py::tuple estimate(const FloatArray& lr) const {
        const auto e = extract(net_, to_image(lr));
        return py::make_tuple(to_array(e.noise_map_est), kernel_array(e.kernel_est));
    }

    int scale() const { return net_.config.scale; }
    std::map<std::string, std::int64_t> parameter_counts() const {
        auto c = count_parameters(net_.params);
        c.components["total"] = c.total;
        return c.components;
    }

private:
    Network<float> net_;
};

}  // namespace

PYBIND11_MODULE(_dmsr, m) {
    m.doc() = "Blind super-resolution with degradation-aware meta modules";

    m.def("gaussian_kernel", [](double width, int size) { return kernel_array(gaussian_kernel(width, size)); },
          py::arg("width"), py::arg("size") = 15);
    m.def("blur", [](const FloatArray& img, const py::array_t<double, py::array::c_style | py::array::forcecast>& k) {
        return to_array(blur(to_image(img), kernel_from(k)));
    });
    m.def("bicubic_downsample", [](const FloatArray& img, int s) { return to_array(bicubic_downsample(to_image(img), s)); });
    m.def("bicubic_upsample", [](const FloatArray& img, int s) { return to_array(bicubic_upsample(to_image(img), s)); });

    m.def(
        "degrade",
        [](const FloatArray& hr, double kernel_width, double noise_level, int scale, std::uint64_t seed, int kernel_size) {
            const auto s = degrade(to_image(hr), DegradationSpec{kernel_width, noise_level, scale, seed, kernel_size});
            py::dict out;
            out["lr"] = to_array(s.lr);
            out["lr_preclamp"] = to_array(s.lr_preclamp);
            out["kernel"] = kernel_array(s.kernel_gt);
            out["noise_map"] = to_array(s.noise_map_gt);
            return out;
        },
        py::arg("hr"), py::arg("kernel_width"), py::arg("noise_level"), py::arg("scale"), py::arg("seed") = 0,
        py::arg("kernel_size") = 15);

    m.def("psnr_y", [](const FloatArray& a, const FloatArray& b, int crop) { return psnr_y(to_image(a), to_image(b), crop); },
          py::arg("a"), py::arg("b"), py::arg("crop") = 0);
    m.def("ssim_y", [](const FloatArray& a, const FloatArray& b, int crop) { return ssim_y(to_image(a), to_image(b), crop); },
          py::arg("a"), py::arg("b"), py::arg("crop") = 0);
    m.def("synthetic_image", [](int h, int w, std::uint64_t seed) { return to_array(synthetic_image(h, w, seed)); });

    py::class_<Model>(m, "Model")
        .def_static("load", &Model::load, py::arg("path"))
        .def_static("random", &Model::random, py::arg("preset") = "tiny", py::arg("scale") = 4, py::arg("seed") = 0)
        .def("super_resolve", &Model::super_resolve, py::arg("lr"))
        .def("estimate", &Model::estimate, py::arg("lr"))
        .def_property_readonly("scale", &Model::scale)
        .def("parameter_counts", &Model::parameter_counts);

    m.def("cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "dmsr");
        return cli::dispatch(args);
    });
}
