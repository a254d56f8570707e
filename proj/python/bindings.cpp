#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fprect/eval.hpp"
#include "fprect/tps.hpp"

namespace py = pybind11;
using namespace fprect;

namespace {

Image image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ArgumentError("expected a 2-D grayscale array");
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::memcpy(img.data.data(), a.data(), sizeof(double) * img.size());
    return img;
}

py::array_t<double> array_from_image(const Image& img) {
    py::array_t<double> a({img.height, img.width});
    std::memcpy(a.mutable_data(), img.data.data(), sizeof(double) * img.size());
    return a;
}

} // namespace

PYBIND11_MODULE(_fprect, m) {
    m.doc() = "Fingerprint distortion estimation and rectification toolkit";

    py::register_exception<Error>(m, "FprectError");

    py::class_<DistortionModel>(m, "DistortionModel")
        .def_property_readonly("t", &DistortionModel::t)
        .def_property_readonly("eigenvalues",
                               [](const DistortionModel& mdl) { return mdl.eigenvalues; })
        .def_property_readonly("mean_field",
                               [](const DistortionModel& mdl) { return mdl.mean_field; })
        .def_property_readonly(
            "grid_shape", [](const DistortionModel& mdl) {
                return py::make_tuple(mdl.grid.rows, mdl.grid.cols, mdl.grid.spacing);
            });

    py::class_<NetworkF>(m, "Network")
        .def_property_readonly("input_size", [](const NetworkF& n) { return n.input_size; })
        .def_property_readonly("t_out", [](const NetworkF& n) { return n.t_out; })
        .def_property_readonly("layer_count", &NetworkF::layer_count);

    py::class_<Dictionary>(m, "Dictionary")
        .def_property_readonly("entries", &Dictionary::entry_count)
        .def_property_readonly("signature_size",
                               [](const Dictionary& d) { return d.signature_size; });

    m.def("load_pgm", [](const std::string& path) { return array_from_image(load_pgm(path)); },
          py::arg("path"), "Read a binary 8-bit PGM into a float array in [0,1]");
    m.def("save_pgm",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             const std::string& path) { save_pgm(image_from_array(a), path); },
          py::arg("image"), py::arg("path"));
    m.def("preprocess",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             int out_size) { return array_from_image(preprocess(image_from_array(a), out_size)); },
          py::arg("image"), py::arg("out_size"),
          "Center on the foreground mass, scale, and crop to out_size");

    m.def("generate_ridge_image",
          [](double period, std::uint64_t seed, int size) {
              RidgeParams p;
              p.period = period;
              p.orientation_seed = seed;
              return array_from_image(generate_ridge_image(p, size));
          },
          py::arg("period"), py::arg("seed"), py::arg("size"));

    m.def("build_reference_model",
          [](int canvas, int n_fields, std::uint64_t seed, int t) {
              return build_reference_model(default_grid(canvas), n_fields, seed, t);
          },
          py::arg("canvas"), py::arg("n_fields"), py::arg("seed"), py::arg("t") = 2);
    m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
    m.def("load_model", &load_model, py::arg("path"));

    m.def("sample_coefficients",
          [](std::uint64_t seed, int t) {
              Rng rng(seed);
              return sample_coefficients(rng, t);
          },
          py::arg("seed"), py::arg("t"));
    m.def("quantize", [](double c) { return quantize(c).index; }, py::arg("c"),
          "Class index in [1, 11] of a coefficient value");

    m.def("distort_image",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             const DistortionModel& model, const CoefficientVector& c) {
              const DisplacementField field = synthesize_field(model, c);
              const double alpha = default_regularization(model.grid.points);
              return array_from_image(warp_backward(image_from_array(a),
                                                    distort_map(model.grid, field, alpha), 1.0));
          },
          py::arg("image"), py::arg("model"), py::arg("coefficients"),
          "Render the synthetic distortion for a coefficient vector");
    m.def("rectify_image",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             const CoefficientVector& c, const DistortionModel& model) {
              return array_from_image(rectify_image(image_from_array(a), c, model));
          },
          py::arg("image"), py::arg("coefficients"), py::arg("model"),
          "Undo an estimated distortion by the inverse thin-plate-spline warp");

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def("estimate",
          [](const NetworkF& net,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              return estimate(net, image_from_array(a));
          },
          py::arg("network"), py::arg("image"),
          "Estimate distortion coefficients from a raw grayscale image");
    m.def("rectify_pipeline",
          [](const NetworkF& net, const DistortionModel& model,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              auto [img, c] = rectify_pipeline(net, model, image_from_array(a));
              return py::make_tuple(array_from_image(img), c);
          },
          py::arg("network"), py::arg("model"), py::arg("image"));

    m.def("build_dictionary",
          [](const DistortionModel& model,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& source,
             int per_axis) {
              return build_dictionary(model, {image_from_array(source)},
                                      coefficient_lattice(model.t(), per_axis));
          },
          py::arg("model"), py::arg("source"), py::arg("per_axis") = 11);
    m.def("nn_estimate",
          [](const Dictionary& dict,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              return nn_estimate(dict, image_from_array(a));
          },
          py::arg("dictionary"), py::arg("image"));

    m.def("dataset_record_count", &dataset_record_count, py::arg("n_sources"),
          py::arg("variants_per_source"));
    m.def("iterations_per_epoch", &iterations_per_epoch, py::arg("n_samples"),
          py::arg("batch_size"));

    m.attr("__version__") = "0.1.0";
}
