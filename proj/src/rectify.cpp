#include "fprect/rectify.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fprect/text_io.hpp"
#include "fprect/tps.hpp"

namespace fprect {

CoefficientVector estimate(const NetworkF& net, const Image& img) {
    const Image prepared = preprocess(img, net.input_size);
    const TensorF out = forward(net, record_tensor(prepared));
    CoefficientVector c(net.t_out);
    for (int i = 0; i < net.t_out; ++i) c[i] = out.data[i];
    return c;
}

Image rectify_image(const Image& img, const CoefficientVector& c, const DistortionModel& model) {
    if (c.size() != model.t())
        throw ArgumentError("rectify_image: coefficient count does not match model");
    const DisplacementField field = synthesize_field(model, c);
    const double alpha = default_regularization(model.grid.points);
    return warp_backward(img, rectify_map(model.grid, field, alpha), 1.0);
}

std::pair<Image, CoefficientVector> rectify_pipeline(const NetworkF& net,
                                                     const DistortionModel& model,
                                                     const Image& img) {
    CoefficientVector c = estimate(net, img);
    return {rectify_image(img, c, model), std::move(c)};
}

Dictionary build_dictionary(const DistortionModel& model, const std::vector<Image>& sources,
                            const std::vector<CoefficientVector>& coefficient_grid) {
    if (sources.empty()) throw ArgumentError("build_dictionary: no source images");
    if (coefficient_grid.empty()) throw ArgumentError("build_dictionary: empty coefficient grid");

    const Image& canonical = sources.front();
    const int size = canvas_from_grid(model.grid);
    const double alpha = default_regularization(model.grid.points);

    Dictionary dict;
    dict.signature_size = size;
    dict.coefficients.reserve(coefficient_grid.size());
    dict.signatures.reserve(coefficient_grid.size());
    for (const auto& c : coefficient_grid) {
        if (c.size() != model.t())
            throw ArgumentError("build_dictionary: coefficient length does not match model");
        const DisplacementField field = synthesize_field(model, c);
        const Image distorted = warp_backward(canonical, distort_map(model.grid, field, alpha), 1.0);
        const Image prepared = preprocess(distorted, size);
        std::vector<float> sig(prepared.data.size());
        for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<float>(prepared.data[i]);
        dict.coefficients.push_back(c);
        dict.signatures.push_back(std::move(sig));
    }
    return dict;
}

std::vector<float> image_signature(const Image& prepared) {
    std::vector<float> sig(prepared.data.size());
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<float>(prepared.data[i]);
    return sig;
}

CoefficientVector nn_estimate_prepared(const Dictionary& dict,
                                       const std::vector<float>& signature) {
    if (dict.entry_count() == 0) throw ArgumentError("nn_estimate: dictionary is empty");
    const std::size_t dim =
        static_cast<std::size_t>(dict.signature_size) * dict.signature_size;
    if (signature.size() != dim)
        throw ArgumentError("nn_estimate: signature dimension mismatch");

    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < dict.signatures.size(); ++e) {
        const std::vector<float>& sig = dict.signatures[e];
        double d = 0.0;
        for (std::size_t i = 0; i < sig.size(); ++i) {
            const double diff = static_cast<double>(signature[i]) - static_cast<double>(sig[i]);
            d += diff * diff;
        }
        if (d < best_dist) {
            best_dist = d;
            best = e;
        }
    }
    return dict.coefficients[best];
}

CoefficientVector nn_estimate(const Dictionary& dict, const Image& img) {
    if (dict.entry_count() == 0) throw ArgumentError("nn_estimate: dictionary is empty");
    return nn_estimate_prepared(dict, image_signature(preprocess(img, dict.signature_size)));
}

std::vector<CoefficientVector> coefficient_lattice(int t, int per_axis) {
    if (t < 1 || per_axis < 2) throw ArgumentError("coefficient_lattice: degenerate lattice");
    std::vector<CoefficientVector> grid;
    const std::size_t total = static_cast<std::size_t>(std::pow(per_axis, t));
    grid.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        CoefficientVector c(t);
        std::size_t rem = idx;
        for (int a = 0; a < t; ++a) {
            c[a] = -2.0 + 4.0 * static_cast<double>(rem % per_axis) / (per_axis - 1);
            rem /= per_axis;
        }
        grid.push_back(std::move(c));
    }
    return grid;
}

void save_dictionary(const Dictionary& dict, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "fprdict 1\n";
    out << "model " << (dict.model_path.empty() ? "-" : dict.model_path) << "\n";
    out << "size " << dict.signature_size << "\n";
    out << "entries " << dict.entry_count() << "\n";
    for (const auto& c : dict.coefficients) {
        out << "coeff";
        for (Eigen::Index i = 0; i < c.size(); ++i) out << " " << format_real(c[i]);
        out << "\n";
    }
    for (const auto& sig : dict.signatures)
        out.write(reinterpret_cast<const char*>(sig.data()),
                  static_cast<std::streamsize>(sig.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + path);
}

Dictionary load_dictionary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw ParseError("dictionary: missing " + std::string(what) + " in " + path);
        return std::istringstream(line);
    };
    {
        auto head = next_line("magic");
        std::string magic;
        int version = -1;
        head >> magic >> version;
        if (magic != "fprdict" || version != 1)
            throw ParseError("dictionary: bad magic or version in " + path);
    }
    Dictionary dict;
    std::size_t entries = 0;
    {
        auto l = next_line("model");
        std::string key;
        l >> key >> dict.model_path;
        if (dict.model_path == "-") dict.model_path.clear();
        auto l2 = next_line("size");
        l2 >> key >> dict.signature_size;
        auto l3 = next_line("entries");
        l3 >> key >> entries;
        if (dict.signature_size < 2 || entries == 0)
            throw ParseError("dictionary: malformed header in " + path);
    }
    for (std::size_t e = 0; e < entries; ++e) {
        auto row = next_line("coeff");
        std::string key;
        row >> key;
        std::vector<double> vals;
        double v;
        while (row >> v) vals.push_back(v);
        if (key != "coeff" || vals.empty())
            throw ParseError("dictionary: malformed coeff line in " + path);
        dict.coefficients.push_back(
            Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    const std::size_t dim = static_cast<std::size_t>(dict.signature_size) * dict.signature_size;
    dict.signatures.assign(entries, std::vector<float>(dim));
    for (auto& sig : dict.signatures) {
        in.read(reinterpret_cast<char*>(sig.data()),
                static_cast<std::streamsize>(dim * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != dim * sizeof(float))
            throw ParseError("dictionary: truncated signature payload in " + path);
    }
    return dict;
}

} // namespace fprect
