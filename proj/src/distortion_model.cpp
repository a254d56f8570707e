#include "fprect/distortion_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "fprect/text_io.hpp"

namespace fprect {

DistortionModel fit_pca(const std::vector<DisplacementField>& fields, int t) {
    const auto m = static_cast<Eigen::Index>(fields.size());
    if (m < 2) throw ArgumentError("fit_pca: need at least 2 fields");
    const SamplingGrid& grid = fields.front().grid;
    const Eigen::Index dim = 2 * grid.point_count();
    for (const auto& f : fields)
        if (!f.grid.same_layout(grid) || f.vectors.size() != grid.points.size())
            throw ArgumentError("fit_pca: fields do not share one grid");
    if (t < 1 || t > std::min<Eigen::Index>(dim, m - 1))
        throw ArgumentError("fit_pca: t must be in [1, min(2n, #fields - 1)]");

    Eigen::MatrixXd data(dim, m);
    for (Eigen::Index k = 0; k < m; ++k) data.col(k) = flatten(fields[k]);

    const Eigen::VectorXd mean = data.rowwise().mean();
    data.colwise() -= mean;
    const Eigen::MatrixXd cov = data * data.transpose() / static_cast<double>(m - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw FitError("fit_pca: eigendecomposition failed");

    // Eigen returns ascending eigenvalues; take the top t in descending order.
    DistortionModel model;
    model.grid = grid;
    model.mean_field = mean;
    model.eigenvalues.resize(t);
    model.eigenvectors.resize(dim, t);
    for (int i = 0; i < t; ++i) {
        const Eigen::Index src = dim - 1 - i;
        model.eigenvalues[i] = solver.eigenvalues()[src];
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0.0) v = -v;
        model.eigenvectors.col(i) = v;
    }
    return model;
}

DisplacementField synthesize_field(const DistortionModel& model, const CoefficientVector& c) {
    if (c.size() != model.t())
        throw ArgumentError("synthesize_field: coefficient count does not match model");
    Eigen::VectorXd d = model.mean_field;
    for (int i = 0; i < model.t(); ++i)
        d += c[i] * std::sqrt(std::max(model.eigenvalues[i], 0.0)) * model.eigenvectors.col(i);
    return unflatten(model.grid, d);
}

CoefficientVector project_field(const DistortionModel& model, const DisplacementField& field) {
    if (!field.grid.same_layout(model.grid))
        throw ArgumentError("project_field: field grid does not match model");
    const Eigen::VectorXd centered = flatten(field) - model.mean_field;
    CoefficientVector c(model.t());
    for (int i = 0; i < model.t(); ++i) {
        if (model.eigenvalues[i] <= 1e-12)
            throw ArgumentError("project_field: component " + std::to_string(i) +
                                " has near-zero eigenvalue");
        c[i] = model.eigenvectors.col(i).dot(centered) / std::sqrt(model.eigenvalues[i]);
    }
    return c;
}

CoefficientVector sample_coefficients(Rng& rng, int t) {
    CoefficientVector c(t);
    for (int i = 0; i < t; ++i) c[i] = rng.uniform(-2.0, 2.0);
    return c;
}

DistortionClass quantize(double c_value) {
    // Explicit scan over the 11 centers; <= sends exact ties to the higher
    // class and stays stable under FMA contraction, unlike the closed-form
    // floor((c+2)/0.4 + 0.5).
    int best = 1;
    double best_dist = std::abs(c_value - class_center(1));
    for (int idx = 2; idx <= kClassCount; ++idx) {
        const double d = std::abs(c_value - class_center(idx));
        if (d <= best_dist) {
            best_dist = d;
            best = idx;
        }
    }
    return DistortionClass{best};
}

namespace {

constexpr int kModelVersion = 1;
constexpr const char* kModelMagic = "fprmodel";

std::string serialize_model(const DistortionModel& m) {
    std::ostringstream out;
    out << kModelMagic << " " << kModelVersion << "\n";
    out << "grid " << m.grid.rows << " " << m.grid.cols << " " << format_real(m.grid.spacing)
        << " " << format_real(m.grid.origin.x()) << " " << format_real(m.grid.origin.y())
        << "\n";
    out << "t " << m.t() << "\n";
    out << "mean_field";
    for (Eigen::Index i = 0; i < m.mean_field.size(); ++i)
        out << " " << format_real(m.mean_field[i]);
    out << "\neigenvalues";
    for (int i = 0; i < m.t(); ++i) out << " " << format_real(m.eigenvalues[i]);
    out << "\n";
    for (int k = 0; k < m.t(); ++k) {
        out << "eigenvector";
        for (Eigen::Index i = 0; i < m.eigenvectors.rows(); ++i)
            out << " " << format_real(m.eigenvectors(i, k));
        out << "\n";
    }
    return out.str();
}

std::istringstream expect_line(std::ifstream& in, const std::string& key,
                               const std::string& path) {
    std::string line;
    if (!std::getline(in, line))
        throw ParseError("model: missing " + key + " line in " + path);
    if (line.rfind(key, 0) != 0)
        throw ParseError("model: expected " + key + " line in " + path + ", got '" +
                         line.substr(0, 32) + "'");
    return std::istringstream(line.substr(key.size()));
}

} // namespace

void save_model(const DistortionModel& model, const std::string& path) {
    const std::string body = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << body << "checksum " << checksum_hex(body) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

DistortionModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    {
        auto head = expect_line(in, kModelMagic, path);
        int version = -1;
        head >> version;
        if (version != kModelVersion)
            throw ParseError("model: version mismatch in " + path + " (found " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kModelVersion) + ")");
    }

    DistortionModel m;
    {
        auto line = expect_line(in, "grid", path);
        int rows = 0, cols = 0;
        double spacing = 0.0, ox = 0.0, oy = 0.0;
        line >> rows >> cols >> spacing >> ox >> oy;
        if (!line) throw ParseError("model: malformed grid line in " + path);
        m.grid = build_grid(rows, cols, spacing, Vec2(ox, oy));
    }
    int t = 0;
    {
        auto line = expect_line(in, "t", path);
        line >> t;
        if (!line || t < 1) throw ParseError("model: malformed t line in " + path);
    }
    const Eigen::Index dim = 2 * m.grid.point_count();
    {
        auto line = expect_line(in, "mean_field", path);
        std::vector<double> vals;
        double v;
        while (line >> v) vals.push_back(v);
        if (static_cast<Eigen::Index>(vals.size()) != dim)
            throw ParseError("model: mean_field length " + std::to_string(vals.size()) +
                             " does not match grid dimension " + std::to_string(dim) + " in " +
                             path);
        m.mean_field = Eigen::Map<Eigen::VectorXd>(vals.data(), dim);
    }
    {
        auto line = expect_line(in, "eigenvalues", path);
        std::vector<double> vals;
        double v;
        while (line >> v) vals.push_back(v);
        if (static_cast<int>(vals.size()) != t)
            throw ParseError("model: eigenvalue count does not match t in " + path);
        m.eigenvalues = Eigen::Map<Eigen::VectorXd>(vals.data(), t);
    }
    m.eigenvectors.resize(dim, t);
    for (int k = 0; k < t; ++k) {
        auto line = expect_line(in, "eigenvector", path);
        std::vector<double> vals;
        double v;
        while (line >> v) vals.push_back(v);
        if (static_cast<Eigen::Index>(vals.size()) != dim)
            throw ParseError("model: eigenvector " + std::to_string(k) + " length " +
                             std::to_string(vals.size()) + " does not match 2n = " +
                             std::to_string(dim) + " in " + path);
        m.eigenvectors.col(k) = Eigen::Map<Eigen::VectorXd>(vals.data(), dim);
    }
    {
        auto line = expect_line(in, "checksum", path);
        std::string stored;
        line >> stored;
        if (checksum_hex(serialize_model(m)) != stored)
            throw ParseError("model: checksum failure in " + path);
    }
    return m;
}

} // namespace fprect
