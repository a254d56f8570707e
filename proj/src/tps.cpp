#include "fprect/tps.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace fprect {

SamplingGrid build_grid(int rows, int cols, double spacing, const Vec2& origin) {
    if (rows < 2 || cols < 2) throw ArgumentError("build_grid: rows and cols must be >= 2");
    if (!(spacing > 0.0)) throw ArgumentError("build_grid: spacing must be positive");
    SamplingGrid g;
    g.rows = rows;
    g.cols = cols;
    g.spacing = spacing;
    g.origin = origin;
    g.points.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            g.points.emplace_back(origin.x() + c * spacing, origin.y() + r * spacing);
    return g;
}

SamplingGrid default_grid(int canvas_size) {
    const int rows = 11, cols = 9;
    const double spacing = canvas_size / 16.0;
    const Vec2 origin((canvas_size - (cols - 1) * spacing) / 2.0,
                      (canvas_size - (rows - 1) * spacing) / 2.0);
    return build_grid(rows, cols, spacing, origin);
}

DisplacementField displacement_between(const SamplingGrid& normal,
                                       const std::vector<Vec2>& distorted) {
    if (distorted.size() != normal.points.size())
        throw ArgumentError("displacement_between: point count mismatch");
    DisplacementField field;
    field.grid = normal;
    field.vectors.reserve(distorted.size());
    for (std::size_t i = 0; i < distorted.size(); ++i)
        field.vectors.push_back(distorted[i] - normal.points[i]);
    return field;
}

Eigen::VectorXd flatten(const DisplacementField& field) {
    Eigen::VectorXd v(2 * static_cast<Eigen::Index>(field.vectors.size()));
    for (std::size_t i = 0; i < field.vectors.size(); ++i) {
        v[2 * i] = field.vectors[i].x();
        v[2 * i + 1] = field.vectors[i].y();
    }
    return v;
}

DisplacementField unflatten(const SamplingGrid& grid, const Eigen::VectorXd& v) {
    if (v.size() != 2 * grid.point_count())
        throw ArgumentError("unflatten: vector length does not match grid");
    DisplacementField field;
    field.grid = grid;
    field.vectors.reserve(grid.points.size());
    for (int i = 0; i < grid.point_count(); ++i)
        field.vectors.emplace_back(v[2 * i], v[2 * i + 1]);
    return field;
}

TpsTransform tps_fit(const std::vector<Vec2>& sources, const std::vector<Vec2>& targets,
                     double regularization) {
    const auto n = static_cast<Eigen::Index>(sources.size());
    if (n < 3) throw ArgumentError("tps_fit: need at least 3 control points");
    if (targets.size() != sources.size())
        throw ArgumentError("tps_fit: source/target count mismatch");
    if (regularization < 0.0) throw ArgumentError("tps_fit: regularization must be >= 0");

    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n + 3, n + 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double u = tps_kernel((sources[i] - sources[j]).squaredNorm());
            L(i, j) = u;
            L(j, i) = u;
        }
        L(i, i) = regularization;
        L(i, n) = 1.0;
        L(i, n + 1) = sources[i].x();
        L(i, n + 2) = sources[i].y();
        L(n, i) = 1.0;
        L(n + 1, i) = sources[i].x();
        L(n + 2, i) = sources[i].y();
    }

    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        rhs(i, 0) = targets[i].x();
        rhs(i, 1) = targets[i].y();
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
    if (!lu.isInvertible())
        throw FitError(
            "tps_fit: rank-deficient system (collinear or duplicate control points), rank " +
            std::to_string(lu.rank()) + " of " + std::to_string(n + 3));
    const Eigen::MatrixXd sol = lu.solve(rhs);

    TpsTransform t;
    t.control_points = sources;
    t.regularization = regularization;
    t.nonaffine_weights.reserve(sources.size());
    for (Eigen::Index i = 0; i < n; ++i) t.nonaffine_weights.emplace_back(sol(i, 0), sol(i, 1));
    for (int coord = 0; coord < 2; ++coord)
        for (int k = 0; k < 3; ++k) t.affine(coord, k) = sol(n + k, coord);
    return t;
}

Vec2 tps_apply(const TpsTransform& t, const Vec2& p) {
    Vec2 out(t.affine(0, 0) + t.affine(0, 1) * p.x() + t.affine(0, 2) * p.y(),
             t.affine(1, 0) + t.affine(1, 1) * p.x() + t.affine(1, 2) * p.y());
    for (std::size_t i = 0; i < t.control_points.size(); ++i) {
        const double u = tps_kernel((p - t.control_points[i]).squaredNorm());
        out += u * t.nonaffine_weights[i];
    }
    return out;
}

double bending_energy(const TpsTransform& t) {
    const std::size_t n = t.control_points.size();
    double energy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double u =
                tps_kernel((t.control_points[i] - t.control_points[j]).squaredNorm());
            energy += u * t.nonaffine_weights[i].dot(t.nonaffine_weights[j]);
        }
    return energy;
}

double default_regularization(const std::vector<Vec2>& points) {
    const std::size_t n = points.size();
    if (n < 2) return 0.0;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            sum += (points[i] - points[j]).squaredNorm();
            ++pairs;
        }
    return 1e-9 * sum / static_cast<double>(pairs);
}

namespace {

std::vector<Vec2> displaced_points(const SamplingGrid& grid, const DisplacementField& field) {
    if (!field.grid.same_layout(grid) || field.vectors.size() != grid.points.size())
        throw ArgumentError("displacement field does not belong to this grid");
    std::vector<Vec2> pts;
    pts.reserve(grid.points.size());
    for (std::size_t i = 0; i < grid.points.size(); ++i)
        pts.push_back(grid.points[i] + field.vectors[i]);
    return pts;
}

} // namespace

TpsMap distort_map(const SamplingGrid& grid, const DisplacementField& field,
                   double regularization) {
    return TpsMap{tps_fit(displaced_points(grid, field), grid.points, regularization)};
}

TpsMap rectify_map(const SamplingGrid& grid, const DisplacementField& field,
                   double regularization) {
    return TpsMap{tps_fit(grid.points, displaced_points(grid, field), regularization)};
}

} // namespace fprect
