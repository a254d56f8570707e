#ifndef FPRECT_TPS_HPP
#define FPRECT_TPS_HPP

#include <vector>

#include <Eigen/Core>

#include "fprect/grid.hpp"

namespace fprect {

// Thin-plate spline with kernel U(r) = r^2 log(r^2), U(0) = 0, split into an
// affine part and per-control-point nonaffine weights.
struct TpsTransform {
    std::vector<Vec2> control_points;
    std::vector<Vec2> nonaffine_weights;
    // Row 0 maps x' = a(0,0) + a(0,1)*x + a(0,2)*y, row 1 likewise for y'.
    Eigen::Matrix<double, 2, 3> affine = Eigen::Matrix<double, 2, 3>::Zero();
    double regularization = 0.0;
};

inline double tps_kernel(double squared_dist) {
    return squared_dist > 0.0 ? squared_dist * std::log(squared_dist) : 0.0;
}

// Solves [[K + aI, P],[P^T, 0]] [w; a] = [targets; 0] per output coordinate.
// With regularization 0 the fitted map interpolates the targets exactly.
TpsTransform tps_fit(const std::vector<Vec2>& sources, const std::vector<Vec2>& targets,
                     double regularization);

Vec2 tps_apply(const TpsTransform& t, const Vec2& p);

// w^T K w summed over both output coordinates; zero exactly for affine maps.
double bending_energy(const TpsTransform& t);

// 1e-9 times the mean squared inter-point distance; stabilizes fits on
// near-degenerate point sets while keeping control-point interpolation
// error below 1e-6 on canvas-scale grids.
double default_regularization(const std::vector<Vec2>& points);

// A fitted TPS used as a per-pixel source-coordinate function.
struct TpsMap {
    TpsTransform tps;
    Vec2 operator()(const Vec2& p) const { return tps_apply(tps, p); }
};

// Forward rendering: output pixel at a distorted location samples the normal
// image (sources = grid + field, targets = grid).
TpsMap distort_map(const SamplingGrid& grid, const DisplacementField& field,
                   double regularization);

// Inverse rendering: backward-warping a distorted image through this map
// produces the rectified image (sources = grid, targets = grid + field).
TpsMap rectify_map(const SamplingGrid& grid, const DisplacementField& field,
                   double regularization);

} // namespace fprect

#endif
