#ifndef FPRECT_GRID_HPP
#define FPRECT_GRID_HPP

#include <vector>

#include <Eigen/Core>

#include "fprect/errors.hpp"
#include "fprect/image.hpp"

namespace fprect {

// Row-major lattice of reference points: point(r,c) = origin + (c*s, r*s).
struct SamplingGrid {
    int rows = 0;
    int cols = 0;
    double spacing = 0.0;
    Vec2 origin{0.0, 0.0};
    std::vector<Vec2> points;

    int point_count() const { return rows * cols; }

    bool same_layout(const SamplingGrid& other) const {
        return rows == other.rows && cols == other.cols && spacing == other.spacing &&
               origin == other.origin;
    }
};

// Per-grid-point 2-D displacement vectors, distorted minus normal positions.
struct DisplacementField {
    SamplingGrid grid;
    std::vector<Vec2> vectors;
};

SamplingGrid build_grid(int rows, int cols, double spacing, const Vec2& origin);

// Default lattice used throughout: 11x9 points centered on a square canvas,
// spacing canvas/16 (16 px at 256).
SamplingGrid default_grid(int canvas_size);

DisplacementField displacement_between(const SamplingGrid& normal,
                                       const std::vector<Vec2>& distorted);

// Flattened layout is point-major: (dx0, dy0, dx1, dy1, ...).
Eigen::VectorXd flatten(const DisplacementField& field);
DisplacementField unflatten(const SamplingGrid& grid, const Eigen::VectorXd& v);

} // namespace fprect

#endif
