#ifndef FPRECT_DISTORTION_MODEL_HPP
#define FPRECT_DISTORTION_MODEL_HPP

#include <string>
#include <vector>

#include <Eigen/Core>

#include "fprect/grid.hpp"
#include "fprect/rng.hpp"

namespace fprect {

// Coefficients of the principal distortion components, in units of standard
// deviations along each component.
using CoefficientVector = Eigen::VectorXd;

// One of the 11 quantized distortion classes, centers -2.0 .. 2.0 step 0.4.
struct DistortionClass {
    int index; // 1..11
};

inline constexpr int kClassCount = 11;
inline constexpr double kClassLow = -2.0;
inline constexpr double kClassStep = 0.4;

inline double class_center(int index) { return kClassLow + kClassStep * (index - 1); }

// PCA model of displacement fields: d_hat = mean + sum_i c_i sqrt(lambda_i) e_i.
// Flattened vectors are point-major (dx0, dy0, dx1, dy1, ...).
struct DistortionModel {
    SamplingGrid grid;
    Eigen::VectorXd mean_field;   // length 2n
    Eigen::MatrixXd eigenvectors; // 2n x t, orthonormal columns
    Eigen::VectorXd eigenvalues;  // t, nonincreasing

    int t() const { return static_cast<int>(eigenvalues.size()); }
};

// Sample PCA over displacement fields sharing one grid. Covariance uses the
// unbiased divisor (#fields - 1); eigenvector signs are fixed so the
// largest-magnitude entry is positive.
DistortionModel fit_pca(const std::vector<DisplacementField>& fields, int t);

DisplacementField synthesize_field(const DistortionModel& model, const CoefficientVector& c);

// c_i = e_i . (d - mean) / sqrt(lambda_i); requires lambda_i > 1e-12.
CoefficientVector project_field(const DistortionModel& model, const DisplacementField& field);

// Each coefficient independently Uniform(-2, 2).
CoefficientVector sample_coefficients(Rng& rng, int t);

// Nearest class center; ties go to the higher class, out-of-range clamps.
DistortionClass quantize(double c_value);

void save_model(const DistortionModel& model, const std::string& path);
DistortionModel load_model(const std::string& path);

} // namespace fprect

#endif
