#ifndef FPRECT_SYNTH_HPP
#define FPRECT_SYNTH_HPP

#include <optional>
#include <string>
#include <vector>

#include "fprect/distortion_model.hpp"
#include "fprect/image.hpp"
#include "fprect/rng.hpp"

namespace fprect {

// Parameters of the iterative oriented-filter ridge generator.
struct RidgeParams {
    double period = 8.0;               // ridge wavelength, >= 4 px
    std::uint64_t orientation_seed = 0;
    double smoothness = 32.0;          // low-pass cutoff of the orientation field, px
    int iterations = 3;                // filtering passes, >= 1
    double contrast = 1.0;             // (0, 1]
    // Concentration of ridge flow around the horizontal axis. Real ridge
    // patterns carry an orientation prior; without one, globally rotated
    // patterns are statistically indistinguishable and twist coefficients
    // cannot be estimated from a single image. 0 disables the prior.
    double orientation_bias = 15.0;
    // Overrides the random orientation field with one flow direction
    // (radians); used for frequency-response checks.
    std::optional<double> fixed_orientation;
};

enum class DeformationKind { torque, press };

// Gaussian-falloff torque/press deformation, the parametric stand-in for
// force- and torque-induced skin distortion.
struct DeformationParams {
    DeformationKind kind = DeformationKind::torque;
    Vec2 center{0.0, 0.0};
    double magnitude = 0.0;          // radians for torque, px for press
    Vec2 direction{1.0, 0.0};        // unit vector, press only
    double falloff_radius = 80.0;    // > 0
};

struct ManifestRecord {
    std::string image_path; // relative to the manifest directory
    std::string source_id;
    CoefficientVector coefficients;
    std::uint64_t seed;
};

struct DatasetManifest {
    int format_version = 1;
    std::string model_path;
    std::vector<ManifestRecord> records;
    std::vector<std::string> rejected; // source ids skipped by preprocessing
};

// Deterministic ridge-pattern image with intensities in [0,1].
Image generate_ridge_image(const RidgeParams& params, int size);

// Closed-form displacement of each grid point; g(r) = exp(-r^2/(2 R^2)).
DisplacementField deformation_field(const SamplingGrid& grid, const DeformationParams& params);

// Side length of the square canvas a grid was built for (its bounding box
// plus symmetric margins).
int canvas_from_grid(const SamplingGrid& grid);

// Fits the PCA distortion model to n_fields sampled deformations
// (alternating torque/press, randomized within documented ranges).
DistortionModel build_reference_model(const SamplingGrid& grid, int n_fields,
                                      std::uint64_t seed, int t);

// Samples every record's coefficients and naming without rendering images:
// the dry-run mode of generate_dataset, and its bookkeeping source of truth.
DatasetManifest plan_dataset(std::size_t n_sources, const DistortionModel& model,
                             int variants_per_source, std::uint64_t seed);

// Renders the planned records (distort via TPS, preprocess, write PGMs) and
// writes "manifest.txt" into out_dir. Preprocessing rejections are skipped
// and recorded. Undistorted originals carry c = 0.
DatasetManifest generate_dataset(const std::vector<Image>& sources, const DistortionModel& model,
                                 int variants_per_source, std::uint64_t seed,
                                 const std::string& out_dir);

inline std::size_t dataset_record_count(std::size_t n_sources, std::size_t variants_per_source) {
    return n_sources * (variants_per_source + 1);
}

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

} // namespace fprect

#endif
