#ifndef FPRECT_RECTIFY_HPP
#define FPRECT_RECTIFY_HPP

#include <string>
#include <utility>
#include <vector>

#include "fprect/network.hpp"

namespace fprect {

// Pre-rendered distorted templates for nearest-neighbor estimation; the
// baseline whose query cost grows with the entry count.
struct Dictionary {
    std::string model_path;
    int signature_size = 0; // side length of the preprocessed signatures
    std::vector<CoefficientVector> coefficients;
    std::vector<std::vector<float>> signatures; // flattened, one per entry

    std::size_t entry_count() const { return coefficients.size(); }
};

// Preprocess to the network input size, eval-mode forward, return the
// unclamped outputs.
CoefficientVector estimate(const NetworkF& net, const Image& img);

// Synthesize the field for c and backward-warp through the inverse TPS.
// Output canvas equals the input canvas; uncovered regions fill white.
Image rectify_image(const Image& img, const CoefficientVector& c, const DistortionModel& model);

std::pair<Image, CoefficientVector> rectify_pipeline(const NetworkF& net,
                                                     const DistortionModel& model,
                                                     const Image& img);

// Renders one preprocessed reference per coefficient vector from the first
// (canonical) source.
Dictionary build_dictionary(const DistortionModel& model, const std::vector<Image>& sources,
                            const std::vector<CoefficientVector>& coefficient_grid);

// Linear scan for the entry with minimum Euclidean distance to the
// preprocessed query; ties break toward the lowest index.
CoefficientVector nn_estimate(const Dictionary& dict, const Image& img);

// Scan core over an already-prepared signature; lets callers that share
// preprocessing (evaluation, benchmarks) time the search step alone.
CoefficientVector nn_estimate_prepared(const Dictionary& dict,
                                       const std::vector<float>& signature);

// Flattened float32 view of a preprocessed image.
std::vector<float> image_signature(const Image& prepared);

// Uniform t-dimensional lattice over [-2,2]^t with `per_axis` points per axis.
std::vector<CoefficientVector> coefficient_lattice(int t, int per_axis);

void save_dictionary(const Dictionary& dict, const std::string& path);
Dictionary load_dictionary(const std::string& path);

} // namespace fprect

#endif
