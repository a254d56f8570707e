#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fprect/rectify.hpp"
#include "fprect/tps.hpp"
#include "test_util.hpp"

using namespace fprect;

namespace {

DistortionModel zero_mean_model(int canvas) {
    DistortionModel m;
    m.grid = default_grid(canvas);
    const Eigen::Index dim = 2 * m.grid.point_count();
    m.mean_field = Eigen::VectorXd::Zero(dim);
    m.eigenvectors = Eigen::MatrixXd::Zero(dim, 2);
    m.eigenvectors(0, 0) = 1.0;
    m.eigenvectors(3, 1) = 1.0;
    m.eigenvalues = Eigen::VectorXd(2);
    m.eigenvalues << 1.0, 0.5;
    return m;
}

Image ridge_source(int size, std::uint64_t seed, double period = 6.0) {
    RidgeParams p;
    p.period = period;
    p.orientation_seed = seed;
    return generate_ridge_image(p, size);
}

} // namespace

TEST_CASE("rectify_image with zero coefficients and zero mean is the identity") {
    DistortionModel m = zero_mean_model(64);
    Rng rng(3);
    Image img = testutil::random_image(64, 64, rng);
    Image out = rectify_image(img, CoefficientVector::Zero(2), m);
    CHECK(testutil::max_abs_diff(img, out) <= 1e-9);

    CHECK_THROWS_AS(rectify_image(img, CoefficientVector::Zero(3), m), ArgumentError);
}

TEST_CASE("rectifying with the ground-truth coefficients restores the image") {
    SamplingGrid g = default_grid(64);
    DistortionModel model = build_reference_model(g, 80, 21, 2);
    // Period well above the warp's blur scale keeps the round trip
    // interpolation-limited rather than content-limited.
    Image src = ridge_source(64, 77, 16.0);

    CoefficientVector c(2);
    c << 1.2, -0.8;
    const DisplacementField field = synthesize_field(model, c);
    const double alpha = default_regularization(g.points);
    Image distorted = warp_backward(src, distort_map(g, field, alpha), 1.0);
    Image rectified = rectify_image(distorted, c, model);

    // Central 80% of the canvas.
    double err = 0.0;
    int count = 0;
    for (int y = 6; y < 58; ++y)
        for (int x = 6; x < 58; ++x) {
            err += std::abs(rectified.at(x, y) - src.at(x, y));
            ++count;
        }
    CHECK(err / count <= 0.02);

    // Geometric residual at grid points drops below 5% of the distortion.
    TpsMap dm = distort_map(g, field, alpha);
    TpsMap rm = rectify_map(g, field, alpha);
    double pre = 0.0, post = 0.0;
    for (std::size_t i = 0; i < g.points.size(); ++i) {
        pre += field.vectors[i].norm();
        post += (dm(rm(g.points[i])) - g.points[i]).norm();
    }
    CHECK(post <= 0.05 * pre);
}

TEST_CASE("estimate is deterministic and validates its input") {
    NetworkF net = build_desk_network(64, 2, 5);
    Image img = ridge_source(96, 11);
    CoefficientVector a = estimate(net, img);
    CoefficientVector b = estimate(net, img);
    REQUIRE(a.size() == 2);
    CHECK(a == b);

    Image blank(64, 64, 1.0);
    CHECK_THROWS_AS(estimate(net, blank), PreprocessError);
}

TEST_CASE("rectify_pipeline composes estimate and rectify_image") {
    NetworkF net = build_desk_network(64, 2, 7);
    DistortionModel model = zero_mean_model(64);
    Image img = ridge_source(96, 13);
    auto [out, c] = rectify_pipeline(net, model, img);
    CHECK(out.width == img.width);
    CHECK(out.height == img.height);
    CHECK(c == estimate(net, img));

    Image blank(64, 64, 0.0);
    CHECK_THROWS_AS(rectify_pipeline(net, model, blank), PreprocessError);
}

TEST_CASE("coefficient_lattice enumerates the class centers") {
    std::vector<CoefficientVector> grid = coefficient_lattice(2, 11);
    CHECK(grid.size() == 121);
    CHECK(grid.front()[0] == -2.0);
    CHECK(grid.front()[1] == -2.0);
    CHECK(grid.back()[0] == 2.0);
    CHECK(grid.back()[1] == 2.0);
    CHECK_THROWS_AS(coefficient_lattice(2, 1), ArgumentError);
}

TEST_CASE("build_dictionary renders one signature per coefficient vector") {
    SamplingGrid g = default_grid(64);
    DistortionModel model = build_reference_model(g, 60, 31, 2);
    std::vector<Image> sources = {ridge_source(64, 41)};

    std::vector<CoefficientVector> grid = coefficient_lattice(2, 5);
    Dictionary dict = build_dictionary(model, sources, grid);
    CHECK(dict.entry_count() == 25);
    CHECK(dict.signature_size == 64);

    // Deterministic given identical inputs.
    Dictionary again = build_dictionary(model, sources, grid);
    for (std::size_t e = 0; e < dict.entry_count(); ++e)
        CHECK(dict.signatures[e] == again.signatures[e]);

    CHECK_THROWS_AS(build_dictionary(model, sources, {}), ArgumentError);
    CHECK_THROWS_AS(build_dictionary(model, {}, grid), ArgumentError);
}

TEST_CASE("nn_estimate returns the coefficients of an exactly matching entry") {
    SamplingGrid g = default_grid(64);
    DistortionModel model = build_reference_model(g, 60, 31, 2);
    std::vector<Image> sources = {ridge_source(64, 41)};
    std::vector<CoefficientVector> grid = coefficient_lattice(2, 5);
    Dictionary dict = build_dictionary(model, sources, grid);

    // Rebuild the exact distorted query that produced entry 7.
    const CoefficientVector& c = grid[7];
    const double alpha = default_regularization(g.points);
    Image query = warp_backward(sources[0],
                                distort_map(g, synthesize_field(model, c), alpha), 1.0);
    CoefficientVector found = nn_estimate(dict, query);
    CHECK(found == c);

    CHECK_THROWS_AS(nn_estimate(Dictionary{}, query), ArgumentError);
}

TEST_CASE("dictionaries round trip through their container format") {
    SamplingGrid g = default_grid(64);
    DistortionModel model = build_reference_model(g, 60, 31, 2);
    Dictionary dict = build_dictionary(model, {ridge_source(64, 43)}, coefficient_lattice(2, 3));
    dict.model_path = "model.fpm";

    const auto path = testutil::tmp_path("dict.fpd");
    save_dictionary(dict, path);
    Dictionary back = load_dictionary(path);
    CHECK(back.model_path == dict.model_path);
    CHECK(back.signature_size == dict.signature_size);
    REQUIRE(back.entry_count() == dict.entry_count());
    for (std::size_t e = 0; e < dict.entry_count(); ++e) {
        CHECK(back.coefficients[e] == dict.coefficients[e]);
        CHECK(back.signatures[e] == dict.signatures[e]);
    }

    // Truncation is detected.
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto cut = testutil::tmp_path("dict_cut.fpd");
    std::ofstream(cut, std::ios::binary) << all.substr(0, all.size() - 32);
    CHECK_THROWS_WITH_AS(load_dictionary(cut), doctest::Contains("truncated"), ParseError);
}
