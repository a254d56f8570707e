#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fprect/synth.hpp"
#include "fprect/tps.hpp"
#include "test_util.hpp"

using namespace fprect;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Mean-removed autocorrelation along y, normalized by lag 0.
double autocorr_y(const Image& img, int lag) {
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= static_cast<double>(img.size());
    double num = 0.0, den = 0.0;
    for (int y = 0; y + lag < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            num += (img.at(x, y) - mean) * (img.at(x, y + lag) - mean);
            den += (img.at(x, y) - mean) * (img.at(x, y) - mean);
        }
    return num / den;
}

} // namespace

TEST_CASE("generate_ridge_image is deterministic and well-scaled") {
    RidgeParams p;
    p.period = 8.0;
    p.orientation_seed = 99;
    Image a = generate_ridge_image(p, 64);
    Image b = generate_ridge_image(p, 64);
    CHECK(a.data == b.data);

    double lo = 2.0, hi = -1.0, sum = 0.0, sumsq = 0.0;
    for (double v : a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / static_cast<double>(a.size());
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(std::sqrt(sumsq / static_cast<double>(a.size()) - mean * mean) >= 0.1);

    RidgeParams bad = p;
    bad.period = 2.0;
    CHECK_THROWS_AS(generate_ridge_image(bad, 64), ArgumentError);
}

TEST_CASE("constant-orientation ridges carry the requested period") {
    RidgeParams p;
    p.period = 8.0;
    p.orientation_seed = 7;
    p.fixed_orientation = 0.0; // ridge flow along x, wave along y
    Image img = generate_ridge_image(p, 96);

    // Autocorrelation along the perpendicular axis peaks at the period.
    int best_lag = 0;
    double best = -2.0;
    for (int lag = 4; lag <= 16; ++lag) {
        const double ac = autocorr_y(img, lag);
        if (ac > best) {
            best = ac;
            best_lag = lag;
        }
    }
    CHECK(best > 0.0);
    CHECK(std::abs(best_lag - 8) <= 1);
}

TEST_CASE("deformation_field closed forms") {
    SamplingGrid g = build_grid(2, 50, 5.0, Vec2(0, 0));

    SUBCASE("zero magnitude gives the zero field") {
        for (auto kind : {DeformationKind::torque, DeformationKind::press}) {
            DeformationParams p;
            p.kind = kind;
            p.center = Vec2(30, 0);
            p.magnitude = 0.0;
            p.falloff_radius = 40.0;
            DisplacementField f = deformation_field(g, p);
            for (const auto& v : f.vectors) CHECK(v.norm() == 0.0);
        }
    }

    SUBCASE("torque vanishes at the center and decays beyond the falloff radius") {
        DeformationParams p;
        p.kind = DeformationKind::torque;
        p.center = g.points[0]; // (0, 0), on the first row
        p.magnitude = 0.25;
        p.falloff_radius = 40.0;
        DisplacementField f = deformation_field(g, p);
        CHECK(f.vectors[0].norm() == 0.0);

        double prev = -1.0;
        bool first = true;
        for (int c = 0; c < g.cols; ++c) {
            const double r = g.points[c].x();
            if (r <= p.falloff_radius) continue;
            const double mag = f.vectors[c].norm();
            if (!first) CHECK(mag < prev);
            prev = mag;
            first = false;
        }
    }

    SUBCASE("press along (1,0) has no y component and is linear in magnitude") {
        DeformationParams p;
        p.kind = DeformationKind::press;
        p.center = Vec2(100, 2);
        p.direction = Vec2(1, 0);
        p.magnitude = 12.0;
        p.falloff_radius = 50.0;
        DisplacementField f = deformation_field(g, p);
        for (const auto& v : f.vectors) CHECK(v.y() == 0.0);

        DeformationParams p3 = p;
        p3.magnitude = 36.0;
        DisplacementField f3 = deformation_field(g, p3);
        for (std::size_t i = 0; i < f.vectors.size(); ++i) {
            if (f.vectors[i].norm() == 0.0) continue;
            CHECK((f3.vectors[i] - 3.0 * f.vectors[i]).norm() <=
                  1e-12 * f3.vectors[i].norm());
        }
    }

    SUBCASE("torque is linear in the small-angle limit") {
        // Exact rotation deviates from linearity by ~magnitude/4 relative,
        // so the 1e-3 bound needs magnitudes well below the 0.05 rad cap.
        DeformationParams p;
        p.kind = DeformationKind::torque;
        p.center = Vec2(120, 3);
        p.magnitude = 0.002;
        p.falloff_radius = 60.0;
        DisplacementField f = deformation_field(g, p);
        DeformationParams half = p;
        half.magnitude = 0.001;
        DisplacementField fh = deformation_field(g, half);
        for (std::size_t i = 0; i < f.vectors.size(); ++i) {
            const double mag = f.vectors[i].norm();
            if (mag < 1e-6) continue;
            CHECK((f.vectors[i] - 2.0 * fh.vectors[i]).norm() <= 1e-3 * mag);
        }
    }

    SUBCASE("argument validation") {
        DeformationParams p;
        p.falloff_radius = 0.0;
        CHECK_THROWS_AS(deformation_field(g, p), ArgumentError);
        DeformationParams q;
        q.kind = DeformationKind::press;
        q.direction = Vec2(2, 0);
        CHECK_THROWS_AS(deformation_field(g, q), ArgumentError);
    }
}

TEST_CASE("a one-parameter torque family has a rank-1 spectrum") {
    SamplingGrid g = default_grid(256);
    Rng rng(101);
    std::vector<DisplacementField> fields;
    for (int i = 0; i < 24; ++i) {
        DeformationParams p;
        p.kind = DeformationKind::torque;
        p.center = Vec2(128, 128);
        p.falloff_radius = 90.0;
        p.magnitude = rng.uniform(-1e-3, 1e-3); // small angles keep the family linear
        fields.push_back(deformation_field(g, p));
    }
    DistortionModel m = fit_pca(fields, 2);
    CHECK(m.eigenvalues[1] <= 1e-6 * m.eigenvalues[0]);
}

TEST_CASE("build_reference_model produces two genuinely distinct modes") {
    SamplingGrid g = default_grid(256);
    DistortionModel m = build_reference_model(g, 200, 2024, 2);
    CHECK(m.eigenvalues[0] > 0.0);
    CHECK(m.eigenvalues[1] > 0.01 * m.eigenvalues[0]);
}

TEST_CASE("build_reference_model is deterministic in its seed") {
    SamplingGrid g = default_grid(128);
    DistortionModel a = build_reference_model(g, 50, 7, 2);
    DistortionModel b = build_reference_model(g, 50, 7, 2);
    const auto pa = testutil::tmp_path("refmodel_a.fpm");
    const auto pb = testutil::tmp_path("refmodel_b.fpm");
    save_model(a, pa);
    save_model(b, pb);
    CHECK(file_bytes(pa) == file_bytes(pb));
}

TEST_CASE("dataset bookkeeping matches the count formula") {
    CHECK(dataset_record_count(1033, 400) == 414233);
    CHECK(dataset_record_count(3, 5) == 18);
}

TEST_CASE("plan_dataset samples Uniform(-2,2) coefficient marginals") {
    SamplingGrid g = default_grid(64);
    DistortionModel m = build_reference_model(g, 40, 3, 2);
    DatasetManifest plan = plan_dataset(25, m, 400, 12345);
    REQUIRE(plan.records.size() == dataset_record_count(25, 400));

    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> vals;
        for (const auto& rec : plan.records)
            if (rec.coefficients.cwiseAbs().maxCoeff() > 0.0) vals.push_back(rec.coefficients[comp]);
        REQUIRE(vals.size() == 10000);
        std::sort(vals.begin(), vals.end());
        double ks = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double cdf = (vals[i] + 2.0) / 4.0;
            ks = std::max(ks, std::abs((i + 1.0) / vals.size() - cdf));
            ks = std::max(ks, std::abs(static_cast<double>(i) / vals.size() - cdf));
        }
        CHECK(ks <= 0.02);
    }
}

TEST_CASE("generate_dataset renders, records, and reproduces itself") {
    SamplingGrid g = default_grid(64);
    DistortionModel model = build_reference_model(g, 60, 11, 2);

    std::vector<Image> sources;
    for (int s = 0; s < 3; ++s) {
        RidgeParams p;
        p.period = 6.0;
        p.orientation_seed = 500 + s;
        sources.push_back(generate_ridge_image(p, 64));
    }

    namespace fs = std::filesystem;
    const std::string dir_a = testutil::tmp_path("dataset_a");
    const std::string dir_b = testutil::tmp_path("dataset_b");
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    DatasetManifest m1 = generate_dataset(sources, model, 5, 42, dir_a);
    DatasetManifest m2 = generate_dataset(sources, model, 5, 42, dir_b);

    CHECK(m1.records.size() == 18);
    int originals = 0;
    for (const auto& rec : m1.records)
        if (rec.coefficients.cwiseAbs().maxCoeff() == 0.0) ++originals;
    CHECK(originals == 3);
    CHECK(m1.rejected.empty());

    // Byte-identical manifests and images across reruns with one seed.
    CHECK(file_bytes(dir_a + "/manifest.txt") == file_bytes(dir_b + "/manifest.txt"));
    for (const auto& rec : m1.records)
        CHECK(file_bytes(dir_a + "/" + rec.image_path) == file_bytes(dir_b + "/" + rec.image_path));

    // Re-rendering a variant from its manifest coefficients is byte-identical.
    const ManifestRecord& rec = m1.records[2]; // second variant of source 0
    REQUIRE(rec.coefficients.cwiseAbs().maxCoeff() > 0.0);
    DisplacementField field = synthesize_field(model, rec.coefficients);
    const double alpha = default_regularization(model.grid.points);
    Image distorted = warp_backward(sources[0], distort_map(model.grid, field, alpha), 1.0);
    Image rendered = preprocess(distorted, 64);
    const auto replay = testutil::tmp_path("replay.pgm");
    save_pgm(rendered, replay);
    CHECK(file_bytes(replay) == file_bytes(dir_a + "/" + rec.image_path));

    // Manifest round trip.
    DatasetManifest loaded = load_manifest(dir_a + "/manifest.txt");
    REQUIRE(loaded.records.size() == m1.records.size());
    CHECK(loaded.model_path == "model.fpm");
    for (std::size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(loaded.records[i].image_path == m1.records[i].image_path);
        CHECK(loaded.records[i].source_id == m1.records[i].source_id);
        CHECK(loaded.records[i].seed == m1.records[i].seed);
        CHECK(loaded.records[i].coefficients == m1.records[i].coefficients);
    }

    // The written model file loads back to the same model.
    DistortionModel model_back = load_model(dir_a + "/model.fpm");
    CHECK(model_back.mean_field == model.mean_field);

    // Grid larger than the sources is rejected.
    DistortionModel big = build_reference_model(default_grid(128), 60, 11, 2);
    CHECK_THROWS_AS(generate_dataset(sources, big, 1, 1, dir_b), ArgumentError);
}

TEST_CASE("load_manifest rejects malformed files") {
    const auto path = testutil::tmp_path("bad_manifest.txt");
    std::ofstream(path) << "wrongmagic 1 model.fpm\n";
    CHECK_THROWS_AS(load_manifest(path), ParseError);
    std::ofstream(path) << "fprmanifest 9 model.fpm\nrejected 0\n";
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("version"), ParseError);
}
