#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fprect/distortion_model.hpp"
#include "fprect/tps.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fprect;

namespace {

DisplacementField random_field(const SamplingGrid& g, Rng& rng, double amp = 3.0) {
    DisplacementField f{g, {}};
    for (std::size_t i = 0; i < g.points.size(); ++i)
        f.vectors.emplace_back(rng.uniform(-amp, amp), rng.uniform(-amp, amp));
    return f;
}

} // namespace

TEST_CASE("fit_pca on identical fields gives the mean with zero spectrum") {
    SamplingGrid g = build_grid(3, 3, 10.0, Vec2(0, 0));
    Rng rng(41);
    DisplacementField f = random_field(g, rng);
    DistortionModel m = fit_pca({f, f, f, f}, 2);
    CHECK((m.mean_field - flatten(f)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(m.eigenvalues[0] <= 1e-12);
    CHECK(m.eigenvalues[1] <= 1e-12);
}

TEST_CASE("fit_pca recovers a rank-1 family") {
    SamplingGrid g = build_grid(3, 3, 10.0, Vec2(0, 0));
    const Eigen::Index dim = 2 * g.point_count();

    Rng rng(43);
    Eigen::VectorXd u(dim);
    for (Eigen::Index i = 0; i < dim; ++i) u[i] = rng.normal();
    u.normalize();
    Eigen::VectorXd base(dim);
    for (Eigen::Index i = 0; i < dim; ++i) base[i] = rng.uniform(-2.0, 2.0);

    std::vector<DisplacementField> fields;
    std::vector<double> amps;
    for (int k = 0; k < 12; ++k) {
        const double a = rng.uniform(-5.0, 5.0);
        amps.push_back(a);
        fields.push_back(unflatten(g, base + a * u));
    }

    DistortionModel m = fit_pca(fields, 1);

    double amp_mean = 0.0;
    for (double a : amps) amp_mean += a;
    amp_mean /= static_cast<double>(amps.size());
    double amp_var = 0.0;
    for (double a : amps) amp_var += (a - amp_mean) * (a - amp_mean);
    amp_var /= static_cast<double>(amps.size() - 1);

    CHECK(std::abs(m.eigenvectors.col(0).dot(u)) >= 1.0 - 1e-8);
    CHECK(m.eigenvalues[0] == doctest::Approx(amp_var).epsilon(1e-10));
}

TEST_CASE("fit_pca matches the brute-force Jacobi eigendecomposition oracle") {
    SamplingGrid g = build_grid(2, 3, 10.0, Vec2(0, 0)); // 6 points, dim 12
    const Eigen::Index dim = 2 * g.point_count();
    Rng rng(47);

    for (int instance = 0; instance < 5; ++instance) {
        std::vector<DisplacementField> fields;
        std::vector<std::vector<double>> rows;
        for (int k = 0; k < 20; ++k) {
            DisplacementField f = random_field(g, rng);
            fields.push_back(f);
            Eigen::VectorXd flat = flatten(f);
            rows.emplace_back(flat.data(), flat.data() + dim);
        }

        const int t = 4;
        DistortionModel m = fit_pca(fields, t);
        oracles::EigResult ref = oracles::jacobi_eigen(oracles::covariance(rows));

        for (int i = 0; i < t; ++i) {
            CHECK(m.eigenvalues[i] == doctest::Approx(ref.values[i]).epsilon(1e-8));
            Eigen::Map<Eigen::VectorXd> rv(ref.vectors[i].data(), dim);
            const double cosine = std::abs(m.eigenvectors.col(i).dot(rv) / rv.norm());
            CHECK(cosine >= 1.0 - 1e-8);
        }
        // Orthonormality of the retained basis.
        Eigen::MatrixXd gram = m.eigenvectors.transpose() * m.eigenvectors;
        CHECK((gram - Eigen::MatrixXd::Identity(t, t)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("fit_pca with full rank reconstructs every training field") {
    SamplingGrid g = build_grid(2, 2, 10.0, Vec2(0, 0)); // dim 8
    Rng rng(53);
    std::vector<DisplacementField> fields;
    for (int k = 0; k < 9; ++k) fields.push_back(random_field(g, rng));

    DistortionModel m = fit_pca(fields, 8);
    for (const auto& f : fields) {
        Eigen::VectorXd centered = flatten(f) - m.mean_field;
        Eigen::VectorXd recon = m.eigenvectors * (m.eigenvectors.transpose() * centered);
        CHECK((recon - centered).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("fit_pca validates its arguments") {
    SamplingGrid g = build_grid(2, 2, 10.0, Vec2(0, 0));
    Rng rng(59);
    DisplacementField f = random_field(g, rng);
    CHECK_THROWS_AS(fit_pca({f}, 1), ArgumentError);
    CHECK_THROWS_AS(fit_pca({f, f}, 2), ArgumentError); // t > #fields - 1
    SamplingGrid other = build_grid(2, 2, 11.0, Vec2(0, 0));
    DisplacementField fo = random_field(other, rng);
    CHECK_THROWS_AS(fit_pca({f, fo, f}, 1), ArgumentError);
}

TEST_CASE("synthesize_field implements the PCA expansion") {
    SamplingGrid g = build_grid(3, 3, 10.0, Vec2(0, 0));
    Rng rng(61);
    std::vector<DisplacementField> fields;
    for (int k = 0; k < 10; ++k) fields.push_back(random_field(g, rng));
    DistortionModel m = fit_pca(fields, 2);

    CoefficientVector zero = CoefficientVector::Zero(2);
    CHECK((flatten(synthesize_field(m, zero)) - m.mean_field).cwiseAbs().maxCoeff() == 0.0);

    CoefficientVector e1(2);
    e1 << 1.0, 0.0;
    Eigen::VectorXd expected =
        m.mean_field + std::sqrt(m.eigenvalues[0]) * m.eigenvectors.col(0);
    CHECK((flatten(synthesize_field(m, e1)) - expected).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(synthesize_field(m, CoefficientVector::Zero(3)), ArgumentError);
}

TEST_CASE("project_field inverts synthesize_field") {
    SamplingGrid g = build_grid(3, 3, 10.0, Vec2(0, 0));
    Rng rng(67);
    std::vector<DisplacementField> fields;
    for (int k = 0; k < 10; ++k) fields.push_back(random_field(g, rng));
    DistortionModel m = fit_pca(fields, 2);

    CoefficientVector c(2);
    c << -2.0, 2.0;
    CoefficientVector back = project_field(m, synthesize_field(m, c));
    CHECK((back - c).cwiseAbs().maxCoeff() <= 1e-9);

    CHECK(project_field(m, unflatten(g, m.mean_field)).cwiseAbs().maxCoeff() <= 1e-12);

    DisplacementField shifted = unflatten(g, m.mean_field + m.eigenvectors.col(0));
    CHECK(project_field(m, shifted)[0] ==
          doctest::Approx(1.0 / std::sqrt(m.eigenvalues[0])).epsilon(1e-9));

    // Near-zero eigenvalue must be reported with the component index.
    DistortionModel degenerate = m;
    degenerate.eigenvalues[1] = 0.0;
    CHECK_THROWS_WITH_AS(project_field(degenerate, fields[0]), doctest::Contains("component 1"),
                         ArgumentError);
}

TEST_CASE("sample_coefficients draws Uniform(-2,2) deterministically") {
    Rng a(71), b(71);
    CoefficientVector ca = sample_coefficients(a, 2);
    CoefficientVector cb = sample_coefficients(b, 2);
    CHECK(ca == cb);

    Rng rng(73);
    double sum0 = 0.0, sumsq0 = 0.0, sum1 = 0.0, sumsq1 = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        CoefficientVector c = sample_coefficients(rng, 2);
        CHECK(c.minCoeff() >= -2.0);
        CHECK(c.maxCoeff() <= 2.0);
        sum0 += c[0];
        sumsq0 += c[0] * c[0];
        sum1 += c[1];
        sumsq1 += c[1] * c[1];
    }
    const double mean0 = sum0 / n, mean1 = sum1 / n;
    CHECK(std::abs(mean0) <= 0.05);
    CHECK(std::abs(mean1) <= 0.05);
    CHECK(std::abs(sumsq0 / n - mean0 * mean0 - 4.0 / 3.0) <= 0.05);
    CHECK(std::abs(sumsq1 / n - mean1 * mean1 - 4.0 / 3.0) <= 0.05);
}

TEST_CASE("quantize maps coefficients to the 11 classes") {
    CHECK(quantize(-2.0).index == 1);
    CHECK(quantize(2.0).index == 11);
    CHECK(quantize(0.0).index == 6);
    CHECK(quantize(-3.5).index == 1);  // clamp
    CHECK(quantize(9.0).index == 11);  // clamp
    CHECK(quantize(-1.8).index == 2);  // tie goes to the higher class

    // Nearest-center oracle on random values.
    Rng rng(79);
    for (int k = 0; k < 200; ++k) {
        const double v = rng.uniform(-2.5, 2.5);
        int best = 1;
        double best_dist = 1e9;
        for (int idx = 1; idx <= kClassCount; ++idx) {
            const double d = std::abs(v - class_center(idx));
            if (d < best_dist - 1e-15) {
                best_dist = d;
                best = idx;
            } else if (std::abs(d - best_dist) <= 1e-15) {
                best = std::max(best, idx);
            }
        }
        CHECK(quantize(v).index == best);
    }

    // Monotone and idempotent on centers.
    int prev = 1;
    for (double v = -2.4; v <= 2.4; v += 0.01) {
        const int k = quantize(v).index;
        CHECK(k >= prev);
        prev = k;
    }
    for (int idx = 1; idx <= kClassCount; ++idx)
        CHECK(quantize(class_center(idx)).index == idx);
}

TEST_CASE("model files round trip bit-exactly and reject corruption") {
    SamplingGrid g = build_grid(3, 4, 12.5, Vec2(7.25, -3.5));
    Rng rng(83);
    std::vector<DisplacementField> fields;
    for (int k = 0; k < 8; ++k) fields.push_back(random_field(g, rng));
    DistortionModel m = fit_pca(fields, 3);

    const auto path = testutil::tmp_path("model.fpm");
    save_model(m, path);
    DistortionModel back = load_model(path);

    CHECK(back.grid.rows == m.grid.rows);
    CHECK(back.grid.cols == m.grid.cols);
    CHECK(back.grid.spacing == m.grid.spacing);
    CHECK(back.grid.origin == m.grid.origin);
    CHECK(back.mean_field == m.mean_field);
    CHECK(back.eigenvalues == m.eigenvalues);
    CHECK(back.eigenvectors == m.eigenvectors);

    SUBCASE("truncated file") {
        std::ifstream in(path);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto cut = testutil::tmp_path("model_cut.fpm");
        std::ofstream(cut) << all.substr(0, all.size() / 2);
        CHECK_THROWS_AS(load_model(cut), ParseError);
    }
    SUBCASE("version mismatch") {
        const auto vpath = testutil::tmp_path("model_v9.fpm");
        std::ifstream in(path);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        all.replace(all.find("fprmodel 1"), 10, "fprmodel 9");
        std::ofstream(vpath) << all;
        CHECK_THROWS_WITH_AS(load_model(vpath), doctest::Contains("version"), ParseError);
    }
    SUBCASE("flipped payload digit fails the checksum") {
        std::ifstream in(path);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = all.find("eigenvalues ") + 12;
        all[pos + 3] = (all[pos + 3] == '5') ? '6' : '5';
        const auto bad = testutil::tmp_path("model_bad.fpm");
        std::ofstream(bad) << all;
        CHECK_THROWS_WITH_AS(load_model(bad), doctest::Contains("checksum"), ParseError);
    }
    SUBCASE("eigenvector length mismatch") {
        std::ifstream in(path);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = all.find("eigenvector ");
        const auto end = all.find('\n', pos);
        const auto line = all.substr(pos, end - pos);
        const auto trimmed = line.substr(0, line.rfind(' '));
        all.replace(pos, end - pos, trimmed);
        const auto bad = testutil::tmp_path("model_dim.fpm");
        std::ofstream(bad) << all;
        CHECK_THROWS_WITH_AS(load_model(bad), doctest::Contains("2n"), ParseError);
    }
}
