#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fprect/eval.hpp"
#include "test_util.hpp"

using namespace fprect;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<CoefficientVector> random_coeffs(int n, Rng& rng, double lo = -2.4,
                                             double hi = 2.4) {
    std::vector<CoefficientVector> out;
    for (int i = 0; i < n; ++i) {
        CoefficientVector c(2);
        c << rng.uniform(lo, hi), rng.uniform(lo, hi);
        out.push_back(c);
    }
    return out;
}

} // namespace

TEST_CASE("confusion tallies quantized pairs") {
    Rng rng(3);
    std::vector<CoefficientVector> truth = random_coeffs(50, rng);

    SUBCASE("perfect predictions are diagonal") {
        ConfusionMatrix cm = confusion(truth, truth, 0);
        CHECK(cm.total() == 50);
        for (int t = 0; t < kClassCount; ++t)
            for (int p = 0; p < kClassCount; ++p)
                if (t != p) CHECK(cm.counts[t][p] == 0);
        CHECK(within_k_accuracy(cm, 0) == 1.0);
    }

    SUBCASE("endpoint classes land in the corners") {
        CoefficientVector lo(2), hi(2);
        lo << -2.0, 0.0;
        hi << 2.0, 0.0;
        ConfusionMatrix cm = confusion({lo}, {hi}, 0);
        CHECK(cm.counts[0][10] == 1);
        CHECK(cm.total() == 1);
    }

    SUBCASE("random pairs match a brute-force tally oracle") {
        std::vector<CoefficientVector> preds = random_coeffs(50, rng);
        for (int basis = 0; basis < 2; ++basis) {
            ConfusionMatrix cm = confusion(truth, preds, basis);
            long oracle[kClassCount][kClassCount] = {};
            for (std::size_t i = 0; i < truth.size(); ++i)
                ++oracle[quantize(truth[i][basis]).index - 1]
                        [quantize(preds[i][basis]).index - 1];
            for (int t = 0; t < kClassCount; ++t)
                for (int p = 0; p < kClassCount; ++p) CHECK(cm.counts[t][p] == oracle[t][p]);
            // Row sums are the per-class sample counts.
            long total = 0;
            for (int t = 1; t <= kClassCount; ++t) total += cm.row_sum(t);
            CHECK(total == 50);
        }
    }

    CHECK_THROWS_AS(confusion(truth, random_coeffs(3, rng), 0), ArgumentError);
}

TEST_CASE("within_k_accuracy behaves over the class band") {
    ConfusionMatrix far;
    far.counts[0][10] = 7;
    CHECK(within_k_accuracy(far, 2) == 0.0);
    CHECK(within_k_accuracy(far, 10) == 1.0);

    ConfusionMatrix uniform;
    for (auto& row : uniform.counts) row.fill(1);
    CHECK(within_k_accuracy(uniform, 0) == doctest::Approx(11.0 / 121.0));

    double prev = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double acc = within_k_accuracy(uniform, k);
        CHECK(acc >= prev);
        prev = acc;
    }
    CHECK(prev == 1.0);

    ConfusionMatrix empty;
    CHECK_THROWS_AS(within_k_accuracy(empty, 1), ArgumentError);
}

TEST_CASE("validation split is deterministic and partitions the manifest") {
    CHECK(is_validation_source("src0001") == is_validation_source("src0001"));

    DatasetManifest m;
    for (int s = 0; s < 40; ++s)
        for (int v = 0; v < 3; ++v) {
            ManifestRecord rec;
            char buf[16];
            std::snprintf(buf, sizeof(buf), "src%04d", s);
            rec.source_id = buf;
            rec.image_path = std::string(buf) + "_" + std::to_string(v);
            rec.coefficients = CoefficientVector::Zero(2);
            m.records.push_back(rec);
        }
    auto val = split_records(m, true);
    auto tr = split_records(m, false);
    CHECK(val.size() + tr.size() == m.records.size());
    CHECK(!val.empty());
    CHECK(tr.size() > val.size());
    // No source id appears on both sides.
    for (const auto& v : val)
        for (const auto& t : tr) CHECK(v.source_id != t.source_id);
}

TEST_CASE("evaluate produces a deterministic report over a manifest split") {
    SamplingGrid g = default_grid(32);
    DistortionModel model = build_reference_model(g, 40, 5, 2);
    std::vector<Image> sources;
    for (int s = 0; s < 16; ++s) {
        RidgeParams p;
        p.period = 5.0;
        p.orientation_seed = 300 + s;
        sources.push_back(generate_ridge_image(p, 32));
    }
    const std::string dir = testutil::tmp_path("eval_ds");
    std::filesystem::remove_all(dir);
    DatasetManifest manifest = generate_dataset(sources, model, 3, 99, dir);

    NetworkF net = build_desk_network(32, 2, 13);
    EvalOptions opt;
    opt.seed = 99;
    opt.model_path = "model.fpm";
    Dictionary dict = build_dictionary(model, {sources[0]}, coefficient_lattice(2, 3));
    opt.dictionary = &dict;

    EvalReport r1 = evaluate(net, model, manifest, dir, opt);
    CHECK(r1.sample_count > 0);
    CHECK(r1.sample_count == split_records(manifest, true).size());
    CHECK(r1.network.rmse.size() == 2);
    REQUIRE(r1.dictionary.has_value());
    CHECK(r1.mean_residual_pre > 0.0);
    CHECK(!r1.timing_network.has_value());
    for (const auto& s : r1.samples) CHECK(s.time_ms == 0.0);

    const auto rp1 = testutil::tmp_path("report1.txt");
    const auto cp1 = testutil::tmp_path("samples1.csv");
    const auto rp2 = testutil::tmp_path("report2.txt");
    const auto cp2 = testutil::tmp_path("samples2.csv");
    save_report(r1, rp1, cp1);
    save_report(evaluate(net, model, manifest, dir, opt), rp2, cp2);
    CHECK(file_bytes(rp1) == file_bytes(rp2));
    CHECK(file_bytes(cp1) == file_bytes(cp2));

    // CSV header is the pinned sample-table schema.
    std::ifstream csv(cp1);
    std::string header;
    std::getline(csv, header);
    CHECK(header ==
          "sample_id,true_c1,true_c2,pred_c1,pred_c2,residual_pre,residual_post,time_ms");
}

TEST_CASE("bench_estimation reports timings for both methods") {
    SamplingGrid g = default_grid(32);
    DistortionModel model = build_reference_model(g, 40, 5, 2);
    RidgeParams p;
    p.period = 5.0;
    p.orientation_seed = 21;
    Image src = generate_ridge_image(p, 32);

    NetworkF net = build_desk_network(32, 2, 17);
    Dictionary dict = build_dictionary(model, {src}, coefficient_lattice(2, 3));

    RidgeParams q;
    q.period = 5.0;
    q.orientation_seed = 22;
    std::vector<Image> queries = {generate_ridge_image(q, 48), src};

    BenchResult r = bench_estimation(net, dict, queries, 3);
    CHECK(r.network.mean_ms > 0.0);
    CHECK(r.dictionary.mean_ms > 0.0);
    CHECK(r.network.p95_ms >= r.network.mean_ms * 0.1);
    CHECK(r.dictionary_entries == 9);
    CHECK(r.speed_ratio > 0.0);

    CHECK_THROWS_AS(bench_estimation(net, dict, {}, 3), ArgumentError);
}
