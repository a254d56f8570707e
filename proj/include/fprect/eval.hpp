#ifndef FPRECT_EVAL_HPP
#define FPRECT_EVAL_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fprect/rectify.hpp"

namespace fprect {

// 11x11 tally of (true class, predicted class) pairs for one basis.
struct ConfusionMatrix {
    int basis_index = 0;
    std::array<std::array<long, kClassCount>, kClassCount> counts{}; // [true-1][pred-1]

    long total() const;
    long row_sum(int true_class) const;
};

ConfusionMatrix confusion(const std::vector<CoefficientVector>& true_c,
                          const std::vector<CoefficientVector>& pred_c, int basis);

// Fraction of mass with |row - col| <= k.
double within_k_accuracy(const ConfusionMatrix& cm, int k);

struct TimingSummary {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchResult {
    TimingSummary network;
    TimingSummary dictionary;
    std::size_t dictionary_entries = 0;
    double speed_ratio = 0.0; // dictionary mean / network mean
};

// Wall-clock estimation timings over the queries, warm-up pass excluded.
// Preprocessing is shared by both methods and excluded from the timed span.
BenchResult bench_estimation(const NetworkF& net, const Dictionary& dict,
                             const std::vector<Image>& queries, int repetitions);

struct SampleRow {
    std::string sample_id;
    CoefficientVector true_c;
    CoefficientVector pred_c;
    double residual_pre = 0.0;
    double residual_post = 0.0;
    double time_ms = 0.0;
};

struct MethodMetrics {
    std::string name;
    std::vector<ConfusionMatrix> confusions; // one per basis
    std::vector<double> rmse;                // per basis
    std::vector<double> within1;             // per basis
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::string model_path, checkpoint_path, dataset_path;
    std::size_t sample_count = 0;
    MethodMetrics network;
    std::optional<MethodMetrics> dictionary;
    double mean_residual_pre = 0.0;
    double mean_residual_post = 0.0;
    double residual_improved_fraction = 0.0;
    std::optional<TimingSummary> timing_network; // present only in timed runs
    std::vector<SampleRow> samples;
};

struct EvalOptions {
    std::uint64_t seed = 0;
    bool measure_time = false; // timings make the report nondeterministic
    const Dictionary* dictionary = nullptr;
    std::string model_path, checkpoint_path, dataset_path; // metadata only
};

// Deterministic 90/10 split by source id hash; no variant of a validation
// source ever appears in training.
bool is_validation_source(const std::string& source_id);

std::vector<ManifestRecord> split_records(const DatasetManifest& manifest, bool validation);

// Runs the network (and optionally the dictionary baseline) over the
// validation records of a manifest split.
EvalReport evaluate(const NetworkF& net, const DistortionModel& model,
                    const DatasetManifest& manifest, const std::string& base_dir,
                    const EvalOptions& options);

// Versioned structured-text report plus the per-sample CSV table.
void save_report(const EvalReport& report, const std::string& report_path,
                 const std::string& csv_path);

void save_bench(const BenchResult& small, const BenchResult& large, const std::string& path);

} // namespace fprect

#endif
