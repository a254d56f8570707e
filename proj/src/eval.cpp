#include "fprect/eval.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fprect/text_io.hpp"
#include "fprect/tps.hpp"

namespace fprect {

long ConfusionMatrix::total() const {
    long t = 0;
    for (const auto& row : counts)
        for (long v : row) t += v;
    return t;
}

long ConfusionMatrix::row_sum(int true_class) const {
    long t = 0;
    for (long v : counts[true_class - 1]) t += v;
    return t;
}

ConfusionMatrix confusion(const std::vector<CoefficientVector>& true_c,
                          const std::vector<CoefficientVector>& pred_c, int basis) {
    if (true_c.size() != pred_c.size())
        throw ArgumentError("confusion: true/predicted count mismatch");
    ConfusionMatrix cm;
    cm.basis_index = basis;
    for (std::size_t i = 0; i < true_c.size(); ++i) {
        const int t = quantize(true_c[i][basis]).index;
        const int p = quantize(pred_c[i][basis]).index;
        ++cm.counts[t - 1][p - 1];
    }
    return cm;
}

double within_k_accuracy(const ConfusionMatrix& cm, int k) {
    const long total = cm.total();
    if (total == 0) throw ArgumentError("within_k_accuracy: empty confusion matrix");
    long inside = 0;
    for (int t = 0; t < kClassCount; ++t)
        for (int p = 0; p < kClassCount; ++p)
            if (std::abs(t - p) <= k) inside += cm.counts[t][p];
    return static_cast<double>(inside) / static_cast<double>(total);
}

bool is_validation_source(const std::string& source_id) {
    return fnv1a(source_id) % 10 == 0;
}

std::vector<ManifestRecord> split_records(const DatasetManifest& manifest, bool validation) {
    std::vector<ManifestRecord> out;
    for (const auto& rec : manifest.records)
        if (is_validation_source(rec.source_id) == validation) out.push_back(rec);
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

TimingSummary summarize(std::vector<double>& times_ms) {
    TimingSummary s;
    if (times_ms.empty()) return s;
    double sum = 0.0;
    for (double t : times_ms) sum += t;
    s.mean_ms = sum / static_cast<double>(times_ms.size());
    std::sort(times_ms.begin(), times_ms.end());
    const std::size_t idx =
        std::min(times_ms.size() - 1,
                 static_cast<std::size_t>(std::ceil(0.95 * times_ms.size())) - 1);
    s.p95_ms = times_ms[idx];
    return s;
}

// Mean per-grid-point displacement of the composed distort(true) o
// rectify(estimated) map; the rectification quality metric.
std::pair<double, double> grid_residuals(const DistortionModel& model,
                                         const CoefficientVector& true_c,
                                         const CoefficientVector& est_c) {
    const DisplacementField true_field = synthesize_field(model, true_c);
    const DisplacementField est_field = synthesize_field(model, est_c);
    const double alpha = default_regularization(model.grid.points);
    TpsMap dm = distort_map(model.grid, true_field, alpha);
    TpsMap rm = rectify_map(model.grid, est_field, alpha);
    double pre = 0.0, post = 0.0;
    for (std::size_t i = 0; i < model.grid.points.size(); ++i) {
        pre += true_field.vectors[i].norm();
        post += (dm(rm(model.grid.points[i])) - model.grid.points[i]).norm();
    }
    const double n = static_cast<double>(model.grid.points.size());
    return {pre / n, post / n};
}

MethodMetrics make_metrics(const std::string& name, const std::vector<CoefficientVector>& truth,
                           const std::vector<CoefficientVector>& preds, int t) {
    MethodMetrics m;
    m.name = name;
    for (int b = 0; b < t; ++b) {
        m.confusions.push_back(confusion(truth, preds, b));
        double se = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double d = preds[i][b] - truth[i][b];
            se += d * d;
        }
        m.rmse.push_back(std::sqrt(se / static_cast<double>(truth.size())));
        m.within1.push_back(within_k_accuracy(m.confusions.back(), 1));
    }
    return m;
}

} // namespace

EvalReport evaluate(const NetworkF& net, const DistortionModel& model,
                    const DatasetManifest& manifest, const std::string& base_dir,
                    const EvalOptions& options) {
    namespace fs = std::filesystem;
    const std::vector<ManifestRecord> records = split_records(manifest, true);
    if (records.empty()) throw ArgumentError("evaluate: validation split is empty");

    EvalReport report;
    report.seed = options.seed;
    report.model_path = options.model_path;
    report.checkpoint_path = options.checkpoint_path;
    report.dataset_path = options.dataset_path;
    report.sample_count = records.size();

    std::vector<CoefficientVector> truth, net_pred, nn_pred;
    double pre_sum = 0.0, post_sum = 0.0;
    long improved = 0;

    for (const auto& rec : records) {
        Image img = load_pgm((fs::path(base_dir) / rec.image_path).string());
        if (img.width != net.input_size || img.height != net.input_size)
            throw ShapeError("evaluate: record " + rec.image_path + " does not match input size");

        const TensorF x = record_tensor(img);
        const auto t0 = Clock::now();
        const TensorF out = forward(net, x);
        const double elapsed =
            options.measure_time
                ? std::chrono::duration<double, std::milli>(Clock::now() - t0).count()
                : 0.0;

        CoefficientVector pred(net.t_out);
        for (int i = 0; i < net.t_out; ++i) pred[i] = out.data[i];

        const auto [pre, post] = grid_residuals(model, rec.coefficients, pred);
        pre_sum += pre;
        post_sum += post;
        if (post < pre) ++improved;

        if (options.dictionary) nn_pred.push_back(nn_estimate_prepared(*options.dictionary,
                                                                       image_signature(img)));
        truth.push_back(rec.coefficients);
        net_pred.push_back(pred);

        SampleRow row;
        row.sample_id = rec.source_id + "/" + fs::path(rec.image_path).stem().string();
        row.true_c = rec.coefficients;
        row.pred_c = pred;
        row.residual_pre = pre;
        row.residual_post = post;
        row.time_ms = elapsed;
        report.samples.push_back(std::move(row));
    }

    report.network = make_metrics("network", truth, net_pred, net.t_out);
    if (options.dictionary)
        report.dictionary = make_metrics("dictionary", truth, nn_pred, net.t_out);
    report.mean_residual_pre = pre_sum / static_cast<double>(records.size());
    report.mean_residual_post = post_sum / static_cast<double>(records.size());
    report.residual_improved_fraction =
        static_cast<double>(improved) / static_cast<double>(records.size());
    if (options.measure_time) {
        std::vector<double> times;
        for (const auto& s : report.samples) times.push_back(s.time_ms);
        report.timing_network = summarize(times);
    }
    return report;
}

namespace {

void write_metrics(std::ofstream& out, const MethodMetrics& m) {
    out << "method " << m.name << "\n";
    for (const auto& cm : m.confusions) {
        out << "confusion " << cm.basis_index << "\n";
        for (int t = 0; t < kClassCount; ++t) {
            for (int p = 0; p < kClassCount; ++p) {
                if (p) out << " ";
                out << cm.counts[t][p];
            }
            out << "\n";
        }
    }
    out << "rmse";
    for (double v : m.rmse) out << " " << format_real(v);
    out << "\nwithin1";
    for (double v : m.within1) out << " " << format_real(v);
    out << "\n";
}

} // namespace

void save_report(const EvalReport& report, const std::string& report_path,
                 const std::string& csv_path) {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw IoError("cannot open " + report_path + " for writing");
    out << "fprreport 1\n";
    out << "seed " << report.seed << "\n";
    out << "model " << (report.model_path.empty() ? "-" : report.model_path) << "\n";
    out << "checkpoint " << (report.checkpoint_path.empty() ? "-" : report.checkpoint_path)
        << "\n";
    out << "dataset " << (report.dataset_path.empty() ? "-" : report.dataset_path) << "\n";
    out << "samples " << report.sample_count << "\n";
    write_metrics(out, report.network);
    if (report.dictionary) write_metrics(out, *report.dictionary);
    out << "residual_pre_mean " << format_real(report.mean_residual_pre) << "\n";
    out << "residual_post_mean " << format_real(report.mean_residual_post) << "\n";
    out << "residual_improved_fraction " << format_real(report.residual_improved_fraction)
        << "\n";
    if (report.timing_network)
        out << "timing_network_ms " << format_real(report.timing_network->mean_ms) << " "
            << format_real(report.timing_network->p95_ms) << "\n";
    if (!out) throw IoError("write failed for " + report_path);

    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot open " + csv_path + " for writing");
    const int t = report.samples.empty() ? 0 : static_cast<int>(report.samples[0].true_c.size());
    csv << "sample_id";
    for (int i = 1; i <= t; ++i) csv << ",true_c" << i;
    for (int i = 1; i <= t; ++i) csv << ",pred_c" << i;
    csv << ",residual_pre,residual_post,time_ms\n";
    for (const auto& s : report.samples) {
        csv << s.sample_id;
        for (int i = 0; i < t; ++i) csv << "," << format_real(s.true_c[i]);
        for (int i = 0; i < t; ++i) csv << "," << format_real(s.pred_c[i]);
        csv << "," << format_real(s.residual_pre) << "," << format_real(s.residual_post) << ","
            << format_real(s.time_ms) << "\n";
    }
    if (!csv) throw IoError("write failed for " + csv_path);
}

BenchResult bench_estimation(const NetworkF& net, const Dictionary& dict,
                             const std::vector<Image>& queries, int repetitions) {
    if (queries.empty()) throw ArgumentError("bench_estimation: no queries");
    if (repetitions < 1) throw ArgumentError("bench_estimation: repetitions must be >= 1");

    // Shared preprocessing happens outside the timed spans.
    std::vector<TensorF> tensors;
    std::vector<std::vector<float>> signatures;
    for (const auto& q : queries) {
        const Image prepared =
            (q.width == net.input_size && q.height == net.input_size)
                ? q
                : preprocess(q, net.input_size);
        tensors.push_back(record_tensor(prepared));
        const Image sig_img = (dict.signature_size == prepared.width)
                                  ? prepared
                                  : preprocess(q, dict.signature_size);
        signatures.push_back(image_signature(sig_img));
    }

    // Warm-up pass, excluded from the statistics.
    forward(net, tensors.front());
    nn_estimate_prepared(dict, signatures.front());

    std::vector<double> net_times, dict_times;
    for (int rep = 0; rep < repetitions; ++rep)
        for (std::size_t q = 0; q < tensors.size(); ++q) {
            const auto t0 = Clock::now();
            volatile float sink = forward(net, tensors[q]).data[0];
            (void)sink;
            net_times.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - t0).count());

            const auto t1 = Clock::now();
            volatile double sink2 = nn_estimate_prepared(dict, signatures[q])[0];
            (void)sink2;
            dict_times.push_back(
                std::chrono::duration<double, std::milli>(Clock::now() - t1).count());
        }

    BenchResult result;
    result.network = summarize(net_times);
    result.dictionary = summarize(dict_times);
    result.dictionary_entries = dict.entry_count();
    result.speed_ratio = result.dictionary.mean_ms / result.network.mean_ms;
    return result;
}

void save_bench(const BenchResult& small, const BenchResult& large, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "fprbench 1\n";
    auto block = [&](const char* name, const BenchResult& r) {
        out << name << " entries " << r.dictionary_entries << "\n";
        out << name << " network_ms " << format_real(r.network.mean_ms) << " "
            << format_real(r.network.p95_ms) << "\n";
        out << name << " dictionary_ms " << format_real(r.dictionary.mean_ms) << " "
            << format_real(r.dictionary.p95_ms) << "\n";
        out << name << " speed_ratio " << format_real(r.speed_ratio) << "\n";
    };
    block("small", small);
    block("large", large);
    out << "dictionary_scaling " << format_real(large.dictionary.mean_ms /
                                                small.dictionary.mean_ms)
        << "\n";
    out << "network_invariance " << format_real(large.network.mean_ms / small.network.mean_ms)
        << "\n";
    // Published timings for the same mechanism, for context only.
    out << "reference_times_s dictionary=8.373 network=0.741\n";
    if (!out) throw IoError("write failed for " + path);
}

} // namespace fprect
