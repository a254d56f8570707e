#include "fprect/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "fprect/text_io.hpp"
#include "fprect/tps.hpp"

namespace fprect {

namespace {

constexpr int kOrientationBins = 16;

// Smooth random direction field as a sum of low-frequency plane waves,
// decoded to an orientation via the doubled-angle trick.
struct OrientationField {
    std::vector<double> cos2, sin2;
    int size;

    static OrientationField make(int size, double smoothness, double bias, Rng& rng) {
        OrientationField f;
        f.size = size;
        f.cos2.assign(static_cast<std::size_t>(size) * size, 0.0);
        f.sin2.assign(f.cos2.size(), 0.0);
        const int waves = 6;
        for (int w = 0; w < waves; ++w) {
            const double wavelength = smoothness * rng.uniform(1.0, 3.0);
            const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double kx = std::cos(dir) * 2.0 * std::numbers::pi / wavelength;
            const double ky = std::sin(dir) * 2.0 * std::numbers::pi / wavelength;
            const double phase_c = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double phase_s = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double amp_c = rng.normal();
            const double amp_s = rng.normal();
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double arg = kx * x + ky * y;
                    f.cos2[static_cast<std::size_t>(y) * size + x] +=
                        amp_c * std::cos(arg + phase_c);
                    f.sin2[static_cast<std::size_t>(y) * size + x] +=
                        amp_s * std::cos(arg + phase_s);
                }
        }
        for (auto& v : f.cos2) v += bias;
        return f;
    }

    double orientation(int x, int y) const {
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        return 0.5 * std::atan2(sin2[i], cos2[i]);
    }
};

// Oriented band-pass kernel: Gabor along the wave axis, Gaussian along the
// ridge axis, DC-corrected so flat regions respond with zero.
std::vector<double> make_kernel(double ridge_orientation, double period, int radius) {
    const double wave_dir = ridge_orientation + std::numbers::pi / 2.0;
    const double cw = std::cos(wave_dir), sw = std::sin(wave_dir);
    const double sigma_u = period / 2.0;
    const double sigma_v = period;

    const int k = 2 * radius + 1;
    std::vector<double> kernel(static_cast<std::size_t>(k) * k);
    std::vector<double> envelope(kernel.size());
    double kernel_sum = 0.0, envelope_sum = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double u = cw * dx + sw * dy;
            const double v = -sw * dx + cw * dy;
            const double env = std::exp(-(u * u / (2.0 * sigma_u * sigma_u) +
                                          v * v / (2.0 * sigma_v * sigma_v)));
            const double val = env * std::cos(2.0 * std::numbers::pi * u / period);
            const std::size_t i = static_cast<std::size_t>(dy + radius) * k + (dx + radius);
            kernel[i] = val;
            envelope[i] = env;
            kernel_sum += val;
            envelope_sum += env;
        }
    const double dc = kernel_sum / envelope_sum;
    for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] -= dc * envelope[i];
    return kernel;
}

} // namespace

Image generate_ridge_image(const RidgeParams& params, int size) {
    if (params.period < 4.0) throw ArgumentError("generate_ridge_image: period must be >= 4");
    if (params.iterations < 1)
        throw ArgumentError("generate_ridge_image: iterations must be >= 1");
    if (!(params.contrast > 0.0 && params.contrast <= 1.0))
        throw ArgumentError("generate_ridge_image: contrast must be in (0,1]");

    Rng root(params.orientation_seed);
    Rng noise_rng = root.fork(1);
    Rng orient_rng = root.fork(2);

    // Per-pixel orientation bin.
    std::vector<int> bin(static_cast<std::size_t>(size) * size, 0);
    if (params.fixed_orientation) {
        const double theta = *params.fixed_orientation;
        int b = static_cast<int>(std::llround(theta / std::numbers::pi * kOrientationBins));
        b = ((b % kOrientationBins) + kOrientationBins) % kOrientationBins;
        std::fill(bin.begin(), bin.end(), b);
    } else {
        OrientationField field =
            OrientationField::make(size, params.smoothness, params.orientation_bias, orient_rng);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double theta = field.orientation(x, y); // (-pi/2, pi/2]
                int b = static_cast<int>(
                    std::llround(theta / std::numbers::pi * kOrientationBins));
                b = ((b % kOrientationBins) + kOrientationBins) % kOrientationBins;
                bin[static_cast<std::size_t>(y) * size + x] = b;
            }
    }

    const int radius = static_cast<int>(std::ceil(params.period * 1.25));
    std::vector<std::vector<double>> kernels;
    kernels.reserve(kOrientationBins);
    for (int b = 0; b < kOrientationBins; ++b)
        kernels.push_back(make_kernel(b * std::numbers::pi / kOrientationBins, params.period,
                                      radius));

    std::vector<double> cur(static_cast<std::size_t>(size) * size);
    for (auto& v : cur) v = noise_rng.uniform() - 0.5;

    std::vector<double> next(cur.size());
    const int k = 2 * radius + 1;
    for (int iter = 0; iter < params.iterations; ++iter) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const auto& kernel = kernels[bin[static_cast<std::size_t>(y) * size + x]];
                double acc = 0.0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= size) continue;
                    const std::size_t krow = static_cast<std::size_t>(dy + radius) * k;
                    const std::size_t irow = static_cast<std::size_t>(yy) * size;
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= size) continue;
                        acc += kernel[krow + (dx + radius)] * cur[irow + xx];
                    }
                }
                next[static_cast<std::size_t>(y) * size + x] = acc;
            }
        // Squash to keep amplitudes bounded between passes.
        double rms = 0.0;
        for (double v : next) rms += v * v;
        rms = std::sqrt(rms / static_cast<double>(next.size())) + 1e-30;
        for (std::size_t i = 0; i < next.size(); ++i) cur[i] = std::tanh(next[i] / rms);
    }

    double lo = cur[0], hi = cur[0];
    for (double v : cur) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? hi - lo : 1.0;

    Image img(size, size);
    for (std::size_t i = 0; i < cur.size(); ++i) {
        const double unit = (cur[i] - lo) / span;
        img.data[i] = 0.5 + params.contrast * (unit - 0.5);
    }
    return img;
}

DisplacementField deformation_field(const SamplingGrid& grid, const DeformationParams& params) {
    if (!(params.falloff_radius > 0.0))
        throw ArgumentError("deformation_field: falloff_radius must be positive");
    if (params.kind == DeformationKind::press &&
        std::abs(params.direction.norm() - 1.0) > 1e-9)
        throw ArgumentError("deformation_field: press direction must have unit norm");

    DisplacementField f{grid, {}};
    f.vectors.reserve(grid.points.size());
    const double inv_two_r2 = 1.0 / (2.0 * params.falloff_radius * params.falloff_radius);
    for (const auto& p : grid.points) {
        const Vec2 r = p - params.center;
        const double g = std::exp(-r.squaredNorm() * inv_two_r2);
        if (params.kind == DeformationKind::torque) {
            const double angle = params.magnitude * g;
            const Vec2 rotated(std::cos(angle) * r.x() - std::sin(angle) * r.y(),
                               std::sin(angle) * r.x() + std::cos(angle) * r.y());
            f.vectors.push_back(rotated - r);
        } else {
            f.vectors.push_back(params.magnitude * g * params.direction);
        }
    }
    return f;
}

int canvas_from_grid(const SamplingGrid& grid) {
    const double extent_x = 2.0 * grid.origin.x() + (grid.cols - 1) * grid.spacing;
    const double extent_y = 2.0 * grid.origin.y() + (grid.rows - 1) * grid.spacing;
    return static_cast<int>(std::lround(std::max(extent_x, extent_y)));
}

DistortionModel build_reference_model(const SamplingGrid& grid, int n_fields,
                                      std::uint64_t seed, int t) {
    if (n_fields < t + 1)
        throw ArgumentError("build_reference_model: n_fields must be at least t + 1");

    const double canvas = canvas_from_grid(grid);
    const double scale = canvas / 256.0; // documented ranges are stated at 256 px

    Rng root(seed);
    std::vector<DisplacementField> fields;
    fields.reserve(n_fields);
    for (int i = 0; i < n_fields; ++i) {
        Rng rng = root.fork(i);
        DeformationParams p;
        p.kind = (i % 2 == 0) ? DeformationKind::torque : DeformationKind::press;
        p.center = Vec2(rng.uniform(canvas / 3.0, 2.0 * canvas / 3.0),
                        rng.uniform(canvas / 3.0, 2.0 * canvas / 3.0));
        // 50-100 px at the 256 px reference scale: local enough that both
        // principal modes survive the translation projection with usable
        // image signal (wider radii leave the second mode ~25x weaker).
        p.falloff_radius = rng.uniform(50.0, 100.0) * scale;
        if (p.kind == DeformationKind::torque) {
            // Doubled against the pre-projection baseline: the twist must
            // stay resolvable against the sources' own orientation spread.
            p.magnitude = rng.uniform(-0.6, 0.6);
        } else {
            // Tripled against the torque-matched baseline so the press
            // mode keeps comparable variance once net translation is removed.
            p.magnitude = rng.uniform(-60.0, 60.0) * scale;
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            p.direction = Vec2(std::cos(angle), std::sin(angle));
        }
        DisplacementField field = deformation_field(grid, p);
        // Drop each field's net translation: it is a registration offset
        // rather than distortion, and the center-of-mass normalization
        // removes it from the images, which would leave its coefficient
        // unlearnable.
        Vec2 mean = Vec2::Zero();
        for (const auto& v : field.vectors) mean += v;
        mean /= static_cast<double>(field.vectors.size());
        for (auto& v : field.vectors) v -= mean;
        fields.push_back(std::move(field));
    }
    return fit_pca(fields, t);
}

namespace {

std::string record_image_name(std::size_t source_index, int variant) {
    char buf[64];
    if (variant == 0)
        std::snprintf(buf, sizeof(buf), "src%04zu_orig.pgm", source_index);
    else
        std::snprintf(buf, sizeof(buf), "src%04zu_v%03d.pgm", source_index, variant);
    return std::string("images/") + buf;
}

std::string source_name(std::size_t source_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "src%04zu", source_index);
    return buf;
}

} // namespace

DatasetManifest plan_dataset(std::size_t n_sources, const DistortionModel& model,
                             int variants_per_source, std::uint64_t seed) {
    if (variants_per_source < 0)
        throw ArgumentError("plan_dataset: variants_per_source must be >= 0");
    DatasetManifest m;
    m.records.reserve(dataset_record_count(n_sources, variants_per_source));
    Rng root(seed);
    std::size_t ordinal = 0;
    for (std::size_t s = 0; s < n_sources; ++s) {
        for (int v = 0; v <= variants_per_source; ++v, ++ordinal) {
            ManifestRecord rec;
            rec.image_path = record_image_name(s, v);
            rec.source_id = source_name(s);
            Rng stream = root.fork(ordinal);
            rec.seed = stream.next_u64();
            if (v == 0) {
                rec.coefficients = CoefficientVector::Zero(model.t());
            } else {
                Rng sampler(rec.seed);
                rec.coefficients = sample_coefficients(sampler, model.t());
            }
            m.records.push_back(std::move(rec));
        }
    }
    return m;
}

DatasetManifest generate_dataset(const std::vector<Image>& sources, const DistortionModel& model,
                                 int variants_per_source, std::uint64_t seed,
                                 const std::string& out_dir) {
    const int out_size = canvas_from_grid(model.grid);
    for (const auto& src : sources)
        if (src.width < out_size || src.height < out_size)
            throw ArgumentError("generate_dataset: model grid does not fit inside the canvas");

    DatasetManifest plan = plan_dataset(sources.size(), model, variants_per_source, seed);

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");

    const double alpha = default_regularization(model.grid.points);
    DatasetManifest out;
    out.format_version = plan.format_version;
    out.model_path = "model.fpm";
    save_model(model, (fs::path(out_dir) / "model.fpm").string());

    const std::size_t stride = variants_per_source + 1;
    for (std::size_t i = 0; i < plan.records.size(); ++i) {
        const ManifestRecord& rec = plan.records[i];
        const Image& src = sources[i / stride];
        const bool is_original = (i % stride) == 0;
        try {
            Image rendered;
            if (is_original) {
                rendered = preprocess(src, out_size);
            } else {
                DisplacementField field = synthesize_field(model, rec.coefficients);
                Image distorted = warp_backward(src, distort_map(model.grid, field, alpha), 1.0);
                rendered = preprocess(distorted, out_size);
            }
            save_pgm(rendered, (fs::path(out_dir) / rec.image_path).string());
            out.records.push_back(rec);
        } catch (const PreprocessError&) {
            out.rejected.push_back(rec.source_id + ":" + rec.image_path);
        }
    }

    save_manifest(out, (fs::path(out_dir) / "manifest.txt").string());
    return out;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "fprmanifest " << manifest.format_version << " " << manifest.model_path << "\n";
    for (const auto& rec : manifest.records) {
        out << rec.image_path << " " << rec.source_id << " ";
        for (Eigen::Index i = 0; i < rec.coefficients.size(); ++i) {
            if (i) out << ",";
            out << format_real(rec.coefficients[i]);
        }
        out << " " << rec.seed << "\n";
    }
    out << "rejected " << manifest.rejected.size();
    for (const auto& r : manifest.rejected) out << " " << r;
    out << "\n";
    if (!out) throw IoError("write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    DatasetManifest m;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("manifest: empty file " + path);
    {
        std::istringstream head(line);
        std::string magic;
        head >> magic >> m.format_version >> m.model_path;
        if (magic != "fprmanifest")
            throw ParseError("manifest: bad magic '" + magic + "' in " + path);
        if (m.format_version != 1)
            throw ParseError("manifest: version mismatch in " + path);
    }
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string first;
        row >> first;
        if (first == "rejected") {
            std::size_t count = 0;
            row >> count;
            std::string id;
            while (row >> id) m.rejected.push_back(id);
            if (m.rejected.size() != count)
                throw ParseError("manifest: rejected count mismatch in " + path);
            continue;
        }
        ManifestRecord rec;
        rec.image_path = first;
        std::string coeffs;
        if (!(row >> rec.source_id >> coeffs >> rec.seed))
            throw ParseError("manifest: malformed record '" + line.substr(0, 48) + "' in " +
                             path);
        std::vector<double> vals;
        std::istringstream cs(coeffs);
        std::string tok;
        while (std::getline(cs, tok, ',')) vals.push_back(std::strtod(tok.c_str(), nullptr));
        rec.coefficients = Eigen::Map<Eigen::VectorXd>(vals.data(),
                                                       static_cast<Eigen::Index>(vals.size()));
        m.records.push_back(std::move(rec));
    }
    return m;
}

} // namespace fprect
