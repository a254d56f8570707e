#include "fprect/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "fprect/eval.hpp"
#include "fprect/text_io.hpp"
#include "fprect/tps.hpp"

namespace fprect {

namespace {

namespace fs = std::filesystem;

std::string join_out(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    return (fs::path(out_dir) / name).string();
}

Image ridge_source_for(std::uint64_t seed, std::uint64_t index, double period, int size) {
    RidgeParams p;
    std::uint64_t s = seed;
    Rng rng(splitmix64(s) ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    p.orientation_seed = rng.next_u64();
    // +-10% per-source period jitter keeps absolute ridge frequency from
    // acting as a distortion cue that does not transfer across sources.
    p.period = period * rng.uniform(0.9, 1.1);
    return generate_ridge_image(p, size);
}

std::vector<Image> load_sources_dir(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".pgm") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw UsageError("no .pgm files in --sources-dir " + dir);
    std::vector<Image> sources;
    sources.reserve(paths.size());
    for (const auto& p : paths) sources.push_back(load_pgm(p));
    return sources;
}

void print_coefficients(const CoefficientVector& c) {
    for (Eigen::Index i = 0; i < c.size(); ++i) {
        if (i) std::cout << " ";
        std::cout << format_real(c[i]);
    }
    std::cout << "\n";
}

struct CliState {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

void add_model_fit(CLI::App& app, CliState& st) {
    auto* model = app.add_subcommand("model", "Distortion model commands");
    auto* fit = model->add_subcommand("fit", "Fit the PCA distortion model to sampled "
                                             "torque/press deformation fields");
    auto canvas = std::make_shared<int>(256);
    auto n_fields = std::make_shared<int>(500);
    auto t = std::make_shared<int>(2);
    fit->add_option("--canvas", *canvas, "Canvas side in pixels")->check(CLI::PositiveNumber);
    fit->add_option("--n-fields", *n_fields, "Deformation samples to fit");
    fit->add_option("--t", *t, "Number of principal components");
    fit->callback([&st, canvas, n_fields, t] {
        SamplingGrid grid = default_grid(*canvas);
        DistortionModel m = build_reference_model(grid, *n_fields, st.seed, *t);
        const std::string path = join_out(st.out_dir, "model.fpm");
        save_model(m, path);
        std::cout << "model " << path << " t=" << m.t()
                  << " lambda1=" << format_real(m.eigenvalues[0])
                  << " lambda2=" << format_real(m.t() > 1 ? m.eigenvalues[1] : 0.0) << "\n";
    });
}

void add_dataset_generate(CLI::App& app, CliState& st) {
    auto* dataset = app.add_subcommand("dataset", "Dataset commands");
    auto* gen = dataset->add_subcommand("generate",
                                        "Render a labeled synthetic distorted dataset");
    auto model_path = std::make_shared<std::string>();
    auto n_sources = std::make_shared<int>(200);
    auto variants = std::make_shared<int>(50);
    auto period = std::make_shared<double>(8.0);
    auto sources_dir = std::make_shared<std::string>();
    auto dry_run = std::make_shared<bool>(false);
    gen->add_option("--model", *model_path, "Distortion model file")->required();
    gen->add_option("--n-sources", *n_sources, "Synthetic ridge sources to generate");
    gen->add_option("--variants", *variants, "Distorted variants per source");
    gen->add_option("--period", *period, "Mean ridge period of generated sources (px, jittered +-10% per source)");
    gen->add_option("--sources-dir", *sources_dir, "Directory of source PGMs (overrides "
                                                   "--n-sources)");
    gen->add_flag("--dry-run", *dry_run, "Plan records and print the count without rendering");
    gen->callback([&st, model_path, n_sources, variants, period, sources_dir, dry_run] {
        DistortionModel model = load_model(*model_path);
        if (*dry_run) {
            DatasetManifest plan = plan_dataset(static_cast<std::size_t>(*n_sources), model,
                                                *variants, st.seed);
            std::cout << "records " << plan.records.size() << "\n";
            return;
        }
        std::vector<Image> sources;
        if (!sources_dir->empty()) {
            sources = load_sources_dir(*sources_dir);
        } else {
            const int size = canvas_from_grid(model.grid);
            sources.reserve(*n_sources);
            for (int s = 0; s < *n_sources; ++s)
                sources.push_back(ridge_source_for(st.seed, s, *period, size));
        }
        DatasetManifest m = generate_dataset(sources, model, *variants, st.seed, st.out_dir);
        std::cout << "records " << m.records.size() << " rejected " << m.rejected.size()
                  << " manifest " << join_out(st.out_dir, "manifest.txt") << "\n";
    });
}

void add_train(CLI::App& app, CliState& st) {
    auto* tr = app.add_subcommand("train", "Train the coefficient regressor on a manifest");
    auto manifest_path = std::make_shared<std::string>();
    auto cfg = std::make_shared<TrainConfig>();
    auto full_arch = std::make_shared<bool>(false);
    auto all_records = std::make_shared<bool>(false);
    tr->add_option("--manifest", *manifest_path, "Dataset manifest")->required();
    tr->add_option("--epochs", cfg->epochs, "Training epochs");
    tr->add_option("--batch", cfg->batch_size, "Batch size");
    tr->add_option("--lr", cfg->learning_rate, "Adam learning rate");
    tr->add_option("--beta1", cfg->adam_beta1, "Adam beta1");
    tr->add_option("--beta2", cfg->adam_beta2, "Adam beta2");
    tr->add_option("--bn-momentum", cfg->bn_momentum, "Running-statistics momentum");
    tr->add_flag("--full-arch", *full_arch, "Use the full-scale nine-layer architecture");
    tr->add_flag("--all-records", *all_records,
                 "Train on every record instead of the 90% training split");
    tr->callback([&st, manifest_path, cfg, full_arch, all_records] {
        DatasetManifest manifest = load_manifest(*manifest_path);
        const std::string base_dir = fs::path(*manifest_path).parent_path().string();
        if (!*all_records) {
            DatasetManifest filtered = manifest;
            filtered.records = split_records(manifest, false);
            manifest = std::move(filtered);
        }
        if (manifest.records.empty()) throw UsageError("train: manifest has no records");

        Image probe = load_pgm((fs::path(base_dir) / manifest.records[0].image_path).string());
        const int input_size = probe.width;
        const int t_out = static_cast<int>(manifest.records[0].coefficients.size());
        cfg->seed = st.seed;

        NetworkF net = *full_arch ? build_full_network(st.seed)
                                   : build_desk_network(input_size, t_out, st.seed);
        TrainHistory history =
            train(net, manifest, base_dir, *cfg, join_out(st.out_dir, "checkpoints"));
        save_checkpoint(net, join_out(st.out_dir, "checkpoint.fpc"));
        save_history(history, join_out(st.out_dir, "history.txt"));
        std::cout << "trained " << manifest.records.size() << " records, final epoch loss "
                  << format_real(history.epoch_mean_loss.back()) << "\n";
    });
}

void add_estimate(CLI::App& app, CliState&) {
    auto* est = app.add_subcommand("estimate", "Estimate distortion coefficients of an image");
    auto image_path = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    est->add_option("image", *image_path, "Input PGM image")->required();
    est->add_option("--checkpoint", *checkpoint, "Network checkpoint")->required();
    est->callback([image_path, checkpoint] {
        NetworkF net = load_checkpoint(*checkpoint);
        print_coefficients(estimate(net, load_pgm(*image_path)));
    });
}

void add_rectify(CLI::App& app, CliState& st) {
    auto* rec = app.add_subcommand("rectify", "Estimate and undo the distortion of an image");
    auto image_path = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto model_path = std::make_shared<std::string>();
    rec->add_option("image", *image_path, "Input PGM image")->required();
    rec->add_option("--checkpoint", *checkpoint, "Network checkpoint")->required();
    rec->add_option("--model", *model_path, "Distortion model file")->required();
    rec->callback([&st, image_path, checkpoint, model_path] {
        NetworkF net = load_checkpoint(*checkpoint);
        DistortionModel model = load_model(*model_path);
        auto [out, c] = rectify_pipeline(net, model, load_pgm(*image_path));
        const std::string out_path = join_out(st.out_dir, "rectified.pgm");
        save_pgm(out, out_path);
        print_coefficients(c);
        std::cout << "rectified " << out_path << "\n";
    });
}

void add_dict_build(CLI::App& app, CliState& st) {
    auto* dict = app.add_subcommand("dict", "Nearest-neighbor dictionary commands");
    auto* build = dict->add_subcommand("build", "Render a dictionary of distorted templates");
    auto model_path = std::make_shared<std::string>();
    auto per_axis = std::make_shared<int>(11);
    auto period = std::make_shared<double>(8.0);
    build->add_option("--model", *model_path, "Distortion model file")->required();
    build->add_option("--per-axis", *per_axis, "Lattice points per coefficient axis");
    build->add_option("--period", *period, "Ridge period of the canonical source (px)");
    build->callback([&st, model_path, per_axis, period] {
        DistortionModel model = load_model(*model_path);
        const int size = canvas_from_grid(model.grid);
        Dictionary d = build_dictionary(model, {ridge_source_for(st.seed, 0, *period, size)},
                                        coefficient_lattice(model.t(), *per_axis));
        d.model_path = *model_path;
        const std::string path = join_out(st.out_dir, "dictionary.fpd");
        save_dictionary(d, path);
        std::cout << "dictionary " << path << " entries " << d.entry_count() << "\n";
    });
}

void add_eval(CLI::App& app, CliState& st) {
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest's validation "
                                          "split");
    auto manifest_path = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto model_path = std::make_shared<std::string>();
    auto dict_path = std::make_shared<std::string>();
    auto timed = std::make_shared<bool>(false);
    ev->add_option("--manifest", *manifest_path, "Dataset manifest")->required();
    ev->add_option("--checkpoint", *checkpoint, "Network checkpoint")->required();
    ev->add_option("--model", *model_path, "Distortion model file")->required();
    ev->add_option("--dict", *dict_path, "Dictionary file for the baseline comparison");
    ev->add_flag("--timed", *timed,
                 "Record wall-clock estimation times (makes the report nondeterministic)");
    ev->callback([&st, manifest_path, checkpoint, model_path, dict_path, timed] {
        DatasetManifest manifest = load_manifest(*manifest_path);
        NetworkF net = load_checkpoint(*checkpoint);
        DistortionModel model = load_model(*model_path);
        Dictionary dict;
        EvalOptions opt;
        opt.seed = st.seed;
        opt.measure_time = *timed;
        opt.model_path = *model_path;
        opt.checkpoint_path = *checkpoint;
        opt.dataset_path = *manifest_path;
        if (!dict_path->empty()) {
            dict = load_dictionary(*dict_path);
            opt.dictionary = &dict;
        }
        EvalReport report = evaluate(net, model, manifest,
                                     fs::path(*manifest_path).parent_path().string(), opt);
        save_report(report, join_out(st.out_dir, "report.txt"),
                    join_out(st.out_dir, "samples.csv"));
        std::cout << "samples " << report.sample_count << " rmse";
        for (double v : report.network.rmse) std::cout << " " << format_real(v);
        std::cout << " within1";
        for (double v : report.network.within1) std::cout << " " << format_real(v);
        std::cout << "\n";
    });
}

void add_bench(CLI::App& app, CliState& st) {
    auto* be = app.add_subcommand("bench", "Compare estimation time of the network and the "
                                           "dictionary scan");
    auto checkpoint = std::make_shared<std::string>();
    auto model_path = std::make_shared<std::string>();
    auto entries_small = std::make_shared<int>(100);
    auto entries_large = std::make_shared<int>(1000);
    auto n_queries = std::make_shared<int>(8);
    auto reps = std::make_shared<int>(5);
    auto period = std::make_shared<double>(8.0);
    be->add_option("--checkpoint", *checkpoint, "Network checkpoint")->required();
    be->add_option("--model", *model_path, "Distortion model file")->required();
    be->add_option("--entries-small", *entries_small, "Small dictionary size");
    be->add_option("--entries-large", *entries_large, "Large dictionary size");
    be->add_option("--queries", *n_queries, "Distinct query images");
    be->add_option("--reps", *reps, "Timed repetitions per query");
    be->add_option("--period", *period, "Ridge period of generated queries (px)");
    be->callback([&st, checkpoint, model_path, entries_small, entries_large, n_queries, reps,
                  period] {
        NetworkF net = load_checkpoint(*checkpoint);
        DistortionModel model = load_model(*model_path);
        const int size = canvas_from_grid(model.grid);

        Rng rng(st.seed);
        auto random_grid = [&](int n) {
            std::vector<CoefficientVector> grid;
            grid.reserve(n);
            for (int i = 0; i < n; ++i) grid.push_back(sample_coefficients(rng, model.t()));
            return grid;
        };
        const Image canonical = ridge_source_for(st.seed, 0, *period, size);
        Dictionary small = build_dictionary(model, {canonical}, random_grid(*entries_small));
        Dictionary large = build_dictionary(model, {canonical}, random_grid(*entries_large));

        std::vector<Image> queries;
        for (int q = 0; q < *n_queries; ++q)
            queries.push_back(ridge_source_for(st.seed, 100 + q, *period, size));

        BenchResult rs = bench_estimation(net, small, queries, *reps);
        BenchResult rl = bench_estimation(net, large, queries, *reps);
        const std::string path = join_out(st.out_dir, "bench.txt");
        save_bench(rs, rl, path);
        std::cout << "network_ms " << format_real(rl.network.mean_ms) << " dictionary_ms "
                  << format_real(rl.dictionary.mean_ms) << " ratio "
                  << format_real(rl.speed_ratio) << " scaling "
                  << format_real(rl.dictionary.mean_ms / rs.dictionary.mean_ms) << "\n";
    });
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Fingerprint distortion estimation and rectification toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    CliState st;
    app.add_option("--seed", st.seed, "Seed for every random choice");
    app.add_option("--out", st.out_dir, "Output directory");
    app.set_config("--config", "", "Structured-text key=value configuration file");

    add_model_fit(app, st);
    add_dataset_generate(app, st);
    add_train(app, st);
    add_estimate(app, st);
    add_rectify(app, st);
    add_dict_build(app, st);
    add_eval(app, st);
    add_bench(app, st);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace fprect
