#include "dmsr/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dmsr/config.hpp"
#include "dmsr/evaluation.hpp"
#include "dmsr/kernel_space.hpp"
#include "dmsr/model.hpp"
#include "dmsr/training.hpp"

namespace dmsr::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    bool dry_run = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Seed for every random choice of the run");
    sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--override", c.overrides, "section.key=value, applied after the config file (repeatable)");
    sub->add_option("--out", c.out, "Output directory (default: $DMSR_OUTPUT_DIR, then paths.output_dir)");
    sub->add_flag("--dry-run", c.dry_run, "Validate inputs and print the effective config without writing anything");
}

struct Resolved {
    RunConfig run;
    json effective;
    fs::path out;
    std::uint64_t seed = 0;
};

Resolved resolve(const Common& c) {
    Resolved r;
    try {
        json j = c.config.empty() ? default_config_json() : load_config_json(c.config);
        for (const auto& o : c.overrides) apply_override(j, o);
        if (c.seed) j["train"]["seed"] = *c.seed;
        r.run = run_config_from_json(j);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    r.effective = to_json(r.run);
    r.seed = r.run.train.seed;
    if (!c.out.empty()) r.out = c.out;
    else if (const char* env = std::getenv("DMSR_OUTPUT_DIR"); env && *env) r.out = env;
    else if (!r.run.output_dir.empty()) r.out = r.run.output_dir;
    else r.out = "dmsr_out";
    r.effective["paths"]["output_dir"] = r.out.string();
    return r;
}

// Creates the output directory and records the effective configuration; in dry-run mode only prints it.
bool begin(const Resolved& r, const Common& c, const std::string& command, const json& extra = json::object()) {
    json snapshot = r.effective;
    snapshot["command"] = command;
    snapshot["arguments"] = extra;
    if (c.dry_run) {
        std::cout << snapshot.dump(2) << '\n';
        return false;
    }
    fs::create_directories(r.out);
    write_file(r.out / "effective_config.json", snapshot.dump(2) + "\n");
    return true;
}

void write_image_blob(const fs::path& path, const ImageTensor& img) {
    Blob b;
    b.dims = {static_cast<std::uint32_t>(img.height()), static_cast<std::uint32_t>(img.width()),
              static_cast<std::uint32_t>(img.channels())};
    b.values.assign(img.data().begin(), img.data().end());
    write_blob(path, b);
}

void write_kernel_blob(const fs::path& path, const BlurKernel& k) {
    Blob b;
    b.dims = {static_cast<std::uint32_t>(k.size), static_cast<std::uint32_t>(k.size)};
    b.values = k.as_float();
    write_blob(path, b);
}

PcaProjection pca_for(const RunConfig& rc) {
    if (!rc.pca_path.empty()) return read_pca(rc.pca_path);
    return default_pca(rc.model);
}

std::vector<Dataset> load_data(const std::vector<std::string>& dirs, const std::string& config_dir, int synthetic,
                               int synthetic_size, std::uint64_t seed) {
    std::vector<Dataset> out;
    std::vector<std::string> all = dirs;
    if (all.empty() && !config_dir.empty()) all.push_back(config_dir);
    for (const auto& d : all) {
        if (!fs::is_directory(d)) throw UsageError("data directory not found: " + d);
        out.push_back(load_image_folder(d));
        if (out.back().images.empty()) throw UsageError("no PNG images in " + d);
    }
    if (synthetic > 0)
        out.push_back(synthetic_dataset(synthetic, synthetic_size, synthetic_size, derive_seed(seed, 17), "synthetic"));
    if (out.empty()) throw UsageError("no data: pass --data DIR, set paths.data_dir, or use --synthetic N");
    return out;
}

Dataset merge(std::vector<Dataset> sets) {
    Dataset all;
    all.name = sets.size() == 1 ? sets.front().name : "merged";
    for (auto& s : sets) {
        for (auto& img : s.images) all.images.push_back(std::move(img));
        for (auto& f : s.files) all.files.push_back(s.name + "/" + f);
    }
    return all;
}

TrainHooks hooks_for(const fs::path& out, const std::string& log_name) {
    TrainHooks h;
    h.log_csv = out / log_name;
    h.checkpoint_dir = out / "checkpoints";
    h.on_log = [](const LogRow& row) {
        std::cout << "iter " << row.iteration << "  lr " << row.rate << "  loss " << row.loss.total << "  (re "
                  << row.loss.re << ", dr " << row.loss.dr << ", dc " << row.loss.dc_lr + row.loss.dc_kernel + row.loss.dc_noise
                  << ")\n";
    };
    return h;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, int>) out.push_back(std::stoi(item, &used));
            else out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("bad value '") + item + "' in " + what);
        }
    }
    if (out.empty()) throw UsageError(std::string(what) + " is empty");
    return out;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Blind super-resolution with degradation-aware meta modules"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "dmsr 0.1.0");

    // degrade
    Common c_degrade;
    std::string degrade_in;
    int degrade_scale = 4, degrade_ksize = 15;
    double degrade_width = 1.3, degrade_noise = 0.0;
    auto* degrade_cmd = app.add_subcommand("degrade", "Blur, downsample and add noise to one image");
    add_common(degrade_cmd, c_degrade);
    degrade_cmd->add_option("--in", degrade_in, "HR input PNG")->required()->check(CLI::ExistingFile);
    degrade_cmd->add_option("--scale", degrade_scale, "Downscale factor")->check(CLI::Range(1, 16));
    degrade_cmd->add_option("--kernel-width", degrade_width, "Gaussian kernel width sigma_k");
    degrade_cmd->add_option("--noise", degrade_noise, "AWGN level sigma_n on the 0-255 scale");
    degrade_cmd->add_option("--kernel-size", degrade_ksize, "Odd kernel size");

    // pca
    Common c_pca;
    int pca_pool = 10000;
    auto* pca_cmd = app.add_subcommand("pca", "Build a kernel pool and its PCA projection");
    add_common(pca_cmd, c_pca);
    pca_cmd->add_option("--pool-size", pca_pool, "Number of kernels in the pool")->check(CLI::PositiveNumber);

    // train / finetune-nf share data options
    struct DataOpts {
        std::vector<std::string> dirs;
        int synthetic = 0;
        int synthetic_size = 96;
    };
    auto add_data = [](CLI::App* sub, DataOpts& d) {
        sub->add_option("--data", d.dirs, "Directory of PNG images (repeatable)");
        sub->add_option("--synthetic", d.synthetic, "Add N procedurally generated images")->check(CLI::NonNegativeNumber);
        sub->add_option("--synthetic-size", d.synthetic_size, "Side length of synthetic images")->check(CLI::PositiveNumber);
    };

    Common c_train;
    DataOpts d_train;
    std::string train_resume;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    add_common(train_cmd, c_train);
    add_data(train_cmd, d_train);
    train_cmd->add_option("--resume", train_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    Common c_ft;
    DataOpts d_ft;
    std::string ft_checkpoint;
    auto* ft_cmd = app.add_subcommand("finetune-nf", "Noise-free fine-tuning of a trained checkpoint");
    add_common(ft_cmd, c_ft);
    add_data(ft_cmd, d_ft);
    ft_cmd->add_option("--checkpoint", ft_checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);

    // infer
    Common c_infer;
    std::string infer_in, infer_ckpt;
    bool infer_random = false;
    auto* infer_cmd = app.add_subcommand("infer", "Super-resolve one LR image");
    add_common(infer_cmd, c_infer);
    infer_cmd->add_option("--in", infer_in, "LR input PNG")->required()->check(CLI::ExistingFile);
    auto* infer_ckpt_opt = infer_cmd->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->check(CLI::ExistingFile);
    infer_cmd->add_flag("--random-init", infer_random, "Use a freshly initialized model from the config")
        ->excludes(infer_ckpt_opt);

    // eval
    Common c_eval;
    DataOpts d_eval;
    std::vector<std::string> eval_ckpts;
    std::string eval_model = "dmsr";
    bool eval_random = false;
    std::string eval_scales = "2,3,4", eval_widths = "0.2,1.3,2.6", eval_noise = "15,50";
    auto* eval_cmd = app.add_subcommand("eval", "Benchmark over a (scale, sigma_k, sigma_n) grid");
    add_common(eval_cmd, c_eval);
    add_data(eval_cmd, d_eval);
    auto* eval_ckpt_opt =
        eval_cmd->add_option("--checkpoint", eval_ckpts, "Checkpoint, one per scale (repeatable)")->check(CLI::ExistingFile);
    eval_cmd->add_option("--model", eval_model, "dmsr or bicubic")->check(CLI::IsMember({"dmsr", "bicubic"}));
    eval_cmd->add_flag("--random-init", eval_random, "Evaluate freshly initialized models")->excludes(eval_ckpt_opt);
    eval_cmd->add_option("--scales", eval_scales, "Comma-separated scales");
    eval_cmd->add_option("--kernel-widths", eval_widths, "Comma-separated sigma_k values");
    eval_cmd->add_option("--noise", eval_noise, "Comma-separated sigma_n values");

    // window
    Common c_window;
    std::string window_in;
    int window_scale = 4;
    auto* window_cmd = app.add_subcommand("window", "Degrade one image under the 6 x 4 parameter window");
    add_common(window_cmd, c_window);
    window_cmd->add_option("--in", window_in, "HR input PNG")->required()->check(CLI::ExistingFile);
    window_cmd->add_option("--scale", window_scale, "Downscale factor")->check(CLI::Range(1, 16));

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*degrade_cmd) {
            const auto r = resolve(c_degrade);
            const std::uint64_t seed = c_degrade.seed.value_or(0);
            const json args{{"in", degrade_in}, {"scale", degrade_scale}, {"kernel_width", degrade_width},
                            {"noise", degrade_noise}, {"kernel_size", degrade_ksize}, {"seed", seed}};
            if (!(degrade_width > 0.0) || degrade_noise < 0.0 || degrade_ksize < 1 || degrade_ksize % 2 == 0)
                throw UsageError("need kernel-width > 0, noise >= 0 and an odd kernel size");
            const ImageTensor hr = crop_to_multiple(read_png(degrade_in), degrade_scale);
            if (!begin(r, c_degrade, "degrade", args)) return 0;
            const auto s = degrade(hr, {degrade_width, degrade_noise, degrade_scale, seed, degrade_ksize});
            write_png(r.out / "lr.png", s.lr);
            write_image_blob(r.out / "lr.blob", s.lr);
            write_image_blob(r.out / "lr_preclamp.blob", s.lr_preclamp);
            write_image_blob(r.out / "noise_map.blob", s.noise_map_gt);
            write_kernel_blob(r.out / "kernel.blob", s.kernel_gt);
            std::cout << "wrote " << (r.out / "lr.png").string() << " (" << s.lr.width() << "x" << s.lr.height() << ")\n";
        } else if (*pca_cmd) {
            const auto r = resolve(c_pca);
            const auto& d = r.run.train.degradation;
            const auto& m = r.run.model;
            if (pca_pool < m.embed_dim) throw UsageError("--pool-size must be at least model.embed_dim");
            if (!begin(r, c_pca, "pca", {{"pool_size", pca_pool}})) return 0;
            const auto pool = build_kernel_pool(pca_pool, d.kernel_width_min, d.kernel_width_max, r.seed,
                                                m.blur_kernel_size, m.embed_dim);
            const auto pca = compute_pca(pool, m.embed_dim);
            write_pca(r.out / "pca.blob", pca);
            json info{{"embed_dim", pca.embed_dim},
                      {"input_dim", pca.input_dim},
                      {"explained_fraction", pca.explained_fraction()},
                      {"rank_padded", pca.rank_padded},
                      {"eigenvalues", pca.eigenvalues}};
            write_file(r.out / "pca.json", info.dump(2) + "\n");
            std::cout << "explained fraction at dim " << pca.embed_dim << ": " << pca.explained_fraction() << '\n';
        } else if (*train_cmd) {
            const auto r = resolve(c_train);
            const auto data = merge(load_data(d_train.dirs, r.run.data_dir, d_train.synthetic, d_train.synthetic_size, r.seed));
            if (!train_resume.empty()) (void)load_checkpoint(train_resume, r.run.model);
            if (!begin(r, c_train, "train", {{"resume", train_resume}, {"images", data.images.size()}})) return 0;
            TrainState state = train_resume.empty()
                                   ? init_train_state(make_network<float>(r.run.model, pca_for(r.run), derive_seed(r.seed, 0)),
                                                      derive_seed(r.seed, 1))
                                   : load_checkpoint(train_resume, r.run.model);
            train(state, data, r.run.train, hooks_for(r.out, "loss_log.csv"));
            save_checkpoint(state, r.out / "final.ckpt");
            std::cout << "wrote " << (r.out / "final.ckpt").string() << '\n';
        } else if (*ft_cmd) {
            const auto r = resolve(c_ft);
            const auto data = merge(load_data(d_ft.dirs, r.run.data_dir, d_ft.synthetic, d_ft.synthetic_size, r.seed));
            TrainState state = load_checkpoint(ft_checkpoint, r.run.model);
            if (!begin(r, c_ft, "finetune-nf", {{"checkpoint", ft_checkpoint}, {"images", data.images.size()}})) return 0;
            state.rng.seed(derive_seed(r.seed, 2));
            finetune_noise_free(state, data, r.run.train, hooks_for(r.out, "finetune_log.csv"));
            save_checkpoint(state, r.out / "final_nf.ckpt");
            std::cout << "wrote " << (r.out / "final_nf.ckpt").string() << '\n';
        } else if (*infer_cmd) {
            const auto r = resolve(c_infer);
            if (infer_ckpt.empty() && !infer_random) throw UsageError("infer needs --checkpoint or --random-init");
            const ImageTensor lr = read_png(infer_in);
            Network<float> net = infer_random ? make_network<float>(r.run.model, pca_for(r.run), derive_seed(r.seed, 0))
                                              : load_checkpoint(infer_ckpt).net;
            if (!begin(r, c_infer, "infer", {{"in", infer_in}, {"checkpoint", infer_ckpt}, {"random_init", infer_random}}))
                return 0;
            ExtractorOutput est;
            const ImageTensor sr = super_resolve(net, lr, &est);
            write_png(r.out / "sr.png", sr);
            write_image_blob(r.out / "noise_map_est.blob", est.noise_map_est);
            write_kernel_blob(r.out / "kernel_est.blob", est.kernel_est);
            std::cout << "wrote " << (r.out / "sr.png").string() << " (" << sr.width() << "x" << sr.height() << ")\n";
        } else if (*eval_cmd) {
            const auto r = resolve(c_eval);
            BenchmarkGrid grid;
            grid.scales = parse_list<int>(eval_scales, "--scales");
            grid.kernel_widths = parse_list<double>(eval_widths, "--kernel-widths");
            grid.noise_levels = parse_list<double>(eval_noise, "--noise");
            grid.seed = r.seed;
            grid.kernel_size = r.run.model.blur_kernel_size;
            const auto datasets = load_data(d_eval.dirs, r.run.data_dir, d_eval.synthetic, d_eval.synthetic_size, r.seed);

            std::map<int, Network<float>> nets;
            std::string model_id = eval_model;
            if (eval_model == "dmsr") {
                if (eval_random) {
                    for (int s : grid.scales) {
                        ModelConfig mc = r.run.model;
                        mc.scale = s;
                        mc.validate();
                        nets.emplace(s, make_network<float>(mc, pca_for(r.run), derive_seed(r.seed, 100 + s)));
                    }
                    model_id = "dmsr-random-init";
                } else {
                    if (eval_ckpts.empty()) throw UsageError("eval --model dmsr needs --checkpoint or --random-init");
                    model_id.clear();
                    for (const auto& p : eval_ckpts) {
                        auto net = load_checkpoint(p).net;
                        model_id += (model_id.empty() ? "" : ";") + fs::path(p).filename().string();
                        nets.insert_or_assign(net.config.scale, std::move(net));
                    }
                }
                for (int s : grid.scales)
                    if (!nets.count(s)) throw UsageError("no checkpoint for scale " + std::to_string(s));
            }
            if (!begin(r, c_eval, "eval", {{"model", model_id}, {"checkpoints", eval_ckpts}})) return 0;
            const SrModel model = eval_model == "bicubic" ? bicubic_model()
                                                          : SrModel([&nets](const ImageTensor& lr, int s) {
                                                                return super_resolve(nets.at(s), lr);
                                                            });
            grid.kernel_size = nets.empty() ? grid.kernel_size : nets.begin()->second.config.blur_kernel_size;
            const auto report = run_benchmark(model, datasets, grid, model_id);
            write_file(r.out / "report.csv", report_csv(report));
            const auto md = report_markdown(report);
            write_file(r.out / "report.md", md);
            std::cout << md;
        } else if (*window_cmd) {
            const auto r = resolve(c_window);
            const ImageTensor img = read_png(window_in);
            if (!begin(r, c_window, "window", {{"in", window_in}, {"scale", window_scale}})) return 0;
            const auto w = degradation_window(img, window_scale, r.seed, r.run.model.blur_kernel_size);
            write_png(r.out / "window.png", w.mosaic);
            write_file(r.out / "window.json", window_manifest_json(w, window_scale) + "\n");
            std::cout << "wrote " << w.tiles.size() << " tiles to " << (r.out / "window.png").string() << '\n';
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int dispatch(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dmsr::cli
