#include "dmsr/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "dmsr/config.hpp"

namespace dmsr {

void TrainConfig::validate() const {
    if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (lr_patch < 1) throw std::invalid_argument("train.lr_patch must be >= 1");
    if (total_iters < 0) throw std::invalid_argument("train.total_iters must be >= 0");
    if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be > 0");
    if (halve_every < 1) throw std::invalid_argument("train.halve_every must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("train.beta1/beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("train.eps must be > 0");
    if (clip_norm < 0.0) throw std::invalid_argument("train.clip_norm must be >= 0");
    if (warmup_iters < 0 || finetune_iters < 0) throw std::invalid_argument("train: iteration counts must be >= 0");
    if (!(finetune_lr > 0.0)) throw std::invalid_argument("train.finetune_lr must be > 0");
    if (checkpoint_every < 0 || log_every < 0) throw std::invalid_argument("train: intervals must be >= 0");
    const auto& d = degradation;
    if (!(d.kernel_width_min > 0.0) || d.kernel_width_max < d.kernel_width_min)
        throw std::invalid_argument("degradation: need 0 < kernel_width_min <= kernel_width_max");
    if (d.noise_min < 0.0 || d.noise_max < d.noise_min)
        throw std::invalid_argument("degradation: need 0 <= noise_min <= noise_max");
    loss.validate();
}

namespace {

ag::Gradients<float> zeros_like(const ag::ParameterSet<float>& params) {
    ag::Gradients<float> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) g[i].assign(params[static_cast<int>(i)].data.size(), 0.0f);
    return g;
}

bool is_extractor(const std::string& name) { return name.rfind("extractor.", 0) == 0; }

}  // namespace

TrainState init_train_state(Network<float> net, std::uint64_t seed) {
    TrainState s{std::move(net), {}, {}, 0, std::mt19937_64(seed), {}};
    s.adam_m = zeros_like(s.net.params);
    s.adam_v = zeros_like(s.net.params);
    return s;
}

std::vector<BatchItem> sample_batch(const Dataset& dataset, const TrainConfig& config, int scale, std::mt19937_64& rng) {
    const int hr_patch = config.lr_patch * scale;
    std::vector<int> eligible;
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        const auto& img = dataset.images[i];
        if (img.height() >= hr_patch && img.width() >= hr_patch) eligible.push_back(static_cast<int>(i));
    }
    if (eligible.empty())
        throw std::runtime_error("dataset '" + dataset.name + "' has no image of at least " + std::to_string(hr_patch) +
                                 "x" + std::to_string(hr_patch));
    if (eligible.size() < dataset.images.size()) {
        static thread_local const Dataset* warned = nullptr;
        if (warned != &dataset) {
            std::cerr << "warning: " << dataset.images.size() - eligible.size() << " image(s) in '" << dataset.name
                      << "' are smaller than the " << hr_patch << "px HR patch and are skipped\n";
            warned = &dataset;
        }
    }

    DegradationRanges ranges = config.degradation;
    ranges.scale = scale;

    std::vector<BatchItem> batch;
    batch.reserve(config.batch);
    for (int b = 0; b < config.batch; ++b) {
        BatchItem item;
        item.image_index = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
        const auto& img = dataset.images[item.image_index];
        const int y0 = std::uniform_int_distribution<int>(0, img.height() - hr_patch)(rng);
        const int x0 = std::uniform_int_distribution<int>(0, img.width() - hr_patch)(rng);
        item.augmentation = config.augment ? std::uniform_int_distribution<int>(0, 7)(rng) : 0;
        item.hr = dihedral(img.crop(y0, x0, hr_patch, hr_patch), item.augmentation);
        item.sample = degrade(item.hr, sample_spec(ranges, rng));
        batch.push_back(std::move(item));
    }
    return batch;
}

double lr_schedule(std::int64_t iter, const TrainConfig& config) {
    return config.base_lr * std::pow(0.5, static_cast<double>(iter / config.halve_every));
}

BatchGradients batch_gradients(const Network<float>& net, const std::vector<BatchItem>& batch, const LossWeights& weights) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    BatchGradients out;
    out.grads = zeros_like(net.params);
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (const auto& item : batch) {
        ag::Tape<float> tape(&net.params);
        TrainingTargets targets{&item.hr, &item.sample.lr, &item.sample.lr_preclamp, &item.sample.kernel_gt,
                                &item.sample.noise_map_gt};
        auto loss = sample_loss(tape, net.config, targets, weights);
        tape.backward(ag::scale(tape, loss.total, inv));
        for (std::size_t i = 0; i < out.grads.size(); ++i) {
            auto& dst = out.grads[i];
            const auto& src = tape.grad_of(static_cast<int>(i));
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
        out.loss.re += loss.parts.re;
        out.loss.dr += loss.parts.dr;
        out.loss.dc_lr += loss.parts.dc_lr;
        out.loss.dc_kernel += loss.parts.dc_kernel;
        out.loss.dc_noise += loss.parts.dc_noise;
        out.loss.total += loss.parts.total;
    }
    const double n = static_cast<double>(batch.size());
    out.loss.re /= n;
    out.loss.dr /= n;
    out.loss.dc_lr /= n;
    out.loss.dc_kernel /= n;
    out.loss.dc_noise /= n;
    out.loss.total /= n;
    return out;
}

LossBreakdown train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& config, double rate) {
    BatchGradients g;
    try {
        g = batch_gradients(state.net, batch, config.loss);
    } catch (const NonFiniteLoss& e) {
        throw TrainingError("non-finite " + e.term() + " loss at iteration " + std::to_string(state.iteration) +
                            "; last checkpoint: " + (state.last_checkpoint.empty() ? "none" : state.last_checkpoint));
    }

    auto& params = state.net.params;
    const bool warmup = state.iteration < config.warmup_iters;

    double scale = 1.0;
    if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& v : g.grads)
            for (float x : v) sq += static_cast<double>(x) * x;
        const double norm = std::sqrt(sq);
        if (norm > config.clip_norm) scale = config.clip_norm / norm;
    }

    const double t = static_cast<double>(state.iteration + 1);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
    const float step = static_cast<float>(rate / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(config.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[static_cast<int>(i)];
        if (warmup && !is_extractor(p.name)) continue;
        auto& m = state.adam_m[i];
        auto& v = state.adam_v[i];
        const auto& gi = g.grads[i];
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            const float grad = static_cast<float>(gi[k] * scale);
            m[k] = b1 * m[k] + (1.0f - b1) * grad;
            v[k] = b2 * v[k] + (1.0f - b2) * grad * grad;
            p.data[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
        }
    }
    ++state.iteration;
    return g.loss;
}

LossBreakdown train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& config) {
    return train_step(state, batch, config, lr_schedule(state.iteration, config));
}

std::string loss_csv_header() { return "iteration,re,dr,dc_lr,dc_noise,dc_kernel,total,lr"; }

std::string loss_csv_row(const LogRow& row) {
    std::ostringstream os;
    os.precision(8);
    os << row.iteration << ',' << row.loss.re << ',' << row.loss.dr << ',' << row.loss.dc_lr << ',' << row.loss.dc_noise
       << ',' << row.loss.dc_kernel << ',' << row.loss.total << ',' << row.rate;
    return os.str();
}

namespace {

std::vector<LogRow> run_loop(TrainState& state, const Dataset& dataset, const TrainConfig& config, std::int64_t until,
                             const std::function<double(std::int64_t)>& rate_at, const TrainHooks& hooks) {
    config.validate();
    std::vector<LogRow> rows;
    std::ofstream csv;
    if (hooks.log_csv) {
        const bool fresh = !std::filesystem::exists(*hooks.log_csv) || std::filesystem::file_size(*hooks.log_csv) == 0;
        if (hooks.log_csv->has_parent_path()) std::filesystem::create_directories(hooks.log_csv->parent_path());
        csv.open(*hooks.log_csv, std::ios::app);
        if (!csv) throw std::runtime_error("cannot open " + hooks.log_csv->string());
        if (fresh) csv << loss_csv_header() << '\n';
    }
    if (hooks.checkpoint_dir) std::filesystem::create_directories(*hooks.checkpoint_dir);

    LossBreakdown acc;
    int acc_n = 0;
    while (state.iteration < until) {
        const double rate = rate_at(state.iteration);
        const auto batch = sample_batch(dataset, config, state.net.config.scale, state.rng);
        const auto loss = train_step(state, batch, config, rate);
        acc.re += loss.re;
        acc.dr += loss.dr;
        acc.dc_lr += loss.dc_lr;
        acc.dc_kernel += loss.dc_kernel;
        acc.dc_noise += loss.dc_noise;
        acc.total += loss.total;
        ++acc_n;

        const bool last = state.iteration == until;
        if ((config.log_every > 0 && state.iteration % config.log_every == 0) || last) {
            LogRow row{state.iteration, acc, rate};
            row.loss.re /= acc_n;
            row.loss.dr /= acc_n;
            row.loss.dc_lr /= acc_n;
            row.loss.dc_kernel /= acc_n;
            row.loss.dc_noise /= acc_n;
            row.loss.total /= acc_n;
            rows.push_back(row);
            if (csv) csv << loss_csv_row(row) << '\n' << std::flush;
            if (hooks.on_log) hooks.on_log(row);
            acc = {};
            acc_n = 0;
        }
        if (hooks.checkpoint_dir &&
            ((config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) || last)) {
            const auto path = *hooks.checkpoint_dir / ("checkpoint_" + std::to_string(state.iteration) + ".ckpt");
            save_checkpoint(state, path);
            std::filesystem::copy_file(path, *hooks.checkpoint_dir / "latest.ckpt",
                                       std::filesystem::copy_options::overwrite_existing);
            state.last_checkpoint = path.string();
        }
    }
    return rows;
}

}  // namespace

std::vector<LogRow> train(TrainState& state, const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks) {
    return run_loop(state, dataset, config, config.total_iters,
                    [&](std::int64_t it) { return lr_schedule(it, config); }, hooks);
}

TrainConfig noise_free_config(const TrainConfig& config) {
    TrainConfig c = config;
    c.degradation.noise_min = 0.0;
    c.degradation.noise_max = 0.0;
    c.warmup_iters = 0;
    return c;
}

std::vector<LogRow> finetune_noise_free(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                                        const TrainHooks& hooks) {
    const TrainConfig c = noise_free_config(config);
    return run_loop(state, dataset, c, state.iteration + c.finetune_iters,
                    [&](std::int64_t) { return c.finetune_lr; }, hooks);
}

// Checkpoint layout: "DMSRCKPT", u32 version, u64 header length, JSON header, then parameters,
// first moments and second moments as little-endian float32 in header array order.

namespace {

constexpr char kMagic[8] = {'D', 'M', 'S', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    json header;
    header["model"] = model_config_to_json(state.net.config);
    header["pca_hash"] = state.net.pca_hash;
    header["iteration"] = state.iteration;
    std::ostringstream rng;
    rng << state.rng;
    header["rng"] = rng.str();
    json arrays = json::array();
    for (const auto& a : state.net.params) arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"init", a.init}});
    header["arrays"] = arrays;
    const std::string text = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kVersion);
    put_u64(out, text.size());
    out += text;
    for (const auto& a : state.net.params) put_f32s(out, a.data);
    for (const auto& m : state.adam_m) put_f32s(out, m);
    for (const auto& v : state.adam_v) put_f32s(out, v);

    const auto tmp = path.string() + ".tmp";
    write_file(tmp, out);
    std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    const std::string bytes = read_file(path);
    const std::string_view in(bytes);
    if (in.size() < sizeof kMagic + 12 || in.substr(0, sizeof kMagic) != std::string_view(kMagic, sizeof kMagic))
        throw std::runtime_error(path.string() + ": not a checkpoint file");
    std::size_t pos = sizeof kMagic;
    const auto version = get_u32(in, pos);
    if (version != kVersion)
        throw std::runtime_error(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                                 std::to_string(kVersion));
    const auto len = get_u64(in, pos);
    if (pos + len > in.size()) throw std::runtime_error(path.string() + ": truncated header");
    const json header = json::parse(in.substr(pos, len));
    pos += len;

    const ModelConfig stored = model_config_from_json(header.at("model"));
    const auto layout = parameter_layout<float>(expected ? *expected : stored);
    const auto& arrays = header.at("arrays");
    for (std::size_t i = 0; i < std::max(layout.size(), arrays.size()); ++i) {
        if (i >= layout.size())
            throw std::runtime_error(path.string() + ": unexpected array '" + arrays[i].at("name").get<std::string>() + "'");
        const auto& want = layout[static_cast<int>(i)];
        if (i >= arrays.size()) throw std::runtime_error(path.string() + ": missing array '" + want.name + "'");
        const auto name = arrays[i].at("name").get<std::string>();
        const auto shape = arrays[i].at("shape").get<std::vector<int>>();
        if (name != want.name || shape != want.shape) {
            auto fmt = [](const std::vector<int>& s) {
                std::string r = "(";
                for (std::size_t k = 0; k < s.size(); ++k) r += (k ? "," : "") + std::to_string(s[k]);
                return r + ")";
            };
            throw std::runtime_error(path.string() + ": array " + std::to_string(i) + " is '" + name + "' " + fmt(shape) +
                                     ", model expects '" + want.name + "' " + fmt(want.shape));
        }
    }

    Network<float> net{expected ? *expected : stored, layout, header.at("pca_hash").get<std::uint64_t>()};
    TrainState state = init_train_state(std::move(net), 0);
    try {
        for (auto& a : state.net.params) get_f32s(in, pos, a.data);
        for (auto& m : state.adam_m) get_f32s(in, pos, m);
        for (auto& v : state.adam_v) get_f32s(in, pos, v);
    } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ": truncated payload");
    }
    if (pos != in.size()) throw std::runtime_error(path.string() + ": trailing bytes after payload");
    state.iteration = header.at("iteration").get<std::int64_t>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    state.last_checkpoint = path.string();
    return state;
}

}  // namespace dmsr
