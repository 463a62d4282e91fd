#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dmsr/dataset.hpp"
#include "dmsr/losses.hpp"
#include "dmsr/model.hpp"

namespace dmsr {

struct TrainConfig {
    int batch = 32;
    int lr_patch = 48;
    std::int64_t total_iters = 500000;
    double base_lr = 1e-4;
    std::int64_t halve_every = 200000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    DegradationRanges degradation;  // scale and kernel size follow the model config
    bool augment = true;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 10000;
    std::int64_t log_every = 100;
    double clip_norm = 0.0;         // global gradient-norm clip, 0 disables
    std::int64_t warmup_iters = 0;  // extractor-only updates for the first N iterations
    std::int64_t finetune_iters = 100000;
    double finetune_lr = 1e-4;
    LossWeights loss;

    void validate() const;
};

struct TrainState {
    Network<float> net;
    ag::Gradients<float> adam_m;
    ag::Gradients<float> adam_v;
    std::int64_t iteration = 0;
    std::mt19937_64 rng;
    std::string last_checkpoint;
};

TrainState init_train_state(Network<float> net, std::uint64_t seed);

struct BatchItem {
    ImageTensor hr;  // (lr_patch * s)^2 x 3 after augmentation
    DegradedSample sample;
    int augmentation = 0;
    int image_index = 0;
};

// Images smaller than the HR patch are skipped with a warning; an error if none qualify.
std::vector<BatchItem> sample_batch(const Dataset& dataset, const TrainConfig& config, int scale, std::mt19937_64& rng);

// base_lr * 0.5^floor(iter / halve_every)
double lr_schedule(std::int64_t iter, const TrainConfig& config);

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BatchGradients {
    ag::Gradients<float> grads;
    LossBreakdown loss;  // batch means
};

// Mean loss and gradients over the batch, no parameter update.
BatchGradients batch_gradients(const Network<float>& net, const std::vector<BatchItem>& batch, const LossWeights& weights);

// Forward, losses, backward and one Adam step at `rate`; iteration += 1.
LossBreakdown train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& config, double rate);
// Same, at lr_schedule(state.iteration).
LossBreakdown train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& config);

struct LogRow {
    std::int64_t iteration = 0;
    LossBreakdown loss;
    double rate = 0.0;
};

std::string loss_csv_header();
std::string loss_csv_row(const LogRow& row);

struct TrainHooks {
    std::optional<std::filesystem::path> log_csv;         // appended per log interval
    std::optional<std::filesystem::path> checkpoint_dir;  // checkpoint_<iter>.ckpt + latest.ckpt
    std::function<void(const LogRow&)> on_log;
};

// Runs until state.iteration reaches config.total_iters.
std::vector<LogRow> train(TrainState& state, const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks = {});

// Continues training with the noise level pinned to 0 at a constant finetune_lr for finetune_iters.
std::vector<LogRow> finetune_noise_free(TrainState& state, const Dataset& dataset, const TrainConfig& config,
                                        const TrainHooks& hooks = {});
// Config actually used by finetune_noise_free.
TrainConfig noise_free_config(const TrainConfig& config);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// Refuses version mismatches; when `expected` is given, names the first array whose name or shape differs.
TrainState load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace dmsr
