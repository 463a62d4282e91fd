#include "dmsr/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace dmsr {

namespace {

void reject_unknown(const json& section, const std::set<std::string>& known, const std::string& where) {
    if (!section.is_object()) throw std::invalid_argument("config: section '" + where + "' must be an object");
    for (const auto& [key, _] : section.items())
        if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + where + "." + key + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
    return {{"channels", c.channels},
            {"extractor_channels", c.extractor_channels},
            {"n_groups", c.n_groups},
            {"n_rcab_per_group", c.n_rcab_per_group},
            {"ca_reduction", c.ca_reduction},
            {"kernel_size", c.kernel_size},
            {"mnm_kernel_size", c.mnm_kernel_size},
            {"blur_kernel_size", c.blur_kernel_size},
            {"embed_dim", c.embed_dim},
            {"scale", c.scale},
            {"n_mbm", c.n_mbm},
            {"mnm_mode", to_string(c.mnm_mode)}};
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown(j,
                   {"channels", "extractor_channels", "n_groups", "n_rcab_per_group", "ca_reduction", "kernel_size",
                    "mnm_kernel_size", "blur_kernel_size", "embed_dim", "scale", "n_mbm", "mnm_mode", "preset"},
                   "model");
    ModelConfig c;
    if (j.contains("preset")) {
        const auto preset = j.at("preset").get<std::string>();
        const int scale = j.value("scale", c.scale);
        if (preset == "paper") c = paper_config(scale);
        else if (preset == "tiny") c = tiny_config(scale);
        else throw std::invalid_argument("config: unknown model preset '" + preset + "'");
    }
    read(j, "channels", c.channels);
    read(j, "extractor_channels", c.extractor_channels);
    read(j, "n_groups", c.n_groups);
    read(j, "n_rcab_per_group", c.n_rcab_per_group);
    read(j, "ca_reduction", c.ca_reduction);
    read(j, "kernel_size", c.kernel_size);
    read(j, "mnm_kernel_size", c.mnm_kernel_size);
    read(j, "blur_kernel_size", c.blur_kernel_size);
    read(j, "embed_dim", c.embed_dim);
    read(j, "scale", c.scale);
    read(j, "n_mbm", c.n_mbm);
    if (j.contains("mnm_mode")) c.mnm_mode = parse_mnm_mode(j.at("mnm_mode").get<std::string>());
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    const auto& d = t.degradation;
    return {{"model", model_config_to_json(c.model)},
            {"train",
             {{"batch", t.batch},
              {"lr_patch", t.lr_patch},
              {"total_iters", t.total_iters},
              {"base_lr", t.base_lr},
              {"halve_every", t.halve_every},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"augment", t.augment},
              {"seed", t.seed},
              {"checkpoint_every", t.checkpoint_every},
              {"log_every", t.log_every},
              {"clip_norm", t.clip_norm},
              {"warmup_iters", t.warmup_iters},
              {"finetune_iters", t.finetune_iters},
              {"finetune_lr", t.finetune_lr},
              {"lambda_re", t.loss.re},
              {"lambda_dr", t.loss.dr},
              {"lambda_dc", t.loss.dc},
              {"dc_lr", t.loss.dc_lr},
              {"dc_kernel", t.loss.dc_kernel},
              {"dc_noise", t.loss.dc_noise},
              {"stop_grad_targets", t.loss.stop_grad_targets}}},
            {"degradation",
             {{"kernel_width_min", d.kernel_width_min},
              {"kernel_width_max", d.kernel_width_max},
              {"noise_min", d.noise_min},
              {"noise_max", d.noise_max}}},
            {"paths",
             {{"data_dir", c.data_dir}, {"output_dir", c.output_dir}, {"pca", c.pca_path}, {"checkpoint", c.checkpoint}}}};
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, {"model", "train", "degradation", "paths"}, "root");
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));

    auto& t = c.train;
    if (j.contains("train")) {
        const auto& s = j.at("train");
        reject_unknown(s,
                       {"batch", "lr_patch", "total_iters", "base_lr", "halve_every", "beta1", "beta2", "eps", "augment",
                        "seed", "checkpoint_every", "log_every", "clip_norm", "warmup_iters", "finetune_iters",
                        "finetune_lr", "lambda_re", "lambda_dr", "lambda_dc", "dc_lr", "dc_kernel", "dc_noise",
                        "stop_grad_targets"},
                       "train");
        read(s, "batch", t.batch);
        read(s, "lr_patch", t.lr_patch);
        read(s, "total_iters", t.total_iters);
        read(s, "base_lr", t.base_lr);
        read(s, "halve_every", t.halve_every);
        read(s, "beta1", t.beta1);
        read(s, "beta2", t.beta2);
        read(s, "eps", t.eps);
        read(s, "augment", t.augment);
        read(s, "seed", t.seed);
        read(s, "checkpoint_every", t.checkpoint_every);
        read(s, "log_every", t.log_every);
        read(s, "clip_norm", t.clip_norm);
        read(s, "warmup_iters", t.warmup_iters);
        read(s, "finetune_iters", t.finetune_iters);
        read(s, "finetune_lr", t.finetune_lr);
        read(s, "lambda_re", t.loss.re);
        read(s, "lambda_dr", t.loss.dr);
        read(s, "lambda_dc", t.loss.dc);
        read(s, "dc_lr", t.loss.dc_lr);
        read(s, "dc_kernel", t.loss.dc_kernel);
        read(s, "dc_noise", t.loss.dc_noise);
        read(s, "stop_grad_targets", t.loss.stop_grad_targets);
    }
    if (j.contains("degradation")) {
        const auto& s = j.at("degradation");
        reject_unknown(s, {"kernel_width_min", "kernel_width_max", "noise_min", "noise_max"}, "degradation");
        read(s, "kernel_width_min", t.degradation.kernel_width_min);
        read(s, "kernel_width_max", t.degradation.kernel_width_max);
        read(s, "noise_min", t.degradation.noise_min);
        read(s, "noise_max", t.degradation.noise_max);
    }
    t.degradation.scale = c.model.scale;
    t.degradation.kernel_size = c.model.blur_kernel_size;
    if (j.contains("paths")) {
        const auto& s = j.at("paths");
        reject_unknown(s, {"data_dir", "output_dir", "pca", "checkpoint"}, "paths");
        read(s, "data_dir", c.data_dir);
        read(s, "output_dir", c.output_dir);
        read(s, "pca", c.pca_path);
        read(s, "checkpoint", c.checkpoint);
    }
    t.validate();
    return c;
}

json default_config_json() { return to_json(RunConfig{}); }

json load_config_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    json file;
    try {
        file = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    // A preset must not be overridden field-by-field by the defaults, so the model section is
    // taken verbatim from the file when present.
    json merged = default_config_json();
    if (file.contains("model")) merged["model"] = json::object();
    merged.merge_patch(file);
    return merged;
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    std::string pointer;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        pointer += "/" + key.substr(start, dot - start);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    config[json::json_pointer(pointer)] = value;
}

}  // namespace dmsr
