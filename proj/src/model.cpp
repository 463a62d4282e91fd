#include "dmsr/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dmsr {

using ag::Tape;
using ag::Var;

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
    if (channels < 1 || extractor_channels < 1) fail("channel counts must be positive");
    if (ca_reduction < 1 || channels < ca_reduction) fail("channels must be >= ca_reduction");
    if (n_groups < 0 || n_rcab_per_group < 0) fail("group/RCAB counts must be non-negative");
    if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd");
    if (mnm_kernel_size != 1 && mnm_kernel_size != 3) fail("mnm_kernel_size must be 1 or 3");
    if (blur_kernel_size < 1 || blur_kernel_size % 2 == 0) fail("blur_kernel_size must be odd");
    if (embed_dim < 1 || embed_dim > blur_kernel_size * blur_kernel_size) fail("embed_dim must be in [1, k*k]");
    if (scale < 2 || scale > 4) fail("scale must be 2, 3 or 4");
    if (n_mbm < 1) fail("n_mbm must be >= 1");
}

ModelConfig paper_config(int scale) {
    ModelConfig c;
    c.scale = scale;
    return c;
}

ModelConfig tiny_config(int scale) {
    ModelConfig c;
    c.channels = 8;
    c.extractor_channels = 8;
    c.n_groups = 1;
    c.n_rcab_per_group = 2;
    c.ca_reduction = 4;
    c.blur_kernel_size = 5;
    c.embed_dim = 15;
    c.scale = scale;
    return c;
}

std::string to_string(MnmMode mode) { return mode == MnmMode::NoiseMap ? "noise_map" : "noise_scalar"; }

MnmMode parse_mnm_mode(const std::string& text) {
    if (text == "noise_map") return MnmMode::NoiseMap;
    if (text == "noise_scalar") return MnmMode::NoiseScalar;
    throw std::invalid_argument("unknown mnm_mode '" + text + "' (expected noise_map or noise_scalar)");
}

namespace {

std::vector<int> upsampler_stages(int scale) {
    switch (scale) {
        case 2: return {2};
        case 3: return {3};
        case 4: return {2, 2};
        default: throw std::invalid_argument("unsupported scale " + std::to_string(scale));
    }
}

template <typename T>
void add_conv(ag::ParameterSet<T>& p, const std::string& name, int cin, int cout, int k, const std::string& init = "kaiming",
              const std::string& bias_init = "zeros") {
    p.add(name + ".weight", {cout, cin, k, k}, init);
    p.add(name + ".bias", {cout}, bias_init);
}

template <typename T>
Var<T> conv(Tape<T>& tape, const Var<T>& x, const std::string& name) {
    const auto& p = tape.params();
    const int w = p.id(name + ".weight");
    const int b = p.contains(name + ".bias") ? p.id(name + ".bias") : -1;
    return ag::conv2d(tape, x, w, b, p[w].shape[2] / 2);
}

template <typename T>
void initialize(ag::ParamArray<T>& a, std::uint64_t seed, const PcaProjection& pca) {
    std::mt19937_64 rng(seed);
    const auto& s = a.shape;
    if (a.init == "zeros") {
        std::fill(a.data.begin(), a.data.end(), T(0));
    } else if (a.init == "kaiming" || a.init == "kaiming_x0.1") {
        const int fan_in = s[1] * s[2] * s[3];
        double stddev = std::sqrt(2.0 / fan_in);
        if (a.init == "kaiming_x0.1") stddev *= 0.1;
        std::normal_distribution<double> normal(0.0, stddev);
        for (auto& v : a.data) v = static_cast<T>(normal(rng));
    } else if (a.init == "delta") {
        // bias of a (k*k)-channel weight generator: centered delta kernel
        std::fill(a.data.begin(), a.data.end(), T(0));
        a.data[a.data.size() / 2] = T(1);
    } else if (a.init == "identity") {
        std::fill(a.data.begin(), a.data.end(), T(0));
        const int k = s[2];
        for (int o = 0; o < std::min(s[0], s[1]); ++o)
            a.data[((static_cast<std::size_t>(o) * s[1] + o) * k + k / 2) * k + k / 2] = T(1);
    } else if (a.init == "pca") {
        if (pca.embed_dim != s[0] || pca.input_dim != s[1])
            throw std::invalid_argument("PCA projection " + std::to_string(pca.embed_dim) + "x" + std::to_string(pca.input_dim) +
                                        " does not match embedding " + std::to_string(s[0]) + "x" + std::to_string(s[1]));
        for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<T>(pca.matrix[i]);
    } else {
        throw std::invalid_argument("unknown initializer " + a.init);
    }
}

}  // namespace

PcaProjection default_pca(const ModelConfig& config) {
    const auto pool = build_kernel_pool(10000, 0.2, 3.0, 0x5eedull, config.blur_kernel_size, config.embed_dim);
    return compute_pca(pool, config.embed_dim);
}

template <typename T>
ag::ParameterSet<T> parameter_layout(const ModelConfig& config) {
    config.validate();
    ag::ParameterSet<T> p;
    const int C = config.channels, CE = config.extractor_channels, K = config.kernel_size;
    const int kk = config.blur_kernel_size * config.blur_kernel_size;

    add_conv(p, "extractor.head", 3, CE, K);
    for (int r = 0; r < 2; ++r) {
        add_conv(p, "extractor.res" + std::to_string(r) + ".conv1", CE, CE, K);
        add_conv(p, "extractor.res" + std::to_string(r) + ".conv2", CE, CE, K);
    }
    add_conv(p, "extractor.noise", CE, 3, K, "kaiming_x0.1");
    add_conv(p, "extractor.blur1", CE, 2 * CE, K);
    add_conv(p, "extractor.blur2", 2 * CE, kk, K);

    add_conv(p, "sr_network.mnm", 6, C, config.mnm_kernel_size);
    add_conv(p, "sr_network.head", C, C, K);
    const int reduced = C / config.ca_reduction;
    for (int g = 0; g < config.n_groups; ++g) {
        const std::string group = "sr_network.group" + std::to_string(g);
        for (int r = 0; r < config.n_rcab_per_group; ++r) {
            const std::string rcab = group + ".rcab" + std::to_string(r);
            add_conv(p, rcab + ".conv1", C, C, K);
            add_conv(p, rcab + ".conv2", C, C, K, "kaiming_x0.1");
            add_conv(p, rcab + ".ca_down", C, reduced, 1);
            add_conv(p, rcab + ".ca_up", reduced, C, 1);
        }
        add_conv(p, group + ".tail", C, C, K);
    }
    add_conv(p, "sr_network.trunk", C, C, K);
    const auto stages = upsampler_stages(config.scale);
    for (std::size_t i = 0; i < stages.size(); ++i)
        add_conv(p, "sr_network.up" + std::to_string(i), C, C * stages[i] * stages[i], K);
    add_conv(p, "sr_network.tail", C, 3, K, "kaiming_x0.1");
    for (int m = 0; m < config.n_mbm; ++m) {
        const std::string mbm = "sr_network.mbm" + std::to_string(m);
        p.add(mbm + ".embed.weight", {config.embed_dim, kk}, "pca");
        add_conv(p, mbm + ".weights", 3 + config.embed_dim, kk, K, "kaiming_x0.1", "delta");
        add_conv(p, mbm + ".out", 3, 3, K, "identity");
    }
    return p;
}

template <typename T>
Network<T> make_network(const ModelConfig& config, const PcaProjection& pca, std::uint64_t seed) {
    Network<T> net;
    net.config = config;
    net.params = parameter_layout<T>(config);
    auto& p = net.params;
    for (std::size_t i = 0; i < p.size(); ++i) initialize(p[static_cast<int>(i)], derive_seed(seed, i), pca);
    std::vector<float> pm(pca.matrix.begin(), pca.matrix.end());
    net.pca_hash = hash_floats(pm);
    return net;
}

template <typename T>
Network<T> make_network(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    return make_network<T>(config, default_pca(config), seed);
}

template <typename T>
ExtractorVars<T> extractor_forward(Tape<T>& tape, const ModelConfig& config, const Var<T>& lr) {
    if (lr->value.c != 3) throw std::invalid_argument("extractor_forward: expected a 3-channel image");
    auto x = ag::relu(tape, conv(tape, lr, "extractor.head"));
    for (int r = 0; r < 2; ++r) {
        const std::string name = "extractor.res" + std::to_string(r);
        auto y = conv(tape, ag::relu(tape, conv(tape, x, name + ".conv1")), name + ".conv2");
        x = ag::add(tape, x, y);
    }
    ExtractorVars<T> out;
    out.noise_map = conv(tape, x, "extractor.noise");
    auto b = ag::relu(tape, conv(tape, x, "extractor.blur1"));
    b = ag::relu(tape, conv(tape, b, "extractor.blur2"));
    b = ag::softmax(tape, ag::global_avg_pool(tape, b));
    const int k = config.blur_kernel_size;
    out.kernel = ag::reshape(tape, b, 1, k, k);
    return out;
}

template <typename T>
Var<T> mnm_forward(Tape<T>& tape, const ModelConfig& config, const Var<T>& lr, const Var<T>& noise_map) {
    const auto& a = lr->value;
    const auto& n = noise_map->value;
    if (a.c != 3 || n.c != 3 || a.h != n.h || a.w != n.w)
        throw std::invalid_argument("mnm_forward: image and noise map must both be 3 x H x W with equal size");
    Var<T> guide = noise_map;
    if (config.mnm_mode == MnmMode::NoiseScalar) guide = ag::broadcast_scalar(tape, ag::rms(tape, noise_map), 3, n.h, n.w);
    return conv(tape, ag::concat_channels(tape, lr, guide), "sr_network.mnm");
}

template <typename T>
Var<T> backbone_forward(Tape<T>& tape, const ModelConfig& config, const Var<T>& features) {
    if (features->value.c != config.channels)
        throw std::invalid_argument("backbone_forward: expected " + std::to_string(config.channels) + " feature channels");
    const auto stages = upsampler_stages(config.scale);
    const auto x0 = conv(tape, features, "sr_network.head");
    auto x = x0;
    for (int g = 0; g < config.n_groups; ++g) {
        const std::string group = "sr_network.group" + std::to_string(g);
        auto y = x;
        for (int r = 0; r < config.n_rcab_per_group; ++r) {
            const std::string rcab = group + ".rcab" + std::to_string(r);
            auto res = conv(tape, ag::relu(tape, conv(tape, y, rcab + ".conv1")), rcab + ".conv2");
            auto gate = ag::global_avg_pool(tape, res);
            gate = ag::relu(tape, conv(tape, gate, rcab + ".ca_down"));
            gate = ag::sigmoid(tape, conv(tape, gate, rcab + ".ca_up"));
            y = ag::add(tape, y, ag::scale_channels(tape, res, gate));
        }
        x = ag::add(tape, x, conv(tape, y, group + ".tail"));
    }
    x = ag::add(tape, conv(tape, x, "sr_network.trunk"), x0);
    for (std::size_t i = 0; i < stages.size(); ++i)
        x = ag::relu(tape, ag::pixel_shuffle(tape, conv(tape, x, "sr_network.up" + std::to_string(i)), stages[i]));
    return conv(tape, x, "sr_network.tail");
}

template <typename T>
Var<T> mbm_embedding(Tape<T>& tape, const ModelConfig& config, int index, const Var<T>& kernel_est) {
    const int k = config.blur_kernel_size;
    if (kernel_est->value.size() != static_cast<std::size_t>(k) * k)
        throw std::invalid_argument("mbm_forward: kernel estimate must have " + std::to_string(k * k) + " entries");
    const auto& p = tape.params();
    return ag::linear(tape, kernel_est, p.id("sr_network.mbm" + std::to_string(index) + ".embed.weight"), -1);
}

template <typename T>
Var<T> mbm_weight_field(Tape<T>& tape, const ModelConfig& config, int index, const Var<T>& coarse, const Var<T>& kernel_est) {
    if (coarse->value.c != 3) throw std::invalid_argument("mbm_forward: coarse image must have 3 channels");
    const auto embed = mbm_embedding(tape, config, index, kernel_est);
    const auto stretched = ag::repeat_spatial(tape, embed, coarse->value.h, coarse->value.w);
    return conv(tape, ag::concat_channels(tape, coarse, stretched), "sr_network.mbm" + std::to_string(index) + ".weights");
}

template <typename T>
Var<T> mbm_forward(Tape<T>& tape, const ModelConfig& config, int index, const Var<T>& coarse, const Var<T>& kernel_est) {
    const auto field = mbm_weight_field(tape, config, index, coarse, kernel_est);
    const auto deblurred = ag::dynamic_conv(tape, coarse, field, config.blur_kernel_size);
    return conv(tape, deblurred, "sr_network.mbm" + std::to_string(index) + ".out");
}

template <typename T>
ForwardVars<T> dmsr_forward(Tape<T>& tape, const ModelConfig& config, const Var<T>& lr) {
    ForwardVars<T> out;
    out.estimate = extractor_forward(tape, config, lr);
    auto x = backbone_forward(tape, config, mnm_forward(tape, config, lr, out.estimate.noise_map));
    for (int m = 0; m < config.n_mbm; ++m) x = mbm_forward(tape, config, m, x, out.estimate.kernel);
    out.sr = x;
    return out;
}

static ExtractorOutput to_output(const ExtractorVars<float>& vars) {
    ExtractorOutput out;
    out.noise_map_est = ag::to_image(vars.noise_map->value);
    const auto& k = vars.kernel->value;
    out.kernel_est.size = k.h;
    out.kernel_est.weights.assign(k.v.begin(), k.v.end());
    return out;
}

ExtractorOutput extract(const Network<float>& net, const ImageTensor& lr) {
    Tape<float> tape(&net.params, false, false);
    auto input = tape.constant(ag::to_tensor<float>(lr));
    return to_output(extractor_forward(tape, net.config, input));
}

ImageTensor super_resolve(const Network<float>& net, const ImageTensor& lr, ExtractorOutput* estimate) {
    Tape<float> tape(&net.params, false, false);
    auto input = tape.constant(ag::to_tensor<float>(lr));
    auto out = dmsr_forward(tape, net.config, input);
    if (estimate) *estimate = to_output(out.estimate);
    ImageTensor sr = ag::to_image(out.sr->value);
    sr.clamp01();
    return sr;
}

template <typename T>
ParameterCounts count_parameters(const ag::ParameterSet<T>& params) {
    ParameterCounts counts;
    for (const auto& a : params) {
        const auto dot = a.name.find('.');
        const std::string component = a.name.substr(0, dot);
        counts.components[component] += static_cast<std::int64_t>(a.data.size());
        counts.total += static_cast<std::int64_t>(a.data.size());
    }
    return counts;
}

#define DMSR_MODEL_INSTANTIATE(T)                                                                                    \
    template Network<T> make_network<T>(const ModelConfig&, const PcaProjection&, std::uint64_t);                    \
    template Network<T> make_network<T>(const ModelConfig&, std::uint64_t);                                          \
    template ag::ParameterSet<T> parameter_layout<T>(const ModelConfig&);                                            \
    template ExtractorVars<T> extractor_forward<T>(Tape<T>&, const ModelConfig&, const Var<T>&);                     \
    template Var<T> mnm_forward<T>(Tape<T>&, const ModelConfig&, const Var<T>&, const Var<T>&);                      \
    template Var<T> backbone_forward<T>(Tape<T>&, const ModelConfig&, const Var<T>&);                                \
    template Var<T> mbm_embedding<T>(Tape<T>&, const ModelConfig&, int, const Var<T>&);                              \
    template Var<T> mbm_weight_field<T>(Tape<T>&, const ModelConfig&, int, const Var<T>&, const Var<T>&);            \
    template Var<T> mbm_forward<T>(Tape<T>&, const ModelConfig&, int, const Var<T>&, const Var<T>&);                 \
    template ForwardVars<T> dmsr_forward<T>(Tape<T>&, const ModelConfig&, const Var<T>&);                            \
    template ParameterCounts count_parameters<T>(const ag::ParameterSet<T>&);

DMSR_MODEL_INSTANTIATE(float)
DMSR_MODEL_INSTANTIATE(double)

}  // namespace dmsr
