#pragma once

// Minimal reverse-mode differentiation over planar C x H x W tensors. Ops record a closure on a
// Tape; Tape::backward walks them in reverse creation order. Learnable arrays live in a
// ParameterSet and receive gradients through the tape's gradient buffers.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dmsr/detail/planar.hpp"
#include "dmsr/image.hpp"

namespace dmsr::ag {

template <typename T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int channels, int height, int width, T fill = T(0))
        : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
    T* plane(int ch) { return v.data() + ch * plane_size(); }
    const T* plane(int ch) const { return v.data() + ch * plane_size(); }
    T& at(int ch, int y, int x) { return v[ch * plane_size() + static_cast<std::size_t>(y) * w + x]; }
    T at(int ch, int y, int x) const { return v[ch * plane_size() + static_cast<std::size_t>(y) * w + x]; }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

template <typename T>
Tensor<T> to_tensor(const ImageTensor& image);
template <typename T>
ImageTensor to_image(const Tensor<T>& tensor);

template <typename T>
struct ParamArray {
    std::string name;
    std::vector<int> shape;
    std::string init;
    std::vector<T> data;
};

// Named learnable arrays in creation order.
template <typename T>
class ParameterSet {
public:
    int add(std::string name, std::vector<int> shape, std::string init);
    int id(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    ParamArray<T>& operator[](int i) { return arrays_[i]; }
    const ParamArray<T>& operator[](int i) const { return arrays_[i]; }
    ParamArray<T>& operator[](const std::string& name) { return arrays_[id(name)]; }
    const ParamArray<T>& operator[](const std::string& name) const { return arrays_[id(name)]; }
    std::size_t size() const { return arrays_.size(); }
    auto begin() { return arrays_.begin(); }
    auto end() { return arrays_.end(); }
    auto begin() const { return arrays_.begin(); }
    auto end() const { return arrays_.end(); }
    std::int64_t scalar_count() const;

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& a : arrays_) {
            const int i = out.add(a.name, a.shape, a.init);
            out[i].data.assign(a.data.begin(), a.data.end());
        }
        return out;
    }

private:
    std::vector<ParamArray<T>> arrays_;
    std::unordered_map<std::string, int> index_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.v.empty()) grad = Tensor<T>(value.c, value.h, value.w);
        return grad;
    }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
class Tape {
public:
    // params may be null for graphs without learnable arrays. With param_grads false no
    // gradients flow to parameters; with record false nothing is retained for backward.
    explicit Tape(const ParameterSet<T>* params = nullptr, bool param_grads = true, bool record = true);

    Var<T> constant(Tensor<T> value);
    Var<T> leaf(Tensor<T> value, bool requires_grad = true);

    // Seeds d(loss)/d(loss) = 1 for a single-element tensor and runs all recorded closures.
    void backward(const Var<T>& loss);

    const ParameterSet<T>& params() const;
    bool param_grads_enabled() const { return params_ != nullptr && param_grads_; }
    bool recording() const { return record_; }
    Gradients<T>& grads() { return grads_; }
    const Gradients<T>& grads() const { return grads_; }
    std::vector<T>& grad_of(int param_id) { return grads_[param_id]; }

    // Creates a node; `backward` is kept only when recording and the node needs a gradient.
    Var<T> make(Tensor<T> value, bool requires_grad, std::function<void(Node<T>&)> backward);

private:
    const ParameterSet<T>* params_;
    bool param_grads_;
    bool record_;
    Gradients<T> grads_;
    std::vector<Var<T>> order_;
};

// Convolution, stride 1, square kernel, zero padding `pad`. Weight shape (out, in, k, k); bias may be -1.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, int weight_id, int bias_id, int pad);
// y = W x (+ b) on the flattened input. Weight shape (out, in).
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, int weight_id, int bias_id);

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor);
// x[c] * gate[c] with gate of shape C x 1 x 1.
template <typename T>
Var<T> scale_channels(Tape<T>& tape, const Var<T>& x, const Var<T>& gate);
template <typename T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x);
// Softmax over every element of x.
template <typename T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, int c, int h, int w);
template <typename T>
Var<T> pixel_shuffle(Tape<T>& tape, const Var<T>& x, int r);
template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
// C x 1 x 1 -> C x h x w
template <typename T>
Var<T> repeat_spatial(Tape<T>& tape, const Var<T>& x, int h, int w);
// 1 x 1 x 1 -> c x h x w
template <typename T>
Var<T> broadcast_scalar(Tape<T>& tape, const Var<T>& x, int c, int h, int w);
// sqrt(mean(x^2)) as 1 x 1 x 1
template <typename T>
Var<T> rms(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> detach(Tape<T>& tape, const Var<T>& x);

// Per-pixel kernels: weights is (k*k) x H x W, image is C x H x W, zero padding, the same
// kernel applied to every channel.
template <typename T>
Var<T> dynamic_conv(Tape<T>& tape, const Var<T>& image, const Var<T>& weights, int k);
// Correlation of each channel with a 1 x k x k kernel, reflect padding.
template <typename T>
Var<T> blur_reflect(Tape<T>& tape, const Var<T>& image, const Var<T>& kernel);
// Separable resampling with precomputed taps (shared with the degradation pipeline).
template <typename T>
Var<T> resample(Tape<T>& tape, const Var<T>& image, const detail::AxisTaps& ty, const detail::AxisTaps& tx);

// Scalar reductions, returned as 1 x 1 x 1.
template <typename T>
Var<T> l1_mean(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mse_mean(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const std::vector<std::pair<Var<T>, T>>& terms);

}  // namespace dmsr::ag
