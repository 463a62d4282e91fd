#include "dmsr/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dmsr::ag {

template <typename T>
Tensor<T> to_tensor(const ImageTensor& image) {
    Tensor<T> t(image.channels(), image.height(), image.width());
    const auto src = image.data();
    const std::size_t hw = t.plane_size();
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < t.c; ++c) t.v[c * hw + i] = static_cast<T>(src[i * t.c + c]);
    return t;
}

template <typename T>
ImageTensor to_image(const Tensor<T>& tensor) {
    ImageTensor image(tensor.h, tensor.w, tensor.c);
    auto dst = image.data();
    const std::size_t hw = tensor.plane_size();
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < tensor.c; ++c) dst[i * tensor.c + c] = static_cast<float>(tensor.v[c * hw + i]);
    return image;
}

// ---------------------------------------------------------------------------------------------
// ParameterSet / Tape

template <typename T>
int ParameterSet<T>::add(std::string name, std::vector<int> shape, std::string init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    const int id = static_cast<int>(arrays_.size());
    index_.emplace(name, id);
    arrays_.push_back({std::move(name), std::move(shape), std::move(init), std::vector<T>(n, T(0))});
    return id;
}

template <typename T>
int ParameterSet<T>::id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
}

template <typename T>
std::int64_t ParameterSet<T>::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& a : arrays_) n += static_cast<std::int64_t>(a.data.size());
    return n;
}

template <typename T>
Tape<T>::Tape(const ParameterSet<T>* params, bool param_grads, bool record)
    : params_(params), param_grads_(param_grads && record), record_(record) {
    if (params_ && param_grads_) {
        grads_.resize(params_->size());
        for (std::size_t i = 0; i < params_->size(); ++i) grads_[i].assign((*params_)[static_cast<int>(i)].data.size(), T(0));
    }
}

template <typename T>
const ParameterSet<T>& Tape<T>::params() const {
    if (!params_) throw std::logic_error("tape has no parameter set");
    return *params_;
}

template <typename T>
Var<T> Tape<T>::make(Tensor<T> value, bool requires_grad, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = record_ && requires_grad;
    if (node->requires_grad && backward) {
        node->backward = std::move(backward);
        order_.push_back(node);
    }
    return node;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    return make(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = record_ && requires_grad;
    return node;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be a single element");
    if (!loss->requires_grad) return;
    loss->grad_buffer().v[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>& node = **it;
        if (!node.grad.v.empty() && node.backward) node.backward(node);
    }
}

namespace {

template <typename T>
bool needs(const Var<T>& x) {
    return x->requires_grad;
}

template <typename T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// rows = cin*k*k, cols = oh*ow
template <typename T>
void im2col(const Tensor<T>& x, int k, int pad, int oh, int ow, std::vector<T>& col) {
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    col.assign(static_cast<std::size_t>(x.c) * k * k * n, T(0));
    for (int ci = 0; ci < x.c; ++ci) {
        const T* src = x.plane(ci);
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* dst = col.data() + (static_cast<std::size_t>(ci * k + ki) * k + kj) * n;
                const int x_lo = std::max(0, pad - kj);
                const int x_hi = std::min(ow, x.w + pad - kj);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy + ki - pad;
                    if (iy < 0 || iy >= x.h) continue;
                    const T* srow = src + static_cast<std::size_t>(iy) * x.w + (kj - pad);
                    T* drow = dst + static_cast<std::size_t>(oy) * ow;
                    for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] = srow[ox];
                }
            }
        }
    }
}

template <typename T>
void col2im(const std::vector<T>& col, int k, int pad, int oh, int ow, Tensor<T>& gx) {
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < gx.c; ++ci) {
        T* dst = gx.plane(ci);
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* src = col.data() + (static_cast<std::size_t>(ci * k + ki) * k + kj) * n;
                const int x_lo = std::max(0, pad - kj);
                const int x_hi = std::min(ow, gx.w + pad - kj);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy + ki - pad;
                    if (iy < 0 || iy >= gx.h) continue;
                    T* drow = dst + static_cast<std::size_t>(iy) * gx.w + (kj - pad);
                    const T* srow = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = x_lo; ox < x_hi; ++ox) drow[ox] += srow[ox];
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Layers with parameters

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, int weight_id, int bias_id, int pad) {
    const auto& params = tape.params();
    const auto& W = params[weight_id];
    if (W.shape.size() != 4 || W.shape[2] != W.shape[3]) throw std::invalid_argument("conv2d: weight must be (out,in,k,k)");
    const int cout = W.shape[0], cin = W.shape[1], k = W.shape[2];
    const auto& in = x->value;
    if (in.c != cin)
        throw std::invalid_argument("conv2d " + W.name + ": expected " + std::to_string(cin) + " input channels, got " +
                                    std::to_string(in.c));
    const int oh = in.h + 2 * pad - k + 1, ow = in.w + 2 * pad - k + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: input smaller than kernel");
    const std::size_t n = static_cast<std::size_t>(oh) * ow;
    const int kk = cin * k * k;
    const bool direct = (k == 1 && pad == 0);

    std::vector<T> col;
    if (!direct) im2col(in, k, pad, oh, ow, col);
    const T* colp = direct ? in.v.data() : col.data();

    Tensor<T> out(cout, oh, ow);
    Eigen::Map<const MatR<T>> wm(W.data.data(), cout, kk);
    Eigen::Map<const MatR<T>> cm(colp, kk, static_cast<Eigen::Index>(n));
    Eigen::Map<MatR<T>> om(out.v.data(), cout, static_cast<Eigen::Index>(n));
    om.noalias() = wm * cm;
    if (bias_id >= 0) {
        const auto& b = params[bias_id].data;
        for (int o = 0; o < cout; ++o) om.row(o).array() += b[o];
    }

    const bool req = needs(x) || tape.param_grads_enabled();
    return tape.make(std::move(out), req, [&tape, x, weight_id, bias_id, pad, k, cin, cout, oh, ow, n, kk, direct](Node<T>& self) {
        const auto& W = tape.params()[weight_id];
        Eigen::Map<const MatR<T>> gm(self.grad.v.data(), cout, static_cast<Eigen::Index>(n));
        std::vector<T> col;
        if (!direct) im2col(x->value, k, pad, oh, ow, col);
        const T* colp = direct ? x->value.v.data() : col.data();
        Eigen::Map<const MatR<T>> cm(colp, kk, static_cast<Eigen::Index>(n));
        if (tape.param_grads_enabled()) {
            Eigen::Map<MatR<T>> gw(tape.grad_of(weight_id).data(), cout, kk);
            gw.noalias() += gm * cm.transpose();
            if (bias_id >= 0) {
                auto& gb = tape.grad_of(bias_id);
                // Plain loop: Eigen's vectorized sum depends on the buffer's alignment.
                for (int o = 0; o < cout; ++o) {
                    const T* row = self.grad.v.data() + static_cast<std::size_t>(o) * n;
                    gb[o] += std::accumulate(row, row + n, T(0));
                }
            }
        }
        if (x->requires_grad) {
            Eigen::Map<const MatR<T>> wm(W.data.data(), cout, kk);
            auto& gx = x->grad_buffer();
            if (direct) {
                Eigen::Map<MatR<T>> gxm(gx.v.data(), kk, static_cast<Eigen::Index>(n));
                gxm.noalias() += wm.transpose() * gm;
            } else {
                std::vector<T> gcol(static_cast<std::size_t>(kk) * n);
                Eigen::Map<MatR<T>> gcm(gcol.data(), kk, static_cast<Eigen::Index>(n));
                gcm.noalias() = wm.transpose() * gm;
                col2im(gcol, k, pad, oh, ow, gx);
            }
        }
    });
}

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, int weight_id, int bias_id) {
    const auto& W = tape.params()[weight_id];
    if (W.shape.size() != 2) throw std::invalid_argument("linear: weight must be (out,in)");
    const int nout = W.shape[0], nin = W.shape[1];
    if (static_cast<int>(x->value.size()) != nin)
        throw std::invalid_argument("linear " + W.name + ": expected " + std::to_string(nin) + " inputs, got " +
                                    std::to_string(x->value.size()));
    Tensor<T> out(nout, 1, 1);
    for (int o = 0; o < nout; ++o) {
        T acc = bias_id >= 0 ? tape.params()[bias_id].data[o] : T(0);
        const T* wr = W.data.data() + static_cast<std::size_t>(o) * nin;
        for (int i = 0; i < nin; ++i) acc += wr[i] * x->value.v[i];
        out.v[o] = acc;
    }
    const bool req = needs(x) || tape.param_grads_enabled();
    return tape.make(std::move(out), req, [&tape, x, weight_id, bias_id, nout, nin](Node<T>& self) {
        const auto& W = tape.params()[weight_id];
        for (int o = 0; o < nout; ++o) {
            const T g = self.grad.v[o];
            if (tape.param_grads_enabled()) {
                T* gw = tape.grad_of(weight_id).data() + static_cast<std::size_t>(o) * nin;
                for (int i = 0; i < nin; ++i) gw[i] += g * x->value.v[i];
                if (bias_id >= 0) tape.grad_of(bias_id)[o] += g;
            }
            if (x->requires_grad) {
                auto& gx = x->grad_buffer();
                const T* wr = W.data.data() + static_cast<std::size_t>(o) * nin;
                for (int i = 0; i < nin; ++i) gx.v[i] += g * wr[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.v) v = v > T(0) ? v : T(0);
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            if (x->value.v[i] > T(0)) gx.v[i] += self.grad.v[i];
    });
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.v) v = T(1) / (T(1) + std::exp(-v));
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.v.size(); ++i) {
            const T s = self.value.v[i];
            gx.v[i] += self.grad.v[i] * s * (T(1) - s);
        }
    });
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "add");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->value.v[i];
    return tape.make(std::move(out), needs(a) || needs(b), [a, b](Node<T>& self) {
        for (const auto& in : {a, b}) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
        }
    });
}

template <typename T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "sub");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b->value.v[i];
    return tape.make(std::move(out), needs(a) || needs(b), [a, b](Node<T>& self) {
        if (a->requires_grad) {
            auto& g = a->grad_buffer();
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            auto& g = b->grad_buffer();
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] -= self.grad.v[i];
        }
    });
}

template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
    Tensor<T> out = x->value;
    for (auto& v : out.v) v *= factor;
    return tape.make(std::move(out), needs(x), [x, factor](Node<T>& self) {
        auto& g = x->grad_buffer();
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += factor * self.grad.v[i];
    });
}

template <typename T>
Var<T> scale_channels(Tape<T>& tape, const Var<T>& x, const Var<T>& gate) {
    const auto& in = x->value;
    if (gate->value.c != in.c || gate->value.h != 1 || gate->value.w != 1)
        throw std::invalid_argument("scale_channels: gate must be C x 1 x 1");
    Tensor<T> out = in;
    const std::size_t hw = in.plane_size();
    for (int c = 0; c < in.c; ++c) {
        T* p = out.plane(c);
        for (std::size_t i = 0; i < hw; ++i) p[i] *= gate->value.v[c];
    }
    return tape.make(std::move(out), needs(x) || needs(gate), [x, gate, hw](Node<T>& self) {
        const int C = x->value.c;
        for (int c = 0; c < C; ++c) {
            const T* g = self.grad.plane(c);
            if (x->requires_grad) {
                T* gx = x->grad_buffer().plane(c);
                const T s = gate->value.v[c];
                for (std::size_t i = 0; i < hw; ++i) gx[i] += g[i] * s;
            }
            if (gate->requires_grad) {
                const T* xv = x->value.plane(c);
                T acc = T(0);
                for (std::size_t i = 0; i < hw; ++i) acc += g[i] * xv[i];
                gate->grad_buffer().v[c] += acc;
            }
        }
    });
}

template <typename T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x) {
    const auto& in = x->value;
    const std::size_t hw = in.plane_size();
    Tensor<T> out(in.c, 1, 1);
    for (int c = 0; c < in.c; ++c) {
        const T* p = in.plane(c);
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        out.v[c] = acc / static_cast<T>(hw);
    }
    return tape.make(std::move(out), needs(x), [x, hw](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (int c = 0; c < gx.c; ++c) {
            const T g = self.grad.v[c] / static_cast<T>(hw);
            T* p = gx.plane(c);
            for (std::size_t i = 0; i < hw; ++i) p[i] += g;
        }
    });
}

template <typename T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x) {
    Tensor<T> out = x->value;
    const T m = *std::max_element(out.v.begin(), out.v.end());
    T total = T(0);
    for (auto& v : out.v) {
        v = std::exp(v - m);
        total += v;
    }
    for (auto& v : out.v) v /= total;
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        T dot = T(0);
        for (std::size_t i = 0; i < self.value.v.size(); ++i) dot += self.grad.v[i] * self.value.v[i];
        auto& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += self.value.v[i] * (self.grad.v[i] - dot);
    });
}

template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, int c, int h, int w) {
    if (static_cast<std::size_t>(c) * h * w != x->value.size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor<T> out;
    out.c = c;
    out.h = h;
    out.w = w;
    out.v = x->value.v;
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += self.grad.v[i];
    });
}

template <typename T>
Var<T> pixel_shuffle(Tape<T>& tape, const Var<T>& x, int r) {
    const auto& in = x->value;
    if (r < 1 || in.c % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    const int co = in.c / (r * r);
    Tensor<T> out(co, in.h * r, in.w * r);
    for (int c = 0; c < co; ++c)
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) {
                const T* src = in.plane(c * r * r + i * r + j);
                for (int y = 0; y < in.h; ++y)
                    for (int xx = 0; xx < in.w; ++xx) out.at(c, y * r + i, xx * r + j) = src[static_cast<std::size_t>(y) * in.w + xx];
            }
    return tape.make(std::move(out), needs(x), [x, r, co](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (int c = 0; c < co; ++c)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j) {
                    T* dst = gx.plane(c * r * r + i * r + j);
                    for (int y = 0; y < gx.h; ++y)
                        for (int xx = 0; xx < gx.w; ++xx)
                            dst[static_cast<std::size_t>(y) * gx.w + xx] += self.grad.at(c, y * r + i, xx * r + j);
                }
    });
}

template <typename T>
Var<T> concat_channels(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    if (a->value.h != b->value.h || a->value.w != b->value.w) throw std::invalid_argument("concat_channels: spatial mismatch");
    Tensor<T> out(a->value.c + b->value.c, a->value.h, a->value.w);
    std::copy(a->value.v.begin(), a->value.v.end(), out.v.begin());
    std::copy(b->value.v.begin(), b->value.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a->value.size()));
    return tape.make(std::move(out), needs(a) || needs(b), [a, b](Node<T>& self) {
        const std::size_t na = a->value.size();
        if (a->requires_grad) {
            auto& g = a->grad_buffer();
            for (std::size_t i = 0; i < na; ++i) g.v[i] += self.grad.v[i];
        }
        if (b->requires_grad) {
            auto& g = b->grad_buffer();
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[na + i];
        }
    });
}

template <typename T>
Var<T> repeat_spatial(Tape<T>& tape, const Var<T>& x, int h, int w) {
    if (x->value.h != 1 || x->value.w != 1) throw std::invalid_argument("repeat_spatial: input must be C x 1 x 1");
    Tensor<T> out(x->value.c, h, w);
    for (int c = 0; c < out.c; ++c) std::fill(out.plane(c), out.plane(c) + out.plane_size(), x->value.v[c]);
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        auto& gx = x->grad_buffer();
        for (int c = 0; c < self.grad.c; ++c) {
            const T* g = self.grad.plane(c);
            T acc = T(0);
            for (std::size_t i = 0; i < self.grad.plane_size(); ++i) acc += g[i];
            gx.v[c] += acc;
        }
    });
}

template <typename T>
Var<T> broadcast_scalar(Tape<T>& tape, const Var<T>& x, int c, int h, int w) {
    if (x->value.size() != 1) throw std::invalid_argument("broadcast_scalar: input must have one element");
    Tensor<T> out(c, h, w, x->value.v[0]);
    return tape.make(std::move(out), needs(x), [x](Node<T>& self) {
        T acc = T(0);
        for (T g : self.grad.v) acc += g;
        x->grad_buffer().v[0] += acc;
    });
}

template <typename T>
Var<T> rms(Tape<T>& tape, const Var<T>& x) {
    T acc = T(0);
    for (T v : x->value.v) acc += v * v;
    const T n = static_cast<T>(x->value.size());
    Tensor<T> out(1, 1, 1, std::sqrt(acc / n));
    return tape.make(std::move(out), needs(x), [x, n](Node<T>& self) {
        const T r = self.value.v[0];
        if (r == T(0)) return;
        auto& gx = x->grad_buffer();
        const T g = self.grad.v[0] / (n * r);
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += g * x->value.v[i];
    });
}

template <typename T>
Var<T> detach(Tape<T>& tape, const Var<T>& x) {
    return tape.constant(x->value);
}

// ---------------------------------------------------------------------------------------------
// Image-formation ops

template <typename T>
Var<T> dynamic_conv(Tape<T>& tape, const Var<T>& image, const Var<T>& weights, int k) {
    const auto& img = image->value;
    const auto& wf = weights->value;
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("dynamic_conv: kernel size must be odd");
    if (wf.c != k * k || wf.h != img.h || wf.w != img.w)
        throw std::invalid_argument("dynamic_conv: weight field must be (k*k) x H x W matching the image");
    const int H = img.h, W = img.w, r = k / 2;
    // Up to k*k terms per pixel; summed in double so the float result is a single rounding away.
    std::vector<double> acc(img.size(), 0.0);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const T* wp = wf.plane(i * k + j);
            const int dy = i - r, dx = j - r;
            const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
            for (int c = 0; c < img.c; ++c) {
                const T* src = img.plane(c);
                double* dst = acc.data() + c * img.plane_size();
                for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
                    const T* wrow = wp + static_cast<std::size_t>(y) * W;
                    const T* srow = src + static_cast<std::size_t>(y + dy) * W + dx;
                    double* drow = dst + static_cast<std::size_t>(y) * W;
                    for (int x = x_lo; x < x_hi; ++x) drow[x] += static_cast<double>(wrow[x]) * srow[x];
                }
            }
        }
    }
    Tensor<T> out(img.c, H, W);
    std::transform(acc.begin(), acc.end(), out.v.begin(), [](double v) { return static_cast<T>(v); });
    return tape.make(std::move(out), needs(image) || needs(weights), [image, weights, k, r, H, W](Node<T>& self) {
        const auto& img = image->value;
        const auto& wf = weights->value;
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                const int dy = i - r, dx = j - r;
                const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
                for (int c = 0; c < img.c; ++c) {
                    const T* g = self.grad.plane(c);
                    for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
                        const std::size_t row = static_cast<std::size_t>(y) * W;
                        const std::size_t srow = static_cast<std::size_t>(y + dy) * W + dx;
                        if (weights->requires_grad) {
                            T* gw = weights->grad_buffer().plane(i * k + j) + row;
                            const T* s = img.plane(c) + srow;
                            for (int x = x_lo; x < x_hi; ++x) gw[x] += g[row + x] * s[x];
                        }
                        if (image->requires_grad) {
                            T* gi = image->grad_buffer().plane(c) + srow;
                            const T* wp = wf.plane(i * k + j) + row;
                            for (int x = x_lo; x < x_hi; ++x) gi[x] += g[row + x] * wp[x];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> blur_reflect(Tape<T>& tape, const Var<T>& image, const Var<T>& kernel) {
    const auto& img = image->value;
    const auto& ker = kernel->value;
    const int k = ker.h;
    if (ker.c != 1 || ker.w != k || k % 2 == 0) throw std::invalid_argument("blur_reflect: kernel must be 1 x k x k, k odd");
    if (k > img.h || k > img.w) throw std::invalid_argument("blur_reflect: kernel larger than image");
    Tensor<T> out(img.c, img.h, img.w);
    const std::size_t hw = img.plane_size();
    for (int c = 0; c < img.c; ++c)
        detail::correlate_reflect<T>({img.plane(c), hw}, img.h, img.w, ker.v, k, {out.plane(c), hw});
    return tape.make(std::move(out), needs(image) || needs(kernel), [image, kernel, k, hw](Node<T>& self) {
        const auto& img = image->value;
        std::span<T> gk;
        if (kernel->requires_grad) gk = kernel->grad_buffer().v;
        for (int c = 0; c < img.c; ++c) {
            std::span<T> gi;
            if (image->requires_grad) gi = {image->grad_buffer().plane(c), hw};
            detail::correlate_reflect_backward<T>({img.plane(c), hw}, img.h, img.w, kernel->value.v, k,
                                                  {self.grad.plane(c), hw}, gi, gk);
        }
    });
}

template <typename T>
Var<T> resample(Tape<T>& tape, const Var<T>& image, const detail::AxisTaps& ty, const detail::AxisTaps& tx) {
    const auto& img = image->value;
    if (img.h != ty.in_size || img.w != tx.in_size) throw std::invalid_argument("resample: taps do not match image");
    Tensor<T> out(img.c, ty.out_size, tx.out_size);
    for (int c = 0; c < img.c; ++c)
        detail::resample_plane<T>({img.plane(c), img.plane_size()}, ty, tx, {out.plane(c), out.plane_size()});
    return tape.make(std::move(out), needs(image), [image, ty, tx](Node<T>& self) {
        auto& gi = image->grad_buffer();
        for (int c = 0; c < gi.c; ++c)
            detail::resample_plane_backward<T>({self.grad.plane(c), self.grad.plane_size()}, ty, tx,
                                               {gi.plane(c), gi.plane_size()});
    });
}

// ---------------------------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> l1_mean(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "l1_mean");
    const std::size_t n = a->value.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(a->value.v[i] - b->value.v[i]);
    Tensor<T> out(1, 1, 1, acc / static_cast<T>(n));
    return tape.make(std::move(out), needs(a) || needs(b), [a, b, n](Node<T>& self) {
        const T g = self.grad.v[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = a->value.v[i] - b->value.v[i];
            const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
            if (a->requires_grad) a->grad_buffer().v[i] += s;
            if (b->requires_grad) b->grad_buffer().v[i] -= s;
        }
    });
}

template <typename T>
Var<T> mse_mean(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    check_same(a, b, "mse_mean");
    const std::size_t n = a->value.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a->value.v[i] - b->value.v[i];
        acc += d * d;
    }
    Tensor<T> out(1, 1, 1, acc / static_cast<T>(n));
    return tape.make(std::move(out), needs(a) || needs(b), [a, b, n](Node<T>& self) {
        const T g = T(2) * self.grad.v[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = g * (a->value.v[i] - b->value.v[i]);
            if (a->requires_grad) a->grad_buffer().v[i] += d;
            if (b->requires_grad) b->grad_buffer().v[i] -= d;
        }
    });
}

template <typename T>
Var<T> weighted_sum(Tape<T>& tape, const std::vector<std::pair<Var<T>, T>>& terms) {
    T acc = T(0);
    bool req = false;
    for (const auto& [v, w] : terms) {
        if (v->value.size() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
        acc += w * v->value.v[0];
        req = req || v->requires_grad;
    }
    Tensor<T> out(1, 1, 1, acc);
    return tape.make(std::move(out), req, [terms](Node<T>& self) {
        for (const auto& [v, w] : terms)
            if (v->requires_grad) v->grad_buffer().v[0] += w * self.grad.v[0];
    });
}

// ---------------------------------------------------------------------------------------------

#define DMSR_INSTANTIATE(T)                                                                                      \
    template Tensor<T> to_tensor<T>(const ImageTensor&);                                                         \
    template ImageTensor to_image<T>(const Tensor<T>&);                                                          \
    template class ParameterSet<T>;                                                                              \
    template class Tape<T>;                                                                                      \
    template Var<T> conv2d<T>(Tape<T>&, const Var<T>&, int, int, int);                                           \
    template Var<T> linear<T>(Tape<T>&, const Var<T>&, int, int);                                                \
    template Var<T> relu<T>(Tape<T>&, const Var<T>&);                                                            \
    template Var<T> sigmoid<T>(Tape<T>&, const Var<T>&);                                                         \
    template Var<T> add<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                              \
    template Var<T> sub<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                              \
    template Var<T> scale<T>(Tape<T>&, const Var<T>&, T);                                                        \
    template Var<T> scale_channels<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                   \
    template Var<T> global_avg_pool<T>(Tape<T>&, const Var<T>&);                                                 \
    template Var<T> softmax<T>(Tape<T>&, const Var<T>&);                                                         \
    template Var<T> reshape<T>(Tape<T>&, const Var<T>&, int, int, int);                                          \
    template Var<T> pixel_shuffle<T>(Tape<T>&, const Var<T>&, int);                                              \
    template Var<T> concat_channels<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                  \
    template Var<T> repeat_spatial<T>(Tape<T>&, const Var<T>&, int, int);                                        \
    template Var<T> broadcast_scalar<T>(Tape<T>&, const Var<T>&, int, int, int);                                 \
    template Var<T> rms<T>(Tape<T>&, const Var<T>&);                                                             \
    template Var<T> detach<T>(Tape<T>&, const Var<T>&);                                                          \
    template Var<T> dynamic_conv<T>(Tape<T>&, const Var<T>&, const Var<T>&, int);                                \
    template Var<T> blur_reflect<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                     \
    template Var<T> resample<T>(Tape<T>&, const Var<T>&, const detail::AxisTaps&, const detail::AxisTaps&);      \
    template Var<T> l1_mean<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                          \
    template Var<T> mse_mean<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                         \
    template Var<T> weighted_sum<T>(Tape<T>&, const std::vector<std::pair<Var<T>, T>>&);

DMSR_INSTANTIATE(float)
DMSR_INSTANTIATE(double)

}  // namespace dmsr::ag
