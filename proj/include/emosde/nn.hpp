#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "emosde/graph.hpp"
#include "emosde/rng.hpp"
#include "emosde/tensor.hpp"

namespace emosde {

// Named map of tensors. Iteration order is the sorted name order, which makes
// optimizer updates, serialization, and gradient reduction deterministic.
template <typename T>
struct ParamSetT {
    std::map<std::string, TensorT<T>> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    void add(const std::string& name, TensorT<T> t) {
        if (has(name)) throw std::invalid_argument("param set: duplicate name '" + name + "'");
        tensors.emplace(name, std::move(t));
    }

    TensorT<T>& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("param set: missing '" + name + "'");
        return it->second;
    }
    const TensorT<T>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("param set: missing '" + name + "'");
        return it->second;
    }

    bool same_shapes(const ParamSetT& o) const {
        if (tensors.size() != o.tensors.size()) return false;
        auto a = tensors.begin();
        auto b = o.tensors.begin();
        for (; a != tensors.end(); ++a, ++b)
            if (a->first != b->first || !a->second.same_shape(b->second)) return false;
        return true;
    }

    ParamSetT zeros_like() const {
        ParamSetT out;
        for (const auto& [name, t] : tensors) out.tensors.emplace(name, TensorT<T>::zeros(t.shape));
        return out;
    }

    int64_t numel() const {
        int64_t n = 0;
        for (const auto& [name, t] : tensors) n += t.numel();
        return n;
    }

};

using ParamSet = ParamSetT<float>;

template <typename T>
void axpy_params(ParamSetT<T>& dst, const ParamSetT<T>& src, double a) {
    if (!dst.same_shapes(src)) throw std::invalid_argument("param set: shape mismatch in axpy");
    auto d = dst.tensors.begin();
    auto s = src.tensors.begin();
    for (; d != dst.tensors.end(); ++d, ++s)
        for (size_t i = 0; i < d->second.data.size(); ++i)
            d->second.data[i] += static_cast<T>(a * static_cast<double>(s->second.data[i]));
}

template <typename T>
void scale_params(ParamSetT<T>& p, double a) {
    for (auto& [name, t] : p.tensors)
        for (auto& v : t.data) v = static_cast<T>(static_cast<double>(v) * a);
}

// Standard Adam with bias correction. Moment updates run in double and round
// once on store.
template <typename T>
class AdamT {
public:
    AdamT() = default;
    AdamT(double lr, double beta1, double beta2, double eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamSetT<T>& params, const ParamSetT<T>& grads) {
        if (!params.same_shapes(grads)) throw std::invalid_argument("adam: grad shape mismatch");
        if (m_.tensors.empty()) {
            m_ = params.zeros_like();
            v_ = params.zeros_like();
        }
        ++count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(count_));
        auto p = params.tensors.begin();
        auto g = grads.tensors.begin();
        auto m = m_.tensors.begin();
        auto v = v_.tensors.begin();
        for (; p != params.tensors.end(); ++p, ++g, ++m, ++v) {
            for (size_t i = 0; i < p->second.data.size(); ++i) {
                const double gi = static_cast<double>(g->second.data[i]);
                const double mi = beta1_ * static_cast<double>(m->second.data[i]) + (1.0 - beta1_) * gi;
                const double vi =
                    beta2_ * static_cast<double>(v->second.data[i]) + (1.0 - beta2_) * gi * gi;
                m->second.data[i] = static_cast<T>(mi);
                v->second.data[i] = static_cast<T>(vi);
                const double update = lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
                p->second.data[i] = static_cast<T>(static_cast<double>(p->second.data[i]) - update);
            }
        }
    }

    int64_t step_count() const { return count_; }
    double lr() const { return lr_; }
    const ParamSetT<T>& moment1() const { return m_; }
    const ParamSetT<T>& moment2() const { return v_; }

    void restore(ParamSetT<T> m, ParamSetT<T> v, int64_t count) {
        m_ = std::move(m);
        v_ = std::move(v);
        count_ = count;
    }

private:
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    int64_t count_ = 0;
    ParamSetT<T> m_;
    ParamSetT<T> v_;
};

using Adam = AdamT<float>;

// Exponential moving average of parameters. The shadow starts as a copy of
// the live set, so it is always a convex combination of historical values.
template <typename T>
struct EmaT {
    double decay = 0.9999;
    ParamSetT<T> shadow;

    void init_from(const ParamSetT<T>& live) { shadow = live; }

    void update(const ParamSetT<T>& live) {
        if (!shadow.same_shapes(live)) throw std::invalid_argument("ema: shape mismatch");
        auto s = shadow.tensors.begin();
        auto l = live.tensors.begin();
        for (; s != shadow.tensors.end(); ++s, ++l)
            for (size_t i = 0; i < s->second.data.size(); ++i)
                s->second.data[i] =
                    static_cast<T>(decay * static_cast<double>(s->second.data[i]) +
                                   (1.0 - decay) * static_cast<double>(l->second.data[i]));
    }
};

using Ema = EmaT<float>;

// ---- initializers ----

template <typename T>
TensorT<T> init_uniform(std::vector<int> shape, double bound, Rng& rng) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    return t;
}

template <typename T>
TensorT<T> init_normal(std::vector<int> shape, double std_dev, Rng& rng) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
    return t;
}

template <typename T>
TensorT<T> init_linear_weight(int fan_in, int fan_out, Rng& rng) {
    return init_uniform<T>({fan_in, fan_out}, std::sqrt(1.0 / fan_in), rng);
}

template <typename T>
TensorT<T> init_conv_weight(int kernel, int cin, int cout, Rng& rng) {
    return init_uniform<T>({kernel, cin, cout}, std::sqrt(1.0 / (kernel * cin)), rng);
}

// Sinusoidal embedding of a scalar time t in [0, 1]; first half sines, second
// half cosines, with geometrically spaced frequencies.
template <typename T>
TensorT<T> time_embedding(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even");
    const int half = dim / 2;
    TensorT<T> e = TensorT<T>::zeros({dim});
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(1000.0, half == 1 ? 0.0 : static_cast<double>(i) / (half - 1));
        e.data[i] = static_cast<T>(std::sin(t * freq));
        e.data[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return e;
}

// Time embedding tiled over rows so it can be concatenated per frame.
template <typename T>
TensorT<T> time_embedding_rows(double t, int dim, int rows) {
    const TensorT<T> e = time_embedding<T>(t, dim);
    TensorT<T> out = TensorT<T>::zeros({rows, dim});
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < dim; ++j) out.at(r, j) = e.data[j];
    return out;
}

// Binds a parameter set into a graph as gradient leaves (or constants, for
// input-gradient-only passes) and collects gradients back out.
template <typename T>
class BoundParams {
public:
    BoundParams(GraphT<T>& g, const ParamSetT<T>& params, bool requires_grad = true) : graph_(&g) {
        for (const auto& [name, t] : params.tensors) refs_.emplace(name, g.leaf(t, requires_grad));
    }

    typename GraphT<T>::Ref operator[](const std::string& name) const {
        auto it = refs_.find(name);
        if (it == refs_.end()) throw std::out_of_range("bound params: missing '" + name + "'");
        return it->second;
    }

    // grads[name] += graph gradient of the bound leaf
    void add_grads_to(ParamSetT<T>& grads) const {
        for (const auto& [name, ref] : refs_) {
            if (!graph_->requires_grad(ref)) continue;
            const TensorT<T>& g = graph_->grad(ref);
            auto& dst = grads.at(name);
            for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
        }
    }

private:
    GraphT<T>* graph_;
    std::map<std::string, typename GraphT<T>::Ref> refs_;
};

}  // namespace emosde
