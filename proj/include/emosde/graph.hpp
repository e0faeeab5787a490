#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "emosde/rng.hpp"
#include "emosde/tensor.hpp"

namespace emosde {

// Dynamic reverse-mode tape over dense tensors. A graph is built per forward
// pass and backward()-ed once. Every op validates that its output is finite
// and throws naming the op otherwise.
template <typename T>
class GraphT {
public:
    using Ref = int;

    GraphT() = default;
    GraphT(const GraphT&) = delete;
    GraphT& operator=(const GraphT&) = delete;
    GraphT(GraphT&&) = delete;
    GraphT& operator=(GraphT&&) = delete;

    Ref leaf(TensorT<T> value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, "leaf", {});
    }
    Ref constant(TensorT<T> value) { return leaf(std::move(value), false); }

    const TensorT<T>& val(Ref r) const { return nodes_[check(r)].value; }

    const TensorT<T>& grad(Ref r) const {
        const Node& n = nodes_[check(r)];
        if (!n.requires_grad) throw std::logic_error("graph: node does not carry a gradient");
        return n.grad;
    }

    bool requires_grad(Ref r) const { return nodes_[check(r)].requires_grad; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // ---- elementwise ----

    Ref add(Ref a, Ref b) {
        require_same(a, b, "add");
        TensorT<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
        return push(std::move(out), any_grad({a, b}), "add", [this, a, b](Ref self) {
            const auto& g = nodes_[self].grad.data;
            accumulate(a, [&](size_t i) { return g[i]; });
            accumulate(b, [&](size_t i) { return g[i]; });
        });
    }

    Ref sub(Ref a, Ref b) {
        require_same(a, b, "sub");
        TensorT<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
        return push(std::move(out), any_grad({a, b}), "sub", [this, a, b](Ref self) {
            const auto& g = nodes_[self].grad.data;
            accumulate(a, [&](size_t i) { return g[i]; });
            accumulate(b, [&](size_t i) { return -g[i]; });
        });
    }

    Ref mul(Ref a, Ref b) {
        require_same(a, b, "mul");
        TensorT<T> out = nodes_[a].value;
        const auto& bv = nodes_[b].value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
        return push(std::move(out), any_grad({a, b}), "mul", [this, a, b](Ref self) {
            const auto& g = nodes_[self].grad.data;
            const auto& av = nodes_[a].value.data;
            const auto& bv2 = nodes_[b].value.data;
            accumulate(a, [&](size_t i) { return g[i] * bv2[i]; });
            accumulate(b, [&](size_t i) { return g[i] * av[i]; });
        });
    }

    Ref scale(Ref a, double c) {
        TensorT<T> out = nodes_[a].value;
        for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) * c);
        return push(std::move(out), any_grad({a}), "scale", [this, a, c](Ref self) {
            const auto& g = nodes_[self].grad.data;
            accumulate(a, [&](size_t i) { return static_cast<T>(static_cast<double>(g[i]) * c); });
        });
    }

    Ref add_scalar(Ref a, double c) {
        TensorT<T> out = nodes_[a].value;
        for (auto& v : out.data) v = static_cast<T>(static_cast<double>(v) + c);
        return push(std::move(out), any_grad({a}), "add_scalar", [this, a](Ref self) {
            const auto& g = nodes_[self].grad.data;
            accumulate(a, [&](size_t i) { return g[i]; });
        });
    }

    Ref tanh_act(Ref a) {
        TensorT<T> out = nodes_[a].value;
        for (auto& v : out.data) v = static_cast<T>(std::tanh(static_cast<double>(v)));
        Ref self_ref = next_ref();
        return push(std::move(out), any_grad({a}), "tanh", [this, a, self_ref](Ref) {
            const auto& g = nodes_[self_ref].grad.data;
            const auto& y = nodes_[self_ref].value.data;
            accumulate(a, [&](size_t i) {
                const double yd = static_cast<double>(y[i]);
                return static_cast<T>(static_cast<double>(g[i]) * (1.0 - yd * yd));
            });
        });
    }

    // ---- linear algebra ----

    Ref matmul(Ref a, Ref b) {
        const TensorT<T>& av = nodes_[a].value;
        const TensorT<T>& bv = nodes_[b].value;
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.cols() != bv.rows())
            throw std::invalid_argument("graph: matmul shape mismatch");
        const int n = av.rows(), k = av.cols(), m = bv.cols();
        TensorT<T> out = TensorT<T>::zeros({n, m});
        for (int i = 0; i < n; ++i) {
            for (int p = 0; p < k; ++p) {
                const double aip = static_cast<double>(av.at(i, p));
                if (aip == 0.0) continue;
                for (int j = 0; j < m; ++j)
                    out.at(i, j) += static_cast<T>(aip * static_cast<double>(bv.at(p, j)));
            }
        }
        return push(std::move(out), any_grad({a, b}), "matmul", [this, a, b, n, k, m](Ref self) {
            const TensorT<T>& g = nodes_[self].grad;
            if (nodes_[a].requires_grad) {
                TensorT<T>& da = nodes_[a].grad;
                const TensorT<T>& bval = nodes_[b].value;
                for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < m; ++j)
                            acc += static_cast<double>(g.at(i, j)) * static_cast<double>(bval.at(p, j));
                        da.at(i, p) += static_cast<T>(acc);
                    }
            }
            if (nodes_[b].requires_grad) {
                TensorT<T>& db = nodes_[b].grad;
                const TensorT<T>& aval = nodes_[a].value;
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < m; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < n; ++i)
                            acc += static_cast<double>(aval.at(i, p)) * static_cast<double>(g.at(i, j));
                        db.at(p, j) += static_cast<T>(acc);
                    }
            }
        });
    }

    // [n x m] + [m] broadcast over rows.
    Ref add_rowvec(Ref a, Ref v) {
        const TensorT<T>& av = nodes_[a].value;
        const TensorT<T>& vv = nodes_[v].value;
        if (av.shape.size() != 2 || vv.numel() != av.cols())
            throw std::invalid_argument("graph: add_rowvec shape mismatch");
        TensorT<T> out = av;
        const int n = av.rows(), m = av.cols();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) out.at(i, j) += vv.data[j];
        return push(std::move(out), any_grad({a, v}), "add_rowvec", [this, a, v, n, m](Ref self) {
            const TensorT<T>& g = nodes_[self].grad;
            if (nodes_[a].requires_grad) {
                auto& da = nodes_[a].grad.data;
                for (size_t i = 0; i < da.size(); ++i) da[i] += g.data[i];
            }
            if (nodes_[v].requires_grad) {
                auto& dv = nodes_[v].grad.data;
                for (int j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += static_cast<double>(g.at(i, j));
                    dv[j] += static_cast<T>(acc);
                }
            }
        });
    }

    // 1-D convolution over the frame (row) axis with same-length zero padding.
    // x: [F x Cin], w: [K x Cin x Cout] with K odd, b: [Cout].
    Ref conv1d_same(Ref x, Ref w, Ref b) {
        const TensorT<T>& xv = nodes_[x].value;
        const TensorT<T>& wv = nodes_[w].value;
        const TensorT<T>& bv = nodes_[b].value;
        if (xv.shape.size() != 2 || wv.shape.size() != 3)
            throw std::invalid_argument("graph: conv1d expects x rank 2, w rank 3");
        const int frames = xv.rows(), cin = xv.cols();
        const int k = wv.shape[0], wcin = wv.shape[1], cout = wv.shape[2];
        if (wcin != cin || bv.numel() != cout || k % 2 == 0)
            throw std::invalid_argument("graph: conv1d shape mismatch");
        const int off = k / 2;
        TensorT<T> out = TensorT<T>::zeros({frames, cout});
        for (int f = 0; f < frames; ++f) {
            for (int j = 0; j < cout; ++j) out.at(f, j) = bv.data[j];
            for (int kk = 0; kk < k; ++kk) {
                const int src = f + kk - off;
                if (src < 0 || src >= frames) continue;
                const T* wrow = &wv.data[static_cast<size_t>(kk) * cin * cout];
                for (int ci = 0; ci < cin; ++ci) {
                    const double xval = static_cast<double>(xv.at(src, ci));
                    if (xval == 0.0) continue;
                    const T* wslice = wrow + static_cast<size_t>(ci) * cout;
                    for (int j = 0; j < cout; ++j)
                        out.at(f, j) += static_cast<T>(xval * static_cast<double>(wslice[j]));
                }
            }
        }
        return push(std::move(out), any_grad({x, w, b}), "conv1d",
                    [this, x, w, b, frames, cin, k, cout, off](Ref self) {
                        const TensorT<T>& g = nodes_[self].grad;
                        const TensorT<T>& xval = nodes_[x].value;
                        const TensorT<T>& wval = nodes_[w].value;
                        if (nodes_[b].requires_grad) {
                            auto& db = nodes_[b].grad.data;
                            for (int j = 0; j < cout; ++j) {
                                double acc = 0.0;
                                for (int f = 0; f < frames; ++f) acc += static_cast<double>(g.at(f, j));
                                db[j] += static_cast<T>(acc);
                            }
                        }
                        if (nodes_[w].requires_grad) {
                            auto& dw = nodes_[w].grad.data;
                            for (int kk = 0; kk < k; ++kk)
                                for (int ci = 0; ci < cin; ++ci)
                                    for (int j = 0; j < cout; ++j) {
                                        double acc = 0.0;
                                        for (int f = 0; f < frames; ++f) {
                                            const int src = f + kk - off;
                                            if (src < 0 || src >= frames) continue;
                                            acc += static_cast<double>(xval.at(src, ci)) *
                                                   static_cast<double>(g.at(f, j));
                                        }
                                        dw[(static_cast<size_t>(kk) * cin + ci) * cout + j] +=
                                            static_cast<T>(acc);
                                    }
                        }
                        if (nodes_[x].requires_grad) {
                            TensorT<T>& dx = nodes_[x].grad;
                            for (int f = 0; f < frames; ++f)
                                for (int kk = 0; kk < k; ++kk) {
                                    const int src = f + kk - off;
                                    if (src < 0 || src >= frames) continue;
                                    for (int ci = 0; ci < cin; ++ci) {
                                        double acc = 0.0;
                                        const T* wslice =
                                            &wval.data[(static_cast<size_t>(kk) * cin + ci) * cout];
                                        for (int j = 0; j < cout; ++j)
                                            acc += static_cast<double>(wslice[j]) *
                                                   static_cast<double>(g.at(f, j));
                                        dx.at(src, ci) += static_cast<T>(acc);
                                    }
                                }
                        }
                    });
    }

    // ---- normalization / regularization ----

    // Batch normalization over the frame axis with batch statistics; reports
    // the population mean/var so the trainer can maintain running statistics.
    Ref batchnorm_train(Ref x, Ref gamma, Ref beta, double eps, TensorT<T>* mean_out,
                        TensorT<T>* var_out) {
        const TensorT<T>& xv = nodes_[x].value;
        if (xv.shape.size() != 2) throw std::invalid_argument("graph: batchnorm expects rank 2");
        const int frames = xv.rows(), ch = xv.cols();
        if (nodes_[gamma].value.numel() != ch || nodes_[beta].value.numel() != ch)
            throw std::invalid_argument("graph: batchnorm scale shape mismatch");
        TensorT<T> mean = TensorT<T>::zeros({ch});
        TensorT<T> var = TensorT<T>::zeros({ch});
        for (int c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (int f = 0; f < frames; ++f) acc += static_cast<double>(xv.at(f, c));
            const double mu = acc / frames;
            double vacc = 0.0;
            for (int f = 0; f < frames; ++f) {
                const double d = static_cast<double>(xv.at(f, c)) - mu;
                vacc += d * d;
            }
            mean.data[c] = static_cast<T>(mu);
            var.data[c] = static_cast<T>(vacc / frames);
        }
        if (mean_out) *mean_out = mean;
        if (var_out) *var_out = var;

        TensorT<T> inv_std = TensorT<T>::zeros({ch});
        for (int c = 0; c < ch; ++c)
            inv_std.data[c] =
                static_cast<T>(1.0 / std::sqrt(static_cast<double>(var.data[c]) + eps));
        TensorT<T> xhat = TensorT<T>::zeros({frames, ch});
        for (int f = 0; f < frames; ++f)
            for (int c = 0; c < ch; ++c)
                xhat.at(f, c) = static_cast<T>(
                    (static_cast<double>(xv.at(f, c)) - static_cast<double>(mean.data[c])) *
                    static_cast<double>(inv_std.data[c]));

        const TensorT<T>& gv = nodes_[gamma].value;
        const TensorT<T>& bv = nodes_[beta].value;
        TensorT<T> out = TensorT<T>::zeros({frames, ch});
        for (int f = 0; f < frames; ++f)
            for (int c = 0; c < ch; ++c)
                out.at(f, c) = static_cast<T>(static_cast<double>(gv.data[c]) *
                                                  static_cast<double>(xhat.at(f, c)) +
                                              static_cast<double>(bv.data[c]));

        return push(std::move(out), any_grad({x, gamma, beta}), "batchnorm_train",
                    [this, x, gamma, beta, frames, ch, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Ref self) {
                        const TensorT<T>& g = nodes_[self].grad;
                        const TensorT<T>& gv2 = nodes_[gamma].value;
                        for (int c = 0; c < ch; ++c) {
                            double sum_dy = 0.0, sum_dy_xhat = 0.0;
                            for (int f = 0; f < frames; ++f) {
                                const double dy = static_cast<double>(g.at(f, c));
                                sum_dy += dy;
                                sum_dy_xhat += dy * static_cast<double>(xhat.at(f, c));
                            }
                            if (nodes_[gamma].requires_grad)
                                nodes_[gamma].grad.data[c] += static_cast<T>(sum_dy_xhat);
                            if (nodes_[beta].requires_grad)
                                nodes_[beta].grad.data[c] += static_cast<T>(sum_dy);
                            if (nodes_[x].requires_grad) {
                                const double scale =
                                    static_cast<double>(gv2.data[c]) * static_cast<double>(inv_std.data[c]);
                                for (int f = 0; f < frames; ++f) {
                                    const double dy = static_cast<double>(g.at(f, c));
                                    const double xh = static_cast<double>(xhat.at(f, c));
                                    nodes_[x].grad.at(f, c) += static_cast<T>(
                                        scale * (dy - sum_dy / frames - xh * sum_dy_xhat / frames));
                                }
                            }
                        }
                    });
    }

    // Evaluation-mode batch normalization with fixed running statistics;
    // deterministic per input.
    Ref batchnorm_eval(Ref x, Ref gamma, Ref beta, TensorT<T> run_mean, TensorT<T> run_var,
                       double eps) {
        const TensorT<T>& xv = nodes_[x].value;
        if (xv.shape.size() != 2) throw std::invalid_argument("graph: batchnorm expects rank 2");
        const int frames = xv.rows(), ch = xv.cols();
        if (run_mean.numel() != ch || run_var.numel() != ch)
            throw std::invalid_argument("graph: batchnorm running stats shape mismatch");
        TensorT<T> inv_std = TensorT<T>::zeros({ch});
        for (int c = 0; c < ch; ++c)
            inv_std.data[c] =
                static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var.data[c]) + eps));
        const TensorT<T>& gv = nodes_[gamma].value;
        const TensorT<T>& bv = nodes_[beta].value;
        TensorT<T> xhat = TensorT<T>::zeros({frames, ch});
        TensorT<T> out = TensorT<T>::zeros({frames, ch});
        for (int f = 0; f < frames; ++f)
            for (int c = 0; c < ch; ++c) {
                const double xh =
                    (static_cast<double>(xv.at(f, c)) - static_cast<double>(run_mean.data[c])) *
                    static_cast<double>(inv_std.data[c]);
                xhat.at(f, c) = static_cast<T>(xh);
                out.at(f, c) = static_cast<T>(static_cast<double>(gv.data[c]) * xh +
                                              static_cast<double>(bv.data[c]));
            }
        return push(std::move(out), any_grad({x, gamma, beta}), "batchnorm_eval",
                    [this, x, gamma, beta, frames, ch, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Ref self) {
                        const TensorT<T>& g = nodes_[self].grad;
                        const TensorT<T>& gv2 = nodes_[gamma].value;
                        for (int c = 0; c < ch; ++c) {
                            double sum_dy = 0.0, sum_dy_xhat = 0.0;
                            for (int f = 0; f < frames; ++f) {
                                const double dy = static_cast<double>(g.at(f, c));
                                sum_dy += dy;
                                sum_dy_xhat += dy * static_cast<double>(xhat.at(f, c));
                            }
                            if (nodes_[gamma].requires_grad)
                                nodes_[gamma].grad.data[c] += static_cast<T>(sum_dy_xhat);
                            if (nodes_[beta].requires_grad)
                                nodes_[beta].grad.data[c] += static_cast<T>(sum_dy);
                            if (nodes_[x].requires_grad) {
                                const double scale =
                                    static_cast<double>(gv2.data[c]) * static_cast<double>(inv_std.data[c]);
                                for (int f = 0; f < frames; ++f)
                                    nodes_[x].grad.at(f, c) +=
                                        static_cast<T>(scale * static_cast<double>(g.at(f, c)));
                            }
                        }
                    });
    }

    // Training-mode inverted dropout. Evaluation mode is the identity: callers
    // simply do not insert the op.
    Ref dropout_train(Ref x, double p, Rng& rng) {
        if (!(p >= 0.0) || !(p < 1.0)) throw std::domain_error("graph: dropout p outside [0, 1)");
        const TensorT<T>& xv = nodes_[x].value;
        TensorT<T> mask = TensorT<T>::zeros(xv.shape);
        const double keep_scale = 1.0 / (1.0 - p);
        for (auto& m : mask.data) m = static_cast<T>(rng.uniform() >= p ? keep_scale : 0.0);
        TensorT<T> out = xv;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
        return push(std::move(out), any_grad({x}), "dropout",
                    [this, x, mask = std::move(mask)](Ref self) {
                        const auto& g = nodes_[self].grad.data;
                        accumulate(x, [&](size_t i) { return g[i] * mask.data[i]; });
                    });
    }

    // ---- shape ----

    Ref concat_cols(Ref a, Ref b) {
        const TensorT<T>& av = nodes_[a].value;
        const TensorT<T>& bv = nodes_[b].value;
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.rows() != bv.rows())
            throw std::invalid_argument("graph: concat_cols shape mismatch");
        const int n = av.rows(), ca = av.cols(), cb = bv.cols();
        TensorT<T> out = TensorT<T>::zeros({n, ca + cb});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
            for (int j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
        }
        return push(std::move(out), any_grad({a, b}), "concat_cols",
                    [this, a, b, n, ca, cb](Ref self) {
                        const TensorT<T>& g = nodes_[self].grad;
                        if (nodes_[a].requires_grad)
                            for (int i = 0; i < n; ++i)
                                for (int j = 0; j < ca; ++j) nodes_[a].grad.at(i, j) += g.at(i, j);
                        if (nodes_[b].requires_grad)
                            for (int i = 0; i < n; ++i)
                                for (int j = 0; j < cb; ++j)
                                    nodes_[b].grad.at(i, j) += g.at(i, ca + j);
                    });
    }

    // Mean over rows: [F x C] -> [1 x C].
    Ref mean_rows(Ref x) {
        const TensorT<T>& xv = nodes_[x].value;
        if (xv.shape.size() != 2 || xv.rows() == 0)
            throw std::invalid_argument("graph: mean_rows expects nonempty rank 2");
        const int frames = xv.rows(), ch = xv.cols();
        TensorT<T> out = TensorT<T>::zeros({1, ch});
        for (int c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (int f = 0; f < frames; ++f) acc += static_cast<double>(xv.at(f, c));
            out.data[c] = static_cast<T>(acc / frames);
        }
        return push(std::move(out), any_grad({x}), "mean_rows", [this, x, frames, ch](Ref self) {
            const TensorT<T>& g = nodes_[self].grad;
            if (!nodes_[x].requires_grad) return;
            for (int f = 0; f < frames; ++f)
                for (int c = 0; c < ch; ++c)
                    nodes_[x].grad.at(f, c) += static_cast<T>(static_cast<double>(g.data[c]) / frames);
        });
    }

    // Row lookup: table [V x E], ids of length n -> [n x E].
    Ref embed_rows(Ref table, std::vector<int> ids) {
        const TensorT<T>& tv = nodes_[table].value;
        if (tv.shape.size() != 2) throw std::invalid_argument("graph: embed expects rank 2 table");
        const int v = tv.rows(), e = tv.cols();
        for (int id : ids)
            if (id < 0 || id >= v) throw std::out_of_range("vocabulary error: token id out of range");
        const int n = static_cast<int>(ids.size());
        TensorT<T> out = TensorT<T>::zeros({n, e});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < e; ++j) out.at(i, j) = tv.at(ids[i], j);
        return push(std::move(out), any_grad({table}), "embed",
                    [this, table, ids = std::move(ids), e](Ref self) {
                        if (!nodes_[table].requires_grad) return;
                        const TensorT<T>& g = nodes_[self].grad;
                        for (size_t i = 0; i < ids.size(); ++i)
                            for (int j = 0; j < e; ++j)
                                nodes_[table].grad.at(ids[i], j) += g.at(static_cast<int>(i), j);
                    });
    }

    // Repeat row i counts[i] times: [n x E] -> [sum(counts) x E].
    Ref repeat_rows(Ref x, std::vector<int> counts) {
        const TensorT<T>& xv = nodes_[x].value;
        if (xv.shape.size() != 2 || static_cast<int>(counts.size()) != xv.rows())
            throw std::invalid_argument("graph: repeat_rows shape mismatch");
        int total = 0;
        for (int c : counts) {
            if (c < 1) throw std::domain_error("graph: repeat_rows needs positive counts");
            total += c;
        }
        const int e = xv.cols();
        TensorT<T> out = TensorT<T>::zeros({total, e});
        int row = 0;
        for (int i = 0; i < xv.rows(); ++i)
            for (int r = 0; r < counts[i]; ++r, ++row)
                for (int j = 0; j < e; ++j) out.at(row, j) = xv.at(i, j);
        return push(std::move(out), any_grad({x}), "repeat_rows",
                    [this, x, counts = std::move(counts), e](Ref self) {
                        if (!nodes_[x].requires_grad) return;
                        const TensorT<T>& g = nodes_[self].grad;
                        int row2 = 0;
                        for (size_t i = 0; i < counts.size(); ++i)
                            for (int r = 0; r < counts[i]; ++r, ++row2)
                                for (int j = 0; j < e; ++j)
                                    nodes_[x].grad.at(static_cast<int>(i), j) += g.at(row2, j);
                    });
    }

    // ---- heads / reductions ----

    // Numerically stable log-softmax over all entries (used on [1 x m] logits).
    Ref log_softmax(Ref v) {
        const TensorT<T>& vv = nodes_[v].value;
        const int m = static_cast<int>(vv.numel());
        if (m == 0) throw std::invalid_argument("graph: log_softmax on empty tensor");
        double mx = -1e300;
        for (T x : vv.data) mx = std::max(mx, static_cast<double>(x));
        double lse = 0.0;
        for (T x : vv.data) lse += std::exp(static_cast<double>(x) - mx);
        lse = mx + std::log(lse);
        TensorT<T> out = vv;
        for (auto& x : out.data) x = static_cast<T>(static_cast<double>(x) - lse);
        TensorT<T> probs = out;
        for (auto& x : probs.data) x = static_cast<T>(std::exp(static_cast<double>(x)));
        return push(std::move(out), any_grad({v}), "log_softmax",
                    [this, v, probs = std::move(probs)](Ref self) {
                        const auto& g = nodes_[self].grad.data;
                        double sum_g = 0.0;
                        for (T x : g) sum_g += static_cast<double>(x);
                        accumulate(v, [&](size_t i) {
                            return static_cast<T>(static_cast<double>(g[i]) -
                                                  static_cast<double>(probs.data[i]) * sum_g);
                        });
                    });
    }

    // Select one entry as a scalar.
    Ref pick(Ref v, int index) {
        const TensorT<T>& vv = nodes_[v].value;
        if (index < 0 || index >= vv.numel()) throw std::out_of_range("graph: pick index");
        TensorT<T> out({1}, {vv.data[index]});
        return push(std::move(out), any_grad({v}), "pick", [this, v, index](Ref self) {
            if (!nodes_[v].requires_grad) return;
            nodes_[v].grad.data[index] += nodes_[self].grad.data[0];
        });
    }

    // Fixed-weight inner product: sum_i w[i] * v[i] as a scalar.
    Ref dot_const(Ref v, TensorT<T> weights) {
        const TensorT<T>& vv = nodes_[v].value;
        if (weights.numel() != vv.numel())
            throw std::invalid_argument("graph: dot_const length mismatch");
        double acc = 0.0;
        for (size_t i = 0; i < vv.data.size(); ++i)
            acc += static_cast<double>(weights.data[i]) * static_cast<double>(vv.data[i]);
        TensorT<T> out({1}, {static_cast<T>(acc)});
        return push(std::move(out), any_grad({v}), "dot_const",
                    [this, v, weights = std::move(weights)](Ref self) {
                        const T g = nodes_[self].grad.data[0];
                        accumulate(v, [&](size_t i) { return static_cast<T>(g * weights.data[i]); });
                    });
    }

    // sum((a - b)^2) over all entries, as a scalar.
    Ref sum_sq_diff(Ref a, Ref b) {
        require_same(a, b, "sum_sq_diff");
        const auto& av = nodes_[a].value.data;
        const auto& bv = nodes_[b].value.data;
        double acc = 0.0;
        for (size_t i = 0; i < av.size(); ++i) {
            const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
            acc += d * d;
        }
        TensorT<T> out({1}, {static_cast<T>(acc)});
        return push(std::move(out), any_grad({a, b}), "sum_sq_diff", [this, a, b](Ref self) {
            const double g = static_cast<double>(nodes_[self].grad.data[0]);
            const auto& av2 = nodes_[a].value.data;
            const auto& bv2 = nodes_[b].value.data;
            accumulate(a, [&](size_t i) {
                return static_cast<T>(2.0 * g * (static_cast<double>(av2[i]) - static_cast<double>(bv2[i])));
            });
            accumulate(b, [&](size_t i) {
                return static_cast<T>(-2.0 * g * (static_cast<double>(av2[i]) - static_cast<double>(bv2[i])));
            });
        });
    }

    Ref sum_all(Ref a) {
        const auto& av = nodes_[a].value.data;
        double acc = 0.0;
        for (T x : av) acc += static_cast<double>(x);
        TensorT<T> out({1}, {static_cast<T>(acc)});
        return push(std::move(out), any_grad({a}), "sum_all", [this, a](Ref self) {
            const T g = nodes_[self].grad.data[0];
            accumulate(a, [&](size_t) { return g; });
        });
    }

    // ---- backward ----

    void backward(Ref loss) {
        Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1) throw std::logic_error("graph: backward needs a scalar loss");
        if (!ln.requires_grad) throw std::logic_error("graph: loss does not depend on any gradient leaf");
        if (backward_done_) throw std::logic_error("graph: backward already ran on this tape");
        backward_done_ = true;
        ln.grad.data[0] = T(1);
        for (Ref i = loss; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(i);
        }
    }

private:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;
        bool requires_grad = false;
        const char* op = "leaf";
        std::function<void(Ref)> backward;
    };

    Ref next_ref() const { return static_cast<Ref>(nodes_.size()); }

    Ref check(Ref r) const {
        if (r < 0 || r >= static_cast<Ref>(nodes_.size())) throw std::out_of_range("graph: bad ref");
        return r;
    }

    bool any_grad(std::initializer_list<Ref> refs) const {
        for (Ref r : refs)
            if (nodes_[check(r)].requires_grad) return true;
        return false;
    }

    void require_same(Ref a, Ref b, const char* op) {
        if (!nodes_[check(a)].value.same_shape(nodes_[check(b)].value))
            throw std::invalid_argument(std::string("graph: ") + op + " shape mismatch");
    }

    template <typename Fn>
    void accumulate(Ref target, Fn&& delta) {
        Node& n = nodes_[target];
        if (!n.requires_grad) return;
        for (size_t i = 0; i < n.grad.data.size(); ++i) n.grad.data[i] += delta(i);
    }

    Ref push(TensorT<T> value, bool requires_grad, const char* op, std::function<void(Ref)> bw) {
        if (!value.all_finite())
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        if (requires_grad) {
            n.grad = TensorT<T>::zeros(n.value.shape);
            n.backward = std::move(bw);
        }
        nodes_.push_back(std::move(n));
        return static_cast<Ref>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

using Graph = GraphT<float>;

}  // namespace emosde
