#pragma once

// Minimal tape-free reverse-mode autodiff over dense tensors.
//
// Every op returns a Var whose node keeps its parents and a backward closure.
// Nodes that do not depend on any requires-grad leaf keep neither, so
// constant subgraphs cost nothing at backward time.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsad/tensor.hpp"

namespace fsad::ag {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.data.empty()) grad = Tensor<T>(value.shape);
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    const Tensor<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    bool requires_grad() const { return node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    // Gradient after backward(); zeros if the node never received one.
    Tensor<T> grad() const {
        if (node_->grad.data.empty()) return Tensor<T>(node_->value.shape);
        return node_->grad;
    }

    T item() const { return node_->value.data.at(0); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var<T>(n);
}

template <typename T>
Var<T> leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var<T>(n);
}

// Stop-gradient: same value, no path back to the inputs.
template <typename T>
Var<T> detach(const Var<T>& v) {
    return constant(v.value());
}

namespace detail {

template <typename T, typename Fn>
Var<T> make(Tensor<T> value, std::vector<Var<T>> inputs, Fn&& backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        if (in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backward = std::forward<Fn>(backward);
    }
    return Var<T>(n);
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank) fail(ErrorKind::ShapeError, std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

}  // namespace detail

template <typename T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) fail(ErrorKind::ShapeError, "backward() needs a scalar root");
    if (!root.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer().data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward && !n.grad.data.empty()) n.backward(n);
    }
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return detail::make<T>(std::move(out), {a, b}, [](Node<T>& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return detail::make<T>(std::move(out), {a, b}, [](Node<T>& n) {
        if (n.parents[0]->requires_grad) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= s;
    return detail::make<T>(std::move(out), {a}, [s](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = v > T(0) ? v : slope * v;
    return detail::make<T>(std::move(out), {a}, [slope](Node<T>& n) {
        const auto& x = n.parents[0]->value;
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (x[i] > T(0) ? T(1) : slope) * n.grad[i];
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return leaky_relu(a, T(0));
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return detail::make<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.value[i] * (T(1) - n.value[i]) * n.grad[i];
    });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
    T s = 0;
    for (T v : a.value().data) s += v;
    return detail::make<T>(Tensor<T>({1}, s), {a}, [](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (auto& v : g.data) v += n.grad[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// Arithmetic mean of same-shape vars.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& vs) {
    if (vs.empty()) fail(ErrorKind::InvalidInput, "mean_of: empty list");
    Var<T> acc = vs[0];
    for (std::size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
    return scale(acc, T(1) / static_cast<T>(vs.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (numel(shape) != a.value().size()) fail(ErrorKind::ShapeError, "reshape: element count mismatch");
    Tensor<T> out(std::move(shape), a.value().data);
    return detail::make<T>(std::move(out), {a}, [](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------- conv / norm

// x: [C,H,W], w: [O,C,k,k], b: [O] (may be undefined). Zero padding.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    using namespace detail;
    require_rank(x.shape(), 3, "conv2d input");
    require_rank(w.shape(), 4, "conv2d weight");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int O = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != C || w.shape()[3] != k) fail(ErrorKind::ShapeError, "conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias && (b.shape().size() != 1 || b.shape()[0] != O)) fail(ErrorKind::ShapeError, "conv2d: bias shape");
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) fail(ErrorKind::ShapeError, "conv2d: empty output");
    const int K = C * k * k, P = Ho * Wo;

    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(K) * P, T(0));
    const auto& xv = x.value().data;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= W) continue;
                        row[oy * Wo + ox] = xv[(static_cast<std::size_t>(c) * H + iy) * W + ix];
                    }
                }
            }

    Tensor<T> out({O, Ho, Wo});
    MapMat<T> om(out.data.data(), O, P);
    CMapMat<T> wm(w.value().data.data(), O, K);
    CMapMat<T> cm(cols->data(), K, P);
    om.noalias() = wm * cm;
    if (has_bias) {
        for (int o = 0; o < O; ++o) om.row(o).array() += b.value()[o];
    }

    std::vector<Var<T>> inputs{x, w};
    if (has_bias) inputs.push_back(b);
    const bool gx = x.requires_grad(), gw = w.requires_grad(), gb = has_bias && b.requires_grad();
    return make<T>(std::move(out), std::move(inputs),
                   [=](Node<T>& n) {
                       CMapMat<T> go(n.grad.data.data(), O, P);
                       if (gw) {
                           auto& g = n.parents[1]->grad_buffer();
                           MapMat<T> gwm(g.data.data(), O, K);
                           CMapMat<T> cmb(cols->data(), K, P);
                           gwm.noalias() += go * cmb.transpose();
                       }
                       if (gb) {
                           auto& g = n.parents[2]->grad_buffer();
                           for (int o = 0; o < O; ++o) g[o] += go.row(o).sum();
                       }
                       if (gx) {
                           CMapMat<T> wmb(n.parents[1]->value.data.data(), O, K);
                           RowMat<T> dcols = wmb.transpose() * go;
                           auto& g = n.parents[0]->grad_buffer();
                           for (int c = 0; c < C; ++c)
                               for (int ky = 0; ky < k; ++ky)
                                   for (int kx = 0; kx < k; ++kx) {
                                       const int r = (c * k + ky) * k + kx;
                                       for (int oy = 0; oy < Ho; ++oy) {
                                           const int iy = oy * stride - pad + ky;
                                           if (iy < 0 || iy >= H) continue;
                                           for (int ox = 0; ox < Wo; ++ox) {
                                               const int ix = ox * stride - pad + kx;
                                               if (ix < 0 || ix >= W) continue;
                                               g[(static_cast<std::size_t>(c) * H + iy) * W + ix] += dcols(r, oy * Wo + ox);
                                           }
                                       }
                                   }
                       }
                   });
}

// Per-channel standardization over spatial positions (no affine parameters).
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
    detail::require_rank(x.shape(), 3, "instance_norm");
    const int C = x.shape()[0];
    const std::size_t N = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
    Tensor<T> out(x.shape());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    const auto& xv = x.value().data;
    for (int c = 0; c < C; ++c) {
        const T* px = xv.data() + c * N;
        T mu = 0;
        for (std::size_t i = 0; i < N; ++i) mu += px[i];
        mu /= static_cast<T>(N);
        T var = 0;
        for (std::size_t i = 0; i < N; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<T>(N);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        for (std::size_t i = 0; i < N; ++i) out.data[c * N + i] = (px[i] - mu) * is;
    }
    return detail::make<T>(std::move(out), {x}, [C, N, inv_std](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int c = 0; c < C; ++c) {
            const T* dy = n.grad.data.data() + c * N;
            const T* y = n.value.data.data() + c * N;
            T sdy = 0, sdyy = 0;
            for (std::size_t i = 0; i < N; ++i) {
                sdy += dy[i];
                sdyy += dy[i] * y[i];
            }
            const T is = (*inv_std)[c];
            const T invn = T(1) / static_cast<T>(N);
            for (std::size_t i = 0; i < N; ++i) g[c * N + i] += is * (dy[i] - invn * sdy - y[i] * invn * sdyy);
        }
    });
}

// [C,H,W] -> [C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    detail::require_rank(x.shape(), 3, "global_avg_pool");
    const int C = x.shape()[0];
    const std::size_t N = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
    Tensor<T> out({C});
    for (int c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t i = 0; i < N; ++i) s += x.value().data[c * N + i];
        out[c] = s / static_cast<T>(N);
    }
    return detail::make<T>(std::move(out), {x}, [C, N](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        const T invn = T(1) / static_cast<T>(N);
        for (int c = 0; c < C; ++c)
            for (std::size_t i = 0; i < N; ++i) g[c * N + i] += n.grad[c] * invn;
    });
}

// x: [in], w: [out,in], b: [out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    detail::require_rank(x.shape(), 1, "linear input");
    const int I = x.shape()[0], O = w.shape()[0];
    if (w.shape().size() != 2 || w.shape()[1] != I) fail(ErrorKind::ShapeError, "linear: weight " + shape_str(w.shape()));
    if (b.shape() != Shape{O}) fail(ErrorKind::ShapeError, "linear: bias shape");
    Tensor<T> out({O});
    for (int o = 0; o < O; ++o) {
        T s = b.value()[o];
        for (int i = 0; i < I; ++i) s += w.value()[o * I + i] * x.value()[i];
        out[o] = s;
    }
    const bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
    return detail::make<T>(std::move(out), {x, w, b}, [=](Node<T>& n) {
        const auto& xv = n.parents[0]->value;
        const auto& wv = n.parents[1]->value;
        if (gx) {
            auto& g = n.parents[0]->grad_buffer();
            for (int o = 0; o < O; ++o)
                for (int i = 0; i < I; ++i) g[i] += wv[o * I + i] * n.grad[o];
        }
        if (gw) {
            auto& g = n.parents[1]->grad_buffer();
            for (int o = 0; o < O; ++o)
                for (int i = 0; i < I; ++i) g[o * I + i] += n.grad[o] * xv[i];
        }
        if (gb) {
            auto& g = n.parents[2]->grad_buffer();
            for (int o = 0; o < O; ++o) g[o] += n.grad[o];
        }
    });
}

// ---------------------------------------------------------------- losses

// -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps]; zero gradient when clamped.
template <typename T>
Var<T> bce(const Var<T>& p, int label, T eps) {
    if (p.value().size() != 1) fail(ErrorKind::ShapeError, "bce expects a scalar probability");
    const T raw = p.value()[0];
    const T pc = std::min(std::max(raw, eps), T(1) - eps);
    const bool clamped = pc != raw;
    const T y = static_cast<T>(label);
    const T loss = -(y * std::log(pc) + (T(1) - y) * std::log(T(1) - pc));
    return detail::make<T>(Tensor<T>({1}, loss), {p}, [=](Node<T>& n) {
        if (clamped) return;
        auto& g = n.parents[0]->grad_buffer();
        g[0] += n.grad[0] * (-y / pc + (T(1) - y) / (T(1) - pc));
    });
}

// Mean over spatial positions of the channel-wise cosine <a,b>/(|a||b| + eps).
template <typename T>
Var<T> cosine_mean(const Var<T>& a, const Var<T>& b, T eps) {
    require_same_shape(a.value(), b.value(), "cosine_mean");
    detail::require_rank(a.shape(), 3, "cosine_mean");
    const int C = a.shape()[0];
    const std::size_t P = static_cast<std::size_t>(a.shape()[1]) * a.shape()[2];
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    std::vector<T> dot(P, 0), na(P, 0), nb(P, 0);
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) {
            const T x = av[c * P + p], y = bv[c * P + p];
            dot[p] += x * y;
            na[p] += x * x;
            nb[p] += y * y;
        }
    T total = 0;
    for (std::size_t p = 0; p < P; ++p) {
        na[p] = std::sqrt(na[p]);
        nb[p] = std::sqrt(nb[p]);
        total += dot[p] / (na[p] * nb[p] + eps);
    }
    total /= static_cast<T>(P);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return detail::make<T>(Tensor<T>({1}, total), {a, b}, [=](Node<T>& n) {
        const auto& x = n.parents[0]->value.data;
        const auto& y = n.parents[1]->value.data;
        const T up = n.grad[0] / static_cast<T>(P);
        for (std::size_t p = 0; p < P; ++p) {
            const T D = na[p] * nb[p] + eps;
            const T cosv = dot[p] / D;
            // d/da = b/D - cos * nb * a / (na * D)
            const T ka = na[p] > T(0) ? cosv * nb[p] / (na[p] * D) : T(0);
            const T kb = nb[p] > T(0) ? cosv * na[p] / (nb[p] * D) : T(0);
            if (ga) {
                auto& g = n.parents[0]->grad_buffer();
                for (int c = 0; c < C; ++c) g[c * P + p] += up * (y[c * P + p] / D - ka * x[c * P + p]);
            }
            if (gb) {
                auto& g = n.parents[1]->grad_buffer();
                for (int c = 0; c < C; ++c) g[c * P + p] += up * (x[c * P + p] / D - kb * y[c * P + p]);
            }
        }
    });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const std::size_t N = a.value().size();
    T s = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const T d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return detail::make<T>(Tensor<T>({1}, s / static_cast<T>(N)), {a, b}, [=](Node<T>& n) {
        const auto& x = n.parents[0]->value;
        const auto& y = n.parents[1]->value;
        const T k = T(2) * n.grad[0] / static_cast<T>(N);
        if (ga) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < N; ++i) g[i] += k * (x[i] - y[i]);
        }
        if (gb) {
            auto& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < N; ++i) g[i] -= k * (x[i] - y[i]);
        }
    });
}

// ---------------------------------------------------------------- spatial transformer

// Resample img [C,H,W] through the 2x3 affine theta (normalized coordinates,
// corner-aligned: -1 and +1 are the centers of the edge pixels) with bilinear
// interpolation and border padding. The source coordinate is written as the
// output pixel plus an offset so that the identity affine hits pixel centers
// exactly.
template <typename T>
Var<T> affine_grid_sample(const Var<T>& img, const Var<T>& theta) {
    detail::require_rank(img.shape(), 3, "affine_grid_sample");
    if (theta.value().size() != 6) fail(ErrorKind::ShapeError, "affine_grid_sample: theta must have 6 entries");
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    if (H < 2 || W < 2) fail(ErrorKind::ShapeError, "affine_grid_sample: image must be at least 2x2");
    const T cx = T(W - 1) / T(2), cy = T(H - 1) / T(2);
    const auto& th = theta.value().data;
    for (T v : th)
        if (!std::isfinite(static_cast<double>(v))) fail(ErrorKind::NumericalError, "non-finite affine predicted by the spatial transformer");

    struct Sample {
        int x0, x1, y0, y1;
        T wx, wy;
        bool clamp_x, clamp_y;
        T xn, yn;
    };
    const std::size_t P = static_cast<std::size_t>(H) * W;
    auto samples = std::make_shared<std::vector<Sample>>(P);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const T xn = (T(j) - cx) / cx;
            const T yn = (T(i) - cy) / cy;
            T xs = T(j) + ((th[0] - T(1)) * xn + th[1] * yn + th[2]) * cx;
            T ys = T(i) + (th[3] * xn + (th[4] - T(1)) * yn + th[5]) * cy;
            Sample s{};
            s.xn = xn;
            s.yn = yn;
            s.clamp_x = xs < T(0) || xs > T(W - 1);
            s.clamp_y = ys < T(0) || ys > T(H - 1);
            xs = std::min(std::max(xs, T(0)), T(W - 1));
            ys = std::min(std::max(ys, T(0)), T(H - 1));
            s.x0 = static_cast<int>(std::floor(xs));
            s.y0 = static_cast<int>(std::floor(ys));
            s.x1 = std::min(s.x0 + 1, W - 1);
            s.y1 = std::min(s.y0 + 1, H - 1);
            s.wx = xs - T(s.x0);
            s.wy = ys - T(s.y0);
            (*samples)[static_cast<std::size_t>(i) * W + j] = s;
        }

    Tensor<T> out(img.shape());
    const auto& iv = img.value().data;
    for (int c = 0; c < C; ++c) {
        const T* src = iv.data() + c * P;
        for (std::size_t p = 0; p < P; ++p) {
            const Sample& s = (*samples)[p];
            const T top = (T(1) - s.wx) * src[s.y0 * W + s.x0] + s.wx * src[s.y0 * W + s.x1];
            const T bot = (T(1) - s.wx) * src[s.y1 * W + s.x0] + s.wx * src[s.y1 * W + s.x1];
            out.data[c * P + p] = (T(1) - s.wy) * top + s.wy * bot;
        }
    }
    const bool gi = img.requires_grad(), gt = theta.requires_grad();
    return detail::make<T>(std::move(out), {img, theta}, [=](Node<T>& n) {
        const auto& src_all = n.parents[0]->value.data;
        Tensor<T>* gimg = gi ? &n.parents[0]->grad_buffer() : nullptr;
        T gth[6] = {0, 0, 0, 0, 0, 0};
        for (int c = 0; c < C; ++c) {
            const T* src = src_all.data() + c * P;
            const T* go = n.grad.data.data() + c * P;
            for (std::size_t p = 0; p < P; ++p) {
                const Sample& s = (*samples)[p];
                const T g = go[p];
                if (gimg) {
                    T* d = gimg->data.data() + c * P;
                    d[s.y0 * W + s.x0] += g * (T(1) - s.wy) * (T(1) - s.wx);
                    d[s.y0 * W + s.x1] += g * (T(1) - s.wy) * s.wx;
                    d[s.y1 * W + s.x0] += g * s.wy * (T(1) - s.wx);
                    d[s.y1 * W + s.x1] += g * s.wy * s.wx;
                }
                if (gt) {
                    const T v00 = src[s.y0 * W + s.x0], v01 = src[s.y0 * W + s.x1];
                    const T v10 = src[s.y1 * W + s.x0], v11 = src[s.y1 * W + s.x1];
                    const T dxs = s.clamp_x ? T(0) : (T(1) - s.wy) * (v01 - v00) + s.wy * (v11 - v10);
                    const T dys = s.clamp_y ? T(0) : (T(1) - s.wx) * (v10 - v00) + s.wx * (v11 - v01);
                    gth[0] += g * dxs * s.xn * cx;
                    gth[1] += g * dxs * s.yn * cx;
                    gth[2] += g * dxs * cx;
                    gth[3] += g * dys * s.xn * cy;
                    gth[4] += g * dys * s.yn * cy;
                    gth[5] += g * dys * cy;
                }
            }
        }
        if (gt) {
            auto& g = n.parents[1]->grad_buffer();
            for (int k = 0; k < 6; ++k) g[k] += gth[k];
        }
    });
}

// ---------------------------------------------------------------- token ops

// [C,H,W] -> [H*W, C]
template <typename T>
Var<T> to_tokens(const Var<T>& x) {
    detail::require_rank(x.shape(), 3, "to_tokens");
    const int C = x.shape()[0];
    const int P = x.shape()[1] * x.shape()[2];
    Tensor<T> out({P, C});
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) out.data[static_cast<std::size_t>(p) * C + c] = x.value().data[static_cast<std::size_t>(c) * P + p];
    return detail::make<T>(std::move(out), {x}, [C, P](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < P; ++p) g.data[static_cast<std::size_t>(c) * P + p] += n.grad.data[static_cast<std::size_t>(p) * C + c];
    });
}

// [H*W, C] -> [C,H,W]
template <typename T>
Var<T> from_tokens(const Var<T>& t, int H, int W) {
    detail::require_rank(t.shape(), 2, "from_tokens");
    const int P = t.shape()[0], C = t.shape()[1];
    if (P != H * W) fail(ErrorKind::ShapeError, "from_tokens: token count does not match grid");
    Tensor<T> out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) out.data[static_cast<std::size_t>(c) * P + p] = t.value().data[static_cast<std::size_t>(p) * C + c];
    return detail::make<T>(std::move(out), {t}, [C, P](Node<T>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < P; ++p) g.data[static_cast<std::size_t>(p) * C + c] += n.grad.data[static_cast<std::size_t>(c) * P + p];
    });
}

// X: [N,in], w: [out,in], b: [out] -> X w^T + b
template <typename T>
Var<T> linear_tokens(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    using namespace detail;
    require_rank(x.shape(), 2, "linear_tokens input");
    const int N = x.shape()[0], I = x.shape()[1], O = w.shape()[0];
    if (w.shape() != Shape{O, I}) fail(ErrorKind::ShapeError, "linear_tokens: weight " + shape_str(w.shape()));
    if (b.shape() != Shape{O}) fail(ErrorKind::ShapeError, "linear_tokens: bias shape");
    Tensor<T> out({N, O});
    MapMat<T> om(out.data.data(), N, O);
    om.noalias() = CMapMat<T>(x.value().data.data(), N, I) * CMapMat<T>(w.value().data.data(), O, I).transpose();
    for (int r = 0; r < N; ++r)
        for (int o = 0; o < O; ++o) om(r, o) += b.value()[o];
    const bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
    return make<T>(std::move(out), {x, w, b}, [=](Node<T>& n) {
        CMapMat<T> go(n.grad.data.data(), N, O);
        if (gx) {
            MapMat<T>(n.parents[0]->grad_buffer().data.data(), N, I).noalias() += go * CMapMat<T>(n.parents[1]->value.data.data(), O, I);
        }
        if (gw) {
            MapMat<T>(n.parents[1]->grad_buffer().data.data(), O, I).noalias() += go.transpose() * CMapMat<T>(n.parents[0]->value.data.data(), N, I);
        }
        if (gb) {
            auto& g = n.parents[2]->grad_buffer();
            for (int o = 0; o < O; ++o) g[o] += go.col(o).sum();
        }
    });
}

// A: [n,d], B: [m,d] -> A B^T : [n,m]
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    using namespace detail;
    require_rank(a.shape(), 2, "matmul_nt");
    require_rank(b.shape(), 2, "matmul_nt");
    const int n = a.shape()[0], d = a.shape()[1], m = b.shape()[0];
    if (b.shape()[1] != d) fail(ErrorKind::ShapeError, "matmul_nt: inner dimension");
    Tensor<T> out({n, m});
    MapMat<T>(out.data.data(), n, m).noalias() = CMapMat<T>(a.value().data.data(), n, d) * CMapMat<T>(b.value().data.data(), m, d).transpose();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return make<T>(std::move(out), {a, b}, [=](Node<T>& nd) {
        CMapMat<T> go(nd.grad.data.data(), n, m);
        if (ga) MapMat<T>(nd.parents[0]->grad_buffer().data.data(), n, d).noalias() += go * CMapMat<T>(nd.parents[1]->value.data.data(), m, d);
        if (gb) MapMat<T>(nd.parents[1]->grad_buffer().data.data(), m, d).noalias() += go.transpose() * CMapMat<T>(nd.parents[0]->value.data.data(), n, d);
    });
}

// A: [n,m], B: [m,d] -> A B : [n,d]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    using namespace detail;
    require_rank(a.shape(), 2, "matmul");
    require_rank(b.shape(), 2, "matmul");
    const int n = a.shape()[0], m = a.shape()[1], d = b.shape()[1];
    if (b.shape()[0] != m) fail(ErrorKind::ShapeError, "matmul: inner dimension");
    Tensor<T> out({n, d});
    MapMat<T>(out.data.data(), n, d).noalias() = CMapMat<T>(a.value().data.data(), n, m) * CMapMat<T>(b.value().data.data(), m, d);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    return make<T>(std::move(out), {a, b}, [=](Node<T>& nd) {
        CMapMat<T> go(nd.grad.data.data(), n, d);
        if (ga) MapMat<T>(nd.parents[0]->grad_buffer().data.data(), n, m).noalias() += go * CMapMat<T>(nd.parents[1]->value.data.data(), m, d).transpose();
        if (gb) MapMat<T>(nd.parents[1]->grad_buffer().data.data(), m, d).noalias() += CMapMat<T>(nd.parents[0]->value.data.data(), n, m).transpose() * go;
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    detail::require_rank(a.shape(), 2, "softmax_rows");
    const int n = a.shape()[0], m = a.shape()[1];
    Tensor<T> out(a.shape());
    for (int r = 0; r < n; ++r) {
        const T* x = a.value().data.data() + static_cast<std::size_t>(r) * m;
        T* y = out.data.data() + static_cast<std::size_t>(r) * m;
        T mx = x[0];
        for (int c = 1; c < m; ++c) mx = std::max(mx, x[c]);
        T s = 0;
        for (int c = 0; c < m; ++c) s += (y[c] = std::exp(x[c] - mx));
        for (int c = 0; c < m; ++c) y[c] /= s;
    }
    return detail::make<T>(std::move(out), {a}, [n, m](Node<T>& nd) {
        auto& g = nd.parents[0]->grad_buffer();
        for (int r = 0; r < n; ++r) {
            const T* y = nd.value.data.data() + static_cast<std::size_t>(r) * m;
            const T* dy = nd.grad.data.data() + static_cast<std::size_t>(r) * m;
            T dot = 0;
            for (int c = 0; c < m; ++c) dot += dy[c] * y[c];
            for (int c = 0; c < m; ++c) g[static_cast<std::size_t>(r) * m + c] += y[c] * (dy[c] - dot);
        }
    });
}

// out(c,p) = mask[p] ? token[c] : z(c,p)
template <typename T>
Var<T> mask_replace(const Var<T>& z, const Var<T>& token, const std::vector<std::uint8_t>& mask) {
    detail::require_rank(z.shape(), 3, "mask_replace");
    const int C = z.shape()[0];
    const std::size_t P = static_cast<std::size_t>(z.shape()[1]) * z.shape()[2];
    if (token.shape() != Shape{C}) fail(ErrorKind::ShapeError, "mask_replace: token must have C_f entries");
    if (mask.size() != P) fail(ErrorKind::ShapeError, "mask_replace: mask grid size");
    Tensor<T> out = z.value();
    for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p)
            if (mask[p]) out.data[c * P + p] = token.value()[c];
    const bool gz = z.requires_grad(), gt = token.requires_grad();
    return detail::make<T>(std::move(out), {z, token}, [=](Node<T>& n) {
        for (int c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
                const T g = n.grad.data[c * P + p];
                if (mask[p]) {
                    if (gt) n.parents[1]->grad_buffer()[c] += g;
                } else if (gz) {
                    n.parents[0]->grad_buffer().data[c * P + p] += g;
                }
            }
    });
}

}  // namespace fsad::ag
