#include "hetreg/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hetreg {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using CMapRM = Eigen::Map<const MatrixRM>;

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

Var unary_op(const Var& a, Tensor out, std::function<void(Node&)> bwd) {
    return Var(make_node(std::move(out), {a.node()}, std::move(bwd)));
}

}  // namespace

void Var::backward() const {
    if (!node_) throw std::invalid_argument("backward on undefined Var");
    if (node_->value.size() != 1)
        throw std::invalid_argument("backward requires a scalar root");

    // deterministic post-order over the DAG
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node* p = n.parents[static_cast<size_t>(k)].get();
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    }));
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            Tensor& g = pa->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            Tensor& g = pa->ensure_grad();
            const Tensor& bv = pb->value;
            for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->ensure_grad();
            const Tensor& av = pa->value;
            for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    }));
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "div");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        const Tensor& av = pa->value;
        const Tensor& bv = pb->value;
        if (pa->requires_grad) {
            Tensor& g = pa->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / bv[i];
        }
        if (pb->requires_grad) {
            Tensor& g = pb->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i)
                g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
        }
    }));
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] += s;
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    return unary_op(a, std::move(out), [s](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var square(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * 2.0 * av[i];
    });
}

Var exp_v(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

Var log_v(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / av[i];
    });
}

Var sqrt_v(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * 0.5 / n.value[i];
    });
}

Var abs_v(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i) {
            const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
            g[i] += n.grad[i] * s;
        }
    });
}

Var pow_scalar(const Var& a, double p) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], p);
    return unary_op(a, std::move(out), [p](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i) {
            const double d = (p == 0.0) ? 0.0 : p * std::pow(av[i], p - 1.0);
            g[i] += n.grad[i] * d;
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    return unary_op(a, std::move(out), [slope](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * (av[i] > 0.0 ? 1.0 : slope);
    });
}

Var clamp_min(const Var& a, double lo) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], lo);
    return unary_op(a, std::move(out), [lo](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i)
            if (av[i] >= lo) g[i] += n.grad[i];
    });
}

Var clamp_max(const Var& a, double hi) {
    Tensor out = a.value();
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], hi);
    return unary_op(a, std::move(out), [hi](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const Tensor& av = n.parents[0]->value;
        for (int64_t i = 0; i < g.size(); ++i)
            if (av[i] <= hi) g[i] += n.grad[i];
    });
}

// ---------------- reductions / structure ----------------

Var sum(const Var& a) {
    double s = 0.0;
    const Tensor& av = a.value();
    for (int64_t i = 0; i < av.size(); ++i) s += av[i];
    return unary_op(a, Tensor::scalar(s), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const double up = n.grad[0];
        for (int64_t i = 0; i < g.size(); ++i) g[i] += up;
    });
}

Var mean(const Var& a) {
    const int64_t n_el = a.value().size();
    double s = 0.0;
    const Tensor& av = a.value();
    for (int64_t i = 0; i < n_el; ++i) s += av[i];
    return unary_op(a, Tensor::scalar(s / static_cast<double>(n_el)), [n_el](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        const double up = n.grad[0] / static_cast<double>(n_el);
        for (int64_t i = 0; i < g.size(); ++i) g[i] += up;
    });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return unary_op(a, std::move(out), [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var detach(const Var& a) { return Var::leaf(a.value(), false); }

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != bv.ndim() || av.ndim() < 3)
        throw std::invalid_argument("concat_channels: need matching [N,C,S...] ranks");
    for (int i = 0; i < av.ndim(); ++i)
        if (i != 1 && av.dim(i) != bv.dim(i))
            throw std::invalid_argument("concat_channels: non-channel dims differ");

    const int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    const int64_t sp = av.spatial_size(2);
    std::vector<int64_t> shape = av.shape();
    shape[1] = ca + cb;
    Tensor out(shape);
    for (int64_t b0 = 0; b0 < n; ++b0) {
        double* dst = out.data() + b0 * (ca + cb) * sp;
        std::copy(av.data() + b0 * ca * sp, av.data() + (b0 + 1) * ca * sp, dst);
        std::copy(bv.data() + b0 * cb * sp, bv.data() + (b0 + 1) * cb * sp, dst + ca * sp);
    }
    return Var(make_node(std::move(out), {a.node(), b.node()}, [n, ca, cb, sp](Node& nd) {
        Node* pa = nd.parents[0].get();
        Node* pb = nd.parents[1].get();
        for (int64_t b0 = 0; b0 < n; ++b0) {
            const double* src = nd.grad.data() + b0 * (ca + cb) * sp;
            if (pa->requires_grad) {
                Tensor& g = pa->ensure_grad();
                double* dst = g.data() + b0 * ca * sp;
                for (int64_t i = 0; i < ca * sp; ++i) dst[i] += src[i];
            }
            if (pb->requires_grad) {
                Tensor& g = pb->ensure_grad();
                double* dst = g.data() + b0 * cb * sp;
                for (int64_t i = 0; i < cb * sp; ++i) dst[i] += src[ca * sp + i];
            }
        }
    }));
}

Var forward_diff(const Var& a, int axis) {
    const Tensor& av = a.value();
    if (av.ndim() < 3) throw std::invalid_argument("forward_diff: expected [N,C,S...]");
    const int rank = av.ndim() - 2;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("forward_diff: axis out of range");

    // decompose index space as outer x len x inner around the chosen axis
    int64_t outer = av.dim(0) * av.dim(1);
    for (int i = 0; i < axis; ++i) outer *= av.dim(2 + i);
    const int64_t len = av.dim(2 + axis);
    int64_t inner = 1;
    for (int i = axis + 1; i < rank; ++i) inner *= av.dim(2 + i);

    Tensor out(av.shape());
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = av.data() + o * len * inner;
        double* dst = out.data() + o * len * inner;
        for (int64_t l = 0; l + 1 < len; ++l)
            for (int64_t i = 0; i < inner; ++i)
                dst[l * inner + i] = src[(l + 1) * inner + i] - src[l * inner + i];
        for (int64_t i = 0; i < inner; ++i) dst[(len - 1) * inner + i] = 0.0;
    }
    return unary_op(a, std::move(out), [outer, len, inner](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* up = n.grad.data() + o * len * inner;
            double* dst = g.data() + o * len * inner;
            for (int64_t l = 0; l + 1 < len; ++l)
                for (int64_t i = 0; i < inner; ++i) {
                    const double u = up[l * inner + i];
                    dst[(l + 1) * inner + i] += u;
                    dst[l * inner + i] -= u;
                }
        }
    });
}

// ---------------- convolution ----------------

namespace {

struct ConvGeom {
    int rank;                       // 2 or 3 spatial dims
    int64_t n, ci, co, k;
    std::vector<int64_t> in_sp, out_sp;
    int stride, pad;
    int64_t in_spatial, out_spatial, patch;  // patch = ci * k^rank
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& weight, int stride) {
    ConvGeom g;
    g.rank = input.ndim() - 2;
    if (g.rank < 1 || g.rank > 3) throw std::invalid_argument("conv_nd: spatial rank must be 1..3");
    if (weight.ndim() != 2 + g.rank) throw std::invalid_argument("conv_nd: weight rank mismatch");
    g.n = input.dim(0);
    g.ci = input.dim(1);
    g.co = weight.dim(0);
    if (weight.dim(1) != g.ci) throw std::invalid_argument("conv_nd: channel mismatch");
    g.k = weight.dim(2);
    for (int i = 0; i < g.rank; ++i)
        if (weight.dim(2 + i) != g.k) throw std::invalid_argument("conv_nd: non-cubic kernel");
    g.stride = stride;
    g.pad = static_cast<int>(g.k / 2);
    g.in_spatial = 1;
    g.out_spatial = 1;
    for (int i = 0; i < g.rank; ++i) {
        const int64_t in = input.dim(2 + i);
        const int64_t out = (in + 2 * g.pad - g.k) / stride + 1;
        g.in_sp.push_back(in);
        g.out_sp.push_back(out);
        g.in_spatial *= in;
        g.out_spatial *= out;
    }
    g.patch = g.ci;
    for (int i = 0; i < g.rank; ++i) g.patch *= g.k;
    return g;
}

// 2d fast path: plain nested loops, no index decoding
void im2col_2d(const ConvGeom& g, const double* in, double* cols) {
    const int64_t ih = g.in_sp[0], iw = g.in_sp[1];
    const int64_t oh = g.out_sp[0], ow = g.out_sp[1];
    const int64_t taps = g.k * g.k;
    for (int64_t c = 0; c < g.ci; ++c) {
        const double* chan = in + c * g.in_spatial;
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                double* row = cols + (c * taps + ky * g.k + kx) * g.out_spatial;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t sy = oy * g.stride - g.pad + ky;
                    double* dst = row + oy * ow;
                    if (sy < 0 || sy >= ih) {
                        for (int64_t ox = 0; ox < ow; ++ox) dst[ox] = 0.0;
                        continue;
                    }
                    const double* src = chan + sy * iw;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t sx = ox * g.stride - g.pad + kx;
                        dst[ox] = (sx >= 0 && sx < iw) ? src[sx] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_2d(const ConvGeom& g, const double* cols, double* in) {
    const int64_t ih = g.in_sp[0], iw = g.in_sp[1];
    const int64_t oh = g.out_sp[0], ow = g.out_sp[1];
    const int64_t taps = g.k * g.k;
    for (int64_t c = 0; c < g.ci; ++c) {
        double* chan = in + c * g.in_spatial;
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols + (c * taps + ky * g.k + kx) * g.out_spatial;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t sy = oy * g.stride - g.pad + ky;
                    if (sy < 0 || sy >= ih) continue;
                    const double* src = row + oy * ow;
                    double* dst = chan + sy * iw;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t sx = ox * g.stride - g.pad + kx;
                        if (sx >= 0 && sx < iw) dst[sx] += src[ox];
                    }
                }
            }
        }
    }
}

// Gather patches of one batch item into cols [patch, out_spatial].
void im2col_generic(const ConvGeom& g, const double* in, double* cols) {
    std::vector<int64_t> ox(static_cast<size_t>(g.rank), 0);
    for (int64_t op = 0; op < g.out_spatial; ++op) {
        // decode output spatial index
        int64_t rem = op;
        for (int i = g.rank - 1; i >= 0; --i) {
            ox[static_cast<size_t>(i)] = rem % g.out_sp[static_cast<size_t>(i)];
            rem /= g.out_sp[static_cast<size_t>(i)];
        }
        double* col = cols + op;  // stride out_spatial between rows
        for (int64_t c = 0; c < g.ci; ++c) {
            const double* chan = in + c * g.in_spatial;
            // iterate kernel taps
            std::vector<int64_t> kx(static_cast<size_t>(g.rank), 0);
            for (int64_t t = 0; t < g.patch / g.ci; ++t) {
                int64_t trem = t;
                for (int i = g.rank - 1; i >= 0; --i) {
                    kx[static_cast<size_t>(i)] = trem % g.k;
                    trem /= g.k;
                }
                bool inside = true;
                int64_t off = 0;
                for (int i = 0; i < g.rank; ++i) {
                    const int64_t p = ox[static_cast<size_t>(i)] * g.stride - g.pad +
                                      kx[static_cast<size_t>(i)];
                    if (p < 0 || p >= g.in_sp[static_cast<size_t>(i)]) {
                        inside = false;
                        break;
                    }
                    off = off * g.in_sp[static_cast<size_t>(i)] + p;
                }
                col[(c * (g.patch / g.ci) + t) * g.out_spatial] = inside ? chan[off] : 0.0;
            }
        }
    }
}

// Scatter-add cols back to the input layout (adjoint of im2col).
void col2im_generic(const ConvGeom& g, const double* cols, double* in) {
    std::vector<int64_t> ox(static_cast<size_t>(g.rank), 0);
    for (int64_t op = 0; op < g.out_spatial; ++op) {
        int64_t rem = op;
        for (int i = g.rank - 1; i >= 0; --i) {
            ox[static_cast<size_t>(i)] = rem % g.out_sp[static_cast<size_t>(i)];
            rem /= g.out_sp[static_cast<size_t>(i)];
        }
        const double* col = cols + op;
        for (int64_t c = 0; c < g.ci; ++c) {
            double* chan = in + c * g.in_spatial;
            std::vector<int64_t> kx(static_cast<size_t>(g.rank), 0);
            for (int64_t t = 0; t < g.patch / g.ci; ++t) {
                int64_t trem = t;
                for (int i = g.rank - 1; i >= 0; --i) {
                    kx[static_cast<size_t>(i)] = trem % g.k;
                    trem /= g.k;
                }
                bool inside = true;
                int64_t off = 0;
                for (int i = 0; i < g.rank; ++i) {
                    const int64_t p = ox[static_cast<size_t>(i)] * g.stride - g.pad +
                                      kx[static_cast<size_t>(i)];
                    if (p < 0 || p >= g.in_sp[static_cast<size_t>(i)]) {
                        inside = false;
                        break;
                    }
                    off = off * g.in_sp[static_cast<size_t>(i)] + p;
                }
                if (inside) chan[off] += col[(c * (g.patch / g.ci) + t) * g.out_spatial];
            }
        }
    }
}

void im2col(const ConvGeom& g, const double* in, double* cols) {
    if (g.rank == 2)
        im2col_2d(g, in, cols);
    else
        im2col_generic(g, in, cols);
}

void col2im(const ConvGeom& g, const double* cols, double* in) {
    if (g.rank == 2)
        col2im_2d(g, cols, in);
    else
        col2im_generic(g, cols, in);
}

}  // namespace

Var conv_nd(const Var& input, const Var& weight, const Var& bias, int stride) {
    const ConvGeom g = conv_geometry(input.value(), weight.value(), stride);
    if (bias.value().size() != g.co) throw std::invalid_argument("conv_nd: bias size mismatch");

    std::vector<int64_t> out_shape{g.n, g.co};
    for (int64_t s : g.out_sp) out_shape.push_back(s);
    Tensor out(out_shape);

    std::vector<double> cols(static_cast<size_t>(g.patch * g.out_spatial));
    CMapRM W(weight.value().data(), g.co, g.patch);
    for (int64_t b = 0; b < g.n; ++b) {
        im2col(g, input.value().data() + b * g.ci * g.in_spatial, cols.data());
        CMapRM C(cols.data(), g.patch, g.out_spatial);
        MapRM O(out.data() + b * g.co * g.out_spatial, g.co, g.out_spatial);
        O.noalias() = W * C;
        for (int64_t c = 0; c < g.co; ++c) {
            const double bv = bias.value()[c];
            double* row = out.data() + (b * g.co + c) * g.out_spatial;
            for (int64_t i = 0; i < g.out_spatial; ++i) row[i] += bv;
        }
    }

    return Var(make_node(std::move(out), {input.node(), weight.node(), bias.node()},
                         [g](Node& n) {
        Node* pin = n.parents[0].get();
        Node* pw = n.parents[1].get();
        Node* pb = n.parents[2].get();
        std::vector<double> cols(static_cast<size_t>(g.patch * g.out_spatial));
        std::vector<double> gcols(static_cast<size_t>(g.patch * g.out_spatial));
        CMapRM W(pw->value.data(), g.co, g.patch);
        for (int64_t b = 0; b < g.n; ++b) {
            CMapRM GO(n.grad.data() + b * g.co * g.out_spatial, g.co, g.out_spatial);
            if (pw->requires_grad || pb->requires_grad) {
                if (pw->requires_grad) {
                    im2col(g, pin->value.data() + b * g.ci * g.in_spatial, cols.data());
                    CMapRM C(cols.data(), g.patch, g.out_spatial);
                    MapRM GW(pw->ensure_grad().data(), g.co, g.patch);
                    GW.noalias() += GO * C.transpose();
                }
                if (pb->requires_grad) {
                    Tensor& gb = pb->ensure_grad();
                    for (int64_t c = 0; c < g.co; ++c) gb[c] += GO.row(c).sum();
                }
            }
            if (pin->requires_grad) {
                MapRM GC(gcols.data(), g.patch, g.out_spatial);
                GC.noalias() = W.transpose() * GO;
                col2im(g, gcols.data(), pin->ensure_grad().data() + b * g.ci * g.in_spatial);
            }
        }
    }));
}

Var upsample_nearest(const Var& a, int factor) {
    const Tensor& av = a.value();
    if (av.ndim() < 3) throw std::invalid_argument("upsample_nearest: expected [N,C,S...]");
    const int rank = av.ndim() - 2;
    const int64_t nc = av.dim(0) * av.dim(1);

    std::vector<int64_t> in_sp, out_sp;
    int64_t in_spatial = 1, out_spatial = 1;
    for (int i = 0; i < rank; ++i) {
        in_sp.push_back(av.dim(2 + i));
        out_sp.push_back(av.dim(2 + i) * factor);
        in_spatial *= in_sp.back();
        out_spatial *= out_sp.back();
    }
    std::vector<int64_t> shape{av.dim(0), av.dim(1)};
    for (int64_t s : out_sp) shape.push_back(s);
    Tensor out(shape);

    for (int64_t m = 0; m < nc; ++m) {
        const double* src = av.data() + m * in_spatial;
        double* dst = out.data() + m * out_spatial;
        for (int64_t op = 0; op < out_spatial; ++op) {
            int64_t rem = op, off = 0;
            for (int i = rank - 1; i >= 0; --i) {
                const int64_t o = rem % out_sp[static_cast<size_t>(i)];
                rem /= out_sp[static_cast<size_t>(i)];
                // accumulate source offset with axis-major weight
                int64_t w = 1;
                for (int j = rank - 1; j > i; --j) w *= in_sp[static_cast<size_t>(j)];
                off += (o / factor) * w;
            }
            dst[op] = src[off];
        }
    }
    return unary_op(a, std::move(out), [nc, rank, in_sp, out_sp, in_spatial, out_spatial,
                                        factor](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t m = 0; m < nc; ++m) {
            const double* up = n.grad.data() + m * out_spatial;
            double* dst = g.data() + m * in_spatial;
            for (int64_t op = 0; op < out_spatial; ++op) {
                int64_t rem = op, off = 0;
                for (int i = rank - 1; i >= 0; --i) {
                    const int64_t o = rem % out_sp[static_cast<size_t>(i)];
                    rem /= out_sp[static_cast<size_t>(i)];
                    int64_t w = 1;
                    for (int j = rank - 1; j > i; --j) w *= in_sp[static_cast<size_t>(j)];
                    off += (o / factor) * w;
                }
                dst[off] += up[op];
            }
        }
    });
}

// ---------------- warp ----------------

namespace {

struct WarpGeom {
    int rank;
    int64_t n, c;
    std::vector<int64_t> sp;
    int64_t spatial;
};

WarpGeom warp_geometry(const Tensor& image, const Tensor& disp) {
    WarpGeom g;
    g.rank = image.ndim() - 2;
    if (g.rank < 1 || g.rank > 3) throw std::invalid_argument("warp: spatial rank must be 1..3");
    if (disp.ndim() != image.ndim())
        throw std::invalid_argument("warp: displacement rank mismatch");
    if (disp.dim(0) != image.dim(0) || disp.dim(1) != g.rank)
        throw std::invalid_argument("warp: displacement must be [N,rank,S...]");
    g.n = image.dim(0);
    g.c = image.dim(1);
    g.spatial = 1;
    for (int i = 0; i < g.rank; ++i) {
        if (disp.dim(2 + i) != image.dim(2 + i))
            throw std::invalid_argument("warp: spatial shape mismatch");
        g.sp.push_back(image.dim(2 + i));
        g.spatial *= g.sp.back();
    }
    for (int64_t i = 0; i < disp.size(); ++i)
        if (!std::isfinite(disp[i])) throw std::invalid_argument("warp: non-finite displacement");
    return g;
}

}  // namespace

Var warp_multilinear(const Var& image, const Var& disp) {
    const WarpGeom g = warp_geometry(image.value(), disp.value());
    const Tensor& iv = image.value();
    const Tensor& dv = disp.value();

    Tensor out(iv.shape());
    const int R = g.rank;
    const int corners = 1 << R;

    // per output pixel: clamped sample coord, lower corner, fraction and clamp mask
    for (int64_t b = 0; b < g.n; ++b) {
        for (int64_t p = 0; p < g.spatial; ++p) {
            int64_t i0[3];
            double f[3];
            int64_t rem = p;
            int64_t coord[3];
            for (int i = R - 1; i >= 0; --i) {
                coord[i] = rem % g.sp[static_cast<size_t>(i)];
                rem /= g.sp[static_cast<size_t>(i)];
            }
            for (int a = 0; a < R; ++a) {
                double s = static_cast<double>(coord[a]) +
                           dv[(b * R + a) * g.spatial + p];
                const double hi = static_cast<double>(g.sp[static_cast<size_t>(a)] - 1);
                if (s < 0.0) s = 0.0;
                if (s > hi) s = hi;
                double fl = std::floor(s);
                if (fl > hi - 1.0) fl = std::max(hi - 1.0, 0.0);
                i0[a] = static_cast<int64_t>(fl);
                f[a] = s - fl;
            }
            for (int64_t c = 0; c < g.c; ++c) {
                const double* chan = iv.data() + (b * g.c + c) * g.spatial;
                double acc = 0.0;
                for (int m = 0; m < corners; ++m) {
                    double w = 1.0;
                    int64_t off = 0;
                    for (int a = 0; a < R; ++a) {
                        const int bit = (m >> a) & 1;
                        const int64_t sz = g.sp[static_cast<size_t>(a)];
                        int64_t idx = i0[a] + bit;
                        if (idx > sz - 1) idx = sz - 1;
                        w *= bit ? f[a] : (1.0 - f[a]);
                        off = off * sz + idx;
                    }
                    acc += w * chan[off];
                }
                out[(b * g.c + c) * g.spatial + p] = acc;
            }
        }
    }

    return Var(make_node(std::move(out), {image.node(), disp.node()}, [g](Node& n) {
        Node* pimg = n.parents[0].get();
        Node* pdis = n.parents[1].get();
        const Tensor& iv = pimg->value;
        const Tensor& dv = pdis->value;
        const int R = g.rank;
        const int corners = 1 << R;
        Tensor* gi = pimg->requires_grad ? &pimg->ensure_grad() : nullptr;
        Tensor* gd = pdis->requires_grad ? &pdis->ensure_grad() : nullptr;

        for (int64_t b = 0; b < g.n; ++b) {
            for (int64_t p = 0; p < g.spatial; ++p) {
                int64_t i0[3];
                double f[3];
                bool live[3];  // false when the coordinate clamped at the border
                int64_t rem = p;
                int64_t coord[3];
                for (int i = R - 1; i >= 0; --i) {
                    coord[i] = rem % g.sp[static_cast<size_t>(i)];
                    rem /= g.sp[static_cast<size_t>(i)];
                }
                for (int a = 0; a < R; ++a) {
                    double s = static_cast<double>(coord[a]) +
                               dv[(b * R + a) * g.spatial + p];
                    const double hi = static_cast<double>(g.sp[static_cast<size_t>(a)] - 1);
                    live[a] = (s > 0.0 && s < hi);
                    if (s < 0.0) s = 0.0;
                    if (s > hi) s = hi;
                    double fl = std::floor(s);
                    if (fl > hi - 1.0) fl = std::max(hi - 1.0, 0.0);
                    i0[a] = static_cast<int64_t>(fl);
                    f[a] = s - fl;
                }
                for (int64_t c = 0; c < g.c; ++c) {
                    const double up = n.grad[(b * g.c + c) * g.spatial + p];
                    if (up == 0.0) continue;
                    const double* chan = iv.data() + (b * g.c + c) * g.spatial;
                    double* gchan = gi ? gi->data() + (b * g.c + c) * g.spatial : nullptr;
                    for (int m = 0; m < corners; ++m) {
                        double w = 1.0;
                        int64_t off = 0;
                        for (int a = 0; a < R; ++a) {
                            const int bit = (m >> a) & 1;
                            const int64_t sz = g.sp[static_cast<size_t>(a)];
                            int64_t idx = i0[a] + bit;
                            if (idx > sz - 1) idx = sz - 1;
                            w *= bit ? f[a] : (1.0 - f[a]);
                            off = off * sz + idx;
                        }
                        if (gchan) gchan[off] += up * w;
                        if (gd) {
                            // d(value)/d(f[a]) contribution of this corner
                            for (int a = 0; a < R; ++a) {
                                if (!live[a]) continue;
                                double dwa = 1.0;
                                for (int a2 = 0; a2 < R; ++a2) {
                                    const int bit2 = (m >> a2) & 1;
                                    if (a2 == a)
                                        dwa *= bit2 ? 1.0 : -1.0;
                                    else
                                        dwa *= bit2 ? f[a2] : (1.0 - f[a2]);
                                }
                                (*gd)[(b * R + a) * g.spatial + p] += up * dwa * chan[off];
                            }
                        }
                    }
                }
            }
        }
    }));
}

}  // namespace hetreg
