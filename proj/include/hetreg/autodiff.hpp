#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "hetreg/tensor.hpp"

namespace hetreg {

// Reverse-mode automatic differentiation over Tensor values. Each op returns a
// Var holding a node of the computation DAG; Var::backward() accumulates
// gradients into every reachable node that requires them. There is no global
// tape: the graph is owned by the Vars themselves, so building and
// differentiating graphs is thread-safe across independent roots.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;            // allocated lazily during backward
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // pushes grad into parents

    Tensor& ensure_grad() {
        if (!has_grad) {
            grad = Tensor::zeros(value.shape());
            has_grad = true;
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    static Var scalar(double v, bool requires_grad = false) {
        return leaf(Tensor::scalar(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }

    // Gradient accumulated by the last backward(); zeros if untouched.
    Tensor grad() const {
        if (node_->has_grad) return node_->grad;
        return Tensor::zeros(node_->value.shape());
    }
    bool grad_touched() const { return node_->has_grad; }

    double item() const {
        if (node_->value.size() != 1) throw std::invalid_argument("Var::item: not a scalar");
        return node_->value[0];
    }

    // Backpropagate from this scalar root (seed gradient 1).
    void backward() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var square(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var sqrt_v(const Var& a);
Var abs_v(const Var& a);
Var pow_scalar(const Var& a, double p);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var clamp_min(const Var& a, double lo);
Var clamp_max(const Var& a, double hi);

// ---- reductions / structure ----
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, std::vector<int64_t> shape);
Var detach(const Var& a);
Var concat_channels(const Var& a, const Var& b);  // [N,Ca,S...] + [N,Cb,S...]

// Forward difference along spatial `axis` of [N,C,S...] (axis counted within
// the spatial dims). The last slice is replicated so the output keeps the
// input shape with zeros in the final position.
Var forward_diff(const Var& a, int axis);

// ---- neural-net ops ----
// input [N,Ci,S...], weight [Co,Ci,k,...], bias [Co]; zero padding k/2.
Var conv_nd(const Var& input, const Var& weight, const Var& bias, int stride);
Var upsample_nearest(const Var& a, int factor = 2);

// Pull-warp: output(x) = image(x + disp(x)) with multilinear interpolation and
// border replication; differentiable in both image and displacement.
// image [N,C,S...], disp [N,R,S...] with R = number of spatial dims.
Var warp_multilinear(const Var& image, const Var& disp);

}  // namespace hetreg
