#pragma once

// Tape-based reverse-mode differentiation. Every op below records an explicit
// backward formula; the graph replays them in reverse creation order.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsm/tensor.hpp"

namespace lsm {

/// A named trainable tensor. `frozen` tensors never require grad and are
/// skipped by the optimizer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

    void zero_grad() { grad.fill(0.0); }
};

using ParameterList = std::vector<Parameter*>;

class Graph;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor::zeros_like(value);
        return grad;
    }
};

/// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const std::vector<int>& shape() const { return node_->value.shape; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    Graph& graph() const { return *graph_; }
    Node* node() const { return node_; }

private:
    friend class Graph;
    Var(Graph* g, Node* n) : graph_(g), node_(n) {}
    Graph* graph_ = nullptr;
    Node* node_ = nullptr;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to a parameter; gradients accumulate into `p.grad`.
    Var param(Parameter& p);

    /// Creates a node. `backward` is dropped when no input requires grad.
    Var make(Tensor value, bool requires_grad, std::function<void(Node&)> backward);

    /// Seeds output gradients and runs all recorded backward formulas.
    void backward(const std::vector<std::pair<Var, Tensor>>& seeds);
    void backward(Var scalar_output, double seed = 1.0);

    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
    bool grad_enabled_ = true;
};

namespace ops {

Var matmul(Var a, Var b);               // [m,k]x[k,n]
Var matmul_nt(Var a, Var b);            // [m,k]x[n,k]^T
Var linear(Var x, Var weight, Var bias); // x[m,in] W[in,out] + b[out]; bias may be invalid
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var x, Var row);            // x[m,n] + row[n] broadcast over rows
Var mul_row(Var x, Var row);            // x[m,n] * row[n] broadcast over rows
Var gelu(Var x);
Var relu(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, int begin, int end);
Var transpose(Var x);                   // [m,n] -> [n,m]
Var reshape(Var x, std::vector<int> shape);
Var conv2d(Var x, Var weight, Var bias, int stride, int pad);   // x[C,H,W] w[O,C,k,k]
Var conv_transpose2d(Var x, Var weight, Var bias);              // w[C,O,k,k], stride == k
Var avg_pool(Var x, int factor);        // [C,H,W] -> [C,H/f,W/f]
Var concat_channels(const std::vector<Var>& parts);
/// Cosine similarity of each row of x[T,D] against constant rows of refs[J,D].
Var cosine_similarity(Var x, const Tensor& refs);
/// out[c] = mean of rows t with labels[t] == c; zero row for empty classes.
Var masked_average_pool(Var z, const std::vector<int>& labels, int classes);
/// Multi-head scaled dot-product attention over already-projected q, k, v.
Var attention(Var q, Var k, Var v, int heads);
Var sum(Var x);

} // namespace ops

} // namespace lsm
