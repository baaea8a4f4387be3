#include "lsm/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "lsm/error.hpp"
#include "lsm/kernels.hpp"

namespace lsm {

Var Graph::constant(Tensor value) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.back().get());
}

Var Graph::param(Parameter& p) {
    const bool rg = grad_enabled_ && !p.frozen;
    Parameter* target = &p;
    return make(p.value, rg, [target](Node& self) {
        if (target->grad.shape != target->value.shape) target->grad = Tensor::zeros_like(target->value);
        for (std::size_t i = 0; i < self.grad.size(); ++i) target->grad[i] += self.grad[i];
    });
}

Var Graph::make(Tensor value, bool requires_grad, std::function<void(Node&)> backward) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad && grad_enabled_;
    if (node->requires_grad) node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.back().get());
}

void Graph::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    for (const auto& [var, seed] : seeds) {
        if (!var.requires_grad()) continue;
        require(seed.size() == var.value().size(), ErrorCode::ShapeMismatch, "backward seed shape");
        Tensor& g = var.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (!n.backward || n.grad.empty()) continue;
        n.backward(n);
    }
}

void Graph::backward(Var scalar_output, double seed) {
    Tensor s(scalar_output.shape(), seed);
    backward({{scalar_output, s}});
}

namespace ops {

namespace {

Graph& graph_of(Var a) {
    require(a.valid(), ErrorCode::InvalidArgument, "invalid Var");
    return a.graph();
}

void expect_rank(Var v, int rank, const char* op) {
    require(v.value().rank() == rank, ErrorCode::ShapeMismatch,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(v.shape()));
}

bool any_grad(std::initializer_list<Var> vs) {
    for (const Var& v : vs)
        if (v.valid() && v.requires_grad()) return true;
    return false;
}

void accumulate(Node* n, const Tensor& g) {
    if (!n->requires_grad) return;
    Tensor& dst = n->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

} // namespace

Var matmul(Var a, Var b) {
    expect_rank(a, 2, "matmul");
    expect_rank(b, 2, "matmul");
    const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
    require(b.value().dim(0) == k, ErrorCode::ShapeMismatch,
            "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out({m, n});
    kernels::matmul(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n, false);
    Node* na = a.node();
    Node* nb = b.node();
    return graph_of(a).make(std::move(out), any_grad({a, b}), [na, nb, m, k, n](Node& self) {
        if (na->requires_grad)
            kernels::matmul_nt(self.grad.data.data(), nb->value.data.data(), na->ensure_grad().data.data(), m, n, k,
                               true);
        if (nb->requires_grad)
            kernels::matmul_tn(na->value.data.data(), self.grad.data.data(), nb->ensure_grad().data.data(), k, m, n,
                               true);
    });
}

Var matmul_nt(Var a, Var b) {
    expect_rank(a, 2, "matmul_nt");
    expect_rank(b, 2, "matmul_nt");
    const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
    require(b.value().dim(1) == k, ErrorCode::ShapeMismatch,
            "matmul_nt " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
    Tensor out({m, n});
    kernels::matmul_nt(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n, false);
    Node* na = a.node();
    Node* nb = b.node();
    return graph_of(a).make(std::move(out), any_grad({a, b}), [na, nb, m, k, n](Node& self) {
        if (na->requires_grad)
            kernels::matmul(self.grad.data.data(), nb->value.data.data(), na->ensure_grad().data.data(), m, n, k,
                            true);
        if (nb->requires_grad)
            kernels::matmul_tn(self.grad.data.data(), na->value.data.data(), nb->ensure_grad().data.data(), n, m, k,
                               true);
    });
}

Var linear(Var x, Var weight, Var bias) {
    expect_rank(x, 2, "linear");
    expect_rank(weight, 2, "linear");
    const int m = x.value().dim(0), in = x.value().dim(1), out_dim = weight.value().dim(1);
    require(weight.value().dim(0) == in, ErrorCode::ShapeMismatch,
            "linear " + shape_string(x.shape()) + " with weight " + shape_string(weight.shape()));
    const bool has_bias = bias.valid();
    if (has_bias)
        require(static_cast<int>(bias.value().size()) == out_dim, ErrorCode::ShapeMismatch, "linear bias width");
    Tensor out({m, out_dim});
    kernels::matmul(x.value().data.data(), weight.value().data.data(), out.data.data(), m, in, out_dim, false);
    if (has_bias)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < out_dim; ++j) out.data[static_cast<std::size_t>(i) * out_dim + j] += bias.value()[j];
    Node* nx = x.node();
    Node* nw = weight.node();
    Node* nb = has_bias ? bias.node() : nullptr;
    const bool rg = any_grad({x, weight}) || (has_bias && bias.requires_grad());
    return graph_of(x).make(std::move(out), rg, [nx, nw, nb, m, in, out_dim](Node& self) {
        if (nx->requires_grad)
            kernels::matmul_nt(self.grad.data.data(), nw->value.data.data(), nx->ensure_grad().data.data(), m, out_dim,
                               in, true);
        if (nw->requires_grad)
            kernels::matmul_tn(nx->value.data.data(), self.grad.data.data(), nw->ensure_grad().data.data(), in, m,
                               out_dim, true);
        if (nb && nb->requires_grad) {
            Tensor& gb = nb->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < out_dim; ++j) gb[j] += self.grad.data[static_cast<std::size_t>(i) * out_dim + j];
        }
    });
}

Var add(Var a, Var b) {
    require(a.value().same_shape(b.value()), ErrorCode::ShapeMismatch,
            "add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    Node* na = a.node();
    Node* nb = b.node();
    return graph_of(a).make(std::move(out), any_grad({a, b}), [na, nb](Node& self) {
        accumulate(na, self.grad);
        accumulate(nb, self.grad);
    });
}

Var sub(Var a, Var b) {
    require(a.value().same_shape(b.value()), ErrorCode::ShapeMismatch, "sub shape");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    Node* na = a.node();
    Node* nb = b.node();
    return graph_of(a).make(std::move(out), any_grad({a, b}), [na, nb](Node& self) {
        accumulate(na, self.grad);
        if (nb->requires_grad) {
            Tensor& g = nb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(Var a, Var b) {
    require(a.value().same_shape(b.value()), ErrorCode::ShapeMismatch, "mul shape");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    Node* na = a.node();
    Node* nb = b.node();
    return graph_of(a).make(std::move(out), any_grad({a, b}), [na, nb](Node& self) {
        if (na->requires_grad) {
            Tensor& g = na->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
        }
        if (nb->requires_grad) {
            Tensor& g = nb->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) v *= s;
    Node* na = a.node();
    return graph_of(a).make(std::move(out), a.requires_grad(), [na, s](Node& self) {
        Tensor& g = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var add_row(Var x, Var row) {
    expect_rank(x, 2, "add_row");
    const int m = x.value().dim(0), n = x.value().dim(1);
    require(static_cast<int>(row.value().size()) == n, ErrorCode::ShapeMismatch, "add_row width");
    Tensor out = x.value();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += row.value()[j];
    Node* nx = x.node();
    Node* nr = row.node();
    return graph_of(x).make(std::move(out), any_grad({x, row}), [nx, nr, m, n](Node& self) {
        accumulate(nx, self.grad);
        if (nr->requires_grad) {
            Tensor& g = nr->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[j] += self.grad.at(i, j);
        }
    });
}

Var mul_row(Var x, Var row) {
    expect_rank(x, 2, "mul_row");
    const int m = x.value().dim(0), n = x.value().dim(1);
    require(static_cast<int>(row.value().size()) == n, ErrorCode::ShapeMismatch, "mul_row width");
    Tensor out = x.value();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) *= row.value()[j];
    Node* nx = x.node();
    Node* nr = row.node();
    return graph_of(x).make(std::move(out), any_grad({x, row}), [nx, nr, m, n](Node& self) {
        if (nx->requires_grad) {
            Tensor& g = nx->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g.at(i, j) += self.grad.at(i, j) * nr->value[j];
        }
        if (nr->requires_grad) {
            Tensor& g = nr->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[j] += self.grad.at(i, j) * nx->value.at(i, j);
        }
    });
}

Var gelu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data) v = gelu_value(v);
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_derivative(nx->value[i]);
    });
}

Var relu(Var x) {
    Tensor out = x.value();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (nx->value[i] > 0.0) g[i] += self.grad[i];
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    expect_rank(x, 2, "layer_norm");
    const int m = x.value().dim(0), n = x.value().dim(1);
    require(static_cast<int>(gamma.value().size()) == n && static_cast<int>(beta.value().size()) == n,
            ErrorCode::ShapeMismatch, "layer_norm affine width");
    Tensor out({m, n});
    auto xhat = std::make_shared<Tensor>(std::vector<int>{m, n});
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.value().at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = x.value().at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double h = (x.value().at(i, j) - mean) * is;
            xhat->at(i, j) = h;
            out.at(i, j) = h * gamma.value()[j] + beta.value()[j];
        }
    }
    Node* nx = x.node();
    Node* ng = gamma.node();
    Node* nb = beta.node();
    return graph_of(x).make(std::move(out), any_grad({x, gamma, beta}),
                            [nx, ng, nb, xhat, inv_std, m, n](Node& self) {
                                if (ng->requires_grad || nb->requires_grad) {
                                    for (int i = 0; i < m; ++i)
                                        for (int j = 0; j < n; ++j) {
                                            if (ng->requires_grad)
                                                ng->ensure_grad()[j] += self.grad.at(i, j) * xhat->at(i, j);
                                            if (nb->requires_grad) nb->ensure_grad()[j] += self.grad.at(i, j);
                                        }
                                }
                                if (!nx->requires_grad) return;
                                Tensor& gx = nx->ensure_grad();
                                std::vector<double> dh(static_cast<std::size_t>(n));
                                for (int i = 0; i < m; ++i) {
                                    double mean_dh = 0.0, mean_dh_h = 0.0;
                                    for (int j = 0; j < n; ++j) {
                                        dh[j] = self.grad.at(i, j) * ng->value[j];
                                        mean_dh += dh[j];
                                        mean_dh_h += dh[j] * xhat->at(i, j);
                                    }
                                    mean_dh /= n;
                                    mean_dh_h /= n;
                                    const double is = (*inv_std)[static_cast<std::size_t>(i)];
                                    for (int j = 0; j < n; ++j)
                                        gx.at(i, j) += is * (dh[j] - mean_dh - xhat->at(i, j) * mean_dh_h);
                                }
                            });
}

Var softmax_rows(Var x) {
    expect_rank(x, 2, "softmax_rows");
    const int m = x.value().dim(0), n = x.value().dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = x.value().at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.value().at(i, j));
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            out.at(i, j) = std::exp(x.value().at(i, j) - mx);
            s += out.at(i, j);
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= s;
    }
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, m, n](Node& self) {
        Tensor& gx = nx->ensure_grad();
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
            for (int j = 0; j < n; ++j) gx.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "concat_rows of nothing");
    const int n = parts.front().value().dim(1);
    int rows = 0;
    bool rg = false;
    for (const Var& p : parts) {
        expect_rank(p, 2, "concat_rows");
        require(p.value().dim(1) == n, ErrorCode::ShapeMismatch, "concat_rows width");
        rows += p.value().dim(0);
        rg = rg || p.requires_grad();
    }
    Tensor out({rows, n});
    std::vector<Node*> nodes;
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
        nodes.push_back(p.node());
    }
    return graph_of(parts.front()).make(std::move(out), rg, [nodes](Node& self) {
        std::size_t o = 0;
        for (Node* nd : nodes) {
            const std::size_t sz = nd->value.size();
            if (nd->requires_grad) {
                Tensor& g = nd->ensure_grad();
                for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[o + i];
            }
            o += sz;
        }
    });
}

Var slice_rows(Var x, int begin, int end) {
    expect_rank(x, 2, "slice_rows");
    const int n = x.value().dim(1);
    require(0 <= begin && begin <= end && end <= x.value().dim(0), ErrorCode::ShapeMismatch, "slice_rows range");
    Tensor out({end - begin, n});
    std::copy(x.value().data.begin() + static_cast<std::ptrdiff_t>(begin) * n,
              x.value().data.begin() + static_cast<std::ptrdiff_t>(end) * n, out.data.begin());
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, begin, n](Node& self) {
        Tensor& g = nx->ensure_grad();
        const std::size_t off = static_cast<std::size_t>(begin) * n;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "concat_cols of nothing");
    const int m = parts.front().value().dim(0);
    int cols = 0;
    bool rg = false;
    std::vector<Node*> nodes;
    for (const Var& p : parts) {
        expect_rank(p, 2, "concat_cols");
        require(p.value().dim(0) == m, ErrorCode::ShapeMismatch, "concat_cols rows");
        cols += p.value().dim(1);
        rg = rg || p.requires_grad();
        nodes.push_back(p.node());
    }
    Tensor out({m, cols});
    int c0 = 0;
    for (const Var& p : parts) {
        const int w = p.value().dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out.at(i, c0 + j) = p.value().at(i, j);
        c0 += w;
    }
    return graph_of(parts.front()).make(std::move(out), rg, [nodes, m](Node& self) {
        int c = 0;
        for (Node* nd : nodes) {
            const int w = nd->value.dim(1);
            if (nd->requires_grad) {
                Tensor& g = nd->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j) g.at(i, j) += self.grad.at(i, c + j);
            }
            c += w;
        }
    });
}

Var slice_cols(Var x, int begin, int end) {
    expect_rank(x, 2, "slice_cols");
    const int m = x.value().dim(0);
    require(0 <= begin && begin <= end && end <= x.value().dim(1), ErrorCode::ShapeMismatch, "slice_cols range");
    const int w = end - begin;
    Tensor out({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out.at(i, j) = x.value().at(i, begin + j);
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, begin, m, w](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) g.at(i, begin + j) += self.grad.at(i, j);
    });
}

Var transpose(Var x) {
    expect_rank(x, 2, "transpose");
    const int m = x.value().dim(0), n = x.value().dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = x.value().at(i, j);
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, m, n](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) g.at(i, j) += self.grad.at(j, i);
    });
}

Var reshape(Var x, std::vector<int> shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var conv2d(Var x, Var weight, Var bias, int stride, int pad) {
    expect_rank(x, 3, "conv2d");
    expect_rank(weight, 4, "conv2d");
    kernels::ConvGeometry geo;
    geo.in_channels = x.value().dim(0);
    geo.in_h = x.value().dim(1);
    geo.in_w = x.value().dim(2);
    geo.out_channels = weight.value().dim(0);
    geo.kernel = weight.value().dim(2);
    geo.stride = stride;
    geo.pad = pad;
    require(weight.value().dim(1) == geo.in_channels && weight.value().dim(3) == geo.kernel,
            ErrorCode::ShapeMismatch,
            "conv2d input " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()));
    require(geo.out_h() > 0 && geo.out_w() > 0, ErrorCode::ShapeMismatch, "conv2d output is empty");
    const bool has_bias = bias.valid();
    Tensor out({geo.out_channels, geo.out_h(), geo.out_w()});
    kernels::conv2d_forward(x.value().data.data(), weight.value().data.data(),
                            has_bias ? bias.value().data.data() : nullptr, out.data.data(), geo);
    Node* nx = x.node();
    Node* nw = weight.node();
    Node* nb = has_bias ? bias.node() : nullptr;
    const bool rg = any_grad({x, weight}) || (has_bias && bias.requires_grad());
    return graph_of(x).make(std::move(out), rg, [nx, nw, nb, geo](Node& self) {
        if (nx->requires_grad)
            kernels::conv2d_backward_input(self.grad.data.data(), nw->value.data.data(),
                                           nx->ensure_grad().data.data(), geo);
        const bool wb = nw->requires_grad;
        const bool bb = nb && nb->requires_grad;
        if (wb || bb) {
            Tensor scratch_w;
            double* gw = wb ? nw->ensure_grad().data.data() : (scratch_w = Tensor::zeros_like(nw->value)).data.data();
            kernels::conv2d_backward_weight(nx->value.data.data(), self.grad.data.data(), gw,
                                            bb ? nb->ensure_grad().data.data() : nullptr, geo);
        }
    });
}

Var conv_transpose2d(Var x, Var weight, Var bias) {
    expect_rank(x, 3, "conv_transpose2d");
    expect_rank(weight, 4, "conv_transpose2d");
    kernels::ConvGeometry geo;
    geo.in_channels = x.value().dim(0);
    geo.in_h = x.value().dim(1);
    geo.in_w = x.value().dim(2);
    geo.out_channels = weight.value().dim(1);
    geo.kernel = weight.value().dim(2);
    geo.stride = geo.kernel;
    require(weight.value().dim(0) == geo.in_channels && weight.value().dim(3) == geo.kernel,
            ErrorCode::ShapeMismatch,
            "conv_transpose2d input " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()));
    const bool has_bias = bias.valid();
    Tensor out({geo.out_channels, geo.in_h * geo.kernel, geo.in_w * geo.kernel});
    kernels::conv_transpose2d_forward(x.value().data.data(), weight.value().data.data(),
                                      has_bias ? bias.value().data.data() : nullptr, out.data.data(), geo);
    Node* nx = x.node();
    Node* nw = weight.node();
    Node* nb = has_bias ? bias.node() : nullptr;
    const bool rg = any_grad({x, weight}) || (has_bias && bias.requires_grad());
    return graph_of(x).make(std::move(out), rg, [nx, nw, nb, geo](Node& self) {
        if (nx->requires_grad)
            kernels::conv_transpose2d_backward_input(self.grad.data.data(), nw->value.data.data(),
                                                     nx->ensure_grad().data.data(), geo);
        const bool wb = nw->requires_grad;
        const bool bb = nb && nb->requires_grad;
        if (wb || bb) {
            Tensor scratch_w;
            double* gw = wb ? nw->ensure_grad().data.data() : (scratch_w = Tensor::zeros_like(nw->value)).data.data();
            kernels::conv_transpose2d_backward_weight(nx->value.data.data(), self.grad.data.data(), gw,
                                                      bb ? nb->ensure_grad().data.data() : nullptr, geo);
        }
    });
}

Var avg_pool(Var x, int factor) {
    expect_rank(x, 3, "avg_pool");
    const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
    require(factor >= 1 && h % factor == 0 && w % factor == 0, ErrorCode::ShapeMismatch, "avg_pool factor");
    const int oh = h / factor, ow = w / factor;
    const double inv = 1.0 / (factor * factor);
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.data[(static_cast<std::size_t>(ch) * oh + y / factor) * ow + xx / factor] +=
                    inv * x.value().data[(static_cast<std::size_t>(ch) * h + y) * w + xx];
    Node* nx = x.node();
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, c, h, w, oh, ow, factor, inv](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    g.data[(static_cast<std::size_t>(ch) * h + y) * w + xx] +=
                        inv * self.grad.data[(static_cast<std::size_t>(ch) * oh + y / factor) * ow + xx / factor];
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "concat_channels of nothing");
    const int h = parts.front().value().dim(1), w = parts.front().value().dim(2);
    int channels = 0;
    bool rg = false;
    std::vector<Node*> nodes;
    for (const Var& p : parts) {
        expect_rank(p, 3, "concat_channels");
        require(p.value().dim(1) == h && p.value().dim(2) == w, ErrorCode::ShapeMismatch, "concat_channels extent");
        channels += p.value().dim(0);
        rg = rg || p.requires_grad();
        nodes.push_back(p.node());
    }
    Tensor out({channels, h, w});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
    }
    return graph_of(parts.front()).make(std::move(out), rg, [nodes](Node& self) {
        std::size_t o = 0;
        for (Node* nd : nodes) {
            const std::size_t sz = nd->value.size();
            if (nd->requires_grad) {
                Tensor& g = nd->ensure_grad();
                for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[o + i];
            }
            o += sz;
        }
    });
}

Var cosine_similarity(Var x, const Tensor& refs) {
    expect_rank(x, 2, "cosine_similarity");
    require(refs.rank() == 2 && refs.dim(1) == x.value().dim(1), ErrorCode::ShapeMismatch,
            "cosine_similarity reference width");
    const int t = x.value().dim(0), d = x.value().dim(1), j = refs.dim(0);
    auto xnorm = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t));
    auto rnorm = std::make_shared<std::vector<double>>(static_cast<std::size_t>(j));
    for (int r = 0; r < j; ++r) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += refs.at(r, k) * refs.at(r, k);
        (*rnorm)[static_cast<std::size_t>(r)] = std::sqrt(s);
        require((*rnorm)[static_cast<std::size_t>(r)] >= 1e-12, ErrorCode::ZeroNormEmbedding,
                "zero-norm reference row " + std::to_string(r));
    }
    for (int i = 0; i < t; ++i) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += x.value().at(i, k) * x.value().at(i, k);
        (*xnorm)[static_cast<std::size_t>(i)] = std::sqrt(s);
        require((*xnorm)[static_cast<std::size_t>(i)] >= 1e-12, ErrorCode::ZeroNormEmbedding,
                "embedding cell " + std::to_string(i) + " has zero norm");
    }
    Tensor out({t, j});
    for (int i = 0; i < t; ++i)
        for (int r = 0; r < j; ++r) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += x.value().at(i, k) * refs.at(r, k);
            const double c = dot / ((*xnorm)[static_cast<std::size_t>(i)] * (*rnorm)[static_cast<std::size_t>(r)]);
            out.at(i, r) = std::clamp(c, -1.0, 1.0);
        }
    Node* nx = x.node();
    auto refs_copy = std::make_shared<Tensor>(refs);
    return graph_of(x).make(std::move(out), x.requires_grad(), [nx, refs_copy, xnorm, rnorm, t, d, j](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (int i = 0; i < t; ++i) {
            const double xn = (*xnorm)[static_cast<std::size_t>(i)];
            for (int r = 0; r < j; ++r) {
                const double gs = self.grad.at(i, r);
                if (gs == 0.0) continue;
                const double rn = (*rnorm)[static_cast<std::size_t>(r)];
                const double s = self.value.at(i, r);
                for (int k = 0; k < d; ++k)
                    g.at(i, k) += gs * (refs_copy->at(r, k) / (xn * rn) - s * nx->value.at(i, k) / (xn * xn));
            }
        }
    });
}

Var masked_average_pool(Var z, const std::vector<int>& labels, int classes) {
    expect_rank(z, 2, "masked_average_pool");
    const int t = z.value().dim(0), d = z.value().dim(1);
    require(static_cast<int>(labels.size()) == t, ErrorCode::ShapeMismatch, "masked_average_pool labels");
    auto counts = std::make_shared<std::vector<int>>(static_cast<std::size_t>(classes), 0);
    for (int l : labels) {
        require(0 <= l && l < classes, ErrorCode::InvalidArgument, "label out of range");
        ++(*counts)[static_cast<std::size_t>(l)];
    }
    Tensor out({classes, d});
    for (int i = 0; i < t; ++i)
        for (int k = 0; k < d; ++k) out.at(labels[static_cast<std::size_t>(i)], k) += z.value().at(i, k);
    for (int c = 0; c < classes; ++c) {
        const int n = (*counts)[static_cast<std::size_t>(c)];
        if (n == 0) continue;
        for (int k = 0; k < d; ++k) out.at(c, k) /= n;
    }
    Node* nz = z.node();
    auto lab = std::make_shared<std::vector<int>>(labels);
    return graph_of(z).make(std::move(out), z.requires_grad(), [nz, lab, counts, t, d](Node& self) {
        Tensor& g = nz->ensure_grad();
        for (int i = 0; i < t; ++i) {
            const int c = (*lab)[static_cast<std::size_t>(i)];
            const double inv = 1.0 / (*counts)[static_cast<std::size_t>(c)];
            for (int k = 0; k < d; ++k) g.at(i, k) += self.grad.at(c, k) * inv;
        }
    });
}

Var attention(Var q, Var k, Var v, int heads) {
    const int width = q.value().dim(1);
    require(heads >= 1 && width % heads == 0, ErrorCode::InvalidArgument, "attention heads must divide width");
    require(k.value().dim(1) == width && v.value().dim(1) == width, ErrorCode::ShapeMismatch, "attention widths");
    const int hd = width / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
        Var qh = heads == 1 ? q : slice_cols(q, h * hd, (h + 1) * hd);
        Var kh = heads == 1 ? k : slice_cols(k, h * hd, (h + 1) * hd);
        Var vh = heads == 1 ? v : slice_cols(v, h * hd, (h + 1) * hd);
        Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
        outs.push_back(matmul(weights, vh));
    }
    return heads == 1 ? outs.front() : concat_cols(outs);
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data) s += v;
    Node* nx = x.node();
    return graph_of(x).make(Tensor({1}, s), x.requires_grad(), [nx](Node& self) {
        Tensor& g = nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

} // namespace ops

} // namespace lsm
