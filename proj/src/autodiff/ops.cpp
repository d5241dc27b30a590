#include "cf3d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

#include "cf3d/errors.hpp"

namespace cf3d::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Buffer = std::shared_ptr<std::vector<double>>;

ConstMatMap cmat(const double* p, std::size_t rows, std::size_t cols) {
    return ConstMatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap mat(double* p, std::size_t rows, std::size_t cols) {
    return MatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(x.shape()));
}

std::vector<double>& grad_of(detail::Node& self, std::size_t input) { return self.inputs[input]->grad; }
const std::vector<double>& value_of(detail::Node& self, std::size_t input) { return self.inputs[input]->value; }
bool wants_grad(detail::Node& self, std::size_t input) { return self.inputs[input]->requires_grad; }

// ---- conv geometry ---------------------------------------------------------

struct ConvGeom {
    std::size_t n, h, w, cin, k, stride, ho, wo;
    std::ptrdiff_t pad_top, pad_left;
    std::size_t rows() const { return n * ho * wo; }
    std::size_t cols() const { return k * k * cin; }
};

ConvGeom make_geom(std::size_t n, std::size_t h, std::size_t w, std::size_t cin, std::size_t k, std::size_t stride,
                   Padding padding) {
    if (stride < 1) throw ConfigError("conv: stride must be >= 1");
    if (k < 1) throw ShapeError("conv: kernel size must be >= 1");
    ConvGeom g{n, h, w, cin, k, stride, 0, 0, 0, 0};
    if (padding == Padding::Same) {
        g.ho = (h + stride - 1) / stride;
        g.wo = (w + stride - 1) / stride;
        const std::size_t ph = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((g.ho - 1) * stride + k) -
                                                               static_cast<std::ptrdiff_t>(h));
        const std::size_t pw = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((g.wo - 1) * stride + k) -
                                                               static_cast<std::ptrdiff_t>(w));
        if (k > h + ph || k > w + pw) throw ShapeError("conv: kernel larger than padded input");
        g.pad_top = static_cast<std::ptrdiff_t>(ph / 2);
        g.pad_left = static_cast<std::ptrdiff_t>(pw / 2);
    } else {
        if (k > h || k > w)
            throw ShapeError("conv: kernel " + std::to_string(k) + " larger than input " + std::to_string(h) + "x" +
                             std::to_string(w));
        g.ho = (h - k) / stride + 1;
        g.wo = (w - k) / stride + 1;
    }
    return g;
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
    const std::size_t K = g.cols();
    const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
                double* row = cols + ((n * g.ho + oy) * g.wo + ox) * K;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
                        double* dst = row + (ky * g.k + kx) * g.cin;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                            std::fill(dst, dst + g.cin, 0.0);
                        } else {
                            const double* src = x + ((n * g.h + iy) * g.w + ix) * g.cin;
                            std::memcpy(dst, src, g.cin * sizeof(double));
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeom& g, double* x) {
    const std::size_t K = g.cols();
    const auto h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
                const double* row = cols + ((n * g.ho + oy) * g.wo + ox) * K;
                for (std::size_t ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
                    if (iy < 0 || iy >= h) continue;
                    for (std::size_t kx = 0; kx < g.k; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
                        if (ix < 0 || ix >= w) continue;
                        const double* src = row + (ky * g.k + kx) * g.cin;
                        double* dst = x + ((n * g.h + iy) * g.w + ix) * g.cin;
                        for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

void add_bias_rows(double* y, std::size_t rows, const Tensor& bias) {
    if (!bias.defined()) return;
    const auto b = bias.data();
    const std::size_t c = b.size();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) y[r * c + j] += b[j];
}

void accumulate_colsum(const std::vector<double>& g, std::size_t rows, std::vector<double>& out) {
    const std::size_t c = out.size();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) out[j] += g[r * c + j];
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels))
        throw ShapeError(std::string(op) + ": bias shape " + to_string(bias.shape()) + " does not match " +
                         std::to_string(channels) + " output channels");
}

// ---- broadcasting ----------------------------------------------------------

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;
};

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
    return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw ShapeError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
    BroadcastPlan p;
    p.out.resize(a.size());
    p.sa.resize(a.size());
    p.sb.resize(a.size());
    const auto sta = strides_of(a), stb = strides_of(b);
    for (std::size_t d = 0; d < a.size(); ++d) {
        if (a[d] != b[d] && a[d] != 1 && b[d] != 1)
            throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
        p.out[d] = std::max(a[d], b[d]);
        p.sa[d] = a[d] == 1 ? 0 : sta[d];
        p.sb[d] = b[d] == 1 ? 0 : stb[d];
    }
    return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t rank = p.out.size();
    const std::size_t total = numel(p.out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < total; ++o) {
        f(o, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += p.sa[d];
            ib += p.sb[d];
            if (idx[d] < p.out[d]) break;
            ia -= p.sa[d] * p.out[d];
            ib -= p.sb[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    const auto av = a.data(), bv = b.data();
    if (a.shape() == b.shape()) {
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            switch (op) {
                case BinOp::Add: out[i] = av[i] + bv[i]; break;
                case BinOp::Sub: out[i] = av[i] - bv[i]; break;
                case BinOp::Mul: out[i] = av[i] * bv[i]; break;
            }
        }
        return Tensor::make_result(a.shape(), std::move(out), name, {a, b}, [op](detail::Node& self) {
            const auto& g = self.grad;
            if (wants_grad(self, 0)) {
                auto& ga = grad_of(self, 0);
                if (op == BinOp::Mul) {
                    const auto& bv2 = value_of(self, 1);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
            }
            if (wants_grad(self, 1)) {
                auto& gb = grad_of(self, 1);
                if (op == BinOp::Mul) {
                    const auto& av2 = value_of(self, 0);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                } else if (op == BinOp::Sub) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                }
            }
        });
    }
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), name));
    std::vector<double> out(numel(plan->out));
    for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        switch (op) {
            case BinOp::Add: out[o] = av[ia] + bv[ib]; break;
            case BinOp::Sub: out[o] = av[ia] - bv[ib]; break;
            case BinOp::Mul: out[o] = av[ia] * bv[ib]; break;
        }
    });
    return Tensor::make_result(plan->out, std::move(out), name, {a, b}, [op, plan](detail::Node& self) {
        const auto& g = self.grad;
        const bool ga_on = wants_grad(self, 0), gb_on = wants_grad(self, 1);
        const auto& av2 = value_of(self, 0);
        const auto& bv2 = value_of(self, 1);
        std::vector<double>* ga = ga_on ? &grad_of(self, 0) : nullptr;
        std::vector<double>* gb = gb_on ? &grad_of(self, 1) : nullptr;
        for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            switch (op) {
                case BinOp::Add:
                    if (ga) (*ga)[ia] += g[o];
                    if (gb) (*gb)[ib] += g[o];
                    break;
                case BinOp::Sub:
                    if (ga) (*ga)[ia] += g[o];
                    if (gb) (*gb)[ib] -= g[o];
                    break;
                case BinOp::Mul:
                    if (ga) (*ga)[ia] += g[o] * bv2[ib];
                    if (gb) (*gb)[ib] += g[o] * av2[ia];
                    break;
            }
        });
    });
}

}  // namespace

// ---- convolution -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride, Padding padding) {
    require_rank(x, 4, "conv2d");
    require_rank(kernel, 4, "conv2d kernel");
    const std::size_t k = kernel.dim(0);
    if (kernel.dim(1) != k) throw ShapeError("conv2d: kernel must be square, got " + to_string(kernel.shape()));
    if (kernel.dim(2) != x.dim(3))
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(3)) + " channels but kernel expects " +
                         std::to_string(kernel.dim(2)));
    const std::size_t cout = kernel.dim(3);
    check_bias(bias, cout, "conv2d");
    const ConvGeom g = make_geom(x.dim(0), x.dim(1), x.dim(2), x.dim(3), k, stride, padding);

    auto cols = std::make_shared<std::vector<double>>(g.rows() * g.cols());
    im2col(x.data().data(), g, cols->data());
    std::vector<double> y(g.rows() * cout);
    mat(y.data(), g.rows(), cout).noalias() = cmat(cols->data(), g.rows(), g.cols()) *
                                              cmat(kernel.data().data(), g.cols(), cout);
    add_bias_rows(y.data(), g.rows(), bias);

    std::vector<Tensor> inputs{x, kernel};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return Tensor::make_result({g.n, g.ho, g.wo, cout}, std::move(y), "conv2d", std::move(inputs),
                               [g, cout, cols, has_bias](detail::Node& self) {
                                   const auto& dy = self.grad;
                                   const auto dY = cmat(dy.data(), g.rows(), cout);
                                   if (wants_grad(self, 1)) {
                                       mat(grad_of(self, 1).data(), g.cols(), cout).noalias() +=
                                           cmat(cols->data(), g.rows(), g.cols()).transpose() * dY;
                                   }
                                   if (has_bias && wants_grad(self, 2))
                                       accumulate_colsum(dy, g.rows(), grad_of(self, 2));
                                   if (wants_grad(self, 0)) {
                                       std::vector<double> dcols(g.rows() * g.cols());
                                       mat(dcols.data(), g.rows(), g.cols()).noalias() =
                                           dY * cmat(value_of(self, 1).data(), g.cols(), cout).transpose();
                                       col2im_add(dcols.data(), g, grad_of(self, 0).data());
                                   }
                               });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
    require_rank(x, 4, "conv_transpose2d");
    require_rank(kernel, 4, "conv_transpose2d kernel");
    const std::size_t k = kernel.dim(0);
    if (kernel.dim(1) != k) throw ShapeError("conv_transpose2d: kernel must be square");
    if (kernel.dim(3) != x.dim(3))
        throw ShapeError("conv_transpose2d: input has " + std::to_string(x.dim(3)) + " channels but kernel expects " +
                         std::to_string(kernel.dim(3)));
    const std::size_t cin = x.dim(3), cout = kernel.dim(2);
    check_bias(bias, cout, "conv_transpose2d");
    // Geometry of the forward (adjoint) conv: big [n, h*s, w*s, cout] -> small [n, h, w, cin].
    const ConvGeom g = make_geom(x.dim(0), x.dim(1) * stride, x.dim(2) * stride, cout, k, stride, Padding::Same);
    const std::size_t rows = g.rows();  // = n*h*w

    std::vector<double> cols(rows * g.cols());
    mat(cols.data(), rows, g.cols()).noalias() =
        cmat(x.data().data(), rows, cin) * cmat(kernel.data().data(), g.cols(), cin).transpose();
    std::vector<double> y(g.n * g.h * g.w * cout, 0.0);
    col2im_add(cols.data(), g, y.data());
    add_bias_rows(y.data(), g.n * g.h * g.w, bias);

    std::vector<Tensor> inputs{x, kernel};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return Tensor::make_result({g.n, g.h, g.w, cout}, std::move(y), "conv_transpose2d", std::move(inputs),
                               [g, cin, cout, rows, has_bias](detail::Node& self) {
                                   const auto& dy = self.grad;
                                   std::vector<double> dcols(rows * g.cols());
                                   im2col(dy.data(), g, dcols.data());
                                   const auto dC = cmat(dcols.data(), rows, g.cols());
                                   if (wants_grad(self, 1)) {
                                       mat(grad_of(self, 1).data(), g.cols(), cin).noalias() +=
                                           dC.transpose() * cmat(value_of(self, 0).data(), rows, cin);
                                   }
                                   if (has_bias && wants_grad(self, 2))
                                       accumulate_colsum(dy, g.n * g.h * g.w, grad_of(self, 2));
                                   if (wants_grad(self, 0)) {
                                       mat(grad_of(self, 0).data(), rows, cin).noalias() +=
                                           dC * cmat(value_of(self, 1).data(), g.cols(), cin);
                                   }
                                   (void)cout;
                               });
}

// ---- dense -----------------------------------------------------------------

Tensor dense(const Tensor& x, const Tensor& W, const Tensor& b) {
    require_rank(W, 2, "dense weight");
    const std::size_t n_in = W.dim(0), n_out = W.dim(1);
    std::size_t batch = 1;
    Shape out_shape;
    if (x.rank() == 1) {
        out_shape = {n_out};
    } else if (x.rank() == 2) {
        batch = x.dim(0);
        out_shape = {batch, n_out};
    } else {
        throw ShapeError("dense: input must be rank 1 or 2, got " + to_string(x.shape()));
    }
    if (x.shape().back() != n_in)
        throw ShapeError("dense: input width " + std::to_string(x.shape().back()) + " does not match weight " +
                         to_string(W.shape()));
    check_bias(b, n_out, "dense");
    std::vector<double> y(batch * n_out);
    mat(y.data(), batch, n_out).noalias() = cmat(x.data().data(), batch, n_in) * cmat(W.data().data(), n_in, n_out);
    add_bias_rows(y.data(), batch, b);
    std::vector<Tensor> inputs{x, W};
    if (b.defined()) inputs.push_back(b);
    const bool has_bias = b.defined();
    return Tensor::make_result(std::move(out_shape), std::move(y), "dense", std::move(inputs),
                               [batch, n_in, n_out, has_bias](detail::Node& self) {
                                   const auto dY = cmat(self.grad.data(), batch, n_out);
                                   if (wants_grad(self, 1))
                                       mat(grad_of(self, 1).data(), n_in, n_out).noalias() +=
                                           cmat(value_of(self, 0).data(), batch, n_in).transpose() * dY;
                                   if (has_bias && wants_grad(self, 2)) accumulate_colsum(self.grad, batch, grad_of(self, 2));
                                   if (wants_grad(self, 0))
                                       mat(grad_of(self, 0).data(), batch, n_in).noalias() +=
                                           dY * cmat(value_of(self, 1).data(), n_in, n_out).transpose();
                               });
}

// ---- activations -----------------------------------------------------------

Tensor relu(const Tensor& x) {
    const auto v = x.data();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] > 0.0 ? v[i] : 0.0;
    return Tensor::make_result(x.shape(), std::move(y), "relu", {x}, [](detail::Node& self) {
        const auto& xv = value_of(self, 0);
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0.0) gx[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    const auto v = x.data();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] >= 0.0) {
            y[i] = 1.0 / (1.0 + std::exp(-v[i]));
        } else {
            const double e = std::exp(v[i]);
            y[i] = e / (1.0 + e);
        }
    }
    return Tensor::make_result(x.shape(), std::move(y), "sigmoid", {x}, [](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = self.value[i];
            gx[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

// ---- batch norm ------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, Mode mode, const BatchNormOptions& opts) {
    require_rank(x, 4, "batchnorm2d");
    const std::size_t c = x.dim(3);
    for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)}) {
        if (t->rank() != 1 || t->dim(0) != c)
            throw ShapeError("batchnorm2d: parameter shape " + to_string(t->shape()) + " does not match " +
                             std::to_string(c) + " channels");
    }
    const std::size_t m = x.numel() / c;
    const auto xv = x.data();
    const auto gv = gamma.data(), bv = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    std::vector<double> y(xv.size());

    if (mode == Mode::Train) {
        if (x.dim(0) < 2) throw ConfigError("batchnorm2d: train mode needs batch >= 2, got " + std::to_string(x.dim(0)));
        std::vector<double> mu(c, 0.0), var(c, 0.0);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
        for (auto& v : mu) v /= static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = xv[r * c + j] - mu[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(m);
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
        for (std::size_t j = 0; j < c; ++j) {
            (*inv_std)[j] = 1.0 / std::sqrt(var[j] + opts.eps);
            rm[j] = (1.0 - opts.momentum) * rm[j] + opts.momentum * mu[j];
            rv[j] = (1.0 - opts.momentum) * rv[j] + opts.momentum * var[j] * unbias;
        }
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t i = r * c + j;
                (*xhat)[i] = (xv[i] - mu[j]) * (*inv_std)[j];
                y[i] = gv[j] * (*xhat)[i] + bv[j];
            }
    } else {
        const auto rm = running_mean.data();
        const auto rv = running_var.data();
        for (std::size_t j = 0; j < c; ++j) (*inv_std)[j] = 1.0 / std::sqrt(rv[j] + opts.eps);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t i = r * c + j;
                (*xhat)[i] = (xv[i] - rm[j]) * (*inv_std)[j];
                y[i] = gv[j] * (*xhat)[i] + bv[j];
            }
    }

    const bool train = mode == Mode::Train;
    return Tensor::make_result(x.shape(), std::move(y), "batchnorm2d", {x, gamma, beta},
                               [c, m, xhat, inv_std, train](detail::Node& self) {
                                   const auto& dy = self.grad;
                                   const auto& gv2 = value_of(self, 1);
                                   std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                                   for (std::size_t r = 0; r < m; ++r)
                                       for (std::size_t j = 0; j < c; ++j) {
                                           const std::size_t i = r * c + j;
                                           sum_dy[j] += dy[i];
                                           sum_dy_xhat[j] += dy[i] * (*xhat)[i];
                                       }
                                   if (wants_grad(self, 1)) {
                                       auto& gg = grad_of(self, 1);
                                       for (std::size_t j = 0; j < c; ++j) gg[j] += sum_dy_xhat[j];
                                   }
                                   if (wants_grad(self, 2)) {
                                       auto& gb = grad_of(self, 2);
                                       for (std::size_t j = 0; j < c; ++j) gb[j] += sum_dy[j];
                                   }
                                   if (wants_grad(self, 0)) {
                                       auto& gx = grad_of(self, 0);
                                       const double md = static_cast<double>(m);
                                       for (std::size_t r = 0; r < m; ++r)
                                           for (std::size_t j = 0; j < c; ++j) {
                                               const std::size_t i = r * c + j;
                                               const double scale_j = gv2[j] * (*inv_std)[j];
                                               if (train) {
                                                   gx[i] += scale_j / md *
                                                            (md * dy[i] - sum_dy[j] - (*xhat)[i] * sum_dy_xhat[j]);
                                               } else {
                                                   gx[i] += scale_j * dy[i];
                                               }
                                           }
                                   }
                               });
}

// ---- pooling ---------------------------------------------------------------

Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride) {
    require_rank(x, 4, "pool2d");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (k < 1 || stride < 1) throw ConfigError("pool2d: window and stride must be >= 1");
    if (k > h || k > w)
        throw ShapeError("pool2d: window " + std::to_string(k) + " larger than input " + to_string(x.shape()));
    const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    const auto xv = x.data();
    std::vector<double> y(n * ho * wo * c);
    auto argmax = std::make_shared<std::vector<std::size_t>>(kind == PoolKind::Max ? y.size() : 0);
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t o = ((b * ho + oy) * wo + ox) * c + ch;
                    double acc = kind == PoolKind::Max ? -std::numeric_limits<double>::infinity() : 0.0;
                    std::size_t best = 0;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::size_t i = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if (kind == PoolKind::Max) {
                                if (xv[i] > acc) {
                                    acc = xv[i];
                                    best = i;
                                }
                            } else {
                                acc += xv[i];
                            }
                        }
                    if (kind == PoolKind::Max) {
                        y[o] = acc;
                        (*argmax)[o] = best;
                    } else {
                        y[o] = acc * inv;
                    }
                }
    return Tensor::make_result({n, ho, wo, c}, std::move(y), kind == PoolKind::Max ? "max_pool2d" : "avg_pool2d", {x},
                               [=](detail::Node& self) {
                                   auto& gx = grad_of(self, 0);
                                   const auto& g = self.grad;
                                   if (kind == PoolKind::Max) {
                                       for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                                       return;
                                   }
                                   for (std::size_t b = 0; b < n; ++b)
                                       for (std::size_t oy = 0; oy < ho; ++oy)
                                           for (std::size_t ox = 0; ox < wo; ++ox)
                                               for (std::size_t ch = 0; ch < c; ++ch) {
                                                   const double go = g[((b * ho + oy) * wo + ox) * c + ch] * inv;
                                                   for (std::size_t ky = 0; ky < k; ++ky)
                                                       for (std::size_t kx = 0; kx < k; ++kx)
                                                           gx[((b * h + oy * stride + ky) * w + ox * stride + kx) * c +
                                                              ch] += go;
                                               }
                               });
}

Tensor global_pool_channel(const Tensor& x, PoolKind kind) {
    require_rank(x, 4, "global_pool_channel");
    const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
    const auto xv = x.data();
    std::vector<double> y(n * c, kind == PoolKind::Max ? -std::numeric_limits<double>::infinity() : 0.0);
    auto argmax = std::make_shared<std::vector<std::size_t>>(kind == PoolKind::Max ? n * c : 0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t i = (b * hw + p) * c + ch;
                const std::size_t o = b * c + ch;
                if (kind == PoolKind::Max) {
                    if (xv[i] > y[o]) {
                        y[o] = xv[i];
                        (*argmax)[o] = i;
                    }
                } else {
                    y[o] += xv[i];
                }
            }
    if (kind == PoolKind::Avg)
        for (auto& v : y) v /= static_cast<double>(hw);
    return Tensor::make_result({n, 1, 1, c}, std::move(y),
                               kind == PoolKind::Max ? "global_max_channel" : "global_avg_channel", {x},
                               [=](detail::Node& self) {
                                   auto& gx = grad_of(self, 0);
                                   const auto& g = self.grad;
                                   if (kind == PoolKind::Max) {
                                       for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                                       return;
                                   }
                                   const double inv = 1.0 / static_cast<double>(hw);
                                   for (std::size_t b = 0; b < n; ++b)
                                       for (std::size_t p = 0; p < hw; ++p)
                                           for (std::size_t ch = 0; ch < c; ++ch)
                                               gx[(b * hw + p) * c + ch] += g[b * c + ch] * inv;
                               });
}

Tensor global_pool_pixel(const Tensor& x, PoolKind kind) {
    require_rank(x, 4, "global_pool_pixel");
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const std::size_t pixels = n * h * w;
    const auto xv = x.data();
    std::vector<double> y(pixels);
    auto argmax = std::make_shared<std::vector<std::size_t>>(kind == PoolKind::Max ? pixels : 0);
    for (std::size_t p = 0; p < pixels; ++p) {
        const double* row = xv.data() + p * c;
        if (kind == PoolKind::Max) {
            std::size_t best = 0;
            for (std::size_t ch = 1; ch < c; ++ch)
                if (row[ch] > row[best]) best = ch;
            y[p] = row[best];
            (*argmax)[p] = p * c + best;
        } else {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) acc += row[ch];
            y[p] = acc / static_cast<double>(c);
        }
    }
    return Tensor::make_result({n, h, w, 1}, std::move(y), kind == PoolKind::Max ? "global_max_pixel" : "global_avg_pixel",
                               {x}, [=](detail::Node& self) {
                                   auto& gx = grad_of(self, 0);
                                   const auto& g = self.grad;
                                   if (kind == PoolKind::Max) {
                                       for (std::size_t p = 0; p < pixels; ++p) gx[(*argmax)[p]] += g[p];
                                       return;
                                   }
                                   const double inv = 1.0 / static_cast<double>(c);
                                   for (std::size_t p = 0; p < pixels; ++p)
                                       for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += g[p] * inv;
                               });
}

// ---- elementwise / structural ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor hadamard(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "hadamard"); }

Tensor scale(const Tensor& x, double factor) {
    const auto v = x.data();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] * factor;
    return Tensor::make_result(x.shape(), std::move(y), "scale", {x}, [factor](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& x, double value) {
    const auto v = x.data();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] + value;
    return Tensor::make_result(x.shape(), std::move(y), "add_scalar", {x}, [](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    if (x.rank() != shape.size())
        throw ShapeError("broadcast_to: rank mismatch " + to_string(x.shape()) + " -> " + to_string(shape));
    for (std::size_t d = 0; d < shape.size(); ++d)
        if (x.dim(d) != shape[d] && x.dim(d) != 1)
            throw ShapeError("broadcast_to: cannot expand " + to_string(x.shape()) + " to " + to_string(shape));
    return add(x, Tensor::zeros(shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
    Shape out = ref;
    out[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < ref.size(); ++d)
            if (d != axis && p.dim(d) != ref[d])
                throw ShapeError("concat: incompatible shapes " + to_string(ref) + " and " + to_string(p.shape()));
        out[axis] += p.dim(axis);
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
    auto widths = std::make_shared<std::vector<std::size_t>>();
    for (const auto& p : parts) widths->push_back(p.dim(axis) * inner);
    const std::size_t row = out[axis] * inner;

    std::vector<double> y(numel(out));
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto v = parts[pi].data();
        const std::size_t wdt = (*widths)[pi];
        for (std::size_t o = 0; o < outer; ++o) std::memcpy(y.data() + o * row + offset, v.data() + o * wdt, wdt * sizeof(double));
        offset += wdt;
    }
    return Tensor::make_result(std::move(out), std::move(y), "concat", parts, [outer, row, widths](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < widths->size(); ++pi) {
            const std::size_t wdt = (*widths)[pi];
            if (wants_grad(self, pi)) {
                auto& gp = grad_of(self, pi);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < wdt; ++j) gp[o * wdt + j] += self.grad[o * row + off + j];
            }
            off += wdt;
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    std::vector<double> y(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(y), "reshape", {x}, [](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor flatten(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
    const std::size_t n = x.dim(0);
    return reshape(x, {n, n == 0 ? 0 : x.numel() / n});
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + to_string(x.shape()));
    if (start + length > x.dim(axis)) throw ShapeError("slice: range exceeds axis extent in " + to_string(x.shape()));
    Shape out = x.shape();
    out[axis] = length;
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    const std::size_t src_row = x.dim(axis) * inner, dst_row = length * inner, off = start * inner;
    const auto v = x.data();
    std::vector<double> y(numel(out));
    for (std::size_t o = 0; o < outer; ++o)
        std::memcpy(y.data() + o * dst_row, v.data() + o * src_row + off, dst_row * sizeof(double));
    return Tensor::make_result(std::move(out), std::move(y), "slice", {x}, [=](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < dst_row; ++j) gx[o * src_row + off + j] += self.grad[o * dst_row + j];
    });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, Mode mode) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::Eval || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    const auto v = x.data();
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        y[i] = v[i] * (*mask)[i];
    }
    return Tensor::make_result(x.shape(), std::move(y), "dropout", {x}, [mask](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
    });
}

// ---- reductions and losses -------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::make_result({1}, {s}, "sum", {x}, [](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        for (auto& g : gx) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor frobenius_norm(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    const double norm = std::sqrt(s);
    return Tensor::make_result({1}, {norm}, "frobenius_norm", {x}, [norm](detail::Node& self) {
        if (norm == 0.0) return;
        auto& gx = grad_of(self, 0);
        const auto& xv = value_of(self, 0);
        const double f = self.grad[0] / norm;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += f * xv[i];
    });
}

Tensor frobenius_norm_rows(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("frobenius_norm_rows: rank-0 tensor");
    const std::size_t n = x.dim(0);
    const std::size_t len = n == 0 ? 0 : x.numel() / n;
    const auto xv = x.data();
    std::vector<double> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += xv[r * len + j] * xv[r * len + j];
        norms[r] = std::sqrt(s);
    }
    return Tensor::make_result({n}, std::move(norms), "frobenius_norm_rows", {x}, [n, len](detail::Node& self) {
        auto& gx = grad_of(self, 0);
        const auto& xv2 = value_of(self, 0);
        for (std::size_t r = 0; r < n; ++r) {
            if (self.value[r] == 0.0) continue;
            const double f = self.grad[r] / self.value[r];
            for (std::size_t j = 0; j < len; ++j) gx[r * len + j] += f * xv2[r * len + j];
        }
    });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("mse: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    if (pred.numel() == 0) throw ShapeError("mse: empty tensors");
    const auto p = pred.data(), t = target.data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    const double inv = 1.0 / static_cast<double>(p.size());
    return Tensor::make_result({1}, {s * inv}, "mse", {pred, target}, [inv](detail::Node& self) {
        const auto& pv = value_of(self, 0);
        const auto& tv = value_of(self, 1);
        const double g = self.grad[0] * 2.0 * inv;
        if (wants_grad(self, 0)) {
            auto& gp = grad_of(self, 0);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (pv[i] - tv[i]);
        }
        if (wants_grad(self, 1)) {
            auto& gt = grad_of(self, 1);
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (pv[i] - tv[i]);
        }
    });
}

Tensor adjusted_cosine_rows(const Tensor& a, const Tensor& b, std::size_t* degenerate) {
    if (a.shape() != b.shape())
        throw ShapeError("adjusted_cosine_rows: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.rank() < 1) throw ShapeError("adjusted_cosine_rows: rank-0 tensor");
    const std::size_t n = a.dim(0);
    const std::size_t len = n == 0 ? 0 : a.numel() / n;
    if (len < 2) throw ShapeError("adjusted_cosine_rows: rows need at least 2 elements");
    const auto av = a.data(), bv = b.data();
    // Per row: centred vectors, their norms, and the similarity.
    auto da = std::make_shared<std::vector<double>>(a.numel());
    auto db = std::make_shared<std::vector<double>>(b.numel());
    auto saa = std::make_shared<std::vector<double>>(n);
    auto sbb = std::make_shared<std::vector<double>>(n);
    auto raw = std::make_shared<std::vector<double>>(n);
    std::vector<double> out(n, 0.0);
    std::size_t degenerate_rows = 0;
    for (std::size_t r = 0; r < n; ++r) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            ma += av[r * len + j];
            mb += bv[r * len + j];
        }
        ma /= static_cast<double>(len);
        mb /= static_cast<double>(len);
        double sab = 0.0, s_aa = 0.0, s_bb = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t i = r * len + j;
            (*da)[i] = av[i] - ma;
            (*db)[i] = bv[i] - mb;
            sab += (*da)[i] * (*db)[i];
            s_aa += (*da)[i] * (*da)[i];
            s_bb += (*db)[i] * (*db)[i];
        }
        (*saa)[r] = s_aa;
        (*sbb)[r] = s_bb;
        if (s_aa <= 1e-300 || s_bb <= 1e-300) {
            ++degenerate_rows;
            (*raw)[r] = 0.0;
            continue;
        }
        (*raw)[r] = sab / (std::sqrt(s_aa) * std::sqrt(s_bb));
        out[r] = std::clamp((*raw)[r], -1.0, 1.0);
    }
    if (degenerate) *degenerate = degenerate_rows;
    return Tensor::make_result({n}, std::move(out), "adjusted_cosine_rows", {a, b},
                               [=](detail::Node& self) {
                                   for (std::size_t r = 0; r < n; ++r) {
                                       const double s_aa = (*saa)[r], s_bb = (*sbb)[r];
                                       if (s_aa <= 1e-300 || s_bb <= 1e-300) continue;
                                       const double g = self.grad[r];
                                       const double inv_ab = 1.0 / (std::sqrt(s_aa) * std::sqrt(s_bb));
                                       const double rr = (*raw)[r];
                                       if (wants_grad(self, 0)) {
                                           auto& ga = grad_of(self, 0);
                                           for (std::size_t j = 0; j < len; ++j) {
                                               const std::size_t i = r * len + j;
                                               ga[i] += g * ((*db)[i] * inv_ab - rr * (*da)[i] / s_aa);
                                           }
                                       }
                                       if (wants_grad(self, 1)) {
                                           auto& gb = grad_of(self, 1);
                                           for (std::size_t j = 0; j < len; ++j) {
                                               const std::size_t i = r * len + j;
                                               gb[i] += g * ((*da)[i] * inv_ab - rr * (*db)[i] / s_bb);
                                           }
                                       }
                                   }
                               });
}

}  // namespace cf3d::ad
