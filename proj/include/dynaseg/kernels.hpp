#pragma once

// Forward/backward kernels for the layers of the segmentation network and the
// SGD update. All kernels are pure functions of their arguments and use a fixed
// reduction order, so identical inputs give bit-identical outputs.

#include <dynaseg/error.hpp>
#include <dynaseg/tensor.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace dynaseg {

/// Square odd-sized convolution filter bank, weights laid out [C_out, C_in, K, K].
struct ConvParams
{
    Tensor weights;
    Tensor bias;

    std::size_t out_channels() const { return weights.dim(0); }
    std::size_t in_channels() const { return weights.dim(1); }
    std::size_t kernel_size() const { return weights.dim(2); }

    static ConvParams zeros(std::size_t out_channels, std::size_t in_channels, std::size_t kernel)
    {
        return {Tensor({out_channels, in_channels, kernel, kernel}), Tensor({out_channels})};
    }

    friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct BnParams
{
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    std::size_t channels() const { return gamma.size(); }

    static BnParams identity(std::size_t channels, double eps = 1e-5)
    {
        return {Tensor({channels}, 1.0), Tensor({channels}, 0.0), eps};
    }

    friend bool operator==(const BnParams&, const BnParams&) = default;
};

struct ConvGrads
{
    Tensor input;
    ConvParams params;
};

struct BnCache
{
    Tensor normalized; // (x - mean) / sqrt(var + eps), shape [C, H, W]
    std::vector<double> mean;
    std::vector<double> var;
};

struct BnForward
{
    Tensor output;
    BnCache cache;
};

struct BnGrads
{
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

struct CrossEntropy
{
    double loss = 0.0;
    Tensor grad;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline void check_conv_params(const ConvParams& params)
{
    require(params.weights.rank() == 4, "conv weights must have rank 4");
    const std::size_t k = params.weights.dim(2);
    require(k == params.weights.dim(3) && k % 2 == 1, "conv kernel must be square with odd extent");
    require(params.bias.rank() == 1 && params.bias.size() == params.out_channels(),
            "conv bias length must equal the output channel count");
}

inline void check_chw(const Tensor& t, const char* what)
{
    require(t.rank() == 3, std::string(what) + " must have shape [C, H, W]");
    require(t.dim(1) >= 1 && t.dim(2) >= 1, std::string(what) + " must have H, W >= 1");
}

// Unfolds a [C, H, W] input into a [C*K*K, H*W] patch matrix with zero padding K/2.
inline RowMatrix im2col(const Tensor& input, std::size_t k)
{
    const std::size_t channels = input.dim(0), h = input.dim(1), w = input.dim(2);
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    RowMatrix cols(static_cast<Eigen::Index>(channels * k * k), static_cast<Eigen::Index>(h * w));
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = cols.data() + ((c * k + ky) * k + kx) * h * w;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
                        const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
                                            sx < static_cast<std::ptrdiff_t>(w);
                        row[y * w + x] = inside ? input.at(c, static_cast<std::size_t>(sy),
                                                           static_cast<std::size_t>(sx))
                                                : 0.0;
                    }
                }
            }
    return cols;
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the input grid.
inline Tensor col2im(const RowMatrix& cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k)
{
    Tensor out({channels, h, w});
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* row = cols.data() + ((c * k + ky) * k + kx) * h * w;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h))
                        continue;
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w))
                            continue;
                        out.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) += row[y * w + x];
                    }
                }
            }
    return out;
}

} // namespace detail

/// Stride-1 convolution with zero padding K/2, so the output keeps the input's H and W.
inline Tensor conv2d_forward(const Tensor& input, const ConvParams& params)
{
    detail::check_conv_params(params);
    detail::check_chw(input, "conv input");
    detail::require(input.dim(0) == params.in_channels(), "conv input channels " + std::to_string(input.dim(0)) +
                                                              " do not match weights " +
                                                              shape_string(params.weights.shape()));

    const std::size_t h = input.dim(1), w = input.dim(2), k = params.kernel_size();
    const auto out_c = static_cast<Eigen::Index>(params.out_channels());
    const auto pixels = static_cast<Eigen::Index>(h * w);
    const auto patch = static_cast<Eigen::Index>(params.in_channels() * k * k);

    Tensor out({params.out_channels(), h, w});
    detail::MatrixMap out_m(out.raw(), out_c, pixels);
    detail::ConstMatrixMap weights(params.weights.raw(), out_c, patch);
    if (k == 1) {
        out_m.noalias() = weights * detail::ConstMatrixMap(input.raw(), patch, pixels);
    } else {
        const detail::RowMatrix cols = detail::im2col(input, k);
        out_m.noalias() = weights * cols;
    }
    for (Eigen::Index o = 0; o < out_c; ++o)
        out_m.row(o).array() += params.bias[static_cast<std::size_t>(o)];
    return out;
}

/// Exact gradients of conv2d_forward with respect to its input, weights and bias.
inline ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params, const Tensor& grad_out)
{
    detail::check_conv_params(params);
    detail::check_chw(input, "conv input");
    detail::require(input.dim(0) == params.in_channels(), "conv input channels do not match weights");
    detail::require(grad_out.shape() == Tensor::Shape{params.out_channels(), input.dim(1), input.dim(2)},
                    "conv grad_out shape " + shape_string(grad_out.shape()) +
                        " does not match the forward output shape");

    const std::size_t h = input.dim(1), w = input.dim(2), k = params.kernel_size();
    const auto out_c = static_cast<Eigen::Index>(params.out_channels());
    const auto pixels = static_cast<Eigen::Index>(h * w);
    const auto patch = static_cast<Eigen::Index>(params.in_channels() * k * k);

    ConvGrads grads{Tensor(input.shape()), ConvParams::zeros(params.out_channels(), params.in_channels(), k)};
    detail::ConstMatrixMap g(grad_out.raw(), out_c, pixels);
    detail::ConstMatrixMap weights(params.weights.raw(), out_c, patch);
    detail::MatrixMap grad_w(grads.params.weights.raw(), out_c, patch);

    for (Eigen::Index o = 0; o < out_c; ++o) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < pixels; ++i)
            sum += g(o, i);
        grads.params.bias[static_cast<std::size_t>(o)] = sum;
    }

    if (k == 1) {
        detail::ConstMatrixMap in_m(input.raw(), patch, pixels);
        grad_w.noalias() = g * in_m.transpose();
        detail::MatrixMap(grads.input.raw(), patch, pixels).noalias() = weights.transpose() * g;
    } else {
        const detail::RowMatrix cols = detail::im2col(input, k);
        grad_w.noalias() = g * cols.transpose();
        const detail::RowMatrix grad_cols = weights.transpose() * g;
        grads.input = detail::col2im(grad_cols, params.in_channels(), h, w, k);
    }
    return grads;
}

inline Tensor relu(const Tensor& input)
{
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

/// Subgradient at 0 is taken as 0.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out)
{
    detail::require(input.shape() == grad_out.shape(), "relu grad_out shape does not match input");
    Tensor grad(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        grad[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
    return grad;
}

/// Per-channel normalization over all H*W positions using the biased variance.
inline BnForward batchnorm_forward(const Tensor& input, const BnParams& params)
{
    detail::check_chw(input, "batchnorm input");
    const std::size_t channels = input.dim(0), n = input.dim(1) * input.dim(2);
    detail::require(params.gamma.size() == channels && params.beta.size() == channels,
                    "batchnorm parameters do not match the channel count");
    detail::require(params.eps > 0.0, "batchnorm eps must be positive");
    if (n < 2)
        throw DegenerateInput("batchnorm needs at least two spatial positions per channel");

    BnForward result{Tensor(input.shape()), BnCache{Tensor(input.shape()), std::vector<double>(channels),
                                                    std::vector<double>(channels)}};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* x = input.raw() + c * n;
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sum += x[i];
        double mean = sum * inv_n;
        // one correction pass so a constant channel gets its exact value as mean
        double residual = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            residual += x[i] - mean;
        mean += residual * inv_n;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sq += (x[i] - mean) * (x[i] - mean);
        const double var = sq * inv_n;
        const double inv_std = 1.0 / std::sqrt(var + params.eps);

        double* xhat = result.cache.normalized.raw() + c * n;
        double* y = result.output.raw() + c * n;
        const double gamma = params.gamma[c], beta = params.beta[c];
        for (std::size_t i = 0; i < n; ++i) {
            xhat[i] = (x[i] - mean) * inv_std;
            y[i] = gamma * xhat[i] + beta;
        }
        result.cache.mean[c] = mean;
        result.cache.var[c] = var;
    }
    return result;
}

inline BnGrads batchnorm_backward(const BnCache& cache, const BnParams& params, const Tensor& grad_out)
{
    detail::require(cache.normalized.rank() == 3, "batchnorm cache is empty or malformed");
    const std::size_t channels = cache.normalized.dim(0);
    const std::size_t n = cache.normalized.dim(1) * cache.normalized.dim(2);
    detail::require(grad_out.shape() == cache.normalized.shape(),
                    "batchnorm grad_out shape " + shape_string(grad_out.shape()) + " does not match cache " +
                        shape_string(cache.normalized.shape()));
    detail::require(cache.var.size() == channels && params.gamma.size() == channels,
                    "batchnorm cache does not match parameters");

    BnGrads grads{Tensor(grad_out.shape()), Tensor({channels}), Tensor({channels})};
    const double nd = static_cast<double>(n);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* dy = grad_out.raw() + c * n;
        const double* xhat = cache.normalized.raw() + c * n;
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat[i];
        }
        grads.beta[c] = sum_dy;
        grads.gamma[c] = sum_dy_xhat;

        const double scale = params.gamma[c] / (std::sqrt(cache.var[c] + params.eps) * nd);
        double* dx = grads.input.raw() + c * n;
        for (std::size_t i = 0; i < n; ++i)
            dx[i] = scale * (nd * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
    }
    return grads;
}

/// Mean per-pixel cross-entropy of softmax(logits) against integer targets.
inline CrossEntropy softmax_cross_entropy(const Tensor& logits, const LabelMap& labels)
{
    detail::check_chw(logits, "logits");
    const std::size_t q = logits.dim(0), h = logits.dim(1), w = logits.dim(2), n = h * w;
    detail::require(labels.height == h && labels.width == w && labels.size() == n,
                    "label map dimensions do not match the logits");

    CrossEntropy result{0.0, Tensor(logits.shape())};
    const double inv_n = 1.0 / static_cast<double>(n);
    const double* z = logits.raw();
    double* g = result.grad.raw();
    for (std::size_t p = 0; p < n; ++p) {
        const std::int32_t label = labels.labels[p];
        detail::require(label >= 0 && static_cast<std::size_t>(label) < q,
                        "label " + std::to_string(label) + " out of range [0, " + std::to_string(q) + ")");
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < q; ++c)
            peak = std::max(peak, z[c * n + p]);
        double denom = 0.0;
        for (std::size_t c = 0; c < q; ++c) {
            const double e = std::exp(z[c * n + p] - peak);
            g[c * n + p] = e;
            denom += e;
        }
        const auto target = static_cast<std::size_t>(label);
        result.loss += std::log(denom) - (z[target * n + p] - peak);
        const double inv_denom = 1.0 / denom;
        for (std::size_t c = 0; c < q; ++c)
            g[c * n + p] = (g[c * n + p] * inv_denom - (c == target ? 1.0 : 0.0)) * inv_n;
    }
    result.loss *= inv_n;
    return result;
}

/// Classical momentum SGD; velocity buffers mirror the parameter list.
struct SgdState
{
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::vector<Tensor> velocity;

    SgdState() = default;
    SgdState(double lr, double mom, const std::vector<const Tensor*>& params)
        : learning_rate(lr)
        , momentum(mom)
    {
        detail::require(lr > 0.0, "learning rate must be positive");
        detail::require(mom >= 0.0 && mom < 1.0, "momentum must lie in [0, 1)");
        velocity.reserve(params.size());
        for (const Tensor* p : params)
            velocity.emplace_back(p->shape());
    }
};

/// v <- momentum * v + grad;  p <- p - lr * v
inline void sgd_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, SgdState& state)
{
    detail::require(params.size() == grads.size() && params.size() == state.velocity.size(),
                    "sgd parameter, gradient and velocity counts differ");
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        Tensor& v = state.velocity[t];
        detail::require(p.shape() == g.shape() && p.shape() == v.shape(),
                        "sgd shape mismatch for parameter " + std::to_string(t));
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = state.momentum * v[i] + g[i];
            p[i] -= state.learning_rate * v[i];
        }
    }
}

} // namespace dynaseg
