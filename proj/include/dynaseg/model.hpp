#pragma once

#include <dynaseg/error.hpp>
#include <dynaseg/kernels.hpp>
#include <dynaseg/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <unordered_set>
#include <vector>

namespace dynaseg {

struct ModelConfig
{
    std::size_t m_components = 3;   // conv -> ReLU -> BN blocks
    std::size_t feature_dim = 100;  // p
    std::size_t cluster_dim = 100;  // q
    std::size_t input_channels = 3;

    void validate() const
    {
        detail::require(m_components >= 1, "model needs at least one feature component");
        detail::require(feature_dim >= 2, "feature dimension must be at least 2");
        detail::require(cluster_dim >= 2, "cluster dimension must be at least 2");
        detail::require(input_channels >= 1, "input channel count must be positive");
    }
};

struct FeatureComponent
{
    ConvParams conv;
    BnParams bn;

    friend bool operator==(const FeatureComponent&, const FeatureComponent&) = default;
};

/// Network parameters. The same layout doubles as the gradient container.
struct ModelParams
{
    std::vector<FeatureComponent> components;
    ConvParams classifier; // 1x1, p -> q
    BnParams response_bn;

    std::vector<Tensor*> tensors()
    {
        std::vector<Tensor*> out;
        for (auto& c : components)
            out.insert(out.end(), {&c.conv.weights, &c.conv.bias, &c.bn.gamma, &c.bn.beta});
        out.insert(out.end(), {&classifier.weights, &classifier.bias, &response_bn.gamma, &response_bn.beta});
        return out;
    }

    std::vector<const Tensor*> tensors() const
    {
        std::vector<const Tensor*> out;
        for (const auto* t : const_cast<ModelParams*>(this)->tensors())
            out.push_back(t);
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using ParamGrads = ModelParams;

struct ComponentCache
{
    Tensor input;
    Tensor pre_activation;
    BnCache bn;
};

struct ForwardCache
{
    std::vector<ComponentCache> components;
    Tensor classifier_input;
    BnCache response_bn;
};

struct ForwardResult
{
    Tensor response; // r', shape [q, H, W]
    ForwardCache cache;
};

namespace detail {

// Uniform double in [0, 1) from the top 53 bits, independent of the standard
// library's distribution implementation.
inline double unit_uniform(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline ConvParams init_conv(std::mt19937_64& rng, std::size_t out_c, std::size_t in_c, std::size_t k)
{
    ConvParams conv = ConvParams::zeros(out_c, in_c, k);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
    for (double& w : conv.weights.data())
        w = (2.0 * unit_uniform(rng) - 1.0) * bound;
    return conv;
}

} // namespace detail

/// Fan-in uniform weights, zero biases, unit gamma, zero beta. Same seed, same bits.
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed)
{
    config.validate();
    std::mt19937_64 rng(seed);
    ModelParams params;
    for (std::size_t m = 0; m < config.m_components; ++m) {
        const std::size_t in_c = m == 0 ? config.input_channels : config.feature_dim;
        params.components.push_back(
            {detail::init_conv(rng, config.feature_dim, in_c, 3), BnParams::identity(config.feature_dim)});
    }
    params.classifier = detail::init_conv(rng, config.cluster_dim, config.feature_dim, 1);
    params.response_bn = BnParams::identity(config.cluster_dim);
    return params;
}

/// M x (conv -> ReLU -> BN), then a 1x1 classifier and the response BN.
inline ForwardResult forward(const ModelParams& params, const Tensor& image)
{
    detail::require(!params.components.empty(), "model has no feature components");
    detail::require(image.rank() == 3, "image must have shape [C, H, W]");
    if (image.dim(1) * image.dim(2) < 2)
        throw DegenerateInput("image must contain at least two pixels");

    ForwardResult result;
    Tensor x = image;
    for (const auto& component : params.components) {
        ComponentCache cc;
        cc.pre_activation = conv2d_forward(x, component.conv);
        cc.input = std::move(x);
        BnForward bn = batchnorm_forward(relu(cc.pre_activation), component.bn);
        cc.bn = std::move(bn.cache);
        x = std::move(bn.output);
        result.cache.components.push_back(std::move(cc));
    }
    Tensor logits = conv2d_forward(x, params.classifier);
    result.cache.classifier_input = std::move(x);
    BnForward response = batchnorm_forward(logits, params.response_bn);
    result.cache.response_bn = std::move(response.cache);
    result.response = std::move(response.output);
    return result;
}

/// Per-pixel argmax over channels; ties go to the lowest channel index.
inline LabelMap assign_labels(const Tensor& response)
{
    detail::require(response.rank() == 3, "response map must have shape [q, H, W]");
    const std::size_t q = response.dim(0), h = response.dim(1), w = response.dim(2), n = h * w;
    LabelMap labels(h, w, 0);
    std::vector<double> best(response.raw(), response.raw() + n);
    for (std::size_t c = 1; c < q; ++c) {
        const double* row = response.raw() + c * n;
        for (std::size_t p = 0; p < n; ++p)
            if (row[p] > best[p]) {
                best[p] = row[p];
                labels.labels[p] = static_cast<std::int32_t>(c);
            }
    }
    return labels;
}

/// Number of distinct label values present (q').
inline std::size_t count_clusters(const LabelMap& labels)
{
    std::unordered_set<std::int32_t> seen(labels.labels.begin(), labels.labels.end());
    return seen.size();
}

inline ParamGrads backward(const ForwardCache& cache, const ModelParams& params, const Tensor& grad_response)
{
    detail::require(cache.components.size() == params.components.size(),
                    "forward cache does not match the model's component count");
    detail::require(grad_response.rank() == 3 && grad_response.dim(0) == params.classifier.out_channels(),
                    "response gradient does not match the model's cluster dimension");

    ParamGrads grads;
    grads.components.resize(params.components.size());

    BnGrads rbn = batchnorm_backward(cache.response_bn, params.response_bn, grad_response);
    grads.response_bn = {std::move(rbn.gamma), std::move(rbn.beta), params.response_bn.eps};

    ConvGrads cls = conv2d_backward(cache.classifier_input, params.classifier, rbn.input);
    grads.classifier = std::move(cls.params);
    Tensor upstream = std::move(cls.input);

    for (std::size_t m = params.components.size(); m-- > 0;) {
        const auto& cc = cache.components[m];
        const auto& component = params.components[m];
        BnGrads bn = batchnorm_backward(cc.bn, component.bn, upstream);
        grads.components[m].bn = {std::move(bn.gamma), std::move(bn.beta), component.bn.eps};
        Tensor grad_pre = relu_backward(cc.pre_activation, bn.input);
        ConvGrads conv = conv2d_backward(cc.input, component.conv, grad_pre);
        grads.components[m].conv = std::move(conv.params);
        upstream = std::move(conv.input);
    }
    return grads;
}

} // namespace dynaseg
