#pragma once

#include <dynaseg/error.hpp>
#include <dynaseg/kernels.hpp>
#include <dynaseg/loss.hpp>
#include <dynaseg/model.hpp>
#include <dynaseg/tensor.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string_view>
#include <vector>

namespace dynaseg {

struct TrainConfig
{
    std::size_t max_iters = 1000; // T
    double learning_rate = 0.1;
    double momentum = 0.9;
    std::size_t min_labels = 3;
    std::uint64_t seed = 0;
    WeightSchedule schedule{};

    void validate() const
    {
        detail::require(max_iters >= 1, "max_iters must be at least 1");
        detail::require(min_labels >= 1, "min_labels must be at least 1");
        detail::require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
        detail::require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
        detail::require(schedule.mu > 0.0 && std::isfinite(schedule.mu), "schedule mu must be positive");
    }
};

enum class StopReason
{
    None,
    MaxIters,
    MinLabels,
};

inline std::string_view to_string(StopReason reason)
{
    switch (reason) {
    case StopReason::MaxIters:
        return "max_iters";
    case StopReason::MinLabels:
        return "min_labels";
    case StopReason::None:
        break;
    }
    return "none";
}

struct StopDecision
{
    bool stop = false;
    StopReason reason = StopReason::None;
};

struct IterationRecord
{
    std::size_t iter = 0;
    LossBreakdown loss;
    std::size_t q_prime = 0;
};

struct SegmentationResult
{
    LabelMap labels;
    std::vector<IterationRecord> history;
    std::size_t iterations_run = 0;
    StopReason stop_reason = StopReason::None;
};

/// Stops once q' has collapsed to min_labels or the iteration budget is spent.
/// When both hold, min_labels is reported.
inline StopDecision should_stop(std::size_t q_prime, std::size_t iter, const TrainConfig& cfg)
{
    detail::require(iter >= 1, "iterations are counted from 1");
    if (q_prime <= cfg.min_labels)
        return {true, StopReason::MinLabels};
    if (iter >= cfg.max_iters)
        return {true, StopReason::MaxIters};
    return {};
}

using IterationObserver = std::function<void(const IterationRecord&)>;

/// Trains a freshly initialized network on one image and returns the labeling
/// of the last iteration together with the per-iteration loss history.
inline SegmentationResult train_image(const Tensor& image, const ModelConfig& model_cfg,
                                      const TrainConfig& train_cfg, const IterationObserver& observer = {})
{
    model_cfg.validate();
    train_cfg.validate();
    detail::require(image.rank() == 3 && image.dim(0) == model_cfg.input_channels,
                    "image channel count does not match the model configuration");
    if (image.dim(1) * image.dim(2) < 2)
        throw DegenerateInput("image must contain at least two pixels");

    ModelParams params = init_model(model_cfg, train_cfg.seed);
    SgdState sgd(train_cfg.learning_rate, train_cfg.momentum, std::as_const(params).tensors());

    SegmentationResult result;
    for (std::size_t iter = 1;; ++iter) {
        ForwardResult fwd = forward(params, image);
        LabelMap labels = assign_labels(fwd.response);
        const std::size_t q_prime = count_clusters(labels);
        TotalLoss loss = total_loss(fwd.response, labels, train_cfg.schedule, q_prime);

        const LossBreakdown& b = loss.breakdown;
        if (!std::isfinite(b.total) || !std::isfinite(b.similarity) || !std::isfinite(b.continuity))
            throw NumericDivergence(iter, "loss is not finite");

        IterationRecord record{iter, b, q_prime};
        result.history.push_back(record);
        if (observer)
            observer(record);
        result.labels = std::move(labels);
        result.iterations_run = iter;

        // The parameters are discarded after the last iteration, so no update is needed.
        const StopDecision decision = should_stop(q_prime, iter, train_cfg);
        if (decision.stop) {
            result.stop_reason = decision.reason;
            break;
        }

        ParamGrads grads = backward(fwd.cache, params, loss.grad);
        const auto grad_tensors = std::as_const(grads).tensors();
        for (const Tensor* g : grad_tensors)
            if (!g->all_finite())
                throw NumericDivergence(iter, "gradient is not finite");
        sgd_step(params.tensors(), grad_tensors, sgd);
    }
    return result;
}

inline nlohmann::json to_json(const IterationRecord& r)
{
    return {{"iter", r.iter},
            {"L", r.loss.total},
            {"L_sim", r.loss.similarity},
            {"L_con", r.loss.continuity},
            {"mu_eff", r.loss.effective_weight},
            {"q_prime", r.q_prime}};
}

/// One JSON object per line, one line per iteration.
inline void write_trace(std::ostream& out, const std::vector<IterationRecord>& history)
{
    for (const auto& r : history)
        out << to_json(r).dump() << '\n';
}

} // namespace dynaseg
