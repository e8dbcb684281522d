#pragma once

// Combined segmentation loss L = L_sim + mu' * L_con, where mu' is produced
// each iteration by a weight schedule from the current cluster count q'.

#include <dynaseg/error.hpp>
#include <dynaseg/kernels.hpp>
#include <dynaseg/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace dynaseg {

enum class ScheduleKind
{
    Fixed, // mu' = mu
    FSF,   // feature similarity focus: mu' = q' / mu
    SCF,   // spatial continuity focus: mu' = mu / q'
};

inline double default_mu(ScheduleKind kind)
{
    switch (kind) {
    case ScheduleKind::Fixed:
        return 5.0;
    case ScheduleKind::FSF:
        return 15.0;
    case ScheduleKind::SCF:
        return 50.0;
    }
    return 5.0;
}

inline std::string_view to_string(ScheduleKind kind)
{
    switch (kind) {
    case ScheduleKind::Fixed:
        return "fixed";
    case ScheduleKind::FSF:
        return "fsf";
    case ScheduleKind::SCF:
        return "scf";
    }
    return "fixed";
}

inline std::optional<ScheduleKind> parse_schedule_kind(std::string_view text)
{
    if (text == "fixed")
        return ScheduleKind::Fixed;
    if (text == "fsf")
        return ScheduleKind::FSF;
    if (text == "scf")
        return ScheduleKind::SCF;
    return std::nullopt;
}

struct WeightSchedule
{
    ScheduleKind kind = ScheduleKind::FSF;
    double mu = 15.0;

    static WeightSchedule with_default_mu(ScheduleKind kind) { return {kind, default_mu(kind)}; }
};

struct LossBreakdown
{
    double total = 0.0;
    double similarity = 0.0;
    double continuity = 0.0;
    double effective_weight = 0.0;
};

struct LossWithGrad
{
    double loss = 0.0;
    Tensor grad;
};

struct TotalLoss
{
    LossBreakdown breakdown;
    Tensor grad;
};

inline double schedule_weight(const WeightSchedule& schedule, std::size_t q_prime)
{
    detail::require(q_prime >= 1, "cluster count q' must be at least 1");
    detail::require(schedule.mu > 0.0 && std::isfinite(schedule.mu), "schedule mu must be positive and finite");
    const auto q = static_cast<double>(q_prime);
    switch (schedule.kind) {
    case ScheduleKind::Fixed:
        return schedule.mu;
    case ScheduleKind::FSF:
        return q / schedule.mu;
    case ScheduleKind::SCF:
        return schedule.mu / q;
    }
    throw ContractViolation("unknown schedule kind");
}

/// Mean absolute difference between vertically and horizontally adjacent
/// response values, averaged over every difference term. sign(0) = 0.
inline LossWithGrad continuity_loss(const Tensor& response)
{
    detail::require(response.rank() == 3, "response map must have shape [q, H, W]");
    const std::size_t q = response.dim(0), h = response.dim(1), w = response.dim(2);
    if (h < 2 && w < 2)
        throw DegenerateInput("continuity loss needs at least two pixels along some axis");

    const double terms = static_cast<double>(q * ((h - 1) * w + h * (w - 1)));
    const double inv = 1.0 / terms;
    LossWithGrad result{0.0, Tensor(response.shape())};
    auto sign = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };

    double sum = 0.0;
    for (std::size_t c = 0; c < q; ++c) {
        for (std::size_t y = 0; y + 1 < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double d = response.at(c, y + 1, x) - response.at(c, y, x);
                sum += std::abs(d);
                result.grad.at(c, y + 1, x) += sign(d) * inv;
                result.grad.at(c, y, x) -= sign(d) * inv;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x + 1 < w; ++x) {
                const double d = response.at(c, y, x + 1) - response.at(c, y, x);
                sum += std::abs(d);
                result.grad.at(c, y, x + 1) += sign(d) * inv;
                result.grad.at(c, y, x) -= sign(d) * inv;
            }
    }
    result.loss = sum * inv;
    return result;
}

/// Cross-entropy of the response map against fixed pseudo-labels.
inline LossWithGrad similarity_loss(const Tensor& response, const LabelMap& labels)
{
    CrossEntropy ce = softmax_cross_entropy(response, labels);
    return {ce.loss, std::move(ce.grad)};
}

/// mu' is held constant within the call; no gradient flows through q' or the labels.
inline TotalLoss total_loss(const Tensor& response, const LabelMap& labels, const WeightSchedule& schedule,
                            std::size_t q_prime)
{
    const double weight = schedule_weight(schedule, q_prime);
    LossWithGrad sim = similarity_loss(response, labels);
    LossWithGrad con = continuity_loss(response);

    TotalLoss result;
    result.breakdown = {sim.loss + weight * con.loss, sim.loss, con.loss, weight};
    result.grad = std::move(sim.grad);
    for (std::size_t i = 0; i < result.grad.size(); ++i)
        result.grad[i] += weight * con.grad[i];
    return result;
}

} // namespace dynaseg
