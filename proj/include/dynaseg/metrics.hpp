#pragma once

// Best-match mIOU for unsupervised segmentation and the BSD500-style
// All / Fine / Coarse / Mean aggregation over multiple annotations.

#include <dynaseg/error.hpp>
#include <dynaseg/tensor.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dynaseg {

/// |pred & gt| / |pred | gt| over 0/1 masks; 0 when pred is empty.
inline double intersection_over_union(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt)
{
    detail::require(pred.size() == gt.size(), "IoU masks differ in size");
    std::size_t inter = 0, uni = 0, gt_count = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        uni += p || g;
        gt_count += g;
    }
    detail::require(gt_count > 0, "IoU ground-truth mask is empty");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Number of distinct non-void labels.
inline std::size_t count_segments(const LabelMap& gt)
{
    std::vector<std::int32_t> values;
    for (auto v : gt.labels)
        if (v != kVoidLabel)
            values.push_back(v);
    std::sort(values.begin(), values.end());
    return static_cast<std::size_t>(std::unique(values.begin(), values.end()) - values.begin());
}

/// For each ground-truth segment, the best IoU any predicted cluster achieves
/// (non-exclusive), averaged over segments. Void ground-truth pixels are ignored.
inline double mean_iou(const LabelMap& pred, const LabelMap& gt)
{
    detail::require(pred.height == gt.height && pred.width == gt.width && pred.size() == gt.size(),
                    "prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                        " but ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width));

    std::map<std::int32_t, std::size_t> gt_size, pred_size;
    std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> overlap;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const std::int32_t g = gt.labels[i];
        if (g == kVoidLabel)
            continue;
        const std::int32_t p = pred.labels[i];
        ++gt_size[g];
        ++pred_size[p];
        ++overlap[{g, p}];
    }
    detail::require(!gt_size.empty(), "ground truth has no labeled pixels");

    std::map<std::int32_t, double> best;
    for (const auto& [key, inter] : overlap) {
        const auto [g, p] = key;
        const double iou =
            static_cast<double>(inter) / static_cast<double>(gt_size[g] + pred_size[p] - inter);
        double& b = best[g];
        b = std::max(b, iou);
    }
    double sum = 0.0;
    for (const auto& [g, score] : best)
        sum += score;
    return sum / static_cast<double>(gt_size.size());
}

struct BsdScores
{
    double all = 0.0;
    double fine = 0.0;
    double coarse = 0.0;
    std::vector<double> per_annotation;
};

/// all: mean over annotations; fine / coarse: the annotation with the most /
/// fewest segments, ties resolved by first occurrence.
inline BsdScores bsd_variants(const LabelMap& pred, const std::vector<LabelMap>& gts)
{
    detail::require(!gts.empty(), "ground-truth set is empty");
    BsdScores scores;
    std::size_t fine_idx = 0, coarse_idx = 0, fine_segments = 0, coarse_segments = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        const double score = mean_iou(pred, gts[i]);
        scores.per_annotation.push_back(score);
        sum += score;
        const std::size_t segments = count_segments(gts[i]);
        if (i == 0 || segments > fine_segments) {
            fine_idx = i;
            fine_segments = segments;
        }
        if (i == 0 || segments < coarse_segments) {
            coarse_idx = i;
            coarse_segments = segments;
        }
    }
    scores.all = sum / static_cast<double>(gts.size());
    scores.fine = scores.per_annotation[fine_idx];
    scores.coarse = scores.per_annotation[coarse_idx];
    return scores;
}

struct ImageScore
{
    std::string name;
    BsdScores scores;
};

struct Aggregate
{
    double all = 0.0;
    double fine = 0.0;
    double coarse = 0.0;
    double mean = 0.0;
};

struct MetricsReport
{
    std::vector<ImageScore> images;
    std::vector<std::string> missing;
    std::vector<std::string> failed;
    std::optional<Aggregate> aggregate;
};

/// Dataset-level averages of the per-image variants; Mean = (All + Fine + Coarse) / 3.
inline std::optional<Aggregate> aggregate_scores(const std::vector<ImageScore>& images)
{
    if (images.empty())
        return std::nullopt;
    Aggregate a;
    for (const auto& img : images) {
        a.all += img.scores.all;
        a.fine += img.scores.fine;
        a.coarse += img.scores.coarse;
    }
    const auto n = static_cast<double>(images.size());
    a.all /= n;
    a.fine /= n;
    a.coarse /= n;
    a.mean = (a.all + a.fine + a.coarse) / 3.0;
    return a;
}

inline nlohmann::json to_json(const MetricsReport& report)
{
    nlohmann::json images = nlohmann::json::array();
    for (const auto& img : report.images)
        images.push_back({{"image", img.name},
                          {"all", img.scores.all},
                          {"fine", img.scores.fine},
                          {"coarse", img.scores.coarse},
                          {"per_annotation", img.scores.per_annotation}});
    nlohmann::json aggregate = nullptr;
    if (report.aggregate)
        aggregate = {{"all", report.aggregate->all},
                     {"fine", report.aggregate->fine},
                     {"coarse", report.aggregate->coarse},
                     {"mean", report.aggregate->mean}};
    return {{"images", images},
            {"evaluated", report.images.size()},
            {"missing", report.missing},
            {"failed", report.failed},
            {"aggregate", aggregate}};
}

} // namespace dynaseg
