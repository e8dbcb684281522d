#pragma once

// Command-line front end: `segment`, `evaluate` and `sweep`. Lives in a header
// so tests can drive the exact same code path in-process.

#include <dynaseg/dataio.hpp>
#include <dynaseg/loss.hpp>
#include <dynaseg/metrics.hpp>
#include <dynaseg/model.hpp>
#include <dynaseg/trainer.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dynaseg::cli {

struct RunConfig
{
    ModelConfig model;
    TrainConfig train;
    std::string schedule_name = "fsf";
    std::optional<double> mu;
    std::string image;
    std::string manifest;
    std::string out_dir;
    std::string trace;
    std::size_t jobs = 0; // 0: DYNASEG_THREADS or 1

    /// Resolves the schedule and its default mu; returns an error message on bad input.
    std::optional<std::string> finalize()
    {
        const auto kind = parse_schedule_kind(schedule_name);
        if (!kind)
            return "unknown schedule '" + schedule_name + "' (expected fixed, fsf or scf)";
        train.schedule = {*kind, mu.value_or(default_mu(*kind))};
        if (!(train.schedule.mu > 0.0))
            return std::string("--mu must be positive");
        return std::nullopt;
    }
};

inline std::size_t resolve_jobs(std::size_t requested)
{
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("DYNASEG_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0)
                return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

inline std::string format_real(double v)
{
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
}

inline void echo_config(std::ostream& out, const char* command, const RunConfig& cfg, std::size_t jobs)
{
    nlohmann::json j = {{"command", command},
                        {"schedule", to_string(cfg.train.schedule.kind)},
                        {"mu", cfg.train.schedule.mu},
                        {"seed", cfg.train.seed},
                        {"iters", cfg.train.max_iters},
                        {"lr", cfg.train.learning_rate},
                        {"momentum", cfg.train.momentum},
                        {"min_labels", cfg.train.min_labels},
                        {"components", cfg.model.m_components},
                        {"features", cfg.model.feature_dim},
                        {"clusters", cfg.model.cluster_dim},
                        {"jobs", jobs}};
    if (!cfg.image.empty())
        j["image"] = cfg.image;
    if (!cfg.manifest.empty())
        j["manifest"] = cfg.manifest;
    if (!cfg.out_dir.empty())
        j["out"] = cfg.out_dir;
    if (!cfg.trace.empty())
        j["trace"] = cfg.trace;
    out << "config " << j.dump() << '\n';
}

/// Runs task(i) for i in [0, count) on up to `jobs` threads.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task)
{
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i)
            task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++)
                task(i);
        });
}

inline void add_training_options(CLI::App* cmd, RunConfig& cfg)
{
    cmd->add_option("--schedule", cfg.schedule_name, "Weight schedule: fixed, fsf or scf")
        ->capture_default_str();
    cmd->add_option("--mu", cfg.mu, "Base balancing weight (default: fixed 5, fsf 15, scf 50)");
    cmd->add_option("--seed", cfg.train.seed, "Initialization seed")->capture_default_str();
    cmd->add_option("--iters", cfg.train.max_iters, "Maximum iterations T")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--lr", cfg.train.learning_rate, "SGD learning rate")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--momentum", cfg.train.momentum, "SGD momentum in [0, 1)")->capture_default_str()->check(
        CLI::Range(0.0, 0.999999));
    cmd->add_option("--min-labels", cfg.train.min_labels, "Stop once q' drops to this many labels")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--components", cfg.model.m_components, "Feature components M")->capture_default_str()->check(
        CLI::PositiveNumber);
    cmd->add_option("--features", cfg.model.feature_dim, "Feature dimension p")->capture_default_str()->check(
        CLI::Range(2, 100000));
    cmd->add_option("--clusters", cfg.model.cluster_dim, "Cluster dimension q")->capture_default_str()->check(
        CLI::Range(2, 65535));
    cmd->add_option("--jobs", cfg.jobs, "Images processed concurrently (fallback: DYNASEG_THREADS)");
}

struct ImageOutcome
{
    bool ok = false;
    std::string message;
    std::vector<IterationRecord> history;
};

inline int cmd_segment(RunConfig cfg, std::ostream& out, std::ostream& err)
{
    if (auto e = cfg.finalize()) {
        err << "error: " << *e << '\n';
        return 2;
    }
    std::vector<std::string> images;
    if (!cfg.manifest.empty()) {
        try {
            for (auto& entry : load_manifest(cfg.manifest).entries)
                images.push_back(entry.image);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return 2;
        }
    } else {
        images.push_back(cfg.image);
    }
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) {
        err << "error: cannot create output directory " << cfg.out_dir << ": " << ec.message() << '\n';
        return 2;
    }

    const std::size_t jobs = resolve_jobs(cfg.jobs);
    echo_config(out, "segment", cfg, jobs);

    std::vector<ImageOutcome> outcomes(images.size());
    parallel_for(images.size(), jobs, [&](std::size_t i) {
        ImageOutcome& o = outcomes[i];
        const std::string stem = image_stem(images[i]);
        try {
            const Tensor image = load_image(images[i]);
            TrainConfig tc = cfg.train;
            tc.seed = cfg.train.seed + i;
            const SegmentationResult result = train_image(image, cfg.model, tc);
            const fs::path base = fs::path(cfg.out_dir) / stem;
            save_label_map(result.labels, base.string() + "_labels.png", LabelOutput::Raw);
            save_label_map(result.labels, base.string() + "_seg.png", LabelOutput::Colorized);
            const auto& last = result.history.back();
            o.message = stem + ": q'=" + std::to_string(last.q_prime) + " L=" + format_real(last.loss.total) +
                        " L_sim=" + format_real(last.loss.similarity) + " L_con=" +
                        format_real(last.loss.continuity) + " iters=" + std::to_string(result.iterations_run) +
                        " stop=" + std::string(to_string(result.stop_reason));
            o.history = result.history;
            o.ok = true;
        } catch (const std::exception& e) {
            o.message = stem + ": " + e.what();
        }
    });

    int code = 0;
    for (const auto& o : outcomes) {
        if (o.ok) {
            out << o.message << '\n';
        } else {
            err << "error: " << o.message << '\n';
            code = 1;
        }
    }

    if (!cfg.trace.empty()) {
        std::ofstream trace(cfg.trace);
        if (!trace) {
            err << "error: cannot write trace " << cfg.trace << '\n';
            return 1;
        }
        for (std::size_t i = 0; i < images.size(); ++i)
            for (const auto& r : outcomes[i].history) {
                nlohmann::json j = to_json(r);
                j["image"] = image_stem(images[i]);
                trace << j.dump() << '\n';
            }
    }
    return code;
}

inline std::optional<std::string> find_prediction(const std::string& dir, const std::string& stem)
{
    for (const char* suffix : {"_labels.png", ".png", ".pgm"}) {
        const fs::path candidate = fs::path(dir) / (stem + suffix);
        if (fs::is_regular_file(candidate))
            return candidate.string();
    }
    return std::nullopt;
}

inline int cmd_evaluate(const std::string& manifest_path, const std::string& pred_dir,
                        const std::string& report_path, std::ostream& out, std::ostream& err)
{
    DatasetManifest manifest;
    try {
        manifest = load_manifest(manifest_path);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    out << "config " << nlohmann::json{{"command", "evaluate"}, {"manifest", manifest_path}, {"pred", pred_dir},
                                       {"report", report_path}}.dump()
        << '\n';

    MetricsReport report;
    for (const auto& entry : manifest.entries) {
        const std::string stem = image_stem(entry.image);
        if (entry.ground_truth.empty()) {
            report.failed.push_back(stem + ": no ground truth listed on manifest line " + std::to_string(entry.line));
            continue;
        }
        const auto pred_path = find_prediction(pred_dir, stem);
        if (!pred_path) {
            report.missing.push_back(stem);
            continue;
        }
        try {
            const LabelMap pred = load_label_map(*pred_path);
            std::vector<LabelMap> gts;
            for (const auto& g : entry.ground_truth)
                gts.push_back(load_label_map(g));
            report.images.push_back({stem, bsd_variants(pred, gts)});
        } catch (const std::exception& e) {
            report.failed.push_back(stem + ": " + e.what());
        }
    }
    report.aggregate = aggregate_scores(report.images);

    std::ofstream file(report_path);
    if (!file) {
        err << "error: cannot write report " << report_path << '\n';
        return 2;
    }
    file << to_json(report).dump(2) << '\n';

    if (report.aggregate) {
        const auto& a = *report.aggregate;
        out << "evaluated " << report.images.size() << " image(s): All=" << format_real(a.all)
            << " Fine=" << format_real(a.fine) << " Coarse=" << format_real(a.coarse)
            << " Mean=" << format_real(a.mean) << '\n';
    }
    for (const auto& m : report.missing)
        err << "missing prediction: " << m << '\n';
    for (const auto& f : report.failed)
        err << "error: " << f << '\n';
    return report.missing.empty() && report.failed.empty() ? 0 : 1;
}

inline int cmd_sweep(RunConfig cfg, const std::vector<double>& mus, std::ostream& out, std::ostream& err)
{
    if (auto e = cfg.finalize()) {
        err << "error: " << *e << '\n';
        return 2;
    }
    for (double mu : mus)
        if (!(mu > 0.0)) {
            err << "error: every --mu-list value must be positive\n";
            return 2;
        }
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) {
        err << "error: cannot create output directory " << cfg.out_dir << ": " << ec.message() << '\n';
        return 2;
    }
    const std::size_t jobs = resolve_jobs(cfg.jobs);
    echo_config(out, "sweep", cfg, jobs);

    Tensor image;
    try {
        image = load_image(cfg.image);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    const std::string stem = image_stem(cfg.image);

    struct Row
    {
        bool ok = false;
        std::string error;
        SegmentationResult result;
    };
    std::vector<Row> rows(mus.size());
    parallel_for(mus.size(), jobs, [&](std::size_t i) {
        try {
            TrainConfig tc = cfg.train;
            tc.schedule.mu = mus[i];
            rows[i].result = train_image(image, cfg.model, tc);
            const fs::path file = fs::path(cfg.out_dir) /
                                  (stem + "_sweep" + std::to_string(i) + "_mu" + format_real(mus[i]) + "_seg.png");
            save_label_map(rows[i].result.labels, file.string(), LabelOutput::Colorized);
            rows[i].ok = true;
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });

    const fs::path table_path = fs::path(cfg.out_dir) / (stem + "_sweep.tsv");
    std::ofstream table(table_path);
    if (!table) {
        err << "error: cannot write " << table_path.string() << '\n';
        return 1;
    }
    const std::string header = "mu\tq_prime\tL\tL_sim\tL_con\titerations\tstop";
    table << header << '\n';
    out << header << '\n';
    int code = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].ok) {
            err << "error: mu=" << format_real(mus[i]) << ": " << rows[i].error << '\n';
            code = 1;
            continue;
        }
        const auto& r = rows[i].result;
        const auto& last = r.history.back();
        std::ostringstream line;
        line << format_real(mus[i]) << '\t' << last.q_prime << '\t' << format_real(last.loss.total) << '\t'
             << format_real(last.loss.similarity) << '\t' << format_real(last.loss.continuity) << '\t'
             << r.iterations_run << '\t' << to_string(r.stop_reason);
        table << line.str() << '\n';
        out << line.str() << '\n';
    }
    return code;
}

/// Entry point shared by the executable and the tests. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Unsupervised image segmentation with dynamically weighted losses"};
    app.require_subcommand(1);

    RunConfig seg_cfg;
    auto* segment = app.add_subcommand("segment", "Segment one image or every image in a manifest");
    auto* image_opt = segment->add_option("--image", seg_cfg.image, "Input image (PNG or PPM)");
    auto* manifest_opt = segment->add_option("--manifest", seg_cfg.manifest, "Dataset manifest");
    image_opt->excludes(manifest_opt);
    segment->add_option("--out", seg_cfg.out_dir, "Output directory")->required();
    segment->add_option("--trace", seg_cfg.trace, "Write per-iteration history as JSON lines");
    add_training_options(segment, seg_cfg);

    std::string eval_manifest, eval_pred, eval_report;
    auto* evaluate = app.add_subcommand("evaluate", "Score predicted label maps against ground truth");
    evaluate->add_option("--manifest", eval_manifest, "Dataset manifest with ground-truth paths")->required();
    evaluate->add_option("--pred", eval_pred, "Directory of raw label PNGs named by image stem")->required();
    evaluate->add_option("--report", eval_report, "JSON report path")->required();

    RunConfig sweep_cfg;
    std::vector<double> mus;
    auto* sweep = app.add_subcommand("sweep", "Segment one image once per mu value");
    sweep->add_option("--image", sweep_cfg.image, "Input image")->required();
    sweep->add_option("--mu-list", mus, "Comma-separated mu values")->required()->delimiter(',');
    sweep->add_option("--out", sweep_cfg.out_dir, "Output directory")->required();
    add_training_options(sweep, sweep_cfg);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    if (*segment) {
        if (seg_cfg.image.empty() && seg_cfg.manifest.empty()) {
            err << "error: segment needs --image or --manifest\n";
            return 2;
        }
        return cmd_segment(seg_cfg, out, err);
    }
    if (*evaluate)
        return cmd_evaluate(eval_manifest, eval_pred, eval_report, out, err);
    return cmd_sweep(sweep_cfg, mus, out, err);
}

} // namespace dynaseg::cli
