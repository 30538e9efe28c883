#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

#include "vase/trainer.hpp"

namespace vase {

struct AblationCell {
    AblationFlags flags;
    LossMode mode = LossMode::Disentangled;

    std::string name() const {
        return flags.label() + (mode == LossMode::Disentangled ? "/disentangled" : "/entangled");
    }

    std::string dir_name() const {
        std::string f = flags.label() == "-" ? "none" : flags.label();
        return f + (mode == LossMode::Disentangled ? "_dis" : "_ent");
    }
};

struct CellResult {
    AblationCell cell;
    std::uint64_t seed = 0;
    double acc_max = 0.0;
    double acc_change = 0.0;
    double mse_min = 0.0;
    double mse_change = 0.0;
    bool has_mse = false;
    RunStatus status = RunStatus::Ok;
    std::string run_dir;
};

struct CellSummary {
    AblationCell cell;
    int seeds = 0;
    double acc_max_mean = 0.0, acc_max_sd = 0.0;
    double acc_change_mean = 0.0, acc_change_sd = 0.0;
    double mse_min_mean = 0.0, mse_min_sd = 0.0;
    double mse_change_mean = 0.0, mse_change_sd = 0.0;
};

namespace abl {

inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    // sample standard deviation over seeds
    v /= static_cast<double>(xs.size() - 1);
    return {m, std::sqrt(v)};
}

}  // namespace abl

// Runs one cell/seed and extracts its forgetting summary.
template <typename S>
CellResult run_ablation_cell(const ExperimentConfig& base, const AblationCell& cell,
                             std::uint64_t seed) {
    ExperimentConfig cfg = base;
    cfg.flags = cell.flags;
    cfg.mode = cell.mode;
    cfg.seed = seed;
    cfg.out_dir = base.out_dir + "/" + cell.dir_name() + "_seed" + std::to_string(seed);

    CellResult res;
    res.cell = cell;
    res.seed = seed;
    Trainer<S> trainer(cfg);
    res.status = trainer.run();
    res.run_dir = trainer.out_dir();
    if (res.status != RunStatus::Ok) return res;

    std::ifstream is(trainer.out_dir() + "/summary.json");
    nlohmann::json j;
    is >> j;
    res.acc_max = j["object_id_accuracy"]["max"].get<double>();
    res.acc_change = j["object_id_accuracy"]["change"].get<double>();
    if (j["position_mse"]["environments_used"].get<int>() > 0) {
        res.has_mse = true;
        res.mse_min = j["position_mse"]["min"].get<double>();
        res.mse_change = j["position_mse"]["change"].get<double>();
    }
    return res;
}

// Grid over ablation cells and seeds, run with a small worker pool. Emits
// report.csv (one row per cell) and report.json under the base out dir.
template <typename S>
std::vector<CellSummary> ablation_run(const ExperimentConfig& base,
                                      const std::vector<AblationCell>& cells,
                                      const std::vector<std::uint64_t>& seeds,
                                      int workers = 0) {
    std::vector<std::pair<AblationCell, std::uint64_t>> jobs;
    for (const auto& c : cells)
        for (auto s : seeds) jobs.emplace_back(c, s);

    std::vector<CellResult> results(jobs.size());
    if (workers <= 0)
        workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::mutex mu;
    size_t next = 0;
    auto worker = [&]() {
        while (true) {
            size_t idx;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= jobs.size()) return;
                idx = next++;
            }
            results[idx] = run_ablation_cell<S>(base, jobs[idx].first, jobs[idx].second);
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (const auto& r : results)
        check(r.status == RunStatus::Ok,
              "ablation: run " + r.cell.name() + " seed " + std::to_string(r.seed) + " failed");

    std::vector<CellSummary> summaries;
    for (const auto& c : cells) {
        CellSummary s;
        s.cell = c;
        std::vector<double> am, ac, mm, mc;
        for (const auto& r : results) {
            if (r.cell.name() != c.name()) continue;
            ++s.seeds;
            am.push_back(r.acc_max);
            ac.push_back(r.acc_change);
            if (r.has_mse) {
                mm.push_back(r.mse_min);
                mc.push_back(r.mse_change);
            }
        }
        std::tie(s.acc_max_mean, s.acc_max_sd) = abl::mean_sd(am);
        std::tie(s.acc_change_mean, s.acc_change_sd) = abl::mean_sd(ac);
        std::tie(s.mse_min_mean, s.mse_min_sd) = abl::mean_sd(mm);
        std::tie(s.mse_change_mean, s.mse_change_sd) = abl::mean_sd(mc);
        summaries.push_back(s);
    }

    const std::string out_root = resolve_out_dir(base.out_dir);
    std::filesystem::create_directories(out_root);
    {
        std::ofstream csv(out_root + "/report.csv");
        csv << "ablation,mode,seeds,acc_max_mean,acc_max_sd,acc_change_mean,acc_change_sd,"
               "mse_min_mean,mse_min_sd,mse_change_mean,mse_change_sd\n";
        for (const auto& s : summaries) {
            csv << s.cell.flags.label() << ','
                << (s.cell.mode == LossMode::Disentangled ? "disentangled" : "entangled") << ','
                << s.seeds << ',' << metricdet::fmt(s.acc_max_mean) << ','
                << metricdet::fmt(s.acc_max_sd) << ',' << metricdet::fmt(s.acc_change_mean) << ','
                << metricdet::fmt(s.acc_change_sd) << ',' << metricdet::fmt(s.mse_min_mean) << ','
                << metricdet::fmt(s.mse_min_sd) << ',' << metricdet::fmt(s.mse_change_mean) << ','
                << metricdet::fmt(s.mse_change_sd) << "\n";
        }
    }
    {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& s : summaries) {
            nlohmann::json row;
            row["ablation"] = s.cell.flags.label();
            row["mode"] = s.cell.mode == LossMode::Disentangled ? "disentangled" : "entangled";
            row["seeds"] = s.seeds;
            row["object_id_accuracy"] = {{"max", s.acc_max_mean},
                                         {"max_sd", s.acc_max_sd},
                                         {"change", s.acc_change_mean},
                                         {"change_sd", s.acc_change_sd}};
            row["position_mse"] = {{"min", s.mse_min_mean},
                                   {"min_sd", s.mse_min_sd},
                                   {"change", s.mse_change_mean},
                                   {"change_sd", s.mse_change_sd}};
            j.push_back(row);
        }
        std::ofstream os(out_root + "/report.json");
        os << j.dump(2) << "\n";
    }
    return summaries;
}

}  // namespace vase
