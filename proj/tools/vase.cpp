// Command-line front end: training runs, ablation grids, traversal
// rendering and report generation over completed run directories.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "vase/ablation.hpp"
#include "vase/config.hpp"
#include "vase/trainer.hpp"
#include "vase/traversals.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadConfig = 2;
constexpr int kExitCapacityExhausted = 3;
constexpr int kExitNanAbort = 4;

int status_to_exit(vase::RunStatus s) {
    switch (s) {
        case vase::RunStatus::Ok: return kExitOk;
        case vase::RunStatus::BadConfigError: return kExitBadConfig;
        case vase::RunStatus::CapacityExhaustedError: return kExitCapacityExhausted;
        case vase::RunStatus::NanAbort: return kExitNanAbort;
    }
    return 1;
}

template <typename S>
int do_run(const vase::ExperimentConfig& cfg) {
    vase::Trainer<S> trainer(cfg);
    const vase::RunStatus status = trainer.run();
    std::cout << "run: " << trainer.out_dir() << " -> "
              << (status == vase::RunStatus::Ok ? "ok"
                  : status == vase::RunStatus::CapacityExhaustedError ? "capacity-exhausted"
                                                                      : "nan-abort")
              << "\n";
    return status_to_exit(status);
}

template <typename S>
int do_render(const std::string& run_dir) {
    vase::ExperimentConfig cfg = vase::load_config(run_dir + "/config.ini");
    vase::Rng init(cfg.seed * 0x9e3779b9ULL + 17);
    vase::VaseNetworks<S> nets(cfg.model, init);
    auto params = nets.all_params();
    if (cfg.imagination) {
        vase::TranslationPolicy<S> policy(cfg.policy, cfg.model, init);
        for (auto& p : policy.params()) params.push_back(p);
    }
    vase::load_checkpoint(run_dir + "/checkpoint_final.vase1", params);

    const auto schedule = cfg.make_schedule();
    vase::StreamGenerator<S> stream(schedule, cfg.seed + 9001);
    std::filesystem::create_directories(run_dir + "/traversals");
    for (int seg = 0; seg < static_cast<int>(schedule.segments.size()); ++seg) {
        auto batch = stream.segment_batch(seg, 1, 1);
        vase::NoGradGuard ng;
        auto enc = nets.encode(batch.images);
        auto probs = vase::softmax_rows(nets.classifier_logits(enc.hidden));
        int env = 0;
        for (int k = 1; k < cfg.model.max_environments; ++k)
            if (probs.values()(k) > probs.values()(env)) env = k;
        auto grid = vase::render_traversals(nets, batch.images, env);
        const std::string path = run_dir + "/traversals/segment" + std::to_string(seg) + "_env" +
                                 std::to_string(env) + ".pgm";
        vase::save_traversal_grid(path, grid);
        std::cout << "render: " << path << " (" << grid.rows << " latents x " << grid.cols
                  << " sweep points)\n";
    }
    return kExitOk;
}

int do_report(const std::string& run_dir) {
    vase::ExperimentConfig cfg = vase::load_config(run_dir + "/config.ini");
    const auto schedule = cfg.make_schedule();
    std::ifstream is(run_dir + "/probe_metrics.csv");
    vase::check(is.good(), "report: cannot open " + run_dir + "/probe_metrics.csv");
    std::string line;
    std::getline(is, line);  // header
    std::vector<vase::EnvTrajectory> obj, pos;
    auto traj = [](std::vector<vase::EnvTrajectory>& list, int env) -> vase::EnvTrajectory& {
        for (auto& t : list)
            if (t.env == env) return t;
        list.push_back({env, {}});
        return list.back();
    };
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string step_s, seg_s, task, metric, value_s;
        std::getline(ss, step_s, ',');
        std::getline(ss, seg_s, ',');
        std::getline(ss, task, ',');
        std::getline(ss, metric, ',');
        std::getline(ss, value_s, ',');
        if (value_s.empty()) continue;
        const long step = std::stol(step_s);
        const int seg = std::stoi(seg_s);
        const double value = std::stod(value_s);
        if (task == "object") traj(obj, seg).points.push_back({step, value});
        else if (task == "position") traj(pos, seg).points.push_back({step, value});
    }
    auto obj_report = vase::forgetting_summary(obj, schedule, vase::MetricKind::Accuracy);
    auto pos_report = vase::forgetting_summary(pos, schedule, vase::MetricKind::Mse);
    std::cout << "object-id accuracy: max " << obj_report.mean_best << ", change "
              << obj_report.mean_change << " over " << obj_report.contributing
              << " environments\n";
    for (const auto& e : obj_report.environments) {
        if (e.valid)
            std::cout << "  env " << e.env << ": max " << e.best_during << " -> after "
                      << e.worst_after << " (change " << e.change << ")\n";
        else
            std::cout << "  env " << e.env << ": " << e.note << "\n";
    }
    if (pos_report.contributing > 0)
        std::cout << "position mse: min " << pos_report.mean_best << ", change "
                  << pos_report.mean_change << " over " << pos_report.contributing
                  << " environments\n";
    return kExitOk;
}

template <typename S>
int do_factors(const vase::ExperimentConfig& cfg, int segment, long count,
               const std::string& out_path) {
    const auto schedule = cfg.make_schedule();
    vase::StreamGenerator<S> stream(schedule, cfg.seed);
    std::ofstream os(out_path);
    vase::check(os.good(), "factors: cannot open " + out_path);
    os << "index,segment,shape_id,x,y,size,intensity\n";
    long written = 0;
    for (long key = 0; written < count; ++key) {
        auto batch =
            stream.segment_batch(segment, key, std::min<vase::Index>(256, count - written));
        for (const auto& f : batch.factors) {
            os << written++ << ',' << f.segment << ',' << f.shape_id << ',' << f.x << ',' << f.y
               << ',' << f.size << ',' << f.intensity << "\n";
            if (written >= count) break;
        }
    }
    std::cout << "factors: wrote " << written << " rows to " << out_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"life-long variational representation learning over piecewise-stationary "
                 "image streams"};
    app.require_subcommand(1);

    std::string config_path, run_dir, out_path = "factors.csv";
    std::uint64_t seed_override = 0;
    std::string out_override;
    int segment = 0;
    long count = 1000;
    std::string cells_arg = "SDA,SD,S,-";
    std::string seeds_arg = "1,2,3,4,5";
    std::string modes_arg = "disentangled";

    auto* run_cmd = app.add_subcommand("run", "train one configuration");
    run_cmd->add_option("config", config_path, "config file")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed_override, "override [run] seed");
    run_cmd->add_option("--out", out_override, "override [run] out directory");

    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    ablate_cmd->add_option("config", config_path, "config file")->required();
    ablate_cmd->add_option("--cells", cells_arg, "comma list of flag labels (e.g. SDA,SD,-)");
    ablate_cmd->add_option("--seeds", seeds_arg, "comma list of seeds");
    ablate_cmd->add_option("--modes", modes_arg, "disentangled,entangled");
    ablate_cmd->add_option("--out", out_override, "override [run] out directory");

    auto* render_cmd = app.add_subcommand("render", "latent traversal grids for a finished run");
    render_cmd->add_option("run_dir", run_dir, "run directory")->required();

    auto* report_cmd = app.add_subcommand("report", "forgetting report for a finished run");
    report_cmd->add_option("run_dir", run_dir, "run directory")->required();

    auto* factors_cmd = app.add_subcommand("factors", "export ground-truth factors as CSV");
    factors_cmd->add_option("config", config_path, "config file")->required();
    factors_cmd->add_option("--segment", segment, "schedule segment");
    factors_cmd->add_option("--count", count, "rows to write");
    factors_cmd->add_option("--out", out_path, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed() || ablate_cmd->parsed() || factors_cmd->parsed()) {
            vase::ExperimentConfig cfg = vase::load_config(config_path);
            if (seed_opt->count() > 0) cfg.seed = seed_override;
            if (!out_override.empty()) cfg.out_dir = out_override;

            if (run_cmd->parsed()) {
                return cfg.precision == "float64" ? do_run<double>(cfg) : do_run<float>(cfg);
            }
            if (factors_cmd->parsed()) {
                return cfg.precision == "float64"
                           ? do_factors<double>(cfg, segment, count, out_path)
                           : do_factors<float>(cfg, segment, count, out_path);
            }
            std::vector<vase::AblationCell> cells;
            std::stringstream cs(cells_arg);
            std::string tok;
            std::vector<std::string> labels;
            while (std::getline(cs, tok, ',')) labels.push_back(tok);
            std::stringstream ms(modes_arg);
            while (std::getline(ms, tok, ',')) {
                vase::LossMode mode = tok == "entangled" ? vase::LossMode::Entangled
                                                         : vase::LossMode::Disentangled;
                for (const auto& l : labels)
                    cells.push_back({vase::AblationFlags::from_label(l), mode});
            }
            std::vector<std::uint64_t> seeds;
            std::stringstream ss(seeds_arg);
            while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
            auto summaries = cfg.precision == "float64"
                                 ? vase::ablation_run<double>(cfg, cells, seeds)
                                 : vase::ablation_run<float>(cfg, cells, seeds);
            for (const auto& s : summaries)
                std::cout << s.cell.name() << ": acc max " << s.acc_max_mean << " (+-"
                          << s.acc_max_sd << "), change " << s.acc_change_mean << " (+-"
                          << s.acc_change_sd << ")\n";
            return kExitOk;
        }
        if (render_cmd->parsed()) {
            vase::ExperimentConfig cfg = vase::load_config(run_dir + "/config.ini");
            return cfg.precision == "float64" ? do_render<double>(run_dir)
                                              : do_render<float>(run_dir);
        }
        if (report_cmd->parsed()) return do_report(run_dir);
    } catch (const vase::BadConfig& e) {
        std::cerr << "bad config: " << e.what() << "\n";
        return kExitBadConfig;
    } catch (const vase::CapacityExhausted& e) {
        std::cerr << "capacity exhausted: " << e.what() << "\n";
        return kExitCapacityExhausted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
