#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vase/capacity.hpp"
#include "vase/dreaming.hpp"
#include "vase/imagination.hpp"
#include "vase/masking.hpp"
#include "vase/networks.hpp"
#include "vase/registry.hpp"
#include "vase/streams.hpp"

namespace vase {

class BadConfig : public std::runtime_error {
public:
    explicit BadConfig(const std::string& msg) : std::runtime_error(msg) {}
};

struct AblationFlags {
    bool environment_inference = true;  // S
    bool dreaming = true;               // D
    bool mask_inference = true;         // A

    std::string label() const {
        std::string s;
        if (environment_inference) s += 'S';
        if (dreaming) s += 'D';
        if (mask_inference) s += 'A';
        return s.empty() ? "-" : s;
    }

    static AblationFlags from_label(const std::string& label) {
        AblationFlags f{false, false, false};
        if (label == "-") return f;
        for (char c : label) {
            if (c == 'S') f.environment_inference = true;
            else if (c == 'D') f.dreaming = true;
            else if (c == 'A') f.mask_inference = true;
            else throw BadConfig("unknown ablation flag '" + std::string(1, c) + "'");
        }
        return f;
    }
};

// Everything a run needs, resolvable from the line-oriented config text.
struct ExperimentConfig {
    // [run]
    std::string out_dir = "runs/exp";
    std::uint64_t seed = 1;
    std::string precision = "float32";  // float32 | float64

    // [data]
    std::string preset = "ablation3";
    long steps_per_segment = 10000;
    Index canvas = 32;
    Index sprite_px = 0;  // 0: derived from the canvas
    Index batch = 64;
    std::vector<SegmentSpec> inline_segments;  // overrides the preset when present

    // [model]
    ModelConfig model;

    // [loss]
    LossMode mode = LossMode::Disentangled;
    CapacitySchedule capacity;
    double beta = 1.0;

    // [masking]
    MaskThresholds thresholds;
    UsedComponentsOptions used;
    long used_refresh_every = 250;

    // [registry]
    RegistryConfig registry;

    // [dreaming]
    DreamConfig dream;

    // [flags]
    AblationFlags flags;

    // [optimizer]
    double lr = 6e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // [probes]
    bool probes_enabled = true;
    long probe_every = 1000;
    long probe_steps = 2000;
    Index probe_train_samples = 3072;
    Index probe_eval_samples = 768;

    // [imagination]
    bool imagination = false;
    double augment_fraction = 0.5;
    bool full_prior_targets = false;
    double positional_correlation = 0.5;
    PolicyConfig policy;

    // [output]
    long dump_dreams_every = 0;  // PGM grids of hallucinated batches; 0 disables

    StreamSchedule make_schedule() const {
        StreamSchedule s;
        if (!inline_segments.empty()) {
            s.canvas_h = s.canvas_w = canvas;
            s.sprite_px = sprite_px > 0 ? sprite_px : std::max<Index>(8, (canvas * 7) / 16);
            s.segments = inline_segments;
        } else {
            s = make_preset(preset, canvas, steps_per_segment);
            if (sprite_px > 0) s.sprite_px = sprite_px;
        }
        return s;
    }
};

namespace configdet {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw BadConfig("bad boolean '" + v + "' for key " + key);
}

inline double parse_num(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw BadConfig("bad number '" + v + "' for key " + key);
    }
}

// segment = sprites:0,1,2 | move | 10000 [| augment] [| invert]
// segment = idx:images.idx,labels.idx | none | 5000
inline SegmentSpec parse_segment(const std::string& v) {
    std::vector<std::string> parts;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, '|')) parts.push_back(trim(item));
    if (parts.size() < 3) throw BadConfig("segment needs 'source | transform | steps': " + v);
    SegmentSpec seg;
    const std::string& src = parts[0];
    if (src.rfind("sprites:", 0) == 0) {
        seg.source = SourceKind::Sprites;
        std::stringstream ids(src.substr(8));
        std::string id;
        while (std::getline(ids, id, ','))
            seg.sprite_shapes.push_back(static_cast<int>(parse_num(trim(id), "segment")));
        if (seg.sprite_shapes.empty()) throw BadConfig("segment has no sprite ids: " + v);
    } else if (src.rfind("idx:", 0) == 0) {
        seg.source = SourceKind::Idx;
        const std::string paths = src.substr(4);
        const auto comma = paths.find(',');
        seg.idx_images = trim(comma == std::string::npos ? paths : paths.substr(0, comma));
        if (comma != std::string::npos) seg.idx_labels = trim(paths.substr(comma + 1));
    } else {
        throw BadConfig("segment source must be sprites: or idx:, got " + v);
    }
    for (const std::string& t : {parts[1]}) {
        if (t == "move") seg.move = true;
        else if (t == "invert") seg.invert = true;
        else if (t == "move+invert" || t == "invert+move") seg.move = seg.invert = true;
        else if (t != "none") throw BadConfig("unknown transform '" + t + "'");
    }
    seg.budget = static_cast<long>(parse_num(parts[2], "segment"));
    if (seg.budget <= 0) throw BadConfig("segment budget must be positive: " + v);
    for (size_t i = 3; i < parts.size(); ++i) {
        if (parts[i] == "augment") seg.augment = true;
        else if (!parts[i].empty()) throw BadConfig("unknown segment option '" + parts[i] + "'");
    }
    return seg;
}

}  // namespace configdet

inline ExperimentConfig parse_config_text(const std::string& text) {
    using configdet::parse_bool;
    using configdet::parse_num;
    using configdet::trim;

    ExperimentConfig cfg;
    bool lambda0_set = false, lambda1_set = false;
    std::string section;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw BadConfig("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw BadConfig("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string qual = section + "." + key;

        if (qual == "run.out") cfg.out_dir = value;
        else if (qual == "run.seed") cfg.seed = static_cast<std::uint64_t>(parse_num(value, qual));
        else if (qual == "run.precision") {
            if (value != "float32" && value != "float64")
                throw BadConfig("run.precision must be float32 or float64");
            cfg.precision = value;
        }
        else if (qual == "data.preset") cfg.preset = value;
        else if (qual == "data.steps_per_segment")
            cfg.steps_per_segment = static_cast<long>(parse_num(value, qual));
        else if (qual == "data.canvas") cfg.canvas = static_cast<Index>(parse_num(value, qual));
        else if (qual == "data.sprite_px")
            cfg.sprite_px = static_cast<Index>(parse_num(value, qual));
        else if (qual == "data.batch") cfg.batch = static_cast<Index>(parse_num(value, qual));
        else if (qual == "data.segment")
            cfg.inline_segments.push_back(configdet::parse_segment(value));
        else if (qual == "model.latent_dim")
            cfg.model.latent_dim = static_cast<int>(parse_num(value, qual));
        else if (qual == "model.hidden") cfg.model.hidden = static_cast<int>(parse_num(value, qual));
        else if (qual == "model.max_environments")
            cfg.model.max_environments = static_cast<int>(parse_num(value, qual));
        else if (qual == "model.arch") {
            if (value == "mlp") cfg.model.arch = Arch::Mlp;
            else if (value == "conv") cfg.model.arch = Arch::Conv;
            else throw BadConfig("model.arch must be mlp or conv");
        }
        else if (qual == "model.likelihood") {
            if (value == "bernoulli") cfg.model.likelihood = Likelihood::Bernoulli;
            else if (value == "gaussian") cfg.model.likelihood = Likelihood::Gaussian;
            else throw BadConfig("model.likelihood must be bernoulli or gaussian");
        }
        else if (qual == "model.decoder_sigma") cfg.model.decoder_sigma = parse_num(value, qual);
        else if (qual == "loss.mode") {
            if (value == "disentangled") cfg.mode = LossMode::Disentangled;
            else if (value == "entangled") cfg.mode = LossMode::Entangled;
            else throw BadConfig("loss.mode must be disentangled or entangled");
        }
        else if (qual == "loss.gamma") cfg.capacity.gamma = parse_num(value, qual);
        else if (qual == "loss.c_max") cfg.capacity.c_max = parse_num(value, qual);
        else if (qual == "loss.delta_c") cfg.capacity.delta_c = parse_num(value, qual);
        else if (qual == "loss.beta") cfg.beta = parse_num(value, qual);
        else if (qual == "masking.lambda") cfg.thresholds.lambda = parse_num(value, qual);
        else if (qual == "masking.lambda0") { cfg.thresholds.lambda0 = parse_num(value, qual); lambda0_set = true; }
        else if (qual == "masking.lambda1") { cfg.thresholds.lambda1 = parse_num(value, qual); lambda1_set = true; }
        else if (qual == "masking.used_threshold") cfg.used.threshold = parse_num(value, qual);
        else if (qual == "masking.used_tolerance") cfg.used.tolerance = parse_num(value, qual);
        else if (qual == "masking.used_refresh_every")
            cfg.used_refresh_every = static_cast<long>(parse_num(value, qual));
        else if (qual == "registry.kappa") cfg.registry.kappa = parse_num(value, qual);
        else if (qual == "registry.ema_decay") cfg.registry.ema_decay = parse_num(value, qual);
        else if (qual == "registry.debounce")
            cfg.registry.debounce_window = static_cast<int>(parse_num(value, qual));
        else if (qual == "registry.candidate") {
            if (value == "classifier") cfg.registry.candidate_by_loss = false;
            else if (value == "argmin_loss") cfg.registry.candidate_by_loss = true;
            else throw BadConfig("registry.candidate must be classifier or argmin_loss");
        }
        else if (qual == "dreaming.tau") cfg.dream.tau = static_cast<long>(parse_num(value, qual));
        else if (qual == "dreaming.w_enc") cfg.dream.w_enc = parse_num(value, qual);
        else if (qual == "dreaming.w_dec") cfg.dream.w_dec = parse_num(value, qual);
        else if (qual == "dreaming.sample_pixels") cfg.dream.sample_pixels = parse_bool(value, qual);
        else if (qual == "flags.S") cfg.flags.environment_inference = parse_bool(value, qual);
        else if (qual == "flags.D") cfg.flags.dreaming = parse_bool(value, qual);
        else if (qual == "flags.A") cfg.flags.mask_inference = parse_bool(value, qual);
        else if (qual == "flags.ablation") cfg.flags = AblationFlags::from_label(value);
        else if (qual == "optimizer.lr") cfg.lr = parse_num(value, qual);
        else if (qual == "optimizer.beta1") cfg.adam_beta1 = parse_num(value, qual);
        else if (qual == "optimizer.beta2") cfg.adam_beta2 = parse_num(value, qual);
        else if (qual == "optimizer.epsilon") cfg.adam_eps = parse_num(value, qual);
        else if (qual == "probes.enabled") cfg.probes_enabled = parse_bool(value, qual);
        else if (qual == "probes.every") cfg.probe_every = static_cast<long>(parse_num(value, qual));
        else if (qual == "probes.steps") cfg.probe_steps = static_cast<long>(parse_num(value, qual));
        else if (qual == "probes.train_samples")
            cfg.probe_train_samples = static_cast<Index>(parse_num(value, qual));
        else if (qual == "probes.eval_samples")
            cfg.probe_eval_samples = static_cast<Index>(parse_num(value, qual));
        else if (qual == "imagination.enabled") cfg.imagination = parse_bool(value, qual);
        else if (qual == "imagination.augment_fraction")
            cfg.augment_fraction = parse_num(value, qual);
        else if (qual == "imagination.full_prior") cfg.full_prior_targets = parse_bool(value, qual);
        else if (qual == "imagination.positional_correlation")
            cfg.positional_correlation = parse_num(value, qual);
        else if (qual == "imagination.policy_hidden")
            cfg.policy.hidden = static_cast<int>(parse_num(value, qual));
        else if (qual == "imagination.policy_arch") {
            if (value == "mlp") cfg.policy.arch = Arch::Mlp;
            else if (value == "conv") cfg.policy.arch = Arch::Conv;
            else throw BadConfig("imagination.policy_arch must be mlp or conv");
        }
        else if (qual == "output.dump_dreams_every")
            cfg.dump_dreams_every = static_cast<long>(parse_num(value, qual));
        else
            throw BadConfig("line " + std::to_string(lineno) + ": unknown key '" + qual + "'");
    }

    if (!lambda0_set) cfg.thresholds.lambda0 = cfg.thresholds.lambda / 2.0;
    if (!lambda1_set) cfg.thresholds.lambda1 = cfg.thresholds.lambda * 2.0;
    cfg.thresholds.validate();
    if (cfg.model.latent_dim <= 0 || cfg.batch <= 1) throw BadConfig("degenerate model/batch size");
    if (cfg.registry.max_environments != cfg.model.max_environments)
        cfg.registry.max_environments = cfg.model.max_environments;
    cfg.model.image_h = cfg.model.image_w = static_cast<int>(cfg.canvas);
    const auto sched = cfg.make_schedule();  // validates preset / segments
    (void)sched;
    // policy shift range: keep translations inside the legal paste range
    cfg.policy.max_shift_x = std::max(1.0, (cfg.canvas - (cfg.sprite_px > 0
                                                              ? cfg.sprite_px
                                                              : std::max<Index>(8, (cfg.canvas * 7) / 16))) /
                                               2.0);
    cfg.policy.max_shift_y = cfg.policy.max_shift_x;
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw BadConfig("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

// Serialises the resolved configuration back to the text format, so a run
// directory is self-describing.
inline std::string config_to_text(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "[run]\nout = " << c.out_dir << "\nseed = " << c.seed
       << "\nprecision = " << c.precision << "\n\n";
    os << "[data]\n";
    if (c.inline_segments.empty()) {
        os << "preset = " << c.preset << "\nsteps_per_segment = " << c.steps_per_segment << "\n";
    } else {
        for (const auto& s : c.inline_segments) {
            os << "segment = ";
            if (s.source == SourceKind::Sprites) {
                os << "sprites:";
                for (size_t i = 0; i < s.sprite_shapes.size(); ++i)
                    os << (i ? "," : "") << s.sprite_shapes[i];
            } else {
                os << "idx:" << s.idx_images;
                if (!s.idx_labels.empty()) os << "," << s.idx_labels;
            }
            os << " | "
               << (s.move && s.invert ? "move+invert"
                                      : (s.move ? "move" : (s.invert ? "invert" : "none")))
               << " | " << s.budget;
            if (s.augment) os << " | augment";
            os << "\n";
        }
    }
    os << "canvas = " << c.canvas << "\nbatch = " << c.batch;
    if (c.sprite_px > 0) os << "\nsprite_px = " << c.sprite_px;
    os << "\n\n[model]\nlatent_dim = " << c.model.latent_dim << "\nhidden = " << c.model.hidden
       << "\nmax_environments = " << c.model.max_environments
       << "\narch = " << (c.model.arch == Arch::Mlp ? "mlp" : "conv") << "\nlikelihood = "
       << (c.model.likelihood == Likelihood::Bernoulli ? "bernoulli" : "gaussian")
       << "\ndecoder_sigma = " << c.model.decoder_sigma << "\n\n";
    os << "[loss]\nmode = " << (c.mode == LossMode::Disentangled ? "disentangled" : "entangled")
       << "\ngamma = " << c.capacity.gamma << "\nc_max = " << c.capacity.c_max
       << "\ndelta_c = " << c.capacity.delta_c << "\nbeta = " << c.beta << "\n\n";
    os << "[masking]\nlambda = " << c.thresholds.lambda << "\nlambda0 = " << c.thresholds.lambda0
       << "\nlambda1 = " << c.thresholds.lambda1 << "\nused_threshold = " << c.used.threshold
       << "\nused_tolerance = " << c.used.tolerance
       << "\nused_refresh_every = " << c.used_refresh_every << "\n\n";
    os << "[registry]\nkappa = " << c.registry.kappa << "\nema_decay = " << c.registry.ema_decay
       << "\ndebounce = " << c.registry.debounce_window << "\ncandidate = "
       << (c.registry.candidate_by_loss ? "argmin_loss" : "classifier") << "\n\n";
    os << "[dreaming]\ntau = " << c.dream.tau << "\nw_enc = " << c.dream.w_enc
       << "\nw_dec = " << c.dream.w_dec << "\nsample_pixels = "
       << (c.dream.sample_pixels ? "true" : "false") << "\n\n";
    os << "[flags]\nablation = " << c.flags.label() << "\n\n";
    os << "[optimizer]\nlr = " << c.lr << "\nbeta1 = " << c.adam_beta1
       << "\nbeta2 = " << c.adam_beta2 << "\nepsilon = " << c.adam_eps << "\n\n";
    os << "[probes]\nenabled = " << (c.probes_enabled ? "true" : "false")
       << "\nevery = " << c.probe_every << "\nsteps = " << c.probe_steps
       << "\ntrain_samples = " << c.probe_train_samples
       << "\neval_samples = " << c.probe_eval_samples << "\n\n";
    os << "[imagination]\nenabled = " << (c.imagination ? "true" : "false")
       << "\naugment_fraction = " << c.augment_fraction << "\nfull_prior = "
       << (c.full_prior_targets ? "true" : "false")
       << "\npositional_correlation = " << c.positional_correlation
       << "\npolicy_hidden = " << c.policy.hidden << "\npolicy_arch = "
       << (c.policy.arch == Arch::Mlp ? "mlp" : "conv") << "\n\n";
    os << "[output]\ndump_dreams_every = " << c.dump_dreams_every << "\n";
    return os.str();
}

}  // namespace vase
