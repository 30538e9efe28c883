#pragma once

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vase/adam.hpp"
#include "vase/config.hpp"
#include "vase/dreaming.hpp"
#include "vase/imagination.hpp"
#include "vase/losses.hpp"
#include "vase/masking.hpp"
#include "vase/probes.hpp"
#include "vase/registry.hpp"
#include "vase/streams.hpp"
#include "vase/traversals.hpp"

namespace vase {

enum class RunStatus : int {
    Ok = 0,
    BadConfigError = 2,
    CapacityExhaustedError = 3,
    NanAbort = 4,
};

inline std::string resolve_out_dir(const std::string& out_dir) {
    const char* root = std::getenv("VASE_OUT_ROOT");
    if (root != nullptr && *root != '\0')
        return (std::filesystem::path(root) / out_dir).string();
    return out_dir;
}

namespace metricdet {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace metricdet

// One full training run over the configured schedule: environment
// inference, masking, capacity-annealed loss, replay, the auxiliary
// classifier, the optional imagination policy, and all artifact emission.
template <typename S>
class Trainer {
public:
    explicit Trainer(ExperimentConfig cfg)
        : cfg_(std::move(cfg)),
          schedule_(cfg_.make_schedule()),
          stream_(schedule_, cfg_.seed),
          registry_(cfg_.registry),
          out_dir_(resolve_out_dir(cfg_.out_dir)) {
        Rng init(cfg_.seed * 0x9e3779b9ULL + 17);
        nets_ = VaseNetworks<S>(cfg_.model, init);
        if (cfg_.imagination) policy_ = TranslationPolicy<S>(cfg_.policy, cfg_.model, init);

        std::vector<TensorT<S>> main_list;
        for (auto& p : nets_.main_params()) main_list.push_back(p.tensor);
        opt_main_.emplace(main_list, static_cast<S>(cfg_.lr), static_cast<S>(cfg_.adam_beta1),
                          static_cast<S>(cfg_.adam_beta2), static_cast<S>(cfg_.adam_eps));
        std::vector<TensorT<S>> cls_list;
        for (auto& p : nets_.classifier_params()) cls_list.push_back(p.tensor);
        opt_cls_.emplace(cls_list, static_cast<S>(cfg_.lr), static_cast<S>(cfg_.adam_beta1),
                         static_cast<S>(cfg_.adam_beta2), static_cast<S>(cfg_.adam_eps));
        if (cfg_.imagination) {
            std::vector<TensorT<S>> pol_list;
            for (auto& p : policy_.params()) pol_list.push_back(p.tensor);
            opt_policy_.emplace(pol_list, static_cast<S>(cfg_.lr),
                                static_cast<S>(cfg_.adam_beta1), static_cast<S>(cfg_.adam_beta2),
                                static_cast<S>(cfg_.adam_eps));
        }
    }

    const std::string& out_dir() const { return out_dir_; }
    VaseNetworks<S>& nets() { return nets_; }
    Registry& registry() { return registry_; }
    TranslationPolicy<S>& policy() { return policy_; }
    const StreamSchedule& schedule() const { return schedule_; }

    RunStatus run() {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir_);
        {
            std::ofstream cfg_out(out_dir_ + "/config.ini");
            cfg_out << config_to_text(cfg_);
        }
        metrics_.open(out_dir_ + "/metrics.csv");
        events_.open(out_dir_ + "/events.jsonl");
        probe_csv_.open(out_dir_ + "/probe_metrics.csv");
        corr_csv_.open(out_dir_ + "/correlations.csv");
        check(metrics_.good() && events_.good() && probe_csv_.good() && corr_csv_.good(),
              "run: cannot create output files under " + out_dir_);
        write_metric_header();
        probe_csv_ << "step,segment,task,metric,value\n";
        corr_csv_ << "step,segment";
        for (int n = 0; n < cfg_.model.latent_dim; ++n) corr_csv_ << ",rho_x_" << n;
        for (int n = 0; n < cfg_.model.latent_dim; ++n) corr_csv_ << ",rho_y_" << n;
        corr_csv_ << "\n";

        const long total = schedule_.total_steps();
        RunStatus status = RunStatus::Ok;
        try {
            for (long step = 0; step < total; ++step) {
                if (!train_step(step)) {
                    status = RunStatus::NanAbort;
                    break;
                }
            }
        } catch (const CapacityExhausted& e) {
            emit_event({{"type", "abort"}, {"step", last_step_}, {"reason", "capacity-exhausted"},
                        {"detail", e.what()}});
            status = RunStatus::CapacityExhaustedError;
        }

        if (status == RunStatus::Ok) {
            save_checkpoint_file("checkpoint_final.vase1");
            write_registry_json();
            write_summary_json();
        }
        metrics_.flush();
        events_.flush();
        probe_csv_.flush();
        corr_csv_.flush();
        return status;
    }

    // Generates the same data the run would see for one segment, including
    // imagination-driven augmentation when the segment requests it.
    LabeledBatch<S> make_eval_batch(int segment, long draw_key, Index count) {
        LabeledBatch<S> batch = stream_.segment_batch(segment, draw_key, count);
        maybe_augment(batch, /*step=*/draw_key, /*eval=*/true);
        return batch;
    }

    std::vector<int> positional_dims() const { return positional_dims_; }

private:
    struct StepLog {
        int env = 0;
        int candidate = 0;
        bool allocated = false;
        double recon = 0.0;
        double kl_total = 0.0;
        double capacity = 0.0;
        double dream = 0.0;
        double dream_enc = 0.0;
        double dream_dec = 0.0;
        double cls_loss = 0.0;
        double cls_acc = 0.0;
        double running_loss = 0.0;
        double total = 0.0;
        VecX<double> kl_per_dim;
        VecX<double> alpha;
        std::string mask_bits;
    };

    void write_metric_header() {
        metrics_ << "# vase-metrics-v1\n";
        metrics_ << "step,env,candidate,allocated,recon,kl_total,capacity,dream,dream_enc,"
                    "dream_dec,cls_loss,cls_acc,running_loss,total,mask";
        for (int n = 0; n < cfg_.model.latent_dim; ++n) metrics_ << ",kl_" << n;
        for (int n = 0; n < cfg_.model.latent_dim; ++n) metrics_ << ",alpha_" << n;
        metrics_ << "\n";
    }

    void emit_event(nlohmann::json j) {
        events_ << j.dump() << "\n";
        check(events_.good(), "run: event log write failed (disk full?)");
    }

    void maybe_sync_snapshot(long step, bool forced) {
        if (!cfg_.flags.dreaming) return;
        if (!forced && step % cfg_.dream.tau != 0) return;
        snapshot_.sync(nets_, registry_.count(), step);
        emit_event({{"type", "sync"}, {"step", step}, {"forced", forced},
                    {"environments", registry_.count()}});
    }

    void maybe_augment(LabeledBatch<S>& batch, long step, bool eval) {
        if (!cfg_.imagination) return;
        const auto& seg = schedule_.segments[static_cast<size_t>(batch.segment)];
        if (!seg.augment || positional_dims_.empty()) return;
        NoGradGuard ng;
        auto enc = nets_.encode(batch.images);
        Rng rng = Rng::for_stream(cfg_.seed ^ 0x61756721ULL,
                                  static_cast<std::uint64_t>(step) * 2 + (eval ? 1 : 0));
        TensorT<S> z_star = make_latent_targets(enc.mu, positional_dims_,
                                                cfg_.full_prior_targets, rng);
        auto [mx, my] = stream_.max_offsets(schedule_.sprite_px, schedule_.sprite_px);
        augment_batch(policy_, nets_, batch, cfg_.augment_fraction, z_star, mx, my);
    }

    // One optimisation step; returns false on a non-finite loss.
    bool train_step(long step) {
        last_step_ = step;
        StepLog log;
        maybe_sync_snapshot(step, /*forced=*/false);

        auto batch_opt = stream_.next_batch(step, cfg_.batch);
        check(batch_opt.has_value(), "run: stream exhausted at step " + std::to_string(step));
        LabeledBatch<S> batch = *batch_opt;
        maybe_augment(batch, step, /*eval=*/false);

        // Single graph-recording encode reused for masks, inference and loss.
        auto enc = nets_.encode(batch.images);
        auto posterior = enc.posterior();

        // ---- atypicality and the batch mask
        const int prev_env = registry_.count() > 0 ? registry_.current() : -1;
        LatentMask batch_mask;
        VecX<double> alpha = VecX<double>::Zero(cfg_.model.latent_dim);
        if (cfg_.flags.mask_inference) {
            auto [m, v] = marginal_moments(posterior);
            alpha = atypicality(m, v);
            const LatentMask* prev_mask = nullptr;
            if (prev_env >= 0) prev_mask = &registry_.record(prev_env).mask_signature;
            batch_mask = infer_mask(alpha, prev_mask ? *prev_mask : LatentMask{}, cfg_.thresholds);
        } else {
            batch_mask = LatentMask::all_ones(cfg_.model.latent_dim);
            batch_mask.alpha = alpha;
        }

        // ---- environment inference
        InferenceDecision decision;
        if (cfg_.flags.environment_inference || registry_.count() == 0) {
            std::optional<int> candidate;
            if (registry_.count() > 0) {
                NoGradGuard ng;
                auto logits = nets_.classifier_logits(enc.hidden);
                auto probs = softmax_rows(logits);
                VecX<double> mean_probs = VecX<double>::Zero(cfg_.model.max_environments);
                for (Index b = 0; b < cfg_.batch; ++b)
                    for (int k = 0; k < cfg_.model.max_environments; ++k)
                        mean_probs(k) += static_cast<double>(
                            probs.values()(b * cfg_.model.max_environments + k));
                mean_probs /= static_cast<double>(cfg_.batch);
                candidate = registry_.classify_env(mean_probs);
            }
            auto loss_for = [&](int s) { return recon_value_under(batch, enc, s, step); };
            decision = registry_.infer_environment(batch_mask, loss_for, candidate);
            if (!cfg_.flags.environment_inference) registry_.set_current(0);
        } else {
            decision.env = 0;
            decision.candidate = 0;
            registry_.set_current(0);
        }
        int env = cfg_.flags.environment_inference ? decision.env : 0;

        if (decision.allocated) {
            // fresh environment: no hysteresis context yet
            batch_mask = cfg_.flags.mask_inference
                             ? infer_mask(alpha, LatentMask{}, cfg_.thresholds)
                             : LatentMask::all_ones(cfg_.model.latent_dim);
            registry_.record(env).mask_signature = batch_mask;
            maybe_sync_snapshot(step, /*forced=*/true);
        } else if (env != prev_env && prev_env >= 0) {
            // revisit of an existing environment: hysteresis against its memory
            if (cfg_.flags.mask_inference)
                batch_mask =
                    infer_mask(alpha, registry_.record(env).mask_signature, cfg_.thresholds);
        }
        if (decision.allocated || (env != prev_env && prev_env >= 0)) {
            emit_event({{"type", decision.allocated ? "alloc" : "switch"},
                        {"step", step},
                        {"previous", prev_env},
                        {"inferred", env},
                        {"allocated", decision.allocated},
                        {"L_candidate", decision.candidate_loss},
                        {"L_tilde", decision.candidate_running_loss}});
        }
        registry_.record(env).mask_signature = batch_mask;

        // ---- current-data term
        ArrX<S> mask_arr = batch_mask.template as_array<S>();
        TensorT<S> noise = TensorT<S>::zeros({cfg_.batch, cfg_.model.latent_dim});
        Rng noise_rng = Rng::for_stream(cfg_.seed ^ 0x6e6f6973ULL,
                                        static_cast<std::uint64_t>(step));
        noise_rng.fill_normal(noise.values());
        auto z = masked_posterior_sample(enc.mu, enc.log_var, mask_arr, noise);
        auto likelihood = nets_.decode(z, env);
        auto terms = mdl_loss(batch.images, likelihood, enc.mu, enc.log_var, mask_arr, step,
                              cfg_.capacity, cfg_.model, cfg_.mode, cfg_.beta);

        // ---- replay term
        TensorT<S> total_loss = terms.loss;
        std::optional<HallucinatedBatch<S>> dream_batch;
        std::optional<DreamTerms<S>> dream_terms;
        if (cfg_.flags.dreaming && snapshot_.valid() && snapshot_.environments() >= 1) {
            Rng dream_rng = Rng::for_stream(cfg_.seed ^ 0x6472656dULL,
                                            static_cast<std::uint64_t>(step));
            dream_batch = hallucinate_batch(snapshot_, env, cfg_.batch, dream_rng,
                                            cfg_.dream.sample_pixels);
            if (dream_batch) {
                dream_terms = dream_loss(nets_, snapshot_, *dream_batch, cfg_.dream);
                total_loss = add(total_loss, dream_terms->loss);
                log.dream = static_cast<double>(dream_terms->loss.item());
                log.dream_enc = dream_terms->encoder_term;
                log.dream_dec = dream_terms->decoder_term;
                if (cfg_.dump_dreams_every > 0 && step % cfg_.dump_dreams_every == 0)
                    dump_dreams(step, *dream_batch);
            }
        }

        log.total = static_cast<double>(total_loss.item());
        if (!std::isfinite(log.total)) {
            // parameters have not been updated with the bad gradient yet
            save_checkpoint_file("checkpoint_last.vase1");
            write_registry_json();
            emit_event({{"type", "abort"}, {"step", step}, {"reason", "nan"}});
            return false;
        }

        opt_main_->zero_grad();
        total_loss.backward();
        opt_main_->step();

        // ---- auxiliary classifier (separate optimizer, stop-gradient input)
        {
            auto logits_cur = nets_.classifier_logits(enc.hidden);
            TensorT<S> cls_loss;
            if (dream_terms) {
                auto logits_hall = nets_.classifier_logits(dream_terms->live_hidden);
                cls_loss = env_classifier_loss(logits_cur, env, &logits_hall,
                                               dream_batch->source_env,
                                               cfg_.model.max_environments);
            } else {
                cls_loss = env_classifier_loss<S>(logits_cur, env, nullptr, 0,
                                                  cfg_.model.max_environments);
            }
            log.cls_loss = static_cast<double>(cls_loss.item());
            Index hits = 0;
            const Index k = cfg_.model.max_environments;
            for (Index b = 0; b < cfg_.batch; ++b) {
                Index best = 0;
                for (Index c = 1; c < k; ++c)
                    if (logits_cur.values()(b * k + c) > logits_cur.values()(b * k + best))
                        best = c;
                if (best == env) ++hits;
            }
            log.cls_acc = static_cast<double>(hits) / static_cast<double>(cfg_.batch);
            opt_cls_->zero_grad();
            cls_loss.backward();
            opt_cls_->step();
        }

        // ---- imagination policy (own optimizer; encoder grads discarded)
        if (cfg_.imagination) {
            Rng pol_rng = Rng::for_stream(cfg_.seed ^ 0x706f6c69ULL,
                                          static_cast<std::uint64_t>(step));
            TensorT<S> z_star = make_latent_targets(enc.mu, positional_dims_,
                                                    cfg_.full_prior_targets, pol_rng);
            auto agent = agent_loss(policy_, nets_, batch.images, z_star);
            opt_policy_->zero_grad();
            agent.loss.backward();
            opt_policy_->step();
            opt_main_->zero_grad();  // drop encoder grads deposited by the agent loss
        }

        // ---- bookkeeping
        log.recon = static_cast<double>(terms.recon.item());
        registry_.observe_loss(env, log.recon);
        log.running_loss = registry_.record(env).running_loss;

        if (cfg_.flags.mask_inference && cfg_.used_refresh_every > 0 &&
            step % cfg_.used_refresh_every == cfg_.used_refresh_every - 1) {
            refresh_used_components(batch, z, env, step);
        }

        log.env = env;
        log.candidate = decision.candidate;
        log.allocated = decision.allocated;
        log.kl_total = static_cast<double>(terms.kl_total.item());
        log.capacity = terms.capacity;
        log.alpha = alpha;
        {
            ArrX<S> ones = ArrX<S>::Ones(cfg_.model.latent_dim);
            auto kl_vec = kl_per_dim(posterior, ones);
            log.kl_per_dim = kl_vec.template cast<double>();
        }
        log.mask_bits.reserve(static_cast<size_t>(cfg_.model.latent_dim));
        for (Index n = 0; n < cfg_.model.latent_dim; ++n)
            log.mask_bits.push_back(batch_mask.bits(n) > 0.5 ? '1' : '0');
        write_metrics_row(step, log);

        if (cfg_.probes_enabled && step % cfg_.probe_every == cfg_.probe_every - 1)
            probe_checkpoint(step);

        return true;
    }

    // Reconstruction loss of the batch decoded under environment `s`,
    // sampling with that environment's stored mask (value only).
    double recon_value_under(const LabeledBatch<S>& batch, const EncodeResultT<S>& enc, int s,
                             long step) {
        NoGradGuard ng;
        ArrX<S> mask = registry_.record(s).mask_signature.bits.size() == cfg_.model.latent_dim
                           ? registry_.record(s).mask_signature.template as_array<S>()
                           : ArrX<S>::Ones(cfg_.model.latent_dim);
        TensorT<S> noise = TensorT<S>::zeros({cfg_.batch, cfg_.model.latent_dim});
        Rng rng = Rng::for_stream(cfg_.seed ^ 0x636865636bULL,
                                  static_cast<std::uint64_t>(step) * 8 +
                                      static_cast<std::uint64_t>(s));
        rng.fill_normal(noise.values());
        auto z = masked_posterior_sample(enc.mu, enc.log_var, mask, noise);
        auto p = nets_.decode(z, s);
        return static_cast<double>(recon_loss(batch.images, p, cfg_.model).item());
    }

    void refresh_used_components(const LabeledBatch<S>& batch, const TensorT<S>& z_train, int env,
                                 long step) {
        NoGradGuard ng;
        RowMat<S> z(cfg_.batch, cfg_.model.latent_dim);
        for (Index b = 0; b < cfg_.batch; ++b)
            for (Index n = 0; n < cfg_.model.latent_dim; ++n)
                z(b, n) = z_train.values()(b * cfg_.model.latent_dim + n);
        auto loss_fn = [&](const RowMat<S>& zz) {
            TensorT<S> zt = TensorT<S>::zeros({zz.rows(), zz.cols()});
            for (Index i = 0; i < zz.rows(); ++i)
                for (Index j = 0; j < zz.cols(); ++j) zt.values()(i * zz.cols() + j) = zz(i, j);
            auto p = nets_.decode(zt, env);
            return static_cast<double>(recon_loss(batch.images, p, cfg_.model).item());
        };
        Rng rng = Rng::for_stream(cfg_.seed ^ 0x75736564ULL, static_cast<std::uint64_t>(step));
        registry_.record(env).used = used_components<S>(z, loss_fn, cfg_.used, rng).bits;
    }

    void write_metrics_row(long step, const StepLog& log) {
        using metricdet::fmt;
        metrics_ << step << ',' << log.env << ',' << log.candidate << ','
                 << (log.allocated ? 1 : 0) << ',' << fmt(log.recon) << ',' << fmt(log.kl_total)
                 << ',' << fmt(log.capacity) << ',' << fmt(log.dream) << ','
                 << fmt(log.dream_enc) << ',' << fmt(log.dream_dec) << ',' << fmt(log.cls_loss)
                 << ',' << fmt(log.cls_acc) << ',' << fmt(log.running_loss) << ','
                 << fmt(log.total) << ',' << log.mask_bits;
        for (Index n = 0; n < log.kl_per_dim.size(); ++n) metrics_ << ',' << fmt(log.kl_per_dim(n));
        for (Index n = 0; n < log.alpha.size(); ++n) metrics_ << ',' << fmt(log.alpha(n));
        metrics_ << "\n";
        check(metrics_.good(), "run: metrics write failed (disk full?)");
    }

    void dump_dreams(long step, const HallucinatedBatch<S>& h) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir_ + "/dreams");
        Index gh = 0, gw = 0;
        auto grid = tile_batch(h.images, cfg_.model.image_h, cfg_.model.image_w, gh, gw);
        write_pgm(out_dir_ + "/dreams/step_" + std::to_string(step) + "_env_" +
                      std::to_string(h.source_env) + ".pgm",
                  grid, gh, gw);
    }

    // ---- probes ----------------------------------------------------------

    struct EncodedSet {
        RowMat<S> means;         // raw posterior means
        RowMat<S> masked_means;  // means gated by the model's inferred mask
        std::vector<FactorRecord> factors;
    };

    EncodedSet encode_set(int segment, long key, Index count) {
        NoGradGuard ng;
        EncodedSet out;
        out.means.resize(count, cfg_.model.latent_dim);
        out.factors.reserve(static_cast<size_t>(count));
        VecX<double> mean_probs = VecX<double>::Zero(cfg_.model.max_environments);
        Index row = 0;
        long chunk_key = key;
        while (row < count) {
            const Index n = std::min<Index>(256, count - row);
            LabeledBatch<S> b = make_eval_batch(segment, chunk_key++, n);
            auto enc = nets_.encode(b.images);
            for (Index i = 0; i < n; ++i) {
                for (Index j = 0; j < cfg_.model.latent_dim; ++j)
                    out.means(row + i, j) = enc.mu.values()(i * cfg_.model.latent_dim + j);
                out.factors.push_back(b.factors[static_cast<size_t>(i)]);
            }
            auto probs = softmax_rows(nets_.classifier_logits(enc.hidden));
            for (Index i = 0; i < n; ++i)
                for (int k = 0; k < cfg_.model.max_environments; ++k)
                    mean_probs(k) +=
                        static_cast<double>(probs.values()(i * cfg_.model.max_environments + k));
            row += n;
        }
        mean_probs /= static_cast<double>(count);

        out.masked_means = out.means;
        if (cfg_.flags.mask_inference && registry_.count() > 0) {
            auto cand = registry_.classify_env(mean_probs);
            if (cand) {
                const auto& sig = registry_.record(*cand).mask_signature;
                if (sig.bits.size() == cfg_.model.latent_dim) {
                    for (Index j = 0; j < cfg_.model.latent_dim; ++j)
                        if (sig.bits(j) < 0.5) out.masked_means.col(j).setZero();
                }
            }
        }
        return out;
    }

    void probe_checkpoint(long step) {
        const int segs = static_cast<int>(schedule_.segments.size());
        const int active = schedule_.segment_at(step);
        for (int seg = 0; seg < segs; ++seg) {
            if (seg > active) continue;  // future environment: nothing to measure yet
            EncodedSet data = encode_set(seg, step * 131 + seg, cfg_.probe_train_samples +
                                                                    cfg_.probe_eval_samples);
            // correlations on raw means
            VecX<double> tx(cfg_.probe_train_samples + cfg_.probe_eval_samples);
            VecX<double> ty(tx.size());
            for (Index i = 0; i < tx.size(); ++i) {
                tx(i) = data.factors[static_cast<size_t>(i)].x;
                ty(i) = data.factors[static_cast<size_t>(i)].y;
            }
            auto rx = probe_correlation(data.means, tx);
            auto ry = probe_correlation(data.means, ty);
            corr_csv_ << step << ',' << seg;
            for (Index n = 0; n < rx.size(); ++n) corr_csv_ << ',' << metricdet::fmt(rx(n));
            for (Index n = 0; n < ry.size(); ++n) corr_csv_ << ',' << metricdet::fmt(ry(n));
            corr_csv_ << "\n";

            if (seg == active && schedule_.segments[static_cast<size_t>(seg)].move)
                update_positional_dims(rx, ry);

            // object-identity probe on masked means
            ProbeData<S> train, eval;
            const Index tr = cfg_.probe_train_samples;
            const Index ev = cfg_.probe_eval_samples;
            train.latents = data.masked_means.topRows(tr);
            eval.latents = data.masked_means.bottomRows(ev);
            std::vector<int> class_of = class_remap(seg);
            bool classes_ok = true;
            train.classes.resize(static_cast<size_t>(tr));
            eval.classes.resize(static_cast<size_t>(ev));
            for (Index i = 0; i < tr + ev; ++i) {
                const int raw = data.factors[static_cast<size_t>(i)].shape_id;
                int mapped = -1;
                for (size_t c = 0; c < class_of.size(); ++c)
                    if (class_of[c] == raw) mapped = static_cast<int>(c);
                if (mapped < 0) classes_ok = false;
                if (i < tr) train.classes[static_cast<size_t>(i)] = std::max(0, mapped);
                else eval.classes[static_cast<size_t>(i - tr)] = std::max(0, mapped);
            }
            if (classes_ok && class_of.size() > 1) {
                ProbeConfig pc;
                pc.steps = cfg_.probe_steps;
                Rng prng = Rng::for_stream(cfg_.seed ^ 0x70726f62ULL,
                                           static_cast<std::uint64_t>(step) * 8 +
                                               static_cast<std::uint64_t>(seg));
                auto head = train_probe(train, ProbeTask::Classification, pc, prng);
                const double acc = evaluate_probe(head, eval);
                probe_csv_ << step << ',' << seg << ",object,accuracy," << metricdet::fmt(acc)
                           << "\n";
                trajectory(obj_traj_, seg).points.push_back({step, acc});
            }

            // position probe, only where position varies
            const auto& spec = schedule_.segments[static_cast<size_t>(seg)];
            if (spec.move || (spec.augment && cfg_.imagination)) {
                ProbeData<S> ptrain, peval;
                ptrain.latents = data.masked_means.topRows(tr);
                peval.latents = data.masked_means.bottomRows(ev);
                ptrain.targets.resize(tr, 2);
                peval.targets.resize(ev, 2);
                for (Index i = 0; i < tr + ev; ++i) {
                    const auto& f = data.factors[static_cast<size_t>(i)];
                    if (i < tr) {
                        ptrain.targets(i, 0) = static_cast<S>(f.x);
                        ptrain.targets(i, 1) = static_cast<S>(f.y);
                    } else {
                        peval.targets(i - tr, 0) = static_cast<S>(f.x);
                        peval.targets(i - tr, 1) = static_cast<S>(f.y);
                    }
                }
                ProbeConfig pc;
                pc.steps = cfg_.probe_steps;
                Rng prng = Rng::for_stream(cfg_.seed ^ 0x706f7342ULL,
                                           static_cast<std::uint64_t>(step) * 8 +
                                               static_cast<std::uint64_t>(seg));
                auto head = train_probe(ptrain, ProbeTask::Regression, pc, prng);
                const double mse = evaluate_probe(head, peval);
                probe_csv_ << step << ',' << seg << ",position,mse," << metricdet::fmt(mse)
                           << "\n";
                trajectory(pos_traj_, seg).points.push_back({step, mse});
            }
        }
        save_checkpoint_file("checkpoint_last.vase1");
    }

    std::vector<int> class_remap(int seg) const {
        const auto& spec = schedule_.segments[static_cast<size_t>(seg)];
        if (spec.source == SourceKind::Sprites) {
            std::vector<int> ids = spec.sprite_shapes;
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            return ids;
        }
        std::vector<int> ids(10);
        for (int i = 0; i < 10; ++i) ids[static_cast<size_t>(i)] = i;
        return ids;
    }

    void update_positional_dims(const VecX<double>& rx, const VecX<double>& ry) {
        positional_dims_.clear();
        for (Index n = 0; n < rx.size(); ++n)
            if (std::max(std::abs(rx(n)), std::abs(ry(n))) > cfg_.positional_correlation)
                positional_dims_.push_back(static_cast<int>(n));
    }

    static EnvTrajectory& trajectory(std::vector<EnvTrajectory>& list, int env) {
        for (auto& t : list)
            if (t.env == env) return t;
        list.push_back(EnvTrajectory{env, {}});
        return list.back();
    }

    void save_checkpoint_file(const std::string& name) {
        auto params = nets_.all_params();
        if (cfg_.imagination)
            for (auto& p : policy_.params()) params.push_back(p);
        save_checkpoint(out_dir_ + "/" + name, params);
    }

    void write_registry_json() {
        nlohmann::json j;
        j["count"] = registry_.count();
        j["current"] = registry_.count() > 0 ? registry_.current() : -1;
        auto records = nlohmann::json::array();
        for (int s = 0; s < registry_.count(); ++s) {
            const auto& r = registry_.record(s);
            nlohmann::json rec;
            rec["index"] = r.index;
            rec["running_loss"] = r.running_loss;
            rec["sample_count"] = r.sample_count;
            std::string bits, used;
            for (Index n = 0; n < r.mask_signature.bits.size(); ++n)
                bits.push_back(r.mask_signature.bits(n) > 0.5 ? '1' : '0');
            for (Index n = 0; n < r.used.size(); ++n)
                used.push_back(r.used(n) > 0.5 ? '1' : '0');
            rec["mask"] = bits;
            rec["used"] = used;
            records.push_back(rec);
        }
        j["records"] = records;
        std::ofstream os(out_dir_ + "/registry.json");
        os << j.dump(2) << "\n";
    }

    void write_summary_json() {
        nlohmann::json j;
        auto obj = forgetting_summary(obj_traj_, schedule_, MetricKind::Accuracy);
        auto pos = forgetting_summary(pos_traj_, schedule_, MetricKind::Mse);
        auto render = [](const ForgettingReport& r, bool accuracy) {
            nlohmann::json out;
            out[accuracy ? "max" : "min"] = r.mean_best;
            out["change"] = r.mean_change;
            out["environments_used"] = r.contributing;
            auto envs = nlohmann::json::array();
            for (const auto& e : r.environments) {
                nlohmann::json row;
                row["environment"] = e.env;
                row["valid"] = e.valid;
                if (e.valid) {
                    row[accuracy ? "max" : "min"] = e.best_during;
                    row["after"] = e.worst_after;
                    row["change"] = e.change;
                } else {
                    row["note"] = e.note;
                }
                envs.push_back(row);
            }
            out["per_environment"] = envs;
            return out;
        };
        j["object_id_accuracy"] = render(obj, true);
        j["position_mse"] = render(pos, false);
        j["ablation"] = cfg_.flags.label();
        j["loss_mode"] = cfg_.mode == LossMode::Disentangled ? "disentangled" : "entangled";
        j["seed"] = cfg_.seed;
        std::ofstream os(out_dir_ + "/summary.json");
        os << j.dump(2) << "\n";
    }

    ExperimentConfig cfg_;
    StreamSchedule schedule_;
    StreamGenerator<S> stream_;
    Registry registry_;
    std::string out_dir_;

    VaseNetworks<S> nets_;
    TranslationPolicy<S> policy_;
    ModelSnapshot<S> snapshot_;
    std::optional<AdamT<S>> opt_main_;
    std::optional<AdamT<S>> opt_cls_;
    std::optional<AdamT<S>> opt_policy_;

    std::vector<int> positional_dims_;
    std::vector<EnvTrajectory> obj_traj_;
    std::vector<EnvTrajectory> pos_traj_;

    std::ofstream metrics_, events_, probe_csv_, corr_csv_;
    long last_step_ = 0;
};

}  // namespace vase
