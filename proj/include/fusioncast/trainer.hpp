#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fusioncast/data.hpp"
#include "fusioncast/flow.hpp"
#include "fusioncast/metrics.hpp"
#include "fusioncast/model.hpp"

namespace fusioncast {

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// ---------------------------------------------------------------------------
// Loss: mean squared error over normalized intensities, differentiable.
// ---------------------------------------------------------------------------

inline Tensor sequence_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& target) {
    if (pred.size() != target.size() || pred.empty())
        throw ShapeError("sequence_mse: prediction and target frame counts differ");
    Tensor acc = Tensor::scalar(0);
    std::size_t n = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        const Tensor d = ew_sub(pred[f], target[f]);
        acc = ew_add(acc, sum_all(ew_mul(d, d)));
        n += pred[f].size();
    }
    return scale(acc, real(1) / static_cast<real>(n));
}

// ---------------------------------------------------------------------------
// Adam with bias correction and global-norm gradient clipping.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int batch = 4;
    int epochs = 20;
    double clip = 1.0;     // global gradient norm; <= 0 disables
    double tf_p0 = 0.5;    // teacher-forcing probability, annealed linearly to 0
    std::uint64_t seed = 1;
    int checkpoint_cadence = 0;  // extra periodic checkpoints every N epochs; 0 = best only
    int threads = 1;

    void validate() const {
        if (lr <= 0 || epochs < 1 || batch < 1) throw ConfigError("train config: lr > 0, epochs/batch >= 1 required");
    }
};

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Parameter*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const Parameter* p : params_) {
            m_.emplace_back(p->value.size(), real(0));
            v_.emplace_back(p->value.size(), real(0));
        }
    }

    int steps_taken() const { return t_; }

    void step() {
        double norm_sq = 0;
        for (const Parameter* p : params_) {
            for (std::size_t i = 0; i < p->grad.size(); ++i) {
                const double g = p->grad[i];
                if (!std::isfinite(g)) throw DataError("non-finite gradient in parameter " + p->name);
                norm_sq += g * g;
            }
        }
        const double norm = std::sqrt(norm_sq);
        const double rescale = (cfg_.clip > 0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Parameter* p = params_[pi];
            real* w = p->value.mutable_data();
            const real* g = p->grad.data();
            for (std::size_t i = 0; i < p->grad.size(); ++i) {
                const double gc = double(g[i]) * rescale;
                m_[pi][i] = static_cast<real>(cfg_.beta1 * m_[pi][i] + (1.0 - cfg_.beta1) * gc);
                v_[pi][i] = static_cast<real>(cfg_.beta2 * v_[pi][i] + (1.0 - cfg_.beta2) * gc * gc);
                const double m_hat = m_[pi][i] / bc1;
                const double v_hat = v_[pi][i] / bc2;
                w[i] -= static_cast<real>(cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

private:
    std::vector<Parameter*> params_;
    TrainConfig cfg_;
    std::vector<std::vector<real>> m_, v_;
    int t_ = 0;
};

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct Dataset {
    GridSpec grid;
    std::int64_t cadence = 600;
    std::vector<SampleWindow> train, val, test;
};

struct CorpusConfig {
    SynthParams synth;
    int train_scenes = 8, val_scenes = 2, test_scenes = 3;
    int t_in = 4, t_out = 12;
    // Adjacent windows overlap in all but one frame; subsampling training
    // anchors trades redundancy for more epochs in the same budget.
    int train_window_stride = 1;
    PriorParams prior;
};

// Interpolates per-epoch station records onto the scene grid.
inline FrameSequence grid_pwv_sequence(const std::vector<StationSeries>& stations,
                                       const std::vector<std::int64_t>& epochs, const GridSpec& spec,
                                       std::int64_t cadence, std::int64_t carry_s = 3600) {
    FrameSequence out;
    out.cadence = cadence;
    out.unit = Unit::Millimeters;
    for (const std::int64_t epoch : epochs) {
        std::vector<StationRecord> at_epoch;
        for (const StationSeries& s : stations) {
            // latest observation at or before the epoch, within the carry window
            std::optional<double> value;
            for (std::size_t i = s.epochs.size(); i-- > 0;) {
                if (s.epochs[i] <= epoch && epoch - s.epochs[i] <= carry_s) {
                    value = s.values[i];
                    break;
                }
                if (s.epochs[i] < epoch - carry_s) break;
            }
            if (value) at_epoch.push_back({s.station_id, s.lat, s.lon, epoch, *value});
        }
        out.frames.push_back(interpolate_pwv(at_epoch, spec));
        out.epochs.push_back(epoch);
    }
    return out;
}

inline PriorGenerator make_prior_generator(const PriorParams& base, std::uint64_t scene_seed) {
    return [base, scene_seed](const FrameSequence& hist, int t_out) {
        PriorParams p = base;
        if (p.perturb_sigma > 0)
            p.perturb_seed = mix64(scene_seed, static_cast<std::uint64_t>(hist.epochs.back()));
        return generate_prior(hist, t_out, p);
    };
}

// Builds an in-memory synthetic dataset: one scene per day, ordered scene
// ranges mapped to the train/val/test splits.
inline Dataset build_synthetic_dataset(std::uint64_t corpus_seed, const CorpusConfig& cfg) {
    Dataset data;
    data.grid.n = cfg.synth.n;
    data.cadence = cfg.synth.cadence;

    const int total = cfg.train_scenes + cfg.val_scenes + cfg.test_scenes;
    for (int k = 0; k < total; ++k) {
        SynthParams params = cfg.synth;
        params.start_epoch = cfg.synth.start_epoch + static_cast<std::int64_t>(k) * 86400;
        const SynthScene scene = synth_scene(mix64(corpus_seed, static_cast<std::uint64_t>(k)), params);

        const FrameSequence pwv =
            grid_pwv_sequence(scene.stations, scene.radar.epochs, scene.grid, scene.radar.cadence);
        auto windows = make_windows(scene.radar, pwv, nullptr,
                                    make_prior_generator(cfg.prior, mix64(corpus_seed, static_cast<std::uint64_t>(k))),
                                    cfg.t_in, cfg.t_out);
        const bool is_train = k < cfg.train_scenes;
        auto& split = is_train                                    ? data.train
                      : (k < cfg.train_scenes + cfg.val_scenes) ? data.val
                                                                : data.test;
        const std::size_t stride = is_train ? std::max(1, cfg.train_window_stride) : 1;
        for (std::size_t i = 0; i < windows.size(); i += stride) split.push_back(std::move(windows[i]));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Evaluation driver
// ---------------------------------------------------------------------------

struct EvalConfig {
    std::vector<double> thresholds{0.1, 1.0, 4.0};
    std::vector<int> lead_frames{1, 4, 8, 12};
    CsiAggregation agg = CsiAggregation::Pooled;
};

inline MetricsReport evaluate_model(const Model& model, const std::vector<SampleWindow>& windows,
                                    const EvalConfig& cfg) {
    if (windows.empty()) throw DataError("evaluate_model: no windows");
    std::vector<FrameSequence> preds, truths;
    preds.reserve(windows.size());
    for (const SampleWindow& w : windows) {
        preds.push_back(model.predict(InputBundle::from_window(w)));
        truths.push_back(w.target);
    }
    MetricsReport report = evaluate(preds, truths, cfg.thresholds, cfg.lead_frames, cfg.agg);
    report.variant = variant_name(model.config().variant);
    return report;
}

// ---------------------------------------------------------------------------
// Training loop: seeded, deterministic, batch-parallel with a fixed gradient
// reduction order.
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    std::optional<double> val_csi;  // pooled CSI at tau=1.0, lead frame 12
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    std::string checkpoint_path;
};

namespace detail {

struct SampleGrads {
    double loss = 0;
    std::vector<Tensor> grads;  // aligned with parameters()
};

inline SampleGrads run_sample(const Model& model, std::vector<Parameter*>& params, const SampleWindow& window,
                              double tf_prob, std::uint64_t mask_seed, real loss_scale) {
    // Teacher mask drawn per step from a stream independent of batch layout.
    const int t_out = model.config().t_out;
    std::vector<std::uint8_t> use_teacher(static_cast<std::size_t>(t_out), 0);
    std::vector<Tensor> teacher;
    if (tf_prob > 0) {
        Rng rng(mask_seed);
        for (int t = 0; t < t_out; ++t) use_teacher[static_cast<std::size_t>(t)] = uniform_unit(rng) < tf_prob;
        for (const Tensor& f : window.target.frames) teacher.push_back(normalize_radar(f));
    }

    std::vector<Tensor> target_norm;
    for (const Tensor& f : window.target.frames) target_norm.push_back(normalize_radar(f));

    SampleGrads out;
    Tape tape;
    {
        TapeScope scope(tape);
        const std::vector<Tensor> pred = model.forward_train(
            InputBundle::from_window(window), teacher.empty() ? nullptr : &teacher,
            teacher.empty() ? nullptr : &use_teacher);
        const Tensor loss = sequence_mse(pred, target_norm);
        out.loss = loss[0];
        tape.backward(scale(loss, loss_scale));
    }
    out.grads.reserve(params.size());
    for (Parameter* p : params) out.grads.push_back(tape.grad(p->value));
    return out;
}

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training log: " + path);
    out << "epoch,train_loss,val_loss,val_csi_tau1_t120\n";
    for (const EpochLog& e : log)
        out << e.epoch << ',' << fmt_fixed(e.train_loss) << ',' << fmt_fixed(e.val_loss) << ','
            << (e.val_csi ? fmt_fixed(*e.val_csi) : std::string("NA")) << '\n';
}

}  // namespace detail

inline TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& cfg,
                               const std::string& out_dir) {
    cfg.validate();
    if (data.train.empty()) throw DataError("train_model: no training windows");
    std::filesystem::create_directories(out_dir);

    std::vector<Parameter*> params = model.parameters();
    AdamOptimizer opt(params, cfg);

    const int t_out = model.config().t_out;
    EvalConfig val_eval;
    val_eval.thresholds = {1.0};
    val_eval.lead_frames = {t_out >= 12 ? 12 : t_out};

    TrainResult result;
    result.checkpoint_path = out_dir + "/checkpoint.fckp";
    double best_csi = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run's stream; identical across thread counts.
        Rng shuffle_rng(mix64(cfg.seed, 0xe90c * static_cast<std::uint64_t>(epoch) + 1));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng() % i]);

        const double anneal = cfg.epochs > 1 ? 1.0 - double(epoch) / double(cfg.epochs - 1) : 1.0;
        const double tf_prob = cfg.tf_p0 * anneal;

        double loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t bn = std::min<std::size_t>(cfg.batch, order.size() - base);
            std::vector<detail::SampleGrads> grads(bn);

            const auto worker = [&](std::size_t lane) {
                for (std::size_t k = lane; k < bn; k += static_cast<std::size_t>(std::max(1, cfg.threads))) {
                    const std::size_t wi = order[base + k];
                    grads[k] = detail::run_sample(model, params, data.train[wi], tf_prob,
                                                  mix64(cfg.seed, mix64(static_cast<std::uint64_t>(epoch), wi)),
                                                  real(1) / static_cast<real>(bn));
                }
            };
            if (cfg.threads > 1 && bn > 1) {
                std::vector<std::thread> pool;
                const std::size_t lanes = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), bn);
                for (std::size_t l = 0; l < lanes; ++l) pool.emplace_back(worker, l);
                for (auto& t : pool) t.join();
            } else {
                worker(0);
            }

            // Fixed-order reduction keeps results independent of scheduling.
            for (std::size_t k = 0; k < bn; ++k) {
                loss_sum += grads[k].loss;
                ++seen;
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    real* dst = params[pi]->grad.mutable_data();
                    const Tensor& src = grads[k].grads[pi];
                    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                }
            }
            opt.step();
            opt.zero_grad();
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(seen);
        if (!std::isfinite(entry.train_loss)) throw DataError("training diverged: non-finite loss");

        double val_loss_sum = 0;
        std::vector<FrameSequence> val_preds, val_truths;
        for (const SampleWindow& w : data.val) {
            const std::vector<Tensor> pred = model.forward(InputBundle::from_window(w));
            std::vector<Tensor> target_norm;
            for (const Tensor& f : w.target.frames) target_norm.push_back(normalize_radar(f));
            val_loss_sum += sequence_mse(pred, target_norm)[0];

            FrameSequence fp;
            fp.cadence = w.target.cadence;
            fp.unit = Unit::MillimetersPerHour;
            fp.epochs = w.target.epochs;
            for (const Tensor& f : pred) fp.frames.push_back(denormalize_radar(f));
            val_preds.push_back(std::move(fp));
            val_truths.push_back(w.target);
        }
        entry.val_loss = data.val.empty() ? 0 : val_loss_sum / static_cast<double>(data.val.size());
        if (!data.val.empty() && t_out >= 12) {
            const MetricsReport r = evaluate(val_preds, val_truths, {1.0}, {12}, CsiAggregation::Pooled);
            entry.val_csi = r.csi_values[0][0];
        }
        result.log.push_back(entry);

        // Best checkpoint by validation CSI at the headline cell, falling back
        // to validation loss when that cell is undefined.
        bool improved;
        if (entry.val_csi) {
            improved = *entry.val_csi > best_csi;
            if (improved) best_csi = *entry.val_csi;
        } else {
            improved = entry.val_loss < best_val_loss;
        }
        if (entry.val_loss < best_val_loss) best_val_loss = entry.val_loss;
        if (improved || result.best_epoch < 0) {
            result.best_epoch = epoch;
            save_checkpoint(result.checkpoint_path, params);
        }
        if (cfg.checkpoint_cadence > 0 && (epoch + 1) % cfg.checkpoint_cadence == 0)
            save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(epoch) + ".fckp", params);
    }

    detail::write_train_log(out_dir + "/train_log.csv", result.log);
    load_checkpoint(result.checkpoint_path, params);  // leave the model at its best epoch
    return result;
}

// ---------------------------------------------------------------------------
// Ablation harness: trains every variant on identical seeds/splits and pools
// the per-seed test reports.
// ---------------------------------------------------------------------------

struct AblationConfig {
    std::vector<Variant> variants = all_variants();
    int seeds = 5;
    std::uint64_t base_seed = 100;
    ModelConfig model;
    TrainConfig train;
    CorpusConfig corpus;
    EvalConfig eval;
};

struct AblationRun {
    Variant variant;
    int seed_index = 0;
    MetricsReport report;
};

struct AblationResult {
    std::vector<AblationRun> runs;

    std::vector<double> csi_series(Variant v, double tau, int lead) const {
        std::vector<double> out;
        for (const AblationRun& r : runs)
            if (r.variant == v)
                if (const auto c = r.report.csi_at(tau, lead)) out.push_back(*c);
        return out;
    }

    double mean_csi(Variant v, double tau, int lead) const {
        const auto xs = csi_series(v, tau, lead);
        if (xs.empty()) return 0;
        double acc = 0;
        for (double x : xs) acc += x;
        return acc / static_cast<double>(xs.size());
    }

    // Paired per-seed margins a-b at one report cell: mean and standard error.
    std::pair<double, double> margin(Variant a, Variant b, double tau, int lead) const {
        const auto xa = csi_series(a, tau, lead), xb = csi_series(b, tau, lead);
        const std::size_t k = std::min(xa.size(), xb.size());
        if (k == 0) return {0, 0};
        std::vector<double> d(k);
        double mean = 0;
        for (std::size_t i = 0; i < k; ++i) {
            d[i] = xa[i] - xb[i];
            mean += d[i];
        }
        mean /= static_cast<double>(k);
        if (k == 1) return {mean, 0};
        double var = 0;
        for (double x : d) var += (x - mean) * (x - mean);
        var /= static_cast<double>(k - 1);
        return {mean, std::sqrt(var / static_cast<double>(k))};
    }
};

inline AblationResult run_ablation(const AblationConfig& cfg, const std::string& out_dir,
                                   const std::function<void(const std::string&)>& progress = {}) {
    if (cfg.seeds < 1) throw ConfigError("run_ablation: seeds must be >= 1");
    std::filesystem::create_directories(out_dir);

    AblationResult result;
    for (int s = 0; s < cfg.seeds; ++s) {
        const std::uint64_t corpus_seed = mix64(cfg.base_seed, static_cast<std::uint64_t>(s));
        const Dataset data = build_synthetic_dataset(corpus_seed, cfg.corpus);

        for (const Variant v : cfg.variants) {
            ModelConfig mc = cfg.model;
            mc.variant = v;
            mc.grid = cfg.corpus.synth.n;
            mc.t_in = cfg.corpus.t_in;
            mc.t_out = cfg.corpus.t_out;

            // One weight-init/train seed per corpus seed, shared by variants.
            Model model(mc, mix64(cfg.base_seed, 0x5eedull + static_cast<std::uint64_t>(s)));
            TrainConfig tc = cfg.train;
            tc.seed = mix64(cfg.base_seed, 0x7271ull + static_cast<std::uint64_t>(s));

            const std::string run_dir =
                out_dir + "/seed" + std::to_string(s) + "_" + variant_name(v);
            if (progress) progress("seed " + std::to_string(s) + " variant " + variant_name(v));
            train_model(model, data, tc, run_dir);

            MetricsReport report = evaluate_model(model, data.test, cfg.eval);
            report.config_fingerprint = hex64(mix64(corpus_seed, static_cast<std::uint64_t>(v)));
            write_report(report, run_dir);
            result.runs.push_back({v, s, std::move(report)});
        }
    }

    // Comparison table per seed plus a cross-seed summary.
    for (int s = 0; s < cfg.seeds; ++s) {
        std::vector<MetricsReport> reports;
        for (const AblationRun& r : result.runs)
            if (r.seed_index == s) reports.push_back(r.report);
        write_comparison(reports, out_dir + "/comparison_seed" + std::to_string(s) + ".csv");
    }
    {
        std::ofstream out(out_dir + "/summary.csv");
        if (!out) throw IoError("cannot write ablation summary");
        out << "variant,threshold,lead_min,mean_csi,n_seeds\n";
        for (const Variant v : cfg.variants)
            for (double tau : cfg.eval.thresholds)
                for (int lead : cfg.eval.lead_frames) {
                    const auto xs = result.csi_series(v, tau, lead);
                    out << variant_name(v) << ',' << fmt_fixed(tau, 1) << ','
                        << lead * cfg.corpus.synth.cadence / 60 << ','
                        << fmt_fixed(result.mean_csi(v, tau, lead)) << ',' << xs.size() << '\n';
                }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient-check suite over every layer family and the end-to-end model.
// ---------------------------------------------------------------------------

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 0;
    std::string worst_param;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    bool all_pass = true;
};

namespace detail {

inline void add_case(GradCheckReport& report, const std::string& name, double tol,
                     const std::vector<Parameter*>& params, const std::function<Tensor()>& f,
                     double eps = 1e-5) {
    const GradCheckDetail d = finite_difference_report(params, f, eps);
    GradCheckCase c{name, d.max_rel_err, tol, d.worst_param, d.max_rel_err < tol};
    report.all_pass = report.all_pass && c.pass;
    report.cases.push_back(std::move(c));
}

inline Tensor random_uniform(Rng& rng, Shape shape, real lo = real(-1), real hi = real(1)) {
    Tensor t(std::move(shape));
    real* p = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = static_cast<real>(uniform_range(rng, lo, hi));
    return t;
}

}  // namespace detail

inline ModelConfig gradcheck_model_config() {
    ModelConfig cfg;
    cfg.grid = 16;
    cfg.t_in = 2;
    cfg.t_out = 2;
    cfg.pwv_conv1 = 2; cfg.pwv_conv2 = 4; cfg.pwv_hidden = 4;
    cfg.hist_conv1 = 2; cfg.hist_conv2 = 4; cfg.hist_hidden = 4;
    cfg.prior_conv1 = 2; cfg.prior_conv2 = 4; cfg.prior_hidden = 4;
    cfg.merge_channels = 4;
    cfg.dec_conv1 = 2; cfg.dec_conv2 = 4;
    cfg.dec_up1 = 4; cfg.dec_up2 = 4;
    return cfg;
}

// Builds one deterministic physical-unit bundle for the tiny model.
inline InputBundle gradcheck_bundle(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const auto frame = [&](real lo, real hi) {
        Tensor t({1, cfg.grid, cfg.grid});
        real* p = t.mutable_data();
        for (std::size_t i = 0; i < t.size(); ++i) p[i] = static_cast<real>(uniform_range(rng, lo, hi));
        return t;
    };
    InputBundle b;
    b.x_pwv.unit = Unit::Millimeters;
    b.x_radar_hist.unit = b.x_radar_prior.unit = Unit::MillimetersPerHour;
    for (int t = 0; t < cfg.t_in; ++t) {
        b.x_pwv.frames.push_back(frame(5, 60));
        b.x_pwv.epochs.push_back(600 * t);
        b.x_radar_hist.frames.push_back(frame(0, 6));
        b.x_radar_hist.epochs.push_back(600 * t);
    }
    for (int t = 0; t < cfg.t_out; ++t) {
        b.x_radar_prior.frames.push_back(frame(0, 6));
        b.x_radar_prior.epochs.push_back(600 * (cfg.t_in + t));
    }
    return b;
}

inline GradCheckReport gradcheck_suite() {
    GradCheckReport report;
    Rng rng(2024);

    {
        Conv2DLayer layer("conv2d", 2, 2, 3, 2, 1, rng);
        Parameter x("x", detail::random_uniform(rng, {2, 5, 5}));
        std::vector<Parameter*> ps{&x};
        layer.collect(ps);
        detail::add_case(report, "conv2d", 1e-4, ps, [&] { return mean_all(tanh(conv2d(x.value, layer))); });
    }
    {
        Deconv2DLayer layer("deconv2d", 2, 2, 4, 2, 1, rng);
        Parameter x("x", detail::random_uniform(rng, {2, 3, 3}));
        std::vector<Parameter*> ps{&x};
        layer.collect(ps);
        detail::add_case(report, "deconv2d", 1e-4, ps, [&] { return mean_all(tanh(deconv2d(x.value, layer))); });
    }
    {
        Parameter x("x", detail::random_uniform(rng, {3, 4, 4}));
        detail::add_case(report, "pooling", 1e-4, {&x}, [&] {
            return ew_add(sum_all(channel_pool(x.value)),
                          ew_add(sum_all(global_avg_pool(x.value)), sum_all(global_max_pool(x.value))));
        });
    }
    {
        SharedMLP mlp("mlp", 6, rng);
        Parameter v("v", detail::random_uniform(rng, {6}));
        std::vector<Parameter*> ps{&v};
        mlp.collect(ps);
        detail::add_case(report, "shared_mlp", 1e-4, ps, [&] { return sum_all(mlp_apply(v.value, mlp)); });
    }
    {
        ConvLSTMCell cell("convlstm", 2, 2, rng);
        Parameter x("x", detail::random_uniform(rng, {2, 4, 4}));
        Parameter h("h", detail::random_uniform(rng, {2, 4, 4}));
        Parameter c("c", detail::random_uniform(rng, {2, 4, 4}));
        std::vector<Parameter*> ps{&x, &h, &c};
        cell.collect(ps);
        detail::add_case(report, "convlstm_step", 1e-4, ps, [&] {
            const BranchState s = convlstm_step(x.value, h.value, c.value, cell);
            return sum_all(ew_add(s.h, s.c));
        });
    }
    {
        RpfGates gates("rpf", 2, true, rng);
        Parameter pwv("pwv", detail::random_uniform(rng, {2, 4, 4}));
        Parameter radar("radar", detail::random_uniform(rng, {2, 4, 4}));
        std::vector<Parameter*> ps{&pwv, &radar};
        gates.collect(ps);
        detail::add_case(report, "rpf_block", 1e-4, ps, [&] {
            return sum_all(rpf_fuse_one(pwv.value, radar.value, gates.spatial_h, gates.channel_h));
        });
    }
    {
        // Fixture seeds chosen away from ReLU kinks: central differences are
        // ill-posed when a pre-activation sits within eps of zero, and a tiny
        // ReLU model can also be born with its output head entirely dead.
        // The aliveness case guards against a vacuously passing check.
        const ModelConfig cfg = gradcheck_model_config();
        Model model(cfg, 2177);
        const InputBundle bundle = gradcheck_bundle(cfg, 2178);
        std::vector<Tensor> target;
        Rng trng(2179);
        for (int t = 0; t < cfg.t_out; ++t) {
            Tensor f({1, cfg.grid, cfg.grid});
            for (std::size_t i = 0; i < f.size(); ++i)
                f.mutable_data()[i] = static_cast<real>(uniform_range(trng, 0.0, 0.5));
            target.push_back(f);
        }

        double output_mass = 0;
        for (const Tensor& y : model.forward(bundle))
            for (std::size_t i = 0; i < y.size(); ++i) output_mass += y[i];
        GradCheckCase alive{"model_alive", output_mass > 0 ? 0.0 : 1.0, 0.5, "", output_mass > 0};
        report.all_pass = report.all_pass && alive.pass;
        report.cases.push_back(std::move(alive));

        std::vector<Parameter*> ps = model.parameters();
        detail::add_case(report, "model_end_to_end", 1e-3, ps,
                         [&] { return sequence_mse(model.forward(bundle), target); });
    }
    return report;
}

}  // namespace fusioncast
