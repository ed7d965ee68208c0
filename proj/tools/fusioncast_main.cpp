// Command-line front end: synthetic data generation, prior generation,
// training, evaluation, ablation, prediction, and the verification suites.
//
// Exit codes: 0 success, 1 verification/metric failure, 2 usage or config
// error, 3 I/O error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "fusioncast/config.hpp"
#include "fusioncast/dataset_io.hpp"
#include "fusioncast/verify.hpp"

namespace fs = std::filesystem;
using namespace fusioncast;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "key=value configuration file");
    cmd->add_option("--set", opts.overrides, "override a config key (key=value, repeatable)");
    cmd->add_option("--threads", opts.threads, "worker thread cap (default: min(4, hardware))");
}

RunConfig make_config(const CommonOpts& opts) {
    RunConfig rc;
    if (!opts.config_file.empty()) rc.load_file(opts.config_file);
    for (const std::string& kv : opts.overrides) rc.set_pair(kv);
    return rc;
}

int resolve_threads(const CommonOpts& opts) {
    if (opts.threads > 0) return opts.threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(4u, hw == 0 ? 1u : hw));
}

void require_data_dir(const std::string& dir) {
    if (!fs::exists(dir) || !fs::exists(dir + "/manifest.json"))
        throw ConfigError("data directory not found or missing manifest.json: " + dir);
}

LoadOptions load_options(const RunConfig& rc) {
    LoadOptions opt;
    opt.t_in = static_cast<int>(rc.integer("data.t_in"));
    opt.t_out = static_cast<int>(rc.integer("data.t_out"));
    opt.train_scenes = static_cast<int>(rc.integer("data.train_scenes"));
    opt.val_scenes = static_cast<int>(rc.integer("data.val_scenes"));
    opt.test_scenes = static_cast<int>(rc.integer("data.test_scenes"));
    opt.prior_mode = rc.str("data.prior_mode");
    opt.prior = rc.prior_params();
    opt.station_carry_s = rc.integer("data.station_carry_s");
    opt.station_min_availability = rc.num("data.station_min_availability");
    return opt;
}

const std::vector<SampleWindow>& pick_split(const Dataset& data, const std::string& split) {
    if (split == "train") return data.train;
    if (split == "val") return data.val;
    if (split == "test") return data.test;
    throw ConfigError("unknown split '" + split + "' (expected train|val|test)");
}

int cmd_synth(const CommonOpts& opts, std::uint64_t seed, int scenes, const std::string& out_dir) {
    RunConfig rc = make_config(opts);
    const SynthParams params = rc.synth_params();
    GridSpec geo = rc.grid_spec();
    geo.n = params.n;
    const int n_scenes = scenes > 0
                             ? scenes
                             : static_cast<int>(rc.integer("data.train_scenes") + rc.integer("data.val_scenes") +
                                                rc.integer("data.test_scenes"));

    fs::create_directories(out_dir);
    const Manifest manifest = write_synthetic_corpus(out_dir, seed, n_scenes, params, geo);
    rc.set("data.dir", out_dir);
    rc.write_snapshot(out_dir + "/config_resolved.cfg");

    std::size_t frames = 0;
    for (const SceneEntry& s : manifest.scenes) frames += static_cast<std::size_t>(s.n_frames);
    std::printf("wrote %d scenes, %zu radar frames, %zu stations to %s\n", n_scenes, frames,
                fs::exists(out_dir + "/stations.csv") ? std::size_t(1) : std::size_t(0), out_dir.c_str());
    std::printf("corpus seed: %llu\n", static_cast<unsigned long long>(seed));
    return 0;
}

int cmd_prior_generate(const CommonOpts& opts, const std::string& data_dir) {
    RunConfig rc = make_config(opts);
    const std::string dir = data_dir.empty() ? rc.str("data.dir") : data_dir;
    require_data_dir(dir);
    const std::size_t written = write_prior_store(dir, load_options(rc));
    std::printf("wrote %zu prior frames under %s/prior\n", written, dir.c_str());
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& variant, const std::string& out_dir) {
    RunConfig rc = make_config(opts);
    if (!variant.empty()) rc.set("model.variant", variant);

    const std::string data_dir = rc.str("data.dir");
    require_data_dir(data_dir);
    const Dataset data = load_dataset(data_dir, load_options(rc));
    if (data.train.empty()) throw DataError("no training windows in " + data_dir);

    rc.set("grid.n", std::to_string(data.grid.n));
    fs::create_directories(out_dir);
    rc.write_snapshot(out_dir + "/config_resolved.cfg");

    Model model(rc.model_config(data.grid.n), static_cast<std::uint64_t>(rc.integer("train.seed")));
    const TrainConfig tc = rc.train_config(resolve_threads(opts));
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train_model(model, data, tc, out_dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::printf("trained %s for %d epochs in %.1f s; best epoch %d\n", rc.str("model.variant").c_str(),
                tc.epochs, secs, result.best_epoch);
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, std::string csi_agg, bool strict,
             const std::string& split, const std::string& out_dir) {
    CommonOpts effective = opts;
    if (effective.config_file.empty()) {
        const fs::path sibling = fs::path(checkpoint).parent_path() / "config_resolved.cfg";
        if (fs::exists(sibling)) effective.config_file = sibling.string();
    }
    RunConfig rc = make_config(effective);
    if (!csi_agg.empty()) rc.set("eval.csi_agg", csi_agg);

    const std::string data_dir = rc.str("data.dir");
    require_data_dir(data_dir);
    const Dataset data = load_dataset(data_dir, load_options(rc));
    const auto& windows = pick_split(data, split);
    if (windows.empty()) throw DataError("split '" + split + "' has no windows");

    Model model(rc.model_config(data.grid.n), static_cast<std::uint64_t>(rc.integer("train.seed")));
    load_checkpoint(checkpoint, model.parameters());

    MetricsReport report = evaluate_model(model, windows, rc.eval_config());
    report.config_fingerprint = rc.fingerprint();

    fs::create_directories(out_dir);
    rc.write_snapshot(out_dir + "/config_resolved.cfg");
    write_report(report, out_dir);

    std::printf("evaluated %zu windows (%s split), variant %s\n", windows.size(), split.c_str(),
                report.variant.c_str());
    std::printf("rmse=%s mae=%s  ->  %s/categorical.csv\n", fmt_fixed(report.rmse).c_str(),
                fmt_fixed(report.mae).c_str(), out_dir.c_str());

    if (strict && report.has_undefined()) {
        std::fprintf(stderr, "strict mode: at least one requested (threshold, lead) cell is undefined\n");
        return 1;
    }
    return 0;
}

int cmd_predict(const CommonOpts& opts, const std::string& checkpoint, const std::string& split, int window,
                const std::string& out_dir) {
    CommonOpts effective = opts;
    if (effective.config_file.empty()) {
        const fs::path sibling = fs::path(checkpoint).parent_path() / "config_resolved.cfg";
        if (fs::exists(sibling)) effective.config_file = sibling.string();
    }
    RunConfig rc = make_config(effective);

    const std::string data_dir = rc.str("data.dir");
    require_data_dir(data_dir);
    const Dataset data = load_dataset(data_dir, load_options(rc));
    const auto& windows = pick_split(data, split);
    if (window < 0 || static_cast<std::size_t>(window) >= windows.size())
        throw ConfigError("window index " + std::to_string(window) + " outside split of size " +
                          std::to_string(windows.size()));

    Model model(rc.model_config(data.grid.n), static_cast<std::uint64_t>(rc.integer("train.seed")));
    load_checkpoint(checkpoint, model.parameters());

    const FrameSequence pred = model.predict(InputBundle::from_window(windows[static_cast<std::size_t>(window)]));
    fs::create_directories(out_dir);
    rc.write_snapshot(out_dir + "/config_resolved.cfg");
    for (std::size_t f = 0; f < pred.size(); ++f)
        save_grid(out_dir + "/" + std::to_string(pred.epochs[f]) + ".fgrid", pred.frames[f], pred.epochs[f],
                  Unit::MillimetersPerHour);
    std::printf("wrote %zu forecast frames to %s\n", pred.size(), out_dir.c_str());
    return 0;
}

int cmd_ablate(const CommonOpts& opts, int seeds, const std::string& out_dir) {
    RunConfig rc = make_config(opts);
    if (seeds > 0) rc.set("ablate.seeds", std::to_string(seeds));

    const AblationConfig cfg = rc.ablation_config(resolve_threads(opts));
    fs::create_directories(out_dir);
    rc.write_snapshot(out_dir + "/config_resolved.cfg");

    const auto t0 = std::chrono::steady_clock::now();
    const AblationResult result = run_ablation(cfg, out_dir, [&](const std::string& msg) {
        const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%7.1fs] %s\n", el, msg.c_str());
        std::fflush(stdout);
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // One shared corpus/init/train seed triple per seed index, for every
    // variant; recorded so runs are auditable.
    {
        std::ofstream runs(out_dir + "/runs.csv");
        runs << "seed_index,variant,corpus_seed,init_seed,train_seed\n";
        for (const AblationRun& r : result.runs)
            runs << r.seed_index << ',' << variant_name(r.variant) << ','
                 << mix64(cfg.base_seed, static_cast<std::uint64_t>(r.seed_index)) << ','
                 << mix64(cfg.base_seed, 0x5eedull + static_cast<std::uint64_t>(r.seed_index)) << ','
                 << mix64(cfg.base_seed, 0x7271ull + static_cast<std::uint64_t>(r.seed_index)) << '\n';
    }

    std::printf("\nmean pooled CSI at tau=1.0, lead %d frames:\n", cfg.eval.lead_frames.back());
    const int lead = cfg.eval.lead_frames.back();
    for (const Variant v : cfg.variants)
        std::printf("  %-20s %.4f\n", variant_name(v), result.mean_csi(v, 1.0, lead));
    const auto [m_pwv, se_pwv] = result.margin(Variant::Full, Variant::NoPwv, 1.0, lead);
    const auto [m_prior, se_prior] = result.margin(Variant::Full, Variant::NoPrior, 1.0, lead);
    std::printf("full - no_pwv  margin %.4f (se %.4f)\n", m_pwv, se_pwv);
    std::printf("full - no_prior margin %.4f (se %.4f)\n", m_prior, se_prior);
    std::printf("ablation wall time: %.1f s\n", secs);
    return 0;
}

int cmd_verify() {
    const std::vector<VerifySuite> suites = run_verification();
    bool all = true;
    for (const VerifySuite& s : suites) {
        std::printf("[%s] %-16s %8.1f ms  %s\n", s.pass ? "PASS" : "FAIL", s.name.c_str(), s.ms, s.detail.c_str());
        all = all && s.pass;
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FusionCast precipitation nowcasting toolkit"};
    app.require_subcommand(1);

    CommonOpts synth_opts, prior_opts, train_opts, eval_opts, predict_opts, ablate_opts;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    std::uint64_t synth_seed = 1;
    int synth_scenes = 0;
    std::string synth_out = "data";
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--scenes", synth_scenes, "scene count (default from split config)");
    synth->add_option("--out", synth_out, "output directory");
    add_common(synth, synth_opts);

    auto* prior = app.add_subcommand("prior", "prior-field tools");
    auto* prior_gen = prior->add_subcommand("generate", "write echo-extrapolation priors per window anchor");
    std::string prior_data;
    prior_gen->add_option("--data", prior_data, "data directory (default: data.dir)");
    add_common(prior_gen, prior_opts);
    prior->require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model variant");
    std::string train_variant, train_out = "runs/train";
    train->add_option("--variant", train_variant, "full|no_pwv|no_prior|no_rpf_concat|rpf_concat_fusion");
    train->add_option("--out", train_out, "output directory");
    add_common(train, train_opts);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_split = "test", eval_out = "runs/eval", eval_agg;
    bool eval_strict = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "train|val|test");
    eval->add_option("--csi-agg", eval_agg, "pooled|mean");
    eval->add_flag("--strict", eval_strict, "exit 1 when any requested cell is undefined");
    eval->add_option("--out", eval_out, "output directory");
    add_common(eval, eval_opts);

    auto* predict = app.add_subcommand("predict", "run one forecast window to fgrid files");
    std::string pred_ckpt, pred_split = "test", pred_out = "runs/predict";
    int pred_window = 0;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
    predict->add_option("--split", pred_split, "train|val|test");
    predict->add_option("--window", pred_window, "window index within the split");
    predict->add_option("--out", pred_out, "output directory");
    add_common(predict, predict_opts);

    auto* ablate = app.add_subcommand("ablate", "train and compare all variants over seeds");
    int ablate_seeds = 0;
    std::string ablate_out = "runs/ablation";
    ablate->add_option("--seeds", ablate_seeds, "seed count (default from config)");
    ablate->add_option("--out", ablate_out, "output directory");
    add_common(ablate, ablate_opts);

    app.add_subcommand("verify", "run gradient checks and oracle suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_opts, synth_seed, synth_scenes, synth_out);
        if (prior->parsed()) return cmd_prior_generate(prior_opts, prior_data);
        if (train->parsed()) return cmd_train(train_opts, train_variant, train_out);
        if (eval->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_agg, eval_strict, eval_split, eval_out);
        if (predict->parsed()) return cmd_predict(predict_opts, pred_ckpt, pred_split, pred_window, pred_out);
        if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_seeds, ablate_out);
        return cmd_verify();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
