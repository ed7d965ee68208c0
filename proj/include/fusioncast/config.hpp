#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fusioncast/metrics.hpp"
#include "fusioncast/model.hpp"
#include "fusioncast/trainer.hpp"

namespace fusioncast {

// Plain key=value run configuration with a closed key set: every key has a
// default, unknown keys are hard errors, and flag overrides win over the
// file. Each run writes the resolved snapshot next to its outputs.
class RunConfig {
public:
    RunConfig() { values_ = defaults(); }

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            {"grid.n", "64"},
            {"grid.lat_min", "32.0"},
            {"grid.lat_max", "42.24"},
            {"grid.lon_min", "-93.49"},
            {"grid.lon_max", "-83.25"},

            {"data.dir", "data"},
            {"data.cadence_s", "600"},
            {"data.t_in", "4"},
            {"data.t_out", "12"},
            {"data.train_scenes", "8"},
            {"data.val_scenes", "2"},
            {"data.test_scenes", "3"},
            {"data.prior_mode", "generate"},
            {"data.prior_perturb_sigma", "0"},
            {"data.station_carry_s", "3600"},
            {"data.station_min_availability", "0.9"},
            {"data.max_gap_s", "3600"},
            {"data.train_window_stride", "1"},
            {"data.synth_n", "32"},
            {"data.synth_frames", "28"},
            {"data.synth_cells", "3"},
            {"data.synth_cell_sigma", "3.0"},
            {"data.synth_lambda", "0.35"},
            {"data.synth_stations", "25"},
            {"data.synth_station_noise", "0.3"},
            {"data.synth_speed_min", "0.5"},
            {"data.synth_speed_max", "1.5"},
            {"data.synth_amp_min", "0.8"},
            {"data.synth_amp_max", "4.5"},
            {"data.synth_moisture_speed", "0.15"},
            {"data.synth_start_epoch", "1677628800"},

            {"model.variant", "full"},
            {"model.pwv_conv1", "32"},
            {"model.pwv_conv2", "64"},
            {"model.pwv_hidden", "64"},
            {"model.hist_conv1", "32"},
            {"model.hist_conv2", "64"},
            {"model.hist_hidden", "64"},
            {"model.prior_conv1", "32"},
            {"model.prior_conv2", "128"},
            {"model.prior_hidden", "128"},
            {"model.merge_channels", "64"},
            {"model.dec_conv1", "32"},
            {"model.dec_conv2", "64"},
            {"model.dec_up1", "32"},
            {"model.dec_up2", "16"},
            {"model.rpf_share_hc_gates", "true"},

            {"train.lr", "0.001"},
            {"train.beta1", "0.9"},
            {"train.beta2", "0.999"},
            {"train.eps", "1e-8"},
            {"train.batch", "4"},
            {"train.epochs", "20"},
            {"train.clip", "1.0"},
            {"train.tf_p0", "0.5"},
            {"train.seed", "1"},
            {"train.checkpoint_cadence", "0"},

            {"eval.thresholds", "0.1,1.0,4.0"},
            {"eval.lead_frames", "1,4,8,12"},
            {"eval.csi_agg", "pooled"},
            {"eval.strict", "false"},

            {"ablate.seeds", "5"},
            {"ablate.base_seed", "100"},
            {"ablate.variants", "full,no_pwv,no_prior,no_rpf_concat,rpf_concat_fusion"},
        };
        return d;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file: " + path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string trimmed = strip_comment(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ": line " + std::to_string(lineno) + ": expected key=value, got '" +
                                  trimmed + "'");
            set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    // "key=value" form used by --set flags.
    void set_pair(const std::string& pair) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + pair + "'");
        set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
    }

    const std::string& str(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
        return it->second;
    }

    double num(const std::string& key) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(str(key), &used);
            if (used != str(key).size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: '" + str(key) + "'");
        }
    }

    long integer(const std::string& key) const {
        const double v = num(key);
        const long r = static_cast<long>(v);
        if (static_cast<double>(r) != v) throw ConfigError("config key '" + key + "' is not an integer");
        return r;
    }

    bool boolean(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
    }

    std::vector<double> num_list(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "' has a non-numeric item: '" + item + "'");
            }
        }
        if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
        return out;
    }

    // Canonical snapshot: every key, sorted, one per line.
    std::string resolved_text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    void write_snapshot(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write config snapshot: " + path);
        out << resolved_text();
    }

    std::string fingerprint() const { return hex64(fnv1a64(resolved_text())); }

    // ----- typed views -----

    GridSpec grid_spec() const {
        GridSpec g;
        g.lat_min = num("grid.lat_min");
        g.lat_max = num("grid.lat_max");
        g.lon_min = num("grid.lon_min");
        g.lon_max = num("grid.lon_max");
        g.n = static_cast<std::size_t>(integer("grid.n"));
        g.validate();
        return g;
    }

    SynthParams synth_params() const {
        SynthParams p;
        p.n = static_cast<std::size_t>(integer("data.synth_n"));
        p.n_frames = static_cast<int>(integer("data.synth_frames"));
        p.n_cells = static_cast<int>(integer("data.synth_cells"));
        p.cell_sigma = num("data.synth_cell_sigma");
        p.lambda = num("data.synth_lambda");
        p.n_stations = static_cast<int>(integer("data.synth_stations"));
        p.station_noise = num("data.synth_station_noise");
        p.speed_min = num("data.synth_speed_min");
        p.speed_max = num("data.synth_speed_max");
        p.amp_min = num("data.synth_amp_min");
        p.amp_max = num("data.synth_amp_max");
        p.moisture_speed = num("data.synth_moisture_speed");
        p.start_epoch = integer("data.synth_start_epoch");
        p.cadence = integer("data.cadence_s");
        return p;
    }

    ModelConfig model_config(std::size_t grid_extent) const {
        ModelConfig m;
        m.grid = grid_extent;
        m.t_in = static_cast<int>(integer("data.t_in"));
        m.t_out = static_cast<int>(integer("data.t_out"));
        m.pwv_conv1 = static_cast<std::size_t>(integer("model.pwv_conv1"));
        m.pwv_conv2 = static_cast<std::size_t>(integer("model.pwv_conv2"));
        m.pwv_hidden = static_cast<std::size_t>(integer("model.pwv_hidden"));
        m.hist_conv1 = static_cast<std::size_t>(integer("model.hist_conv1"));
        m.hist_conv2 = static_cast<std::size_t>(integer("model.hist_conv2"));
        m.hist_hidden = static_cast<std::size_t>(integer("model.hist_hidden"));
        m.prior_conv1 = static_cast<std::size_t>(integer("model.prior_conv1"));
        m.prior_conv2 = static_cast<std::size_t>(integer("model.prior_conv2"));
        m.prior_hidden = static_cast<std::size_t>(integer("model.prior_hidden"));
        m.merge_channels = static_cast<std::size_t>(integer("model.merge_channels"));
        m.dec_conv1 = static_cast<std::size_t>(integer("model.dec_conv1"));
        m.dec_conv2 = static_cast<std::size_t>(integer("model.dec_conv2"));
        m.dec_up1 = static_cast<std::size_t>(integer("model.dec_up1"));
        m.dec_up2 = static_cast<std::size_t>(integer("model.dec_up2"));
        m.rpf_share_hc_gates = boolean("model.rpf_share_hc_gates");
        m.variant = variant_from_string(str("model.variant"));
        return m;
    }

    TrainConfig train_config(int threads) const {
        TrainConfig t;
        t.lr = num("train.lr");
        t.beta1 = num("train.beta1");
        t.beta2 = num("train.beta2");
        t.eps = num("train.eps");
        t.batch = static_cast<int>(integer("train.batch"));
        t.epochs = static_cast<int>(integer("train.epochs"));
        t.clip = num("train.clip");
        t.tf_p0 = num("train.tf_p0");
        t.seed = static_cast<std::uint64_t>(integer("train.seed"));
        t.checkpoint_cadence = static_cast<int>(integer("train.checkpoint_cadence"));
        t.threads = threads;
        return t;
    }

    EvalConfig eval_config() const {
        EvalConfig e;
        e.thresholds = num_list("eval.thresholds");
        e.lead_frames.clear();
        for (double v : num_list("eval.lead_frames")) e.lead_frames.push_back(static_cast<int>(v));
        e.agg = csi_agg_from_string(str("eval.csi_agg"));
        return e;
    }

    PriorParams prior_params() const {
        PriorParams p;
        p.perturb_sigma = num("data.prior_perturb_sigma");
        return p;
    }

    CorpusConfig corpus_config() const {
        CorpusConfig c;
        c.synth = synth_params();
        c.train_scenes = static_cast<int>(integer("data.train_scenes"));
        c.val_scenes = static_cast<int>(integer("data.val_scenes"));
        c.test_scenes = static_cast<int>(integer("data.test_scenes"));
        c.t_in = static_cast<int>(integer("data.t_in"));
        c.t_out = static_cast<int>(integer("data.t_out"));
        c.train_window_stride = static_cast<int>(integer("data.train_window_stride"));
        c.prior = prior_params();
        return c;
    }

    AblationConfig ablation_config(int threads) const {
        AblationConfig a;
        a.seeds = static_cast<int>(integer("ablate.seeds"));
        a.base_seed = static_cast<std::uint64_t>(integer("ablate.base_seed"));
        a.variants.clear();
        std::stringstream ss(str("ablate.variants"));
        std::string item;
        while (std::getline(ss, item, ',')) a.variants.push_back(variant_from_string(trim(item)));
        if (a.variants.empty()) throw ConfigError("ablate.variants is empty");
        a.model = model_config(static_cast<std::size_t>(integer("data.synth_n")));
        a.train = train_config(threads);
        a.corpus = corpus_config();
        a.eval = eval_config();
        return a;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    static std::string strip_comment(const std::string& line) {
        const auto hash = line.find('#');
        return trim(hash == std::string::npos ? line : line.substr(0, hash));
    }

    std::map<std::string, std::string> values_;
};

}  // namespace fusioncast
