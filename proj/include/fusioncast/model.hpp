#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusioncast/data.hpp"
#include "fusioncast/layers.hpp"
#include "fusioncast/rpf.hpp"

namespace fusioncast {

enum class Variant { Full, NoPwv, NoPrior, NoRpfConcat, RpfConcatFusion };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoPwv: return "no_pwv";
        case Variant::NoPrior: return "no_prior";
        case Variant::NoRpfConcat: return "no_rpf_concat";
        case Variant::RpfConcatFusion: return "rpf_concat_fusion";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "no_pwv") return Variant::NoPwv;
    if (s == "no_prior") return Variant::NoPrior;
    if (s == "no_rpf_concat") return Variant::NoRpfConcat;
    if (s == "rpf_concat_fusion") return Variant::RpfConcatFusion;
    throw ConfigError("unknown model variant '" + s + "'");
}

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::Full, Variant::NoPwv, Variant::NoPrior, Variant::NoRpfConcat,
                                        Variant::RpfConcatFusion};
    return v;
}

struct ModelConfig {
    std::size_t grid = 64;
    int t_in = 4;
    int t_out = 12;

    std::size_t pwv_conv1 = 32, pwv_conv2 = 64, pwv_hidden = 64;
    std::size_t hist_conv1 = 32, hist_conv2 = 64, hist_hidden = 64;
    std::size_t prior_conv1 = 32, prior_conv2 = 128, prior_hidden = 128;
    std::size_t merge_channels = 64;  // radar merge width; also the decoder state width
    std::size_t dec_conv1 = 32, dec_conv2 = 64;
    std::size_t dec_up1 = 32, dec_up2 = 16;

    bool rpf_share_hc_gates = true;
    Variant variant = Variant::Full;

    void validate() const {
        if (grid % 4 != 0 || grid < 8) throw ConfigError("model grid extent must be >= 8 and divisible by 4");
        if (t_in < 1 || t_out < 1) throw ConfigError("t_in and t_out must be >= 1");
        if (hist_hidden != merge_channels)
            throw ConfigError("hist_hidden must equal merge_channels so the no_prior passthrough state "
                              "matches the decoder width");
    }

    // Proportionally shrunk channel plan for small experiments; floors at 4.
    ModelConfig scaled_channels(double factor) const {
        const auto s = [factor](std::size_t c) {
            return std::max<std::size_t>(4, static_cast<std::size_t>(static_cast<double>(c) * factor + 0.5));
        };
        ModelConfig out = *this;
        out.pwv_conv1 = s(pwv_conv1); out.pwv_conv2 = s(pwv_conv2); out.pwv_hidden = s(pwv_hidden);
        out.hist_conv1 = s(hist_conv1); out.hist_conv2 = s(hist_conv2); out.hist_hidden = s(hist_hidden);
        out.prior_conv1 = s(prior_conv1); out.prior_conv2 = s(prior_conv2); out.prior_hidden = s(prior_hidden);
        out.merge_channels = s(merge_channels);
        out.dec_conv1 = s(dec_conv1); out.dec_conv2 = s(dec_conv2);
        out.dec_up1 = s(dec_up1); out.dec_up2 = s(dec_up2);
        return out;
    }
};

// Physical-unit inputs for one forecast: T_in PWV grids (mm), T_in observed
// radar frames (mm/h) on the same epochs, and T_out prior frames (mm/h) on
// the forecast epochs.
struct InputBundle {
    FrameSequence x_pwv;
    FrameSequence x_radar_hist;
    FrameSequence x_radar_prior;

    static InputBundle from_window(const SampleWindow& w) { return {w.pwv, w.hist, w.prior}; }

    void validate(const ModelConfig& cfg) const {
        if (x_pwv.size() != static_cast<std::size_t>(cfg.t_in) ||
            x_radar_hist.size() != static_cast<std::size_t>(cfg.t_in) ||
            x_radar_prior.size() != static_cast<std::size_t>(cfg.t_out))
            throw ShapeError("input bundle frame counts do not match t_in=" + std::to_string(cfg.t_in) +
                             " t_out=" + std::to_string(cfg.t_out));
        for (const FrameSequence* seq : {&x_pwv, &x_radar_hist, &x_radar_prior})
            for (const Tensor& f : seq->frames)
                if (f.extent(1) != cfg.grid || f.extent(2) != cfg.grid)
                    throw ShapeError("input frame extent " + shape_string(f.shape()) +
                                     " does not match model grid " + std::to_string(cfg.grid));
        if (x_pwv.epochs != x_radar_hist.epochs)
            throw DataError("pwv and radar history epochs are not aligned");
        for (std::size_t k = 0; k < x_radar_prior.epochs.size(); ++k)
            if (x_radar_prior.epochs[k] !=
                x_radar_hist.epochs.back() + static_cast<std::int64_t>(k + 1) * x_radar_hist.cadence)
                throw DataError("prior epochs are not the forecast epochs following the history window");
    }
};

class Model {
public:
    struct Branch {
        Conv2DLayer conv1, conv2;
        ConvLSTMCell lstm;

        Branch() = default;
        Branch(const std::string& name, std::size_t c1, std::size_t c2, std::size_t hidden, Rng& rng)
            : conv1(name + ".conv1", c1, 1, 3, 2, 1, rng),
              conv2(name + ".conv2", c2, c1, 3, 2, 1, rng),
              lstm(name + ".lstm", c2, hidden, rng) {}

        BranchState encode(const std::vector<Tensor>& frames) const {
            std::vector<Tensor> features;
            features.reserve(frames.size());
            for (const Tensor& f : frames) features.push_back(relu(conv2d(relu(conv2d(f, conv1)), conv2)));
            return encode_sequence(features, lstm);
        }

        void collect(std::vector<Parameter*>& out) {
            conv1.collect(out);
            conv2.collect(out);
            lstm.collect(out);
        }
    };

    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        pwv_ = Branch("encoder.pwv", cfg_.pwv_conv1, cfg_.pwv_conv2, cfg_.pwv_hidden, rng);
        hist_ = Branch("encoder.hist", cfg_.hist_conv1, cfg_.hist_conv2, cfg_.hist_hidden, rng);
        prior_ = Branch("encoder.prior", cfg_.prior_conv1, cfg_.prior_conv2, cfg_.prior_hidden, rng);
        merge_proj_ = Conv2DLayer("merge.proj", cfg_.merge_channels, cfg_.hist_hidden + cfg_.prior_hidden, 1, 1, 0, rng);
        gates_ = RpfGates("rpf", cfg_.merge_channels, cfg_.rpf_share_hc_gates, rng);
        concat_all_proj_ = Conv2DLayer("fusion.concat_all",
                                       cfg_.merge_channels,
                                       cfg_.pwv_hidden + cfg_.hist_hidden + cfg_.prior_hidden, 1, 1, 0, rng);
        concat_gate_h_ = Conv2DLayer("fusion.concat_gate_h", cfg_.merge_channels, cfg_.merge_channels + 1, 1, 1, 0, rng);
        concat_gate_c_ = Conv2DLayer("fusion.concat_gate_c", cfg_.merge_channels, cfg_.merge_channels + 1, 1, 1, 0, rng);
        dec_conv1_ = Conv2DLayer("decoder.in1", cfg_.dec_conv1, 1, 3, 2, 1, rng);
        dec_conv2_ = Conv2DLayer("decoder.in2", cfg_.dec_conv2, cfg_.dec_conv1, 3, 2, 1, rng);
        dec_lstm_ = ConvLSTMCell("decoder.lstm", cfg_.dec_conv2, cfg_.merge_channels, rng);
        dec_up1_ = Deconv2DLayer("decoder.up1", cfg_.merge_channels, cfg_.dec_up1, 4, 2, 1, rng);
        dec_up2_ = Deconv2DLayer("decoder.up2", cfg_.dec_up1, cfg_.dec_up2, 4, 2, 1, rng);
        head_ = Conv2DLayer("decoder.head", 1, cfg_.dec_up2, 1, 1, 0, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        pwv_.collect(out);
        hist_.collect(out);
        prior_.collect(out);
        merge_proj_.collect(out);
        gates_.collect(out);
        concat_all_proj_.collect(out);
        concat_gate_h_.collect(out);
        concat_gate_c_.collect(out);
        dec_conv1_.collect(out);
        dec_conv2_.collect(out);
        dec_lstm_.collect(out);
        dec_up1_.collect(out);
        dec_up2_.collect(out);
        head_.collect(out);
        return out;
    }

    // Encoders operate on normalized frames. The per-frame conv stack is
    // applied identically at every time step, then the ConvLSTM folds time.
    BranchState encode_pwv(const std::vector<Tensor>& frames) const { return pwv_.encode(frames); }
    BranchState encode_hist(const std::vector<Tensor>& frames) const { return hist_.encode(frames); }
    BranchState encode_prior(const std::vector<Tensor>& frames) const { return prior_.encode(frames); }

    const Branch& pwv_branch() const { return pwv_; }
    const Branch& hist_branch() const { return hist_; }
    const Branch& prior_branch() const { return prior_; }
    Conv2DLayer& merge_projection() { return merge_proj_; }
    RpfGates& rpf_gates() { return gates_; }

    // Combines the two radar-branch states ahead of fusion: channel concat
    // plus a shared 1x1 projection, applied to H and C alike. Under no_prior
    // the history state passes through untouched.
    BranchState merge_radar_states(const BranchState& hist_state, const BranchState& prior_state) const {
        if (cfg_.variant == Variant::NoPrior) return hist_state;
        BranchState out;
        out.h = conv2d(concat_channels({hist_state.h, prior_state.h}), merge_proj_);
        out.c = conv2d(concat_channels({hist_state.c, prior_state.c}), merge_proj_);
        return out;
    }

    std::vector<Tensor> forward(const InputBundle& bundle) const { return forward_train(bundle, nullptr, nullptr); }

    // Teacher-forced variant: when `use_teacher[t]` is set, decoding step t+1
    // consumes the normalized ground-truth frame instead of the prediction.
    std::vector<Tensor> forward_train(const InputBundle& bundle, const std::vector<Tensor>* teacher,
                                      const std::vector<std::uint8_t>* use_teacher) const {
        bundle.validate(cfg_);

        std::vector<Tensor> hist_n = normalize_frames(bundle.x_radar_hist, /*radar=*/true);
        const FusedState fused = fuse_states(bundle, hist_n);
        return decode(fused, hist_n.back(), teacher, use_teacher);
    }

    // Denormalized forecast in mm/h on the prior epochs.
    FrameSequence predict(const InputBundle& bundle) const {
        const std::vector<Tensor> norm = forward(bundle);
        FrameSequence out;
        out.cadence = bundle.x_radar_hist.cadence;
        out.unit = Unit::MillimetersPerHour;
        out.epochs = bundle.x_radar_prior.epochs;
        for (const Tensor& f : norm) out.frames.push_back(denormalize_radar(f));
        return out;
    }

private:
    std::vector<Tensor> normalize_frames(const FrameSequence& seq, bool radar) const {
        std::vector<Tensor> out;
        out.reserve(seq.size());
        for (const Tensor& f : seq.frames) out.push_back(radar ? normalize_radar(f) : normalize_pwv(f));
        return out;
    }

    FusedState fuse_states(const InputBundle& bundle, const std::vector<Tensor>& hist_n) const {
        const BranchState hist_state = hist_.encode(hist_n);

        switch (cfg_.variant) {
            case Variant::NoPwv: {
                const BranchState prior_state = prior_.encode(normalize_frames(bundle.x_radar_prior, true));
                const BranchState merged = merge_radar_states(hist_state, prior_state);
                return {merged.h, merged.c};
            }
            case Variant::NoPrior: {
                const BranchState pwv_state = pwv_.encode(normalize_frames(bundle.x_pwv, false));
                return rpf_fuse(pwv_state, hist_state, gates_);
            }
            case Variant::NoRpfConcat: {
                const BranchState pwv_state = pwv_.encode(normalize_frames(bundle.x_pwv, false));
                const BranchState prior_state = prior_.encode(normalize_frames(bundle.x_radar_prior, true));
                FusedState out;
                out.h = conv2d(concat_channels({pwv_state.h, hist_state.h, prior_state.h}), concat_all_proj_);
                out.c = conv2d(concat_channels({pwv_state.c, hist_state.c, prior_state.c}), concat_all_proj_);
                return out;
            }
            case Variant::RpfConcatFusion: {
                const BranchState pwv_state = pwv_.encode(normalize_frames(bundle.x_pwv, false));
                const BranchState prior_state = prior_.encode(normalize_frames(bundle.x_radar_prior, true));
                const BranchState radar = merge_radar_states(hist_state, prior_state);

                const SpatialGate& sg_c = gates_.share_hc ? gates_.spatial_h : gates_.spatial_c;
                const ChannelGate& cg_c = gates_.share_hc ? gates_.channel_h : gates_.channel_c;
                const Conv2DLayer& proj_c = cfg_.rpf_share_hc_gates ? concat_gate_h_ : concat_gate_c_;

                FusedState out;
                {
                    const Tensor m = spatial_attention(pwv_state.h, gates_.spatial_h);
                    const Tensor refined = refine_radar(radar.h, channel_attention(radar.h, gates_.channel_h));
                    out.h = conv2d(concat_channels({m, refined}), concat_gate_h_);
                }
                {
                    const Tensor m = spatial_attention(pwv_state.c, sg_c);
                    const Tensor refined = refine_radar(radar.c, channel_attention(radar.c, cg_c));
                    out.c = conv2d(concat_channels({m, refined}), proj_c);
                }
                return out;
            }
            case Variant::Full:
            default: {
                const BranchState pwv_state = pwv_.encode(normalize_frames(bundle.x_pwv, false));
                const BranchState prior_state = prior_.encode(normalize_frames(bundle.x_radar_prior, true));
                const BranchState radar = merge_radar_states(hist_state, prior_state);
                return rpf_fuse(pwv_state, radar, gates_);
            }
        }
    }

    std::vector<Tensor> decode(const FusedState& fused, const Tensor& last_obs_norm,
                               const std::vector<Tensor>* teacher,
                               const std::vector<std::uint8_t>* use_teacher) const {
        Tensor h = fused.h, c = fused.c;
        Tensor y_prev = last_obs_norm;
        std::vector<Tensor> out;
        out.reserve(static_cast<std::size_t>(cfg_.t_out));

        for (int t = 0; t < cfg_.t_out; ++t) {
            const Tensor x = relu(conv2d(relu(conv2d(y_prev, dec_conv1_)), dec_conv2_));
            const BranchState s = convlstm_step(x, h, c, dec_lstm_);
            h = s.h;
            c = s.c;
            const Tensor y = relu(conv2d(relu(deconv2d(relu(deconv2d(h, dec_up1_)), dec_up2_)), head_));
            out.push_back(y);
            const bool forced = teacher && use_teacher && (*use_teacher)[static_cast<std::size_t>(t)];
            y_prev = forced ? (*teacher)[static_cast<std::size_t>(t)] : y;
        }
        return out;
    }

    ModelConfig cfg_;
    Branch pwv_, hist_, prior_;
    Conv2DLayer merge_proj_;
    RpfGates gates_;
    Conv2DLayer concat_all_proj_;
    Conv2DLayer concat_gate_h_, concat_gate_c_;
    Conv2DLayer dec_conv1_, dec_conv2_;
    ConvLSTMCell dec_lstm_;
    Deconv2DLayer dec_up1_, dec_up2_;
    Conv2DLayer head_;
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic "FCKP", version u32, then per parameter:
// name length u32, name bytes, rank u32, extents u64[], float64 payload, all
// little-endian. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, std::vector<Parameter*> params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("FCKP", 4);
    detail::write_raw(out, std::uint32_t{1});
    for (const Parameter* p : params) {
        detail::write_raw(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_raw(out, static_cast<std::uint32_t>(p->value.rank()));
        for (std::size_t d : p->value.shape()) detail::write_raw(out, static_cast<std::uint64_t>(d));
        for (std::size_t i = 0; i < p->value.size(); ++i)
            detail::write_raw(out, static_cast<double>(p->value[i]));
    }
    if (!out) throw IoError("short write: " + path);
}

inline void load_checkpoint(const std::string& path, std::vector<Parameter*> params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FCKP", 4) != 0) throw IoError(path + ": bad magic");
    std::uint32_t version = 0;
    if (!detail::read_raw(in, version) || version != 1) throw IoError(path + ": unsupported version");

    std::unordered_map<std::string, Parameter*> by_name;
    for (Parameter* p : params) by_name[p->name] = p;

    std::size_t loaded = 0;
    while (true) {
        std::uint32_t name_len = 0;
        if (!detail::read_raw(in, name_len)) break;  // clean EOF
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = 0;
        if (!in || !detail::read_raw(in, rank) || rank < 1 || rank > 5)
            throw IoError(path + ": corrupt parameter record");
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint64_t e = 0;
            if (!detail::read_raw(in, e)) throw IoError(path + ": truncated extents");
            d = static_cast<std::size_t>(e);
        }
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError(path + ": unknown parameter '" + name + "'");
        if (it->second->value.shape() != shape)
            throw IoError(path + ": shape mismatch for '" + name + "': file " + shape_string(shape) +
                          " vs model " + shape_string(it->second->value.shape()));
        real* dst = it->second->value.mutable_data();
        for (std::size_t i = 0; i < it->second->value.size(); ++i) {
            double v;
            if (!detail::read_raw(in, v)) throw IoError(path + ": truncated payload for '" + name + "'");
            dst[i] = static_cast<real>(v);
        }
        ++loaded;
    }
    if (loaded != params.size())
        throw IoError(path + ": checkpoint holds " + std::to_string(loaded) + " parameters, model has " +
                      std::to_string(params.size()));
}

}  // namespace fusioncast
