#pragma once

#include <string>
#include <vector>

#include "fusioncast/layers.hpp"

namespace fusioncast {

// Spatial gate: channel statistics -> 7x7 conv -> sigmoid. Output is a
// single-channel map in (0,1) at the input's spatial extent. The bias starts
// negative so the gated correction begins near the residual passthrough and
// opens as training finds useful moisture signal.
struct SpatialGate {
    Conv2DLayer conv;  // in 2, out 1, k 7, stride 1, pad 3

    SpatialGate() = default;
    SpatialGate(const std::string& name, Rng& rng) : conv(name + ".conv", 1, 2, 7, 1, 3, rng) {
        conv.bias.value.mutable_data()[0] = real(-0.75);
    }

    void collect(std::vector<Parameter*>& out) { conv.collect(out); }
};

// Channel gate: shared MLP over pooled descriptors, one weight per channel.
struct ChannelGate {
    SharedMLP mlp;

    ChannelGate() = default;
    ChannelGate(const std::string& name, std::size_t channels, Rng& rng) : mlp(name + ".mlp", channels, rng) {}

    std::size_t channels() const { return mlp.channels; }
    void collect(std::vector<Parameter*>& out) { mlp.collect(out); }
};

struct FusedState {
    Tensor h;
    Tensor c;
};

inline Tensor spatial_attention(const Tensor& f_pwv, const SpatialGate& gate) {
    return sigmoid(conv2d(channel_pool(f_pwv), gate.conv));
}

inline Tensor channel_attention(const Tensor& f_radar, const ChannelGate& gate) {
    if (f_radar.extent(0) != gate.channels())
        throw ShapeError("channel_attention: channel mismatch, map " + shape_string(f_radar.shape()) +
                         " vs gate width " + std::to_string(gate.channels()));
    return sigmoid(ew_add(mlp_apply(global_avg_pool(f_radar), gate.mlp),
                          mlp_apply(global_max_pool(f_radar), gate.mlp)));
}

// Per-channel rescaling of the radar features by the channel weights.
inline Tensor refine_radar(const Tensor& f_radar, const Tensor& w_channel) {
    if (w_channel.rank() != 1 || w_channel.extent(0) != f_radar.extent(0))
        throw ShapeError("refine_radar: weight length " + shape_string(w_channel.shape()) +
                         " does not match map " + shape_string(f_radar.shape()));
    return ew_mul(f_radar, w_channel);
}

// fused = m_spatial (x) f_refined + f_radar, with the single-channel gate map
// broadcast over channels. m = 0 passes f_radar through bit-exactly.
inline Tensor gated_fuse(const Tensor& m_spatial, const Tensor& f_refined, const Tensor& f_radar) {
    if (m_spatial.rank() != 3 || m_spatial.extent(0) != 1)
        throw ShapeError("gated_fuse: gate map must be (1,H,W), got " + shape_string(m_spatial.shape()));
    if (!f_refined.same_shape(f_radar))
        throw ShapeError("gated_fuse: radar maps disagree, " + shape_string(f_refined.shape()) + " vs " +
                         shape_string(f_radar.shape()));
    return ew_add(ew_mul(f_refined, m_spatial), f_radar);
}

// One pair of gates; the same parameters serve the hidden-state and the
// cell-state fusion when shared (the default).
struct RpfGates {
    SpatialGate spatial_h;
    ChannelGate channel_h;
    SpatialGate spatial_c;  // unused when shared
    ChannelGate channel_c;  // unused when shared
    bool share_hc = true;

    RpfGates() = default;
    RpfGates(const std::string& name, std::size_t radar_channels, bool share, Rng& rng) : share_hc(share) {
        spatial_h = SpatialGate(name + (share ? ".spatial" : ".spatial_h"), rng);
        channel_h = ChannelGate(name + (share ? ".channel" : ".channel_h"), radar_channels, rng);
        if (!share) {
            spatial_c = SpatialGate(name + ".spatial_c", rng);
            channel_c = ChannelGate(name + ".channel_c", radar_channels, rng);
        }
    }

    void collect(std::vector<Parameter*>& out) {
        spatial_h.collect(out);
        channel_h.collect(out);
        if (!share_hc) {
            spatial_c.collect(out);
            channel_c.collect(out);
        }
    }
};

inline Tensor rpf_fuse_one(const Tensor& f_pwv, const Tensor& f_radar, const SpatialGate& sg,
                           const ChannelGate& cg) {
    const Tensor m = spatial_attention(f_pwv, sg);
    const Tensor w = channel_attention(f_radar, cg);
    return gated_fuse(m, refine_radar(f_radar, w), f_radar);
}

// Fuses the PWV and radar branch states, hidden and cell independently.
// Spatial extents must already agree; mismatches are configuration bugs and
// are not resampled away.
inline FusedState rpf_fuse(const BranchState& pwv, const BranchState& radar, const RpfGates& gates) {
    if (pwv.h.extent(1) != radar.h.extent(1) || pwv.h.extent(2) != radar.h.extent(2))
        throw ShapeError("rpf_fuse: branch spatial extents differ, pwv " + shape_string(pwv.h.shape()) +
                         " vs radar " + shape_string(radar.h.shape()));
    const SpatialGate& sg_c = gates.share_hc ? gates.spatial_h : gates.spatial_c;
    const ChannelGate& cg_c = gates.share_hc ? gates.channel_h : gates.channel_c;
    FusedState out;
    out.h = rpf_fuse_one(pwv.h, radar.h, gates.spatial_h, gates.channel_h);
    out.c = rpf_fuse_one(pwv.c, radar.c, sg_c, cg_c);
    return out;
}

}  // namespace fusioncast
