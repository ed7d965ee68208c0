#pragma once

#include <chrono>
#include <cstring>
#include <string>
#include <vector>

#include "fusioncast/flow.hpp"
#include "fusioncast/metrics.hpp"
#include "fusioncast/reference.hpp"
#include "fusioncast/rpf.hpp"
#include "fusioncast/trainer.hpp"

namespace fusioncast {

struct VerifySuite {
    std::string name;
    bool pass = false;
    std::string detail;
    double ms = 0;
};

namespace verify_detail {

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(real)) == 0;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace verify_detail

// conv2d/deconv2d/channel_pool/global_pool against the naive loop references
// on inputs up to 8x8, plus the transposed-convolution adjoint identity.
inline VerifySuite verify_conv_oracles() {
    VerifySuite suite;
    suite.name = "conv_oracles";
    Rng rng(501);
    double worst = 0;

    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t in_ch = 1 + rng() % 3, out_ch = 1 + rng() % 3;
        const std::size_t n = 4 + rng() % 5;  // <= 8
        const std::size_t k = 1 + rng() % 3;
        const int stride = 1 + static_cast<int>(rng() % 2);
        const int pad = static_cast<int>(rng() % 2);
        if (n + 2 * static_cast<std::size_t>(pad) < k) continue;

        const Tensor x = reference::random_tensor({in_ch, n, n}, rng);
        const Tensor kern = reference::random_tensor({out_ch, in_ch, k, k}, rng);
        const Tensor bias = reference::random_tensor({out_ch}, rng);
        worst = std::max(worst, verify_detail::max_abs_diff(conv2d_op(x, kern, &bias, stride, pad),
                                                            reference::conv2d(x, kern, &bias, stride, pad)));

        const Tensor dk = reference::random_tensor({in_ch, out_ch, k, k}, rng);
        worst = std::max(worst, verify_detail::max_abs_diff(deconv2d_op(x, dk, &bias, stride, pad),
                                                            reference::deconv2d(x, dk, &bias, stride, pad)));

        worst = std::max(worst, verify_detail::max_abs_diff(channel_pool(x), reference::channel_pool(x)));
        worst = std::max(worst, verify_detail::max_abs_diff(global_avg_pool(x), reference::global_avg_pool(x)));
        worst = std::max(worst, verify_detail::max_abs_diff(global_max_pool(x), reference::global_max_pool(x)));
    }

    double adjoint_worst = 0;
    for (int trial = 0; trial < 8; ++trial) {
        const Tensor kern = reference::random_tensor({2, 3, 4, 4}, rng);
        const Tensor x = reference::random_tensor({2, 3, 3}, rng);
        const Tensor up = deconv2d_op(x, kern, nullptr, 2, 1);
        const Tensor y = reference::random_tensor(up.shape(), rng);
        const Tensor down = conv2d_op(y, kern, nullptr, 2, 1);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < up.size(); ++i) lhs += double(up[i]) * double(y[i]);
        for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * double(down[i]);
        adjoint_worst = std::max(adjoint_worst, std::abs(lhs - rhs));
    }

    suite.pass = worst < 1e-12 && adjoint_worst < 1e-10;
    suite.detail = "max_oracle_diff=" + fmt_fixed(worst, 15) + " adjoint_diff=" + fmt_fixed(adjoint_worst, 15);
    return suite;
}

// Closed-form fusion identities: shut gate passthrough, the 1.25 factor under
// zero-initialized gates, and strict (0,1) gate ranges.
inline VerifySuite verify_rpf_identities() {
    VerifySuite suite;
    suite.name = "rpf_identities";
    Rng rng(502);
    bool ok = true;
    std::string why;

    const Tensor f_radar = reference::random_tensor({3, 6, 6}, rng);
    const Tensor f_prime = reference::random_tensor({3, 6, 6}, rng);
    if (!verify_detail::bit_equal(gated_fuse(Tensor::zeros({1, 6, 6}), f_prime, f_radar), f_radar)) {
        ok = false;
        why += "shut-gate passthrough not bit-exact;";
    }

    RpfGates gates("verify", 3, true, rng);
    for (Tensor* t : {&gates.spatial_h.conv.kernel.value, &gates.spatial_h.conv.bias.value,
                      &gates.channel_h.mlp.w1.value, &gates.channel_h.mlp.b1.value,
                      &gates.channel_h.mlp.w2.value, &gates.channel_h.mlp.b2.value})
        std::fill_n(t->mutable_data(), t->size(), real(0));
    const BranchState pwv{reference::random_tensor({2, 6, 6}, rng), reference::random_tensor({2, 6, 6}, rng)};
    const BranchState radar{f_radar, f_prime};
    const FusedState fused = rpf_fuse(pwv, radar, gates);
    double factor_err = 0;
    for (std::size_t i = 0; i < fused.h.size(); ++i) {
        factor_err = std::max(factor_err, std::abs(double(fused.h[i]) - 1.25 * double(radar.h[i])));
        factor_err = std::max(factor_err, std::abs(double(fused.c[i]) - 1.25 * double(radar.c[i])));
    }
    if (factor_err > 1e-15) {
        ok = false;
        why += "zero-gate factor != 1.25;";
    }

    SpatialGate sg("verify_sg", rng);
    ChannelGate cg("verify_cg", 4, rng);
    for (int trial = 0; trial < 6 && ok; ++trial) {
        const Tensor f = reference::random_tensor({4, 7, 7}, rng, -25, 25);
        const Tensor m = spatial_attention(f, sg);
        const Tensor w = channel_attention(f, cg);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (!(m[i] > 0.0 && m[i] < 1.0)) ok = false;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (!(w[i] > 0.0 && w[i] < 1.0)) ok = false;
        if (!ok) why += "gate left (0,1);";
    }

    suite.pass = ok;
    suite.detail = ok ? "factor_err=" + fmt_fixed(factor_err, 18) : why;
    return suite;
}

// MAE/RMSE/binarize/contingency/CSI against single-pass scalar loops on 200
// random instances up to 16x16, plus the hand-checked CSI values.
inline VerifySuite verify_metric_oracles() {
    VerifySuite suite;
    suite.name = "metric_oracles";
    Rng rng(503);
    double worst = 0;
    bool counts_ok = true;

    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 15;  // <= 16
        const Tensor pred = reference::random_tensor({1, n, n}, rng, 0, 6);
        const Tensor truth = reference::random_tensor({1, n, n}, rng, 0, 6);
        const double tau = (trial % 3 == 0) ? 0.1 : (trial % 3 == 1) ? 1.0 : 4.0;

        const auto want = reference::pixel_metrics(pred, truth, tau);
        worst = std::max(worst, std::abs(mae({pred}, {truth}) - want.abs_err_sum / want.n));
        worst = std::max(worst, std::abs(rmse({pred}, {truth}) - std::sqrt(want.sq_err_sum / want.n)));

        const ContingencyTable got = contingency(binarize(pred, tau), binarize(truth, tau));
        counts_ok = counts_ok && got.tp == want.tp && got.fp == want.fp && got.fn == want.fn && got.tn == want.tn;

        const auto c = csi(got);
        const std::uint64_t denom = want.tp + want.fp + want.fn;
        if (denom == 0) {
            counts_ok = counts_ok && !c.has_value();
        } else {
            worst = std::max(worst, std::abs(*c - static_cast<double>(want.tp) / static_cast<double>(denom)));
        }
    }

    const bool hand = *csi({1, 0, 0, 0}) == 1.0 && *csi({2, 1, 1, 0}) == 0.5 && !csi({0, 0, 0, 9}).has_value();
    suite.pass = worst < 1e-12 && counts_ok && hand;
    suite.detail = "max_diff=" + fmt_fixed(worst, 15) + (counts_ok ? "" : " count_mismatch") +
                   (hand ? "" : " hand_case_failed");
    return suite;
}

// Optical-flow fixture: +2 px translation recovered within 0.5 px over the
// blob support, exact integer-shift advection, and prior tracking within a
// pixel per step on a translating scene.
inline VerifySuite verify_flow_fixture() {
    VerifySuite suite;
    suite.name = "flow_fixture";
    const std::size_t n = 32;
    const auto blob = [&](double cx, double cy) {
        Tensor f({1, n, n});
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                f.mutable_data()[y * n + x] = static_cast<real>(5.0 * std::exp(-(dx * dx + dy * dy) / (2 * 3.5 * 3.5)));
            }
        return f;
    };

    bool ok = true;
    std::string why;

    const Tensor prev = blob(13, 16), curr = blob(15, 16);
    const FlowField flow = estimate_flow(prev, curr);
    double worst_u = 0;
    for (std::size_t i = 0; i < prev.size(); ++i) {
        if (prev[i] < 1.5) continue;
        worst_u = std::max({worst_u, std::abs(flow.u[i] - 2.0), std::abs(double(flow.v[i]))});
    }
    if (worst_u >= 0.5) {
        ok = false;
        why += "shift recovery off by " + fmt_fixed(worst_u, 3) + ";";
    }

    Tensor ramp({1, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) ramp.mutable_data()[i] = static_cast<real>(i);
    const FlowField unit{Tensor::ones({1, 8, 8}), Tensor::zeros({1, 8, 8})};
    const FrameSequence shifted = advect(ramp, unit, 1);
    for (std::size_t y = 0; y < 8 && ok; ++y) {
        if (shifted.frames[0][y * 8] != 0.0) ok = false;
        for (std::size_t x = 1; x < 8; ++x)
            if (shifted.frames[0][y * 8 + x] != ramp[y * 8 + x - 1]) ok = false;
    }
    if (!ok && why.empty()) why += "integer advection not exact;";

    FrameSequence hist;
    hist.cadence = 600;
    const double vx = 1.1, vy = -0.7;
    for (int t = 0; t < 2; ++t) {
        hist.frames.push_back(blob(12 + vx * t, 18 + vy * t));
        hist.epochs.push_back(600 * t);
    }
    const FrameSequence prior = generate_prior(hist, 5);
    double track_err = 0;
    for (int k = 1; k <= 5; ++k) {
        const Tensor& f = prior.frames[static_cast<std::size_t>(k - 1)];
        double m = 0, sx = 0, sy = 0;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                m += f[y * n + x];
                sx += f[y * n + x] * static_cast<double>(x);
                sy += f[y * n + x] * static_cast<double>(y);
            }
        track_err = std::max({track_err, std::abs(sx / m - (12 + vx * (1 + k))), std::abs(sy / m - (18 + vy * (1 + k)))});
    }
    if (track_err > 1.0) {
        ok = false;
        why += "prior tracking err " + fmt_fixed(track_err, 3) + ";";
    }

    suite.pass = ok;
    suite.detail = ok ? "shift_err=" + fmt_fixed(worst_u, 3) + " track_err=" + fmt_fixed(track_err, 3) : why;
    return suite;
}

inline VerifySuite verify_normalization() {
    VerifySuite suite;
    suite.name = "normalization";
    double worst = 0;
    for (double x = 0; x <= 128.0; x += 0.37)
        worst = std::max(worst, std::abs(double(denormalize_radar_value(normalize_radar_value(static_cast<real>(x)))) - x));
    const bool anchors = normalize_radar_value(0) == 0.0 &&
                         std::abs(double(normalize_radar_value(128)) - 1.0) < 1e-15 &&
                         normalize_pwv_value(0) == 0.0 && normalize_pwv_value(40) == 0.5 &&
                         normalize_pwv_value(200) == 1.5;
    suite.pass = worst < 1e-12 && anchors;
    suite.detail = "roundtrip_err=" + fmt_fixed(worst, 15);
    return suite;
}

inline VerifySuite verify_gradients() {
    VerifySuite suite;
    suite.name = "gradcheck";
    const GradCheckReport report = gradcheck_suite();
    suite.pass = report.all_pass;
    double worst = 0;
    std::string worst_name;
    for (const GradCheckCase& c : report.cases) {
        if (c.max_rel_err > worst) {
            worst = c.max_rel_err;
            worst_name = c.name + (c.worst_param.empty() ? "" : "/" + c.worst_param);
        }
        if (!c.pass) suite.detail += c.name + " err=" + fmt_fixed(c.max_rel_err, 8) + ";";
    }
    if (suite.pass) suite.detail = "worst=" + worst_name + " err=" + fmt_fixed(worst, 8);
    return suite;
}

inline std::vector<VerifySuite> run_verification() {
    std::vector<VerifySuite> out;
    const auto timed = [&](VerifySuite (*fn)()) {
        const auto t0 = std::chrono::steady_clock::now();
        VerifySuite s = fn();
        s.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(s));
    };
    timed(&verify_conv_oracles);
    timed(&verify_rpf_identities);
    timed(&verify_metric_oracles);
    timed(&verify_flow_fixture);
    timed(&verify_normalization);
    timed(&verify_gradients);
    return out;
}

}  // namespace fusioncast
