#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fusioncast/data.hpp"
#include "fusioncast/tensor.hpp"

namespace fusioncast {

// Dense displacement field in pixels per frame; x east, y south.
struct FlowField {
    Tensor u;  // (1,n,n)
    Tensor v;  // (1,n,n)
};

struct FlowParams {
    double smooth_sigma = 1.5;
    double damping = 1e-3;  // Tikhonov term added to the structure tensor
    double v_max = 10.0;    // px/frame clamp
    int window_radius = 2;  // box aggregation window for the structure tensor
    int levels = 2;         // pyramid depth
};

namespace detail {

inline Tensor gaussian_smooth(const Tensor& f, double sigma) {
    const std::size_t n = f.extent(1);
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        sum += kernel[static_cast<std::size_t>(k + radius)];
    }
    for (double& k : kernel) k /= sum;

    const auto clampi = [&](long i) { return std::clamp<long>(i, 0, static_cast<long>(n) - 1); };
    Tensor tmp({1, n, n}), out({1, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       f[y * n + static_cast<std::size_t>(clampi(static_cast<long>(x) + k))];
            tmp.mutable_data()[y * n + x] = static_cast<real>(acc);
        }
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       tmp[static_cast<std::size_t>(clampi(static_cast<long>(y) + k)) * n + x];
            out.mutable_data()[y * n + x] = static_cast<real>(acc);
        }
    return out;
}

inline Tensor downsample2(const Tensor& f) {
    const std::size_t n = f.extent(1), h = n / 2;
    Tensor out({1, h, h});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < h; ++x)
            out.mutable_data()[y * h + x] =
                (f[(2 * y) * n + 2 * x] + f[(2 * y) * n + 2 * x + 1] + f[(2 * y + 1) * n + 2 * x] +
                 f[(2 * y + 1) * n + 2 * x + 1]) /
                real(4);
    return out;
}

inline double bilinear_or_zero(const Tensor& f, double x, double y) {
    const long n = static_cast<long>(f.extent(1));
    const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    double acc = 0;
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const long xi = x0 + dx, yi = y0 + dy;
            if (xi < 0 || xi >= n || yi < 0 || yi >= n) continue;  // clear air outside
            const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            acc += w * f[static_cast<std::size_t>(yi) * static_cast<std::size_t>(n) + static_cast<std::size_t>(xi)];
        }
    return acc;
}

// One Lucas-Kanade pass refining `flow` so that curr(x) ~ prev(x - flow).
inline void lk_refine(const Tensor& prev, const Tensor& curr, Tensor& u, Tensor& v, const FlowParams& p) {
    const std::size_t n = prev.extent(1);

    // Warp prev forward by the current flow estimate.
    Tensor warped({1, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            warped.mutable_data()[y * n + x] = static_cast<real>(
                bilinear_or_zero(prev, static_cast<double>(x) - u[y * n + x], static_cast<double>(y) - v[y * n + x]));

    Tensor ix({1, n, n}), iy({1, n, n}), it({1, n, n});
    const auto clampi = [&](long i) { return std::clamp<long>(i, 0, static_cast<long>(n) - 1); };
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t xm = static_cast<std::size_t>(clampi(static_cast<long>(x) - 1));
            const std::size_t xp = static_cast<std::size_t>(clampi(static_cast<long>(x) + 1));
            const std::size_t ym = static_cast<std::size_t>(clampi(static_cast<long>(y) - 1));
            const std::size_t yp = static_cast<std::size_t>(clampi(static_cast<long>(y) + 1));
            ix.mutable_data()[y * n + x] = (warped[y * n + xp] - warped[y * n + xm]) / real(2);
            iy.mutable_data()[y * n + x] = (warped[yp * n + x] - warped[ym * n + x]) / real(2);
            it.mutable_data()[y * n + x] = curr[y * n + x] - warped[y * n + x];
        }

    const int r = p.window_radius;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double axx = 0, axy = 0, ayy = 0, bx = 0, by = 0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const std::size_t yi = static_cast<std::size_t>(clampi(static_cast<long>(y) + dy));
                    const std::size_t xi = static_cast<std::size_t>(clampi(static_cast<long>(x) + dx));
                    const double gx = ix[yi * n + xi], gy = iy[yi * n + xi], gt = it[yi * n + xi];
                    axx += gx * gx;
                    axy += gx * gy;
                    ayy += gy * gy;
                    bx -= gx * gt;
                    by -= gy * gt;
                }
            axx += p.damping;
            ayy += p.damping;
            const double det = axx * ayy - axy * axy;
            // Increment solves A d = -sum(g*It) for curr(x) ~ warped(x - d).
            const double du = (ayy * bx - axy * by) / det;
            const double dv = (axx * by - axy * bx) / det;
            u.mutable_data()[y * n + x] = static_cast<real>(std::clamp(double(u[y * n + x]) + du, -p.v_max, p.v_max));
            v.mutable_data()[y * n + x] = static_cast<real>(std::clamp(double(v[y * n + x]) + dv, -p.v_max, p.v_max));
        }
}

inline void upsample_flow2(const Tensor& src, Tensor& dst) {
    const std::size_t hn = src.extent(1), n = dst.extent(1);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t sy = std::min(y / 2, hn - 1), sx = std::min(x / 2, hn - 1);
            dst.mutable_data()[y * n + x] = real(2) * src[sy * hn + sx];
        }
}

}  // namespace detail

// Damped pyramidal Lucas-Kanade between two consecutive frames. Identical
// frames and featureless frames both give exactly zero flow.
inline FlowField estimate_flow(const Tensor& f_prev, const Tensor& f_curr, const FlowParams& params = {}) {
    if (!f_prev.same_shape(f_curr) || f_prev.rank() != 3 || f_prev.extent(0) != 1)
        throw ShapeError("estimate_flow: expected two (1,n,n) frames, got " + shape_string(f_prev.shape()) +
                         " and " + shape_string(f_curr.shape()));
    const std::size_t n = f_prev.extent(1);

    const Tensor sp = detail::gaussian_smooth(f_prev, params.smooth_sigma);
    const Tensor sc = detail::gaussian_smooth(f_curr, params.smooth_sigma);

    std::vector<Tensor> pyr_prev{sp}, pyr_curr{sc};
    for (int l = 1; l < params.levels && pyr_prev.back().extent(1) >= 16; ++l) {
        pyr_prev.push_back(detail::downsample2(pyr_prev.back()));
        pyr_curr.push_back(detail::downsample2(pyr_curr.back()));
    }

    const std::size_t coarse_n = pyr_prev.back().extent(1);
    FlowField flow{Tensor::zeros({1, coarse_n, coarse_n}), Tensor::zeros({1, coarse_n, coarse_n})};
    for (std::size_t level = pyr_prev.size(); level-- > 0;) {
        if (flow.u.extent(1) != pyr_prev[level].extent(1)) {
            FlowField up{Tensor::zeros({1, pyr_prev[level].extent(1), pyr_prev[level].extent(1)}),
                         Tensor::zeros({1, pyr_prev[level].extent(1), pyr_prev[level].extent(1)})};
            detail::upsample_flow2(flow.u, up.u);
            detail::upsample_flow2(flow.v, up.v);
            flow = std::move(up);
        }
        detail::lk_refine(pyr_prev[level], pyr_curr[level], flow.u, flow.v, params);
    }

    if (flow.u.extent(1) != n) throw ShapeError("estimate_flow: internal pyramid extent mismatch");
    return flow;
}

// Backward semi-Lagrangian transport: each output pixel samples the previous
// frame at (x-u, y-v) bilinearly; samples outside the domain read zero.
inline FrameSequence advect(const Tensor& frame, const FlowField& flow, int steps,
                            std::int64_t start_epoch = 0, std::int64_t cadence = 600) {
    if (steps < 1) throw ConfigError("advect: steps must be >= 1");
    if (!frame.same_shape(flow.u) || !frame.same_shape(flow.v))
        throw ShapeError("advect: frame and flow extents disagree, " + shape_string(frame.shape()) + " vs " +
                         shape_string(flow.u.shape()));
    const std::size_t n = frame.extent(1);

    FrameSequence out;
    out.cadence = cadence;
    out.unit = Unit::MillimetersPerHour;
    Tensor current = frame;
    for (int s = 1; s <= steps; ++s) {
        Tensor next({1, n, n});
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                next.mutable_data()[y * n + x] = static_cast<real>(detail::bilinear_or_zero(
                    current, static_cast<double>(x) - flow.u[y * n + x], static_cast<double>(y) - flow.v[y * n + x]));
        out.frames.push_back(next);
        out.epochs.push_back(start_epoch + static_cast<std::int64_t>(s) * cadence);
        current = std::move(next);
    }
    return out;
}

struct PriorParams {
    FlowParams flow;
    double perturb_sigma = 0.0;  // px/frame, emulates imperfect priors
    std::uint64_t perturb_seed = 0;
};

// Echo-extrapolation prior: flow from the last two observed frames, then
// semi-Lagrangian advection of the last frame over the forecast horizon.
inline FrameSequence generate_prior(const FrameSequence& hist, int t_out, const PriorParams& params = {}) {
    if (hist.size() < 2) throw DataError("generate_prior: need at least two history frames");
    FlowField flow = estimate_flow(hist.frames[hist.size() - 2], hist.frames[hist.size() - 1], params.flow);

    if (params.perturb_sigma > 0) {
        Rng rng(params.perturb_seed);
        for (std::size_t i = 0; i < flow.u.size(); ++i) {
            flow.u.mutable_data()[i] += static_cast<real>(params.perturb_sigma * normal_sample(rng));
            flow.v.mutable_data()[i] += static_cast<real>(params.perturb_sigma * normal_sample(rng));
        }
    }

    FrameSequence out = advect(hist.frames.back(), flow, t_out, hist.epochs.back(), hist.cadence);
    out.unit = hist.unit;
    return out;
}

// Reference forecast: T_out copies of the last observation.
inline FrameSequence persistence(const Tensor& last_frame, int t_out, std::int64_t start_epoch = 0,
                                 std::int64_t cadence = 600) {
    if (t_out < 1) throw ConfigError("persistence: t_out must be >= 1");
    FrameSequence out;
    out.cadence = cadence;
    out.unit = Unit::MillimetersPerHour;
    for (int s = 1; s <= t_out; ++s) {
        out.frames.push_back(last_frame);
        out.epochs.push_back(start_epoch + static_cast<std::int64_t>(s) * cadence);
    }
    return out;
}

}  // namespace fusioncast
