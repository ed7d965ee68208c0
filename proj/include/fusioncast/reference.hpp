#pragma once

// Naive reference implementations used by the verification suites and tests.
// These are deliberately independent of the production code paths: plain
// scalar loops, no tape, no shared helpers beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fusioncast/tensor.hpp"

namespace fusioncast::reference {

inline Tensor random_tensor(Shape shape, Rng& rng, real lo = real(-1), real hi = real(1)) {
    Tensor t(std::move(shape));
    real* p = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = static_cast<real>(uniform_range(rng, lo, hi));
    return t;
}

inline Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride, int pad) {
    const std::size_t out_ch = kernel.extent(0), in_ch = kernel.extent(1);
    const std::size_t kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t h = x.extent(1), w = x.extent(2);
    const std::size_t oh = static_cast<std::size_t>((static_cast<long>(h) + 2 * pad - static_cast<long>(kh)) / stride + 1);
    const std::size_t ow = static_cast<std::size_t>((static_cast<long>(w) + 2 * pad - static_cast<long>(kw)) / stride + 1);
    Tensor out({out_ch, oh, ow});
    for (std::size_t oc = 0; oc < out_ch; ++oc)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                real acc = bias ? (*bias)[oc] : real(0);
                for (std::size_t ic = 0; ic < in_ch; ++ic)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
                            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                            if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w)) continue;
                            acc += x.at(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                   kernel.values()[((oc * in_ch + ic) * kh + ky) * kw + kx];
                        }
                out.at(oc, oy, ox) = acc;
            }
    return out;
}

inline Tensor deconv2d(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride, int pad) {
    const std::size_t in_ch = kernel.extent(0), out_ch = kernel.extent(1);
    const std::size_t kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t h = x.extent(1), w = x.extent(2);
    const std::size_t oh = static_cast<std::size_t>(static_cast<long>(h - 1) * stride - 2 * pad + static_cast<long>(kh));
    const std::size_t ow = static_cast<std::size_t>(static_cast<long>(w - 1) * stride - 2 * pad + static_cast<long>(kw));
    Tensor out({out_ch, oh, ow});
    for (std::size_t oc = 0; oc < out_ch; ++oc)
        for (std::size_t i = 0; i < oh * ow; ++i) out.mutable_data()[oc * oh * ow + i] = bias ? (*bias)[oc] : real(0);
    for (std::size_t ic = 0; ic < in_ch; ++ic)
        for (std::size_t oc = 0; oc < out_ch; ++oc)
            for (std::size_t iy = 0; iy < h; ++iy)
                for (std::size_t ix = 0; ix < w; ++ix)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long oy = static_cast<long>(iy) * stride - pad + static_cast<long>(ky);
                            const long ox = static_cast<long>(ix) * stride - pad + static_cast<long>(kx);
                            if (oy < 0 || oy >= static_cast<long>(oh) || ox < 0 || ox >= static_cast<long>(ow)) continue;
                            out.at(oc, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) +=
                                x.at(ic, iy, ix) * kernel.values()[((ic * out_ch + oc) * kh + ky) * kw + kx];
                        }
    return out;
}

inline Tensor channel_pool(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out({2, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
            real sum = 0, best = x.at(0, y, xx);
            for (std::size_t ch = 0; ch < c; ++ch) {
                sum += x.at(ch, y, xx);
                best = std::max(best, x.at(ch, y, xx));
            }
            out.at(0, y, xx) = sum / static_cast<real>(c);
            out.at(1, y, xx) = best;
        }
    return out;
}

inline Tensor global_avg_pool(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        real sum = 0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) sum += x.at(ch, y, xx);
        out.at(ch) = sum / static_cast<real>(h * w);
    }
    return out;
}

inline Tensor global_max_pool(const Tensor& x) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        real best = x.at(ch, 0, 0);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) best = std::max(best, x.at(ch, y, xx));
        out.at(ch) = best;
    }
    return out;
}

// Single-pass scalar evaluation of the verification metrics over one
// prediction/truth pair at one threshold.
struct PixelMetrics {
    double abs_err_sum = 0;
    double sq_err_sum = 0;
    std::size_t n = 0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline PixelMetrics pixel_metrics(const Tensor& pred, const Tensor& truth, double threshold) {
    PixelMetrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i], g = truth[i];
        m.abs_err_sum += std::abs(p - g);
        m.sq_err_sum += (p - g) * (p - g);
        ++m.n;
        const bool fp_ = p >= threshold, ft = g >= threshold;
        if (fp_ && ft) ++m.tp;
        else if (fp_ && !ft) ++m.fp;
        else if (!fp_ && ft) ++m.fn;
        else ++m.tn;
    }
    return m;
}

}  // namespace fusioncast::reference
