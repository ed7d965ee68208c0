#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fusioncast/tensor.hpp"

namespace fusioncast {

// Uniform init in +-sqrt(6/(fan_in+fan_out)) from the caller's seeded stream.
inline void init_uniform(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    real* p = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = static_cast<real>(uniform_range(rng, -bound, bound));
}

// Biases start in +-1/sqrt(fan_in). Zero biases would leave every ReLU
// pre-activation in dead regions exactly on the kink, where central
// differences and the subgradient convention disagree.
inline void init_bias_uniform(Tensor& bias, Rng& rng, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    real* p = bias.mutable_data();
    for (std::size_t i = 0; i < bias.size(); ++i) p[i] = static_cast<real>(uniform_range(rng, -bound, bound));
}

namespace detail {

struct ConvDims {
    std::size_t in_ch, out_ch, kh, kw, h, w, oh, ow;
    int stride, pad;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& kernel, int stride, int pad) {
    if (x.rank() != 3 || kernel.rank() != 4)
        throw ShapeError("conv2d: expected map (C,H,W) and kernel (O,I,kh,kw), got " +
                         shape_string(x.shape()) + " and " + shape_string(kernel.shape()));
    if (kernel.extent(1) != x.extent(0))
        throw ShapeError("conv2d: channel mismatch, input " + shape_string(x.shape()) + " vs kernel " +
                         shape_string(kernel.shape()));
    ConvDims d{};
    d.out_ch = kernel.extent(0);
    d.in_ch = kernel.extent(1);
    d.kh = kernel.extent(2);
    d.kw = kernel.extent(3);
    d.h = x.extent(1);
    d.w = x.extent(2);
    d.stride = stride;
    d.pad = pad;
    const long oh = (static_cast<long>(d.h) + 2 * pad - static_cast<long>(d.kh)) / stride + 1;
    const long ow = (static_cast<long>(d.w) + 2 * pad - static_cast<long>(d.kw)) / stride + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: output extent < 1 for input " + shape_string(x.shape()) + " kernel " +
                         shape_string(kernel.shape()));
    d.oh = static_cast<std::size_t>(oh);
    d.ow = static_cast<std::size_t>(ow);
    return d;
}

// Valid output range [o_lo, o_hi) for one kernel offset k: keeps i = o*s - p + k
// inside [0, extent).
inline void out_range(std::size_t out_extent, std::size_t in_extent, int stride, int pad, std::size_t k,
                      std::size_t& o_lo, std::size_t& o_hi) {
    const long lo_num = pad - static_cast<long>(k);
    long lo = (lo_num <= 0) ? 0 : (lo_num + stride - 1) / stride;
    long hi = (static_cast<long>(in_extent) - 1 + pad - static_cast<long>(k)) / stride;
    if (hi > static_cast<long>(out_extent) - 1) hi = static_cast<long>(out_extent) - 1;
    if (lo < 0) lo = 0;
    o_lo = static_cast<std::size_t>(lo);
    o_hi = (hi < lo) ? o_lo : static_cast<std::size_t>(hi + 1);
}

}  // namespace detail

// Strided cross-correlation with symmetric zero padding; bias may be null.
inline Tensor conv2d_op(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride, int pad) {
    const auto d = detail::conv_dims(x, kernel, stride, pad);
    if (bias && (bias->rank() != 1 || bias->extent(0) != d.out_ch))
        throw ShapeError("conv2d: bias shape " + shape_string(bias->shape()) + " does not match out_ch " +
                         std::to_string(d.out_ch));

    Tensor out({d.out_ch, d.oh, d.ow});
    real* po = out.mutable_data();
    const real* px = x.data();
    const real* pk = kernel.data();

    for (std::size_t oc = 0; oc < d.out_ch; ++oc) {
        real* oplane = po + oc * d.oh * d.ow;
        if (bias) {
            const real b = (*bias)[oc];
            std::fill_n(oplane, d.oh * d.ow, b);
        }
        for (std::size_t ic = 0; ic < d.in_ch; ++ic) {
            const real* xplane = px + ic * d.h * d.w;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
                std::size_t oy_lo, oy_hi;
                detail::out_range(d.oh, d.h, d.stride, d.pad, ky, oy_lo, oy_hi);
                for (std::size_t kx = 0; kx < d.kw; ++kx) {
                    std::size_t ox_lo, ox_hi;
                    detail::out_range(d.ow, d.w, d.stride, d.pad, kx, ox_lo, ox_hi);
                    const real wv = pk[((oc * d.in_ch + ic) * d.kh + ky) * d.kw + kx];
                    if (wv == real(0)) continue;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t iy = oy * d.stride - d.pad + ky;
                        const real* xrow = xplane + iy * d.w;
                        real* orow = oplane + oy * d.ow;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
                            orow[ox] += wv * xrow[ox * d.stride - d.pad + kx];
                    }
                }
            }
        }
    }

    const bool needs_grad = x.requires_grad() || kernel.requires_grad() || (bias && bias->requires_grad());
    out.set_requires_grad(needs_grad);

    if (Tape* tp = detail::recording_tape(needs_grad)) {
        const int ix = tp->input_id(x);
        const int ik = tp->input_id(kernel);
        const int ib = bias ? tp->input_id(*bias) : -1;
        tp->record(out, [ix, ik, ib, x, kernel, d](Tape& t, const std::vector<real>& g) {
            const real* px = x.data();
            const real* pk = kernel.data();
            std::vector<real>* gx = ix >= 0 ? &t.adjoint(ix) : nullptr;
            std::vector<real>* gk = ik >= 0 ? &t.adjoint(ik) : nullptr;
            std::vector<real>* gb = ib >= 0 ? &t.adjoint(ib) : nullptr;

            for (std::size_t oc = 0; oc < d.out_ch; ++oc) {
                const real* gplane = g.data() + oc * d.oh * d.ow;
                if (gb) {
                    real acc = 0;
                    for (std::size_t i = 0; i < d.oh * d.ow; ++i) acc += gplane[i];
                    (*gb)[oc] += acc;
                }
                if (!gx && !gk) continue;
                for (std::size_t ic = 0; ic < d.in_ch; ++ic) {
                    const real* xplane = px + ic * d.h * d.w;
                    real* gxplane = gx ? gx->data() + ic * d.h * d.w : nullptr;
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        std::size_t oy_lo, oy_hi;
                        detail::out_range(d.oh, d.h, d.stride, d.pad, ky, oy_lo, oy_hi);
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            std::size_t ox_lo, ox_hi;
                            detail::out_range(d.ow, d.w, d.stride, d.pad, kx, ox_lo, ox_hi);
                            const std::size_t kidx = ((oc * d.in_ch + ic) * d.kh + ky) * d.kw + kx;
                            const real wv = pk[kidx];
                            real acc_k = 0;
                            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                                const std::size_t iy = oy * d.stride - d.pad + ky;
                                const real* grow = gplane + oy * d.ow;
                                const real* xrow = xplane + iy * d.w;
                                real* gxrow = gxplane ? gxplane + iy * d.w : nullptr;
                                for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                    const std::size_t ixc = ox * d.stride - d.pad + kx;
                                    const real gv = grow[ox];
                                    acc_k += gv * xrow[ixc];
                                    if (gxrow) gxrow[ixc] += gv * wv;
                                }
                            }
                            if (gk) (*gk)[kidx] += acc_k;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Transposed convolution: the linear adjoint of conv2d under a shared kernel
// array, with the kernel read as (in_ch, out_ch, kh, kw). Output extent is
// (in-1)*stride - 2*pad + k.
inline Tensor deconv2d_op(const Tensor& x, const Tensor& kernel, const Tensor* bias, int stride, int pad) {
    if (x.rank() != 3 || kernel.rank() != 4)
        throw ShapeError("deconv2d: expected map (C,H,W) and kernel (I,O,kh,kw), got " +
                         shape_string(x.shape()) + " and " + shape_string(kernel.shape()));
    if (kernel.extent(0) != x.extent(0))
        throw ShapeError("deconv2d: channel mismatch, input " + shape_string(x.shape()) + " vs kernel " +
                         shape_string(kernel.shape()));
    const std::size_t in_ch = kernel.extent(0), out_ch = kernel.extent(1);
    const std::size_t kh = kernel.extent(2), kw = kernel.extent(3);
    const std::size_t h = x.extent(1), w = x.extent(2);
    const long oh = static_cast<long>(h - 1) * stride - 2 * pad + static_cast<long>(kh);
    const long ow = static_cast<long>(w - 1) * stride - 2 * pad + static_cast<long>(kw);
    if (oh < 1 || ow < 1)
        throw ShapeError("deconv2d: output extent < 1 for input " + shape_string(x.shape()));
    if (bias && (bias->rank() != 1 || bias->extent(0) != out_ch))
        throw ShapeError("deconv2d: bias shape " + shape_string(bias->shape()) + " does not match out_ch " +
                         std::to_string(out_ch));
    const std::size_t OH = static_cast<std::size_t>(oh), OW = static_cast<std::size_t>(ow);

    Tensor out({out_ch, OH, OW});
    real* po = out.mutable_data();
    const real* px = x.data();
    const real* pk = kernel.data();

    if (bias)
        for (std::size_t oc = 0; oc < out_ch; ++oc) std::fill_n(po + oc * OH * OW, OH * OW, (*bias)[oc]);

    for (std::size_t ic = 0; ic < in_ch; ++ic) {
        const real* xplane = px + ic * h * w;
        for (std::size_t oc = 0; oc < out_ch; ++oc) {
            real* oplane = po + oc * OH * OW;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const real wv = pk[((ic * out_ch + oc) * kh + ky) * kw + kx];
                    if (wv == real(0)) continue;
                    for (std::size_t iy = 0; iy < h; ++iy) {
                        const long oy = static_cast<long>(iy) * stride - pad + static_cast<long>(ky);
                        if (oy < 0 || oy >= static_cast<long>(OH)) continue;
                        const real* xrow = xplane + iy * w;
                        real* orow = oplane + static_cast<std::size_t>(oy) * OW;
                        for (std::size_t ix = 0; ix < w; ++ix) {
                            const long ox = static_cast<long>(ix) * stride - pad + static_cast<long>(kx);
                            if (ox < 0 || ox >= static_cast<long>(OW)) continue;
                            orow[static_cast<std::size_t>(ox)] += wv * xrow[ix];
                        }
                    }
                }
            }
        }
    }

    const bool needs_grad = x.requires_grad() || kernel.requires_grad() || (bias && bias->requires_grad());
    out.set_requires_grad(needs_grad);

    if (Tape* tp = detail::recording_tape(needs_grad)) {
        const int ixid = tp->input_id(x);
        const int ik = tp->input_id(kernel);
        const int ib = bias ? tp->input_id(*bias) : -1;
        tp->record(out, [ixid, ik, ib, x, kernel, stride, pad, in_ch, out_ch, kh, kw, h, w, OH, OW](
                            Tape& t, const std::vector<real>& g) {
            const real* px = x.data();
            const real* pk = kernel.data();
            std::vector<real>* gx = ixid >= 0 ? &t.adjoint(ixid) : nullptr;
            std::vector<real>* gk = ik >= 0 ? &t.adjoint(ik) : nullptr;
            std::vector<real>* gb = ib >= 0 ? &t.adjoint(ib) : nullptr;

            if (gb) {
                for (std::size_t oc = 0; oc < out_ch; ++oc) {
                    real acc = 0;
                    const real* gplane = g.data() + oc * OH * OW;
                    for (std::size_t i = 0; i < OH * OW; ++i) acc += gplane[i];
                    (*gb)[oc] += acc;
                }
            }
            if (!gx && !gk) return;
            for (std::size_t ic = 0; ic < in_ch; ++ic) {
                const real* xplane = px + ic * h * w;
                real* gxplane = gx ? gx->data() + ic * h * w : nullptr;
                for (std::size_t oc = 0; oc < out_ch; ++oc) {
                    const real* gplane = g.data() + oc * OH * OW;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::size_t kidx = ((ic * out_ch + oc) * kh + ky) * kw + kx;
                            const real wv = pk[kidx];
                            real acc_k = 0;
                            for (std::size_t iy = 0; iy < h; ++iy) {
                                const long oy = static_cast<long>(iy) * stride - pad + static_cast<long>(ky);
                                if (oy < 0 || oy >= static_cast<long>(OH)) continue;
                                const real* grow = gplane + static_cast<std::size_t>(oy) * OW;
                                const real* xrow = xplane + iy * w;
                                real* gxrow = gxplane ? gxplane + iy * w : nullptr;
                                for (std::size_t ix = 0; ix < w; ++ix) {
                                    const long ox = static_cast<long>(ix) * stride - pad + static_cast<long>(kx);
                                    if (ox < 0 || ox >= static_cast<long>(OW)) continue;
                                    const real gv = grow[static_cast<std::size_t>(ox)];
                                    acc_k += gv * xrow[ix];
                                    if (gxrow) gxrow[ix] += gv * wv;
                                }
                            }
                            if (gk) (*gk)[kidx] += acc_k;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Per-pixel channel statistics: channel 0 = mean over C, channel 1 = max
// over C (ties resolved to the lowest channel).
inline Tensor channel_pool(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("channel_pool: expected (C,H,W), got " + shape_string(x.shape()));
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2), hw = h * w;
    Tensor out({2, h, w});
    std::vector<std::size_t> argmax(hw, 0);
    const real* px = x.data();
    real* po = out.mutable_data();

    for (std::size_t i = 0; i < hw; ++i) {
        real sum = 0, best = px[i];
        std::size_t best_c = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const real v = px[ch * hw + i];
            sum += v;
            if (v > best) {
                best = v;
                best_c = ch;
            }
        }
        po[i] = sum / static_cast<real>(c);
        po[hw + i] = best;
        argmax[i] = best_c;
    }
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, argmax, c, hw](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            const real inv_c = real(1) / static_cast<real>(c);
            for (std::size_t i = 0; i < hw; ++i) {
                const real gm = g[i] * inv_c;
                for (std::size_t ch = 0; ch < c; ++ch) gx[ch * hw + i] += gm;
                gx[argmax[i] * hw + i] += g[hw + i];
            }
        });
    }
    return out;
}

inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("global_avg_pool: expected (C,H,W), got " + shape_string(x.shape()));
    const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    Tensor out({c});
    const real* px = x.data();
    real* po = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        real acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += px[ch * hw + i];
        po[ch] = acc / static_cast<real>(hw);
    }
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, c, hw](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            const real inv = real(1) / static_cast<real>(hw);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const real gv = g[ch] * inv;
                for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += gv;
            }
        });
    }
    return out;
}

inline Tensor global_max_pool(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("global_max_pool: expected (C,H,W), got " + shape_string(x.shape()));
    const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    Tensor out({c});
    std::vector<std::size_t> argmax(c, 0);
    const real* px = x.data();
    real* po = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        real best = px[ch * hw];
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < hw; ++i) {
            if (px[ch * hw + i] > best) {
                best = px[ch * hw + i];
                best_i = i;
            }
        }
        po[ch] = best;
        argmax[ch] = best_i;
    }
    out.set_requires_grad(x.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int ix = tp->input_id(x);
        tp->record(out, [ix, argmax, c, hw](Tape& t, const std::vector<real>& g) {
            if (ix < 0) return;
            auto& gx = t.adjoint(ix);
            for (std::size_t ch = 0; ch < c; ++ch) gx[ch * hw + argmax[ch]] += g[ch];
        });
    }
    return out;
}

// y = W v + b for a vector v (In) and W (Out,In).
inline Tensor dense(const Tensor& v, const Tensor& weight, const Tensor& bias) {
    if (v.rank() != 1 || weight.rank() != 2 || weight.extent(1) != v.extent(0))
        throw ShapeError("dense: dimension mismatch, v " + shape_string(v.shape()) + " vs W " +
                         shape_string(weight.shape()));
    const std::size_t out_n = weight.extent(0), in_n = weight.extent(1);
    if (bias.rank() != 1 || bias.extent(0) != out_n)
        throw ShapeError("dense: bias shape " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(out_n));
    Tensor out({out_n});
    const real* pv = v.data();
    const real* pw = weight.data();
    real* po = out.mutable_data();
    for (std::size_t o = 0; o < out_n; ++o) {
        real acc = bias[o];
        for (std::size_t i = 0; i < in_n; ++i) acc += pw[o * in_n + i] * pv[i];
        po[o] = acc;
    }
    out.set_requires_grad(v.requires_grad() || weight.requires_grad() || bias.requires_grad());

    if (Tape* tp = detail::recording_tape(out.requires_grad())) {
        const int iv = tp->input_id(v), iw = tp->input_id(weight), ib = tp->input_id(bias);
        tp->record(out, [iv, iw, ib, v, weight, out_n, in_n](Tape& t, const std::vector<real>& g) {
            const real* pv = v.data();
            const real* pw = weight.data();
            if (ib >= 0) detail::axpy(t.adjoint(ib), g);
            if (iw >= 0) {
                auto& gw = t.adjoint(iw);
                for (std::size_t o = 0; o < out_n; ++o)
                    for (std::size_t i = 0; i < in_n; ++i) gw[o * in_n + i] += g[o] * pv[i];
            }
            if (iv >= 0) {
                auto& gv = t.adjoint(iv);
                for (std::size_t o = 0; o < out_n; ++o)
                    for (std::size_t i = 0; i < in_n; ++i) gv[i] += g[o] * pw[o * in_n + i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Conv2DLayer {
    Parameter kernel;  // (out_ch, in_ch, kh, kw)
    Parameter bias;    // (out_ch)
    int stride = 1;
    int padding = 0;

    Conv2DLayer() = default;
    Conv2DLayer(const std::string& name, std::size_t out_ch, std::size_t in_ch, std::size_t k, int stride_,
                int padding_, Rng& rng)
        : kernel(name + ".kernel", Tensor({out_ch, in_ch, k, k})),
          bias(name + ".bias", Tensor({out_ch})),
          stride(stride_),
          padding(padding_) {
        init_uniform(kernel.value, rng, in_ch * k * k, out_ch * k * k);
        init_bias_uniform(bias.value, rng, in_ch * k * k);
    }

    std::size_t in_channels() const { return kernel.value.extent(1); }
    std::size_t out_channels() const { return kernel.value.extent(0); }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&kernel);
        out.push_back(&bias);
    }
};

inline Tensor conv2d(const Tensor& x, const Conv2DLayer& layer) {
    return conv2d_op(x, layer.kernel.value, &layer.bias.value, layer.stride, layer.padding);
}

struct Deconv2DLayer {
    Parameter kernel;  // (in_ch, out_ch, kh, kw)
    Parameter bias;    // (out_ch)
    int stride = 2;
    int padding = 0;

    Deconv2DLayer() = default;
    Deconv2DLayer(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t k, int stride_,
                  int padding_, Rng& rng)
        : kernel(name + ".kernel", Tensor({in_ch, out_ch, k, k})),
          bias(name + ".bias", Tensor({out_ch})),
          stride(stride_),
          padding(padding_) {
        init_uniform(kernel.value, rng, in_ch * k * k, out_ch * k * k);
        init_bias_uniform(bias.value, rng, in_ch * k * k);
    }

    std::size_t in_channels() const { return kernel.value.extent(0); }
    std::size_t out_channels() const { return kernel.value.extent(1); }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&kernel);
        out.push_back(&bias);
    }
};

inline Tensor deconv2d(const Tensor& x, const Deconv2DLayer& layer) {
    return deconv2d_op(x, layer.kernel.value, &layer.bias.value, layer.stride, layer.padding);
}

// Two dense layers with a ReLU between; the same weights serve every vector
// passed through (shared across pooled descriptors).
struct SharedMLP {
    Parameter w1, b1, w2, b2;
    std::size_t channels = 0;

    static constexpr std::size_t kReduction = 4;
    static std::size_t hidden_width(std::size_t c) { return std::max<std::size_t>(c / kReduction, 4); }

    SharedMLP() = default;
    SharedMLP(const std::string& name, std::size_t c, Rng& rng)
        : w1(name + ".w1", Tensor({hidden_width(c), c})),
          b1(name + ".b1", Tensor({hidden_width(c)})),
          w2(name + ".w2", Tensor({c, hidden_width(c)})),
          b2(name + ".b2", Tensor({c})),
          channels(c) {
        init_uniform(w1.value, rng, c, hidden_width(c));
        init_bias_uniform(b1.value, rng, c);
        init_uniform(w2.value, rng, hidden_width(c), c);
        init_bias_uniform(b2.value, rng, hidden_width(c));
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&w1);
        out.push_back(&b1);
        out.push_back(&w2);
        out.push_back(&b2);
    }
};

inline Tensor mlp_apply(const Tensor& v, const SharedMLP& mlp) {
    if (v.rank() != 1 || v.extent(0) != mlp.channels)
        throw ShapeError("mlp_apply: expected vector of length " + std::to_string(mlp.channels) + ", got " +
                         shape_string(v.shape()));
    return dense(relu(dense(v, mlp.w1.value, mlp.b1.value)), mlp.w2.value, mlp.b2.value);
}

// ---------------------------------------------------------------------------
// ConvLSTM cell, gate order (input, forget, candidate, output), no peephole
// terms. Forget-gate bias starts at +1.
// ---------------------------------------------------------------------------

struct ConvLSTMCell {
    Parameter w_x;   // (4*hidden, in_ch, k, k)
    Parameter w_h;   // (4*hidden, hidden, k, k)
    Parameter bias;  // (4*hidden)
    std::size_t in_ch = 0, hidden_ch = 0;
    int ksize = 3;

    ConvLSTMCell() = default;
    ConvLSTMCell(const std::string& name, std::size_t in_ch_, std::size_t hidden_, Rng& rng, int k = 3)
        : w_x(name + ".w_x", Tensor({4 * hidden_, in_ch_, static_cast<std::size_t>(k), static_cast<std::size_t>(k)})),
          w_h(name + ".w_h", Tensor({4 * hidden_, hidden_, static_cast<std::size_t>(k), static_cast<std::size_t>(k)})),
          bias(name + ".bias", Tensor({4 * hidden_})),
          in_ch(in_ch_),
          hidden_ch(hidden_),
          ksize(k) {
        init_uniform(w_x.value, rng, in_ch_ * k * k, 4 * hidden_ * k * k);
        init_uniform(w_h.value, rng, hidden_ * k * k, 4 * hidden_ * k * k);
        real* b = bias.value.mutable_data();
        for (std::size_t i = hidden_; i < 2 * hidden_; ++i) b[i] = real(1);
    }

    int padding() const { return ksize / 2; }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&w_x);
        out.push_back(&w_h);
        out.push_back(&bias);
    }
};

struct BranchState {
    Tensor h;
    Tensor c;
};

inline BranchState convlstm_step(const Tensor& x, const Tensor& h, const Tensor& c, const ConvLSTMCell& cell) {
    if (x.extent(1) != h.extent(1) || x.extent(2) != h.extent(2) || !h.same_shape(c))
        throw ShapeError("convlstm_step: state/input extents disagree, x " + shape_string(x.shape()) + " h " +
                         shape_string(h.shape()) + " c " + shape_string(c.shape()));
    const std::size_t hc = cell.hidden_ch;
    const Tensor gates = ew_add(conv2d_op(x, cell.w_x.value, &cell.bias.value, 1, cell.padding()),
                                conv2d_op(h, cell.w_h.value, nullptr, 1, cell.padding()));
    const Tensor gi = sigmoid(slice_channels(gates, 0, hc));
    const Tensor gf = sigmoid(slice_channels(gates, hc, 2 * hc));
    const Tensor gg = tanh(slice_channels(gates, 2 * hc, 3 * hc));
    const Tensor go = sigmoid(slice_channels(gates, 3 * hc, 4 * hc));
    Tensor c_next = ew_add(ew_mul(gf, c), ew_mul(gi, gg));
    Tensor h_next = ew_mul(go, tanh(c_next));
    return {std::move(h_next), std::move(c_next)};
}

// Folds convlstm_step over a feature sequence from a zero initial state and
// returns the final (H, C).
inline BranchState encode_sequence(const std::vector<Tensor>& seq, const ConvLSTMCell& cell) {
    if (seq.empty()) throw DataError("encode_sequence: empty sequence");
    const std::size_t h = seq[0].extent(1), w = seq[0].extent(2);
    BranchState state{Tensor::zeros({cell.hidden_ch, h, w}), Tensor::zeros({cell.hidden_ch, h, w})};
    for (const Tensor& x : seq) state = convlstm_step(x, state.h, state.c, cell);
    return state;
}

}  // namespace fusioncast
