#pragma once

#include "vase/tensor.hpp"

namespace vase {

// 4x4 stride-2 convolutions with one-pixel padding, so spatial extent
// halves per layer (and doubles per transposed layer). Layout is NCHW
// flattened row-major; weights are [filters, in_channels*4*4].

namespace convdet {

inline constexpr Index kK = 4;
inline constexpr Index kS = 2;
inline constexpr Index kP = 1;

inline Index out_extent(Index in) { return (in + 2 * kP - kK) / kS + 1; }

// Gathers 4x4 patches of one sample into a [C*16, OH*OW] column matrix.
template <typename S>
void im2col(const S* x, Index c_in, Index h, Index w, RowMat<S>& cols) {
    const Index oh = out_extent(h), ow = out_extent(w);
    cols.resize(c_in * kK * kK, oh * ow);
    for (Index c = 0; c < c_in; ++c) {
        const S* plane = x + c * h * w;
        for (Index ki = 0; ki < kK; ++ki) {
            for (Index kj = 0; kj < kK; ++kj) {
                const Index r = (c * kK + ki) * kK + kj;
                for (Index oi = 0; oi < oh; ++oi) {
                    const Index si = oi * kS + ki - kP;
                    for (Index oj = 0; oj < ow; ++oj) {
                        const Index sj = oj * kS + kj - kP;
                        cols(r, oi * ow + oj) =
                            (si >= 0 && si < h && sj >= 0 && sj < w) ? plane[si * w + sj] : S(0);
                    }
                }
            }
        }
    }
}

// Scatter-adds a column matrix back onto one sample (adjoint of im2col).
template <typename S>
void col2im_add(const RowMat<S>& cols, Index c_in, Index h, Index w, S* x) {
    const Index oh = out_extent(h), ow = out_extent(w);
    for (Index c = 0; c < c_in; ++c) {
        S* plane = x + c * h * w;
        for (Index ki = 0; ki < kK; ++ki) {
            for (Index kj = 0; kj < kK; ++kj) {
                const Index r = (c * kK + ki) * kK + kj;
                for (Index oi = 0; oi < oh; ++oi) {
                    const Index si = oi * kS + ki - kP;
                    if (si < 0 || si >= h) continue;
                    for (Index oj = 0; oj < ow; ++oj) {
                        const Index sj = oj * kS + kj - kP;
                        if (sj >= 0 && sj < w) plane[si * w + sj] += cols(r, oi * ow + oj);
                    }
                }
            }
        }
    }
}

}  // namespace convdet

// x: [B, C, H, W], w: [F, C*16], b: [F] -> [B, F, H/2, W/2].
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    check(x.rank() == 4, "conv2d: expected [B,C,H,W] input, got " + shape_str(x.shape()));
    const Index bsz = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
    check(w.rank() == 2 && w.dim(1) == c_in * 16,
          "conv2d: weight shape " + shape_str(w.shape()) + " incompatible with " +
              std::to_string(c_in) + " input channels");
    const Index f = w.dim(0);
    check(b.rank() == 1 && b.dim(0) == f, "conv2d: bias shape mismatch");
    detail::check_finite(x, "conv2d");
    detail::check_finite(w, "conv2d");
    const Index oh = convdet::out_extent(h), ow = convdet::out_extent(wd);
    ArrX<S> out(bsz * f * oh * ow);
    RowMat<S> cols;
    for (Index i = 0; i < bsz; ++i) {
        convdet::im2col(x.values().data() + i * c_in * h * wd, c_in, h, wd, cols);
        Eigen::Map<RowMat<S>> y(out.data() + i * f * oh * ow, f, oh * ow);
        y.noalias() = Eigen::Map<const RowMat<S>>(w.values().data(), f, c_in * 16) * cols;
        y.colwise() += Eigen::Map<const VecX<S>>(b.values().data(), f);
    }
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return detail::make_op<S>(
        {bsz, f, oh, ow}, std::move(out), {x, w, b},
        [xn, wn, bn, bsz, c_in, h, wd, f, oh, ow](const ArrX<S>& g) {
            RowMat<S> cols;
            for (Index i = 0; i < bsz; ++i) {
                Eigen::Map<const RowMat<S>> G(g.data() + i * f * oh * ow, f, oh * ow);
                if (wn->requires_grad || xn->requires_grad)
                    convdet::im2col(xn->value.data() + i * c_in * h * wd, c_in, h, wd, cols);
                if (wn->requires_grad) {
                    Eigen::Map<RowMat<S>> dW(wn->grad.data(), f, c_in * 16);
                    dW.noalias() += G * cols.transpose();
                }
                if (xn->requires_grad) {
                    RowMat<S> dcols =
                        Eigen::Map<const RowMat<S>>(wn->value.data(), f, c_in * 16).transpose() * G;
                    convdet::col2im_add(dcols, c_in, h, wd,
                                        xn->grad.data() + i * c_in * h * wd);
                }
                if (bn->requires_grad) {
                    Eigen::Map<VecX<S>> db(bn->grad.data(), f);
                    db.noalias() += G.rowwise().sum();
                }
            }
        });
}

// Adjoint map of conv2d in its data argument: [B, F, h, w] -> [B, C, 2h, 2w].
// Weights use the same [F, C*16] layout as the convolution they mirror.
template <typename S>
TensorT<S> conv2d_transpose(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    check(x.rank() == 4, "conv2d_transpose: expected [B,F,h,w] input, got " +
                             shape_str(x.shape()));
    const Index bsz = x.dim(0), f = x.dim(1), h = x.dim(2), wd = x.dim(3);
    check(w.rank() == 2 && w.dim(0) == f,
          "conv2d_transpose: weight shape " + shape_str(w.shape()) + " incompatible with " +
              std::to_string(f) + " input channels");
    const Index c_out = w.dim(1) / 16;
    check(w.dim(1) == c_out * 16, "conv2d_transpose: weight width must be a multiple of 16");
    const Index ho = h * 2, wo = wd * 2;
    check(convdet::out_extent(ho) == h && convdet::out_extent(wo) == wd,
          "conv2d_transpose: geometry mismatch");
    check(b.rank() == 1 && b.dim(0) == c_out, "conv2d_transpose: bias shape mismatch");
    detail::check_finite(x, "conv2d_transpose");
    detail::check_finite(w, "conv2d_transpose");
    ArrX<S> out = ArrX<S>::Zero(bsz * c_out * ho * wo);
    for (Index i = 0; i < bsz; ++i) {
        RowMat<S> cols =
            Eigen::Map<const RowMat<S>>(w.values().data(), f, c_out * 16).transpose() *
            Eigen::Map<const RowMat<S>>(x.values().data() + i * f * h * wd, f, h * wd);
        convdet::col2im_add(cols, c_out, ho, wo, out.data() + i * c_out * ho * wo);
        for (Index c = 0; c < c_out; ++c)
            out.segment(i * c_out * ho * wo + c * ho * wo, ho * wo) += b.values()(c);
    }
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return detail::make_op<S>(
        {bsz, c_out, ho, wo}, std::move(out), {x, w, b},
        [xn, wn, bn, bsz, f, h, wd, c_out, ho, wo](const ArrX<S>& g) {
            RowMat<S> gcols;
            for (Index i = 0; i < bsz; ++i) {
                convdet::im2col(g.data() + i * c_out * ho * wo, c_out, ho, wo, gcols);
                if (xn->requires_grad) {
                    Eigen::Map<RowMat<S>> dX(xn->grad.data() + i * f * h * wd, f, h * wd);
                    dX.noalias() +=
                        Eigen::Map<const RowMat<S>>(wn->value.data(), f, c_out * 16) * gcols;
                }
                if (wn->requires_grad) {
                    Eigen::Map<RowMat<S>> dW(wn->grad.data(), f, c_out * 16);
                    dW.noalias() +=
                        Eigen::Map<const RowMat<S>>(xn->value.data() + i * f * h * wd, f, h * wd) *
                        gcols.transpose();
                }
                if (bn->requires_grad) {
                    for (Index c = 0; c < c_out; ++c)
                        bn->grad(c) += g.segment(i * c_out * ho * wo + c * ho * wo, ho * wo).sum();
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Differentiable 2-D translation (bilinear resampling)
// ---------------------------------------------------------------------------

// Shifts each sample of an image batch by its own (dx, dy) in pixels;
// out-of-frame content reads as zero. Differentiable in the image and in
// the offsets (piecewise in the offsets, smooth between integer shifts).
// x: [B, C, H, W]; dx, dy: [B].
template <typename S>
TensorT<S> translate_bilinear(const TensorT<S>& x, const TensorT<S>& dx, const TensorT<S>& dy) {
    check(x.rank() == 4, "translate_bilinear: expected [B,C,H,W] input, got " +
                             shape_str(x.shape()));
    const Index bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check(dx.rank() == 1 && dx.dim(0) == bsz && dy.rank() == 1 && dy.dim(0) == bsz,
          "translate_bilinear: offsets must be length-B vectors");
    detail::check_finite(dx, "translate_bilinear");
    detail::check_finite(dy, "translate_bilinear");

    auto sample = [h, w](const S* plane, Index si, Index sj) -> S {
        return (si >= 0 && si < h && sj >= 0 && sj < w) ? plane[si * w + sj] : S(0);
    };

    ArrX<S> out(bsz * c * h * w);
    for (Index b = 0; b < bsz; ++b) {
        const S ox = dx.values()(b), oy = dy.values()(b);
        for (Index ch = 0; ch < c; ++ch) {
            const S* plane = x.values().data() + (b * c + ch) * h * w;
            S* dst = out.data() + (b * c + ch) * h * w;
            for (Index i = 0; i < h; ++i) {
                const S sy = static_cast<S>(i) - oy;
                const Index i0 = static_cast<Index>(std::floor(sy));
                const S fy = sy - static_cast<S>(i0);
                for (Index j = 0; j < w; ++j) {
                    const S sx = static_cast<S>(j) - ox;
                    const Index j0 = static_cast<Index>(std::floor(sx));
                    const S fx = sx - static_cast<S>(j0);
                    const S v00 = sample(plane, i0, j0), v01 = sample(plane, i0, j0 + 1);
                    const S v10 = sample(plane, i0 + 1, j0), v11 = sample(plane, i0 + 1, j0 + 1);
                    dst[i * w + j] = (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) +
                                     fy * ((S(1) - fx) * v10 + fx * v11);
                }
            }
        }
    }

    auto xn = x.node(), dxn = dx.node(), dyn = dy.node();
    return detail::make_op<S>(
        {bsz, c, h, w}, std::move(out), {x, dx, dy},
        [xn, dxn, dyn, bsz, c, h, w, sample](const ArrX<S>& g) {
            for (Index b = 0; b < bsz; ++b) {
                const S ox = dxn->value(b), oy = dyn->value(b);
                S gx = S(0), gy = S(0);
                for (Index ch = 0; ch < c; ++ch) {
                    const S* plane = xn->value.data() + (b * c + ch) * h * w;
                    const S* gp = g.data() + (b * c + ch) * h * w;
                    S* dplane = xn->requires_grad
                                    ? xn->grad.data() + (b * c + ch) * h * w
                                    : nullptr;
                    for (Index i = 0; i < h; ++i) {
                        const S sy = static_cast<S>(i) - oy;
                        const Index i0 = static_cast<Index>(std::floor(sy));
                        const S fy = sy - static_cast<S>(i0);
                        for (Index j = 0; j < w; ++j) {
                            const S go = gp[i * w + j];
                            if (go == S(0)) continue;
                            const S sx = static_cast<S>(j) - ox;
                            const Index j0 = static_cast<Index>(std::floor(sx));
                            const S fx = sx - static_cast<S>(j0);
                            const S v00 = sample(plane, i0, j0), v01 = sample(plane, i0, j0 + 1);
                            const S v10 = sample(plane, i0 + 1, j0),
                                    v11 = sample(plane, i0 + 1, j0 + 1);
                            // d/dsx and d/dsy of the bilinear value; offsets
                            // enter with opposite sign.
                            const S dvx = (S(1) - fy) * (v01 - v00) + fy * (v11 - v10);
                            const S dvy = (S(1) - fx) * (v10 - v00) + fx * (v11 - v01);
                            gx -= go * dvx;
                            gy -= go * dvy;
                            if (dplane) {
                                auto scatter = [&](Index si, Index sj, S wgt) {
                                    if (si >= 0 && si < h && sj >= 0 && sj < w)
                                        dplane[si * w + sj] += go * wgt;
                                };
                                scatter(i0, j0, (S(1) - fy) * (S(1) - fx));
                                scatter(i0, j0 + 1, (S(1) - fy) * fx);
                                scatter(i0 + 1, j0, fy * (S(1) - fx));
                                scatter(i0 + 1, j0 + 1, fy * fx);
                            }
                        }
                    }
                }
                if (dxn->requires_grad) dxn->grad(b) += gx;
                if (dyn->requires_grad) dyn->grad(b) += gy;
            }
        });
}

}  // namespace vase
