#include "coherent/layers.hpp"

#include <algorithm>
#include <cmath>

#include "coherent/common.hpp"

namespace coherent {

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad)
    : weight({out_ch, in_ch, ksize, ksize}),
      bias({out_ch}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      ksize_(ksize),
      stride_(stride),
      pad_(pad) {}

void Conv2d::init_he(Rng& rng) {
    const double std = std::sqrt(2.0 / (in_ch_ * ksize_ * ksize_));
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    bias.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != in_ch_)
        throw ShapeError("conv2d: input " + x.shape_str() + " does not match in_ch " +
                         std::to_string(in_ch_));
    const int h = x.dim(1), w = x.dim(2);
    const int oh = out_size(h), ow = out_size(w);
    if (oh < 1 || ow < 1) throw ShapeError("conv2d: input too small");
    Tensor y({out_ch_, oh, ow});

    for (int oc = 0; oc < out_ch_; ++oc) {
        double* yplane = y.data() + static_cast<std::size_t>(oc) * oh * ow;
        const double bv = bias[static_cast<std::size_t>(oc)];
        for (int i = 0; i < oh * ow; ++i) yplane[i] = bv;
        for (int ic = 0; ic < in_ch_; ++ic) {
            const double* xplane = x.data() + static_cast<std::size_t>(ic) * h * w;
            const double* wbase =
                weight.data() + (static_cast<std::size_t>(oc) * in_ch_ + ic) * ksize_ * ksize_;
            for (int ky = 0; ky < ksize_; ++ky) {
                for (int kx = 0; kx < ksize_; ++kx) {
                    const double wv = wbase[ky * ksize_ + kx];
                    if (wv == 0.0) continue;
                    const int ix_off = kx - pad_;
                    // Valid output column range for this tap.
                    int ox_lo = 0;
                    while (ox_lo < ow && ox_lo * stride_ + ix_off < 0) ++ox_lo;
                    int ox_hi = ow;
                    while (ox_hi > ox_lo && (ox_hi - 1) * stride_ + ix_off >= w) --ox_hi;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * w + ix_off;
                        double* yrow = yplane + static_cast<std::size_t>(oy) * ow;
                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                            yrow[ox] += wv * xrow[ox * stride_];
                    }
                }
            }
        }
    }
    return y;
}

void Conv2d::backward(const Tensor& x, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) const {
    const int h = x.dim(1), w = x.dim(2);
    const int oh = dy.dim(1), ow = dy.dim(2);
    if (dy.dim(0) != out_ch_ || oh != out_size(h) || ow != out_size(w))
        throw ShapeError("conv2d backward: grad shape mismatch");
    dw.check_same_shape(weight);
    db.check_same_shape(bias);
    if (dx) dx->check_same_shape(x);

    for (int oc = 0; oc < out_ch_; ++oc) {
        const double* dyplane = dy.data() + static_cast<std::size_t>(oc) * oh * ow;
        double dbsum = 0.0;
        for (int i = 0; i < oh * ow; ++i) dbsum += dyplane[i];
        db[static_cast<std::size_t>(oc)] += dbsum;

        for (int ic = 0; ic < in_ch_; ++ic) {
            const double* xplane = x.data() + static_cast<std::size_t>(ic) * h * w;
            double* dxplane = dx ? dx->data() + static_cast<std::size_t>(ic) * h * w : nullptr;
            const std::size_t wbase_idx =
                (static_cast<std::size_t>(oc) * in_ch_ + ic) * ksize_ * ksize_;
            const double* wbase = weight.data() + wbase_idx;
            double* dwbase = dw.data() + wbase_idx;
            for (int ky = 0; ky < ksize_; ++ky) {
                for (int kx = 0; kx < ksize_; ++kx) {
                    const int ix_off = kx - pad_;
                    int ox_lo = 0;
                    while (ox_lo < ow && ox_lo * stride_ + ix_off < 0) ++ox_lo;
                    int ox_hi = ow;
                    while (ox_hi > ox_lo && (ox_hi - 1) * stride_ + ix_off >= w) --ox_hi;
                    const double wv = wbase[ky * ksize_ + kx];
                    double wgrad = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * w + ix_off;
                        const double* dyrow = dyplane + static_cast<std::size_t>(oy) * ow;
                        if (dxplane) {
                            double* dxrow = dxplane + static_cast<std::size_t>(iy) * w + ix_off;
                            for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                wgrad += xrow[ox * stride_] * dyrow[ox];
                                dxrow[ox * stride_] += wv * dyrow[ox];
                            }
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                wgrad += xrow[ox * stride_] * dyrow[ox];
                        }
                    }
                    dwbase[ky * ksize_ + kx] += wgrad;
                }
            }
        }
    }
}

Linear::Linear(int in_dim, int out_dim, bool with_bias)
    : weight({out_dim, in_dim}), in_dim_(in_dim), out_dim_(out_dim) {
    if (with_bias) bias = Tensor({out_dim});
}

void Linear::init_glorot(Rng& rng) {
    const double std = std::sqrt(2.0 / (in_dim_ + out_dim_));
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    if (!bias.empty()) bias.fill(0.0);
}

void Linear::forward(const double* x, double* y) const {
    for (int o = 0; o < out_dim_; ++o) {
        const double* wrow = weight.data() + static_cast<std::size_t>(o) * in_dim_;
        double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_dim_; ++i) s += wrow[i] * x[i];
        y[o] = s;
    }
}

void Linear::backward(const double* x, const double* dy, double* dx, Tensor& dw, Tensor& db) const {
    for (int o = 0; o < out_dim_; ++o) {
        const double g = dy[o];
        const double* wrow = weight.data() + static_cast<std::size_t>(o) * in_dim_;
        double* dwrow = dw.data() + static_cast<std::size_t>(o) * in_dim_;
        for (int i = 0; i < in_dim_; ++i) {
            dwrow[i] += g * x[i];
            if (dx) dx[i] += g * wrow[i];
        }
        if (!bias.empty()) db[static_cast<std::size_t>(o)] += g;
    }
}

Tensor make_dropout_mask(const std::vector<int>& shape, double rate, Rng& rng) {
    Tensor mask(shape);
    if (rate <= 0.0) {
        mask.fill(1.0);
        return mask;
    }
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const double keep = 1.0 - rate;
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mask;
}

}  // namespace coherent
