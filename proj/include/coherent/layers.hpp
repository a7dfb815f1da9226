#pragma once

#include <string>
#include <vector>

#include "coherent/rng.hpp"
#include "coherent/tensor.hpp"

namespace coherent {

// 2D convolution over CHW tensors. Backward is hand-written and covered by
// finite-difference tests.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad);

    void init_he(Rng& rng);

    Tensor forward(const Tensor& x) const;

    // dx may be null when the input gradient is not needed (frozen upstream).
    void backward(const Tensor& x, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) const;

    int out_size(int in_size) const { return (in_size + 2 * pad_ - ksize_) / stride_ + 1; }

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }

    Tensor weight;  // out_ch x in_ch x k x k
    Tensor bias;    // out_ch

private:
    int in_ch_ = 0, out_ch_ = 0, ksize_ = 0, stride_ = 1, pad_ = 0;
};

// Fully connected map. `bias` may be empty (pure matrix).
class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim, bool with_bias);

    void init_glorot(Rng& rng);

    void forward(const double* x, double* y) const;
    // Accumulates dw/db; adds the input gradient into dx when non-null.
    void backward(const double* x, const double* dy, double* dx, Tensor& dw, Tensor& db) const;

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    bool has_bias() const { return !bias.empty(); }

    Tensor weight;  // out x in
    Tensor bias;    // out (may be empty)

private:
    int in_dim_ = 0, out_dim_ = 0;
};

inline void relu_inplace(Tensor& t) {
    double* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i)
        if (p[i] < 0.0) p[i] = 0.0;
}

// dx = dy where pre-activation > 0 else 0 (in place on dy).
inline void relu_backward_inplace(const Tensor& pre, Tensor& dy) {
    const double* p = pre.data();
    double* g = dy.data();
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (p[i] <= 0.0) g[i] = 0.0;
}

// Inverted dropout mask: entries are 0 or 1/(1-rate).
Tensor make_dropout_mask(const std::vector<int>& shape, double rate, Rng& rng);

inline std::vector<double> global_average_pool(const Tensor& maps) {
    const int k = maps.dim(0);
    const int pq = maps.dim(1) * maps.dim(2);
    std::vector<double> v(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
        const double* p = maps.data() + static_cast<std::size_t>(c) * pq;
        double s = 0.0;
        for (int i = 0; i < pq; ++i) s += p[i];
        v[static_cast<std::size_t>(c)] = s / pq;
    }
    return v;
}

}  // namespace coherent
