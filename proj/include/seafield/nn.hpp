#ifndef SEAFIELD_NN_HPP
#define SEAFIELD_NN_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "seafield/autodiff.hpp"
#include "seafield/rng.hpp"

namespace seafield::nn {

/// Ordered name -> parameter registry; the order is the serialization
/// order, so models must register deterministically.
struct ParamMap {
    std::vector<std::pair<std::string, ad::Var>> items;

    void add(const std::string& name, const ad::Var& v) {
        v->name = name;
        items.emplace_back(name, v);
    }

    std::vector<ad::Var> vars() const {
        std::vector<ad::Var> out;
        out.reserve(items.size());
        for (const auto& [_, v] : items) out.push_back(v);
        return out;
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (const auto& [_, v] : items) n += v->value.size();
        return n;
    }
};

/// Named non-trainable state (batch-norm running statistics); serialized
/// with checkpoints but never touched by the optimizer.
struct BufferMap {
    std::vector<std::pair<std::string, Tensor*>> items;

    void add(const std::string& name, Tensor* t) { items.emplace_back(name, t); }
};

inline Tensor uniform_init(std::vector<std::int64_t> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

inline Tensor normal_init(std::vector<std::int64_t> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

/// Dense layer y = x W^T + b with W stored as {out, in}.
class Linear {
public:
    Linear() = default;

    Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias = true) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        w_ = ad::parameter(uniform_init({out, in}, bound, rng));
        if (with_bias) b_ = ad::parameter(uniform_init({out}, bound, rng));
    }

    ad::Var apply(const ad::Var& x) const {
        auto y = ad::matmul(x, w_, /*transpose_b=*/true);
        return b_ ? ad::add_rowvec(y, b_) : y;
    }

    void collect(const std::string& prefix, ParamMap& pm) const {
        pm.add(prefix + ".w", w_);
        if (b_) pm.add(prefix + ".b", b_);
    }

    ad::Var& weight() { return w_; }
    ad::Var& bias() { return b_; }
    const ad::Var& weight() const { return w_; }
    const ad::Var& bias() const { return b_; }

private:
    ad::Var w_, b_;
};

/// 1-D convolution over the time axis of {B,C,N,L} tensors. With
/// `causal_pad` the input is left-padded by (K-1)*dilation zeros so the
/// time length is preserved.
class TemporalConv {
public:
    TemporalConv() = default;

    TemporalConv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, Rng& rng,
                 std::int64_t dilation = 1, bool causal_pad = false, bool with_bias = true)
        : kernel_(kernel), dilation_(dilation), causal_pad_(causal_pad) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
        w_ = ad::parameter(uniform_init({out_ch, in_ch, kernel}, bound, rng));
        if (with_bias) b_ = ad::parameter(uniform_init({out_ch}, bound, rng));
    }

    ad::Var apply(const ad::Var& x) const {
        ad::Var in = causal_pad_ ? ad::pad_last_left(x, (kernel_ - 1) * dilation_) : x;
        return ad::conv_temporal(in, w_, b_, dilation_);
    }

    void collect(const std::string& prefix, ParamMap& pm) const {
        pm.add(prefix + ".w", w_);
        if (b_) pm.add(prefix + ".b", b_);
    }

    std::int64_t kernel() const { return kernel_; }
    std::int64_t dilation() const { return dilation_; }
    ad::Var& weight() { return w_; }
    ad::Var& bias() { return b_; }

private:
    ad::Var w_, b_;
    std::int64_t kernel_ = 1;
    std::int64_t dilation_ = 1;
    bool causal_pad_ = false;
};

/// Per-channel batch normalization with running statistics for
/// evaluation mode (momentum 0.1).
class BatchNorm {
public:
    BatchNorm() = default;

    explicit BatchNorm(std::int64_t channels) {
        gamma_ = ad::parameter(Tensor::full({channels}, 1.0));
        beta_ = ad::parameter(Tensor::zeros({channels}));
        state_.running_mean = Tensor::zeros({channels});
        state_.running_var = Tensor::full({channels}, 1.0);
    }

    ad::Var apply(const ad::Var& x, bool training) {
        return ad::batchnorm(x, gamma_, beta_, state_, training);
    }

    void collect(const std::string& prefix, ParamMap& pm) const {
        pm.add(prefix + ".gamma", gamma_);
        pm.add(prefix + ".beta", beta_);
    }

    void collect_buffers(const std::string& prefix, BufferMap& bm) {
        bm.add(prefix + ".running_mean", &state_.running_mean);
        bm.add(prefix + ".running_var", &state_.running_var);
    }

    ad::BatchNormState& state() { return state_; }
    const ad::BatchNormState& state() const { return state_; }

private:
    ad::Var gamma_, beta_;
    ad::BatchNormState state_;
};

} // namespace seafield::nn

#endif // SEAFIELD_NN_HPP
