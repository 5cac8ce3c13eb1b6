#ifndef SEAFIELD_FUSION_HPP
#define SEAFIELD_FUSION_HPP

#include <cmath>
#include <string>

#include "seafield/autodiff.hpp"
#include "seafield/common.hpp"
#include "seafield/nn.hpp"
#include "seafield/rng.hpp"

namespace seafield::fusion {

/// Sigmoid-gated convex blend of local and global features. The gate is
/// z = sigmoid((H_local || H_global) W + b) and the output is
/// (1 - z) * H_local + z * H_global, so every output element stays inside
/// the local/global envelope. Weights are shared across nodes and time.
class GatedFusionLayer {
public:
    GatedFusionLayer() = default;

    GatedFusionLayer(std::int64_t channels, Rng& rng) : channels_(channels) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * channels));
        w_ = ad::parameter(nn::uniform_init({channels, 2 * channels, 1}, bound, rng));
        b_ = ad::parameter(Tensor::zeros({channels}));
    }

    /// Both inputs: {B, C, N, L} with C == channels.
    ad::Var apply(const ad::Var& local, const ad::Var& global) const {
        SF_CHECK(local->value.same_shape(global->value), "gated_fuse: shape mismatch");
        SF_CHECK(local->value.rank() == 4 && local->value.dim(1) == channels_,
                 "gated_fuse: channel mismatch");
        ad::Var z = ad::sigmoid(ad::conv_temporal(ad::concat({local, global}, 1), w_, b_));
        return ad::add(ad::mul(ad::one_minus(z), local), ad::mul(z, global));
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        pm.add(prefix + ".w", w_);
        pm.add(prefix + ".b", b_);
    }

    std::int64_t channels() const { return channels_; }
    ad::Var& weight() { return w_; }
    ad::Var& bias() { return b_; }

    /// Saturate the gate so the blend collapses to the local (bias -> -inf)
    /// or global (bias -> +inf) input; used by ablation and recovery tests.
    void saturate(double bias_value) {
        w_->value.fill(0.0);
        b_->value.fill(bias_value);
    }

private:
    std::int64_t channels_ = 0;
    ad::Var w_, b_;
};

// ---------------------------------------------------------------------------

enum class FusionMode { Gated, Addition, Multiplication, Concatenation };

inline FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "gated") return FusionMode::Gated;
    if (s == "addition") return FusionMode::Addition;
    if (s == "multiplication") return FusionMode::Multiplication;
    if (s == "concatenation") return FusionMode::Concatenation;
    throw ConfigError("unknown fusion mode: '" + s + "'");
}

inline std::string fusion_mode_name(FusionMode m) {
    switch (m) {
    case FusionMode::Gated: return "gated";
    case FusionMode::Addition: return "addition";
    case FusionMode::Multiplication: return "multiplication";
    case FusionMode::Concatenation: return "concatenation";
    }
    return "?";
}

/// One fusion point inside a host layer. Gated mode owns a
/// GatedFusionLayer; concatenation owns the 1x1 projection back to the
/// host channel width so downstream shapes are unchanged.
class FusionSite {
public:
    FusionSite() = default;

    FusionSite(FusionMode mode, std::int64_t channels, Rng& rng) : mode_(mode) {
        if (mode == FusionMode::Gated) gate_ = GatedFusionLayer(channels, rng);
        if (mode == FusionMode::Concatenation)
            proj_ = nn::TemporalConv(2 * channels, channels, 1, rng);
    }

    ad::Var apply(const ad::Var& local, const ad::Var& global) const {
        SF_CHECK(local->value.same_shape(global->value), "fusion: shape mismatch");
        switch (mode_) {
        case FusionMode::Gated: return gate_.apply(local, global);
        case FusionMode::Addition: return ad::add(local, global);
        case FusionMode::Multiplication: return ad::mul(local, global);
        case FusionMode::Concatenation: return proj_.apply(ad::concat({local, global}, 1));
        }
        throw Error("unreachable");
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        if (mode_ == FusionMode::Gated) gate_.collect(prefix + ".gate", pm);
        if (mode_ == FusionMode::Concatenation) proj_.collect(prefix + ".proj", pm);
    }

    FusionMode mode() const { return mode_; }
    GatedFusionLayer& gate() { return gate_; }
    nn::TemporalConv& projection() { return proj_; }

private:
    FusionMode mode_ = FusionMode::Gated;
    GatedFusionLayer gate_;
    nn::TemporalConv proj_;
};

// ---------------------------------------------------------------------------

/// Keep the last `length` timestamps of the global feature block so it
/// right-aligns with a causally shrunk local block. 4-D layout {B,C,N,L}.
inline ad::Var align_global(const ad::Var& global, std::int64_t length) {
    const std::int64_t l = global->value.dim(3);
    SF_CHECK(length >= 1 && length <= l, "align_global: target length exceeds available steps");
    if (length == l) return global;
    return ad::slice(global, 3, l - length, length);
}

/// Row layout {T, N, d} used by the spec-level API and tests.
inline Tensor align_global_rows(const Tensor& global, std::int64_t length) {
    SF_CHECK(global.rank() == 3, "align_global_rows expects {T,N,d}");
    const std::int64_t t = global.dim(0);
    SF_CHECK(length >= 1 && length <= t, "align_global: target length exceeds available steps");
    Tensor out({length, global.dim(1), global.dim(2)});
    const std::int64_t row = global.dim(1) * global.dim(2);
    for (std::int64_t i = 0; i < length; ++i)
        for (std::int64_t j = 0; j < row; ++j) out[i * row + j] = global[(t - length + i) * row + j];
    return out;
}

} // namespace seafield::fusion

#endif // SEAFIELD_FUSION_HPP
