#ifndef SEAFIELD_CONV_MODEL_HPP
#define SEAFIELD_CONV_MODEL_HPP

#include <string>
#include <vector>

#include "seafield/model_base.hpp"

namespace seafield::models {

/// Four parallel temporal convolutions with distinct kernel sizes,
/// concatenated on the channel axis, then ReLU, BatchNorm and a residual
/// connection around the block. In padded mode every branch is left
/// zero-padded so the time length is preserved; in valid mode branches
/// shrink and are right-aligned, and the residual is cropped to match.
class InceptionModule {
public:
    InceptionModule() = default;

    InceptionModule(std::int64_t channels, const std::vector<std::int64_t>& kernels, bool padded,
                    Rng& rng)
        : padded_(padded), channels_(channels) {
        SF_CHECK(channels % static_cast<std::int64_t>(kernels.size()) == 0,
                 "channel width must divide evenly across branches");
        const std::int64_t branch_width = channels / static_cast<std::int64_t>(kernels.size());
        for (auto k : kernels)
            branches_.emplace_back(channels, branch_width, k, rng, /*dilation=*/1,
                                   /*causal_pad=*/padded);
        bn_ = nn::BatchNorm(channels);
        max_kernel_ = *std::max_element(kernels.begin(), kernels.end());
    }

    ad::Var forward(const ad::Var& x, bool training) {
        SF_CHECK(x->value.dim(3) >= max_kernel_, "window shorter than the largest kernel");
        std::vector<ad::Var> outs;
        std::int64_t min_len = x->value.dim(3);
        for (const auto& conv : branches_) {
            ad::Var o = conv.apply(x);
            min_len = std::min(min_len, o->value.dim(3));
            outs.push_back(std::move(o));
        }
        for (auto& o : outs) o = fusion::align_global(o, min_len);
        ad::Var h = bn_.apply(ad::relu(ad::concat(outs, 1)), training);
        ad::Var res = fusion::align_global(x, min_len);
        return ad::add(h, res);
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        for (std::size_t i = 0; i < branches_.size(); ++i)
            branches_[i].collect(prefix + ".branch" + std::to_string(i), pm);
        bn_.collect(prefix + ".bn", pm);
    }

    void collect_buffers(const std::string& prefix, nn::BufferMap& bm) {
        bn_.collect_buffers(prefix + ".bn", bm);
    }

    nn::BatchNorm& batch_norm() { return bn_; }
    std::vector<nn::TemporalConv>& branches() { return branches_; }

private:
    std::vector<nn::TemporalConv> branches_;
    nn::BatchNorm bn_;
    bool padded_ = true;
    std::int64_t channels_ = 0;
    std::int64_t max_kernel_ = 0;
};

/// Two 1x1 convolutions with a ReLU between. The remaining time axis is
/// folded into the channel dimension first, so the head sees one feature
/// vector per node and emits all T_f horizons at once.
class OutputModule {
public:
    OutputModule() = default;

    OutputModule(std::int64_t in_channels, std::int64_t time_len, std::int64_t hidden,
                 std::int64_t horizon, Rng& rng)
        : time_len_(time_len) {
        conv1_ = nn::TemporalConv(in_channels * time_len, hidden, 1, rng);
        conv2_ = nn::TemporalConv(hidden, horizon, 1, rng);
    }

    ad::Var forward(const ad::Var& x) const {
        const std::int64_t b = x->value.dim(0), c = x->value.dim(1), n = x->value.dim(2),
                           l = x->value.dim(3);
        SF_CHECK(l == time_len_, "output module got an unexpected time length");
        // {B,C,N,L} -> {B, C*L, N, 1}
        ad::Var folded = ad::reshape(ad::permute(x, {0, 1, 3, 2}), {b, c * l, n, 1});
        return conv2_.apply(ad::relu(conv1_.apply(folded)));
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        conv1_.collect(prefix + ".conv1", pm);
        conv2_.collect(prefix + ".conv2", pm);
    }

private:
    nn::TemporalConv conv1_, conv2_;
    std::int64_t time_len_ = 0;
};

/// Inception baseline and its time-aware variant. The baseline is a 1x1
/// input convolution, a stack of padded inception modules and the output
/// head. With the time component enabled every module becomes a Fusion
/// Inception module: the CNF features are adapted to the module width and
/// blended with the inception output at each layer.
class ConvForecaster : public ForecastModel {
public:
    ConvForecaster(const ModelConfig& cfg, std::int64_t n_nodes, Rng& rng) : cfg_(cfg) {
        SF_CHECK(cfg.t_h >= cfg.max_kernel(), "history shorter than the largest kernel");
        has_time_component_ = kind_has_time_component(cfg.kind);
        start_ = nn::TemporalConv(cfg.input_channels, cfg.hidden, 1, rng);
        for (std::int64_t i = 0; i < cfg.modules; ++i)
            modules_.emplace_back(cfg.hidden, cfg.kernels, /*padded=*/true, rng);
        if (has_time_component_) {
            nf::CnfConfig cnf_cfg = cfg.cnf;
            cnf_cfg.out_dim = cfg.hidden;
            time_ = TimeComponent(cnf_cfg, n_nodes, rng);
            for (std::int64_t i = 0; i < cfg.modules; ++i) {
                adapters_.emplace_back(cfg.hidden, cfg.hidden, 1, rng);
                if (cfg.layerwise_fusion)
                    fusions_.emplace_back(cfg.fusion_mode, cfg.hidden, rng);
            }
        }
        output_ = OutputModule(cfg.hidden, cfg.t_h, cfg.end_channels, cfg.t_f, rng);
    }

    ad::Var forward(const BatchInput& in, bool training) override {
        SF_CHECK(in.history.dim(1) == cfg_.input_channels, "unexpected input channels");
        SF_CHECK(in.history.dim(3) == cfg_.t_h, "unexpected history length");
        ad::Var x = start_.apply(ad::constant(in.history));

        ad::Var global;
        if (has_time_component_) {
            SF_CHECK(in.t_pad == 0, "conv models take unpadded coordinates");
            global = time_.forward(in); // {B, hidden, N, T_h}
            if (!cfg_.layerwise_fusion)
                x = ad::add(x, adapters_[0].apply(global));
        }
        for (std::size_t i = 0; i < modules_.size(); ++i) {
            ad::Var local = modules_[i].forward(x, training);
            if (has_time_component_ && cfg_.layerwise_fusion) {
                ad::Var g = fusion::align_global(adapters_[i].apply(global),
                                                 local->value.dim(3));
                x = fusions_[i].apply(local, g);
            } else {
                x = local;
            }
        }
        return output_.forward(x);
    }

    void collect(nn::ParamMap& pm) const override {
        const std::string root = model_kind_name(cfg_.kind);
        start_.collect(root + ".start", pm);
        if (has_time_component_) time_.collect(root + ".cnf", pm);
        for (std::size_t i = 0; i < modules_.size(); ++i) {
            modules_[i].collect(root + ".module" + std::to_string(i), pm);
            if (has_time_component_) {
                adapters_[i].collect(root + ".adapter" + std::to_string(i), pm);
                if (cfg_.layerwise_fusion)
                    fusions_[i].collect(root + ".fusion" + std::to_string(i), pm);
            }
        }
        output_.collect(root + ".output", pm);
    }

    void collect_buffers(nn::BufferMap& bm) override {
        const std::string root = model_kind_name(cfg_.kind);
        if (has_time_component_) time_.collect_buffers(root + ".cnf", bm);
        for (std::size_t i = 0; i < modules_.size(); ++i)
            modules_[i].collect_buffers(root + ".module" + std::to_string(i), bm);
    }

    const ModelConfig& config() const override { return cfg_; }

    std::vector<InceptionModule>& modules() { return modules_; }
    std::vector<fusion::FusionSite>& fusion_sites() { return fusions_; }
    std::vector<nn::TemporalConv>& adapters() { return adapters_; }
    TimeComponent& time_component() { return time_; }

private:
    ModelConfig cfg_;
    bool has_time_component_ = false;
    nn::TemporalConv start_;
    std::vector<InceptionModule> modules_;
    std::vector<nn::TemporalConv> adapters_;
    std::vector<fusion::FusionSite> fusions_;
    TimeComponent time_;
    OutputModule output_;
};

} // namespace seafield::models

#endif // SEAFIELD_CONV_MODEL_HPP
