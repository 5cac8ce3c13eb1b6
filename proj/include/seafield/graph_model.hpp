#ifndef SEAFIELD_GRAPH_MODEL_HPP
#define SEAFIELD_GRAPH_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "seafield/model_base.hpp"

namespace seafield::models {

/// Learned sparse directed adjacency from two node-embedding tables:
/// A = ReLU(tanh(alpha (M1 M2^T - M2 M1^T))), then only the k largest
/// entries of each row are kept. The result depends on the embeddings
/// only, never on the input window.
class GraphLearner {
public:
    GraphLearner() = default;

    GraphLearner(std::int64_t n_nodes, std::int64_t dim, double alpha, std::int64_t k, Rng& rng)
        : alpha_(alpha), k_(k) {
        SF_CHECK(k >= 1 && k <= n_nodes, "graph top-k out of range");
        m1_ = ad::parameter(nn::normal_init({n_nodes, dim}, 1.0, rng));
        m2_ = ad::parameter(nn::normal_init({n_nodes, dim}, 1.0, rng));
    }

    ad::Var adjacency() const {
        ad::Var diff = ad::sub(ad::matmul(m1_, m2_, /*transpose_b=*/true),
                               ad::matmul(m2_, m1_, /*transpose_b=*/true));
        ad::Var dense = ad::relu(ad::tanh_op(ad::mul_scalar(diff, alpha_)));
        Tensor keep = ad::topk_row_mask(dense->value, k_);
        return ad::mul(dense, ad::constant(std::move(keep)));
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        pm.add(prefix + ".m1", m1_);
        pm.add(prefix + ".m2", m2_);
    }

    ad::Var& embeddings1() { return m1_; }
    ad::Var& embeddings2() { return m2_; }

private:
    ad::Var m1_, m2_;
    double alpha_ = 3.0;
    std::int64_t k_ = 1;
};

/// Mix-hop propagation: H^(0) = H, H^(k) = beta H + (1-beta) A~ H^(k-1),
/// followed by a learnable selection over the concatenated hops. The
/// selection is a bias-free 1x1 convolution so the layer stays linear in
/// its input for a fixed graph.
class MixHopLayer {
public:
    MixHopLayer() = default;

    MixHopLayer(std::int64_t in_ch, std::int64_t out_ch, std::int64_t hops, double beta, Rng& rng)
        : hops_(hops), beta_(beta) {
        select_ = nn::TemporalConv((hops + 1) * in_ch, out_ch, 1, rng, /*dilation=*/1,
                                   /*causal_pad=*/false, /*with_bias=*/false);
    }

    /// `adj_norm` must already be row-normalized with self-loops.
    ad::Var forward(const ad::Var& h, const ad::Var& adj_norm) const {
        std::vector<ad::Var> states{h};
        ad::Var cur = h;
        for (std::int64_t k = 0; k < hops_; ++k) {
            cur = ad::add(ad::mul_scalar(h, beta_),
                          ad::mul_scalar(ad::node_mix(cur, adj_norm), 1.0 - beta_));
            states.push_back(cur);
        }
        return select_.apply(ad::concat(states, 1));
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        select_.collect(prefix + ".select", pm);
    }

    nn::TemporalConv& selection() { return select_; }

private:
    nn::TemporalConv select_;
    std::int64_t hops_ = 2;
    double beta_ = 0.05;
};

/// Inception over kernels {2,3,6,7} at a fixed dilation, unpadded.
/// Branch outputs are right-aligned to the shortest branch before the
/// channel concatenation; the time axis shrinks by (max_kernel-1)*dilation.
class DilatedInception {
public:
    DilatedInception() = default;

    DilatedInception(std::int64_t in_ch, std::int64_t out_ch,
                     const std::vector<std::int64_t>& kernels, std::int64_t dilation, Rng& rng) {
        SF_CHECK(out_ch % static_cast<std::int64_t>(kernels.size()) == 0,
                 "channel width must divide evenly across branches");
        const std::int64_t branch = out_ch / static_cast<std::int64_t>(kernels.size());
        for (auto k : kernels) branches_.emplace_back(in_ch, branch, k, rng, dilation);
        max_kernel_ = *std::max_element(kernels.begin(), kernels.end());
        dilation_ = dilation;
    }

    ad::Var forward(const ad::Var& x) const {
        SF_CHECK(x->value.dim(3) >= 1 + (max_kernel_ - 1) * dilation_,
                 "window shorter than the dilated receptive field");
        std::vector<ad::Var> outs;
        std::int64_t min_len = x->value.dim(3);
        for (const auto& conv : branches_) {
            ad::Var o = conv.apply(x);
            min_len = std::min(min_len, o->value.dim(3));
            outs.push_back(std::move(o));
        }
        for (auto& o : outs) o = fusion::align_global(o, min_len);
        return ad::concat(outs, 1);
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        for (std::size_t i = 0; i < branches_.size(); ++i)
            branches_[i].collect(prefix + ".branch" + std::to_string(i), pm);
    }

    std::vector<nn::TemporalConv>& branches() { return branches_; }
    std::int64_t shrink() const { return (max_kernel_ - 1) * dilation_; }

private:
    std::vector<nn::TemporalConv> branches_;
    std::int64_t max_kernel_ = 7;
    std::int64_t dilation_ = 1;
};

/// One spatio-temporal module: gated dilated-inception temporal
/// convolution, optional layer-wise fusion with the CNF features, dual
/// direction mix-hop graph convolution, BatchNorm, and the residual
/// around the module. A skip path taps the temporal output.
struct SpatioTemporalModule {
    DilatedInception filter_conv;
    DilatedInception gate_conv;
    fusion::FusionSite fuse;       // engaged only in SEAGNN layer-wise mode
    nn::TemporalConv adapter;      // CNF width -> module width
    MixHopLayer mixhop_fwd;
    MixHopLayer mixhop_rev;
    nn::TemporalConv skip;         // 1 x L_i, collapses time
    nn::BatchNorm norm;
};

/// MTGNN-style forecaster and its time-aware variant. The input window is
/// left zero-padded to the stack's receptive field (the source design);
/// CNF coordinates cover the padded steps, which are real earlier
/// instants on the uniform time grid.
class GraphForecaster : public ForecastModel {
public:
    GraphForecaster(const ModelConfig& cfg, std::int64_t n_nodes,
                    std::optional<Tensor> prior_adjacency, Rng& rng)
        : cfg_(cfg) {
        has_time_component_ = kind_has_time_component(cfg.kind);
        const auto dil = cfg.effective_dilations();
        receptive_field_ = 1;
        for (auto d : dil) receptive_field_ += (cfg.max_kernel() - 1) * d;
        padded_len_ = std::max(cfg.t_h, receptive_field_);

        if (cfg.use_prior_graph) {
            SF_CHECK(prior_adjacency.has_value(), "use_prior_graph requires a dataset adjacency");
            prior_ = *prior_adjacency;
        } else {
            const std::int64_t k = std::min(cfg.graph_topk, n_nodes);
            learner_ = GraphLearner(n_nodes, cfg.graph_dim, cfg.graph_alpha, k, rng);
        }

        start_ = nn::TemporalConv(cfg.input_channels, cfg.hidden, 1, rng);
        skip0_ = nn::TemporalConv(cfg.input_channels, cfg.skip_channels, padded_len_, rng);

        if (has_time_component_) {
            nf::CnfConfig cnf_cfg = cfg.cnf;
            cnf_cfg.out_dim = cfg.hidden;
            time_ = TimeComponent(cnf_cfg, n_nodes, rng);
            if (!cfg.layerwise_fusion) pre_adapter_ = nn::TemporalConv(cfg.hidden, cfg.hidden, 1, rng);
        }

        std::int64_t len = padded_len_;
        for (std::int64_t i = 0; i < cfg.modules; ++i) {
            SpatioTemporalModule mod;
            mod.filter_conv = DilatedInception(cfg.hidden, cfg.hidden, cfg.kernels, dil[i], rng);
            mod.gate_conv = DilatedInception(cfg.hidden, cfg.hidden, cfg.kernels, dil[i], rng);
            len -= mod.filter_conv.shrink();
            SF_CHECK(len >= 1, "receptive field exceeds the padded window");
            if (has_time_component_ && cfg.layerwise_fusion) {
                mod.adapter = nn::TemporalConv(cfg.hidden, cfg.hidden, 1, rng);
                mod.fuse = fusion::FusionSite(cfg.fusion_mode, cfg.hidden, rng);
            }
            mod.skip = nn::TemporalConv(cfg.hidden, cfg.skip_channels, len, rng);
            mod.mixhop_fwd = MixHopLayer(cfg.hidden, cfg.hidden, cfg.hops, cfg.hop_beta, rng);
            mod.mixhop_rev = MixHopLayer(cfg.hidden, cfg.hidden, cfg.hops, cfg.hop_beta, rng);
            mod.norm = nn::BatchNorm(cfg.hidden);
            modules_.push_back(std::move(mod));
        }
        final_len_ = len;
        skip_end_ = nn::TemporalConv(cfg.hidden, cfg.skip_channels, final_len_, rng);
        out1_ = nn::TemporalConv(cfg.skip_channels, cfg.end_channels, 1, rng);
        out2_ = nn::TemporalConv(cfg.end_channels, cfg.t_f, 1, rng);
    }

    std::int64_t required_pad() const override { return padded_len_ - cfg_.t_h; }
    std::int64_t receptive_field() const { return receptive_field_; }

    /// Adjacency after sparsification, before normalization.
    ad::Var learned_adjacency() const {
        if (cfg_.use_prior_graph) return ad::constant(prior_);
        return learner_.adjacency();
    }

    ad::Var forward(const BatchInput& in, bool training) override {
        SF_CHECK(in.history.dim(1) == cfg_.input_channels, "unexpected input channels");
        SF_CHECK(in.history.dim(3) == cfg_.t_h, "unexpected history length");
        SF_CHECK(in.t_pad == required_pad(), "batch padding does not match the receptive field");

        ad::Var raw = ad::pad_last_left(ad::constant(in.history), in.t_pad);
        ad::Var x = start_.apply(raw);
        ad::Var skip_acc = skip0_.apply(raw);

        ad::Var adj = learned_adjacency();
        ad::Var adj_fwd = ad::row_normalize_self_loops(adj);
        ad::Var adj_rev = ad::row_normalize_self_loops(ad::transpose2d(adj));

        ad::Var global;
        if (has_time_component_) {
            global = time_.forward(in); // {B, hidden, N, padded_len}
            if (!cfg_.layerwise_fusion) x = ad::add(x, pre_adapter_.apply(global));
        }

        for (auto& mod : modules_) {
            ad::Var residual = x;
            ad::Var t = ad::mul(ad::tanh_op(mod.filter_conv.forward(x)),
                                ad::sigmoid(mod.gate_conv.forward(x)));
            if (has_time_component_ && cfg_.layerwise_fusion) {
                ad::Var g = fusion::align_global(mod.adapter.apply(global), t->value.dim(3));
                t = mod.fuse.apply(t, g);
            }
            skip_acc = ad::add(skip_acc, mod.skip.apply(t));
            ad::Var gc = ad::add(mod.mixhop_fwd.forward(t, adj_fwd),
                                 mod.mixhop_rev.forward(t, adj_rev));
            x = ad::add(mod.norm.apply(gc, training),
                        fusion::align_global(residual, gc->value.dim(3)));
        }
        skip_acc = ad::add(skip_acc, skip_end_.apply(x));
        return out2_.apply(ad::relu(out1_.apply(ad::relu(skip_acc))));
    }

    void collect(nn::ParamMap& pm) const override {
        const std::string root = model_kind_name(cfg_.kind);
        if (!cfg_.use_prior_graph) learner_.collect(root + ".graph", pm);
        start_.collect(root + ".start", pm);
        skip0_.collect(root + ".skip0", pm);
        if (has_time_component_) {
            time_.collect(root + ".cnf", pm);
            if (!cfg_.layerwise_fusion) pre_adapter_.collect(root + ".pre_adapter", pm);
        }
        for (std::size_t i = 0; i < modules_.size(); ++i) {
            const std::string p = root + ".module" + std::to_string(i);
            const auto& m = modules_[i];
            m.filter_conv.collect(p + ".filter", pm);
            m.gate_conv.collect(p + ".gate", pm);
            if (has_time_component_ && cfg_.layerwise_fusion) {
                m.adapter.collect(p + ".adapter", pm);
                m.fuse.collect(p + ".fusion", pm);
            }
            m.skip.collect(p + ".skip", pm);
            m.mixhop_fwd.collect(p + ".mixhop_fwd", pm);
            m.mixhop_rev.collect(p + ".mixhop_rev", pm);
            m.norm.collect(p + ".bn", pm);
        }
        skip_end_.collect(root + ".skip_end", pm);
        out1_.collect(root + ".out1", pm);
        out2_.collect(root + ".out2", pm);
    }

    void collect_buffers(nn::BufferMap& bm) override {
        const std::string root = model_kind_name(cfg_.kind);
        if (has_time_component_) time_.collect_buffers(root + ".cnf", bm);
        for (std::size_t i = 0; i < modules_.size(); ++i)
            modules_[i].norm.collect_buffers(root + ".module" + std::to_string(i) + ".bn", bm);
    }

    const ModelConfig& config() const override { return cfg_; }

    std::vector<SpatioTemporalModule>& modules() { return modules_; }
    GraphLearner& graph_learner() { return learner_; }
    TimeComponent& time_component() { return time_; }

private:
    ModelConfig cfg_;
    bool has_time_component_ = false;
    std::int64_t receptive_field_ = 0;
    std::int64_t padded_len_ = 0;
    std::int64_t final_len_ = 0;
    GraphLearner learner_;
    Tensor prior_;
    nn::TemporalConv start_, skip0_;
    nn::TemporalConv pre_adapter_;
    TimeComponent time_;
    std::vector<SpatioTemporalModule> modules_;
    nn::TemporalConv skip_end_;
    nn::TemporalConv out1_, out2_;
};

} // namespace seafield::models

#endif // SEAFIELD_GRAPH_MODEL_HPP
