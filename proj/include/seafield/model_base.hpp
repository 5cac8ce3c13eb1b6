#ifndef SEAFIELD_MODEL_BASE_HPP
#define SEAFIELD_MODEL_BASE_HPP

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seafield/autodiff.hpp"
#include "seafield/common.hpp"
#include "seafield/fusion.hpp"
#include "seafield/neural_field.hpp"
#include "seafield/nn.hpp"

namespace seafield::models {

enum class ModelKind { Inception, Seacnn, Mtgnn, Seagnn };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "inception") return ModelKind::Inception;
    if (s == "seacnn") return ModelKind::Seacnn;
    if (s == "mtgnn") return ModelKind::Mtgnn;
    if (s == "seagnn") return ModelKind::Seagnn;
    throw ConfigError("unknown model kind: '" + s + "'");
}

inline std::string model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::Inception: return "inception";
    case ModelKind::Seacnn: return "seacnn";
    case ModelKind::Mtgnn: return "mtgnn";
    case ModelKind::Seagnn: return "seagnn";
    }
    return "?";
}

inline bool kind_has_time_component(ModelKind k) {
    return k == ModelKind::Seacnn || k == ModelKind::Seagnn;
}

inline bool kind_is_graph(ModelKind k) {
    return k == ModelKind::Mtgnn || k == ModelKind::Seagnn;
}

struct ModelConfig {
    ModelKind kind = ModelKind::Seagnn;
    std::int64_t t_h = 12;
    std::int64_t t_f = 12;
    std::int64_t input_channels = 3; // value + time-of-day + day-of-week
    std::int64_t hidden = 32;        // residual / convolution channel width
    std::int64_t modules = 3;
    std::vector<std::int64_t> kernels{2, 3, 6, 7};
    std::int64_t end_channels = 128; // output module hidden width

    // Graph models only.
    std::int64_t skip_channels = 64;
    std::int64_t graph_dim = 40;
    double graph_alpha = 3.0;
    std::int64_t graph_topk = 20; // clamped to N at construction
    std::int64_t hops = 2;
    double hop_beta = 0.05;
    std::vector<std::int64_t> dilations; // empty = all ones
    bool use_prior_graph = false;

    // Time component (SEACNN / SEAGNN).
    fusion::FusionMode fusion_mode = fusion::FusionMode::Gated;
    bool layerwise_fusion = true; // false = one additive fusion before the first module
    nf::CnfConfig cnf;

    std::int64_t max_kernel() const {
        return *std::max_element(kernels.begin(), kernels.end());
    }

    std::vector<std::int64_t> effective_dilations() const {
        if (dilations.empty()) return std::vector<std::int64_t>(static_cast<std::size_t>(modules), 1);
        SF_CHECK(static_cast<std::int64_t>(dilations.size()) == modules,
                 "dilations must match module count");
        return dilations;
    }
};

/// One training/evaluation batch, already shaped for the models. The
/// coordinate rows are deduplicated across the batch: coord_index[b *
/// (t_pad + t_h) + s] names the row of `coords` for step s of window b
/// (steps count from t_pad steps before the window start).
struct BatchInput {
    Tensor history; // {B, C, N, T_h}
    Tensor coords;  // {U, 2 or 3}
    std::vector<std::int64_t> coord_index;
    std::int64_t t_pad = 0;

    std::int64_t batch() const { return history.dim(0); }
    std::int64_t nodes() const { return history.dim(2); }
    std::int64_t padded_len() const { return t_pad + history.dim(3); }
};

class ForecastModel {
public:
    virtual ~ForecastModel() = default;

    /// Predictions {B, T_f, N, 1}. `training` switches batch-norm
    /// statistics handling; it does not alter determinism.
    virtual ad::Var forward(const BatchInput& input, bool training) = 0;

    virtual void collect(nn::ParamMap& pm) const = 0;

    /// Non-trainable state (batch-norm running statistics).
    virtual void collect_buffers(nn::BufferMap& bm) = 0;

    virtual const ModelConfig& config() const = 0;

    /// Steps the input is left-padded by before entering the temporal
    /// stack; callers must supply coordinates for these steps too.
    virtual std::int64_t required_pad() const { return 0; }

    std::vector<ad::Var> parameters() const {
        nn::ParamMap pm;
        collect(pm);
        return pm.vars();
    }
};

/// The CNF block shared by SEACNN and SEAGNN: evaluates the field on the
/// deduplicated coordinate rows and scatters the result back into the
/// batch layout {B, d, N, Tc}.
class TimeComponent {
public:
    TimeComponent() = default;

    TimeComponent(const nf::CnfConfig& cfg, std::int64_t n_nodes, Rng& rng)
        : field_(cfg, n_nodes, rng) {}

    ad::Var forward(const BatchInput& in) const {
        const std::int64_t b = in.batch();
        const std::int64_t n = in.nodes();
        const std::int64_t tc = in.padded_len();
        const std::int64_t d = field_.config().out_dim;
        SF_CHECK(static_cast<std::int64_t>(in.coord_index.size()) == b * tc,
                 "coord_index does not cover the padded batch");
        ad::Var rows = field_.forward_rows(in.coords);            // {U*N, d}
        ad::Var grid = ad::reshape(rows, {in.coords.dim(0), n * d});
        ad::Var gathered = ad::gather_rows(grid, in.coord_index); // {B*Tc, N*d}
        ad::Var cube = ad::reshape(gathered, {b, tc, n, d});
        return ad::permute(cube, {0, 3, 2, 1});                   // {B, d, N, Tc}
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        field_.collect(prefix, pm);
    }

    void collect_buffers(const std::string& prefix, nn::BufferMap& bm) {
        field_.collect_buffers(prefix, bm);
    }

    nf::ConditionalNeuralField& field() { return field_; }
    const nf::ConditionalNeuralField& field() const { return field_; }

private:
    nf::ConditionalNeuralField field_;
};

} // namespace seafield::models

#endif // SEAFIELD_MODEL_BASE_HPP
