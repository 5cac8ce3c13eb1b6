#ifndef SEAFIELD_EVALUATION_HPP
#define SEAFIELD_EVALUATION_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "seafield/csv.hpp"
#include "seafield/training.hpp"

namespace seafield::eval {

// ---------------------------------------------------------------------------
// Metrics over masked cells, exactly as printed in the evaluation
// protocol. All four ignore unobserved cells entirely.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Term>
double masked_mean(const Tensor& pred, const Tensor& target, const Tensor& mask, Term term) {
    SF_CHECK(pred.same_shape(target) && pred.same_shape(mask), "metric: shape mismatch");
    double acc = 0.0, count = 0.0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        acc += term(pred[i], target[i]);
        count += 1.0;
    }
    if (count == 0.0) throw MetricDomainError("metric over zero observed cells");
    return acc / count;
}

} // namespace detail

inline double mae(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return detail::masked_mean(pred, target, mask,
                               [](double yh, double y) { return std::abs(yh - y); });
}

inline double rmse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return std::sqrt(detail::masked_mean(
        pred, target, mask, [](double yh, double y) { return (yh - y) * (yh - y); }));
}

inline double mape(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return detail::masked_mean(pred, target, mask, [](double yh, double y) {
        if (y == 0.0) throw MetricDomainError("mape: observed target is zero");
        return std::abs((yh - y) / y);
    });
}

/// Symmetric MAPE as printed: |yhat - y| / (yhat + y), no factor 2.
inline double smape(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return detail::masked_mean(pred, target, mask, [](double yh, double y) {
        if (yh + y == 0.0) throw MetricDomainError("smape: zero denominator");
        return std::abs((yh - y) / (yh + y));
    });
}

inline double metric_by_name(const std::string& kind, const Tensor& pred, const Tensor& target,
                             const Tensor& mask) {
    if (kind == "mae") return mae(pred, target, mask);
    if (kind == "rmse") return rmse(pred, target, mask);
    if (kind == "mape") return mape(pred, target, mask);
    if (kind == "smape") return smape(pred, target, mask);
    throw ConfigError("unknown metric: " + kind);
}

// ---------------------------------------------------------------------------

struct HorizonMetrics {
    std::int64_t horizon = 0; // 1-based; 0 marks the pooled all-horizon row
    double mae = 0.0, rmse = 0.0, mape = 0.0, smape = 0.0;
};

struct MetricsReport {
    std::vector<HorizonMetrics> rows; // requested horizons
    HorizonMetrics overall;           // pooled over horizons 1..T_f
};

/// Denormalized predictions, targets and masks for every window of a
/// split, shape {W, T_f, N} each.
struct Predictions {
    Tensor pred;
    Tensor target;
    Tensor mask;
};

inline Predictions predict_all(models::ForecastModel& model, const data::TimeSeriesDataset& split,
                               const data::NormStats& stats, std::int64_t batch_size = 64) {
    const auto& cfg = model.config();
    const std::int64_t count = data::window_count(split, cfg.t_h, cfg.t_f);
    const std::int64_t n = split.nodes();
    const std::int64_t pad = model.required_pad();
    ad::NoGradGuard ng;

    Predictions out;
    out.pred = Tensor({count, cfg.t_f, n});
    out.target = Tensor({count, cfg.t_f, n});
    out.mask = Tensor({count, cfg.t_f, n});
    for (std::int64_t begin = 0; begin < count; begin += batch_size) {
        const std::int64_t len = std::min(batch_size, count - begin);
        std::vector<std::int64_t> starts(static_cast<std::size_t>(len));
        for (std::int64_t i = 0; i < len; ++i) starts[static_cast<std::size_t>(i)] = begin + i;
        auto in = models::make_batch(split, starts, cfg.t_h, pad, cfg.cnf.use_weekend);
        auto [target, mask] = models::make_batch_targets(split, starts, cfg.t_h, cfg.t_f);
        auto pred = model.forward(in, /*training=*/false);
        for (std::int64_t bi = 0; bi < len; ++bi)
            for (std::int64_t h = 0; h < cfg.t_f; ++h)
                for (std::int64_t j = 0; j < n; ++j) {
                    out.pred.at(begin + bi, h, j) =
                        pred->value.at(bi, h, j, 0) * stats.std + stats.mean;
                    const double m = mask.at(bi, h, j);
                    out.mask.at(begin + bi, h, j) = m;
                    out.target.at(begin + bi, h, j) =
                        m != 0.0 ? target.at(bi, h, j) * stats.std + stats.mean : 0.0;
                }
    }
    return out;
}

namespace detail {

inline HorizonMetrics metrics_for_slice(const Predictions& p, std::int64_t horizon /*1-based, 0=all*/) {
    const std::int64_t w = p.pred.dim(0), tf = p.pred.dim(1), n = p.pred.dim(2);
    const std::int64_t h_lo = horizon == 0 ? 0 : horizon - 1;
    const std::int64_t h_hi = horizon == 0 ? tf : horizon;
    const std::int64_t rows = w * (h_hi - h_lo);
    Tensor pred({rows, n}), target({rows, n}), mask({rows, n});
    std::int64_t r = 0;
    for (std::int64_t wi = 0; wi < w; ++wi)
        for (std::int64_t h = h_lo; h < h_hi; ++h, ++r)
            for (std::int64_t j = 0; j < n; ++j) {
                pred.at(r, j) = p.pred.at(wi, h, j);
                target.at(r, j) = p.target.at(wi, h, j);
                mask.at(r, j) = p.mask.at(wi, h, j);
            }
    HorizonMetrics m;
    m.horizon = horizon;
    m.mae = mae(pred, target, mask);
    m.rmse = rmse(pred, target, mask);
    m.mape = mape(pred, target, mask);
    m.smape = smape(pred, target, mask);
    return m;
}

} // namespace detail

/// Horizon-wise metric table on denormalized values. Default report rows
/// are the 3/6/12-step horizons.
inline MetricsReport evaluate(models::ForecastModel& model, const data::TimeSeriesDataset& split,
                              const data::NormStats& stats,
                              std::vector<std::int64_t> horizons = {3, 6, 12},
                              std::int64_t batch_size = 64) {
    Predictions p = predict_all(model, split, stats, batch_size);
    MetricsReport report;
    for (auto h : horizons) {
        SF_CHECK(h >= 1 && h <= model.config().t_f, "requested horizon out of range");
        report.rows.push_back(detail::metrics_for_slice(p, h));
    }
    report.overall = detail::metrics_for_slice(p, 0);
    return report;
}

inline void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    csv::Writer w(path);
    w.row({"horizon", "mae", "rmse", "mape", "smape"});
    for (const auto& r : report.rows)
        w.row({std::to_string(r.horizon), csv::format_double(r.mae), csv::format_double(r.rmse),
               csv::format_double(r.mape), csv::format_double(r.smape)});
    w.row({"all", csv::format_double(report.overall.mae), csv::format_double(report.overall.rmse),
           csv::format_double(report.overall.mape), csv::format_double(report.overall.smape)});
}

// ---------------------------------------------------------------------------
// Seed aggregation
// ---------------------------------------------------------------------------

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    SF_CHECK(!xs.empty(), "mean_std of nothing");
    MeanStd out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
    return out;
}

/// Run `count` independent tasks over up to `jobs` worker threads.
/// Results must be written by index so the output order is deterministic.
inline void run_parallel(std::int64_t count, std::int64_t jobs,
                         const std::function<void(std::int64_t)>& task) {
    if (jobs <= 1 || count <= 1) {
        for (std::int64_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::thread> workers;
    const std::int64_t n_workers = std::min(jobs, count);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (std::int64_t w = 0; w < n_workers; ++w)
        workers.emplace_back([&]() {
            for (;;) {
                const std::int64_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Ablation harness
// ---------------------------------------------------------------------------

enum class AblationVariant { Full, NoRff, NoLgf, AggAddition, AggMultiplication, AggConcatenation };

inline std::vector<AblationVariant> all_ablation_variants() {
    return {AblationVariant::Full,        AblationVariant::NoRff,
            AblationVariant::NoLgf,       AblationVariant::AggAddition,
            AblationVariant::AggMultiplication, AblationVariant::AggConcatenation};
}

inline std::string ablation_variant_name(AblationVariant v) {
    switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoRff: return "no_rff";
    case AblationVariant::NoLgf: return "no_lgf";
    case AblationVariant::AggAddition: return "addition";
    case AblationVariant::AggMultiplication: return "multiplication";
    case AblationVariant::AggConcatenation: return "concatenation";
    }
    return "?";
}

inline AblationVariant parse_ablation_variant(const std::string& s) {
    for (auto v : all_ablation_variants())
        if (ablation_variant_name(v) == s) return v;
    throw ConfigError("unknown ablation variant: '" + s + "'");
}

/// Variant transforms of the full SEAGNN configuration: no_rff swaps the
/// RFF time encoding for a learnable linear layer; no_lgf keeps a single
/// additive fusion before the first module; the agg_* variants replace
/// the gate with a fixed aggregation at every fusion site.
inline models::ModelConfig apply_variant(models::ModelConfig cfg, AblationVariant v) {
    switch (v) {
    case AblationVariant::Full: break;
    case AblationVariant::NoRff: cfg.cnf.encoder = nf::EncoderKind::Linear; break;
    case AblationVariant::NoLgf: cfg.layerwise_fusion = false; break;
    case AblationVariant::AggAddition: cfg.fusion_mode = fusion::FusionMode::Addition; break;
    case AblationVariant::AggMultiplication:
        cfg.fusion_mode = fusion::FusionMode::Multiplication;
        break;
    case AblationVariant::AggConcatenation:
        cfg.fusion_mode = fusion::FusionMode::Concatenation;
        break;
    }
    return cfg;
}

struct AblationRow {
    AblationVariant variant;
    MeanStd mae, rmse, mape, smape;
};

/// Per-run hook: ablation fan-out reports each finished training run so
/// callers can persist artifacts into independent subdirectories.
using AblationRunSink =
    std::function<void(std::size_t, AblationVariant, std::uint64_t, const train::TrainResult&)>;

/// Train and score one variant per seed; metrics are pooled over all
/// prediction horizons on the validation split.
inline std::vector<AblationRow>
run_ablation(const models::ModelConfig& base, const train::TrainConfig& tbase,
             const data::TimeSeriesDataset& train_split, const data::TimeSeriesDataset& val_split,
             const data::NormStats& stats, const std::vector<AblationVariant>& variants,
             const std::vector<std::uint64_t>& seeds, std::int64_t jobs = 1,
             std::optional<Tensor> prior_adjacency = std::nullopt,
             const AblationRunSink& on_run = nullptr) {
    SF_CHECK(!variants.empty() && !seeds.empty(), "nothing to ablate");
    const std::int64_t tasks = static_cast<std::int64_t>(variants.size() * seeds.size());
    std::vector<HorizonMetrics> results(static_cast<std::size_t>(tasks));

    run_parallel(tasks, jobs, [&](std::int64_t idx) {
        const auto variant = variants[static_cast<std::size_t>(idx) / seeds.size()];
        const auto seed = seeds[static_cast<std::size_t>(idx) % seeds.size()];
        models::ModelConfig mcfg = apply_variant(base, variant);
        train::TrainConfig tcfg = tbase;
        tcfg.seed = seed;
        Rng rng(seed);
        auto model = models::make_model(mcfg, train_split.nodes(), rng, prior_adjacency);
        auto run = train::train(*model, train_split, val_split, stats, tcfg);
        if (on_run) on_run(static_cast<std::size_t>(idx), variant, seed, run);
        Predictions p = predict_all(*model, val_split, stats, tcfg.batch_size);
        results[static_cast<std::size_t>(idx)] = detail::metrics_for_slice(p, 0);
    });

    std::vector<AblationRow> rows;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        std::vector<double> maes, rmses, mapes, smapes;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            const auto& m = results[vi * seeds.size() + si];
            maes.push_back(m.mae);
            rmses.push_back(m.rmse);
            mapes.push_back(m.mape);
            smapes.push_back(m.smape);
        }
        rows.push_back({variants[vi], mean_std(maes), mean_std(rmses), mean_std(mapes),
                        mean_std(smapes)});
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    csv::Writer w(path);
    w.row({"variant", "mae_mean", "mae_std", "rmse_mean", "rmse_std", "mape_mean", "mape_std",
           "smape_mean", "smape_std"});
    for (const auto& r : rows)
        w.row({ablation_variant_name(r.variant), csv::format_double(r.mae.mean),
               csv::format_double(r.mae.stddev), csv::format_double(r.rmse.mean),
               csv::format_double(r.rmse.stddev), csv::format_double(r.mape.mean),
               csv::format_double(r.mape.stddev), csv::format_double(r.smape.mean),
               csv::format_double(r.smape.stddev)});
}

// ---------------------------------------------------------------------------
// Reconstruction experiment: fit one univariate series with a small
// coordinate MLP and report the final training MAE per encoder kind.
// ---------------------------------------------------------------------------

struct ReconstructionConfig {
    std::int64_t frequencies = 128; // RFF frequency count
    double sigma = 10.0;
    std::int64_t hidden = 128;
    double omega0 = 30.0;
    std::int64_t iterations = 2000;
    double lr = 1e-3;
};

/// 1-hidden-layer coordinate MLP, parameterized by the encoder kind:
/// rff     x -> gamma(x) -> Linear -> ReLU -> Linear
/// siren   x -> sin(omega0 (Wx+b)) -> Linear  (the sine layer is the hidden layer)
/// vanilla x -> Linear -> ReLU -> Linear
class ReconstructionModel {
public:
    ReconstructionModel(nf::EncoderKind kind, const ReconstructionConfig& cfg, Rng& rng) {
        const std::int64_t enc_out =
            kind == nf::EncoderKind::Siren ? cfg.hidden : 2 * cfg.frequencies;
        encoder_ = nf::InputEncoder(kind, 2, enc_out, cfg.sigma, cfg.omega0, rng);
        has_hidden_ = kind != nf::EncoderKind::Siren;
        if (has_hidden_) hidden_ = nn::Linear(encoder_.out_dim(), cfg.hidden, rng);
        out_ = nn::Linear(cfg.hidden, 1, rng);
    }

    ad::Var forward(const Tensor& coords) const {
        ad::Var h = encoder_.apply(ad::constant(coords));
        if (has_hidden_) h = ad::relu(hidden_.apply(h));
        return out_.apply(h); // {T, 1}
    }

    nn::ParamMap parameters() const {
        nn::ParamMap pm;
        encoder_.collect("encoder", pm);
        if (has_hidden_) hidden_.collect("hidden", pm);
        out_.collect("out", pm);
        return pm;
    }

private:
    nf::InputEncoder encoder_;
    nn::Linear hidden_;
    nn::Linear out_;
    bool has_hidden_ = true;
};

struct ReconstructionRun {
    std::int64_t node = 0;
    nf::EncoderKind kind = nf::EncoderKind::Rff;
    std::uint64_t seed = 0;
    double final_mae = 0.0;          // normalized scale
    std::vector<double> fitted;      // normalized-scale reconstruction
};

/// Fit one (node, kind, seed) with full-batch optimization of the MAE
/// reconstruction loss; the series is z-scored over observed cells first.
inline ReconstructionRun fit_reconstruction(const data::TimeSeriesDataset& split,
                                            std::int64_t node, nf::EncoderKind kind,
                                            std::uint64_t seed, const ReconstructionConfig& cfg,
                                            bool keep_fit = false) {
    if (node < 0 || node >= split.nodes())
        throw Error("reconstruction: unknown node " + std::to_string(node));
    const std::int64_t t = split.length();
    double sum = 0.0, count = 0.0;
    for (std::int64_t i = 0; i < t; ++i)
        if (split.mask.at(i, node) != 0.0) {
            sum += split.values.at(i, node);
            count += 1.0;
        }
    if (count == 0.0) throw DegenerateInputError("reconstruction: series fully masked");
    const double mean = sum / count;
    double ss = 0.0;
    for (std::int64_t i = 0; i < t; ++i)
        if (split.mask.at(i, node) != 0.0) {
            const double d = split.values.at(i, node) - mean;
            ss += d * d;
        }
    const double sd = std::sqrt(ss / count);
    if (sd == 0.0) throw DegenerateInputError("reconstruction: constant series");

    Tensor target({t, 1});
    Tensor mask({t, 1});
    for (std::int64_t i = 0; i < t; ++i) {
        mask.at(i, 0) = split.mask.at(i, node);
        target.at(i, 0) =
            mask.at(i, 0) != 0.0 ? (split.values.at(i, node) - mean) / sd : 0.0;
    }
    Tensor coords = timefeat::coords_for_window(split.timestamps);

    Rng rng(seed);
    ReconstructionModel model(kind, cfg, rng);
    auto pm = model.parameters();
    auto params = pm.vars();
    train::Adam opt(params, cfg.lr, /*weight_decay=*/0.0);

    for (std::int64_t it = 0; it < cfg.iterations; ++it) {
        ad::zero_grad(params);
        auto loss = ad::masked_mae(model.forward(coords), target, mask);
        if (!std::isfinite(loss->value[0]))
            throw DivergenceError("reconstruction diverged at iteration " + std::to_string(it));
        ad::backward(loss);
        opt.step();
    }
    ReconstructionRun run;
    run.node = node;
    run.kind = kind;
    run.seed = seed;
    ad::NoGradGuard ng;
    auto final_pred = model.forward(coords);
    run.final_mae = ad::masked_mae(final_pred, target, mask)->value[0];
    if (keep_fit) {
        run.fitted.resize(static_cast<std::size_t>(t));
        for (std::int64_t i = 0; i < t; ++i)
            run.fitted[static_cast<std::size_t>(i)] = final_pred->value.at(i, 0);
    }
    return run;
}

struct ReconstructionRow {
    std::int64_t node = 0;
    nf::EncoderKind kind = nf::EncoderKind::Rff;
    MeanStd loss;
};

inline std::vector<ReconstructionRow>
reconstruction_experiment(const data::TimeSeriesDataset& train_split,
                          const std::vector<std::int64_t>& nodes,
                          const std::vector<nf::EncoderKind>& kinds,
                          const std::vector<std::uint64_t>& seeds,
                          const ReconstructionConfig& cfg, std::int64_t jobs = 1) {
    const std::int64_t tasks =
        static_cast<std::int64_t>(nodes.size() * kinds.size() * seeds.size());
    std::vector<double> losses(static_cast<std::size_t>(tasks));
    run_parallel(tasks, jobs, [&](std::int64_t idx) {
        const std::size_t i = static_cast<std::size_t>(idx);
        const std::size_t per_node = kinds.size() * seeds.size();
        const auto node = nodes[i / per_node];
        const auto kind = kinds[(i % per_node) / seeds.size()];
        const auto seed = seeds[i % seeds.size()];
        losses[i] = fit_reconstruction(train_split, node, kind, seed, cfg).final_mae;
    });

    std::vector<ReconstructionRow> rows;
    std::size_t idx = 0;
    for (auto node : nodes)
        for (auto kind : kinds) {
            std::vector<double> per_seed;
            for (std::size_t s = 0; s < seeds.size(); ++s) per_seed.push_back(losses[idx++]);
            rows.push_back({node, kind, mean_std(per_seed)});
        }
    return rows;
}

inline void write_reconstruction_csv(const std::string& path,
                                     const std::vector<ReconstructionRow>& rows) {
    csv::Writer w(path);
    w.row({"node", "encoder", "loss_mean", "loss_std"});
    for (const auto& r : rows)
        w.row({std::to_string(r.node), nf::encoder_kind_name(r.kind),
               csv::format_double(r.loss.mean), csv::format_double(r.loss.stddev)});
}

} // namespace seafield::eval

#endif // SEAFIELD_EVALUATION_HPP
