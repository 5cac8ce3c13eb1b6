#ifndef SEAFIELD_EXPERIMENT_HPP
#define SEAFIELD_EXPERIMENT_HPP

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "seafield/config.hpp"
#include "seafield/evaluation.hpp"
#include "seafield/plot.hpp"
#include "seafield/training.hpp"

namespace seafield::experiment {

namespace fs = std::filesystem;

inline data::TimeSeriesDataset dataset_from_config(const config::Config& cfg) {
    if (cfg.get_bool("dataset.synthetic", false)) {
        return data::synthesize_seasonal(
            cfg.get_int("synth.nodes", 20), cfg.get_int("synth.days", 28),
            cfg.get_int("synth.granularity_minutes", 60), cfg.get_double("synth.noise_std", 0.1),
            static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1)),
            cfg.get_string("synth.name", "synthetic"));
    }
    std::string path = cfg.require_string("dataset.path");
    if (const char* root = std::getenv("SEAFIELD_DATA_DIR");
        root && !fs::path(path).is_absolute())
        path = (fs::path(root) / path).string();
    return data::load_dataset(path);
}

inline models::ModelConfig model_config_from(const config::Config& cfg) {
    models::ModelConfig m;
    m.kind = models::parse_model_kind(cfg.get_string("model.kind", "seagnn"));
    m.t_h = cfg.get_int("model.t_h", 12);
    m.t_f = cfg.get_int("model.t_f", 12);
    m.hidden = cfg.get_int("model.hidden", 32);
    m.modules = cfg.get_int("model.modules", 3);
    m.kernels = cfg.get_int_list("model.kernels", {2, 3, 6, 7});
    m.end_channels = cfg.get_int("model.end_channels", 128);
    m.skip_channels = cfg.get_int("model.skip_channels", 64);
    m.graph_dim = cfg.get_int("graph.dim", 40);
    m.graph_alpha = cfg.get_double("graph.alpha", 3.0);
    m.graph_topk = cfg.get_int("graph.k", 20);
    m.hops = cfg.get_int("graph.hops", 2);
    m.hop_beta = cfg.get_double("graph.beta", 0.05);
    m.dilations = cfg.get_int_list("graph.dilations", {});
    m.use_prior_graph = cfg.get_bool("graph.use_prior", false);
    m.fusion_mode = fusion::parse_fusion_mode(cfg.get_string("fusion.mode", "gated"));
    m.layerwise_fusion = cfg.get_bool("fusion.layerwise", true);
    m.cnf.m_time = cfg.get_int("cnf.m_time", 64);
    m.cnf.sigma_time = cfg.get_double("cnf.sigma", 10.0);
    m.cnf.m_node = cfg.get_int("cnf.m_node", 16);
    m.cnf.sigma_node = cfg.get_double("cnf.sigma_node", 1.0);
    m.cnf.layers = cfg.get_int("cnf.layers", 3);
    m.cnf.hidden = cfg.get_int("cnf.hidden", 256);
    m.cnf.encoder = nf::parse_encoder_kind(cfg.get_string("cnf.encoder", "rff"));
    m.cnf.omega0 = cfg.get_double("cnf.omega0", 30.0);
    m.cnf.use_weekend = cfg.get_bool("cnf.use_weekend", false);
    m.input_channels = m.cnf.use_weekend ? 4 : 3;
    return m;
}

inline train::TrainConfig train_config_from(const config::Config& cfg) {
    train::TrainConfig t;
    t.curriculum = cfg.get_bool("train.curriculum", false);
    t.epochs = cfg.get_int("train.epochs", t.curriculum ? 100 : 50);
    t.batch_size = cfg.get_int("train.batch_size", 64);
    t.lr = cfg.get_double("train.lr", 1e-3);
    t.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
    t.clip_norm = cfg.get_double("train.clip_norm", 5.0);
    t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));
    t.schedule.step_every = cfg.get_int("train.curriculum_step", 2500);
    t.schedule.max_horizon = cfg.get_int("model.t_f", 12);
    return t;
}

struct Pipeline {
    data::TimeSeriesDataset train_raw, train_split, val_split, test_split;
    data::NormStats stats;
    std::optional<Tensor> prior_adjacency;
};

inline Pipeline build_pipeline(const config::Config& cfg, const models::ModelConfig& mcfg) {
    auto ds = dataset_from_config(cfg);
    data::SplitSpec spec;
    spec.train_fraction = cfg.get_double("dataset.train_fraction", 0.7);
    spec.val_fraction = cfg.get_double("dataset.val_fraction", 0.1);
    spec.test_fraction = cfg.get_double("dataset.test_fraction", 0.2);
    auto parts = data::split(ds, spec, mcfg.t_h + mcfg.t_f);

    Pipeline p;
    p.prior_adjacency = ds.adjacency;
    p.train_raw = parts[0];
    auto [train_norm, stats] = data::normalize(parts[0]);
    p.stats = stats;
    p.train_split = std::move(train_norm);
    p.val_split = data::normalize(parts[1], stats).first;
    p.test_split = data::normalize(parts[2], stats).first;
    return p;
}

/// Every output directory carries the exact configuration, the seed and
/// a format-version marker.
inline void write_run_stamp(const std::string& out_dir, const config::Config& cfg) {
    fs::create_directories(out_dir);
    std::ofstream version(fs::path(out_dir) / "VERSION");
    version << train::kCheckpointMagic << "\n";
    std::ofstream echo(fs::path(out_dir) / "config.used");
    echo << cfg.canonical_text();
}

inline void write_history_csv(const std::string& path, const train::TrainResult& result) {
    csv::Writer w(path);
    w.row({"epoch", "train_loss", "val_mae"});
    for (std::size_t e = 0; e < result.val_mae.size(); ++e)
        w.row({std::to_string(e + 1), csv::format_double(result.train_loss[e]),
               csv::format_double(result.val_mae[e])});
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns artifacts under out_dir and prints a
// one-line summary to stdout.
// ---------------------------------------------------------------------------

inline void cmd_synthesize(const config::Config& cfg, const std::string& out_dir) {
    auto ds = data::synthesize_seasonal(
        cfg.get_int("synth.nodes", 20), cfg.get_int("synth.days", 28),
        cfg.get_int("synth.granularity_minutes", 60), cfg.get_double("synth.noise_std", 0.1),
        static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1)),
        cfg.get_string("synth.name", "synthetic"));
    data::save_dataset(ds, out_dir);
    write_run_stamp(out_dir, cfg);
    std::cout << "synthesized " << ds.name << ": T=" << ds.length() << " N=" << ds.nodes()
              << " -> " << out_dir << "\n";
}

inline void cmd_train(const config::Config& cfg, const std::string& out_dir) {
    auto mcfg = model_config_from(cfg);
    auto tcfg = train_config_from(cfg);
    auto pipe = build_pipeline(cfg, mcfg);

    Rng rng(tcfg.seed);
    auto model = models::make_model(mcfg, pipe.train_split.nodes(), rng, pipe.prior_adjacency);
    auto result = train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg);

    write_run_stamp(out_dir, cfg);
    train::save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), *model, pipe.stats,
                           cfg.canonical_text(), result.iterations);
    write_history_csv((fs::path(out_dir) / "history.csv").string(), result);
    plot::line_plot((fs::path(out_dir) / "val_curve.svg").string(),
                    "validation MAE — " + models::model_kind_name(mcfg.kind),
                    {{"val MAE", result.val_mae}, {"train loss", result.train_loss}}, "epoch",
                    "MAE");
    std::cout << "trained " << models::model_kind_name(mcfg.kind) << ": best val MAE "
              << result.best_val_mae << " (epoch " << result.best_epoch + 1 << "/" << tcfg.epochs
              << ") -> " << out_dir << "\n";
}

inline void cmd_evaluate(const config::Config& cfg, const std::string& checkpoint_path,
                         const std::string& out_dir) {
    auto mcfg = model_config_from(cfg);
    auto pipe = build_pipeline(cfg, mcfg);
    auto ck = train::read_checkpoint(checkpoint_path);

    // The checkpoint's normalization statistics take precedence: metrics
    // must be computed in the scale the model was trained in.
    pipe.stats = ck.stats;
    Rng rng(1);
    auto model = models::make_model(mcfg, pipe.test_split.nodes(), rng, pipe.prior_adjacency);
    train::load_checkpoint_into(ck, *model);

    auto report = eval::evaluate(*model, pipe.test_split, pipe.stats);
    write_run_stamp(out_dir, cfg);
    eval::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), report);

    for (auto node : cfg.get_int_list("eval.plot_nodes", {})) {
        SF_CHECK(node >= 0 && node < pipe.test_split.nodes(), "eval.plot_nodes out of range");
        auto p = eval::predict_all(*model, pipe.test_split, pipe.stats);
        const std::int64_t h = mcfg.t_f - 1; // longest horizon
        plot::Series truth{"ground truth", {}}, pred{"prediction", {}};
        for (std::int64_t w = 0; w < p.pred.dim(0); ++w) {
            const bool observed = p.mask.at(w, h, node) != 0.0;
            truth.values.push_back(observed ? p.target.at(w, h, node)
                                            : std::numeric_limits<double>::quiet_NaN());
            pred.values.push_back(p.pred.at(w, h, node));
        }
        plot::line_plot((fs::path(out_dir) / ("pred_node" + std::to_string(node) + ".svg")).string(),
                        "horizon-" + std::to_string(mcfg.t_f) + " predictions, node " +
                            std::to_string(node),
                        {truth, pred}, "window", "value");
    }
    std::cout << "evaluated: overall MAE " << report.overall.mae << " RMSE "
              << report.overall.rmse << " -> " << out_dir << "\n";
}

inline void cmd_ablate(const config::Config& cfg, const std::string& out_dir, std::int64_t jobs) {
    auto mcfg = model_config_from(cfg);
    if (mcfg.kind != models::ModelKind::Seagnn)
        throw ConfigError("ablation is defined for model.kind=seagnn");
    auto tcfg = train_config_from(cfg);
    auto pipe = build_pipeline(cfg, mcfg);

    std::vector<eval::AblationVariant> variants;
    for (const auto& name : cfg.get_list(
             "ablate.variants",
             {"full", "no_rff", "no_lgf", "addition", "multiplication", "concatenation"}))
        variants.push_back(eval::parse_ablation_variant(name));
    std::vector<std::uint64_t> seeds;
    for (auto s : cfg.get_int_list("ablate.seeds", {1, 2, 3}))
        seeds.push_back(static_cast<std::uint64_t>(s));

    write_run_stamp(out_dir, cfg);
    auto rows = eval::run_ablation(
        mcfg, tcfg, pipe.train_split, pipe.val_split, pipe.stats, variants, seeds, jobs,
        pipe.prior_adjacency,
        [&](std::size_t idx, eval::AblationVariant v, std::uint64_t seed,
            const train::TrainResult& r) {
            (void)idx;
            const fs::path dir = fs::path(out_dir) / "runs" /
                                 (eval::ablation_variant_name(v) + "_seed" + std::to_string(seed));
            fs::create_directories(dir);
            write_history_csv((dir / "history.csv").string(), r);
        });
    eval::write_ablation_csv((fs::path(out_dir) / "ablation.csv").string(), rows);
    std::cout << "ablation over " << variants.size() << " variants x " << seeds.size()
              << " seeds -> " << out_dir << "\n";
}

inline void cmd_reconstruct(const config::Config& cfg, const std::string& out_dir,
                            std::int64_t jobs) {
    auto mcfg = model_config_from(cfg);
    auto pipe = build_pipeline(cfg, mcfg);

    eval::ReconstructionConfig rcfg;
    rcfg.frequencies = cfg.get_int("recon.frequencies", 128);
    rcfg.sigma = cfg.get_double("recon.sigma", 10.0);
    rcfg.hidden = cfg.get_int("recon.hidden", 128);
    rcfg.omega0 = cfg.get_double("recon.omega0", 30.0);
    rcfg.iterations = cfg.get_int("recon.iterations", 2000);
    rcfg.lr = cfg.get_double("recon.lr", 1e-3);

    auto nodes = cfg.get_int_list("recon.nodes", {0});
    std::vector<nf::EncoderKind> kinds;
    for (const auto& k : cfg.get_list("recon.kinds", {"rff", "siren", "vanilla"}))
        kinds.push_back(nf::parse_encoder_kind(k));
    std::vector<std::uint64_t> seeds;
    for (auto s : cfg.get_int_list("recon.seeds", {1, 2, 3}))
        seeds.push_back(static_cast<std::uint64_t>(s));

    write_run_stamp(out_dir, cfg);
    auto rows = eval::reconstruction_experiment(pipe.train_raw, nodes, kinds, seeds, rcfg, jobs);
    eval::write_reconstruction_csv((fs::path(out_dir) / "reconstruction.csv").string(), rows);

    // Overlay plots for the first seed of each (node, kind).
    for (auto node : nodes) {
        std::vector<plot::Series> series;
        const std::int64_t t = pipe.train_raw.length();
        plot::Series truth{"series (z-scored)", {}};
        {
            double sum = 0.0, count = 0.0;
            for (std::int64_t i = 0; i < t; ++i)
                if (pipe.train_raw.mask.at(i, node) != 0.0) {
                    sum += pipe.train_raw.values.at(i, node);
                    count += 1.0;
                }
            const double mean = sum / count;
            double ss = 0.0;
            for (std::int64_t i = 0; i < t; ++i)
                if (pipe.train_raw.mask.at(i, node) != 0.0) {
                    const double d = pipe.train_raw.values.at(i, node) - mean;
                    ss += d * d;
                }
            const double sd = std::sqrt(ss / count);
            for (std::int64_t i = 0; i < t; ++i)
                truth.values.push_back(pipe.train_raw.mask.at(i, node) != 0.0
                                           ? (pipe.train_raw.values.at(i, node) - mean) / sd
                                           : std::numeric_limits<double>::quiet_NaN());
        }
        series.push_back(std::move(truth));
        for (auto kind : kinds) {
            auto run = eval::fit_reconstruction(pipe.train_raw, node, kind, seeds.front(), rcfg,
                                                /*keep_fit=*/true);
            series.push_back({nf::encoder_kind_name(kind), std::move(run.fitted)});
        }
        plot::line_plot((fs::path(out_dir) / ("recon_node" + std::to_string(node) + ".svg")).string(),
                        "reconstruction, node " + std::to_string(node), series, "step",
                        "z-scored value");
    }
    std::cout << "reconstruction over " << nodes.size() << " nodes x " << kinds.size()
              << " encoders x " << seeds.size() << " seeds -> " << out_dir << "\n";
}

} // namespace seafield::experiment

#endif // SEAFIELD_EXPERIMENT_HPP
