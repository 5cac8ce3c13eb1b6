#ifndef SEAFIELD_TRAINING_HPP
#define SEAFIELD_TRAINING_HPP

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "seafield/dataset.hpp"
#include "seafield/models.hpp"

namespace seafield::train {

constexpr const char* kCheckpointMagic = "SEAFIELD/1";

/// Curriculum over the supervised horizon: p starts at 1 and grows by one
/// every `step_every` iterations until it reaches `max_horizon`.
struct CurriculumSchedule {
    std::int64_t step_every = 2500;
    std::int64_t max_horizon = 12;

    std::int64_t horizon_at(std::int64_t iteration) const {
        SF_CHECK(iteration >= 0, "negative iteration");
        return std::min(max_horizon, 1 + iteration / step_every);
    }
};

struct TrainConfig {
    std::int64_t epochs = 50; // 50 plain, 100 with curriculum
    std::int64_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    bool curriculum = false;
    CurriculumSchedule schedule;

    void validate() const {
        SF_CHECK(epochs >= 1 && batch_size >= 1, "epochs and batch size must be positive");
        SF_CHECK(lr > 0 && clip_norm > 0 && weight_decay >= 0, "invalid optimizer settings");
        SF_CHECK(schedule.step_every >= 1 && schedule.max_horizon >= 1, "invalid schedule");
    }
};

/// Masked MAE over horizons 1..p, on denormalized values. Cells outside
/// the mask or beyond horizon p contribute nothing.
inline ad::Var masked_mae_loss(const ad::Var& pred, const Tensor& target_norm, const Tensor& mask,
                               std::int64_t p, const data::NormStats& stats) {
    SF_CHECK(pred->value.rank() == 3, "loss expects predictions {B, T_f, N}");
    const std::int64_t b = pred->value.dim(0), tf = pred->value.dim(1), n = pred->value.dim(2);
    SF_CHECK(p >= 1 && p <= tf, "horizon out of range");
    Tensor mask_p({b, tf, n});
    Tensor target_raw({b, tf, n});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t h = 0; h < tf; ++h)
            for (std::int64_t j = 0; j < n; ++j) {
                const double m = h < p ? mask.at(bi, h, j) : 0.0;
                mask_p.at(bi, h, j) = m;
                if (m != 0.0)
                    target_raw.at(bi, h, j) = target_norm.at(bi, h, j) * stats.std + stats.mean;
            }
    ad::Var pred_raw = ad::affine_scalar(pred, stats.std, stats.mean);
    return ad::masked_mae(pred_raw, target_raw, mask_p);
}

inline double observed_within_horizon(const Tensor& mask, std::int64_t p) {
    const std::int64_t b = mask.dim(0), tf = mask.dim(1), n = mask.dim(2);
    double count = 0.0;
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t h = 0; h < std::min(p, tf); ++h)
            for (std::int64_t j = 0; j < n; ++j) count += mask.at(bi, h, j);
    return count;
}

// ---------------------------------------------------------------------------

/// Adam with decoupled-from-clipping L2 weight decay: gradients are
/// clipped by global norm first, then decay is added inside the step.
class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double weight_decay, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2),
          eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(Tensor::zeros(p->value.shape()));
            v_.emplace_back(Tensor::zeros(p->value.shape()));
        }
    }

    void clip_gradients(double max_norm) {
        double sq = 0.0;
        for (const auto& p : params_)
            for (std::int64_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
        const double norm = std::sqrt(sq);
        if (norm > max_norm) {
            const double scale = max_norm / norm;
            for (const auto& p : params_)
                for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            for (std::int64_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad[i] + wd_ * p->value[i];
                m_[pi][i] = b1_ * m_[pi][i] + (1.0 - b1_) * g;
                v_[pi][i] = b2_ * v_[pi][i] + (1.0 - b2_) * g * g;
                const double mhat = m_[pi][i] / bc1;
                const double vhat = v_[pi][i] / bc2;
                p->value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::int64_t iterations() const { return t_; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_iterations(std::int64_t t) { t_ = t; }

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
    double lr_, wd_, b1_, b2_, eps_;
};

// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<double> train_loss; // per-epoch mean training loss
    std::vector<double> val_mae;    // per-epoch validation MAE, all horizons
    std::int64_t best_epoch = -1;   // 0-based
    double best_val_mae = std::numeric_limits<double>::infinity();
    std::int64_t iterations = 0;
};

/// Validation MAE over every horizon, on denormalized values.
inline double validation_mae(models::ForecastModel& model, const data::TimeSeriesDataset& split,
                             const data::NormStats& stats, std::int64_t batch_size) {
    const auto& cfg = model.config();
    const bool weekend = cfg.cnf.use_weekend;
    const std::int64_t count = data::window_count(split, cfg.t_h, cfg.t_f);
    const std::int64_t pad = model.required_pad();
    ad::NoGradGuard ng;
    double abs_sum = 0.0, n_obs = 0.0;
    for (std::int64_t begin = 0; begin < count; begin += batch_size) {
        const std::int64_t len = std::min(batch_size, count - begin);
        std::vector<std::int64_t> starts(static_cast<std::size_t>(len));
        for (std::int64_t i = 0; i < len; ++i) starts[static_cast<std::size_t>(i)] = begin + i;
        auto in = models::make_batch(split, starts, cfg.t_h, pad, weekend);
        auto [target, mask] = models::make_batch_targets(split, starts, cfg.t_h, cfg.t_f);
        auto pred = model.forward(in, /*training=*/false);
        for (std::int64_t bi = 0; bi < len; ++bi)
            for (std::int64_t h = 0; h < cfg.t_f; ++h)
                for (std::int64_t j = 0; j < split.nodes(); ++j) {
                    if (mask.at(bi, h, j) == 0.0) continue;
                    const double yhat = pred->value.at(bi, h, j, 0) * stats.std + stats.mean;
                    const double y = target.at(bi, h, j) * stats.std + stats.mean;
                    abs_sum += std::abs(yhat - y);
                    n_obs += 1.0;
                }
    }
    if (n_obs == 0.0) throw DegenerateInputError("validation split has no observed cells");
    return abs_sum / n_obs;
}

/// Optimize the model on the train split; track validation MAE per epoch
/// and leave the model holding the best-validation parameters.
inline TrainResult train(models::ForecastModel& model, const data::TimeSeriesDataset& train_split,
                         const data::TimeSeriesDataset& val_split, const data::NormStats& stats,
                         const TrainConfig& tcfg) {
    tcfg.validate();
    const auto& cfg = model.config();
    const bool weekend = cfg.cnf.use_weekend;
    const std::int64_t count = data::window_count(train_split, cfg.t_h, cfg.t_f);
    const std::int64_t pad = model.required_pad();

    nn::ParamMap pm;
    model.collect(pm);
    auto params = pm.vars();
    nn::BufferMap buffers;
    model.collect_buffers(buffers);

    Adam opt(params, tcfg.lr, tcfg.weight_decay);
    Rng shuffle_rng(tcfg.seed ^ 0x5eedf1e1dULL);

    std::vector<std::int64_t> order(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;

    TrainResult result;
    std::vector<Tensor> best_params;
    std::vector<Tensor> best_buffers;
    std::int64_t iteration = 0;

    for (std::int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::int64_t loss_batches = 0;
        for (std::int64_t begin = 0; begin < count; begin += tcfg.batch_size) {
            const std::int64_t len = std::min(tcfg.batch_size, count - begin);
            std::vector<std::int64_t> starts(order.begin() + begin, order.begin() + begin + len);
            auto in = models::make_batch(train_split, starts, cfg.t_h, pad, weekend);
            auto [target, mask] = models::make_batch_targets(train_split, starts, cfg.t_h,
                                                             cfg.t_f);
            const std::int64_t p =
                tcfg.curriculum ? tcfg.schedule.horizon_at(iteration) : cfg.t_f;
            if (observed_within_horizon(mask, p) == 0.0) {
                ++iteration; // nothing observed: skip the batch
                continue;
            }
            ad::zero_grad(params);
            auto pred = ad::reshape(model.forward(in, /*training=*/true),
                                    {len, cfg.t_f, train_split.nodes()});
            auto loss = masked_mae_loss(pred, target, mask, p, stats);
            if (!std::isfinite(loss->value[0]))
                throw DivergenceError("training diverged at iteration " +
                                      std::to_string(iteration) + " (non-finite loss)");
            ad::backward(loss);
            opt.clip_gradients(tcfg.clip_norm);
            opt.step();
            loss_sum += loss->value[0];
            ++loss_batches;
            ++iteration;
        }
        result.train_loss.push_back(loss_batches ? loss_sum / static_cast<double>(loss_batches)
                                                 : 0.0);

        const double vmae = validation_mae(model, val_split, stats, tcfg.batch_size);
        result.val_mae.push_back(vmae);
        if (vmae < result.best_val_mae) {
            result.best_val_mae = vmae;
            result.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p->value);
            best_buffers.clear();
            for (auto& [_, t] : buffers.items) best_buffers.push_back(*t);
        }
    }
    result.iterations = iteration;

    // Reported metrics come from the best-validation parameters.
    if (!best_params.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
        for (std::size_t i = 0; i < buffers.items.size(); ++i)
            *buffers.items[i].second = best_buffers[i];
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: a self-describing binary container. Layout:
//   magic line, then sections of (name, byte length, payload).
// Tensor payloads are rank + dims + raw little-endian doubles.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const std::uint64_t len = read_u64(is);
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    return s;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
    write_u64(os, static_cast<std::uint64_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_u64(os, static_cast<std::uint64_t>(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& is) {
    const std::uint64_t rank = read_u64(is);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    return t;
}

} // namespace detail

/// FNV-1a of the canonical config text; stored in checkpoints so a reload
/// can detect configuration drift.
inline std::uint64_t fingerprint(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct Checkpoint {
    std::string config_text;
    std::uint64_t config_fingerprint = 0;
    data::NormStats stats;
    std::int64_t iteration = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> buffers;
    std::vector<Tensor> adam_m, adam_v;
    std::int64_t adam_t = 0;
};

inline void save_checkpoint(const std::string& path, models::ForecastModel& model,
                            const data::NormStats& stats, const std::string& config_text,
                            std::int64_t iteration, Adam* opt = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os << kCheckpointMagic << '\n';

    nn::ParamMap pm;
    model.collect(pm);
    nn::BufferMap bm;
    model.collect_buffers(bm);

    detail::write_string(os, config_text);
    detail::write_u64(os, fingerprint(config_text));
    detail::write_u64(os, static_cast<std::uint64_t>(iteration));
    os.write(reinterpret_cast<const char*>(&stats.mean), sizeof(double));
    os.write(reinterpret_cast<const char*>(&stats.std), sizeof(double));

    detail::write_u64(os, pm.items.size());
    for (const auto& [name, var] : pm.items) {
        detail::write_string(os, name);
        detail::write_tensor(os, var->value);
    }
    detail::write_u64(os, bm.items.size());
    for (const auto& [name, t] : bm.items) {
        detail::write_string(os, name);
        detail::write_tensor(os, *t);
    }
    if (opt) {
        detail::write_u64(os, 1);
        detail::write_u64(os, static_cast<std::uint64_t>(opt->iterations()));
        for (const auto& t : opt->first_moments()) detail::write_tensor(os, t);
        for (const auto& t : opt->second_moments()) detail::write_tensor(os, t);
    } else {
        detail::write_u64(os, 0);
    }
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    std::string magic;
    std::getline(is, magic);
    if (magic != kCheckpointMagic)
        throw DataError("not a checkpoint (bad magic '" + magic + "'): " + path);

    Checkpoint ck;
    ck.config_text = detail::read_string(is);
    ck.config_fingerprint = detail::read_u64(is);
    ck.iteration = static_cast<std::int64_t>(detail::read_u64(is));
    is.read(reinterpret_cast<char*>(&ck.stats.mean), sizeof(double));
    is.read(reinterpret_cast<char*>(&ck.stats.std), sizeof(double));

    const std::uint64_t n_params = detail::read_u64(is);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        std::string name = detail::read_string(is);
        ck.params.emplace_back(std::move(name), detail::read_tensor(is));
    }
    const std::uint64_t n_buffers = detail::read_u64(is);
    for (std::uint64_t i = 0; i < n_buffers; ++i) {
        std::string name = detail::read_string(is);
        ck.buffers.emplace_back(std::move(name), detail::read_tensor(is));
    }
    if (detail::read_u64(is) == 1) {
        ck.adam_t = static_cast<std::int64_t>(detail::read_u64(is));
        for (std::uint64_t i = 0; i < n_params; ++i) ck.adam_m.push_back(detail::read_tensor(is));
        for (std::uint64_t i = 0; i < n_params; ++i) ck.adam_v.push_back(detail::read_tensor(is));
    }
    if (!is) throw DataError("truncated checkpoint: " + path);
    return ck;
}

/// Load parameters and buffers into a freshly constructed model; names
/// and shapes must match exactly.
inline void load_checkpoint_into(const Checkpoint& ck, models::ForecastModel& model) {
    nn::ParamMap pm;
    model.collect(pm);
    nn::BufferMap bm;
    model.collect_buffers(bm);
    SF_CHECK(pm.items.size() == ck.params.size(), "checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < pm.items.size(); ++i) {
        SF_CHECK(pm.items[i].first == ck.params[i].first, "checkpoint parameter name mismatch");
        SF_CHECK(pm.items[i].second->value.same_shape(ck.params[i].second),
                 "checkpoint parameter shape mismatch");
        pm.items[i].second->value = ck.params[i].second;
    }
    SF_CHECK(bm.items.size() == ck.buffers.size(), "checkpoint buffer count mismatch");
    for (std::size_t i = 0; i < bm.items.size(); ++i) {
        SF_CHECK(bm.items[i].first == ck.buffers[i].first, "checkpoint buffer name mismatch");
        *bm.items[i].second = ck.buffers[i].second;
    }
}

} // namespace seafield::train

#endif // SEAFIELD_TRAINING_HPP
