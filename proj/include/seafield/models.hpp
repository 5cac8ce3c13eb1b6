#ifndef SEAFIELD_MODELS_HPP
#define SEAFIELD_MODELS_HPP

#include <memory>
#include <optional>

#include "seafield/conv_model.hpp"
#include "seafield/dataset.hpp"
#include "seafield/graph_model.hpp"

namespace seafield::models {

inline std::unique_ptr<ForecastModel> make_model(const ModelConfig& cfg, std::int64_t n_nodes,
                                                 Rng& rng,
                                                 std::optional<Tensor> prior_adjacency =
                                                     std::nullopt) {
    if (kind_is_graph(cfg.kind))
        return std::make_unique<GraphForecaster>(cfg, n_nodes, std::move(prior_adjacency), rng);
    return std::make_unique<ConvForecaster>(cfg, n_nodes, rng);
}

/// Assemble a model batch from materialized windows. Coordinate rows are
/// deduplicated by padded step index across the whole batch; the
/// timestamps of padding steps are extrapolated on the uniform grid.
inline BatchInput make_batch(const data::TimeSeriesDataset& ds,
                             const std::vector<std::int64_t>& starts, std::int64_t t_h,
                             std::int64_t t_pad, bool with_weekend = false) {
    SF_CHECK(!starts.empty(), "empty batch");
    const std::int64_t b = static_cast<std::int64_t>(starts.size());
    const std::int64_t n = ds.nodes();
    const std::int64_t tc = t_pad + t_h;
    const std::int64_t channels = 1 + (with_weekend ? 3 : 2);

    BatchInput in;
    in.t_pad = t_pad;
    in.history = Tensor({b, channels, n, t_h});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        const std::int64_t s = starts[static_cast<std::size_t>(bi)];
        SF_CHECK(s >= 0 && s + t_h <= ds.length(), "window start out of range");
        for (std::int64_t i = 0; i < t_h; ++i) {
            const auto c = timefeat::extract_coords(ds.timestamps[static_cast<std::size_t>(s + i)]);
            for (std::int64_t j = 0; j < n; ++j) {
                in.history.at(bi, 0, j, i) = ds.values.at(s + i, j);
                in.history.at(bi, 1, j, i) = c.time_of_day;
                in.history.at(bi, 2, j, i) = c.day_of_week;
                if (with_weekend) in.history.at(bi, 3, j, i) = c.weekend;
            }
        }
    }

    // Deduplicate coordinate rows by absolute step index (may be negative
    // for padding steps before the dataset origin).
    std::vector<std::int64_t> uniq;
    in.coord_index.resize(static_cast<std::size_t>(b * tc));
    {
        std::vector<std::int64_t> all;
        all.reserve(static_cast<std::size_t>(b * tc));
        for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t s = 0; s < tc; ++s)
                all.push_back(starts[static_cast<std::size_t>(bi)] - t_pad + s);
        uniq = all;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (std::size_t i = 0; i < all.size(); ++i) {
            auto it = std::lower_bound(uniq.begin(), uniq.end(), all[i]);
            in.coord_index[i] = static_cast<std::int64_t>(it - uniq.begin());
        }
    }
    const std::int64_t cols = with_weekend ? 3 : 2;
    in.coords = Tensor({static_cast<std::int64_t>(uniq.size()), cols});
    const timefeat::Timestamp origin = ds.timestamps.front();
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        const auto ts = origin.plus_minutes(uniq[i] * ds.granularity_minutes);
        const auto c = timefeat::extract_coords(ts);
        in.coords.at(static_cast<std::int64_t>(i), 0) = c.time_of_day;
        in.coords.at(static_cast<std::int64_t>(i), 1) = c.day_of_week;
        if (with_weekend) in.coords.at(static_cast<std::int64_t>(i), 2) = c.weekend;
    }
    return in;
}

/// Targets and masks for the same batch: {B, T_f, N} each.
inline std::pair<Tensor, Tensor> make_batch_targets(const data::TimeSeriesDataset& ds,
                                                    const std::vector<std::int64_t>& starts,
                                                    std::int64_t t_h, std::int64_t t_f) {
    const std::int64_t b = static_cast<std::int64_t>(starts.size());
    const std::int64_t n = ds.nodes();
    Tensor target({b, t_f, n});
    Tensor mask({b, t_f, n});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        const std::int64_t s = starts[static_cast<std::size_t>(bi)];
        SF_CHECK(s + t_h + t_f <= ds.length(), "window target out of range");
        for (std::int64_t i = 0; i < t_f; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                target.at(bi, i, j) = ds.values.at(s + t_h + i, j);
                mask.at(bi, i, j) = ds.mask.at(s + t_h + i, j);
            }
    }
    return {std::move(target), std::move(mask)};
}

} // namespace seafield::models

#endif // SEAFIELD_MODELS_HPP
