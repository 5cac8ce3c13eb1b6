#ifndef SEAFIELD_DATASET_HPP
#define SEAFIELD_DATASET_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seafield/common.hpp"
#include "seafield/csv.hpp"
#include "seafield/rng.hpp"
#include "seafield/tensor.hpp"
#include "seafield/timefeatures.hpp"

namespace seafield::data {

using timefeat::Timestamp;

/// A multivariate time series: T timestamps by N sensors, a boolean
/// observation mask of the same shape, and an optional prior adjacency.
/// Unobserved cells carry the sentinel value 0. Instances are immutable
/// after construction and safe to share across readers.
struct TimeSeriesDataset {
    Tensor values;                     // {T, N}
    std::vector<Timestamp> timestamps; // length T, strictly increasing, uniform
    std::int64_t granularity_minutes = 0;
    Tensor mask;                       // {T, N}, 1.0 = observed
    std::optional<Tensor> adjacency;   // {N, N}, nonnegative
    std::string name;
    std::vector<std::string> node_ids; // length N

    std::int64_t length() const { return values.dim(0); }
    std::int64_t nodes() const { return values.dim(1); }
};

/// Contiguous ascending-time partition fractions.
struct SplitSpec {
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
};

/// Scalar z-score statistics fit on observed training cells.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
};

/// One supervised sample: a history block with appended coordinate
/// channels (value channel first), the target block, and the coordinates
/// of the history rows.
struct WindowSample {
    Tensor history;        // {T_h, N, C} with C = 1 + coordinate channels
    Tensor target;         // {T_f, N}
    Tensor target_mask;    // {T_f, N}
    Tensor history_coords; // {T_h, 2} (+ weekend column when enabled)
    std::int64_t target_start_index = 0;
};

inline void validate(const TimeSeriesDataset& ds) {
    const std::int64_t t = ds.length();
    const std::int64_t n = ds.nodes();
    SF_CHECK(ds.values.rank() == 2, "values must be a T x N matrix");
    if (static_cast<std::int64_t>(ds.timestamps.size()) != t)
        throw DataError(ds.name + ": timestamps length does not match values rows");
    if (ds.granularity_minutes <= 0) throw DataError(ds.name + ": granularity must be positive");
    for (std::int64_t i = 1; i < t; ++i) {
        auto step = ds.timestamps[i].minutes - ds.timestamps[i - 1].minutes;
        if (step != ds.granularity_minutes)
            throw DataError(ds.name + ": non-uniform timestamp spacing at row " +
                            std::to_string(i));
    }
    if (!ds.mask.same_shape(ds.values)) throw DataError(ds.name + ": mask shape mismatch");
    for (std::int64_t i = 0; i < ds.mask.size(); ++i) {
        double m = ds.mask[i];
        if (m != 0.0 && m != 1.0) throw DataError(ds.name + ": mask entries must be 0/1");
        if (m == 0.0 && ds.values[i] != 0.0)
            throw DataError(ds.name + ": masked-out cell without 0 sentinel");
    }
    if (ds.adjacency) {
        const Tensor& a = *ds.adjacency;
        if (a.rank() != 2 || a.dim(0) != n || a.dim(1) != n)
            throw DataError(ds.name + ": adjacency must be N x N");
        for (std::int64_t i = 0; i < a.size(); ++i)
            if (a[i] < 0.0) throw DataError(ds.name + ": adjacency entries must be nonnegative");
    }
    if (static_cast<std::int64_t>(ds.node_ids.size()) != n)
        throw DataError(ds.name + ": node id count mismatch");
}

/// Mask derived from the 0-sentinel convention: observed iff value != 0.
inline Tensor mask_from_values(const Tensor& values) {
    Tensor m(values.shape());
    for (std::int64_t i = 0; i < values.size(); ++i) m[i] = (values[i] != 0.0) ? 1.0 : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Directory format: values.csv, timestamps.csv, meta, optional
// adjacency.csv and mask.csv. See README for the exact layout.
// ---------------------------------------------------------------------------

inline TimeSeriesDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::exists(root / "values.csv")) throw DataError("missing values.csv in " + dir);
    if (!fs::exists(root / "timestamps.csv")) throw DataError("missing timestamps.csv in " + dir);
    if (!fs::exists(root / "meta")) throw DataError("missing meta in " + dir);

    TimeSeriesDataset ds;

    // meta: key=value lines
    {
        std::ifstream in(root / "meta");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw DataError("malformed meta line: " + line);
            std::string key = line.substr(0, eq);
            std::string val = line.substr(eq + 1);
            if (!val.empty() && val.back() == '\r') val.pop_back();
            if (key == "name")
                ds.name = val;
            else if (key == "granularity_minutes")
                ds.granularity_minutes = std::stoll(val);
            else
                throw DataError("unknown meta key: " + key);
        }
    }

    auto vrows = csv::read_rows((root / "values.csv").string());
    if (vrows.size() < 2) throw DataError("values.csv needs a header and at least one row");
    ds.node_ids = vrows[0];
    const std::int64_t n = static_cast<std::int64_t>(ds.node_ids.size());
    const std::int64_t t = static_cast<std::int64_t>(vrows.size()) - 1;
    ds.values = Tensor({t, n});
    for (std::int64_t i = 0; i < t; ++i) {
        const auto& row = vrows[static_cast<std::size_t>(i + 1)];
        if (static_cast<std::int64_t>(row.size()) != n)
            throw DataError("values.csv row " + std::to_string(i + 1) + " has wrong width");
        for (std::int64_t j = 0; j < n; ++j)
            ds.values.at(i, j) = csv::parse_double(row[static_cast<std::size_t>(j)], "values.csv");
    }

    auto trows = csv::read_rows((root / "timestamps.csv").string());
    ds.timestamps.reserve(trows.size());
    for (const auto& row : trows) ds.timestamps.push_back(timefeat::parse_timestamp(row[0]));

    if (fs::exists(root / "mask.csv")) {
        auto mrows = csv::read_rows((root / "mask.csv").string());
        if (static_cast<std::int64_t>(mrows.size()) != t + 1)
            throw DataError("mask.csv row count does not match values.csv");
        ds.mask = Tensor({t, n});
        for (std::int64_t i = 0; i < t; ++i) {
            const auto& row = mrows[static_cast<std::size_t>(i + 1)];
            if (static_cast<std::int64_t>(row.size()) != n)
                throw DataError("mask.csv row " + std::to_string(i + 1) + " has wrong width");
            for (std::int64_t j = 0; j < n; ++j)
                ds.mask.at(i, j) = csv::parse_double(row[static_cast<std::size_t>(j)], "mask.csv");
        }
        // Enforce the sentinel invariant under an explicit mask.
        for (std::int64_t i = 0; i < ds.values.size(); ++i)
            if (ds.mask[i] == 0.0) ds.values[i] = 0.0;
    } else {
        ds.mask = mask_from_values(ds.values);
    }

    if (fs::exists(root / "adjacency.csv")) {
        auto arows = csv::read_rows((root / "adjacency.csv").string());
        if (static_cast<std::int64_t>(arows.size()) != n)
            throw DataError("adjacency.csv must have N rows");
        Tensor adj({n, n});
        for (std::int64_t i = 0; i < n; ++i) {
            const auto& row = arows[static_cast<std::size_t>(i)];
            if (static_cast<std::int64_t>(row.size()) != n)
                throw DataError("adjacency.csv row " + std::to_string(i) + " has wrong width");
            for (std::int64_t j = 0; j < n; ++j)
                adj.at(i, j) = csv::parse_double(row[static_cast<std::size_t>(j)], "adjacency.csv");
        }
        ds.adjacency = std::move(adj);
    }

    validate(ds);
    return ds;
}

inline void save_dataset(const TimeSeriesDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path root(dir);
    {
        csv::Writer w((root / "values.csv").string());
        w.row(ds.node_ids);
        std::vector<std::string> cells(static_cast<std::size_t>(ds.nodes()));
        for (std::int64_t i = 0; i < ds.length(); ++i) {
            for (std::int64_t j = 0; j < ds.nodes(); ++j)
                cells[static_cast<std::size_t>(j)] = csv::format_double(ds.values.at(i, j));
            w.row(cells);
        }
    }
    {
        csv::Writer w((root / "timestamps.csv").string());
        for (auto ts : ds.timestamps) w.row({timefeat::format_timestamp(ts)});
    }
    {
        std::ofstream meta(root / "meta");
        meta << "name=" << ds.name << "\n";
        meta << "granularity_minutes=" << ds.granularity_minutes << "\n";
    }
    if (ds.adjacency) {
        csv::Writer w((root / "adjacency.csv").string());
        std::vector<std::string> cells(static_cast<std::size_t>(ds.nodes()));
        for (std::int64_t i = 0; i < ds.nodes(); ++i) {
            for (std::int64_t j = 0; j < ds.nodes(); ++j)
                cells[static_cast<std::size_t>(j)] = csv::format_double(ds.adjacency->at(i, j));
            w.row(cells);
        }
    }
    bool mask_is_derived = true;
    Tensor derived = mask_from_values(ds.values);
    for (std::int64_t i = 0; i < ds.mask.size(); ++i)
        if (ds.mask[i] != derived[i]) {
            mask_is_derived = false;
            break;
        }
    if (!mask_is_derived) {
        csv::Writer w((root / "mask.csv").string());
        w.row(ds.node_ids);
        std::vector<std::string> cells(static_cast<std::size_t>(ds.nodes()));
        for (std::int64_t i = 0; i < ds.length(); ++i) {
            for (std::int64_t j = 0; j < ds.nodes(); ++j)
                cells[static_cast<std::size_t>(j)] = ds.mask.at(i, j) != 0.0 ? "1" : "0";
            w.row(cells);
        }
    }
}

// ---------------------------------------------------------------------------

/// Contiguous ascending-time split. Boundary indices are
/// floor(fraction * T); the test part takes the remainder. When
/// min_split_length > 0 every part must be at least that long (callers
/// pass T_h + T_f so that each part can hold at least one window).
inline std::array<TimeSeriesDataset, 3> split(const TimeSeriesDataset& ds, const SplitSpec& spec,
                                              std::int64_t min_split_length = 0) {
    SF_CHECK(spec.train_fraction > 0 && spec.val_fraction > 0 && spec.test_fraction > 0,
             "split fractions must be positive");
    SF_CHECK(std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) < 1e-9,
             "split fractions must sum to 1");
    const std::int64_t t = ds.length();
    const std::int64_t n_train = static_cast<std::int64_t>(std::floor(spec.train_fraction * t));
    const std::int64_t n_val = static_cast<std::int64_t>(std::floor(spec.val_fraction * t));
    const std::int64_t n_test = t - n_train - n_val;

    auto take = [&](std::int64_t begin, std::int64_t len) {
        TimeSeriesDataset part;
        part.values = Tensor({len, ds.nodes()});
        part.mask = Tensor({len, ds.nodes()});
        for (std::int64_t i = 0; i < len; ++i)
            for (std::int64_t j = 0; j < ds.nodes(); ++j) {
                part.values.at(i, j) = ds.values.at(begin + i, j);
                part.mask.at(i, j) = ds.mask.at(begin + i, j);
            }
        part.timestamps.assign(ds.timestamps.begin() + begin, ds.timestamps.begin() + begin + len);
        part.granularity_minutes = ds.granularity_minutes;
        part.adjacency = ds.adjacency;
        part.name = ds.name;
        part.node_ids = ds.node_ids;
        return part;
    };

    std::array<TimeSeriesDataset, 3> parts{take(0, n_train), take(n_train, n_val),
                                           take(n_train + n_val, n_test)};
    if (min_split_length > 0)
        for (const auto& p : parts)
            if (p.length() < min_split_length)
                throw DataError(ds.name + ": a split is shorter than " +
                                std::to_string(min_split_length) + " steps");
    return parts;
}

/// Fit z-score statistics on observed cells (or reuse given stats) and
/// return the normalized dataset. Unobserved cells keep the 0 sentinel.
inline std::pair<TimeSeriesDataset, NormStats>
normalize(const TimeSeriesDataset& ds, std::optional<NormStats> stats = std::nullopt) {
    NormStats st;
    if (stats) {
        st = *stats;
    } else {
        double sum = 0.0, count = 0.0;
        for (std::int64_t i = 0; i < ds.values.size(); ++i)
            if (ds.mask[i] != 0.0) {
                sum += ds.values[i];
                count += 1.0;
            }
        if (count == 0.0) throw DegenerateInputError(ds.name + ": no observed cells");
        st.mean = sum / count;
        double ss = 0.0;
        for (std::int64_t i = 0; i < ds.values.size(); ++i)
            if (ds.mask[i] != 0.0) {
                double d = ds.values[i] - st.mean;
                ss += d * d;
            }
        st.std = std::sqrt(ss / count);
        if (st.std == 0.0)
            throw DegenerateInputError(ds.name + ": constant series, zero variance");
    }
    TimeSeriesDataset out = ds;
    for (std::int64_t i = 0; i < out.values.size(); ++i)
        if (out.mask[i] != 0.0) out.values[i] = (out.values[i] - st.mean) / st.std;
    return {std::move(out), st};
}

inline TimeSeriesDataset denormalize(const TimeSeriesDataset& ds, const NormStats& st) {
    TimeSeriesDataset out = ds;
    for (std::int64_t i = 0; i < out.values.size(); ++i)
        if (out.mask[i] != 0.0) out.values[i] = out.values[i] * st.std + st.mean;
    return out;
}

// ---------------------------------------------------------------------------

inline std::int64_t window_count(const TimeSeriesDataset& ds, std::int64_t t_h, std::int64_t t_f) {
    if (ds.length() < t_h + t_f)
        throw DataError(ds.name + ": too short for windows of " + std::to_string(t_h) + "+" +
                        std::to_string(t_f) + " steps");
    return ds.length() - (t_h + t_f) + 1;
}

/// Materialize the window whose history starts at `start`. Target rows are
/// dataset rows start+t_h .. start+t_h+t_f-1.
inline WindowSample make_window(const TimeSeriesDataset& ds, std::int64_t start, std::int64_t t_h,
                                std::int64_t t_f, bool with_weekend = false) {
    SF_CHECK(start >= 0 && start + t_h + t_f <= ds.length(), "window out of range");
    const std::int64_t n = ds.nodes();
    const std::int64_t coord_cols = with_weekend ? 3 : 2;
    WindowSample w;
    w.history = Tensor({t_h, n, 1 + coord_cols});
    w.history_coords = Tensor({t_h, coord_cols});
    for (std::int64_t i = 0; i < t_h; ++i) {
        auto c = timefeat::extract_coords(ds.timestamps[static_cast<std::size_t>(start + i)]);
        w.history_coords.at(i, 0) = c.time_of_day;
        w.history_coords.at(i, 1) = c.day_of_week;
        if (with_weekend) w.history_coords.at(i, 2) = c.weekend;
        for (std::int64_t j = 0; j < n; ++j) {
            w.history.at(i, j, 0) = ds.values.at(start + i, j);
            w.history.at(i, j, 1) = c.time_of_day;
            w.history.at(i, j, 2) = c.day_of_week;
            if (with_weekend) w.history.at(i, j, 3) = c.weekend;
        }
    }
    w.target = Tensor({t_f, n});
    w.target_mask = Tensor({t_f, n});
    for (std::int64_t i = 0; i < t_f; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            w.target.at(i, j) = ds.values.at(start + t_h + i, j);
            w.target_mask.at(i, j) = ds.mask.at(start + t_h + i, j);
        }
    w.target_start_index = start + t_h;
    return w;
}

/// All windows of one split, in ascending start order. Windows never
/// straddle split boundaries because each split is its own dataset.
inline std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, std::int64_t t_h,
                                              std::int64_t t_f, bool with_weekend = false) {
    const std::int64_t count = window_count(ds, t_h, t_f);
    std::vector<WindowSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t s = 0; s < count; ++s)
        out.push_back(make_window(ds, s, t_h, t_f, with_weekend));
    return out;
}

/// Coordinates for history rows extended `pad` steps back in time (models
/// whose temporal stack is longer than the window use these; positions
/// before the first dataset row are extrapolated on the uniform grid).
inline Tensor coords_padded(const TimeSeriesDataset& ds, std::int64_t start, std::int64_t t_h,
                            std::int64_t pad, bool with_weekend = false) {
    std::vector<Timestamp> ts;
    ts.reserve(static_cast<std::size_t>(pad + t_h));
    const Timestamp first = ds.timestamps.front();
    for (std::int64_t j = -pad; j < t_h; ++j)
        ts.push_back(first.plus_minutes((start + j) * ds.granularity_minutes));
    return timefeat::coords_for_window(ts, with_weekend);
}

// ---------------------------------------------------------------------------

/// Synthetic seasonal benchmark data: per node an affine mix of a daily
/// sinusoid and noise, with the sinusoid amplitude scaled by 0.6 on
/// weekends. Deterministic given the seed. The series starts on a Monday
/// so weekday structure is aligned across runs.
inline TimeSeriesDataset synthesize_seasonal(std::int64_t n_nodes, std::int64_t days,
                                             std::int64_t granularity_minutes, double noise_std,
                                             std::uint64_t seed,
                                             const std::string& name = "synthetic") {
    SF_CHECK(days >= 14, "need at least 14 days for weekly seasonality");
    SF_CHECK(n_nodes >= 1, "need at least one node");
    SF_CHECK(granularity_minutes >= 1 && 1440 % granularity_minutes == 0,
             "granularity must divide one day");
    const std::int64_t per_day = 1440 / granularity_minutes;
    const std::int64_t t = days * per_day;

    Rng rng(seed);
    std::vector<double> amp(static_cast<std::size_t>(n_nodes));
    std::vector<double> base(static_cast<std::size_t>(n_nodes));
    for (std::int64_t j = 0; j < n_nodes; ++j) {
        amp[static_cast<std::size_t>(j)] = rng.uniform(0.8, 1.2);
        base[static_cast<std::size_t>(j)] = rng.uniform(3.0, 5.0);
    }

    TimeSeriesDataset ds;
    ds.name = name;
    ds.granularity_minutes = granularity_minutes;
    ds.values = Tensor({t, n_nodes});
    ds.timestamps.reserve(static_cast<std::size_t>(t));
    const Timestamp start = timefeat::make_timestamp(2012, 3, 5); // a Monday
    constexpr double two_pi = 2.0 * 3.14159265358979323846;
    for (std::int64_t i = 0; i < t; ++i) {
        Timestamp ts = start.plus_minutes(i * granularity_minutes);
        ds.timestamps.push_back(ts);
        auto c = timefeat::extract_coords(ts);
        const double wfac = c.weekend != 0.0 ? 0.6 : 1.0;
        const double s = std::sin(two_pi * c.time_of_day);
        for (std::int64_t j = 0; j < n_nodes; ++j) {
            double v = base[static_cast<std::size_t>(j)] +
                       amp[static_cast<std::size_t>(j)] * wfac * s;
            if (noise_std > 0.0) v += noise_std * rng.normal();
            ds.values.at(i, j) = v;
        }
    }
    ds.mask = mask_from_values(ds.values);
    ds.node_ids.resize(static_cast<std::size_t>(n_nodes));
    for (std::int64_t j = 0; j < n_nodes; ++j)
        ds.node_ids[static_cast<std::size_t>(j)] = "node" + std::to_string(j);
    validate(ds);
    return ds;
}

} // namespace seafield::data

#endif // SEAFIELD_DATASET_HPP
