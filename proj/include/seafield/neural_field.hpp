#ifndef SEAFIELD_NEURAL_FIELD_HPP
#define SEAFIELD_NEURAL_FIELD_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "seafield/autodiff.hpp"
#include "seafield/common.hpp"
#include "seafield/nn.hpp"
#include "seafield/rng.hpp"
#include "seafield/tensor.hpp"

namespace seafield::nf {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

/// Random Fourier feature map gamma(x) = [cos(2 pi B x), sin(2 pi B x)].
/// The frequency matrix B (m x d_in) is sampled once from N(0, sigma^2)
/// and frozen; it is never trained.
struct RFFEncoder {
    Tensor frequencies; // {m, d_in}
    double sigma = 1.0;
    std::int64_t m = 0;

    RFFEncoder() = default;

    RFFEncoder(std::int64_t m_, std::int64_t d_in, double sigma_, Rng& rng)
        : frequencies(nn::normal_init({m_, d_in}, sigma_, rng)), sigma(sigma_), m(m_) {}

    std::int64_t out_dim() const { return 2 * m; }
};

/// Encode one input point: first m entries are cosines, last m are sines.
inline std::vector<double> rff_encode(const RFFEncoder& enc, const std::vector<double>& x) {
    SF_CHECK(static_cast<std::int64_t>(x.size()) == enc.frequencies.dim(1),
             "rff_encode: input dimension mismatch");
    std::vector<double> out(static_cast<std::size_t>(2 * enc.m));
    for (std::int64_t f = 0; f < enc.m; ++f) {
        double dot = 0.0;
        for (std::int64_t d = 0; d < enc.frequencies.dim(1); ++d)
            dot += enc.frequencies.at(f, d) * x[static_cast<std::size_t>(d)];
        out[static_cast<std::size_t>(f)] = std::cos(kTwoPi * dot);
        out[static_cast<std::size_t>(enc.m + f)] = std::sin(kTwoPi * dot);
    }
    return out;
}

/// Row-wise encoding of a coordinate matrix {R, d_in} -> {R, 2m}.
inline Tensor rff_encode_rows(const RFFEncoder& enc, const Tensor& coords) {
    SF_CHECK(coords.rank() == 2 && coords.dim(1) == enc.frequencies.dim(1),
             "rff_encode_rows: coordinate shape mismatch");
    const std::int64_t r = coords.dim(0);
    Tensor out({r, 2 * enc.m});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t f = 0; f < enc.m; ++f) {
            double dot = 0.0;
            for (std::int64_t d = 0; d < coords.dim(1); ++d)
                dot += enc.frequencies.at(f, d) * coords.at(i, d);
            out.at(i, f) = std::cos(kTwoPi * dot);
            out.at(i, enc.m + f) = std::sin(kTwoPi * dot);
        }
    return out;
}

/// Deterministic per-node latent codes: the normalized node index i/N is
/// RFF-encoded once, so the same index always yields the same vector.
class NodeEmbeddingTable {
public:
    NodeEmbeddingTable() = default;

    NodeEmbeddingTable(std::int64_t n_nodes, std::int64_t m_node, double sigma, Rng& rng)
        : n_nodes_(n_nodes), encoder_(m_node, 1, sigma, rng) {
        codes_ = Tensor({n_nodes, encoder_.out_dim()});
        for (std::int64_t i = 0; i < n_nodes; ++i) {
            auto v = rff_encode(encoder_, {static_cast<double>(i) / static_cast<double>(n_nodes)});
            for (std::int64_t j = 0; j < encoder_.out_dim(); ++j)
                codes_.at(i, j) = v[static_cast<std::size_t>(j)];
        }
    }

    std::vector<double> embed_node(std::int64_t i) const {
        if (i < 0 || i >= n_nodes_)
            throw Error("embed_node: index " + std::to_string(i) + " out of range");
        std::vector<double> out(static_cast<std::size_t>(dim()));
        for (std::int64_t j = 0; j < dim(); ++j) out[static_cast<std::size_t>(j)] = codes_.at(i, j);
        return out;
    }

    void collect_buffers(const std::string& prefix, nn::BufferMap& bm) {
        bm.add(prefix + ".frequencies", &encoder_.frequencies);
        bm.add(prefix + ".codes", &codes_);
    }

    const Tensor& codes() const { return codes_; }
    std::int64_t dim() const { return codes_.dim(1); }
    std::int64_t size() const { return n_nodes_; }

private:
    std::int64_t n_nodes_ = 0;
    RFFEncoder encoder_;
    Tensor codes_; // {N, 2*m_node}
};

// ---------------------------------------------------------------------------

enum class EncoderKind { Rff, Siren, Linear, Raw };

inline EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "rff") return EncoderKind::Rff;
    if (s == "siren") return EncoderKind::Siren;
    if (s == "linear") return EncoderKind::Linear;
    if (s == "vanilla" || s == "raw") return EncoderKind::Raw;
    throw ConfigError("unknown encoder kind: '" + s + "'");
}

inline std::string encoder_kind_name(EncoderKind k) {
    switch (k) {
    case EncoderKind::Rff: return "rff";
    case EncoderKind::Siren: return "siren";
    case EncoderKind::Linear: return "linear";
    case EncoderKind::Raw: return "vanilla";
    }
    return "?";
}

/// The input stage of a coordinate MLP: a fixed RFF map, a sine layer
/// (SIREN first layer, sin(omega0 (Wx+b))), a learnable affine map, or a
/// passthrough.
class InputEncoder {
public:
    InputEncoder() = default;

    InputEncoder(EncoderKind kind, std::int64_t in_dim, std::int64_t out_dim, double sigma,
                 double omega0, Rng& rng)
        : kind_(kind), in_dim_(in_dim), out_dim_(out_dim), omega0_(omega0) {
        switch (kind) {
        case EncoderKind::Rff:
            SF_CHECK(out_dim % 2 == 0, "rff encoder output must be even");
            rff_ = RFFEncoder(out_dim / 2, in_dim, sigma, rng);
            break;
        case EncoderKind::Siren: {
            // SIREN first-layer init: U(-1/in, 1/in).
            const double bound = 1.0 / static_cast<double>(in_dim);
            w_ = ad::parameter(nn::uniform_init({out_dim, in_dim}, bound, rng));
            b_ = ad::parameter(Tensor::zeros({out_dim}));
            break;
        }
        case EncoderKind::Linear: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
            w_ = ad::parameter(nn::uniform_init({out_dim, in_dim}, bound, rng));
            b_ = ad::parameter(nn::uniform_init({out_dim}, bound, rng));
            break;
        }
        case EncoderKind::Raw:
            out_dim_ = in_dim;
            break;
        }
    }

    ad::Var apply(const ad::Var& coords) const {
        switch (kind_) {
        case EncoderKind::Rff:
            return ad::constant(rff_encode_rows(rff_, coords->value));
        case EncoderKind::Siren:
            return ad::sin_op(ad::mul_scalar(ad::add_rowvec(ad::matmul(coords, w_, true), b_),
                                             omega0_));
        case EncoderKind::Linear:
            return ad::add_rowvec(ad::matmul(coords, w_, true), b_);
        case EncoderKind::Raw:
            return coords;
        }
        throw Error("unreachable");
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        if (kind_ == EncoderKind::Siren || kind_ == EncoderKind::Linear) {
            pm.add(prefix + ".w", w_);
            pm.add(prefix + ".b", b_);
        }
    }

    /// Frozen frequencies are state, not parameters; checkpoints must
    /// carry them for bit-compatible reloads.
    void collect_buffers(const std::string& prefix, nn::BufferMap& bm) {
        if (kind_ == EncoderKind::Rff) bm.add(prefix + ".frequencies", &rff_.frequencies);
    }

    EncoderKind kind() const { return kind_; }
    std::int64_t out_dim() const { return out_dim_; }
    const RFFEncoder& rff() const { return rff_; }
    ad::Var& weight() { return w_; }
    ad::Var& bias() { return b_; }

private:
    EncoderKind kind_ = EncoderKind::Rff;
    std::int64_t in_dim_ = 2;
    std::int64_t out_dim_ = 0;
    double omega0_ = 30.0;
    RFFEncoder rff_;
    ad::Var w_, b_;
};

inline InputEncoder make_encoder(EncoderKind kind, std::int64_t in_dim, std::int64_t out_dim,
                                 double sigma, std::uint64_t seed, double omega0 = 30.0) {
    Rng rng(seed);
    return InputEncoder(kind, in_dim, out_dim, sigma, omega0, rng);
}

// ---------------------------------------------------------------------------

struct CnfConfig {
    std::int64_t m_time = 64;   // time-coordinate frequencies
    double sigma_time = 10.0;
    std::int64_t m_node = 16;   // node-index frequencies
    double sigma_node = 1.0;
    std::int64_t layers = 3;    // feed-forward maps, ReLU between
    std::int64_t hidden = 256;
    std::int64_t out_dim = 32;  // matches the host forecaster channel width
    bool use_weekend = false;   // weekend flag appended after the encoding
    EncoderKind encoder = EncoderKind::Rff;
    double omega0 = 30.0;
};

/// Conditional neural field mapping (time coordinates, node index) to a
/// feature vector. One shared field serves all nodes; conditioning is the
/// deterministic node code concatenated to the encoded coordinates.
class ConditionalNeuralField {
public:
    ConditionalNeuralField() = default;

    ConditionalNeuralField(const CnfConfig& cfg, std::int64_t n_nodes, Rng& rng) : cfg_(cfg) {
        time_encoder_ = InputEncoder(cfg.encoder, 2, 2 * cfg.m_time, cfg.sigma_time, cfg.omega0,
                                     rng);
        node_table_ = NodeEmbeddingTable(n_nodes, cfg.m_node, cfg.sigma_node, rng);
        std::int64_t in = time_encoder_.out_dim() + (cfg.use_weekend ? 1 : 0) + node_table_.dim();
        SF_CHECK(cfg.layers >= 1, "cnf needs at least one layer");
        layers_.clear();
        for (std::int64_t i = 0; i < cfg.layers; ++i) {
            const std::int64_t o = (i + 1 == cfg.layers) ? cfg.out_dim : cfg.hidden;
            layers_.emplace_back(in, o, rng);
            in = o;
        }
    }

    /// Features for every (coordinate row, node) pair. coords is {T, 2}
    /// (or {T, 3} with the weekend column); the result is {T*N, d} in
    /// t-major order.
    ad::Var forward_rows(const Tensor& coords) const {
        SF_CHECK(coords.rank() == 2 && coords.dim(1) >= 2, "cnf: coords must be {T, 2+}");
        const std::int64_t t = coords.dim(0);
        const std::int64_t n = node_table_.size();
        Tensor c2({t, 2});
        for (std::int64_t i = 0; i < t; ++i) {
            const double tod = coords.at(i, 0), dow = coords.at(i, 1);
            if (tod < 0.0 || tod > 1.0 || dow < 0.0 || dow > 1.0)
                throw Error("cnf: coordinate outside [0,1]^2");
            c2.at(i, 0) = tod;
            c2.at(i, 1) = dow;
        }
        ad::Var enc = time_encoder_.apply(ad::constant(std::move(c2)));
        if (cfg_.use_weekend) {
            SF_CHECK(coords.dim(1) >= 3, "cnf: weekend enabled but coords lack the column");
            Tensor wk({t, 1});
            for (std::int64_t i = 0; i < t; ++i) wk.at(i, 0) = coords.at(i, 2);
            enc = ad::concat({enc, ad::constant(std::move(wk))}, 1);
        }

        std::vector<std::int64_t> idx_t(static_cast<std::size_t>(t * n));
        std::vector<std::int64_t> idx_n(static_cast<std::size_t>(t * n));
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                idx_t[static_cast<std::size_t>(i * n + j)] = i;
                idx_n[static_cast<std::size_t>(i * n + j)] = j;
            }
        ad::Var h = ad::concat({ad::gather_rows(enc, std::move(idx_t)),
                                ad::gather_rows(ad::constant(node_table_.codes()),
                                                std::move(idx_n))},
                               1);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].apply(h);
            if (i + 1 < layers_.size()) h = ad::relu(h);
        }
        return h;
    }

    /// Plain-tensor convenience: output {T, N, d}.
    Tensor forward(const Tensor& coords) const {
        ad::NoGradGuard ng;
        ad::Var rows = forward_rows(coords);
        return rows->value.reshaped({coords.dim(0), node_table_.size(), cfg_.out_dim});
    }

    void collect(const std::string& prefix, nn::ParamMap& pm) const {
        time_encoder_.collect(prefix + ".encoder", pm);
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect(prefix + ".mlp" + std::to_string(i), pm);
    }

    void collect_buffers(const std::string& prefix, nn::BufferMap& bm) {
        time_encoder_.collect_buffers(prefix + ".encoder", bm);
        node_table_.collect_buffers(prefix + ".nodes", bm);
    }

    const CnfConfig& config() const { return cfg_; }
    const NodeEmbeddingTable& node_table() const { return node_table_; }
    const InputEncoder& time_encoder() const { return time_encoder_; }
    InputEncoder& time_encoder() { return time_encoder_; }
    std::vector<nn::Linear>& layers() { return layers_; }

private:
    CnfConfig cfg_;
    InputEncoder time_encoder_;
    NodeEmbeddingTable node_table_;
    std::vector<nn::Linear> layers_;
};

} // namespace seafield::nf

#endif // SEAFIELD_NEURAL_FIELD_HPP
