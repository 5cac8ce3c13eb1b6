#ifndef SEAFIELD_CONFIG_HPP
#define SEAFIELD_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seafield/common.hpp"

namespace seafield::config {

/// Every key the toolkit understands. Parsing rejects anything else, so
/// a typo in an experiment file fails fast instead of silently using a
/// default.
inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // dataset
        "dataset.path", "dataset.synthetic", "dataset.train_fraction", "dataset.val_fraction",
        "dataset.test_fraction",
        // synthetic generator
        "synth.nodes", "synth.days", "synth.granularity_minutes", "synth.noise_std", "synth.name",
        "synth.seed",
        // model
        "model.kind", "model.t_h", "model.t_f", "model.hidden", "model.modules", "model.kernels",
        "model.end_channels", "model.skip_channels",
        // graph learning
        "graph.dim", "graph.alpha", "graph.k", "graph.hops", "graph.beta", "graph.dilations",
        "graph.use_prior",
        // conditional neural field
        "cnf.m_time", "cnf.sigma", "cnf.m_node", "cnf.sigma_node", "cnf.layers", "cnf.hidden",
        "cnf.encoder", "cnf.omega0", "cnf.use_weekend",
        // fusion
        "fusion.mode", "fusion.layerwise",
        // training
        "train.epochs", "train.batch_size", "train.lr", "train.weight_decay", "train.clip_norm",
        "train.curriculum", "train.curriculum_step", "train.seed",
        // evaluation
        "eval.checkpoint", "eval.plot_nodes",
        // ablation
        "ablate.variants", "ablate.seeds",
        // reconstruction
        "recon.nodes", "recon.kinds", "recon.seeds", "recon.frequencies", "recon.sigma",
        "recon.hidden", "recon.omega0", "recon.iterations", "recon.lr",
    };
    return keys;
}

/// Flat key=value configuration with dotted namespaces. '#' starts a
/// comment; blank lines are ignored; duplicate or unknown keys are
/// errors.
class Config {
public:
    static Config from_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!known_keys().count(key))
                throw ConfigError("unknown config key '" + key + "' (line " +
                                  std::to_string(lineno) + ")");
            if (cfg.kv_.count(key))
                throw ConfigError("duplicate config key '" + key + "' (line " +
                                  std::to_string(lineno) + ")");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) {
        SF_CHECK(known_keys().count(key) == 1, "unknown config key: " + key);
        kv_[key] = value;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const std::int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': not an integer: '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': not a number: '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "on") return true;
        if (it->second == "false" || it->second == "0" || it->second == "off") return false;
        throw ConfigError("key '" + key + "': not a boolean: '" + it->second + "'");
    }

    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<std::string> out;
        std::string cur;
        for (char c : it->second) {
            if (c == ',') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else if (c != ' ') {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) out.push_back(cur);
        if (out.empty()) throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback) const {
        if (!has(key)) return fallback;
        std::vector<std::int64_t> out;
        for (const auto& s : get_list(key, {})) {
            try {
                out.push_back(std::stoll(s));
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': not an integer list entry: '" + s + "'");
            }
        }
        return out;
    }

    /// Sorted key=value lines; the canonical form used for fingerprints
    /// and the config echo written next to results.
    std::string canonical_text() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << '=' << v << '\n';
        return os.str();
    }

private:
    std::map<std::string, std::string> kv_;
};

} // namespace seafield::config

#endif // SEAFIELD_CONFIG_HPP
