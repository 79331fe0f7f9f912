#pragma once

// Key-value run configuration: one "key value" pair per line, '#' comments.
// Unknown keys are rejected so typos fail loudly. CLI flags override file
// values.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "pavenet/model.hpp"
#include "pavenet/synthgen.hpp"
#include "pavenet/training.hpp"

namespace pavenet {

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw MissingFileError("cannot open config: " + path.string());
        KeyValueConfig cfg;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            std::istringstream is(line);
            std::string key, value, extra;
            if (!(is >> key >> value) || (is >> extra))
                throw ParseError("config line " + std::to_string(line_no) +
                                 " must be 'key value'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    int get_int(const std::string& key, int dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : std::stoi(it->second);
    }
    double get_double(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : std::stod(it->second);
    }
    uint64_t get_u64(const std::string& key, uint64_t dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : std::stoull(it->second);
    }
    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        return it->second == "1" || it->second == "true";
    }

    void reject_unknown(const std::set<std::string>& known) const {
        for (const auto& [k, v] : values_)
            if (!known.count(k)) throw ParseError("unknown config key: " + k);
    }

private:
    std::map<std::string, std::string> values_;
};

inline SynthConfig synth_config_from(const KeyValueConfig& kv) {
    SynthConfig c;
    c.num_writers = kv.get_int("num_writers", c.num_writers);
    c.per_session_count = kv.get_int("per_session_count", c.per_session_count);
    c.beta = kv.get_double("beta", c.beta);
    c.drift = kv.get_double("drift", c.drift);
    c.seed = kv.get_u64("seed", c.seed);
    return c;
}

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.epochs = kv.get_int("epochs", c.epochs);
    c.steps_per_epoch = kv.get_int("steps_per_epoch", c.steps_per_epoch);
    c.lr0 = kv.get_double("lr0", c.lr0);
    c.lr_decay = kv.get_double("lr_decay", c.lr_decay);
    c.triplet_weight = kv.get_double("triplet_weight", c.triplet_weight);
    c.triplet_margin = kv.get_double("triplet_margin", c.triplet_margin);
    c.angular_lambda = kv.get_double("angular_lambda", c.angular_lambda);
    c.angular_tan = kv.get_double("angular_tan", c.angular_tan);
    c.rdel_lo = kv.get_double("rdel_lo", c.rdel_lo);
    c.rdel_hi = kv.get_double("rdel_hi", c.rdel_hi);
    c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
    c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
    c.id_loss_batch_mean = kv.get_bool("id_loss_batch_mean", c.id_loss_batch_mean);
    c.seed = kv.get_u64("seed", c.seed);
    return c;
}

inline PavenetConfig model_config_from(const KeyValueConfig& kv) {
    PavenetConfig c;
    c.channels = kv.get_int("channels", c.channels);
    c.dpm_k = kv.get_int("dpm_k", c.dpm_k);
    c.dpm_n = kv.get_int("dpm_n", c.dpm_n);
    c.mask_on = kv.get_double("mask_on", c.mask_on);
    c.mask_off = kv.get_double("mask_off", c.mask_off);
    c.num_subsets = kv.get_int("num_subsets", c.num_subsets);
    c.embed_dim = kv.get_int("embed_dim", c.embed_dim);
    c.pool_heads = kv.get_int("pool_heads", c.pool_heads);
    c.head_hidden = kv.get_int("head_hidden", c.head_hidden);
    c.conv_kernel = kv.get_int("conv_kernel", c.conv_kernel);
    c.use_dpm = kv.get_bool("use_dpm", c.use_dpm);
    c.use_gta = kv.get_bool("use_gta", c.use_gta);
    return c;
}

}  // namespace pavenet
