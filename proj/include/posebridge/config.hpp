#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "posebridge/common.hpp"

namespace posebridge {

// Flat section-prefixed key=value configuration. Every key has a declared
// default; a key outside the schema is rejected by name, never silently
// defaulted.
class Config {
public:
    Config() { defaults(); }

    static Config from_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) fail_io("cannot open config: " + path.string());
        Config c;
        std::string line;
        size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                fail("config line " + std::to_string(lineno) +
                     ": expected key = value");
            c.set(strip(s.substr(0, eq)), strip(s.substr(eq + 1)));
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) fail("unknown config key: " + key);
        it->second = value;
    }

    std::string get_str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) fail("unknown config key: " + key);
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string s = get_str(key);
        try {
            size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail("config key " + key + ": not a number: " + s);
        }
    }

    int64_t get_int(const std::string& key) const {
        const std::string s = get_str(key);
        try {
            size_t pos = 0;
            long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail("config key " + key + ": not an integer: " + s);
        }
    }

    size_t get_size(const std::string& key) const {
        int64_t v = get_int(key);
        require(v >= 0, "config key " + key + ": must be non-negative");
        return static_cast<size_t>(v);
    }

    bool get_bool(const std::string& key) const {
        const std::string s = get_str(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        fail("config key " + key + ": not a boolean: " + s);
    }

    const std::map<std::string, std::string>& all() const { return values_; }

private:
    static std::string strip(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    void def(const std::string& k, const std::string& v) { values_[k] = v; }

    void defaults() {
        // synthetic world
        def("world.seed", "1");
        def("world.classes", "20");
        def("world.groups", "4");
        def("world.unseen", "4");
        def("world.train_per_class", "50");
        def("world.test_per_class", "20");
        def("world.frames", "32");
        def("world.joints", "17");
        def("world.motion_dim", "16");
        def("world.cue_dim", "64");
        def("world.sigma_skel", "0.05");
        def("world.sigma_cue", "0.1");
        def("world.sigma_bg", "0.3");
        def("world.proto_motion_weight", "0.3");
        def("world.proto_cue_weight", "0.95");
        def("world.proto_noise", "0.05");
        def("world.motion_spread", "4.0");
        // HPE-side cue extraction
        def("hpe.alpha", "0.5");
        def("hpe.lambda_sem", "0.1");
        def("hpe.tau", "0.07");
        def("hpe.pool_eps", "1e-6");
        def("hpe.heatmap_sigma", "1.5");
        // ZSSAR model
        def("model.skel_dim", "32");
        def("model.embed_dim", "64");
        def("model.joint_embed_dim", "8");
        def("model.heads", "4");
        def("model.cue_tokens", "16");
        def("model.ffn_mult", "2");
        def("model.dropout", "0.1");
        def("model.use_bridge", "true");
        def("model.use_prototype_adaptation", "true");
        // prototype adaptation
        def("proto.rho", "0.2");
        def("proto.topk", "5");
        def("proto.tau", "0.07");
        // loss weights
        def("loss.s_cls", "1.0");
        def("loss.s_sem", "1.5");
        def("loss.s_con", "1.5");
        def("loss.p_cls", "0.5");
        def("loss.p_sem", "0.5");
        def("loss.p_con", "0.3");
        def("loss.s2p", "0.3");
        def("loss.kd", "1.0");
        def("loss.b_sem", "1.0");
        def("loss.b_con", "0.5");
        def("loss.tau_supcon", "0.07");
        def("loss.tau_kd", "4.0");
        // training
        def("train.seed", "1");
        def("train.lr", "2e-3");
        def("train.weight_decay", "2e-3");
        def("train.warmup_epochs", "5");
        def("train.epochs", "30");
        def("train.min_lr", "1e-6");
        def("train.batch", "32");
        def("train.clip_norm", "1.0");
        def("train.ema_decay", "0.99");
        def("train.ema_start_epoch", "5");
        // evaluation
        def("eval.kappa", "0.25");
        // ablation overrides (smaller budget per grid row)
        def("ablate.epochs", "15");
        def("ablate.train_per_class", "25");
        def("ablate.test_per_class", "15");
    }

    std::map<std::string, std::string> values_;
};

}  // namespace posebridge
