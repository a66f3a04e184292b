#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "posebridge/gradcheck.hpp"
#include "posebridge/pipeline.hpp"

namespace posebridge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Serialization helpers.
// ---------------------------------------------------------------------------

inline Tensor ids_tensor(const std::vector<size_t>& ids) {
    Tensor t({ids.size()});
    for (size_t i = 0; i < ids.size(); ++i)
        t.data[i] = static_cast<double>(ids[i]);
    return t;
}

inline std::vector<size_t> ids_from_tensor(const Tensor& t) {
    std::vector<size_t> out;
    out.reserve(t.numel());
    for (double v : t.data) out.push_back(static_cast<size_t>(v));
    return out;
}

inline std::string split_id_of(const std::vector<size_t>& unseen_ids) {
    std::string s = "u";
    for (size_t i = 0; i < unseen_ids.size(); ++i)
        s += (i ? "." : "") + std::to_string(unseen_ids[i]);
    return s;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_io("cannot open for writing: " + path.string());
    os << text;
    if (!os) fail_io("write failed: " + path.string());
}

inline json world_manifest(const World& w, const SplitSpec& s) {
    json m;
    m["seed"] = w.cfg.seed;
    m["classes"] = w.cfg.classes;
    m["groups"] = w.cfg.groups;
    m["frames"] = w.cfg.frames;
    m["joints"] = w.cfg.joints;
    m["motion_dim"] = w.cfg.motion_dim;
    m["cue_dim"] = w.cfg.cue_dim;
    json cls = json::array();
    for (const ClassSpec& c : w.classes)
        cls.push_back({{"id", c.id}, {"group", c.group}});
    m["class_groups"] = cls;
    m["seen_ids"] = s.seen_ids;
    m["unseen_ids"] = s.unseen_ids;
    m["straddlers"] = s.straddlers;
    m["collided"] = s.collided;
    return m;
}

// Dataset container layout: "meta/*" id lists, "proto/<class>" prototypes,
// and per sample "data/<split>/<class>/<idx>/{skel,cues,caption}".
inline void save_dataset(const fs::path& path, const SynthBundle& b) {
    CheckpointContainer c;
    c.put("meta/classes", Tensor({1}, {double(b.world.cfg.classes)}));
    c.put("meta/seen_ids", ids_tensor(b.split.seen_ids));
    c.put("meta/unseen_ids", ids_tensor(b.split.unseen_ids));
    c.put("meta/straddlers", ids_tensor(b.split.straddlers));
    c.put("meta/collided", ids_tensor(b.split.collided));
    for (size_t i = 0; i < b.protos.num_classes(); ++i)
        c.put("proto/" + std::to_string(i), b.protos.prototypes[i]);
    auto put_split = [&](const char* name, const Dataset& d) {
        std::vector<size_t> next_idx(b.world.cfg.classes, 0);
        for (size_t i = 0; i < d.size(); ++i) {
            const Sample& s = d.get(i);
            std::string pre = std::string("data/") + name + "/" +
                              std::to_string(s.class_id) + "/" +
                              std::to_string(next_idx[s.class_id]++) + "/";
            c.put(pre + "skel", s.skel.frames);
            c.put(pre + "cues", s.cues);
            c.put(pre + "caption", s.caption);
        }
    };
    put_split("train", b.train);
    put_split("test", b.test);
    c.save(path);
}

struct LoadedDataset {
    size_t classes = 0;
    PrototypeTable protos;
    SplitSpec split;
    Dataset train;
    Dataset test;
};

inline LoadedDataset load_dataset(const fs::path& path) {
    CheckpointContainer c = CheckpointContainer::load(path);
    LoadedDataset d;
    d.classes = static_cast<size_t>(c.get("meta/classes").data[0]);
    d.split.seen_ids = ids_from_tensor(c.get("meta/seen_ids"));
    d.split.unseen_ids = ids_from_tensor(c.get("meta/unseen_ids"));
    d.split.straddlers = ids_from_tensor(c.get("meta/straddlers"));
    d.split.collided = ids_from_tensor(c.get("meta/collided"));
    for (size_t i = 0; i < d.classes; ++i)
        d.protos.prototypes.push_back(c.get("proto/" + std::to_string(i)));
    d.protos.seen_ids = d.split.seen_ids;
    d.protos.unseen_ids = d.split.unseen_ids;
    d.protos.validate();
    auto get_split = [&](const char* name, Dataset& out) {
        out = Dataset(d.classes);
        for (size_t cls = 0; cls < d.classes; ++cls) {
            for (size_t idx = 0;; ++idx) {
                std::string pre = std::string("data/") + name + "/" +
                                  std::to_string(cls) + "/" +
                                  std::to_string(idx) + "/";
                if (!c.has(pre + "skel")) break;
                Sample s;
                s.class_id = cls;
                s.skel.frames = c.get(pre + "skel");
                s.cues = c.get(pre + "cues");
                s.caption = c.get(pre + "caption");
                out.add(std::move(s));
            }
        }
    };
    get_split("train", d.train);
    get_split("test", d.test);
    return d;
}

// Checkpoint layout: "raw/<param>" and "ema/<param>" weights in registration
// order, "centroid/<class>", "proto/<class>", "adapted/<class>", and the
// seen/unseen partition under "meta/*".
inline void save_checkpoint(const fs::path& path, const TrainResult& r) {
    CheckpointContainer c;
    for (const std::string& n : r.model.store.names())
        c.put("raw/" + n, r.model.store.get(n));
    for (const std::string& n : r.ema.names())
        c.put("ema/" + n, r.ema.get(n));
    for (const auto& [cls, mu] : r.centroids.centroids)
        c.put("centroid/" + std::to_string(cls), mu);
    for (size_t i = 0; i < r.prototypes.num_classes(); ++i)
        c.put("proto/" + std::to_string(i), r.prototypes.prototypes[i]);
    if (!r.prototypes.adapted.empty())
        for (size_t i = 0; i < r.prototypes.num_classes(); ++i)
            c.put("adapted/" + std::to_string(i), r.prototypes.adapted[i]);
    c.put("meta/seen_ids", ids_tensor(r.prototypes.seen_ids));
    c.put("meta/unseen_ids", ids_tensor(r.prototypes.unseen_ids));
    c.save(path);
}

inline TrainResult load_checkpoint(const fs::path& path,
                                   const ModelDims& dims) {
    CheckpointContainer c = CheckpointContainer::load(path);
    TrainResult r;
    r.model.dims = dims;
    r.model.adjacency = skeleton_adjacency(dims.joints);
    for (const std::string& n : c.names_with_prefix("raw/"))
        r.model.store.add(n.substr(4), c.get(n));
    for (const std::string& n : c.names_with_prefix("ema/"))
        r.ema.add(n.substr(4), c.get(n));
    r.prototypes.seen_ids = ids_from_tensor(c.get("meta/seen_ids"));
    r.prototypes.unseen_ids = ids_from_tensor(c.get("meta/unseen_ids"));
    r.model.num_seen = r.prototypes.seen_ids.size();
    size_t classes =
        r.prototypes.seen_ids.size() + r.prototypes.unseen_ids.size();
    for (size_t i = 0; i < classes; ++i)
        r.prototypes.prototypes.push_back(c.get("proto/" + std::to_string(i)));
    if (c.has("adapted/0"))
        for (size_t i = 0; i < classes; ++i)
            r.prototypes.adapted.push_back(c.get("adapted/" + std::to_string(i)));
    for (size_t cls : r.prototypes.seen_ids) {
        std::string key = "centroid/" + std::to_string(cls);
        if (c.has(key)) r.centroids.centroids[cls] = c.get(key);
    }
    return r;
}

inline std::string train_log_jsonl(const std::vector<EpochLog>& log) {
    std::string out;
    for (const EpochLog& e : log) {
        json j;
        j["epoch"] = e.epoch;
        j["lr"] = e.lr;
        j["loss_total"] = e.loss_total;
        j["loss_s"] = e.loss_s;
        j["loss_p"] = e.loss_p;
        j["loss_b"] = e.loss_b;
        j["loss_align"] = e.loss_align;
        out += j.dump() + "\n";
    }
    return out;
}

inline json metrics_json(const Metrics& m, uint64_t seed,
                         const std::string& split_id) {
    json j;
    j["zsl_acc"] = m.zsl_acc;
    j["S"] = m.gzsl_seen;
    j["U"] = m.gzsl_unseen;
    j["H"] = m.harmonic;
    j["kappa"] = m.kappa;
    j["seed"] = seed;
    j["split_id"] = split_id;
    json conf = json::array();
    size_t n = m.confusion.shape.empty() ? 0 : m.confusion.shape[0];
    for (size_t r = 0; r < n; ++r) {
        json rr = json::array();
        for (size_t cc = 0; cc < n; ++cc)
            rr.push_back(m.confusion.at2(r, cc));
        conf.push_back(rr);
    }
    j["confusion"] = conf;
    return j;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "hr,bp,sb,pa,zsl,gzsl_h\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (const AblationRow& r : rows)
        os << int(r.hr) << "," << int(r.bp) << "," << int(r.sb) << ","
           << int(r.pa) << "," << r.zsl << "," << r.gzsl_h << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Commands. Each operates inside an output directory and throws Error on
// contract (exit 1) or I/O (exit 2) failures.
// ---------------------------------------------------------------------------

inline void ensure_out_dir(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) fail_io("cannot create output directory: " + out.string());
}

inline void cmd_synth(const Config& cfg, const fs::path& out) {
    ensure_out_dir(out);
    SynthBundle b = build_bundle(cfg);
    write_text(out / "world.json",
               world_manifest(b.world, b.split).dump(2) + "\n");
    save_dataset(out / "dataset.pbck", b);
}

inline void cmd_train(const Config& cfg, const fs::path& out) {
    ensure_out_dir(out);
    fs::path data_path = out / "dataset.pbck";
    if (!fs::exists(data_path))
        fail_io("dataset not found (run synth first): " + data_path.string());
    LoadedDataset d = load_dataset(data_path);
    bool sb = cfg.get_bool("model.use_bridge");
    bool pa = cfg.get_bool("model.use_prototype_adaptation");
    TrainOptions opts = train_options_from(cfg, sb, pa);
    ModelDims dims = model_dims_from(cfg, sb);
    TrainResult r = train(opts, d.train, d.protos, dims);
    save_checkpoint(out / "checkpoint.pbck", r);
    write_text(out / "train_log.jsonl", train_log_jsonl(r.log));
}

inline Metrics eval_from_files(const Config& cfg, const fs::path& out) {
    fs::path data_path = out / "dataset.pbck";
    fs::path ckpt_path = out / "checkpoint.pbck";
    if (!fs::exists(data_path))
        fail_io("dataset not found: " + data_path.string());
    if (!fs::exists(ckpt_path))
        fail_io("checkpoint not found (run train first): " +
                ckpt_path.string());
    LoadedDataset d = load_dataset(data_path);
    bool sb = cfg.get_bool("model.use_bridge");
    TrainResult r = load_checkpoint(ckpt_path, model_dims_from(cfg, sb));
    ModelParams eval_model = with_store(r.model, r.ema);
    return evaluate(eval_model, d.test, r.prototypes,
                    cfg.get_double("eval.kappa"));
}

inline void cmd_eval(const Config& cfg, const fs::path& out) {
    ensure_out_dir(out);
    Metrics m = eval_from_files(cfg, out);
    LoadedDataset d = load_dataset(out / "dataset.pbck");
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("world.seed"));
    write_text(out / "metrics.json",
               metrics_json(m, seed, split_id_of(d.split.unseen_ids)).dump(2) +
                   "\n");
}

// Runs the gradient suite and streams one line per check; returns overall
// pass/fail.
inline bool cmd_gradcheck(const Config& cfg, std::ostream& os) {
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    std::vector<SuiteResult> suite = run_gradient_suite(seed);
    bool ok = true;
    for (const SuiteResult& s : suite) {
        os << (s.report.passed ? "PASS" : "FAIL") << "  " << s.name
           << "  checked=" << s.report.checked
           << "  worst_rel_err=" << s.report.worst.rel_err << " ("
           << s.report.worst.name << "[" << s.report.worst.index << "])\n";
        if (!s.report.passed) {
            ok = false;
            for (const GradCheckEntry& f : s.report.failures)
                os << "      " << f.name << "[" << f.index
                   << "] analytic=" << f.analytic << " numeric=" << f.numeric
                   << " rel_err=" << f.rel_err << "\n";
        }
    }
    return ok;
}

inline void cmd_ablate(const Config& cfg, const fs::path& out) {
    ensure_out_dir(out);
    std::vector<AblationRow> rows = run_ablate(cfg);
    write_text(out / "ablation.csv", ablation_csv(rows));
}

}  // namespace posebridge
