#include "sblab/infra.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sblab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string fmt_step(int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(step));
    return buf;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ojson parse_object(const std::string& text, const std::string& what) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(what + ": bad JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError(what + ": top level must be an object");
    return j;
}

double num_or_throw(const ojson& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
    return v.get<double>();
}

int64_t int_or_throw(const ojson& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
    return v.get<int64_t>();
}

bool bool_or_throw(const ojson& v, const std::string& where) {
    if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
    return v.get<bool>();
}

std::string str_or_throw(const ojson& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError(where + " must be a string");
    return v.get<std::string>();
}

void parse_model(const ojson& j, ModelConfig& mc) {
    for (auto& [key, val] : j.items()) {
        const std::string where = "config: model." + key;
        if (key == "n_layers") {
            mc.n_layers = static_cast<int>(int_or_throw(val, where));
        } else if (key == "n_heads") {
            mc.n_heads = static_cast<int>(int_or_throw(val, where));
        } else if (key == "d_model") {
            mc.d_model = static_cast<int>(int_or_throw(val, where));
        } else if (key == "block_size") {
            mc.block_size = static_cast<int>(int_or_throw(val, where));
        } else if (key == "vocab_size") {
            mc.vocab_size = static_cast<int>(int_or_throw(val, where));
        } else if (key == "activation") {
            mc.activation = activation_from_name(str_or_throw(val, where));
        } else if (key == "init_std") {
            mc.init_std = num_or_throw(val, where);
        } else if (key == "tie_embedding") {
            mc.tie_embedding = bool_or_throw(val, where);
        } else {
            throw ConfigError("config: unknown key 'model." + key + "'");
        }
    }
}

void parse_bias(const ojson& j, BiasProtocol& p) {
    for (auto& [key, val] : j.items()) {
        const std::string where = "config: bias." + key;
        if (key == "mode") {
            p.mode = bias_mode_from_name(str_or_throw(val, where));
        } else if (key == "mu_q") {
            p.mu_q = num_or_throw(val, where);
        } else if (key == "sigma_q_lo") {
            p.sigma_q_lo = num_or_throw(val, where);
        } else if (key == "sigma_q_hi") {
            p.sigma_q_hi = num_or_throw(val, where);
        } else if (key == "mu_v") {
            p.mu_v = num_or_throw(val, where);
        } else if (key == "sigma_v") {
            p.sigma_v = num_or_throw(val, where);
        } else if (key == "learnable") {
            p.learnable = bool_or_throw(val, where);
        } else if (key == "share_across_layers") {
            p.share_across_layers = bool_or_throw(val, where);
        } else {
            throw ConfigError("config: unknown key 'bias." + key + "'");
        }
    }
}

void parse_optimizer(const ojson& j, OptimizerSpec& o) {
    if (j.contains("name")) o.name = str_or_throw(j["name"], "config: optimizer.name");
    for (auto& [key, val] : j.items()) {
        const std::string where = "config: optimizer." + key;
        if (key == "name") continue;
        if (o.name == "sgdm") {
            if (key == "lr") {
                o.sgdm.lr = num_or_throw(val, where);
            } else if (key == "momentum") {
                o.sgdm.momentum = num_or_throw(val, where);
            } else if (key == "weight_decay") {
                o.sgdm.weight_decay = num_or_throw(val, where);
            } else if (key == "nesterov") {
                o.sgdm.nesterov = bool_or_throw(val, where);
            } else {
                throw ConfigError("config: unknown key 'optimizer." + key + "' for sgdm");
            }
        } else if (o.name == "adamw") {
            if (key == "lr") {
                o.adamw.lr = num_or_throw(val, where);
            } else if (key == "beta1") {
                o.adamw.beta1 = num_or_throw(val, where);
            } else if (key == "beta2") {
                o.adamw.beta2 = num_or_throw(val, where);
            } else if (key == "eps") {
                o.adamw.eps = num_or_throw(val, where);
            } else if (key == "weight_decay") {
                o.adamw.weight_decay = num_or_throw(val, where);
            } else {
                throw ConfigError("config: unknown key 'optimizer." + key + "' for adamw");
            }
        } else if (o.name == "ecd_q1") {
            if (key == "step") {
                o.ecd.step = num_or_throw(val, where);
            } else if (key == "eta") {
                o.ecd.eta = num_or_throw(val, where);
            } else if (key == "f0") {
                o.ecd.f0 = num_or_throw(val, where);
            } else if (key == "nu") {
                o.ecd.nu = num_or_throw(val, where);
            } else if (key == "lhat") {
                o.ecd.lhat = num_or_throw(val, where);
            } else if (key == "delta_max") {
                o.ecd.delta_max = num_or_throw(val, where);
            } else {
                throw ConfigError("config: unknown key 'optimizer." + key + "' for ecd_q1");
            }
        } else {
            throw ConfigError("config: unknown optimizer '" + o.name + "'");
        }
    }
}

void parse_corpus(const ojson& j, CorpusSpec& c) {
    for (auto& [key, val] : j.items()) {
        const std::string where = "config: corpus." + key;
        if (key == "path") {
            c.path = str_or_throw(val, where);
        } else if (key == "split") {
            c.split = num_or_throw(val, where);
        } else {
            throw ConfigError("config: unknown key 'corpus." + key + "'");
        }
    }
}

void parse_training(const ojson& j, TrainingSpec& t) {
    for (auto& [key, val] : j.items()) {
        const std::string where = "config: training." + key;
        if (key == "steps") {
            t.steps = int_or_throw(val, where);
        } else if (key == "batch") {
            t.batch = int_or_throw(val, where);
        } else if (key == "eval_every") {
            t.eval_every = int_or_throw(val, where);
        } else if (key == "eval_batches") {
            t.eval_batches = int_or_throw(val, where);
        } else if (key == "checkpoint_every") {
            t.checkpoint_every = int_or_throw(val, where);
        } else if (key == "noether_every") {
            t.noether_every = int_or_throw(val, where);
        } else {
            throw ConfigError("config: unknown key 'training." + key + "'");
        }
    }
}

ojson optimizer_json(const OptimizerSpec& o) {
    ojson j;
    j["name"] = o.name;
    if (o.name == "sgdm") {
        j["lr"] = o.sgdm.lr;
        j["momentum"] = o.sgdm.momentum;
        j["nesterov"] = o.sgdm.nesterov;
        j["weight_decay"] = o.sgdm.weight_decay;
    } else if (o.name == "adamw") {
        j["lr"] = o.adamw.lr;
        j["beta1"] = o.adamw.beta1;
        j["beta2"] = o.adamw.beta2;
        j["eps"] = o.adamw.eps;
        j["weight_decay"] = o.adamw.weight_decay;
    } else if (o.name == "ecd_q1") {
        j["step"] = o.ecd.step;
        j["eta"] = o.ecd.eta;
        j["f0"] = o.ecd.f0;
        j["nu"] = o.ecd.nu;
        j["lhat"] = o.ecd.lhat;
        j["delta_max"] = o.ecd.delta_max;
    }
    return j;
}

ojson config_json(const ExperimentConfig& cfg) {
    ojson j;
    j["version"] = "1";
    j["kind"] = run_kind_name(cfg.kind);
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    ojson m;
    m["n_layers"] = cfg.model.n_layers;
    m["n_heads"] = cfg.model.n_heads;
    m["d_model"] = cfg.model.d_model;
    m["block_size"] = cfg.model.block_size;
    m["vocab_size"] = cfg.model.vocab_size;
    m["activation"] = activation_name(cfg.model.activation);
    m["init_std"] = cfg.model.init_std;
    m["tie_embedding"] = cfg.model.tie_embedding;
    j["model"] = m;
    ojson b;
    b["mode"] = bias_mode_name(cfg.model.bias.mode);
    b["mu_q"] = cfg.model.bias.mu_q;
    b["sigma_q_lo"] = cfg.model.bias.sigma_q_lo;
    b["sigma_q_hi"] = cfg.model.bias.sigma_q_hi;
    b["mu_v"] = cfg.model.bias.mu_v;
    b["sigma_v"] = cfg.model.bias.sigma_v;
    b["learnable"] = cfg.model.bias.learnable;
    b["share_across_layers"] = cfg.model.bias.share_across_layers;
    j["bias"] = b;
    j["optimizer"] = optimizer_json(cfg.optimizer);
    ojson c;
    c["path"] = cfg.corpus.path;
    c["split"] = cfg.corpus.split;
    j["corpus"] = c;
    ojson t;
    t["steps"] = cfg.training.steps;
    t["batch"] = cfg.training.batch;
    t["eval_every"] = cfg.training.eval_every;
    t["eval_batches"] = cfg.training.eval_batches;
    t["checkpoint_every"] = cfg.training.checkpoint_every;
    t["noether_every"] = cfg.training.noether_every;
    j["training"] = t;
    return j;
}

// Model plus budget: runs must agree on these before a delta means anything.
std::string compat_signature(const ExperimentConfig& cfg) {
    ojson j;
    j["n_layers"] = cfg.model.n_layers;
    j["n_heads"] = cfg.model.n_heads;
    j["d_model"] = cfg.model.d_model;
    j["block_size"] = cfg.model.block_size;
    j["vocab_size"] = cfg.model.vocab_size;
    j["activation"] = activation_name(cfg.model.activation);
    j["init_std"] = cfg.model.init_std;
    j["tie_embedding"] = cfg.model.tie_embedding;
    j["steps"] = cfg.training.steps;
    j["batch"] = cfg.training.batch;
    j["split"] = cfg.corpus.split;
    return hex64(fnv1a64(j.dump()));
}

std::optional<double> opt_num(const ojson& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

std::string opt_cell(const std::optional<double>& v) {
    return v ? fmt_g17(*v) : "-";
}

}  // namespace

std::string run_kind_name(RunKind k) {
    switch (k) {
        case RunKind::train: return "train";
        case RunKind::sombrero: return "sombrero";
        case RunKind::liouville: return "liouville";
        case RunKind::align: return "align";
        case RunKind::logic: return "logic";
        case RunKind::noether_report: return "noether-report";
    }
    throw ConfigError("unknown run kind");
}

RunKind run_kind_from_name(const std::string& s) {
    if (s == "train") return RunKind::train;
    if (s == "sombrero") return RunKind::sombrero;
    if (s == "liouville") return RunKind::liouville;
    if (s == "align") return RunKind::align;
    if (s == "logic") return RunKind::logic;
    if (s == "noether-report") return RunKind::noether_report;
    throw ConfigError("unknown run kind '" + s + "'");
}

void OptimizerSpec::validate() const {
    if (name == "sgdm") {
        if (sgdm.lr <= 0) throw ConfigError("optimizer: sgdm lr must be positive");
        if (sgdm.momentum < 0 || sgdm.momentum >= 1) {
            throw ConfigError("optimizer: sgdm momentum must sit in [0, 1)");
        }
    } else if (name == "adamw") {
        if (adamw.lr <= 0) throw ConfigError("optimizer: adamw lr must be positive");
        if (adamw.beta1 < 0 || adamw.beta1 >= 1 || adamw.beta2 < 0 || adamw.beta2 >= 1) {
            throw ConfigError("optimizer: adamw betas must sit in [0, 1)");
        }
        if (adamw.eps <= 0) throw ConfigError("optimizer: adamw eps must be positive");
    } else if (name == "ecd_q1") {
        if (ecd.step <= 0) throw ConfigError("optimizer: ecd_q1 step must be positive");
        if (ecd.eta <= 0) throw ConfigError("optimizer: ecd_q1 eta must be positive");
        if (ecd.nu < 0) throw ConfigError("optimizer: ecd_q1 nu must be nonnegative");
        if (ecd.lhat <= 0) throw ConfigError("optimizer: ecd_q1 lhat must be positive");
    } else {
        throw ConfigError("optimizer: unknown name '" + name +
                          "' (expected sgdm, adamw or ecd_q1)");
    }
}

std::unique_ptr<Optimizer> OptimizerSpec::build() const {
    validate();
    if (name == "sgdm") return std::make_unique<Sgdm>(sgdm);
    if (name == "adamw") return std::make_unique<AdamW>(adamw);
    return std::make_unique<EcdQ1>(ecd);
}

void ExperimentConfig::validate() const {
    model.validate();
    optimizer.validate();
    if (kind == RunKind::train) {
        if (corpus.path.empty()) throw ConfigError("config: corpus.path is required");
        if (out_dir.empty()) throw ConfigError("config: out_dir is required");
        if (!(corpus.split > 0.0 && corpus.split < 1.0)) {
            throw ConfigError("config: corpus.split must sit strictly inside (0, 1)");
        }
        if (training.steps < 1) throw ConfigError("config: training.steps must be positive");
        if (training.batch < 1) throw ConfigError("config: training.batch must be positive");
        if (training.eval_every < 1) {
            throw ConfigError("config: training.eval_every must be positive");
        }
        if (training.eval_batches < 1) {
            throw ConfigError("config: training.eval_batches must be positive");
        }
        if (training.checkpoint_every < 0 || training.noether_every < 0) {
            throw ConfigError("config: schedules must be nonnegative");
        }
    }
}

ExperimentConfig config_from_json(const std::string& text) {
    ojson j = parse_object(text, "config");
    ExperimentConfig cfg;
    bool have_seed = false;
    for (auto& [key, val] : j.items()) {
        if (key == "version") {
            if (str_or_throw(val, "config: version") != "1") {
                throw ConfigError("config: unsupported version");
            }
        } else if (key == "kind") {
            cfg.kind = run_kind_from_name(str_or_throw(val, "config: kind"));
        } else if (key == "seed") {
            if (!val.is_number_unsigned()) {
                throw ConfigError("config: seed must be a nonnegative integer");
            }
            cfg.seed = val.get<uint64_t>();
            have_seed = true;
        } else if (key == "out_dir") {
            cfg.out_dir = str_or_throw(val, "config: out_dir");
        } else if (key == "model") {
            if (!val.is_object()) throw ConfigError("config: model must be an object");
            parse_model(val, cfg.model);
        } else if (key == "bias") {
            if (!val.is_object()) throw ConfigError("config: bias must be an object");
            parse_bias(val, cfg.model.bias);
        } else if (key == "optimizer") {
            if (!val.is_object()) throw ConfigError("config: optimizer must be an object");
            parse_optimizer(val, cfg.optimizer);
        } else if (key == "corpus") {
            if (!val.is_object()) throw ConfigError("config: corpus must be an object");
            parse_corpus(val, cfg.corpus);
        } else if (key == "training") {
            if (!val.is_object()) throw ConfigError("config: training must be an object");
            parse_training(val, cfg.training);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    if (!have_seed) throw ConfigError("config: seed is mandatory");
    cfg.validate();
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    return config_json(cfg).dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    return hex64(fnv1a64(config_to_json(cfg)));
}

std::string IngestManifest::to_json() const {
    ojson j;
    j["version"] = "1";
    j["source"] = source;
    j["bytes"] = bytes;
    j["split"] = split;
    j["train_bytes"] = train_bytes;
    j["val_bytes"] = val_bytes;
    j["corpus_hash"] = corpus_hash;
    j["train_hash"] = train_hash;
    j["val_hash"] = val_hash;
    return j.dump(2) + "\n";
}

size_t split_point(size_t n, double split) {
    if (n == 0) throw ConfigError("corpus is empty");
    if (!(split > 0.0 && split < 1.0)) {
        throw ConfigError("split fraction must sit strictly inside (0, 1)");
    }
    auto k = static_cast<size_t>(std::floor(double(n) * split));
    if (k == 0 || k == n) {
        throw ConfigError("split " + std::to_string(split) + " of " + std::to_string(n) +
                          " bytes leaves an empty side");
    }
    return k;
}

IngestManifest ingest_corpus(const std::string& path, double split,
                             const std::string& out_dir) {
    auto bytes = read_binary_file(path);
    const size_t k = split_point(bytes.size(), split);
    fs::create_directories(out_dir);

    IngestManifest man;
    man.source = path;
    man.bytes = bytes.size();
    man.split = split;
    man.train_bytes = k;
    man.val_bytes = bytes.size() - k;
    man.corpus_hash = hex64(fnv1a64(bytes.data(), bytes.size()));
    man.train_hash = hex64(fnv1a64(bytes.data(), k));
    man.val_hash = hex64(fnv1a64(bytes.data() + k, bytes.size() - k));

    write_binary_file(out_dir + "/train.bin", bytes.data(), k);
    write_binary_file(out_dir + "/val.bin", bytes.data() + k, bytes.size() - k);
    write_text_file(out_dir + "/manifest.json", man.to_json());
    return man;
}

void save_checkpoint(const std::string& dir, const ExperimentConfig& cfg, const Model& m,
                     const Optimizer& opt, int64_t step, std::optional<double> best_val) {
    fs::create_directories(dir);
    ojson man;
    man["version"] = "1";
    man["step"] = step;
    if (best_val) {
        man["best_val"] = *best_val;
    } else {
        man["best_val"] = nullptr;
    }
    man["config"] = config_json(cfg);

    std::vector<double> blob;
    man["model_arrays"] = ojson::array();
    for (const auto& [name, t] : m.params()) {
        ojson a;
        a["name"] = name;
        a["numel"] = t->numel();
        man["model_arrays"].push_back(a);
        blob.insert(blob.end(), t->value.begin(), t->value.end());
    }

    OptimizerState st = opt.state();
    ojson o;
    o["kind"] = opt.kind();
    o["scalars"] = ojson::object();
    for (const auto& [name, v] : st.scalars) o["scalars"][name] = v;
    o["arrays"] = ojson::array();
    for (const auto& [name, arr] : st.arrays) {
        ojson a;
        a["name"] = name;
        a["numel"] = arr.size();
        o["arrays"].push_back(a);
        blob.insert(blob.end(), arr.begin(), arr.end());
    }
    man["optimizer"] = o;
    man["total_doubles"] = blob.size();

    write_text_file(dir + "/manifest.json", man.dump(2) + "\n");
    write_binary_file(dir + "/arrays.bin", blob.data(), blob.size() * sizeof(double));
}

Checkpoint load_checkpoint(const std::string& dir) {
    ojson man = parse_object(read_text_file(dir + "/manifest.json"), "checkpoint manifest");
    Checkpoint ck;
    ck.config = config_from_json(man.at("config").dump(2) + "\n");
    ck.step = man.at("step").get<int64_t>();
    ck.best_val = opt_num(man, "best_val");

    auto raw = read_binary_file(dir + "/arrays.bin");
    if (raw.size() % sizeof(double) != 0) {
        throw ShapeError("checkpoint: arrays.bin is not a whole number of doubles");
    }
    const size_t total = raw.size() / sizeof(double);
    if (total != man.at("total_doubles").get<size_t>()) {
        throw ShapeError("checkpoint: arrays.bin holds " + std::to_string(total) +
                         " doubles, manifest says " +
                         std::to_string(man.at("total_doubles").get<size_t>()));
    }
    const auto* vals = reinterpret_cast<const double*>(raw.data());
    size_t off = 0;

    Rng rng(ck.config.seed, Stream::init);
    ck.model = Model::init(ck.config.model, rng);
    auto params = ck.model.params();
    const auto& arr_list = man.at("model_arrays");
    if (arr_list.size() != params.size()) {
        throw ShapeError("checkpoint: model has " + std::to_string(params.size()) +
                         " arrays, manifest lists " + std::to_string(arr_list.size()));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& a = arr_list[i];
        if (a.at("name").get<std::string>() != params[i].first ||
            a.at("numel").get<int64_t>() != params[i].second->numel()) {
            throw ShapeError("checkpoint: array '" + a.at("name").get<std::string>() +
                             "' does not match parameter '" + params[i].first + "'");
        }
        auto n = static_cast<size_t>(params[i].second->numel());
        if (off + n > total) throw ShapeError("checkpoint: arrays.bin too short");
        std::copy(vals + off, vals + off + n, params[i].second->value.begin());
        off += n;
    }

    ck.optimizer = ck.config.optimizer.build();
    const auto& oj = man.at("optimizer");
    if (oj.at("kind").get<std::string>() != ck.optimizer->kind()) {
        throw ConfigError("checkpoint: optimizer kind '" + oj.at("kind").get<std::string>() +
                          "' does not match config '" + ck.optimizer->kind() + "'");
    }
    OptimizerState st;
    for (auto& [name, v] : oj.at("scalars").items()) st.scalars[name] = v.get<double>();
    for (const auto& a : oj.at("arrays")) {
        auto n = a.at("numel").get<size_t>();
        if (off + n > total) throw ShapeError("checkpoint: arrays.bin too short");
        st.arrays.emplace_back(a.at("name").get<std::string>(),
                               std::vector<double>(vals + off, vals + off + n));
        off += n;
    }
    if (off != total) throw ShapeError("checkpoint: arrays.bin has trailing data");
    ck.optimizer->load_state(st);
    return ck;
}

std::string ledger_to_json(const RunLedger& ledger, const ExperimentConfig& cfg) {
    ojson j;
    j["version"] = "1";
    j["config_hash"] = ledger.config_hash;
    j["config"] = config_json(cfg);
    j["corpus_hash"] = ledger.corpus_hash;
    if (ledger.best_val) {
        j["best_val"] = *ledger.best_val;
    } else {
        j["best_val"] = nullptr;
    }
    j["final_step"] = ledger.final_step;
    j["aborted"] = ledger.aborted;
    j["abort_reason"] = ledger.abort_reason;
    j["checkpoints"] = ledger.checkpoints;
    j["wall_clock_s"] = ledger.wall_clock_s;
    j["rows"] = ojson::array();
    for (const auto& r : ledger.rows) {
        ojson row;
        row["step"] = r.step;
        row["train_loss"] = r.train_loss;
        if (r.val_loss) {
            row["val_loss"] = *r.val_loss;
        } else {
            row["val_loss"] = nullptr;
        }
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

namespace {

// Reload the metric series of an interrupted run so a resume appends to it
// instead of starting over. Anything past the resume step is dropped; it was
// written by the run segment the resume replaces.
void reload_series(const std::string& out_dir, int64_t upto, RunLedger& ledger,
                   std::vector<std::string>& metric_lines) {
    const std::string ledger_path = out_dir + "/ledger.json";
    if (fs::exists(ledger_path)) {
        ojson j = parse_object(read_text_file(ledger_path), "ledger");
        for (const auto& row : j.at("rows")) {
            auto step = row.at("step").get<int64_t>();
            if (step > upto) continue;
            MetricRow r;
            r.step = step;
            r.train_loss = row.at("train_loss").get<double>();
            if (!row.at("val_loss").is_null()) r.val_loss = row.at("val_loss").get<double>();
            ledger.rows.push_back(r);
        }
        for (const auto& name : j.at("checkpoints")) {
            auto s = name.get<std::string>();
            auto pos = s.find_last_of('_');
            if (pos != std::string::npos &&
                std::stoll(s.substr(pos + 1)) <= upto) {
                ledger.checkpoints.push_back(s);
            }
        }
    }
    const std::string metrics_path = out_dir + "/metrics.tsv";
    if (fs::exists(metrics_path)) {
        std::istringstream in(read_text_file(metrics_path));
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                first = false;  // header is rewritten by the caller
                continue;
            }
            if (line.empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) continue;
            if (std::stoll(line.substr(0, tab)) <= upto) metric_lines.push_back(line);
        }
    }
}

}  // namespace

TrainResult train_run(const ExperimentConfig& cfg,
                      const std::optional<std::string>& resume_from) {
    cfg.validate();
    if (cfg.kind != RunKind::train) {
        throw ConfigError("train_run: config kind is '" + run_kind_name(cfg.kind) +
                          "', expected 'train'");
    }
    const auto t0 = std::chrono::steady_clock::now();

    auto corpus = read_binary_file(cfg.corpus.path);
    const size_t split_at = split_point(corpus.size(), cfg.corpus.split);
    std::span<const unsigned char> train_bytes(corpus.data(), split_at);
    std::span<const unsigned char> val_bytes(corpus.data() + split_at,
                                             corpus.size() - split_at);
    const auto block = static_cast<size_t>(cfg.model.block_size);
    if (train_bytes.size() < block + 1) {
        throw ConfigError("training split of " + std::to_string(train_bytes.size()) +
                          " bytes is shorter than one window of " + std::to_string(block + 1));
    }
    if (val_bytes.size() < block + 1) {
        throw ConfigError("validation split of " + std::to_string(val_bytes.size()) +
                          " bytes is shorter than one window of " + std::to_string(block + 1));
    }

    fs::create_directories(cfg.out_dir);

    RunLedger ledger;
    ledger.config_hash = config_hash(cfg);
    ledger.corpus_hash = hex64(fnv1a64(corpus.data(), corpus.size()));

    Model m;
    std::unique_ptr<Optimizer> opt;
    int64_t start_step = 0;
    std::vector<std::string> metric_lines;

    if (resume_from) {
        Checkpoint ck = load_checkpoint(*resume_from);
        if (config_hash(ck.config) != ledger.config_hash) {
            throw ConfigError("resume: checkpoint config does not match this run's config");
        }
        m = std::move(ck.model);
        opt = std::move(ck.optimizer);
        start_step = ck.step;
        ledger.best_val = ck.best_val;
        ledger.final_step = ck.step;
        reload_series(cfg.out_dir, start_step, ledger, metric_lines);
        if (start_step >= cfg.training.steps) {
            throw ConfigError("resume: checkpoint is already at step " +
                              std::to_string(start_step) + " of " +
                              std::to_string(cfg.training.steps));
        }
    } else {
        Rng rng(cfg.seed, Stream::init);
        m = Model::init(cfg.model, rng);
        opt = cfg.optimizer.build();
    }

    FlatParams fp(m.params());
    const int64_t B = cfg.training.batch;
    const auto L = cfg.model.n_layers;
    const auto H = cfg.model.n_heads;
    const auto dk = cfg.model.d_head();
    const bool protocol_biases =
        cfg.model.bias.mode != BiasMode::symmetric && !cfg.model.bias.learnable;

    std::vector<int32_t> ids(static_cast<size_t>(B) * block);
    std::vector<int32_t> targets(static_cast<size_t>(B) * block);
    // step counters are offset by one so training draws never share a
    // (stream, counter) pair with the evaluation windows at counter zero
    auto fill_batch = [&](int64_t s) {
        Rng dr(cfg.seed, Stream::data_order, static_cast<uint64_t>(s) + 1);
        const size_t n_starts = train_bytes.size() - block;
        for (int64_t row = 0; row < B; ++row) {
            const size_t start = dr.integer(n_starts);
            for (size_t i = 0; i < block; ++i) {
                ids[static_cast<size_t>(row) * block + i] = train_bytes[start + i];
                targets[static_cast<size_t>(row) * block + i] = train_bytes[start + i + 1];
            }
        }
    };
    auto step_draw = [&](int64_t s) {
        if (!protocol_biases) return BiasDraw{};
        Rng br(cfg.seed, Stream::biases, static_cast<uint64_t>(s) + 1);
        return sample_biases(cfg.model.bias, L, H, dk, br);
    };
    auto abort_run = [&](int64_t s, const std::string& why) {
        ledger.aborted = true;
        ledger.abort_reason = "step " + std::to_string(s + 1) + ": " + why;
    };

    // the unit-speed engine needs a velocity before its first step; aim it
    // down the gradient of the first batch the loop is about to draw
    if (auto* q1 = dynamic_cast<EcdQ1*>(opt.get()); q1 && !q1->velocity()) {
        fill_batch(start_step);
        fp.zero_grads();
        Tape tape;
        auto loss = forward_loss(&tape, m, ids, targets, B, static_cast<int64_t>(block),
                                 step_draw(start_step));
        tape.backward(loss);
        Rng vr(cfg.seed, Stream::nu_refresh, 0);
        q1->init_velocity(fp, vr);
        fp.zero_grads();
    }

    std::vector<SectorSnapshot> snaps;
    for (int64_t s = start_step; s < cfg.training.steps; ++s) {
        fill_batch(s);
        BiasDraw draw = step_draw(s);
        fp.zero_grads();
        double train_loss;
        {
            Tape tape;
            auto loss =
                forward_loss(&tape, m, ids, targets, B, static_cast<int64_t>(block), draw);
            train_loss = loss->value[0];
            if (!std::isfinite(train_loss)) {
                abort_run(s, "non-finite training loss");
                break;
            }
            tape.backward(loss);
        }
        Rng nu(cfg.seed, Stream::nu_refresh, static_cast<uint64_t>(s) + 1);
        try {
            opt->step(fp, train_loss, &nu);
        } catch (const NumericError& e) {
            abort_run(s, e.what());
            break;
        }
        const int64_t done = s + 1;
        ledger.final_step = done;

        if (cfg.training.noether_every > 0 && s % cfg.training.noether_every == 0 &&
            opt->velocity()) {
            auto got = snapshot_all(m, fp, *opt->velocity(), done);
            snaps.insert(snaps.end(), got.begin(), got.end());
        }

        const bool is_final = done == cfg.training.steps;
        std::optional<double> val;
        if (done % cfg.training.eval_every == 0 || is_final) {
            double v = eval_valloss(m, val_bytes, B, static_cast<size_t>(cfg.training.eval_batches),
                                    cfg.seed)
                           .loss;
            if (!std::isfinite(v)) {
                abort_run(s, "non-finite validation loss");
                break;
            }
            val = v;
            if (!ledger.best_val || v < *ledger.best_val) ledger.best_val = v;
            ledger.rows.push_back({done, train_loss, val});
        }
        metric_lines.push_back(std::to_string(done) + "\t" + fmt_g17(train_loss) + "\t" +
                               (val ? fmt_g17(*val) : "-"));

        if ((cfg.training.checkpoint_every > 0 && done % cfg.training.checkpoint_every == 0) ||
            is_final) {
            const std::string name = "checkpoint_" + fmt_step(done);
            save_checkpoint(cfg.out_dir + "/" + name, cfg, m, *opt, done, ledger.best_val);
            ledger.checkpoints.push_back(name);
        }
    }

    std::string metrics = "step\ttrain_loss\tval_loss\n";
    for (const auto& line : metric_lines) metrics += line + "\n";
    write_text_file(cfg.out_dir + "/metrics.tsv", metrics);

    if (!snaps.empty()) {
        auto rep = build_report(snaps);
        write_text_file(cfg.out_dir + "/noether.tsv", rep.to_tsv());
        write_text_file(cfg.out_dir + "/noether_summary.json", rep.summary_json());
    }

    ledger.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text_file(cfg.out_dir + "/ledger.json", ledger_to_json(ledger, cfg));

    return TrainResult{std::move(ledger), cfg.out_dir};
}

void write_logic_summary(const std::string& run_dir, const LogicReport& rep) {
    ojson j;
    j["version"] = "1";
    j["n_tasks"] = rep.n_tasks;
    j["n_scored"] = rep.n_scored;
    j["n_skipped"] = rep.n_skipped;
    j["top1"] = rep.top1;
    j["top5"] = rep.top5;
    j["mean_loss"] = rep.mean_loss;
    j["categories"] = ojson::object();
    for (const auto& c : rep.categories) {
        j["categories"][c.category] = {{"n", c.n},
                                       {"scored", c.scored},
                                       {"top1", c.top1},
                                       {"top5", c.top5},
                                       {"mean_loss", c.mean_loss}};
    }
    write_text_file(run_dir + "/logic_summary.json", j.dump(2) + "\n");
}

void write_align_summary(const std::string& run_dir, const EnrichmentReport& rep) {
    write_text_file(run_dir + "/align_summary.json", rep.summary_json());
}

RunSummary load_run_summary(const std::string& run_dir) {
    ojson j = parse_object(read_text_file(run_dir + "/ledger.json"), "ledger");
    RunSummary s;
    s.dir = run_dir;
    ExperimentConfig cfg = config_from_json(j.at("config").dump(2) + "\n");
    s.optimizer = cfg.optimizer.name;
    s.bias_mode = bias_mode_name(cfg.model.bias.mode);
    s.seed = cfg.seed;
    s.corpus_hash = j.at("corpus_hash").get<std::string>();
    s.compat_sig = compat_signature(cfg);
    s.best_val = opt_num(j, "best_val");
    s.aborted = j.at("aborted").get<bool>();

    const std::string logic_path = run_dir + "/logic_summary.json";
    if (fs::exists(logic_path)) {
        ojson lj = parse_object(read_text_file(logic_path), "logic summary");
        s.logic_top1 = opt_num(lj, "top1");
        s.logic_top5 = opt_num(lj, "top5");
        s.logic_loss = opt_num(lj, "mean_loss");
    }
    const std::string align_path = run_dir + "/align_summary.json";
    if (fs::exists(align_path)) {
        ojson aj = parse_object(read_text_file(align_path), "align summary");
        if (aj.contains("categories") && aj["categories"].contains("punctuation")) {
            s.punct_enrichment = aj["categories"]["punctuation"].at("log2_ratio").get<double>();
        }
    }
    return s;
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y,
                              std::string* why) {
    if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
    const size_t n = x.size();
    if (n < 2) {
        if (why) *why = "needs at least 2 points";
        return std::nullopt;
    }
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        if (why) *why = "constant series";
        return std::nullopt;
    }
    return sxy / std::sqrt(sxx * syy);
}

ReportOutput emit_report(const std::vector<RunSummary>& runs) {
    if (runs.empty()) throw ConfigError("report: no runs");
    for (const auto& r : runs) {
        if (r.corpus_hash != runs[0].corpus_hash || r.compat_sig != runs[0].compat_sig) {
            throw ConfigError("report: run '" + r.dir + "' and '" + runs[0].dir +
                              "' were produced by mismatched configs");
        }
    }

    ReportOutput out;
    out.runs_tsv =
        "dir\toptimizer\tbias_mode\tseed\tbest_val\tlogic_loss\tlogic_top1\tlogic_top5\t"
        "punct_enrichment\taborted\n";
    for (const auto& r : runs) {
        out.runs_tsv += r.dir + "\t" + r.optimizer + "\t" + r.bias_mode + "\t" +
                        std::to_string(r.seed) + "\t" + opt_cell(r.best_val) + "\t" +
                        opt_cell(r.logic_loss) + "\t" + opt_cell(r.logic_top1) + "\t" +
                        opt_cell(r.logic_top5) + "\t" + opt_cell(r.punct_enrichment) + "\t" +
                        (r.aborted ? "yes" : "no") + "\n";
    }

    // pair each broken run with the symmetric run of the same optimizer+seed;
    // delta = broken - symmetric, so negative deltas mean the broken run won
    std::map<std::pair<std::string, uint64_t>, const RunSummary*> symmetric;
    for (const auto& r : runs) {
        if (r.bias_mode != "symmetric") continue;
        auto key = std::make_pair(r.optimizer, r.seed);
        if (symmetric.count(key)) {
            throw ConfigError("report: two symmetric runs share optimizer '" + r.optimizer +
                              "' and seed " + std::to_string(r.seed));
        }
        symmetric[key] = &r;
    }
    out.comparison_tsv =
        "optimizer\tseed\tbias_mode\tval_symmetric\tval_broken\tdelta_val\tdelta_top5\n";
    size_t n_pairs = 0;
    std::vector<double> enr, dtop5;
    for (const auto& r : runs) {
        if (r.bias_mode == "symmetric") continue;
        auto it = symmetric.find(std::make_pair(r.optimizer, r.seed));
        if (it == symmetric.end()) continue;
        const RunSummary& base = *it->second;
        ++n_pairs;
        std::optional<double> dval;
        if (r.best_val && base.best_val) dval = *r.best_val - *base.best_val;
        std::optional<double> d5;
        if (r.logic_top5 && base.logic_top5) d5 = *r.logic_top5 - *base.logic_top5;
        out.comparison_tsv += r.optimizer + "\t" + std::to_string(r.seed) + "\t" +
                              r.bias_mode + "\t" + opt_cell(base.best_val) + "\t" +
                              opt_cell(r.best_val) + "\t" + opt_cell(dval) + "\t" +
                              opt_cell(d5) + "\n";
        if (r.punct_enrichment && d5) {
            enr.push_back(*r.punct_enrichment);
            dtop5.push_back(*d5);
        }
    }

    ojson j;
    j["version"] = "1";
    j["n_runs"] = runs.size();
    j["n_pairs"] = n_pairs;
    const RunSummary* best = nullptr;
    for (const auto& r : runs) {
        if (r.aborted || !r.best_val) continue;
        if (!best || *r.best_val < *best->best_val) best = &r;
    }
    if (best) {
        j["best_run"] = {{"dir", best->dir}, {"best_val", *best->best_val}};
    } else {
        j["best_run"] = nullptr;
    }
    ojson pj;
    if (enr.size() < 3) {
        pj["absent"] = "needs at least 3 paired runs with enrichment and logic deltas, have " +
                       std::to_string(enr.size());
    } else {
        std::string why;
        auto r = pearson(enr, dtop5, &why);
        if (r) {
            pj["r"] = *r;
            pj["n"] = enr.size();
        } else {
            pj["absent"] = why;
        }
    }
    j["pearson_punct_vs_delta_top5"] = pj;
    out.summary_json = j.dump(2) + "\n";
    return out;
}

}  // namespace sblab
