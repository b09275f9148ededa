// Command-line front end. One subcommand per experiment family; flags mirror
// config keys (--set section.key=value applies on top of --config) and the
// exit code says what went wrong: 0 ok, 2 bad configuration, 3 numerical
// failure or an aborted run.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sblab/evalsuite.hpp"
#include "sblab/infra.hpp"
#include "sblab/interp.hpp"
#include "sblab/landscape.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace sblab;

namespace {

// "model.d_model=32" -> nested assignment; the value is taken as a JSON
// literal when it parses as one (number, bool) and as a string otherwise.
// Unknown keys are caught later by the strict config parser.
void apply_override(ojson& j, const std::string& pair) {
    auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + pair + "'");
    }
    const std::string path = pair.substr(0, eq);
    const std::string raw = pair.substr(eq + 1);
    ojson* cur = &j;
    size_t from = 0;
    while (true) {
        auto dot = path.find('.', from);
        if (dot == std::string::npos) break;
        const std::string part = path.substr(from, dot - from);
        if (part.empty()) throw ConfigError("--set key has an empty segment: '" + path + "'");
        if (!cur->contains(part) || !(*cur)[part].is_object()) (*cur)[part] = ojson::object();
        cur = &(*cur)[part];
        from = dot + 1;
    }
    const std::string leaf = path.substr(from);
    if (leaf.empty()) throw ConfigError("--set key has an empty segment: '" + path + "'");
    ojson v = ojson::parse(raw, nullptr, false);
    if (v.is_discarded() || v.is_object() || v.is_array()) {
        (*cur)[leaf] = raw;
    } else {
        (*cur)[leaf] = v;
    }
}

ojson load_config_json(const std::string& config_path, const std::vector<std::string>& sets) {
    ojson j;
    if (config_path.empty()) {
        j = ojson{{"version", "1"}};
    } else {
        j = ojson::parse(read_text_file(config_path), nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ConfigError("config file '" + config_path + "' is not a JSON object");
        }
    }
    for (const auto& s : sets) apply_override(j, s);
    return j;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> out;
    size_t from = 0;
    while (from <= csv.size()) {
        auto comma = csv.find(',', from);
        auto part = csv.substr(from, comma == std::string::npos ? comma : comma - from);
        if (part.empty()) throw ConfigError("--seeds has an empty entry");
        size_t used = 0;
        unsigned long long v = std::stoull(part, &used);
        if (used != part.size()) throw ConfigError("--seeds entry '" + part + "' is not a seed");
        out.push_back(v);
        if (comma == std::string::npos) break;
        from = comma + 1;
    }
    if (out.empty()) throw ConfigError("--seeds is empty");
    return out;
}

std::vector<std::string> parse_name_list(const std::string& csv, const char* what) {
    std::vector<std::string> out;
    size_t from = 0;
    while (from <= csv.size()) {
        auto comma = csv.find(',', from);
        auto part = csv.substr(from, comma == std::string::npos ? comma : comma - from);
        if (part.empty()) throw ConfigError(std::string(what) + " has an empty entry");
        out.push_back(part);
        if (comma == std::string::npos) break;
        from = comma + 1;
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

int cmd_train(const ojson& base, const std::string& resume) {
    auto cfg = config_from_json(base.dump());
    std::optional<std::string> resume_from;
    if (!resume.empty()) resume_from = resume;
    auto res = train_run(cfg, resume_from);
    std::printf("run: %s\n", res.out_dir.c_str());
    std::printf("final_step: %lld\n", static_cast<long long>(res.ledger.final_step));
    if (res.ledger.best_val) std::printf("best_val: %.10g\n", *res.ledger.best_val);
    if (res.ledger.aborted) {
        std::fprintf(stderr, "aborted: %s\n", res.ledger.abort_reason.c_str());
        return 3;
    }
    return 0;
}

int cmd_sweep(const ojson& base, const std::string& seeds_csv, const std::string& modes_csv,
              const std::string& out_root) {
    auto seeds = parse_seed_list(seeds_csv);
    auto modes = parse_name_list(modes_csv, "--bias-modes");
    fs::create_directories(out_root);
    ojson manifest;
    manifest["version"] = "1";
    manifest["runs"] = ojson::array();
    bool any_aborted = false;
    std::string opt_name = "sgdm";
    if (base.contains("optimizer") && base["optimizer"].is_object() &&
        base["optimizer"].contains("name") && base["optimizer"]["name"].is_string()) {
        opt_name = base["optimizer"]["name"].get<std::string>();
    }
    for (const auto& mode : modes) {
        for (auto seed : seeds) {
            ojson j = base;
            j["seed"] = seed;
            j["kind"] = "train";
            if (!j.contains("bias") || !j["bias"].is_object()) j["bias"] = ojson::object();
            j["bias"]["mode"] = mode;
            const std::string dir =
                out_root + "/" + opt_name + "_" + mode + "_seed" + std::to_string(seed);
            j["out_dir"] = dir;
            auto cfg = config_from_json(j.dump());
            std::printf("sweep: %s\n", dir.c_str());
            auto res = train_run(cfg);
            ojson row;
            row["dir"] = res.out_dir;
            if (res.ledger.best_val) {
                row["best_val"] = *res.ledger.best_val;
            } else {
                row["best_val"] = nullptr;
            }
            row["aborted"] = res.ledger.aborted;
            manifest["runs"].push_back(row);
            any_aborted = any_aborted || res.ledger.aborted;
        }
    }
    write_text_file(out_root + "/sweep.json", manifest.dump(2) + "\n");
    std::printf("sweep manifest: %s/sweep.json\n", out_root.c_str());
    return any_aborted ? 3 : 0;
}

int cmd_sombrero(const TrajectoryConfig& cfg, const std::string& out_dir) {
    auto traj = run_trajectory(cfg);
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/trajectory.tsv", traj.to_tsv());
    double max_lz = 0.0;
    for (double v : traj.lz) max_lz = std::max(max_lz, std::abs(v));
    ojson j;
    j["version"] = "1";
    j["engine"] = opt_kind_name(cfg.kind);
    j["steps_taken"] = traj.steps_taken;
    j["diverged"] = traj.diverged;
    j["aborted"] = traj.aborted;
    if (!traj.x.empty()) {
        j["final_x"] = traj.x.back();
        j["final_y"] = traj.y.back();
        j["final_r"] = traj.r.back();
        j["final_lz"] = traj.lz.back();
    }
    j["max_abs_lz"] = max_lz;
    write_text_file(out_dir + "/summary.json", j.dump(2) + "\n");
    std::printf("trajectory: %s/trajectory.tsv (%d steps)\n", out_dir.c_str(),
                traj.steps_taken);
    if (traj.diverged || traj.aborted) {
        std::fprintf(stderr, "trajectory %s\n", traj.diverged ? "diverged" : "aborted");
        return 3;
    }
    return 0;
}

int cmd_liouville(const LiouvilleConfig& cfg, double offset, const std::string& out_dir) {
    Potential1D f = [offset](double theta, double& dgrad) {
        dgrad = 2.0 * theta;
        return theta * theta + offset;
    };
    auto rep = liouville_1d(f, cfg);
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/liouville.tsv", rep.to_tsv());
    ojson j;
    j["version"] = "1";
    j["steps_taken"] = rep.steps_taken;
    j["in_window"] = rep.in_window;
    j["ks"] = rep.ks;
    j["exponent_fit"] = rep.exponent_fit;
    j["exponent_target"] = rep.exponent_target;
    write_text_file(out_dir + "/summary.json", j.dump(2) + "\n");
    std::printf("exponent: fit %.4f target %.4f (%lld window samples)\n", rep.exponent_fit,
                rep.exponent_target, static_cast<long long>(rep.in_window));
    return 0;
}

int cmd_align(const std::string& ckpt, const std::string& out_dir, int layer, int head,
              int top_k, bool include_pos0) {
    auto ck = load_checkpoint(ckpt);
    auto table = alignment_scores(ck.model, layer, head, include_pos0);
    auto tb = top_bottom_tokens(table.scores, top_k);
    auto rep = enrichment(tb.top, tb.bottom, CategoryLexicon::builtin(), byte_token_text);
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/alignment.tsv", table.to_tsv());
    write_text_file(out_dir + "/enrichment.tsv", rep.to_tsv());
    write_align_summary(out_dir, rep);
    for (const auto& c : rep.categories) {
        std::printf("%s: log2 ratio %+.3f%s\n", c.name.c_str(), c.log2_ratio,
                    c.low_support ? " (low support)" : "");
    }
    return 0;
}

int cmd_logic(const std::string& ckpt, const std::string& tasks_path,
              const std::string& out_dir) {
    auto ck = load_checkpoint(ckpt);
    auto tasks = logic_tasks_from_json(read_text_file(tasks_path));
    ModelProvider prov(ck.model);
    auto rep = eval_logic(prov, tasks);
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/logic.tsv", rep.to_tsv());
    write_text_file(out_dir + "/logic_categories.tsv", rep.summary_tsv());
    write_logic_summary(out_dir, rep);
    std::printf("scored %zu/%zu tasks: top1 %.3f top5 %.3f loss %.4f\n", rep.n_scored,
                rep.n_tasks, rep.top1, rep.top5, rep.mean_loss);
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    std::vector<RunSummary> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run_summary(d));
    auto rep = emit_report(runs);
    fs::create_directories(out_dir);
    write_text_file(out_dir + "/runs.tsv", rep.runs_tsv);
    write_text_file(out_dir + "/comparison.tsv", rep.comparison_tsv);
    write_text_file(out_dir + "/summary.json", rep.summary_json);
    std::printf("%s", rep.comparison_tsv.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"symmetry-breaking laboratory"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "split a byte corpus and write a manifest");
    std::string in_path, out_dir;
    double split = 0.9;
    ingest->add_option("--input", in_path, "corpus file")->required();
    ingest->add_option("--split", split, "train fraction in (0,1)");
    ingest->add_option("--out", out_dir, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "run one training experiment");
    std::string config_path, resume;
    std::vector<std::string> sets;
    train->add_option("--config", config_path, "config JSON file");
    train->add_option("--set", sets, "override a config key, e.g. model.d_model=32");
    train->add_option("--resume", resume, "checkpoint directory to continue from");
    std::string t_out, t_corpus, t_optimizer, t_bias_mode;
    uint64_t t_seed = 0;
    int64_t t_steps = 0, t_batch = 0;
    double t_lr = 0.0, t_split = 0.0;
    auto* o_seed = train->add_option("--seed", t_seed, "root seed");
    auto* o_out = train->add_option("--out-dir", t_out, "run output directory");
    auto* o_corpus = train->add_option("--corpus", t_corpus, "corpus file");
    auto* o_split = train->add_option("--split", t_split, "train fraction");
    auto* o_steps = train->add_option("--steps", t_steps, "optimizer steps");
    auto* o_batch = train->add_option("--batch", t_batch, "sequences per step");
    auto* o_optim = train->add_option("--optimizer", t_optimizer, "sgdm | adamw | ecd_q1");
    auto* o_lr = train->add_option("--lr", t_lr, "learning rate (sgdm, adamw)");
    auto* o_mode = train->add_option("--bias-mode", t_bias_mode,
                                     "symmetric | bq_only | bq_bv");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "sequential grid of training runs");
    std::string sw_config, sw_seeds, sw_modes = "symmetric,bq_bv", sw_root;
    std::vector<std::string> sw_sets;
    sweep->add_option("--config", sw_config, "base config JSON file")->required();
    sweep->add_option("--set", sw_sets, "override a config key for every run");
    sweep->add_option("--seeds", sw_seeds, "comma-separated seed list")->required();
    sweep->add_option("--bias-modes", sw_modes, "comma-separated bias modes");
    sweep->add_option("--out-root", sw_root, "directory for the run folders")->required();

    // sombrero
    auto* som = app.add_subcommand("sombrero", "2-d ring-minimum trajectory");
    TrajectoryConfig tc;
    std::string som_engine = "ecd_vm", som_out;
    som->add_option("--engine", som_engine, "sgdm | adamw | ecd_vm | ecd_q1");
    som->add_option("--steps", tc.steps, "integrator steps");
    som->add_option("--start-x", tc.start_x, "initial x");
    som->add_option("--start-y", tc.start_y, "initial y");
    som->add_option("--noise-std", tc.noise_std, "per-step surface perturbation");
    som->add_option("--noise-seed", tc.noise_seed, "perturbation stream seed");
    som->add_option("--lr", tc.sgdm.lr, "sgdm learning rate");
    som->add_option("--momentum", tc.sgdm.momentum, "sgdm momentum");
    som->add_option("--adamw-lr", tc.adamw.lr, "adamw learning rate");
    som->add_option("--vm-step", tc.vm.step, "variable-mass step size");
    som->add_option("--vm-eta", tc.vm.eta, "variable-mass eta");
    som->add_option("--vm-f0", tc.vm.f0, "variable-mass floor");
    som->add_option("--vm-speed", tc.vm_speed, "initial speed");
    som->add_option("--q1-step", tc.q1.step, "unit-speed step size");
    som->add_option("--q1-eta", tc.q1.eta, "unit-speed eta");
    som->add_option("--q1-f0", tc.q1.f0, "unit-speed floor");
    som->add_option("--q1-nu", tc.q1.nu, "unit-speed refresh strength");
    som->add_option("--out", som_out, "output directory")->required();

    // liouville
    auto* lio = app.add_subcommand("liouville", "1-d stationary-density exponent");
    LiouvilleConfig lc;
    double lio_offset = 1.0;
    std::string lio_out;
    lio->add_option("--eta", lc.eta, "friction exponent");
    lio->add_option("--f0", lc.f0, "energy floor");
    lio->add_option("--step", lc.step, "integrator step size");
    lio->add_option("--max-steps", lc.max_steps, "step budget");
    lio->add_option("--lo", lc.window_lo, "window lower edge");
    lio->add_option("--hi", lc.window_hi, "window upper edge");
    lio->add_option("--bins", lc.bins, "histogram bins");
    lio->add_option("--start", lc.start, "initial theta");
    lio->add_option("--speed", lc.speed, "initial speed");
    lio->add_option("--min-samples", lc.min_samples, "required window samples");
    lio->add_option("--offset", lio_offset, "potential is theta^2 + offset");
    lio->add_option("--out", lio_out, "output directory")->required();

    // align
    auto* align = app.add_subcommand("align", "query-bias alignment and enrichment");
    std::string al_ckpt, al_out;
    int al_layer = 0, al_head = 0, al_topk = 15;
    bool al_pos0 = false;
    align->add_option("--checkpoint", al_ckpt, "checkpoint directory")->required();
    align->add_option("--layer", al_layer, "layer index");
    align->add_option("--head", al_head, "head index");
    align->add_option("--top-k", al_topk, "pool size per end");
    align->add_flag("--include-pos0", al_pos0, "add the position-0 embedding to probes");
    align->add_option("--out", al_out, "output directory")->required();

    // logic
    auto* logic = app.add_subcommand("logic", "score the logic task file");
    std::string lg_ckpt, lg_tasks, lg_out;
    logic->add_option("--checkpoint", lg_ckpt, "checkpoint directory")->required();
    logic->add_option("--tasks", lg_tasks, "task JSON file")->required();
    logic->add_option("--out", lg_out, "output directory")->required();

    // report
    auto* report = app.add_subcommand("report", "compare completed runs");
    std::vector<std::string> rp_runs;
    std::string rp_out;
    report->add_option("runs", rp_runs, "run directories")->required();
    report->add_option("--out", rp_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*ingest) {
            auto man = ingest_corpus(in_path, split, out_dir);
            std::printf("%s", man.to_json().c_str());
            return 0;
        }
        if (*train) {
            ojson j = load_config_json(config_path, sets);
            if (*o_seed) j["seed"] = t_seed;
            if (*o_out) j["out_dir"] = t_out;
            if (*o_corpus) apply_override(j, "corpus.path=" + t_corpus);
            if (*o_split) j["corpus"]["split"] = t_split;
            if (*o_steps) j["training"]["steps"] = t_steps;
            if (*o_batch) j["training"]["batch"] = t_batch;
            if (*o_optim) apply_override(j, "optimizer.name=" + t_optimizer);
            if (*o_lr) j["optimizer"]["lr"] = t_lr;
            if (*o_mode) apply_override(j, "bias.mode=" + t_bias_mode);
            return cmd_train(j, resume);
        }
        if (*sweep) return cmd_sweep(load_config_json(sw_config, sw_sets), sw_seeds, sw_modes, sw_root);
        if (*som) {
            tc.kind = opt_kind_from_name(som_engine);
            return cmd_sombrero(tc, som_out);
        }
        if (*lio) return cmd_liouville(lc, lio_offset, lio_out);
        if (*align) return cmd_align(al_ckpt, al_out, al_layer, al_head, al_topk, al_pos0);
        if (*logic) return cmd_logic(lg_ckpt, lg_tasks, lg_out);
        if (*report) return cmd_report(rp_runs, rp_out);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
