#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sblab/evalsuite.hpp"
#include "sblab/interp.hpp"
#include "sblab/model.hpp"
#include "sblab/noether.hpp"
#include "sblab/optim.hpp"

namespace sblab {

enum class RunKind { train, sombrero, liouville, align, logic, noether_report };
std::string run_kind_name(RunKind k);
RunKind run_kind_from_name(const std::string& s);

// Optimizer choice for a training run. The engine-specific structs keep their
// library defaults; a config file overrides individual fields.
struct OptimizerSpec {
    std::string name = "sgdm";  // sgdm | adamw | ecd_q1
    SgdmConfig sgdm;
    AdamWConfig adamw;
    EcdQ1Config ecd;

    void validate() const;
    std::unique_ptr<Optimizer> build() const;
};

struct CorpusSpec {
    std::string path;
    double split = 0.9;  // leading fraction becomes the training split
};

struct TrainingSpec {
    int64_t steps = 200;
    int64_t batch = 8;
    int64_t eval_every = 50;       // val loss cadence; the final step always evals
    int64_t eval_batches = 8;
    int64_t checkpoint_every = 0;  // 0: checkpoint only at the end
    int64_t noether_every = 0;     // 0: conserved-charge sampling off
};

// One experiment: everything a run needs, hashable, round-trippable. The
// bias protocol lives inside model.bias but is its own section in the file.
struct ExperimentConfig {
    RunKind kind = RunKind::train;
    uint64_t seed = 0;
    std::string out_dir;
    ModelConfig model;
    OptimizerSpec optimizer;
    CorpusSpec corpus;
    TrainingSpec training;

    void validate() const;
};

// Strict parse: unknown keys are errors at every level, seed is mandatory.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);  // hex of the canonical dump

// ---- corpus ----

struct IngestManifest {
    std::string source;
    size_t bytes = 0;
    double split = 0.0;
    size_t train_bytes = 0;
    size_t val_bytes = 0;
    std::string corpus_hash;
    std::string train_hash;
    std::string val_hash;

    std::string to_json() const;
};

// Byte-level split point: the leading floor(n*split) bytes train, the rest
// validate. Rejects empty corpora, split outside (0,1), and empty sides.
size_t split_point(size_t n, double split);

// Reads the corpus, splits it, writes train.bin / val.bin / manifest.json
// into out_dir. Re-ingesting the same file yields a byte-identical manifest.
IngestManifest ingest_corpus(const std::string& path, double split,
                             const std::string& out_dir);

// ---- checkpoints ----

struct Checkpoint {
    ExperimentConfig config;
    Model model;
    std::unique_ptr<Optimizer> optimizer;
    int64_t step = 0;
    std::optional<double> best_val;
};

// Writes manifest.json + arrays.bin into dir (created if needed). The
// manifest embeds the full config, so a checkpoint reloads standalone.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& dir, const ExperimentConfig& cfg, const Model& m,
                     const Optimizer& opt, int64_t step, std::optional<double> best_val);
Checkpoint load_checkpoint(const std::string& dir);

// ---- training ----

struct MetricRow {
    int64_t step = 0;  // steps completed
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

struct RunLedger {
    std::string config_hash;
    std::string corpus_hash;
    std::vector<MetricRow> rows;  // evaluation points only, append-only
    std::optional<double> best_val;
    int64_t final_step = 0;
    std::vector<std::string> checkpoints;
    double wall_clock_s = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

std::string ledger_to_json(const RunLedger& ledger, const ExperimentConfig& cfg);

struct TrainResult {
    RunLedger ledger;
    std::string out_dir;
};

// Runs the loop: per-step batch draws, protocol bias draws and velocity
// refreshes all come from counter-based streams keyed by (seed, step), so a
// resumed run replays the tail of a straight run bit for bit. Emits
// metrics.tsv (every step), ledger.json, checkpoints on schedule, and
// noether.tsv when sampling is enabled. A non-finite loss or an engine
// failure aborts, keeping the last checkpoint.
TrainResult train_run(const ExperimentConfig& cfg,
                      const std::optional<std::string>& resume_from = {});

// ---- reports ----

// Written into a run directory by the respective evaluation passes; the
// report reader picks them up when present.
void write_logic_summary(const std::string& run_dir, const LogicReport& rep);
void write_align_summary(const std::string& run_dir, const EnrichmentReport& rep);

struct RunSummary {
    std::string dir;
    std::string optimizer;
    std::string bias_mode;
    uint64_t seed = 0;
    std::string corpus_hash;
    std::string compat_sig;  // model + budget signature; comparisons demand a match
    std::optional<double> best_val;
    bool aborted = false;
    std::optional<double> logic_top1, logic_top5, logic_loss;
    std::optional<double> punct_enrichment;
};

RunSummary load_run_summary(const std::string& run_dir);

// Pearson correlation; absent (with the reason in *why) for fewer than two
// points or a constant series.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y,
                              std::string* why = nullptr);

struct ReportOutput {
    std::string runs_tsv;        // one row per run
    std::string comparison_tsv;  // symmetric-vs-broken deltas, negative = better
    std::string summary_json;
};

// Comparison rows pair each broken run with the symmetric run sharing its
// optimizer and seed. All runs must share corpus and compat signatures.
ReportOutput emit_report(const std::vector<RunSummary>& runs);

}  // namespace sblab
