#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sblab/attention.hpp"
#include "sblab/common.hpp"
#include "sblab/model.hpp"

namespace sblab {

// One next-token probe. `prompt` and `expected` are word-level, as a person
// would write them; the network reads bytes, so scoring folds the first
// `char_offset` bytes of `expected` into the prompt and asks for the byte
// that follows. With expected " gets" and char_offset 1 the network sees
// "...The ground " and is scored on 'g'.
struct LogicTask {
    std::string id;
    std::string category;    // one of logic_categories()
    std::string prompt;
    std::string expected;    // full continuation, display form
    size_t char_offset = 0;  // leading bytes of `expected` folded into the prompt
    std::string provenance;  // "paper" or "constructed"

    std::string scored_prompt() const;
    unsigned char scored_byte() const;
    void validate() const;
};

const std::vector<std::string>& logic_categories();

// Task file round trip. Rejects unknown keys, bad categories, duplicate ids.
std::vector<LogicTask> logic_tasks_from_json(const std::string& text);
std::string logic_tasks_to_json(const std::vector<LogicTask>& tasks);

// Next-token scores at the final position of a byte prompt. Prompts longer
// than max_prompt_bytes() are skipped by the harness, never truncated.
class LogitsProvider {
  public:
    virtual ~LogitsProvider() = default;
    virtual size_t vocab() const = 0;
    virtual size_t max_prompt_bytes() const = 0;
    virtual std::vector<double> logits(const std::string& prompt) = 0;
};

// Runs the network over the prompt bytes and returns the last-position
// logits. The default constructor scores with the protocol's mean biases;
// the two-argument form takes an explicit draw so tests can show that
// sampled draws give different logits than means.
class ModelProvider : public LogitsProvider {
  public:
    explicit ModelProvider(const Model& m);
    ModelProvider(const Model& m, BiasDraw draw);
    size_t vocab() const override;
    size_t max_prompt_bytes() const override;
    std::vector<double> logits(const std::string& prompt) override;

  private:
    const Model* m_;
    BiasDraw draw_;
};

// Deterministic stand-in: each task's scored byte is planted at an exact
// rank among strictly descending scores, rank 1 unless overridden. Lets the
// harness bookkeeping be checked against hand-computable outcomes.
class ForcedRankProvider : public LogitsProvider {
  public:
    explicit ForcedRankProvider(const std::vector<LogicTask>& tasks, size_t vocab = 256);
    void force_rank(const std::string& task_id, size_t rank);
    size_t vocab() const override;
    size_t max_prompt_bytes() const override;
    std::vector<double> logits(const std::string& prompt) override;

  private:
    size_t vocab_;
    std::vector<unsigned char> bytes_;
    std::vector<size_t> ranks_;
    std::map<std::string, size_t> by_prompt_;  // scored prompt -> task index
    std::map<std::string, size_t> by_id_;
};

// Rank of token `id`: one plus the count of strictly greater scores plus
// ties at smaller ids. Deterministic under ties; best rank is 1.
size_t logit_rank(std::span<const double> logits, size_t id);

// Cross-entropy of token `id` under the softmax of `logits`, in nats.
double logit_cross_entropy(std::span<const double> logits, size_t id);

// The k highest-scoring token ids, score descending, id ascending on ties.
std::vector<size_t> top_k_ids(std::span<const double> logits, size_t k);

struct TaskScore {
    std::string id;
    std::string category;
    std::string provenance;
    bool skipped = false;        // prompt longer than the provider allows
    size_t rank = 0;             // 1-based; 0 when skipped
    bool top1 = false;
    bool top5 = false;
    double loss = 0.0;           // cross-entropy of the scored byte, nats
    std::vector<size_t> top_ids; // five best token ids, for display
};

struct CategoryScore {
    std::string category;
    size_t n = 0;       // tasks in the file
    size_t scored = 0;  // ran, not skipped
    double top1 = 0.0;  // fractions of scored tasks
    double top5 = 0.0;
    double mean_loss = 0.0;
};

struct LogicReport {
    std::vector<TaskScore> tasks;
    std::vector<CategoryScore> categories;  // canonical order, present ones only
    size_t n_tasks = 0;
    size_t n_scored = 0;
    size_t n_skipped = 0;
    double top1 = 0.0;  // overall fractions of scored tasks
    double top5 = 0.0;
    double mean_loss = 0.0;

    std::string to_tsv() const;       // one row per task
    std::string summary_tsv() const;  // one row per category plus overall
};

LogicReport eval_logic(LogitsProvider& provider, const std::vector<LogicTask>& tasks);

// Mean next-token cross-entropy over seeded random windows of held-out
// bytes. Window starts come from the data-order stream, so a given
// (seed, shape) pair always scores the same windows, bit for bit.
struct ValLoss {
    size_t batches = 0;
    size_t tokens = 0;
    double loss = 0.0;
};

ValLoss eval_valloss(const Model& m, std::span<const unsigned char> data,
                     int64_t batch, size_t n_batches, uint64_t seed);

}  // namespace sblab
