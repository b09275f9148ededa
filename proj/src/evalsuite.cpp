#include "sblab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "sblab/interp.hpp"

namespace sblab {

namespace {

bool known_provenance(const std::string& p) {
    return p == "paper" || p == "constructed";
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::string join_token_names(const std::vector<size_t>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += " ";
        out += ids[i] < 256 ? byte_token_name(static_cast<int>(ids[i]))
                            : "#" + std::to_string(ids[i]);
    }
    return out;
}

}  // namespace

const std::vector<std::string>& logic_categories() {
    static const std::vector<std::string> k = {"pattern_numeric", "pattern_alpha",
                                               "retrieval_near",  "retrieval_far",
                                               "simple_inference", "copy"};
    return k;
}

std::string LogicTask::scored_prompt() const {
    return prompt + expected.substr(0, char_offset);
}

unsigned char LogicTask::scored_byte() const {
    return static_cast<unsigned char>(expected.at(char_offset));
}

void LogicTask::validate() const {
    if (id.empty()) throw ConfigError("logic task: empty id");
    const auto& cats = logic_categories();
    if (std::find(cats.begin(), cats.end(), category) == cats.end()) {
        throw ConfigError("logic task '" + id + "': unknown category '" + category + "'");
    }
    if (prompt.empty()) throw ConfigError("logic task '" + id + "': empty prompt");
    if (expected.empty()) throw ConfigError("logic task '" + id + "': empty expected");
    if (char_offset >= expected.size()) {
        throw ConfigError("logic task '" + id + "': char_offset " +
                          std::to_string(char_offset) + " leaves no byte to score");
    }
    if (!known_provenance(provenance)) {
        throw ConfigError("logic task '" + id + "': provenance must be 'paper' or 'constructed'");
    }
}

std::vector<LogicTask> logic_tasks_from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("logic tasks: bad JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("logic tasks: top level must be an object");
    for (auto& [key, val] : j.items()) {
        if (key != "version" && key != "tasks") {
            throw ConfigError("logic tasks: unknown key '" + key + "'");
        }
    }
    if (!j.contains("version") || !j["version"].is_string()) {
        throw ConfigError("logic tasks: missing string 'version'");
    }
    if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty()) {
        throw ConfigError("logic tasks: missing nonempty array 'tasks'");
    }
    std::vector<LogicTask> out;
    std::set<std::string> seen;
    for (const auto& rec : j["tasks"]) {
        if (!rec.is_object()) throw ConfigError("logic tasks: each task must be an object");
        LogicTask t;
        for (auto& [key, val] : rec.items()) {
            if (key == "id" && val.is_string()) {
                t.id = val.get<std::string>();
            } else if (key == "category" && val.is_string()) {
                t.category = val.get<std::string>();
            } else if (key == "prompt" && val.is_string()) {
                t.prompt = val.get<std::string>();
            } else if (key == "expected" && val.is_string()) {
                t.expected = val.get<std::string>();
            } else if (key == "char_offset" && val.is_number_unsigned()) {
                t.char_offset = val.get<size_t>();
            } else if (key == "provenance" && val.is_string()) {
                t.provenance = val.get<std::string>();
            } else {
                throw ConfigError("logic tasks: unknown or mistyped key '" + key + "'");
            }
        }
        t.validate();
        if (!seen.insert(t.id).second) {
            throw ConfigError("logic tasks: duplicate id '" + t.id + "'");
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::string logic_tasks_to_json(const std::vector<LogicTask>& tasks) {
    nlohmann::ordered_json j;
    j["version"] = "1";
    j["tasks"] = nlohmann::ordered_json::array();
    for (const auto& t : tasks) {
        t.validate();
        nlohmann::ordered_json rec;
        rec["id"] = t.id;
        rec["category"] = t.category;
        rec["prompt"] = t.prompt;
        rec["expected"] = t.expected;
        rec["char_offset"] = t.char_offset;
        rec["provenance"] = t.provenance;
        j["tasks"].push_back(rec);
    }
    return j.dump(2) + "\n";
}

ModelProvider::ModelProvider(const Model& m)
    : m_(&m),
      draw_(inference_biases(m.cfg.bias, m.cfg.n_layers, m.cfg.n_heads, m.cfg.d_head())) {}

ModelProvider::ModelProvider(const Model& m, BiasDraw draw) : m_(&m), draw_(std::move(draw)) {}

size_t ModelProvider::vocab() const { return static_cast<size_t>(m_->cfg.vocab_size); }

size_t ModelProvider::max_prompt_bytes() const {
    return static_cast<size_t>(m_->cfg.block_size);
}

std::vector<double> ModelProvider::logits(const std::string& prompt) {
    if (prompt.empty()) throw ConfigError("model provider: empty prompt");
    if (prompt.size() > max_prompt_bytes()) {
        throw ConfigError("model provider: prompt of " + std::to_string(prompt.size()) +
                          " bytes exceeds the context window of " +
                          std::to_string(max_prompt_bytes()));
    }
    const int64_t T = static_cast<int64_t>(prompt.size());
    const int64_t V = m_->cfg.vocab_size;
    std::vector<int32_t> ids(prompt.size());
    for (size_t i = 0; i < prompt.size(); ++i) {
        auto b = static_cast<unsigned char>(prompt[i]);
        if (b >= V) {
            throw ConfigError("model provider: prompt byte " + std::to_string(int(b)) +
                              " outside vocab");
        }
        ids[i] = b;
    }
    auto out = forward_logits(nullptr, *m_, ids, 1, T, draw_);
    std::vector<double> last(static_cast<size_t>(V));
    const double* row = out->value.data() + (T - 1) * V;
    std::copy(row, row + V, last.begin());
    return last;
}

ForcedRankProvider::ForcedRankProvider(const std::vector<LogicTask>& tasks, size_t vocab)
    : vocab_(vocab) {
    if (vocab_ < 1) throw ConfigError("forced-rank provider: vocab must be positive");
    if (tasks.empty()) throw ConfigError("forced-rank provider: no tasks");
    for (const auto& t : tasks) {
        t.validate();
        if (t.scored_byte() >= vocab_) {
            throw ConfigError("forced-rank provider: task '" + t.id +
                              "' scores byte " + std::to_string(int(t.scored_byte())) +
                              " outside vocab " + std::to_string(vocab_));
        }
        size_t idx = bytes_.size();
        if (!by_id_.emplace(t.id, idx).second) {
            throw ConfigError("forced-rank provider: duplicate task id '" + t.id + "'");
        }
        if (!by_prompt_.emplace(t.scored_prompt(), idx).second) {
            throw ConfigError("forced-rank provider: tasks '" + t.id +
                              "' and another share a scored prompt");
        }
        bytes_.push_back(t.scored_byte());
        ranks_.push_back(1);
    }
}

void ForcedRankProvider::force_rank(const std::string& task_id, size_t rank) {
    auto it = by_id_.find(task_id);
    if (it == by_id_.end()) {
        throw ConfigError("forced-rank provider: no task '" + task_id + "'");
    }
    if (rank < 1 || rank > vocab_) {
        throw ConfigError("forced-rank provider: rank " + std::to_string(rank) +
                          " outside [1, " + std::to_string(vocab_) + "]");
    }
    ranks_[it->second] = rank;
}

size_t ForcedRankProvider::vocab() const { return vocab_; }

size_t ForcedRankProvider::max_prompt_bytes() const {
    return std::numeric_limits<size_t>::max();
}

std::vector<double> ForcedRankProvider::logits(const std::string& prompt) {
    auto it = by_prompt_.find(prompt);
    if (it == by_prompt_.end()) {
        throw ConfigError("forced-rank provider: no task for this prompt");
    }
    const size_t e = bytes_[it->second];
    const size_t r = ranks_[it->second];
    // token order by descending score: the scored byte sits at position r-1,
    // everything else fills around it in id order
    std::vector<size_t> order;
    order.reserve(vocab_);
    for (size_t i = 0; i < vocab_; ++i) {
        if (i != e) order.push_back(i);
    }
    order.insert(order.begin() + static_cast<std::ptrdiff_t>(r - 1), e);
    std::vector<double> out(vocab_);
    for (size_t k = 0; k < vocab_; ++k) out[order[k]] = -static_cast<double>(k);
    return out;
}

size_t logit_rank(std::span<const double> logits, size_t id) {
    if (id >= logits.size()) throw ConfigError("logit_rank: token id outside vocab");
    const double v = logits[id];
    size_t rank = 1;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (logits[i] > v || (logits[i] == v && i < id)) ++rank;
    }
    return rank;
}

double logit_cross_entropy(std::span<const double> logits, size_t id) {
    if (id >= logits.size()) throw ConfigError("logit_cross_entropy: token id outside vocab");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return mx + std::log(z) - logits[id];
}

std::vector<size_t> top_k_ids(std::span<const double> logits, size_t k) {
    std::vector<size_t> ids(logits.size());
    std::iota(ids.begin(), ids.end(), size_t{0});
    const size_t n = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                      [&](size_t a, size_t b) {
                          if (logits[a] != logits[b]) return logits[a] > logits[b];
                          return a < b;
                      });
    ids.resize(n);
    return ids;
}

LogicReport eval_logic(LogitsProvider& provider, const std::vector<LogicTask>& tasks) {
    if (tasks.empty()) throw ConfigError("eval_logic: no tasks");
    std::set<std::string> seen;
    for (const auto& t : tasks) {
        t.validate();
        if (!seen.insert(t.id).second) {
            throw ConfigError("eval_logic: duplicate task id '" + t.id + "'");
        }
    }

    LogicReport rep;
    rep.n_tasks = tasks.size();
    for (const auto& t : tasks) {
        TaskScore s;
        s.id = t.id;
        s.category = t.category;
        s.provenance = t.provenance;
        const std::string sp = t.scored_prompt();
        if (sp.size() > provider.max_prompt_bytes()) {
            s.skipped = true;
            rep.tasks.push_back(std::move(s));
            continue;
        }
        auto logits = provider.logits(sp);
        if (logits.size() != provider.vocab()) {
            throw ShapeError("eval_logic: provider returned " + std::to_string(logits.size()) +
                             " scores, vocab is " + std::to_string(provider.vocab()));
        }
        for (double v : logits) {
            if (!std::isfinite(v)) {
                throw NumericError("eval_logic: non-finite score on task '" + t.id + "'");
            }
        }
        const size_t byte = t.scored_byte();
        if (byte >= logits.size()) {
            throw ConfigError("eval_logic: task '" + t.id + "' scores byte " +
                              std::to_string(byte) + " outside vocab");
        }
        s.rank = logit_rank(logits, byte);
        s.top1 = s.rank == 1;
        s.top5 = s.rank <= 5;
        s.loss = logit_cross_entropy(logits, byte);
        s.top_ids = top_k_ids(logits, 5);
        rep.tasks.push_back(std::move(s));
    }

    for (const auto& cat : logic_categories()) {
        CategoryScore c;
        c.category = cat;
        double loss_sum = 0.0;
        size_t hits1 = 0, hits5 = 0;
        for (const auto& s : rep.tasks) {
            if (s.category != cat) continue;
            ++c.n;
            if (s.skipped) continue;
            ++c.scored;
            hits1 += s.top1;
            hits5 += s.top5;
            loss_sum += s.loss;
        }
        if (c.n == 0) continue;
        if (c.scored > 0) {
            c.top1 = double(hits1) / double(c.scored);
            c.top5 = double(hits5) / double(c.scored);
            c.mean_loss = loss_sum / double(c.scored);
        }
        rep.categories.push_back(std::move(c));
    }

    double loss_sum = 0.0;
    size_t hits1 = 0, hits5 = 0;
    for (const auto& s : rep.tasks) {
        if (s.skipped) {
            ++rep.n_skipped;
            continue;
        }
        ++rep.n_scored;
        hits1 += s.top1;
        hits5 += s.top5;
        loss_sum += s.loss;
    }
    if (rep.n_scored > 0) {
        rep.top1 = double(hits1) / double(rep.n_scored);
        rep.top5 = double(hits5) / double(rep.n_scored);
        rep.mean_loss = loss_sum / double(rep.n_scored);
    }
    return rep;
}

std::string LogicReport::to_tsv() const {
    std::string out = "id\tcategory\tprovenance\tstatus\trank\ttop1\ttop5\tloss\ttop_tokens\n";
    for (const auto& s : tasks) {
        out += s.id + "\t" + s.category + "\t" + s.provenance + "\t";
        if (s.skipped) {
            out += "skipped\t-\t-\t-\t-\t-\n";
            continue;
        }
        out += "scored\t" + std::to_string(s.rank) + "\t";
        out += std::string(s.top1 ? "1" : "0") + "\t" + (s.top5 ? "1" : "0") + "\t";
        out += fmt("%.6f", s.loss) + "\t" + join_token_names(s.top_ids) + "\n";
    }
    return out;
}

std::string LogicReport::summary_tsv() const {
    std::string out = "category\tn\tscored\ttop1\ttop5\tmean_loss\n";
    auto row = [&](const std::string& name, size_t n, size_t scored, double t1, double t5,
                   double ml) {
        out += name + "\t" + std::to_string(n) + "\t" + std::to_string(scored) + "\t";
        out += fmt("%.4f", t1) + "\t" + fmt("%.4f", t5) + "\t" + fmt("%.6f", ml) + "\n";
    };
    for (const auto& c : categories) row(c.category, c.n, c.scored, c.top1, c.top5, c.mean_loss);
    row("overall", n_tasks, n_scored, top1, top5, mean_loss);
    return out;
}

ValLoss eval_valloss(const Model& m, std::span<const unsigned char> data, int64_t batch,
                     size_t n_batches, uint64_t seed) {
    if (batch < 1) throw ConfigError("eval_valloss: batch must be positive");
    if (n_batches < 1) throw ConfigError("eval_valloss: need at least one batch");
    const size_t block = static_cast<size_t>(m.cfg.block_size);
    if (data.size() < block + 1) {
        throw ConfigError("eval_valloss: held-out split of " + std::to_string(data.size()) +
                          " bytes is shorter than one window of " + std::to_string(block + 1));
    }
    const size_t n_starts = data.size() - block;  // starts in [0, data.size()-block-1]
    Rng rng(seed, Stream::data_order);
    BiasDraw draw = inference_biases(m.cfg.bias, m.cfg.n_layers, m.cfg.n_heads, m.cfg.d_head());

    const int64_t T = static_cast<int64_t>(block);
    std::vector<int32_t> ids(static_cast<size_t>(batch) * block);
    std::vector<int32_t> targets(static_cast<size_t>(batch) * block);
    ValLoss out;
    double loss_sum = 0.0;
    for (size_t b = 0; b < n_batches; ++b) {
        for (int64_t row = 0; row < batch; ++row) {
            const size_t start = rng.integer(n_starts);
            for (size_t i = 0; i < block; ++i) {
                ids[static_cast<size_t>(row) * block + i] = data[start + i];
                targets[static_cast<size_t>(row) * block + i] = data[start + i + 1];
            }
        }
        auto loss = forward_loss(nullptr, m, ids, targets, batch, T, draw);
        loss_sum += loss->value[0];
    }
    out.batches = n_batches;
    out.tokens = n_batches * static_cast<size_t>(batch) * block;
    out.loss = loss_sum / double(n_batches);
    return out;
}

}  // namespace sblab
