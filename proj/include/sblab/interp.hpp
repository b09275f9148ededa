#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sblab/model.hpp"

namespace sblab {

// Cosine between one token's key projection and the mean query bias. Absent
// when the key projection has zero norm.
struct AlignmentScore {
    int32_t token = 0;
    std::optional<double> value;
};

struct AlignmentTable {
    int layer = 0;
    int head = 0;
    std::vector<AlignmentScore> scores;  // one entry per vocab id, ascending
    std::string to_tsv() const;          // token, printable name, score
};

// Mean query bias vector of one head: the trained vector in learnable mode,
// the protocol mean otherwise. Throws ConfigError when the mode carries no
// query bias (nothing to align against).
std::vector<double> query_bias_mean(const Model& m, int layer, int head);

// Core form over raw matrices: emb is (V, C) row major, w_k is (C, d_head),
// bias_mean has d_head entries. Scores every row of emb.
std::vector<AlignmentScore> alignment_scores(const std::vector<double>& emb, int64_t V,
                                             int64_t C, const std::vector<double>& w_k,
                                             int64_t d_head,
                                             const std::vector<double>& bias_mean);

// Model wrapper: probe input is the token embedding row, optionally plus the
// position-0 embedding. Deeper layers use the same probe (the residual-stream
// variant is out of scope).
AlignmentTable alignment_scores(const Model& m, int layer, int head,
                                bool include_pos0 = false);

struct TopBottom {
    std::vector<int32_t> top, bottom;
};

// Exact top-k and bottom-k by score, ties broken by token id ascending;
// absent scores are skipped. Throws ConfigError when fewer than 2k tokens
// carry scores.
TopBottom top_bottom_tokens(const std::vector<AlignmentScore>& scores, int k = 15);

// Token-matching rule: exact match against the word list, or every character
// of the token falling in one of the named classes
// (upper, lower, digit, punct, space, high_bit).
struct CategoryRule {
    std::vector<std::string> tokens;
    std::vector<std::string> char_classes;
};

struct CategoryLexicon {
    std::string version;
    std::vector<std::pair<std::string, CategoryRule>> categories;  // ordered

    static CategoryLexicon builtin();
    static CategoryLexicon from_json(const std::string& text);  // rejects unknown keys
    std::string to_json() const;

    bool member(const std::string& category, const std::string& token) const;
    const CategoryRule& rule(const std::string& category) const;
};

bool char_class_match(const std::string& cls, unsigned char c);

// Display name for a byte-level token: the character itself when printable,
// a \xNN escape otherwise.
std::string byte_token_name(int32_t id);

// Raw text of a byte-level token (the byte itself), for lexicon matching.
// Display escaping would defeat the character-class rules.
std::string byte_token_text(int32_t id);

struct CategoryEnrichment {
    std::string name;
    int64_t count_top = 0, count_bottom = 0;
    double f_top = 0.0, f_bottom = 0.0;  // add-one smoothed frequencies
    double log2_ratio = 0.0;
    bool low_support = false;  // category hit neither pool
};

struct EnrichmentReport {
    int64_t n_top = 0, n_bottom = 0;
    std::string smoothing = "add-one";
    std::vector<CategoryEnrichment> categories;
    std::string to_tsv() const;
    std::string summary_json() const;
};

// Per-category log2 frequency ratio between the two pools, with add-one
// smoothing on the counts so empty categories stay finite.
EnrichmentReport enrichment(const std::vector<int32_t>& top,
                            const std::vector<int32_t>& bottom, const CategoryLexicon& lex,
                            const std::function<std::string(int32_t)>& token_name);

struct NullThreshold {
    int d = 0;
    int64_t vocab = 0;
    int trials = 0;
    double mean = 0.0;  // expected max cosine over `vocab` isotropic draws
    double se = 0.0;    // standard error over trials
};

// Monte Carlo estimate of the chance-alignment ceiling: the expected maximum
// cosine between a fixed direction and `vocab` independent isotropic vectors
// in dimension d. At d=64, V=50304 this expectation is near 0.50; the widely
// quoted 0.58 figure is the extreme-value prediction below, not this mean.
NullThreshold null_threshold(int d, int64_t vocab, int trials, Rng& rng);

// Extreme-value-theory chance ceiling sqrt(2 ln V / d): the leading-order
// prediction for the maximum alignment under random orientation. Upper-bound
// flavored; sits above the Monte Carlo expectation at practical sizes.
double null_threshold_evt(int d, int64_t vocab);

}  // namespace sblab
