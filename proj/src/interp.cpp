#include "sblab/interp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sblab {

namespace {

const char* kDefaultLexicon = R"({
  "version": "1",
  "categories": {
    "sentence_starters": {
      "tokens": ["The", "A", "In", "It", "He", "She", "We", "They", "But", "And",
                 "Considering", "Given", "Born", "This", "There"],
      "char_classes": ["upper"]
    },
    "interrogatives": {
      "tokens": ["what", "who", "why", "how", "when", "where", "which", "whom",
                 "What", "Who", "Why", "How", "When", "Where", "Which", "?"]
    },
    "punctuation": {
      "char_classes": ["punct"]
    },
    "function_words": {
      "tokens": ["the", "of", "and", "a", "to", "in", "is", "it", "for", "on",
                 "with", "as", "at", "by", "be", "this", "that", "or", "an"]
    },
    "unicode_noise": {
      "char_classes": ["high_bit"]
    }
  }
})";

const std::set<std::string>& allowed_classes() {
    static const std::set<std::string> k = {"upper", "lower", "digit",
                                            "punct", "space", "high_bit"};
    return k;
}

double dot_n(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

std::vector<double> query_bias_mean(const Model& m, int layer, int head) {
    if (layer < 0 || layer >= m.cfg.n_layers || head < 0 || head >= m.cfg.n_heads) {
        throw ConfigError("query_bias_mean: layer/head out of range");
    }
    if (m.cfg.bias.mode == BiasMode::symmetric) {
        throw ConfigError("symmetric mode carries no query bias to align against");
    }
    int dk = m.cfg.d_head();
    if (m.cfg.bias.learnable) {
        const auto& t = m.layers[static_cast<size_t>(layer)].learn_b_q[static_cast<size_t>(head)];
        return t->value;
    }
    // protocol draws share one mean across components; the ramp shapes only
    // the spread
    return std::vector<double>(static_cast<size_t>(dk), m.cfg.bias.mu_q);
}

std::vector<AlignmentScore> alignment_scores(const std::vector<double>& emb, int64_t V,
                                             int64_t C, const std::vector<double>& w_k,
                                             int64_t d_head,
                                             const std::vector<double>& bias_mean) {
    if (emb.size() != static_cast<size_t>(V * C)) throw ShapeError("emb size mismatch");
    if (w_k.size() != static_cast<size_t>(C * d_head)) throw ShapeError("w_k size mismatch");
    if (bias_mean.size() != static_cast<size_t>(d_head)) {
        throw ShapeError("bias mean must have d_head entries");
    }
    double nb = std::sqrt(dot_n(bias_mean.data(), bias_mean.data(), d_head));
    if (nb == 0.0) throw ConfigError("bias mean is zero; alignment is undefined");

    std::vector<AlignmentScore> out(static_cast<size_t>(V));
    std::vector<double> k(static_cast<size_t>(d_head));
    for (int64_t v = 0; v < V; ++v) {
        const double* x = emb.data() + v * C;
        for (int64_t j = 0; j < d_head; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < C; ++i) s += x[i] * w_k[i * d_head + j];
            k[static_cast<size_t>(j)] = s;
        }
        double nk = std::sqrt(dot_n(k.data(), k.data(), d_head));
        auto& sc = out[static_cast<size_t>(v)];
        sc.token = static_cast<int32_t>(v);
        if (nk > 0.0) sc.value = dot_n(k.data(), bias_mean.data(), d_head) / (nk * nb);
    }
    return out;
}

AlignmentTable alignment_scores(const Model& m, int layer, int head, bool include_pos0) {
    auto bias = query_bias_mean(m, layer, head);  // also range-checks layer/head
    int64_t V = m.cfg.vocab_size;
    int64_t C = m.cfg.d_model;
    std::vector<double> emb = m.tok_emb->value;
    if (include_pos0) {
        for (int64_t v = 0; v < V; ++v) {
            for (int64_t c = 0; c < C; ++c) emb[v * C + c] += m.pos_emb->value[c];
        }
    }
    const auto& wk = m.layers[static_cast<size_t>(layer)].heads[static_cast<size_t>(head)].w_k;
    AlignmentTable t;
    t.layer = layer;
    t.head = head;
    t.scores = alignment_scores(emb, V, C, wk->value, m.cfg.d_head(), bias);
    return t;
}

std::string AlignmentTable::to_tsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "token\tname\tscore\n";
    for (const auto& s : scores) {
        os << s.token << '\t' << byte_token_name(s.token) << '\t';
        if (s.value) {
            os << *s.value;
        } else {
            os << "absent";
        }
        os << '\n';
    }
    return os.str();
}

TopBottom top_bottom_tokens(const std::vector<AlignmentScore>& scores, int k) {
    if (k <= 0) throw ConfigError("top_bottom_tokens: k must be positive");
    std::vector<std::pair<double, int32_t>> present;
    present.reserve(scores.size());
    for (const auto& s : scores) {
        if (s.value) present.emplace_back(*s.value, s.token);
    }
    if (present.size() < 2 * static_cast<size_t>(k)) {
        throw ConfigError("top_bottom_tokens: need at least 2k scored tokens, have " +
                          std::to_string(present.size()));
    }
    TopBottom tb;
    std::sort(present.begin(), present.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < k; ++i) tb.top.push_back(present[static_cast<size_t>(i)].second);
    std::sort(present.begin(), present.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < k; ++i) tb.bottom.push_back(present[static_cast<size_t>(i)].second);
    return tb;
}

bool char_class_match(const std::string& cls, unsigned char c) {
    if (cls == "upper") return c >= 'A' && c <= 'Z';
    if (cls == "lower") return c >= 'a' && c <= 'z';
    if (cls == "digit") return c >= '0' && c <= '9';
    if (cls == "punct") {
        return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
               (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
    }
    if (cls == "space") {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    }
    if (cls == "high_bit") return c >= 0x80;
    throw ConfigError("unknown character class '" + cls + "'");
}

CategoryLexicon CategoryLexicon::builtin() { return from_json(kDefaultLexicon); }

CategoryLexicon CategoryLexicon::from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("lexicon: bad JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("lexicon: top level must be an object");
    for (const auto& [key, _] : j.items()) {
        if (key != "version" && key != "categories") {
            throw ConfigError("lexicon: unknown key '" + key + "'");
        }
    }
    if (!j.contains("version") || !j["version"].is_string()) {
        throw ConfigError("lexicon: missing string 'version'");
    }
    if (!j.contains("categories") || !j["categories"].is_object() || j["categories"].empty()) {
        throw ConfigError("lexicon: missing nonempty object 'categories'");
    }
    CategoryLexicon lex;
    lex.version = j["version"].get<std::string>();
    for (const auto& [name, body] : j["categories"].items()) {
        if (!body.is_object()) throw ConfigError("lexicon: category '" + name + "' must be an object");
        CategoryRule rule;
        for (const auto& [key, val] : body.items()) {
            if (key == "tokens") {
                for (const auto& t : val) rule.tokens.push_back(t.get<std::string>());
            } else if (key == "char_classes") {
                for (const auto& c : val) {
                    std::string cls = c.get<std::string>();
                    if (!allowed_classes().count(cls)) {
                        throw ConfigError("lexicon: unknown character class '" + cls + "'");
                    }
                    rule.char_classes.push_back(cls);
                }
            } else {
                throw ConfigError("lexicon: unknown key '" + key + "' in category '" + name +
                                  "'");
            }
        }
        lex.categories.emplace_back(name, std::move(rule));
    }
    return lex;
}

std::string CategoryLexicon::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["categories"] = nlohmann::ordered_json::object();
    for (const auto& [name, rule] : categories) {
        nlohmann::ordered_json body = nlohmann::ordered_json::object();
        if (!rule.tokens.empty()) body["tokens"] = rule.tokens;
        if (!rule.char_classes.empty()) body["char_classes"] = rule.char_classes;
        j["categories"][name] = body;
    }
    return j.dump(2) + "\n";
}

const CategoryRule& CategoryLexicon::rule(const std::string& category) const {
    for (const auto& [name, r] : categories) {
        if (name == category) return r;
    }
    throw ConfigError("lexicon has no category '" + category + "'");
}

bool CategoryLexicon::member(const std::string& category, const std::string& token) const {
    const auto& r = rule(category);
    for (const auto& t : r.tokens) {
        if (t == token) return true;
    }
    if (token.empty() || r.char_classes.empty()) return false;
    for (unsigned char c : token) {
        bool any = false;
        for (const auto& cls : r.char_classes) {
            if (char_class_match(cls, c)) {
                any = true;
                break;
            }
        }
        if (!any) return false;
    }
    return true;
}

std::string byte_token_name(int32_t id) {
    if (id >= 0x20 && id <= 0x7E) return std::string(1, static_cast<char>(id));
    if (id >= 0 && id <= 0xFF) {
        char buf[8];
        std::snprintf(buf, sizeof(buf), "\\x%02X", id);
        return buf;
    }
    return "#" + std::to_string(id);
}

std::string byte_token_text(int32_t id) {
    if (id >= 0 && id <= 0xFF) return std::string(1, static_cast<char>(id));
    throw ConfigError("byte_token_text: id " + std::to_string(id) + " is not a byte");
}

EnrichmentReport enrichment(const std::vector<int32_t>& top,
                            const std::vector<int32_t>& bottom, const CategoryLexicon& lex,
                            const std::function<std::string(int32_t)>& token_name) {
    if (top.empty() || bottom.empty()) {
        throw ConfigError("enrichment needs nonempty top and bottom sets");
    }
    EnrichmentReport rep;
    rep.n_top = static_cast<int64_t>(top.size());
    rep.n_bottom = static_cast<int64_t>(bottom.size());
    for (const auto& [name, _] : lex.categories) {
        CategoryEnrichment ce;
        ce.name = name;
        for (int32_t t : top) ce.count_top += lex.member(name, token_name(t)) ? 1 : 0;
        for (int32_t t : bottom) ce.count_bottom += lex.member(name, token_name(t)) ? 1 : 0;
        ce.f_top = static_cast<double>(ce.count_top + 1) / static_cast<double>(rep.n_top + 1);
        ce.f_bottom =
            static_cast<double>(ce.count_bottom + 1) / static_cast<double>(rep.n_bottom + 1);
        ce.log2_ratio = std::log2(ce.f_top / ce.f_bottom);
        ce.low_support = ce.count_top == 0 && ce.count_bottom == 0;
        rep.categories.push_back(std::move(ce));
    }
    return rep;
}

std::string EnrichmentReport::to_tsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "category\tcount_top\tcount_bottom\tf_top\tf_bottom\tlog2_ratio\tlow_support\n";
    for (const auto& c : categories) {
        os << c.name << '\t' << c.count_top << '\t' << c.count_bottom << '\t' << c.f_top
           << '\t' << c.f_bottom << '\t' << c.log2_ratio << '\t'
           << (c.low_support ? "yes" : "no") << '\n';
    }
    return os.str();
}

std::string EnrichmentReport::summary_json() const {
    nlohmann::ordered_json j;
    j["n_top"] = n_top;
    j["n_bottom"] = n_bottom;
    j["smoothing"] = smoothing;
    j["categories"] = nlohmann::ordered_json::object();
    for (const auto& c : categories) {
        j["categories"][c.name] = {{"count_top", c.count_top},
                                   {"count_bottom", c.count_bottom},
                                   {"f_top", c.f_top},
                                   {"f_bottom", c.f_bottom},
                                   {"log2_ratio", c.log2_ratio},
                                   {"low_support", c.low_support}};
    }
    return j.dump(2) + "\n";
}

double null_threshold_evt(int d, int64_t vocab) {
    if (d < 2) throw ConfigError("null_threshold_evt: dimension must be at least 2");
    if (vocab < 1) throw ConfigError("null_threshold_evt: vocab must be at least 1");
    return std::sqrt(2.0 * std::log(static_cast<double>(vocab)) / static_cast<double>(d));
}

NullThreshold null_threshold(int d, int64_t vocab, int trials, Rng& rng) {
    if (d < 2) throw ConfigError("null_threshold: dimension must be at least 2");
    if (vocab < 1) throw ConfigError("null_threshold: vocab must be at least 1");
    if (trials < 2) throw ConfigError("null_threshold: need at least 2 trials");
    NullThreshold out;
    out.d = d;
    out.vocab = vocab;
    out.trials = trials;
    std::vector<double> g(static_cast<size_t>(d));
    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < trials; ++t) {
        double best = -1.0;
        for (int64_t v = 0; v < vocab; ++v) {
            rng.fill_normal(g);
            double nn = std::sqrt(dot_n(g.data(), g.data(), d));
            if (nn == 0.0) continue;
            best = std::max(best, g[0] / nn);
        }
        sum += best;
        sumsq += best * best;
    }
    double n = static_cast<double>(trials);
    out.mean = sum / n;
    double var = std::max(0.0, (sumsq - n * out.mean * out.mean) / (n - 1.0));
    out.se = std::sqrt(var / n);
    return out;
}

}  // namespace sblab
