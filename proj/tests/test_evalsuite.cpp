#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "sblab/evalsuite.hpp"
#include "sblab/optim.hpp"

using namespace sblab;

namespace {

LogicTask make_task(const std::string& id, const std::string& cat, const std::string& prompt,
                    const std::string& expected, size_t offset = 1,
                    const std::string& prov = "constructed") {
    LogicTask t;
    t.id = id;
    t.category = cat;
    t.prompt = prompt;
    t.expected = expected;
    t.char_offset = offset;
    t.provenance = prov;
    return t;
}

std::vector<LogicTask> shipped_tasks() {
    return logic_tasks_from_json(
        read_text_file(std::string(SBLAB_SOURCE_DIR) + "/data/logic_tasks.json"));
}

const TaskScore& score_of(const LogicReport& rep, const std::string& id) {
    for (const auto& s : rep.tasks) {
        if (s.id == id) return s;
    }
    throw std::runtime_error("no task score " + id);
}

Model tiny_model(BiasMode mode, uint64_t seed, int block = 32) {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_model = 16;
    mc.block_size = block;
    mc.vocab_size = 256;
    mc.init_std = 0.05;
    mc.bias.mode = mode;
    Rng rng(seed, Stream::init);
    return Model::init(mc, rng);
}

std::vector<unsigned char> random_bytes(size_t n, uint64_t seed) {
    Rng rng(seed, Stream::misc);
    std::vector<unsigned char> out(n);
    for (auto& b : out) b = static_cast<unsigned char>(rng.integer(256));
    return out;
}

}  // namespace

TEST_CASE("category list is the six fixed names in order") {
    const auto& cats = logic_categories();
    REQUIRE(cats.size() == 6);
    CHECK(cats[0] == "pattern_numeric");
    CHECK(cats[1] == "pattern_alpha");
    CHECK(cats[2] == "retrieval_near");
    CHECK(cats[3] == "retrieval_far");
    CHECK(cats[4] == "simple_inference");
    CHECK(cats[5] == "copy");
}

TEST_CASE("scored prompt folds the expected prefix in, scored byte follows it") {
    auto t = make_task("a", "simple_inference", "The ground", " gets", 1);
    CHECK(t.scored_prompt() == "The ground ");
    CHECK(t.scored_byte() == static_cast<unsigned char>('g'));

    t.char_offset = 0;
    CHECK(t.scored_prompt() == "The ground");
    CHECK(t.scored_byte() == static_cast<unsigned char>(' '));
}

TEST_CASE("task validation rejects malformed records") {
    auto good = make_task("a", "copy", "x y", " x", 1);
    CHECK_NOTHROW(good.validate());

    auto t = good;
    t.id = "";
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = good;
    t.category = "pattern_fruit";
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = good;
    t.prompt = "";
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = good;
    t.expected = "";
    t.char_offset = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = good;
    t.char_offset = 2;  // expected is 2 bytes, nothing left to score
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = good;
    t.provenance = "folklore";
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("rank counts strictly greater scores plus ties at smaller ids") {
    std::vector<double> l = {1.0, 2.0, 1.0, 0.5};
    CHECK(logit_rank(l, 1) == 1);
    CHECK(logit_rank(l, 0) == 2);  // one above, no smaller-id tie
    CHECK(logit_rank(l, 2) == 3);  // one above, one smaller-id tie
    CHECK(logit_rank(l, 3) == 4);
    CHECK_THROWS_AS(logit_rank(l, 4), ConfigError);
}

TEST_CASE("cross entropy matches hand values and ignores logit shifts") {
    std::vector<double> flat = {0.3, 0.3, 0.3, 0.3};
    for (size_t i = 0; i < 4; ++i) {
        CHECK(logit_cross_entropy(flat, i) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    // softmax of {0, ln 3} puts mass 1/4 on the first token
    std::vector<double> two = {0.0, std::log(3.0)};
    CHECK(logit_cross_entropy(two, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    std::vector<double> shifted = {100.3, 100.3, 100.3, 100.3};
    CHECK(logit_cross_entropy(shifted, 2) ==
          doctest::Approx(logit_cross_entropy(flat, 2)).epsilon(1e-12));
    CHECK_THROWS_AS(logit_cross_entropy(flat, 9), ConfigError);
}

TEST_CASE("top-k ids sort by score then id and clamp to vocab") {
    std::vector<double> l = {1.0, 3.0, 1.0, 2.0};
    auto top = top_k_ids(l, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0] == 1);
    CHECK(top[1] == 3);
    CHECK(top[2] == 0);  // ties break toward the smaller id
    CHECK(top_k_ids(l, 99).size() == 4);
}

TEST_CASE("forced-rank provider plants the scored byte at the exact rank") {
    auto t = make_task("probe", "copy", "x y", " x", 1);
    for (size_t r : {size_t{1}, size_t{2}, size_t{5}, size_t{6}, size_t{8}, size_t{256}}) {
        ForcedRankProvider p({t});
        p.force_rank("probe", r);
        auto l = p.logits(t.scored_prompt());
        REQUIRE(l.size() == 256);
        CHECK(logit_rank(l, t.scored_byte()) == r);
    }
}

TEST_CASE("forced-rank provider rejects bad wiring") {
    auto t = make_task("probe", "copy", "x y", " x", 1);
    ForcedRankProvider p({t});
    CHECK_THROWS_AS(p.force_rank("ghost", 2), ConfigError);
    CHECK_THROWS_AS(p.force_rank("probe", 0), ConfigError);
    CHECK_THROWS_AS(p.force_rank("probe", 257), ConfigError);
    CHECK_THROWS_AS(p.logits("unseen prompt"), ConfigError);

    // two tasks may not share a scored prompt: the lookup would be ambiguous
    auto dup = make_task("other", "copy", "x y", " x", 1);
    CHECK_THROWS_AS(ForcedRankProvider({t, dup}), ConfigError);

    // byte outside a narrow vocab
    CHECK_THROWS_AS(ForcedRankProvider({t}, 64), ConfigError);
}

TEST_CASE("always-first provider scores every task perfectly") {
    auto tasks = shipped_tasks();
    ForcedRankProvider p(tasks);
    auto rep = eval_logic(p, tasks);
    CHECK(rep.n_tasks == 14);
    CHECK(rep.n_scored == 14);
    CHECK(rep.n_skipped == 0);
    CHECK(rep.top1 == 1.0);
    CHECK(rep.top5 == 1.0);
    std::map<std::string, unsigned char> byte_of;
    for (const auto& t : tasks) byte_of[t.id] = t.scored_byte();
    for (const auto& s : rep.tasks) {
        CHECK(s.rank == 1);
        CHECK(s.top1);
        CHECK(s.top5);
        CHECK(s.loss > 0.0);
        REQUIRE(s.top_ids.size() == 5);
        CHECK(s.top_ids[0] == size_t(byte_of[s.id]));
    }
    for (const auto& c : rep.categories) {
        CHECK(c.top1 == 1.0);
        CHECK(c.top5 == 1.0);
    }
}

TEST_CASE("rank 2 on the rain task is a top-5 hit but not top-1") {
    auto tasks = shipped_tasks();
    ForcedRankProvider p(tasks);
    p.force_rank("inference_rain", 2);
    auto rep = eval_logic(p, tasks);
    const auto& s = score_of(rep, "inference_rain");
    CHECK(s.rank == 2);
    CHECK_FALSE(s.top1);
    CHECK(s.top5);
    // the expected byte sits second in the display order
    REQUIRE(s.top_ids.size() == 5);
    CHECK(s.top_ids[1] == size_t('g'));
}

TEST_CASE("rank 8 on the wrap-around task misses both cutoffs") {
    auto tasks = shipped_tasks();
    ForcedRankProvider p(tasks);
    p.force_rank("alpha_wrap", 8);
    auto rep = eval_logic(p, tasks);
    const auto& s = score_of(rep, "alpha_wrap");
    CHECK(s.rank == 8);
    CHECK_FALSE(s.top1);
    CHECK_FALSE(s.top5);
    // deeper ranks cost more under the stub's fixed score ladder
    const auto& hit = score_of(rep, "numeric_count");
    CHECK(s.loss > hit.loss);
}

TEST_CASE("aggregates follow the per-task outcomes by hand") {
    std::vector<LogicTask> tasks = {
        make_task("n1", "pattern_numeric", "1 2", " 3", 1),
        make_task("n2", "pattern_numeric", "4 5", " 6", 1),
        make_task("c1", "copy", "x x", " x", 1),
    };
    ForcedRankProvider p(tasks);
    p.force_rank("n2", 6);  // top-5 miss
    p.force_rank("c1", 2);  // top-5 hit, top-1 miss
    auto rep = eval_logic(p, tasks);

    REQUIRE(rep.categories.size() == 2);
    CHECK(rep.categories[0].category == "pattern_numeric");
    CHECK(rep.categories[0].n == 2);
    CHECK(rep.categories[0].scored == 2);
    CHECK(rep.categories[0].top1 == 0.5);
    CHECK(rep.categories[0].top5 == 0.5);
    CHECK(rep.categories[1].category == "copy");
    CHECK(rep.categories[1].top1 == 0.0);
    CHECK(rep.categories[1].top5 == 1.0);

    CHECK(rep.top1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(rep.top5 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    double mean = (score_of(rep, "n1").loss + score_of(rep, "n2").loss +
                   score_of(rep, "c1").loss) /
                  3.0;
    CHECK(rep.mean_loss == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("top-1 implies top-5 at every forced rank") {
    auto t = make_task("probe", "copy", "x y", " x", 1);
    for (size_t r = 1; r <= 12; ++r) {
        ForcedRankProvider p({t});
        p.force_rank("probe", r);
        auto rep = eval_logic(p, {t});
        const auto& s = rep.tasks[0];
        if (s.top1) CHECK(s.top5);
        CHECK(s.rank >= 1);
        CHECK(rep.top1 <= rep.top5);
    }
}

TEST_CASE("eval_logic rejects empty and duplicate task lists") {
    auto t = make_task("a", "copy", "x y", " x", 1);
    ForcedRankProvider p({t});
    CHECK_THROWS_AS(eval_logic(p, {}), ConfigError);
    CHECK_THROWS_AS(eval_logic(p, {t, t}), ConfigError);
}

TEST_CASE("task file round trips through json") {
    auto tasks = shipped_tasks();
    auto again = logic_tasks_from_json(logic_tasks_to_json(tasks));
    REQUIRE(again.size() == tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
        CHECK(again[i].id == tasks[i].id);
        CHECK(again[i].category == tasks[i].category);
        CHECK(again[i].prompt == tasks[i].prompt);
        CHECK(again[i].expected == tasks[i].expected);
        CHECK(again[i].char_offset == tasks[i].char_offset);
        CHECK(again[i].provenance == tasks[i].provenance);
    }
}

TEST_CASE("task file parser rejects malformed input") {
    CHECK_THROWS_AS(logic_tasks_from_json("not json"), ConfigError);
    CHECK_THROWS_AS(logic_tasks_from_json("[]"), ConfigError);
    CHECK_THROWS_AS(logic_tasks_from_json(R"({"version":"1","tasks":[]})"), ConfigError);
    CHECK_THROWS_AS(logic_tasks_from_json(R"({"tasks":[{"id":"a"}]})"), ConfigError);
    // unknown top-level key
    CHECK_THROWS_AS(logic_tasks_from_json(
                        R"({"version":"1","author":"x","tasks":[]})"),
                    ConfigError);
    std::string rec = R"({"id":"a","category":"copy","prompt":"x y","expected":" x",)"
                      R"("char_offset":1,"provenance":"constructed"})";
    auto wrap = [](const std::string& body) {
        return R"({"version":"1","tasks":[)" + body + "]}";
    };
    CHECK_NOTHROW(logic_tasks_from_json(wrap(rec)));
    // unknown task key
    CHECK_THROWS_AS(logic_tasks_from_json(wrap(
                        R"({"id":"a","category":"copy","prompt":"x","expected":" x",)"
                        R"("provenance":"constructed","notes":"hm"})")),
                    ConfigError);
    // mistyped char_offset
    CHECK_THROWS_AS(logic_tasks_from_json(wrap(
                        R"({"id":"a","category":"copy","prompt":"x","expected":" x",)"
                        R"("char_offset":-1,"provenance":"constructed"})")),
                    ConfigError);
    // duplicate ids
    CHECK_THROWS_AS(logic_tasks_from_json(wrap(rec + "," + rec)), ConfigError);
    // missing expected
    CHECK_THROWS_AS(logic_tasks_from_json(wrap(
                        R"({"id":"a","category":"copy","prompt":"x","provenance":"paper"})")),
                    ConfigError);
}

TEST_CASE("shipped task file has the published shape") {
    auto tasks = shipped_tasks();
    REQUIRE(tasks.size() == 14);

    std::map<std::string, size_t> per_cat;
    size_t paper = 0;
    for (const auto& t : tasks) {
        t.validate();
        ++per_cat[t.category];
        paper += t.provenance == "paper";
        // every shipped prompt fits the default context window
        CHECK(t.scored_prompt().size() <= 128);
    }
    CHECK(paper == 5);
    CHECK(per_cat["pattern_numeric"] == 3);
    CHECK(per_cat["pattern_alpha"] == 2);
    CHECK(per_cat["retrieval_near"] == 2);
    CHECK(per_cat["retrieval_far"] == 2);
    CHECK(per_cat["simple_inference"] == 2);
    CHECK(per_cat["copy"] == 3);

    // the five published prompts, verbatim
    std::map<std::string, const LogicTask*> by_id;
    for (const auto& t : tasks) by_id[t.id] = &t;
    CHECK(by_id.at("numeric_count")->prompt == "1, 2, 3, 4,");
    CHECK(by_id.at("numeric_count")->expected == " 5");
    CHECK(by_id.at("alpha_wrap")->prompt == "X, Y, Z, A,");
    CHECK(by_id.at("alpha_wrap")->expected == " B");
    CHECK(by_id.at("inference_rain")->prompt ==
          "If it rains, the ground gets wet. It is raining. The ground");
    CHECK(by_id.at("inference_rain")->expected == " gets");
    CHECK(by_id.at("far_alice")->prompt ==
          "Alice likes apples. Bob likes bananas. Carol likes cherries. Dave likes dates. "
          "Alice likes");
    CHECK(by_id.at("far_alice")->expected == " apples");
    CHECK(by_id.at("near_color")->prompt ==
          "The color is blue. The shape is round. The color is");
    CHECK(by_id.at("near_color")->expected == " blue");
}

TEST_CASE("model provider returns deterministic position-sensitive logits") {
    auto m = tiny_model(BiasMode::symmetric, 404);
    ModelProvider p(m);
    CHECK(p.vocab() == 256);
    CHECK(p.max_prompt_bytes() == 32);

    auto a = p.logits("ab");
    auto b = p.logits("ab");
    REQUIRE(a.size() == 256);
    CHECK(a == b);

    auto swapped = p.logits("ba");
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - swapped[i]));
    CHECK(diff > 1e-8);

    CHECK_THROWS_AS(p.logits(""), ConfigError);
    CHECK_THROWS_AS(p.logits(std::string(33, 'x')), ConfigError);
}

TEST_CASE("over-length prompts are skipped, not truncated") {
    auto m = tiny_model(BiasMode::symmetric, 405, 16);
    ModelProvider p(m);
    std::vector<LogicTask> tasks = {
        make_task("short", "copy", "ab ab ab", " ab", 1),
        make_task("long", "retrieval_far", std::string(40, 'z'), " z", 1),
    };
    auto rep = eval_logic(p, tasks);
    CHECK(rep.n_tasks == 2);
    CHECK(rep.n_scored == 1);
    CHECK(rep.n_skipped == 1);
    const auto& s = score_of(rep, "long");
    CHECK(s.skipped);
    CHECK(s.rank == 0);
    CHECK_FALSE(s.top1);
    // the skipped task leaves the aggregates untouched
    REQUIRE(rep.categories.size() == 2);
    const auto& far = rep.categories[0];  // canonical order puts retrieval_far before copy
    CHECK(far.category == "retrieval_far");
    CHECK(far.n == 1);
    CHECK(far.scored == 0);
    CHECK(far.top5 == 0.0);

    // every task over-length: fractions stay defined
    std::vector<LogicTask> all_long = {
        make_task("l1", "copy", std::string(40, 'y'), " y", 1)};
    auto rep2 = eval_logic(p, all_long);
    CHECK(rep2.n_scored == 0);
    CHECK(rep2.top1 == 0.0);
    CHECK(rep2.mean_loss == 0.0);
}

TEST_CASE("inference scores use mean biases, sampled draws disagree") {
    auto m = tiny_model(BiasMode::bq_bv, 406);
    ModelProvider means(m);
    ModelProvider means_again(
        m, inference_biases(m.cfg.bias, m.cfg.n_layers, m.cfg.n_heads, m.cfg.d_head()));
    Rng rng(406, Stream::biases);
    ModelProvider sampled(
        m, sample_biases(m.cfg.bias, m.cfg.n_layers, m.cfg.n_heads, m.cfg.d_head(), rng));

    const std::string prompt = "The ground ";
    auto a = means.logits(prompt);
    auto b = means_again.logits(prompt);
    auto c = sampled.logits(prompt);
    CHECK(a == b);  // the default path IS the mean draw, bit for bit
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("report tables carry one row per task and per category") {
    auto m = tiny_model(BiasMode::symmetric, 405, 16);
    ModelProvider p(m);
    std::vector<LogicTask> tasks = {
        make_task("short", "copy", "ab ab ab", " ab", 1),
        make_task("long", "retrieval_far", std::string(40, 'z'), " z", 1),
    };
    auto rep = eval_logic(p, tasks);
    auto tsv = rep.to_tsv();
    size_t rows = std::count(tsv.begin(), tsv.end(), '\n');
    CHECK(rows == 3);  // header + 2 tasks
    CHECK(tsv.find("id\tcategory\tprovenance\tstatus\trank") == 0);
    CHECK(tsv.find("skipped\t-") != std::string::npos);

    auto sum = rep.summary_tsv();
    rows = std::count(sum.begin(), sum.end(), '\n');
    CHECK(rows == 4);  // header + copy + retrieval_far + overall
    CHECK(sum.find("overall\t2\t1\t") != std::string::npos);
}

TEST_CASE("untrained byte model scores near the uniform ceiling") {
    auto m = tiny_model(BiasMode::symmetric, 500);
    auto data = random_bytes(4096, 11);
    auto r = eval_valloss(m, data, 4, 6, 123);
    CHECK(r.batches == 6);
    CHECK(r.tokens == 6 * 4 * 32);
    CHECK(std::abs(r.loss - std::log(256.0)) < 0.1);
}

TEST_CASE("held-out loss is bit-identical under a fixed seed") {
    auto m = tiny_model(BiasMode::bq_bv, 501);
    auto data = random_bytes(2048, 12);
    auto a = eval_valloss(m, data, 2, 4, 77);
    auto b = eval_valloss(m, data, 2, 4, 77);
    CHECK(a.loss == b.loss);
    auto c = eval_valloss(m, data, 2, 4, 78);
    CHECK(a.loss != c.loss);
}

TEST_CASE("training on repetitive bytes beats the untrained score") {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.n_heads = 1;
    mc.d_model = 16;
    mc.block_size = 16;
    mc.vocab_size = 256;
    mc.init_std = 0.05;
    Rng init_rng(502, Stream::init);
    auto m = Model::init(mc, init_rng);

    std::vector<unsigned char> data(1024);
    const std::string cycle = "abc";
    for (size_t i = 0; i < data.size(); ++i) data[i] = cycle[i % cycle.size()];

    const double before = eval_valloss(m, data, 4, 4, 9).loss;

    FlatParams fp(m.params());
    Sgdm opt(SgdmConfig{.lr = 0.05, .momentum = 0.9, .weight_decay = 0.0, .nesterov = true});
    Rng order(502, Stream::data_order);
    BiasDraw draw = inference_biases(mc.bias, mc.n_layers, mc.n_heads, mc.d_head());
    const size_t block = 16;
    std::vector<int32_t> ids(block), targets(block);
    for (int step = 0; step < 60; ++step) {
        size_t start = order.integer(data.size() - block);
        for (size_t i = 0; i < block; ++i) {
            ids[i] = data[start + i];
            targets[i] = data[start + i + 1];
        }
        fp.zero_grads();
        Tape tape;
        auto loss = forward_loss(&tape, m, ids, targets, 1, block, draw);
        tape.backward(loss);
        opt.step(fp, loss->value[0], nullptr);
    }

    const double after = eval_valloss(m, data, 4, 4, 9).loss;
    CHECK(after < before - 0.5);
}

TEST_CASE("held-out loss rejects degenerate shapes") {
    auto m = tiny_model(BiasMode::symmetric, 503);
    auto data = random_bytes(2048, 13);
    CHECK_THROWS_AS(eval_valloss(m, data, 0, 4, 1), ConfigError);
    CHECK_THROWS_AS(eval_valloss(m, data, 4, 0, 1), ConfigError);
    auto tiny = random_bytes(32, 14);  // equal to block: one byte short of a window
    CHECK_THROWS_AS(eval_valloss(m, tiny, 1, 1, 1), ConfigError);
    auto exact = random_bytes(33, 15);  // exactly one window
    CHECK_NOTHROW(eval_valloss(m, exact, 1, 1, 1));
}
