#include <doctest.h>

#include <cstdlib>
#include <set>

#include "chbr/error.hpp"
#include "chbr/sampler.hpp"
#include "chbr/util.hpp"
#include "support.hpp"

using namespace chbr;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (auto p = s.find(sep); p != std::string::npos; p = s.find(sep, start)) {
        out.push_back(s.substr(start, p - start));
        start = p + 1;
    }
    out.push_back(s.substr(start));
    return out;
}

SamplerConfig small_config(std::size_t h, std::size_t m, std::size_t z, std::uint64_t seed = 1) {
    SamplerConfig c;
    c.window_size = h;
    c.samples_per_class = m;
    c.verifications = z;
    c.seed = seed;
    c.llm.base_url = "mock://";
    c.llm.backoff_base_ms = 1;
    c.llm.max_in_flight = 1;
    return c;
}

// Programmed verdict for trial z of cell (class i, sample j).
bool programmed_pass(std::size_t i, std::size_t j, std::size_t z) { return (i * 7 + j * 3 + z) % 3 != 0; }

// Answers generation with a tag-derived concept and the discriminative test
// with the target (pass) or an unmatched string (fail) per programmed_pass.
std::vector<std::string> scripted_reply(const ChatRequest& r) {
    const auto parts = split(r.tag, '/');
    if (parts.at(0) == "gen")
        return {"Some reasoning.\nThe final concept is: marks of " + parts.at(1) + " number " + parts.at(2) + "."};
    REQUIRE(parts.at(0) == "disc");
    const std::size_t i = std::stoul(parts.at(1).substr(1));
    const std::size_t j = std::stoul(parts.at(2));
    const std::size_t z = std::stoul(parts.at(3));
    return {programmed_pass(i, j, z) ? "Class " + std::to_string(i) : "no idea"};
}

EmbeddingStore class_store(const std::vector<ClassLabel>& classes, std::mt19937_64& rng, std::size_t dim = 8) {
    EmbeddingStore s(dim, EmbeddingKind::text);
    for (const auto& c : classes) s.add(c.display_name, testing::random_unit(rng, static_cast<Eigen::Index>(dim)));
    return s;
}

}  // namespace

TEST_CASE("candidate sets") {
    const auto classes = testing::make_classes(10);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto c = draw_candidate_set(classes, 3, 4, rng);
        REQUIRE(c.size() == 4);
        std::set<std::string> ids;
        for (const auto& x : c) ids.insert(x.id);
        CHECK(ids.size() == 4);
        CHECK_FALSE(ids.count("c3"));
    }
    const auto two = testing::make_classes(2);
    std::mt19937_64 r2(9);
    const auto forced = draw_candidate_set(two, 0, 1, r2);
    REQUIRE(forced.size() == 1);
    CHECK(forced[0].id == "c1");

    std::mt19937_64 a(42), b(42);
    for (int t = 0; t < 5; ++t) {
        const auto x = draw_candidate_set(classes, 0, 4, a);
        const auto y = draw_candidate_set(classes, 0, 4, b);
        for (std::size_t k = 0; k < 4; ++k) CHECK(x[k].id == y[k].id);
    }
    CHECK_THROWS_AS(draw_candidate_set(classes, 0, 10, a), Error);
}

TEST_CASE("every non-target class shows up in candidate draws") {
    const auto classes = testing::make_classes(6);
    std::mt19937_64 rng(3);
    std::vector<int> seen(6, 0);
    for (int t = 0; t < 2000; ++t)
        for (const auto& c : draw_candidate_set(classes, 2, 2, rng)) ++seen[std::stoul(c.id.substr(1))];
    CHECK(seen[2] == 0);
    for (std::size_t k = 0; k < 6; ++k)
        if (k != 2) CHECK(seen[k] > 650);  // 800 expected
}

TEST_CASE("parse_final_concept") {
    CHECK(parse_final_concept("The final concept is: a hammer-shaped head.") == "a hammer-shaped head");
    CHECK(parse_final_concept("noise\nThe final concept is: X") == "X");
    CHECK(parse_final_concept("THE FINAL CONCEPT IS: \"quad exhaust outlets\"") == "quad exhaust outlets");
    CHECK(parse_final_concept("Compared to the Audi TT...\nThe final concept is: A sleek coupe silhouette and "
                              "distinctive single-frame grille") ==
          "A sleek coupe silhouette and distinctive single-frame grille");
    CHECK(parse_final_concept("The final concept is: first\nmore\nthe final concept is: second") == "second");
    CHECK(parse_final_concept("**The final concept is:** striped tail\r\n") == "striped tail");
    CHECK(parse_final_concept("The final concept is:\n  tall mast") == "tall mast");
    try {
        parse_final_concept("I think stripes.\nDone.");
        FAIL("expected parse error");
    } catch (const ConceptParseError& e) {
        CHECK(e.kind() == ErrorKind::parse);
        CHECK(e.raw_reply() == "I think stripes.\nDone.");
    }
    CHECK_THROWS_AS(parse_final_concept("The final concept is:   "), ConceptParseError);
}

TEST_CASE("match_answer") {
    const std::vector<ClassLabel> sharks{{"gws", "great white shark"}, {"hh", "Hammerhead Shark"}, {"ab", "Abbey"}};
    CHECK(match_answer("Great White Shark", sharks)->id == "gws");
    CHECK(match_answer("The answer is: Abbey.", sharks)->id == "ab");
    CHECK_FALSE(match_answer("shark", sharks).has_value());
    CHECK_FALSE(match_answer("", sharks).has_value());
    CHECK_FALSE(match_answer("Abbeys", sharks).has_value());  // word boundaries
    const std::vector<ClassLabel> nested{{"a", "Cat"}, {"b", "Wild Cat"}};
    CHECK(match_answer("wild cat", nested)->id == "b");  // exact beats containment
    CHECK_FALSE(match_answer("a wild cat", nested).has_value());
    CHECK_THROWS_AS(match_answer("x", {}), Error);
}

TEST_CASE("importance weight is the success rate") {
    CHECK(importance_weight(0.6) == 0.6);
    CHECK(importance_weight(1.0) == 1.0);
    CHECK(importance_weight(0.0) == 0.0);
    CHECK_THROWS_AS(importance_weight(1.01), Error);
    CHECK_THROWS_AS(importance_weight(-0.1), Error);
}

TEST_CASE("parse_batch_verdicts") {
    const auto a = parse_batch_verdicts("```\npredicted_dict = {\"c1\": \"Abbey\"}\n```");
    CHECK(a == std::map<std::string, std::string>{{"c1", "Abbey"}});
    CHECK(parse_batch_verdicts("```{'a': 'B'}```") == std::map<std::string, std::string>{{"a", "B"}});
    CHECK(parse_batch_verdicts("Sure!\n```python\n{'x': 'Y', \"it's\": 'Z',}\n```\ntrailing") ==
          std::map<std::string, std::string>{{"x", "Y"}, {"it's", "Z"}});
    CHECK(parse_batch_verdicts("```{}```").empty());
    for (const char* bad : {"no backticks", "```{'a': 'B'}", "```{'a' 'B'}```", "```['a']```", "```{'a': 1}```",
                            "```{'a': {'b': 'c'}}```"}) {
        try {
            parse_batch_verdicts(bad);
            FAIL("expected parse error for " << bad);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::parse);
        }
    }
}

TEST_CASE("prompts carry the wire wording") {
    const auto classes = testing::make_classes(3);
    const auto gen = concept_generation_request(classes[0], {classes[1], classes[2]}, 1.0);
    REQUIRE(gen.messages.size() == 2);
    CHECK(gen.messages[0].content.rfind("You are a visual concept proposer", 0) == 0);
    CHECK(gen.messages[1].content ==
          "Core class: Class 0. Other classes: Class 1, Class 2.  Please remember to present the concept with \"The "
          "final concept is: \" as a prefix in the last line.");
    const auto disc = discriminative_request("red fins", {classes[2], classes[0]}, 0.0);
    CHECK(disc.messages[0].content ==
          "Please answer which class the concept belongs to. Just output the most possible class without external "
          "output.");
    CHECK(disc.messages[1].content == "Concept: red fins. Classes: Class 2, Class 0.");
    const auto batch = batch_verdict_request({"a", "b's"}, {classes[0], classes[1]}, 0.0);
    CHECK(batch.messages[1].content ==
          "image_object_concepts= ['a', 'b\\'s']. image_object_classes=: ['Class 0', 'Class 1'].");
}

TEST_CASE("generate_concept parses, re-asks once, then fails with the raw reply") {
    const auto classes = testing::make_classes(3);
    auto cfg = small_config(2, 1, 1);
    {
        ScriptedChatClient client(json{{"default_reply", "The final concept is: a hammer-shaped head"}});
        SamplerSession s(client, cfg);
        const auto c = generate_concept(s, classes[0], {classes[1], classes[2]}, 4, "gen/c0/4");
        CHECK(c.text == "a hammer-shaped head");
        CHECK(c.class_id == "c0");
        CHECK(c.sample_index == 4);
        CHECK(s.diagnostics().generation_queries == 1);
    }
    {
        ScriptedChatClient client(json{{"rules",
                                        {{{"tag", "gen/x/reask"}, {"reply", "The final concept is: spots"}},
                                         {{"tag", "gen/x"}, {"reply", "spots, I guess"}}}}});
        SamplerSession s(client, cfg);
        CHECK(generate_concept(s, classes[0], {classes[1]}, 0, "gen/x").text == "spots");
        CHECK(s.diagnostics().reasks == 1);
        const auto hist = client.history();
        REQUIRE(hist.size() == 2);
        REQUIRE(hist[1].messages.size() == 4);
        CHECK(hist[1].messages[2].role == "assistant");
        CHECK(hist[1].messages[2].content == "spots, I guess");
    }
    {
        ScriptedChatClient client(json{{"default_reply", "still nothing"}});
        SamplerSession s(client, cfg);
        try {
            generate_concept(s, classes[0], {classes[1]}, 0, "gen/y");
            FAIL("expected concept parse error");
        } catch (const ConceptParseError& e) {
            CHECK(e.raw_reply() == "still nothing");
        }
    }
    {
        ScriptedChatClient client(json{{"rules", {{{"tag", "gen/z"}, {"fail", {{"status", 503}, {"times", -1}}}}}}});
        cfg.llm.max_retries = 2;
        SamplerSession s(client, cfg);
        try {
            generate_concept(s, classes[0], {classes[1]}, 0, "gen/z");
            FAIL("expected provider error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::provider);
        }
        CHECK(client.calls() == 3);
    }
}

TEST_CASE("discriminative test counts programmed verdicts") {
    const auto classes = testing::make_classes(5);
    const auto cfg = small_config(2, 1, 5);
    const Concept cpt{"stripes", "c1", 0};
    auto run = [&](std::vector<bool> verdicts) {
        CallbackChatClient client([&](const ChatRequest& r) {
            const std::size_t z = std::stoul(split(r.tag, '/').back());
            return std::vector<std::string>{verdicts[z] ? "Class 1" : "Class 9"};
        });
        SamplerSession s(client, cfg);
        return discriminative_test(s, cpt, classes, 1, 2, 5, 77, "disc/c1/0");
    };
    const auto three = run({true, false, true, true, false});
    CHECK(three.success_rate == 0.6);
    CHECK(three.passes == 3);
    CHECK(three.trials == 5);
    for (const auto& t : three.details) {
        CHECK(t.option_class_ids.size() == 3);
        CHECK(t.distractor_class_ids.size() == 2);
        CHECK(std::count(t.option_class_ids.begin(), t.option_class_ids.end(), "c1") == 1);
    }
    CHECK(run({true, true, true, true, true}).success_rate == 1.0);
    CHECK(run({false, false, false, false, false}).success_rate == 0.0);
    // A distractor's name is a fail, not an error.
    CallbackChatClient other([&](const ChatRequest& r) {
        const auto& user = r.messages.back().content;
        const auto start = user.find("Classes: ") + 9;
        std::string first = user.substr(start, user.find(',', start) - start);
        return std::vector<std::string>{first == "Class 1" ? "Class 0" : first};
    });
    SamplerSession s(other, cfg);
    CHECK(discriminative_test(s, cpt, classes, 1, 2, 5, 77, "disc").success_rate == 0.0);
}

TEST_CASE("sample_concept_bank: K=3, M=2, Z=2 with exact programmed rates") {
    const auto classes = testing::make_classes(3);
    const auto cfg = small_config(2, 2, 2);
    CallbackChatClient client(scripted_reply);
    SamplerDiagnostics d;
    const auto bank = sample_concept_bank(classes, cfg, client, {std::nullopt, "toy"}, &d);
    REQUIRE(bank.concepts.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(bank.concepts[i].size() == 2);
        for (std::size_t j = 0; j < 2; ++j) {
            const auto& wc = bank.concepts[i][j];
            std::size_t passes = 0;
            for (std::size_t z = 0; z < 2; ++z) passes += programmed_pass(i, j, z);
            CHECK(wc.item.text == "marks of c" + std::to_string(i) + " number " + std::to_string(j));
            CHECK(wc.passes == passes);
            CHECK(wc.success_rate == static_cast<double>(passes) / 2.0);
            CHECK(wc.importance_weight == wc.success_rate);
        }
    }
    CHECK(d.generation_queries == 6);
    CHECK(d.verification_queries == 12);
    CHECK(bank.task_name == "toy");
    CHECK(bank.sampler_meta.at("config").at("samples_per_class") == 2);
}

TEST_CASE("sample_concept_bank: default settings issue M*Z*K discriminative queries") {
    const std::size_t K = 5;
    const auto classes = testing::make_classes(K);
    auto cfg = small_config(4, 100, 5);
    cfg.llm.max_in_flight = 8;
    CallbackChatClient client(scripted_reply);
    SamplerDiagnostics d;
    const auto bank = sample_concept_bank(classes, cfg, client, {}, &d);
    CHECK(d.verification_queries == 100 * 5 * K);
    CHECK(d.generation_queries == 100 * K);
    for (const auto& list : bank.concepts)
        for (const auto& wc : list) {
            CHECK(wc.importance_weight == static_cast<double>(wc.passes) / 5.0);
            CHECK(wc.success_rate * 5.0 == static_cast<double>(wc.passes));
        }
}

TEST_CASE("sample_concept_bank: minimal instance and config checks") {
    const auto classes = testing::make_classes(2);
    CallbackChatClient client(scripted_reply);
    const auto bank = sample_concept_bank(classes, small_config(1, 1, 1), client);
    CHECK(bank.concepts[0].size() == 1);
    CHECK(bank.concepts[1].size() == 1);
    CHECK_THROWS_AS(sample_concept_bank(classes, small_config(2, 1, 1), client), Error);
    CHECK_THROWS_AS(sample_concept_bank(classes, small_config(1, 0, 1), client), Error);
    CHECK_THROWS_AS(sample_concept_bank(classes, small_config(1, 1, 0), client), Error);
    CHECK_THROWS_AS(sample_concept_bank({classes[0]}, small_config(1, 1, 1), client), Error);
}

TEST_CASE("sampling is deterministic and independent of concurrency") {
    ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
    const auto classes = testing::make_classes(4);
    // The answer depends on the presented option order, so the distractor
    // draws themselves are pinned by the comparison.
    auto order_sensitive = [](const ChatRequest& r) -> std::vector<std::string> {
        if (r.tag.rfind("gen/", 0) == 0) return {"The final concept is: " + r.messages.back().content.substr(12, 20)};
        const auto& user = r.messages.back().content;
        const auto start = user.find("Classes: ") + 9;
        return {user.substr(start, user.find(',', start) - start)};
    };
    auto run = [&](std::size_t workers, std::uint64_t seed) {
        auto cfg = small_config(2, 6, 3, seed);
        cfg.llm.max_in_flight = workers;
        CallbackChatClient client(order_sensitive);
        return dump_concept_bank(sample_concept_bank(classes, cfg, client, {std::nullopt, "det"}));
    };
    const auto a = run(1, 5);
    CHECK(a == run(1, 5));
    // Worker count is recorded in the metadata; the concepts must not change.
    CHECK(json::parse(a).at("concepts") == json::parse(run(6, 5)).at("concepts"));
    CHECK(a != run(1, 6));
    CHECK(json::parse(a).at("sampler_meta").at("created_at") == "2023-11-14T22:13:20Z");
    ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST_CASE("interrupted sampling resumes without re-querying finished cells") {
    ::setenv("SOURCE_DATE_EPOCH", "0", 1);
    testing::TempDir dir;
    const auto classes = testing::make_classes(3);
    const auto cfg = small_config(2, 3, 2);

    CallbackChatClient clean(scripted_reply);
    const auto reference = dump_concept_bank(sample_concept_bank(classes, cfg, clean, {std::nullopt, "r"}));

    // First run dies on the generation call for cell (c2, 1).
    std::size_t first_calls = 0;
    CallbackChatClient dying([&](const ChatRequest& r) {
        ++first_calls;
        if (r.tag == "gen/c2/1") throw Error(ErrorKind::provider, "boom");
        return scripted_reply(r);
    });
    const auto ckpt = dir.file("ckpt.jsonl");
    CHECK_THROWS_AS(sample_concept_bank(classes, cfg, dying, {ckpt, "r"}), Error);
    const auto written = testing::slurp(ckpt);
    const auto done = static_cast<std::size_t>(std::count(written.begin(), written.end(), '\n')) - 1;
    CHECK(done == 8);  // nine cells, one failed, one worker
    CHECK(written.rfind("{\"meta\"", 0) == 0);

    // Torn tail from a crash mid-write is ignored.
    testing::spit(ckpt, written + "{\"class_id\":\"c2\",\"sampl");

    std::vector<std::string> tags;
    CallbackChatClient resume([&](const ChatRequest& r) {
        tags.push_back(r.tag);
        return scripted_reply(r);
    });
    SamplerDiagnostics d;
    const auto resumed = dump_concept_bank(sample_concept_bank(classes, cfg, resume, {ckpt, "r"}, &d));
    CHECK(resumed == reference);
    CHECK(d.resumed_cells == 8);
    CHECK(tags == std::vector<std::string>{"gen/c2/1", "disc/c2/1/0", "disc/c2/1/1"});

    // A checkpoint from another configuration is refused.
    auto other = cfg;
    other.seed = 99;
    CallbackChatClient unused(scripted_reply);
    try {
        sample_concept_bank(classes, other, unused, {ckpt, "r"});
        FAIL("expected precondition error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::precondition);
    }
    ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST_CASE("nearest class uses text embeddings; ties go to the earlier class") {
    const auto classes = testing::make_classes(4);
    EmbeddingStore s(3, EmbeddingKind::text);
    s.add("Class 0", Eigen::Vector3f(1, 0, 0));
    s.add("Class 1", Eigen::Vector3f(0, 1, 0));
    s.add("Class 2", Eigen::Vector3f(0.9f, 0.1f, 0));
    s.add("Class 3", Eigen::Vector3f(0.9f, 0.1f, 0));  // identical to Class 2
    CHECK(nearest_class(classes, s, 0) == 2);
    CHECK(nearest_class(classes, s, 2) == 3);
    CHECK(nearest_class(classes, s, 3) == 2);
    EmbeddingStore missing(3, EmbeddingKind::text);
    missing.add("Class 0", Eigen::Vector3f(1, 0, 0));
    CHECK_THROWS_AS(nearest_class(classes, missing, 0), Error);
}

TEST_CASE("efficient mode: verdict dict naming the target passes every concept") {
    const auto classes = testing::make_classes(3);
    std::mt19937_64 rng(2);
    const auto store = class_store(classes, rng);
    auto cfg = small_config(1, 10, 3);
    cfg.mode = SamplerMode::efficient;
    CallbackChatClient client([&](const ChatRequest& r) -> std::vector<std::string> {
        const auto parts = split(r.tag, '/');
        if (parts[0] == "gen") {
            std::vector<std::string> out;
            for (std::size_t k = 0; k < r.n; ++k)
                out.push_back("The final concept is: " + parts[1] + " trait " + std::to_string(k));
            return out;
        }
        const std::string target = "Class " + parts[1].substr(1);
        std::string dict = "```python\npredicted_dict = {";
        for (int k = 0; k < 10; ++k) dict += "'" + parts[1] + " trait " + std::to_string(k) + "': '" + target + "', ";
        return {dict + "}\n```"};
    });
    SamplerDiagnostics d;
    const auto bank = efficient_sample_concept_bank(classes, store, cfg, client, {}, &d);
    for (std::size_t i = 0; i < 3; ++i) {
        std::set<std::string> texts;
        for (const auto& wc : bank.concepts[i]) {
            CHECK(wc.success_rate == 1.0);
            CHECK(wc.importance_weight == 1.0);
            texts.insert(wc.item.text);
        }
        CHECK(texts.size() == 10);
    }
    CHECK(d.generation_queries == 3);
    CHECK(d.verification_queries == 9);
}

TEST_CASE("efficient mode: distractor is the nearest class, re-ask on bad verdicts") {
    const auto classes = testing::make_classes(3);
    EmbeddingStore s(2, EmbeddingKind::text);
    s.add("Class 0", Eigen::Vector2f(1, 0));
    s.add("Class 1", Eigen::Vector2f(0, 1));
    s.add("Class 2", Eigen::Vector2f(1, 0.2f));
    auto cfg = small_config(1, 2, 2);
    cfg.mode = SamplerMode::efficient;
    std::vector<ChatRequest> seen;
    int garbled = 0;
    CallbackChatClient client([&](const ChatRequest& r) -> std::vector<std::string> {
        seen.push_back(r);
        const auto parts = split(r.tag, '/');
        if (parts[0] == "gen") return {"The final concept is: A", "The final concept is: B"};
        if (parts[1] == "c1" && parts.back() != "reask" && garbled++ == 0) return {"I cannot format that."};
        // Concept A always goes to the target; B to the distractor (c0 <-> c2).
        const std::string target = "Class " + parts[1].substr(1);
        const std::string other = parts[1] == "c0" ? "Class 2" : "Class 0";
        return {"```{'A': '" + target + "', 'b': '" + other + "'}```"};
    });
    SamplerDiagnostics d;
    const auto bank = efficient_sample_concept_bank(classes, s, cfg, client, {}, &d);
    CHECK(bank.concepts[0][0].success_rate == 1.0);
    CHECK(bank.concepts[0][1].success_rate == 0.0);  // normalized key "b" matched "B"
    CHECK(d.reasks == 1);
    for (const auto& r : seen) {
        if (r.tag.rfind("gen/c0", 0) == 0) CHECK(r.messages[1].content.find("Other classes: Class 2.") != std::string::npos);
        if (r.tag.rfind("gen/c1", 0) == 0) CHECK(r.messages[1].content.find("Other classes: Class 2.") != std::string::npos);
        if (r.tag.rfind("gen/c2", 0) == 0) CHECK(r.messages[1].content.find("Other classes: Class 0.") != std::string::npos);
    }

    CallbackChatClient hopeless([&](const ChatRequest& r) -> std::vector<std::string> {
        if (r.tag.rfind("gen/", 0) == 0) return {"The final concept is: A", "The final concept is: B"};
        return {"nope"};
    });
    try {
        efficient_sample_concept_bank(classes, s, cfg, hopeless);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
    }
}

TEST_CASE("efficient mode query counts at K=100, M=100, Z=5") {
    const std::size_t K = 100, M = 100, Z = 5;
    const auto classes = testing::make_classes(K);
    std::mt19937_64 rng(8);
    const auto store = class_store(classes, rng, 16);
    auto cfg = small_config(4, M, Z);
    cfg.mode = SamplerMode::efficient;
    cfg.llm.max_in_flight = 8;
    CallbackChatClient client([&](const ChatRequest& r) -> std::vector<std::string> {
        if (r.tag.rfind("gen/", 0) == 0) {
            std::vector<std::string> out;
            for (std::size_t k = 0; k < r.n; ++k) out.push_back("The final concept is: t" + std::to_string(k));
            return out;
        }
        return {"```{}```"};
    });
    SamplerDiagnostics d;
    efficient_sample_concept_bank(classes, store, cfg, client, {}, &d);
    const std::size_t standard_verification = M * Z * K;
    const std::size_t standard_total = M * K + standard_verification;
    // Ten concepts per generation call and ten per verdict query: each count
    // shrinks tenfold against the standard loop.
    CHECK(d.generation_queries == M * K / 10);
    CHECK(d.verification_queries == standard_verification / 10);
    CHECK(standard_total == 10 * d.total_queries());
}

TEST_CASE("sampler config JSON") {
    auto c = small_config(3, 7, 2, 11);
    c.mode = SamplerMode::efficient;
    const auto back = sampler_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(sampler_config_from_json(json{{"mode", "turbo"}}), Error);
}
