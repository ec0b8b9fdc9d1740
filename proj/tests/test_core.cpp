#include <doctest.h>

#include "chbr/core.hpp"
#include "chbr/error.hpp"
#include "chbr/util.hpp"
#include "support.hpp"

using namespace chbr;

namespace {

std::size_t occurrences(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + needle.size())) ++n;
    return n;
}

}  // namespace

TEST_CASE("render_prompt base pattern") {
    PromptTemplate t;
    CHECK(render_prompt(t, {"dog", "dog"}) == "A photo of a dog.");
}

TEST_CASE("render_prompt with a concept keeps the phrase verbatim") {
    PromptTemplate t;
    Concept c{"A sleek two door design prominent quad exhaust outlets", "audi", 0};
    CHECK(render_prompt(t, {"audi", "2012 Audi S5 Coupe"}, c) ==
          "A photo of a 2012 Audi S5 Coupe with A sleek two door design prominent quad exhaust outlets.");
}

TEST_CASE("identity template") {
    PromptTemplate t;
    t.base_pattern = "{class}";
    CHECK(render_prompt(t, {"x", "x"}) == "x");
}

TEST_CASE("empty concept text renders the base prompt") {
    PromptTemplate t;
    Concept c{"", "dog", 0};
    CHECK(render_prompt(t, {"dog", "dog"}, c) == "A photo of a dog.");
}

TEST_CASE("malformed templates name the missing placeholder") {
    PromptTemplate t;
    t.base_pattern = "A photo.";
    try {
        render_prompt(t, {"dog", "dog"});
        FAIL("expected a template error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::template_error);
        CHECK(std::string(e.what()).find("{class}") != std::string::npos);
    }

    PromptTemplate u;
    u.concept_pattern = "A photo of a {class}.";
    try {
        render_prompt(u, {"dog", "dog"}, Concept{"fur", "dog", 0});
        FAIL("expected a template error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::template_error);
        CHECK(std::string(e.what()).find("{concept}") != std::string::npos);
    }

    PromptTemplate twice;
    twice.base_pattern = "{class} and {class}";
    CHECK_THROWS_AS(validate(twice), Error);
}

TEST_CASE("placeholder-looking text inside values is not substituted") {
    PromptTemplate t;
    Concept c{"a {class} sticker", "dog", 0};
    const auto s = render_prompt(t, {"dog", "{concept} dog"}, c);
    CHECK(s == "A photo of a {concept} dog with a {class} sticker.");
}

TEST_CASE("render_prompt is pure and inserts name and concept exactly once") {
    PromptTemplate t;
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const ClassLabel label{"id" + std::to_string(trial), "Cls\xC3\xA9 " + std::to_string(rng() % 1000)};
        const Concept c{"concept " + std::to_string(rng() % 100000) + " stripes", label.id, 0};
        const auto a = render_prompt(t, label, c);
        const auto b = render_prompt(t, label, c);
        CHECK(a == b);
        CHECK(occurrences(a, label.display_name) == 1);
        CHECK(occurrences(a, c.text) == 1);
        CHECK(a.find("{") == std::string::npos);
    }
}

TEST_CASE("validators") {
    CHECK_THROWS_AS(validate(ClassLabel{"", "x"}), Error);
    CHECK_THROWS_AS(validate(ClassLabel{"a", "   "}), Error);
    CHECK_THROWS_AS(validate(Concept{" padded", "a", 0}), Error);
    CHECK_THROWS_AS(validate(Concept{"two\nlines", "a", 0}), Error);
    CHECK_THROWS_AS(validate_class_set({{"a", "A"}, {"a", "B"}}), Error);

    WeightedConcept wc;
    wc.item = {"x", "a", 0};
    wc.success_rate = 1.5;
    CHECK_THROWS_AS(validate(wc), Error);
}

TEST_CASE("concept bank JSON is deterministic and round-trips") {
    std::mt19937_64 rng(3);
    auto bank = testing::random_bank(rng, {3, 1, 2});
    std::swap(bank.concepts[0][0], bank.concepts[0][2]);  // out of order in memory
    bank.sampler_meta = {{"z", 1}, {"a", 2}};
    const auto text = dump_concept_bank(bank);
    const auto again = dump_concept_bank(concept_bank_from_json(nlohmann::json::parse(text)));
    CHECK(text == again);
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("concepts").at("c0").at(0).at("sample_index") == 0);
    CHECK(j.at("concepts").is_object());
    // keys sorted
    CHECK(text.find("\"classes\"") < text.find("\"concepts\""));
    CHECK(text.find("\"concepts\"") < text.find("\"sampler_meta\""));
    CHECK(text.find("\"sampler_meta\"") < text.find("\"task_name\""));
}

TEST_CASE("concept bank loader rejects inconsistent documents") {
    std::mt19937_64 rng(4);
    auto j = to_json(testing::random_bank(rng, {1, 1}));
    auto missing = j;
    missing["concepts"].erase("c1");
    CHECK_THROWS_AS(concept_bank_from_json(missing), Error);
    auto stray = j;
    stray["concepts"]["nope"] = nlohmann::json::array();
    CHECK_THROWS_AS(concept_bank_from_json(stray), Error);
    auto empty = j;
    empty["concepts"]["c1"] = nlohmann::json::array();
    CHECK_THROWS_AS(concept_bank_from_json(empty), Error);
}

TEST_CASE("class lists accept arrays, wrapped arrays and bare strings") {
    const auto a = class_labels_from_json(nlohmann::json::parse(R"([{"id":"a","display_name":"Abbey"},"b"])"));
    REQUIRE(a.size() == 2);
    CHECK(a[0].display_name == "Abbey");
    CHECK(a[1].display_name == "b");
    const auto b = class_labels_from_json(nlohmann::json::parse(R"({"classes":[{"id":"x"}]})"));
    CHECK(b[0].display_name == "x");
    try {
        class_labels_from_json(nlohmann::json::parse(R"({"x":1})"));
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::parse);
    }
}

TEST_CASE("error kinds map to exit codes") {
    CHECK(exit_code_for(ErrorKind::precondition) == 2);
    CHECK(exit_code_for(ErrorKind::template_error) == 2);
    CHECK(exit_code_for(ErrorKind::provider) == 3);
    CHECK(exit_code_for(ErrorKind::parse) == 4);
    CHECK(exit_code_for(ErrorKind::store_format) == 4);
}

TEST_CASE("content ids and seed streams") {
    // FNV-1a 64 reference values.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(content_id("a") == "af63dc4c8601ec8c");
    CHECK(derive_seed(1, "sampler", {0, 1}) == derive_seed(1, "sampler", {0, 1}));
    CHECK(derive_seed(1, "sampler", {0, 1}) != derive_seed(1, "sampler", {1, 0}));
    CHECK(derive_seed(1, "sampler") != derive_seed(1, "clustering"));

    std::mt19937_64 rng(5);
    std::vector<int> counts(3, 0);
    for (int k = 0; k < 3000; ++k) ++counts[uniform_index(rng, 3)];
    for (int c : counts) CHECK(c > 900);
    for (int k = 0; k < 100; ++k) {
        const double u = uniform_unit(rng);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
    std::vector<int> hit(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) CHECK(h == 1);
    try {
        parallel_for(50, 4, [](std::size_t i) {
            if (i == 7 || i == 30) throw Error(ErrorKind::lookup, "idx " + std::to_string(i));
        });
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(std::string(e.what()) == "idx 7");
    }
}
