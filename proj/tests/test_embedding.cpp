#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "chbr/embedding.hpp"
#include "chbr/error.hpp"
#include "chbr/http.hpp"
#include "support.hpp"

using namespace chbr;
using nlohmann::json;

namespace {

StoreErrorCode load_error(const std::string& bytes) {
    try {
        deserialize_store(bytes);
    } catch (const StoreError& e) {
        CHECK(e.kind() == ErrorKind::store_format);
        return e.code();
    }
    FAIL("store loaded unexpectedly");
    return StoreErrorCode::io;
}

// Hand-assembled store bytes: preamble, header, then raw rows.
std::string raw_store(const json& header, const std::string& payload, std::uint8_t version = 1) {
    const auto h = header.dump();
    std::string out = "CHBR";
    out.push_back(static_cast<char>(version));
    const auto n = static_cast<std::uint32_t>(h.size());
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((n >> (8 * k)) & 0xff));
    return out + h + payload;
}

std::string le_floats(const std::vector<float>& v) {
    std::string out;
    for (float f : v) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
    }
    return out;
}

}  // namespace

TEST_CASE("normalize") {
    Eigen::VectorXf a(2);
    a << 3, 4;
    const auto na = normalize(a);
    CHECK(na(0) == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(na(1) == doctest::Approx(0.8).epsilon(1e-7));

    Eigen::VectorXf b(3);
    b << 1, 0, 0;
    CHECK(normalize(b) == b);

    Eigen::VectorXf c(2);
    c << 1, 1;
    const auto nc = normalize(c);
    CHECK(nc(0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));
    CHECK(std::abs(nc.cast<double>().norm() - 1.0) < 1e-6);

    try {
        normalize(Eigen::VectorXf::Zero(4).eval());
        FAIL("expected degenerate input");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::degenerate_input);
    }
}

TEST_CASE("cosine similarity") {
    std::mt19937_64 rng(1);
    const auto u = testing::random_unit(rng, 16);
    CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-6));

    Eigen::VectorXf x(2), y(2), d(2);
    x << 1, 0;
    y << 0, 1;
    d << 0.7071068f, 0.7071068f;
    CHECK(cosine_similarity(x, y) == 0.0);
    CHECK(cosine_similarity(d, x) == doctest::Approx(0.7071068).epsilon(1e-7));

    for (int k = 0; k < 100; ++k) {
        const auto a = testing::random_unit(rng, 33);
        const auto b = testing::random_unit(rng, 33);
        CHECK(cosine_similarity(a, b) == cosine_similarity(b, a));  // exact
    }

    try {
        cosine_similarity(x, Eigen::VectorXf::Ones(3).eval());
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::shape);
    }
}

TEST_CASE("store round trip is bit exact and keeps id order") {
    std::mt19937_64 rng(2);
    EmbeddingStore s(4, EmbeddingKind::image);
    s.add("zeta", testing::random_unit(rng, 4));
    s.add("alpha", testing::random_unit(rng, 4));
    testing::TempDir dir;
    save_store(s, dir.file("s.emb"));
    const auto back = load_store(dir.file("s.emb"));
    CHECK(back == s);
    CHECK(back.ids() == std::vector<std::string>{"zeta", "alpha"});
    CHECK(back.kind() == EmbeddingKind::image);
    CHECK(serialize_store(back) == serialize_store(s));

    for (int trial = 0; trial < 20; ++trial) {
        const auto dim = static_cast<std::size_t>(1 + rng() % 64);
        EmbeddingStore r(dim, trial % 2 ? EmbeddingKind::text : EmbeddingKind::image);
        for (std::size_t k = 0; k < 1 + rng() % 10; ++k)
            r.add("id" + std::to_string(k), testing::random_unit(rng, static_cast<Eigen::Index>(dim)));
        CHECK(deserialize_store(serialize_store(r)) == r);
    }
}

TEST_CASE("store layout") {
    EmbeddingStore s(2, EmbeddingKind::text);
    Eigen::VectorXf v(2);
    v << 0.6f, 0.8f;
    s.add_exact("a", v);
    const auto bytes = serialize_store(s);
    CHECK(bytes.substr(0, 4) == "CHBR");
    CHECK(static_cast<int>(bytes[4]) == 1);
    const std::uint32_t hl = static_cast<std::uint8_t>(bytes[5]) | (static_cast<std::uint8_t>(bytes[6]) << 8) |
                             (static_cast<std::uint8_t>(bytes[7]) << 16) |
                             (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[8])) << 24);
    const auto header = json::parse(bytes.substr(9, hl));
    CHECK(header.at("dim") == 2);
    CHECK(header.at("kind") == "text");
    CHECK(header.at("ids") == json::array({"a"}));
    CHECK(bytes.substr(9 + hl) == le_floats({0.6f, 0.8f}));
}

TEST_CASE("store load errors are distinct") {
    const std::string one_row = le_floats({1.0f, 0.0f});
    CHECK(load_error("XXXX") == StoreErrorCode::bad_magic);
    CHECK(load_error(raw_store({{"dim", 2}, {"kind", "text"}, {"ids", {"a"}}}, one_row, 2)) ==
          StoreErrorCode::version_mismatch);
    // 512-dim row needs 2048 bytes
    CHECK(load_error(raw_store({{"dim", 512}, {"kind", "image"}, {"ids", {"a"}}}, std::string(2044, '\0'))) ==
          StoreErrorCode::truncated_payload);
    CHECK(load_error(raw_store({{"dim", 2}, {"kind", "text"}, {"ids", {"a"}}}, one_row + "x")) ==
          StoreErrorCode::trailing_data);
    CHECK(load_error(raw_store({{"dim", 2}, {"kind", "text"}, {"ids", {"img_001", "img_001"}}}, one_row + one_row)) ==
          StoreErrorCode::duplicate_id);
    CHECK(load_error(raw_store({{"dim", 2}, {"kind", "text"}, {"ids", {"a"}}}, le_floats({1.0f, 1.0f}))) ==
          StoreErrorCode::not_unit_norm);
    CHECK(load_error(raw_store({{"dim", 2}, {"kind", "audio"}, {"ids", {"a"}}}, one_row)) ==
          StoreErrorCode::bad_header);
    CHECK(load_error(std::string("CHBR\x01\xff\x00\x00\x00{", 10)) == StoreErrorCode::truncated_payload);

    try {
        load_store("/nonexistent/dir/x.emb");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::precondition);  // missing file, not a format problem
    }
}

TEST_CASE("store lookups") {
    EmbeddingStore s(2, EmbeddingKind::text);
    Eigen::VectorXf v(2);
    v << 3, 4;
    s.add("a", v);
    CHECK(s.contains("a"));
    CHECK_FALSE(s.find("b").has_value());
    try {
        s.at("missing-id");
        FAIL("expected lookup error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::lookup);
        CHECK(std::string(e.what()).find("missing-id") != std::string::npos);
    }
    CHECK_THROWS_AS(s.add("a", v), StoreError);
    CHECK_THROWS_AS(s.add("c", Eigen::VectorXf::Ones(3).eval()), Error);
    CHECK(view_id("img", 3) == "img#view3");
}

TEST_CASE("remote embedding: shapes, order and normalization") {
    testing::FakeServer server("/embed", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json vectors = json::array();
        for (const auto& p : body.at("payloads")) {
            const auto s = p.get<std::string>();
            vectors.push_back({static_cast<double>(s.size()), 1.0, 0.0});
        }
        res.set_content(json{{"dim", 3}, {"vectors", vectors}}.dump(), "application/json");
    });
    RemoteEmbedConfig rc;
    rc.base_url = server.url();
    rc.batch_size = 2;
    rc.api_key = "k";
    RemoteEmbedder client(rc);
    const auto out = client.embed(EmbeddingKind::text, {"a", "bbb", "cc"});
    REQUIRE(out.size() == 3);
    for (const auto& v : out) {
        CHECK(v.size() == 3);
        CHECK(std::abs(v.cast<double>().norm() - 1.0) < 1e-6);
    }
    CHECK(out[1](0) > out[2](0));  // request order kept across batches
    CHECK(out[2](0) > out[0](0));
    CHECK(client.diagnostics().requests == 2);

    CHECK_THROWS_AS(client.embed(EmbeddingKind::text, {}), Error);
    try {
        client.embed(EmbeddingKind::text, {"a"}, 512);
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::shape);
    }
}

TEST_CASE("remote embedding retries transient failures") {
    std::atomic<int> calls{0};
    testing::FakeServer server("/embed", [&](const httplib::Request&, httplib::Response& res) {
        if (calls++ < 2) {
            res.status = 500;
            res.set_content("boom", "text/plain");
            return;
        }
        res.set_content(R"({"dim":2,"vectors":[[1,0]]})", "application/json");
    });
    RemoteEmbedConfig rc;
    rc.base_url = server.url();
    rc.retry.base_delay_ms = 1;
    rc.retry.max_delay_ms = 2;
    RemoteEmbedder client(rc);
    const auto out = client.embed(EmbeddingKind::image, {"payload"});
    CHECK(out.size() == 1);
    CHECK(client.diagnostics().retries == 2);
    CHECK(calls == 3);
}

TEST_CASE("remote embedding: non-retryable status is a provider error with the body") {
    std::atomic<int> calls{0};
    testing::FakeServer server("/embed", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 400;
        res.set_content("bad payload kind", "text/plain");
    });
    RemoteEmbedConfig rc;
    rc.base_url = server.url();
    rc.retry.base_delay_ms = 1;
    RemoteEmbedder client(rc);
    try {
        client.embed(EmbeddingKind::text, {"x"});
        FAIL("expected provider error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::provider);
        CHECK(std::string(e.what()).find("400") != std::string::npos);
        CHECK(std::string(e.what()).find("bad payload kind") != std::string::npos);
    }
    CHECK(calls == 1);
}

TEST_CASE("retry policy gives up after max_retries") {
    RetryPolicy p;
    p.max_retries = 2;
    p.base_delay_ms = 1;
    p.max_delay_ms = 1;
    int attempts = 0;
    std::size_t retries = 0;
    try {
        with_retries(p, [&]() -> json {
            ++attempts;
            throw TransientError(503, "unavailable");
        }, &retries);
        FAIL("expected provider error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::provider);
    }
    CHECK(attempts == 3);
    CHECK(retries == 2);

    RetryPolicy q;
    q.base_delay_ms = 100;
    q.max_delay_ms = 300;
    CHECK(q.delay_ms(0) == 100);
    CHECK(q.delay_ms(1) == 200);
    CHECK(q.delay_ms(5) == 300);
}

TEST_CASE("transport failure is transient and finally a provider error") {
    RemoteEmbedConfig rc;
    rc.base_url = "http://127.0.0.1:1";
    rc.retry.max_retries = 1;
    rc.retry.base_delay_ms = 1;
    rc.timeout_seconds = 1;
    RemoteEmbedder client(rc);
    try {
        client.embed(EmbeddingKind::text, {"x"});
        FAIL("expected provider error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::provider);
    }
}

TEST_CASE("base64") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
}
