#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "sonalign/rng.hpp"
#include "sonalign/teacher.hpp"

using namespace sonalign;
namespace fs = std::filesystem;

TEST_CASE("hash embedding is deterministic and unit norm") {
    auto a = hash_embed("Wheezes present over the trachea.", 2048, 0);
    auto b = hash_embed("Wheezes present over the trachea.", 2048, 0);
    CHECK(a.vector == b.vector);
    double n = 0.0;
    for (double x : a.vector) n += x * x;
    CHECK_THAT(std::sqrt(n), Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(cosine(a.vector, b.vector), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("hash embedding rejects empty text") {
    CHECK_THROWS_AS(hash_embed("", 2048, 0), Error);
    CHECK_THROWS_AS(hash_embed("  \t\n ...", 2048, 0), Error);
}

TEST_CASE("disjoint token sets stay nearly orthogonal at dim 2048") {
    // bound 0.15 fixed from a 1000-pair measurement (observed max 0.140)
    Rng rng(12345);
    double max_abs = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::string a, b;
        int na = 3 + static_cast<int>(rng.next_below(20));
        int nb = 3 + static_cast<int>(rng.next_below(20));
        for (int i = 0; i < na; ++i) a += "alpha" + std::to_string(rng.next_below(500)) + " ";
        for (int i = 0; i < nb; ++i) b += "beta" + std::to_string(rng.next_below(500)) + " ";
        auto ea = hash_embed(a, 2048, 0);
        auto eb = hash_embed(b, 2048, 0);
        max_abs = std::max(max_abs, std::abs(cosine(ea.vector, eb.vector)));
    }
    CHECK(max_abs < 0.15);
}

TEST_CASE("cosine is symmetric and bounded") {
    Rng rng(77);
    for (int rep = 0; rep < 50; ++rep) {
        std::string a = "tok" + std::to_string(rng.next_below(30)) + " tok" + std::to_string(rng.next_below(30));
        std::string b = "tok" + std::to_string(rng.next_below(30)) + " tok" + std::to_string(rng.next_below(30));
        auto ea = hash_embed(a, 256, 1);
        auto eb = hash_embed(b, 256, 1);
        double c1 = cosine(ea.vector, eb.vector);
        double c2 = cosine(eb.vector, ea.vector);
        CHECK(c1 == c2);
        CHECK(c1 >= -1.0 - 1e-12);
        CHECK(c1 <= 1.0 + 1e-12);
    }
}

TEST_CASE("embedding file round trip is bitwise stable") {
    auto dir = fs::temp_directory_path() / "sonalign_teacher_test";
    fs::create_directories(dir);
    auto path = (dir / "embs.acemb").string();

    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (int i = 0; i < 5; ++i) {
        auto e = hash_embed("report number " + std::to_string(i) + " wheezes", 64, 0);
        entries.emplace_back("clip" + std::to_string(i), e.vector);
    }
    save_embeddings(path, entries, 64);
    auto loaded = load_embeddings(path, 64);
    REQUIRE(loaded.entries.size() == 5);

    // re-save the loaded entries: files must be byte-identical
    auto path2 = (dir / "embs2.acemb").string();
    save_embeddings(path2, loaded.entries, 64);
    CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("duplicate ids and dim mismatches are rejected") {
    auto dir = fs::temp_directory_path() / "sonalign_teacher_test";
    fs::create_directories(dir);
    auto path = (dir / "dup.acemb").string();
    std::vector<std::pair<std::string, std::vector<double>>> entries = {
        {"same", hash_embed("aa bb", 32, 0).vector},
        {"same", hash_embed("cc dd", 32, 0).vector},
    };
    save_embeddings(path, entries, 32);
    CHECK_THROWS_MATCHES(load_embeddings(path), FormatError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("duplicate id")));

    auto path2 = (dir / "dims.acemb").string();
    save_embeddings(path2, {{"a", hash_embed("aa", 32, 0).vector}}, 32);
    CHECK_THROWS_AS(load_embeddings(path2, 2048), FormatError);
}

TEST_CASE("unnormalized stored vectors are renormalized on load and counted") {
    auto dir = fs::temp_directory_path() / "sonalign_teacher_test";
    fs::create_directories(dir);
    auto path = (dir / "unnorm.acemb").string();
    std::vector<double> big(16, 0.0);
    big[3] = 10.0;
    big[7] = -10.0;
    save_embeddings(path, {{"x", big}}, 16);
    auto loaded = load_embeddings(path, 16);
    CHECK(loaded.renormalized_count == 1);
    double n = 0.0;
    for (double v : loaded.entries[0].second) n += v * v;
    CHECK_THAT(std::sqrt(n), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

namespace {

// transport stub: counts calls, replies per a handler
struct StubTransport {
    int* calls;
    std::function<std::string(const std::string&)> handler;
    std::string operator()(const std::string& req) {
        ++*calls;
        return handler(req);
    }
};

std::string echo_embeddings(const std::string& req, size_t dim) {
    auto j = nlohmann::json::parse(req);
    nlohmann::json out;
    out["embeddings"] = nlohmann::json::array();
    for (const auto& t : j["texts"]) {
        auto e = hash_embed(t.get<std::string>(), dim, 9);
        out["embeddings"].push_back(e.vector);
    }
    return out.dump();
}

}  // namespace

TEST_CASE("remote teacher serves cached texts without transport calls") {
    auto dir = fs::temp_directory_path() / "sonalign_teacher_cache";
    fs::remove_all(dir);
    RemoteConfig cfg;
    cfg.dim = 32;
    cfg.backoff_ms = 0;
    cfg.cache_dir = dir.string();
    int calls = 0;
    RemoteTeacher client(cfg, StubTransport{&calls, [](const std::string& r) { return echo_embeddings(r, 32); }});

    auto first = client.fetch({"wheezes heard", "no crackles"});
    CHECK(calls == 1);
    auto second = client.fetch({"wheezes heard", "no crackles"});
    CHECK(calls == 1);  // both served from disk cache
    CHECK(first[0].vector == second[0].vector);
    CHECK(first[1].vector == second[1].vector);

    // a second client over the same cache dir also skips the network
    int calls2 = 0;
    RemoteTeacher client2(cfg, StubTransport{&calls2, [](const std::string& r) { return echo_embeddings(r, 32); }});
    auto third = client2.fetch({"no crackles"});
    CHECK(calls2 == 0);
    CHECK(third[0].vector == second[1].vector);
}

TEST_CASE("remote teacher rejects wrong response count") {
    RemoteConfig cfg;
    cfg.dim = 8;
    cfg.max_retries = 0;
    cfg.backoff_ms = 0;
    int calls = 0;
    RemoteTeacher client(cfg, StubTransport{&calls, [](const std::string&) {
                                                nlohmann::json out;
                                                out["embeddings"] = {std::vector<double>(8, 0.5)};
                                                return out.dump();
                                            }});
    CHECK_THROWS_MATCHES(client.fetch({"a", "b"}), RemoteError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("protocol error")));
}

TEST_CASE("remote teacher rejects wrong dimensions") {
    RemoteConfig cfg;
    cfg.dim = 2048;
    cfg.max_retries = 0;
    cfg.backoff_ms = 0;
    int calls = 0;
    RemoteTeacher client(cfg, StubTransport{&calls, [](const std::string& r) { return echo_embeddings(r, 1024); }});
    CHECK_THROWS_MATCHES(client.fetch({"a"}), RemoteError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("dimension error")));
}

TEST_CASE("remote teacher retries transport failures up to the configured limit") {
    RemoteConfig cfg;
    cfg.dim = 8;
    cfg.max_retries = 2;
    cfg.backoff_ms = 0;
    int calls = 0;
    RemoteTeacher client(cfg, StubTransport{&calls, [&calls](const std::string& r) -> std::string {
                                                if (calls < 3) throw RemoteError("connection refused");
                                                return echo_embeddings(r, 8);
                                            }});
    auto got = client.fetch({"hello world"});  // succeeds on the 3rd attempt
    CHECK(calls == 3);
    CHECK(got[0].vector.size() == 8);

    calls = 0;
    RemoteTeacher failing(cfg, StubTransport{&calls, [](const std::string&) -> std::string {
                                                 throw RemoteError("connection refused");
                                             }});
    CHECK_THROWS_AS(failing.fetch({"x"}), RemoteError);
    CHECK(calls == 3);  // 1 + 2 retries
}

TEST_CASE("file teacher answers by id and fails on unknown ids") {
    auto dir = fs::temp_directory_path() / "sonalign_teacher_test";
    fs::create_directories(dir);
    auto path = (dir / "byid.acemb").string();
    save_embeddings(path, {{"clip0", hash_embed("normal heart sounds", 64, 0).vector}}, 64);
    FileTeacher t(path, 64);
    CHECK(t.dim() == 64);
    auto e = t.embed("clip0", "ignored");
    CHECK(e.source == TeacherSource::File);
    CHECK_THROWS_AS(t.embed("nope", ""), Error);
}
