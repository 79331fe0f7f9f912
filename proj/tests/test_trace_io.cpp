#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pavenet/rng.hpp"
#include "pavenet/trace_io.hpp"

using namespace pavenet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / "pavenet_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

RawTrace random_trace(uint64_t seed, int length) {
    SplitMix64 g(seed);
    RawTrace t;
    double time = 0.0;
    for (int i = 0; i < length; ++i) {
        time += g.uniform(0.0, 12.0);  // equal timestamps allowed
        t.samples.push_back({g.normal(0.0, 3.0), g.normal(0.0, 2.0), g.uniform(0.0, 1.5), time,
                             g.next_double() < 0.9});
    }
    t.samples[0].pen_down = true;
    return t;
}

}  // namespace

TEST_CASE("load_trace accepts the minimum two-sample file") {
    auto dir = temp_dir("trace_min");
    write_file(dir / "t.trc", "x y p t pen\n0 0 0.5 0 1\n1 1 0.6 10 1\n");
    RawTrace t = load_trace(dir / "t.trc");
    CHECK(t.length() == 2);
    CHECK(t.samples[0].t == 0.0);
    CHECK(t.samples[1].t == 10.0);
}

TEST_CASE("load_trace rejects decreasing timestamps") {
    auto dir = temp_dir("trace_mono");
    write_file(dir / "t.trc", "x y p t pen\n0 0 0.5 0 1\n1 1 0.6 10 1\n2 2 0.7 5 1\n");
    CHECK_THROWS_AS(load_trace(dir / "t.trc"), InvariantError);
}

TEST_CASE("load_trace rejects short and malformed files") {
    auto dir = temp_dir("trace_bad");
    write_file(dir / "one.trc", "x y p t pen\n0 0 0.5 0 1\n");
    CHECK_THROWS_AS(load_trace(dir / "one.trc"), InvariantError);
    write_file(dir / "garbled.trc", "x y p t pen\n0 0 zebra 0 1\n1 1 0.5 1 1\n");
    CHECK_THROWS_AS(load_trace(dir / "garbled.trc"), ParseError);
    write_file(dir / "header.trc", "a b c\n");
    CHECK_THROWS_AS(load_trace(dir / "header.trc"), ParseError);
    CHECK_THROWS_AS(load_trace(dir / "nope.trc"), MissingFileError);
    write_file(dir / "penup.trc", "x y p t pen\n0 0 0.5 0 0\n1 1 0.6 10 0\n");
    CHECK_THROWS_AS(load_trace(dir / "penup.trc"), InvariantError);
}

TEST_CASE("save/load round trip preserves every sample bit-for-bit") {
    auto dir = temp_dir("trace_roundtrip");
    for (uint64_t seed : {11u, 22u, 33u}) {
        RawTrace t = random_trace(seed, 40);
        save_trace(t, dir / "r.trc");
        RawTrace back = load_trace(dir / "r.trc");
        REQUIRE(back.length() == t.length());
        for (int i = 0; i < t.length(); ++i) {
            CHECK(back.samples[i].x == t.samples[i].x);
            CHECK(back.samples[i].y == t.samples[i].y);
            CHECK(back.samples[i].p == t.samples[i].p);
            CHECK(back.samples[i].t == t.samples[i].t);
            CHECK(back.samples[i].pen_down == t.samples[i].pen_down);
        }
    }
}

TEST_CASE("manifest loading counts entries and enforces integrity") {
    auto dir = temp_dir("manifest");
    const std::string trace_text = "x y p t pen\n0 0 0.5 0 1\n1 1 0.6 10 1\n";
    // 2 writers x 2 sessions x (2 genuine + 2 forged)
    std::string manifest_text = "# seed 5\n";
    for (int w = 0; w < 2; ++w)
        for (int s = 1; s <= 2; ++s)
            for (int j = 0; j < 2; ++j) {
                char g[64], f[64];
                std::snprintf(g, sizeof(g), "w%d_s%d_g%d.trc", w, s, j);
                std::snprintf(f, sizeof(f), "w%d_s%d_f%d.trc", w, s, j);
                write_file(dir / g, trace_text);
                write_file(dir / f, trace_text);
                manifest_text += std::string(g) + " " + std::to_string(w) + " " +
                                 std::to_string(s) + " genuine\n";
                manifest_text += std::string(f) + " " + std::to_string(w) + " " +
                                 std::to_string(s) + " forgery\n";
            }
    write_file(dir / "manifest.txt", manifest_text);

    DatasetManifest m = load_manifest(dir / "manifest.txt");
    CHECK(m.entries.size() == 16);
    CHECK(m.seed == 5);
    auto counts = m.counts();
    CHECK(counts[{0, 1, Label::Genuine}] == 2);
    CHECK(counts[{1, 2, Label::SkilledForgery}] == 2);
    CHECK(validate_pairing(m).empty());

    SUBCASE("missing file") {
        write_file(dir / "manifest_missing.txt", "ghost.trc 0 1 genuine\n");
        CHECK_THROWS_AS(load_manifest(dir / "manifest_missing.txt"), MissingFileError);
    }
    SUBCASE("duplicate entry") {
        write_file(dir / "manifest_dup.txt",
                   "w0_s1_g0.trc 0 1 genuine\nw0_s1_g0.trc 0 1 genuine\n");
        CHECK_THROWS_AS(load_manifest(dir / "manifest_dup.txt"), DuplicateEntryError);
    }
    SUBCASE("non-contiguous writer ids") {
        write_file(dir / "manifest_gap.txt",
                   "w0_s1_g0.trc 0 1 genuine\nw1_s1_g0.trc 2 1 genuine\n");
        CHECK_THROWS_AS(load_manifest(dir / "manifest_gap.txt"), InvariantError);
    }
}

TEST_CASE("empty manifest is valid with zero entries") {
    auto dir = temp_dir("manifest_empty");
    write_file(dir / "manifest.txt", "");
    DatasetManifest m = load_manifest(dir / "manifest.txt");
    CHECK(m.entries.empty());
    CHECK(validate_pairing(m).empty());
}

TEST_CASE("validate_pairing flags unbalanced writers") {
    auto dir = temp_dir("pairing");
    const std::string trace_text = "x y p t pen\n0 0 0.5 0 1\n1 1 0.6 10 1\n";
    std::string manifest_text;
    for (int j = 0; j < 3; ++j) {
        char g[64];
        std::snprintf(g, sizeof(g), "g%d.trc", j);
        write_file(dir / g, trace_text);
        manifest_text += std::string(g) + " 0 1 genuine\n";
    }
    write_file(dir / "f0.trc", trace_text);
    manifest_text += "f0.trc 0 1 forgery\n";
    write_file(dir / "manifest.txt", manifest_text);
    DatasetManifest m = load_manifest(dir / "manifest.txt");
    auto warnings = validate_pairing(m);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("writer 0") != std::string::npos);
}

TEST_CASE("manifest round trip") {
    auto dir = temp_dir("manifest_rt");
    const std::string trace_text = "x y p t pen\n0 0 0.5 0 1\n1 1 0.6 10 1\n";
    write_file(dir / "a.trc", trace_text);
    write_file(dir / "b.trc", trace_text);
    DatasetManifest m;
    m.seed = 99;
    m.entries = {{"a.trc", 0, 1, Label::Genuine}, {"b.trc", 0, 2, Label::SkilledForgery}};
    save_manifest(m, dir / "manifest.txt");
    DatasetManifest back = load_manifest(dir / "manifest.txt");
    CHECK(back.seed == 99);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].session == 2);
    CHECK(back.entries[1].label == Label::SkilledForgery);
}
