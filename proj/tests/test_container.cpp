#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "romopt/container.hpp"
#include "romopt/rng.hpp"

#include <cstdio>
#include <filesystem>

using namespace romopt;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("romopt_container_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("trajectory files round-trip exactly for random shapes") {
    TempDir dir;
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        int n_x = 1 + static_cast<int>(rng.uniform() * 40);
        int n_t = 2 + static_cast<int>(rng.uniform() * 30);
        int n_f = 1 + static_cast<int>(rng.uniform() * 3);
        TrajectoryFile t;
        t.times = Vec::LinSpaced(n_t, 0.0, 1.0);
        for (int f = 0; f < n_f; ++f) {
            Mat m(n_x, n_t);
            for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-5, 5);
            t.fields.push_back(std::move(m));
        }
        std::string path = dir.file("traj.bin");
        write_trajectory(path, t);
        TrajectoryFile r = read_trajectory(path);
        CHECK((r.times - t.times).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(r.fields.size() == t.fields.size());
        for (std::size_t f = 0; f < t.fields.size(); ++f)
            CHECK((r.fields[f] - t.fields[f]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("block files preserve names, order, and payloads") {
    TempDir dir;
    Rng rng(7);
    BlockFile b;
    Mat m1(4, 7), m2(1, 1);
    for (int i = 0; i < m1.size(); ++i) m1.data()[i] = rng.uniform(-1, 1);
    m2(0, 0) = 42.5;
    b.add("V1", m1);
    b.add("meta", m2);
    b.add("empty_name_ok", Mat(Mat::Zero(2, 2)));
    std::string path = dir.file("blocks.bin");
    write_blocks(path, b);
    BlockFile r = read_blocks(path);
    REQUIRE(r.blocks.size() == 3);
    CHECK(r.blocks[0].first == "V1");
    CHECK(r.blocks[1].first == "meta");
    CHECK((r.get("V1") - m1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.get("meta")(0, 0) == 42.5);
    CHECK(r.has("empty_name_ok"));
    CHECK(!r.has("missing"));
    CHECK_THROWS_AS(r.get("missing"), Error);
}

TEST_CASE("writing the same content twice gives byte-identical files") {
    TempDir dir;
    Rng rng(11);
    TrajectoryFile t;
    t.times = Vec::LinSpaced(9, 0.0, 0.4);
    Mat m(5, 9);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
    t.fields.push_back(m);
    write_trajectory(dir.file("a.bin"), t);
    write_trajectory(dir.file("b.bin"), t);
    CHECK(digest_file(dir.file("a.bin")) == digest_file(dir.file("b.bin")));

    // Any payload change moves the digest.
    t.fields[0](2, 3) += 1e-12;
    write_trajectory(dir.file("c.bin"), t);
    CHECK(digest_file(dir.file("a.bin")) != digest_file(dir.file("c.bin")));
}

TEST_CASE("corrupt containers are rejected") {
    TempDir dir;
    write_text_file(dir.file("bad.bin"), "NOTAMAGIC....");
    CHECK_THROWS_AS(read_trajectory(dir.file("bad.bin")), Error);
    CHECK_THROWS_AS(read_blocks(dir.file("bad.bin")), Error);
    CHECK_THROWS_AS(read_trajectory(dir.file("missing.bin")), Error);
}

TEST_CASE("fnv digest is stable across calls and sensitive to each byte") {
    std::string s = "reduced-order";
    std::uint64_t a = fnv1a64(s.data(), s.size());
    std::uint64_t b = fnv1a64(s.data(), s.size());
    CHECK(a == b);
    std::string s2 = "reduced-ordes";
    CHECK(a != fnv1a64(s2.data(), s2.size()));
    CHECK(digest_hex(a).size() == 16);
}
