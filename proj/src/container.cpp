#include "romopt/container.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace romopt {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    ROMOPT_REQUIRE(is.good(), "truncated container header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64s(std::ostream& os, const double* p, std::size_t n) {
    // Assumes little-endian IEEE doubles (x86/ARM little-endian targets).
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_f64s(std::istream& is, double* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    ROMOPT_REQUIRE(is.good(), "truncated container payload");
}

}  // namespace

void write_trajectory(const std::string& path, const TrajectoryFile& t) {
    ROMOPT_REQUIRE(!t.fields.empty(), "trajectory needs at least one field");
    const auto n_x = static_cast<std::uint32_t>(t.fields[0].rows());
    const auto n_t = static_cast<std::uint32_t>(t.times.size());
    for (const auto& f : t.fields)
        ROMOPT_REQUIRE(f.rows() == t.fields[0].rows() && f.cols() == t.times.size(),
                       "field shape mismatch");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    ROMOPT_REQUIRE(os.good(), "cannot open for write: " + path);
    os.write("ROMT", 4);
    put_u32(os, kContainerVersion);
    put_u32(os, n_x);
    put_u32(os, n_t);
    put_u32(os, static_cast<std::uint32_t>(t.fields.size()));
    put_f64s(os, t.times.data(), n_t);
    for (const auto& f : t.fields) put_f64s(os, f.data(), std::size_t(n_x) * n_t);
    ROMOPT_REQUIRE(os.good(), "write failed: " + path);
}

TrajectoryFile read_trajectory(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    ROMOPT_REQUIRE(is.good(), "cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    ROMOPT_REQUIRE(is.good() && std::memcmp(magic, "ROMT", 4) == 0,
                   "bad magic in " + path);
    std::uint32_t version = get_u32(is);
    ROMOPT_REQUIRE(version == kContainerVersion, "unsupported version in " + path);
    std::uint32_t n_x = get_u32(is);
    std::uint32_t n_t = get_u32(is);
    std::uint32_t n_fields = get_u32(is);
    TrajectoryFile t;
    t.times.resize(n_t);
    get_f64s(is, t.times.data(), n_t);
    t.fields.resize(n_fields);
    for (auto& f : t.fields) {
        f.resize(n_x, n_t);
        get_f64s(is, f.data(), std::size_t(n_x) * n_t);
    }
    return t;
}

const Mat& BlockFile::get(const std::string& name) const {
    for (const auto& [n, m] : blocks)
        if (n == name) return m;
    throw Error("missing block: " + name);
}

bool BlockFile::has(const std::string& name) const {
    for (const auto& [n, m] : blocks)
        if (n == name) return true;
    return false;
}

void write_blocks(const std::string& path, const BlockFile& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    ROMOPT_REQUIRE(os.good(), "cannot open for write: " + path);
    os.write("ROMB", 4);
    put_u32(os, kContainerVersion);
    put_u32(os, static_cast<std::uint32_t>(b.blocks.size()));
    for (const auto& [name, m] : b.blocks) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(m.rows()));
        put_u32(os, static_cast<std::uint32_t>(m.cols()));
        put_f64s(os, m.data(), static_cast<std::size_t>(m.size()));
    }
    ROMOPT_REQUIRE(os.good(), "write failed: " + path);
}

BlockFile read_blocks(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    ROMOPT_REQUIRE(is.good(), "cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    ROMOPT_REQUIRE(is.good() && std::memcmp(magic, "ROMB", 4) == 0,
                   "bad magic in " + path);
    std::uint32_t version = get_u32(is);
    ROMOPT_REQUIRE(version == kContainerVersion, "unsupported version in " + path);
    std::uint32_t n_blocks = get_u32(is);
    BlockFile b;
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        ROMOPT_REQUIRE(is.good(), "truncated block name in " + path);
        std::uint32_t rows = get_u32(is);
        std::uint32_t cols = get_u32(is);
        Mat m(rows, cols);
        get_f64s(is, m.data(), std::size_t(rows) * cols);
        b.blocks.emplace_back(std::move(name), std::move(m));
    }
    return b;
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t digest_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    ROMOPT_REQUIRE(is.good(), "cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
    return std::string(buf);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    ROMOPT_REQUIRE(os.good(), "cannot open for write: " + path);
    os << text;
    ROMOPT_REQUIRE(os.good(), "write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    ROMOPT_REQUIRE(is.good(), "cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace romopt
