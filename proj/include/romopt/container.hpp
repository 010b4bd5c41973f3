#pragma once

#include "romopt/core.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace romopt {

// Binary containers for the data plane. Everything is little-endian with
// u32 header fields and column-major 64-bit float payloads.
//
// Trajectory file layout:
//   magic "ROMT" | u32 version | u32 n_x | u32 n_t | u32 n_fields
//   | times (n_t doubles) | field blocks (each n_x * n_t, column-major)
// plus an optional JSON sidecar at <path>.json carrying provenance.
//
// Named-block file layout (reduced models, posteriors, network weights):
//   magic "ROMB" | u32 version | u32 n_blocks
//   | per block: u32 name_len | name bytes | u32 rows | u32 cols | data

inline constexpr std::uint32_t kContainerVersion = 1;

struct TrajectoryFile {
    Vec times;
    std::vector<Mat> fields;  // each n_x x n_t
};

void write_trajectory(const std::string& path, const TrajectoryFile& t);
TrajectoryFile read_trajectory(const std::string& path);

struct BlockFile {
    // Insertion order is preserved on disk so writes are reproducible.
    std::vector<std::pair<std::string, Mat>> blocks;

    void add(const std::string& name, const Mat& m) { blocks.emplace_back(name, m); }
    void add(const std::string& name, const Vec& v) { blocks.emplace_back(name, Mat(v)); }
    const Mat& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_blocks(const std::string& path, const BlockFile& b);
BlockFile read_blocks(const std::string& path);

/// FNV-1a 64-bit digest of a byte range.
std::uint64_t fnv1a64(const void* data, std::size_t len);
/// Digest of a file's contents; throws if unreadable.
std::uint64_t digest_file(const std::string& path);
std::string digest_hex(std::uint64_t d);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace romopt
