#pragma once

// Crash simulation for the document store: record the canonical state after
// every acknowledged write, then truncate the log at arbitrary byte offsets
// and check that recovery lands on the right state.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "presencia/docstore.hpp"
#include "support.hpp"

namespace testing_support {

// Bitwise CRC-32 (reflected, poly 0xEDB88320), independent of zlib.
inline std::uint32_t crc32_bitwise(std::string_view bytes) {
  std::uint32_t c = 0xffffffffu;
  for (unsigned char b : bytes) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
  }
  return ~c;
}

struct WriteHistory {
  std::vector<std::string> dumps;          // dumps[i] = canonical state after i writes
  std::vector<std::size_t> log_offsets;    // log size after i writes
  std::string log_bytes;
  std::string snapshot_bytes;
  std::filesystem::path log_name, snapshot_name;
};

// Runs writes against a fresh store in `dir` (no compaction), capturing the
// state and log size after each one. Only `coll` may be written.
inline WriteHistory record_history(const std::filesystem::path& dir, db::Collection coll,
                                   const std::vector<std::function<void(db::DocStore&)>>& writes) {
  WriteHistory h;
  const std::string name(db::collection_name(coll));
  h.log_name = name + ".log";
  h.snapshot_name = name + ".snapshot";
  {
    auto store = db::DocStore::open(dir, {.compact_every = 1u << 30});
    h.snapshot_bytes = read_file(dir / h.snapshot_name);
    h.dumps.push_back(store->dump_canonical());
    h.log_offsets.push_back(std::filesystem::file_size(dir / h.log_name));
    for (const auto& w : writes) {
      w(*store);
      h.dumps.push_back(store->dump_canonical());
      h.log_offsets.push_back(std::filesystem::file_size(dir / h.log_name));
    }
  }
  h.log_bytes = read_file(dir / h.log_name);
  return h;
}

// Recovers a copy of the store whose log is cut to `length` bytes and
// returns the recovered canonical dump.
inline std::string recover_truncated(const WriteHistory& h, const std::filesystem::path& scratch,
                                     std::size_t length) {
  std::filesystem::remove_all(scratch);
  std::filesystem::create_directories(scratch);
  {
    std::ofstream(scratch / h.snapshot_name, std::ios::binary) << h.snapshot_bytes;
    std::ofstream(scratch / h.log_name, std::ios::binary) << h.log_bytes.substr(0, length);
  }
  return db::DocStore::open(scratch)->dump_canonical();
}

// Expected state for a log cut at `length`: the last write whose record
// fully fits.
inline const std::string& expected_after_cut(const WriteHistory& h, std::size_t length) {
  std::size_t i = 0;
  while (i + 1 < h.log_offsets.size() && h.log_offsets[i + 1] <= length) ++i;
  return h.dumps[i];
}

}  // namespace testing_support
