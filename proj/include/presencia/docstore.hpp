#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "presencia/error.hpp"

namespace presencia::db {

using Json = nlohmann::json;

enum class Collection { Persons, Sessions, Attendance, Models };

inline constexpr Collection kAllCollections[] = {Collection::Persons, Collection::Sessions,
                                                 Collection::Attendance, Collection::Models};

std::string_view collection_name(Collection c);

struct Document {
  std::string id;
  Json body;  // object; keys serialize sorted
  friend bool operator==(const Document&, const Document&) = default;
};

// Conjunction of dotted-path field equalities. Empty matches everything.
using Predicate = std::vector<std::pair<std::string, Json>>;

// Throws SchemaViolation when a body does not fit its collection.
void validate_schema(Collection c, const Document& doc);

// Length-prefixed, CRC-32 checked record framing shared by the log and the
// snapshot: u32 length, payload, u32 crc, little-endian.
std::vector<std::uint8_t> frame_record(std::string_view payload);

struct StoreOptions {
  // Rewrite the snapshot once this many records were appended since the last one.
  std::size_t compact_every = 4096;
};

// File-backed document store: one append-only log plus one snapshot per
// collection under the given directory. Every mutation is synced before it
// returns. Thread-safe; mutations are serialized by a single writer lock.
class DocStore {
 public:
  // Replays snapshot + log for every collection, drops a torn final record,
  // and rewrites compact snapshots. Throws CorruptInterior when a checksum
  // fails anywhere but the last record of a file.
  static std::unique_ptr<DocStore> open(const std::filesystem::path& dir, StoreOptions options = {});

  ~DocStore();
  DocStore(const DocStore&) = delete;
  DocStore& operator=(const DocStore&) = delete;

  std::string insert(Collection c, const Document& doc);
  std::optional<Document> get(Collection c, std::string_view id) const;
  void update(Collection c, const Document& doc);
  // Atomic read-modify-write of an integer field; an absent field counts as 0.
  std::int64_t increment(Collection c, std::string_view id, std::string_view field_path,
                         std::int64_t delta);
  std::vector<Document> query(Collection c, const Predicate& where = {}) const;

  void compact();

  // Canonical text of every collection, for state comparisons.
  std::string dump_canonical() const;

  const std::filesystem::path& directory() const { return dir_; }

 private:
  struct CollectionState {
    std::map<std::string, Json, std::less<>> docs;
    int log_fd = -1;
    std::size_t appended = 0;
  };

  DocStore(std::filesystem::path dir, StoreOptions options);
  void recover(Collection c);
  void append(Collection c, const std::string& id, const Json& body);
  void write_snapshot(Collection c);
  CollectionState& state(Collection c) { return collections_[static_cast<int>(c)]; }
  const CollectionState& state(Collection c) const { return collections_[static_cast<int>(c)]; }

  std::filesystem::path dir_;
  StoreOptions options_;
  mutable std::shared_mutex mu_;
  CollectionState collections_[4];
};

// Parses framed records from a file image. Returns the decoded payloads and
// the byte length of the valid prefix.
struct ReplayResult {
  std::vector<std::string> payloads;
  std::size_t valid_bytes = 0;
  bool torn_tail = false;
};
ReplayResult replay_records(std::string_view bytes, const std::string& what);

}  // namespace presencia::db
