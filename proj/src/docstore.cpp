#include "presencia/docstore.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <fstream>
#include <iterator>
#include <sstream>

namespace presencia::db {

namespace fs = std::filesystem;

namespace {

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::uint32_t read_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_all(int fd, const std::vector<std::uint8_t>& bytes, const fs::path& p) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) throw Error(ErrorCode::IoError, "write failed: " + p.string());
    done += static_cast<std::size_t>(n);
  }
}

void sync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::string record_payload(const std::string& id, const Json& body) {
  return Json{{"id", id}, {"body", body}}.dump();
}

// Walks a dotted path; returns nullptr when any component is missing.
const Json* find_path(const Json& body, std::string_view path) {
  const Json* cur = &body;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!cur->is_object()) return nullptr;
    const auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) return cur;
    start = dot + 1;
  }
}

Json& make_path(Json& body, std::string_view path) {
  Json* cur = &body;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (!cur->is_object()) throw Error(ErrorCode::TypeMismatch, "path component is not an object");
    cur = &(*cur)[key];
    if (dot == std::string_view::npos) return *cur;
    if (cur->is_null()) *cur = Json::object();
    start = dot + 1;
  }
}

void schema_require(bool ok, Collection c, const std::string& what) {
  if (!ok) {
    throw Error(ErrorCode::SchemaViolation, std::string(collection_name(c)) + ": " + what);
  }
}

bool is_string(const Json& b, const char* key) { return b.contains(key) && b.at(key).is_string(); }
bool is_count(const Json& b, const char* key) {
  return b.contains(key) && b.at(key).is_number_integer() && b.at(key).get<std::int64_t>() >= 0;
}

}  // namespace

std::string_view collection_name(Collection c) {
  switch (c) {
    case Collection::Persons: return "persons";
    case Collection::Sessions: return "sessions";
    case Collection::Attendance: return "attendance";
    case Collection::Models: return "models";
  }
  return "unknown";
}

void validate_schema(Collection c, const Document& doc) {
  schema_require(!doc.id.empty(), c, "document id is empty");
  const Json& b = doc.body;
  schema_require(b.is_object(), c, "body must be an object");
  switch (c) {
    case Collection::Persons: {
      schema_require(is_string(b, "person_id") && b.at("person_id") == doc.id, c, "person_id must equal the id");
      schema_require(is_string(b, "name") && !b.at("name").get<std::string>().empty(), c, "name required");
      schema_require(is_count(b, "sample_count"), c, "sample_count must be a nonnegative integer");
      schema_require(is_string(b, "status") && (b.at("status") == "enrolling" || b.at("status") == "ready"), c,
                     "status must be enrolling or ready");
      break;
    }
    case Collection::Sessions: {
      schema_require(is_string(b, "session_id") && b.at("session_id") == doc.id, c, "session_id must equal the id");
      schema_require(is_string(b, "name"), c, "name required");
      schema_require(is_string(b, "state") &&
                         (b.at("state") == "idle" || b.at("state") == "running" || b.at("state") == "ended"),
                     c, "state must be idle, running or ended");
      schema_require(is_count(b, "debounce_s"), c, "debounce_s must be a nonnegative integer");
      break;
    }
    case Collection::Attendance: {
      schema_require(is_string(b, "session_id"), c, "session_id required");
      schema_require(is_string(b, "person_id"), c, "person_id required");
      schema_require(is_string(b, "name"), c, "name required");
      schema_require(is_count(b, "count"), c, "count must be a nonnegative integer");
      break;
    }
    case Collection::Models:
      break;
  }
}

std::vector<std::uint8_t> frame_record(std::string_view payload) {
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 8);
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  put(static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put(crc32_of(payload));
  return out;
}

ReplayResult replay_records(std::string_view bytes, const std::string& what) {
  ReplayResult r;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) {
      r.torn_tail = true;
      break;
    }
    const std::size_t len = read_u32(bytes, pos);
    if (bytes.size() - pos - 4 < len + 4ull) {
      r.torn_tail = true;
      break;
    }
    const std::string_view payload = bytes.substr(pos + 4, len);
    const std::size_t end = pos + 8 + len;
    if (read_u32(bytes, pos + 4 + len) != crc32_of(payload)) {
      if (end == bytes.size()) {
        r.torn_tail = true;
        break;
      }
      throw Error(ErrorCode::CorruptInterior, what + ": checksum mismatch at byte " + std::to_string(pos));
    }
    r.payloads.emplace_back(payload);
    pos = end;
  }
  r.valid_bytes = pos;
  return r;
}

DocStore::DocStore(fs::path dir, StoreOptions options) : dir_(std::move(dir)), options_(options) {}

DocStore::~DocStore() {
  for (auto& s : collections_) {
    if (s.log_fd >= 0) ::close(s.log_fd);
  }
}

std::unique_ptr<DocStore> DocStore::open(const fs::path& dir, StoreOptions options) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
  std::unique_ptr<DocStore> store(new DocStore(dir, options));
  for (Collection c : kAllCollections) store->recover(c);
  return store;
}

void DocStore::recover(Collection c) {
  const std::string name(collection_name(c));
  const fs::path snap = dir_ / (name + ".snapshot");
  const fs::path log = dir_ / (name + ".log");
  auto& st = state(c);
  st.docs.clear();
  for (const auto& [path, label] : {std::pair{snap, name + ".snapshot"}, std::pair{log, name + ".log"}}) {
    const ReplayResult r = replay_records(read_file(path), label);
    for (const auto& payload : r.payloads) {
      Json rec;
      try {
        rec = Json::parse(payload);
      } catch (const Json::exception&) {
        throw Error(ErrorCode::CorruptInterior, label + ": unreadable record");
      }
      st.docs[rec.at("id").get<std::string>()] = rec.at("body");
    }
  }
  write_snapshot(c);
}

void DocStore::write_snapshot(Collection c) {
  const std::string name(collection_name(c));
  const fs::path snap = dir_ / (name + ".snapshot");
  const fs::path tmp = dir_ / (name + ".snapshot.tmp");
  const fs::path log = dir_ / (name + ".log");
  auto& st = state(c);

  std::vector<std::uint8_t> bytes;
  for (const auto& [id, body] : st.docs) {
    const auto rec = frame_record(record_payload(id, body));
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  write_all(fd, bytes, tmp);
  ::fsync(fd);
  ::close(fd);
  fs::rename(tmp, snap);
  sync_dir(dir_);

  // Log records are full-document puts, so replaying them over the new
  // snapshot after a crash here is harmless.
  if (st.log_fd >= 0) ::close(st.log_fd);
  st.log_fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_APPEND, 0644);
  if (st.log_fd < 0) throw Error(ErrorCode::IoError, "cannot open " + log.string());
  ::fsync(st.log_fd);
  sync_dir(dir_);
  st.appended = 0;
}

void DocStore::append(Collection c, const std::string& id, const Json& body) {
  auto& st = state(c);
  const auto rec = frame_record(record_payload(id, body));
  write_all(st.log_fd, rec, dir_ / (std::string(collection_name(c)) + ".log"));
  ::fdatasync(st.log_fd);
  st.docs[id] = body;
  if (++st.appended >= options_.compact_every) write_snapshot(c);
}

std::string DocStore::insert(Collection c, const Document& doc) {
  validate_schema(c, doc);
  std::unique_lock lock(mu_);
  if (state(c).docs.contains(doc.id)) {
    throw Error(ErrorCode::DuplicateId, std::string(collection_name(c)) + " already has " + doc.id);
  }
  append(c, doc.id, doc.body);
  return doc.id;
}

std::optional<Document> DocStore::get(Collection c, std::string_view id) const {
  std::shared_lock lock(mu_);
  const auto& docs = state(c).docs;
  const auto it = docs.find(id);
  if (it == docs.end()) return std::nullopt;
  return Document{it->first, it->second};
}

void DocStore::update(Collection c, const Document& doc) {
  validate_schema(c, doc);
  std::unique_lock lock(mu_);
  if (!state(c).docs.contains(doc.id)) {
    throw Error(ErrorCode::NotFound, std::string(collection_name(c)) + " has no " + doc.id);
  }
  append(c, doc.id, doc.body);
}

std::int64_t DocStore::increment(Collection c, std::string_view id, std::string_view field_path,
                                 std::int64_t delta) {
  std::unique_lock lock(mu_);
  auto& docs = state(c).docs;
  const auto it = docs.find(id);
  if (it == docs.end()) throw Error(ErrorCode::NotFound, std::string(collection_name(c)) + " has no " + std::string(id));
  Json body = it->second;
  std::int64_t current = 0;
  if (const Json* field = find_path(body, field_path)) {
    if (!field->is_number_integer()) throw Error(ErrorCode::TypeMismatch, "field is not an integer");
    current = field->get<std::int64_t>();
  }
  const std::int64_t next = current + delta;
  make_path(body, field_path) = next;
  validate_schema(c, {it->first, body});
  append(c, it->first, body);
  return next;
}

std::vector<Document> DocStore::query(Collection c, const Predicate& where) const {
  std::shared_lock lock(mu_);
  std::vector<Document> out;
  for (const auto& [id, body] : state(c).docs) {
    bool match = true;
    for (const auto& [path, value] : where) {
      const Json* field = find_path(body, path);
      if (!field || *field != value) {
        match = false;
        break;
      }
    }
    if (match) out.push_back({id, body});
  }
  return out;
}

void DocStore::compact() {
  std::unique_lock lock(mu_);
  for (Collection c : kAllCollections) write_snapshot(c);
}

std::string DocStore::dump_canonical() const {
  std::shared_lock lock(mu_);
  std::ostringstream os;
  for (Collection c : kAllCollections) {
    for (const auto& [id, body] : state(c).docs) {
      os << collection_name(c) << ' ' << record_payload(id, body) << '\n';
    }
  }
  return os.str();
}

}  // namespace presencia::db
