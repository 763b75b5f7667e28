#include "presencia/attendance.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <limits>

#include "presencia/siamese.hpp"

namespace presencia::attend {

namespace fs = std::filesystem;

namespace {

db::Json optional_time(const std::optional<Timestamp>& t) {
  return t ? db::Json(format_utc(*t)) : db::Json(nullptr);
}

std::optional<Timestamp> read_optional_time(const db::Json& body, const char* key) {
  if (!body.contains(key) || body.at(key).is_null()) return std::nullopt;
  return parse_utc(body.at(key).get<std::string>());
}

std::string record_id(const std::string& session_id, const std::string& person_id) {
  return session_id + ":" + person_id;
}

void write_synced(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw Error(ErrorCode::IoError, "write failed: " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

double gallery_distance(const ModelBundle& models, const siamese::Embedding& e, const std::string& person_id) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < models.gallery.size(); ++i) {
    if (models.gallery_ids[i] == person_id) best = std::min(best, siamese::pair_distance(e, models.gallery[i]));
  }
  return best;
}

db::Json Session::to_json() const {
  return {{"session_id", session_id},
          {"name", name},
          {"state", state},
          {"started_at", format_utc(started_at)},
          {"ended_at", optional_time(ended_at)},
          {"debounce_s", debounce_s},
          {"last_frame_at", optional_time(last_frame_at)},
          {"total_events", total_events}};
}

Session Session::from_json(const db::Json& body) {
  Session s;
  s.session_id = body.at("session_id").get<std::string>();
  s.name = body.at("name").get<std::string>();
  s.state = body.at("state").get<std::string>();
  s.started_at = parse_utc(body.at("started_at").get<std::string>());
  s.ended_at = read_optional_time(body, "ended_at");
  s.debounce_s = body.at("debounce_s").get<std::int64_t>();
  s.last_frame_at = read_optional_time(body, "last_frame_at");
  s.total_events = body.value("total_events", std::int64_t{0});
  return s;
}

db::Json AttendanceRecord::to_json() const {
  return {{"session_id", session_id}, {"person_id", person_id},         {"name", name},
          {"count", count},           {"first_seen", format_utc(first_seen)}, {"last_seen", format_utc(last_seen)}};
}

AttendanceRecord AttendanceRecord::from_json(const db::Json& body) {
  return {body.at("session_id").get<std::string>(), body.at("person_id").get<std::string>(),
          body.at("name").get<std::string>(),       body.at("count").get<std::int64_t>(),
          parse_utc(body.at("first_seen").get<std::string>()), parse_utc(body.at("last_seen").get<std::string>())};
}

db::Json RecognitionEvent::to_json() const {
  return {{"box", {{"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}}},
          {"person_id", person_id},
          {"top_prob", top_prob},
          {"timestamp", format_utc(timestamp)},
          {"marked", marked}};
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string render_csv(const std::vector<AttendanceRecord>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.person_id) + "," + csv_field(r.name) + "," + std::to_string(r.count) + "," +
           format_utc(r.first_seen) + "," + format_utc(r.last_seen) + "\n";
  }
  return out;
}

AttendanceEngine::AttendanceEngine(db::DocStore& store, fs::path data_root, PipelineConfig config)
    : store_(store), data_root_(std::move(data_root)), config_(config) {}

void AttendanceEngine::set_event_listener(EventListener listener) {
  std::lock_guard lock(mu_);
  listener_ = std::move(listener);
}

void AttendanceEngine::set_models(std::shared_ptr<const ModelBundle> models) {
  std::lock_guard lock(mu_);
  models_ = std::move(models);
}

std::shared_ptr<const ModelBundle> AttendanceEngine::models() const {
  std::lock_guard lock(mu_);
  return models_;
}

std::mutex& AttendanceEngine::session_lock(const std::string& id) {
  std::lock_guard lock(mu_);
  auto& slot = session_locks_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

Session AttendanceEngine::start_session(const std::string& name, std::int64_t debounce_s, Timestamp started_at) {
  if (!models()) throw Error(ErrorCode::ModelsNotReady, "cascade, embedder and classifier must be trained first");
  if (debounce_s < 0) throw Error(ErrorCode::InvariantViolation, "debounce_s must be nonnegative");
  std::lock_guard lock(mu_);
  Session s;
  s.name = name;
  s.state = "running";
  s.started_at = started_at;
  s.debounce_s = debounce_s;
  for (std::size_t n = store_.query(db::Collection::Sessions).size() + 1;; ++n) {
    char id[32];
    std::snprintf(id, sizeof id, "session-%04zu", n);
    if (!store_.get(db::Collection::Sessions, id)) {
      s.session_id = id;
      break;
    }
  }
  store_.insert(db::Collection::Sessions, {s.session_id, s.to_json()});
  return s;
}

std::vector<RecognitionEvent> AttendanceEngine::process_frame(const std::string& session_id, const AnyImage& frame,
                                                              Timestamp timestamp) {
  std::lock_guard lock(session_lock(session_id));
  const auto doc = store_.get(db::Collection::Sessions, session_id);
  if (!doc) throw Error(ErrorCode::SessionNotFound, "no session " + session_id);
  Session s = Session::from_json(doc->body);
  if (s.state != "running") throw Error(ErrorCode::SessionNotRunning, "session " + session_id + " is " + s.state);
  if (timestamp < s.started_at || (s.last_frame_at && timestamp < *s.last_frame_at)) {
    throw Error(ErrorCode::NonMonotoneTimestamp, "frame timestamp " + format_utc(timestamp) + " goes backwards");
  }
  const auto models = this->models();
  if (!models) throw Error(ErrorCode::ModelsNotReady, "models are not loaded");

  const GrayImage gray = to_gray(frame);
  std::vector<haar::Detection> faces;
  if (gray.width() >= models->cascade.base_w && gray.height() >= models->cascade.base_h) {
    faces = haar::detect_faces(gray, models->cascade, config_.detect, config_.nms_iou);
  }
  std::vector<RecognitionEvent> events;
  if (faces.empty()) return events;

  for (const auto& face : faces) {
    const auto chip = siamese::preprocess(frame, face.box, models->chip_size);
    const auto embedding = siamese::embed(models->embedder, chip);
    const auto prediction = classifier::predict(models->head, embedding);
    RecognitionEvent ev{face.box, prediction.top_id, prediction.top_prob, timestamp, false};
    if (prediction.known() && config_.verify_identity &&
        !(gallery_distance(*models, embedding, prediction.top_id) < models->tau)) {
      ev.person_id = classifier::kUnknown;
    }
    if (ev.person_id != classifier::kUnknown) {
      const std::string rid = record_id(session_id, ev.person_id);
      const auto existing = store_.get(db::Collection::Attendance, rid);
      if (!existing) {
        const auto person = store_.get(db::Collection::Persons, ev.person_id);
        const std::string name = person ? person->body.at("name").get<std::string>() : ev.person_id;
        store_.insert(db::Collection::Attendance,
                      {rid, AttendanceRecord{session_id, ev.person_id, name, 1, timestamp, timestamp}.to_json()});
        ev.marked = true;
      } else {
        AttendanceRecord rec = AttendanceRecord::from_json(existing->body);
        if (timestamp - rec.last_seen >= s.debounce_s) {
          rec.count = store_.increment(db::Collection::Attendance, rid, "count", 1);
          ev.marked = true;
        }
        rec.last_seen = timestamp;
        store_.update(db::Collection::Attendance, {rid, rec.to_json()});
      }
    }
    events.push_back(std::move(ev));
  }
  s.last_frame_at = timestamp;
  s.total_events += static_cast<std::int64_t>(events.size());
  store_.update(db::Collection::Sessions, {session_id, s.to_json()});
  EventListener listener;
  {
    std::lock_guard guard(mu_);
    listener = listener_;
  }
  if (listener) {
    for (const auto& ev : events) listener(session_id, ev);
  }
  return events;
}

SessionSummary AttendanceEngine::end_session(const std::string& session_id, std::optional<Timestamp> ended_at) {
  std::lock_guard lock(session_lock(session_id));
  const auto doc = store_.get(db::Collection::Sessions, session_id);
  if (!doc) throw Error(ErrorCode::SessionNotFound, "no session " + session_id);
  Session s = Session::from_json(doc->body);
  if (s.state != "running") throw Error(ErrorCode::SessionNotRunning, "session " + session_id + " is " + s.state);
  s.state = "ended";
  s.ended_at = std::max(ended_at.value_or(s.last_frame_at.value_or(s.started_at)), s.started_at);
  store_.update(db::Collection::Sessions, {session_id, s.to_json()});

  SessionSummary summary;
  const auto rows = records(session_id);
  for (const auto& r : rows) summary.persons_marked += r.count >= 1;
  summary.total_events = s.total_events;
  summary.export_path = data_root_ / "exports" / (session_id + ".csv");
  write_synced(summary.export_path, render_csv(rows));
  return summary;
}

std::string AttendanceEngine::export_csv(const std::string& session_id) const {
  if (!store_.get(db::Collection::Sessions, session_id)) {
    throw Error(ErrorCode::SessionNotFound, "no session " + session_id);
  }
  return render_csv(records(session_id));
}

std::optional<Session> AttendanceEngine::session(const std::string& session_id) const {
  const auto doc = store_.get(db::Collection::Sessions, session_id);
  if (!doc) return std::nullopt;
  return Session::from_json(doc->body);
}

std::vector<Session> AttendanceEngine::sessions() const {
  std::vector<Session> out;
  for (const auto& d : store_.query(db::Collection::Sessions)) out.push_back(Session::from_json(d.body));
  return out;
}

std::vector<AttendanceRecord> AttendanceEngine::records(const std::string& session_id) const {
  std::vector<AttendanceRecord> out;
  // ids are "<session>:<person>", so id order is person_id order within a session
  for (const auto& d : store_.query(db::Collection::Attendance, {{"session_id", session_id}})) {
    out.push_back(AttendanceRecord::from_json(d.body));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.person_id < b.person_id; });
  return out;
}

}  // namespace presencia::attend
