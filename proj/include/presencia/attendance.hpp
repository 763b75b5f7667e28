#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "presencia/classifier.hpp"
#include "presencia/docstore.hpp"
#include "presencia/haar.hpp"
#include "presencia/nn.hpp"
#include "presencia/siamese.hpp"
#include "presencia/timeutil.hpp"

namespace presencia::attend {

// Debounce value that allows at most one increment per person per session.
inline constexpr std::int64_t kDebounceForever = std::numeric_limits<std::int64_t>::max();

inline constexpr const char* kCsvHeader = "person_id,name,count,first_seen_utc,last_seen_utc";

// Everything recognition needs, loaded together. The gallery holds the
// embeddings of every enrolled chip, labelled by person.
struct ModelBundle {
  haar::HaarCascade cascade;
  nn::Network embedder;
  double tau = 0.0;
  classifier::ClassifierHead head;
  int chip_size = 160;
  std::vector<std::string> gallery_ids;
  std::vector<siamese::Embedding> gallery;
};

struct PipelineConfig {
  haar::DetectParams detect;
  double nms_iou = 0.3;
  // A named prediction must also pass verification (distance < tau) against
  // at least one enrolled chip of that person; otherwise it becomes UNKNOWN.
  bool verify_identity = true;
};

// Smallest distance from e to the gallery entries of person_id (infinity if
// there are none).
double gallery_distance(const ModelBundle& models, const siamese::Embedding& e, const std::string& person_id);

struct Session {
  std::string session_id;
  std::string name;
  std::string state;  // idle | running | ended
  Timestamp started_at = 0;
  std::optional<Timestamp> ended_at;
  std::int64_t debounce_s = 30;
  std::optional<Timestamp> last_frame_at;
  std::int64_t total_events = 0;

  db::Json to_json() const;
  static Session from_json(const db::Json& body);
};

struct AttendanceRecord {
  std::string session_id;
  std::string person_id;
  std::string name;
  std::int64_t count = 0;
  Timestamp first_seen = 0;
  Timestamp last_seen = 0;

  db::Json to_json() const;
  static AttendanceRecord from_json(const db::Json& body);
};

struct RecognitionEvent {
  Rect box;
  std::string person_id;  // or classifier::kUnknown
  double top_prob = 0.0;
  Timestamp timestamp = 0;
  bool marked = false;

  db::Json to_json() const;
  friend bool operator==(const RecognitionEvent&, const RecognitionEvent&) = default;
};

struct SessionSummary {
  std::int64_t persons_marked = 0;
  std::int64_t total_events = 0;
  std::filesystem::path export_path;
};

// RFC 4180 style: quote fields containing comma, quote, CR or LF.
std::string csv_field(const std::string& value);
std::string render_csv(const std::vector<AttendanceRecord>& rows);

class AttendanceEngine {
 public:
  AttendanceEngine(db::DocStore& store, std::filesystem::path data_root, PipelineConfig config = {});

  // Called for every event, in order, while the session is still locked.
  using EventListener = std::function<void(const std::string& session_id, const RecognitionEvent&)>;
  void set_event_listener(EventListener listener);

  void set_models(std::shared_ptr<const ModelBundle> models);
  std::shared_ptr<const ModelBundle> models() const;

  Session start_session(const std::string& name, std::int64_t debounce_s, Timestamp started_at);

  // Detect, embed and classify every face; named faces outside the debounce
  // window increment the person's counter. Frames of one session are
  // processed one at a time.
  std::vector<RecognitionEvent> process_frame(const std::string& session_id, const AnyImage& frame,
                                              Timestamp timestamp);

  // Ends the session at `ended_at` (default: last frame time or start time)
  // and writes <data_root>/exports/<session_id>.csv.
  SessionSummary end_session(const std::string& session_id, std::optional<Timestamp> ended_at = std::nullopt);

  std::string export_csv(const std::string& session_id) const;

  std::optional<Session> session(const std::string& session_id) const;
  std::vector<Session> sessions() const;
  std::vector<AttendanceRecord> records(const std::string& session_id) const;

 private:
  std::mutex& session_lock(const std::string& id);

  db::DocStore& store_;
  std::filesystem::path data_root_;
  PipelineConfig config_;
  mutable std::mutex mu_;
  std::shared_ptr<const ModelBundle> models_;
  EventListener listener_;
  std::map<std::string, std::unique_ptr<std::mutex>> session_locks_;
};

}  // namespace presencia::attend
