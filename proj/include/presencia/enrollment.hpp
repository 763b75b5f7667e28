#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "presencia/docstore.hpp"
#include "presencia/haar.hpp"
#include "presencia/siamese.hpp"

namespace presencia::enroll {

inline constexpr int kDefaultSamples = 50;

struct PersonRecord {
  std::string person_id;
  std::string name;
  int sample_count = 0;
  std::string status = "enrolling";  // enrolling | ready

  db::Json to_json() const;
  static PersonRecord from_json(const db::Json& body);
  friend bool operator==(const PersonRecord&, const PersonRecord&) = default;
};

// [A-Za-z0-9_-]{1,64}
bool valid_person_id(std::string_view id);

struct EnrollmentConfig {
  int k_min = kDefaultSamples;
  int chip_size = siamese::kChipSize;
  haar::DetectParams detect;
  double nms_iou = 0.3;
};

struct CaptureResult {
  std::filesystem::path chip_path;
  int sample_count = 0;
  Rect face;
};

// Sample files live at <data_root>/samples/<person_id>/sample_NNN.ppm.
std::filesystem::path sample_path(const std::filesystem::path& data_root, const std::string& person_id,
                                  int index);

class Enrollment {
 public:
  Enrollment(db::DocStore& store, std::filesystem::path data_root, EnrollmentConfig config = {});

  PersonRecord register_person(const std::string& id, const std::string& name);

  // Requires exactly one face after NMS. The chip file is synced before the
  // sample counter moves, so a crash leaves either both or neither.
  CaptureResult capture_sample(const std::string& person_id, const AnyImage& frame,
                               const haar::HaarCascade& cascade);

  PersonRecord finalize(const std::string& person_id);

  std::optional<PersonRecord> person(const std::string& person_id) const;
  std::vector<PersonRecord> persons() const;

  const EnrollmentConfig& config() const { return config_; }

 private:
  std::mutex& person_lock(const std::string& id);

  db::DocStore& store_;
  std::filesystem::path data_root_;
  EnrollmentConfig config_;
  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> person_locks_;
};

struct LabeledChip {
  siamese::ChipRef chip;
  std::string person_id;
};

struct TrainingSets {
  std::vector<siamese::PairSample> pairs;
  std::vector<LabeledChip> labeled;
};

// Every stored chip of every ready person, all within-person pairs, and as
// many seeded random cross-person pairs.
TrainingSets build_training_sets(const db::DocStore& store, const std::filesystem::path& data_root,
                                 std::uint64_t seed);

}  // namespace presencia::enroll
