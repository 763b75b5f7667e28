#include "presencia/enrollment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <random>

namespace presencia::enroll {

namespace fs = std::filesystem;

db::Json PersonRecord::to_json() const {
  return {{"person_id", person_id}, {"name", name}, {"sample_count", sample_count}, {"status", status}};
}

PersonRecord PersonRecord::from_json(const db::Json& body) {
  return {body.at("person_id").get<std::string>(), body.at("name").get<std::string>(),
          body.at("sample_count").get<int>(), body.at("status").get<std::string>()};
}

bool valid_person_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

fs::path sample_path(const fs::path& data_root, const std::string& person_id, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "sample_%03d.ppm", index);
  return data_root / "samples" / person_id / name;
}

Enrollment::Enrollment(db::DocStore& store, fs::path data_root, EnrollmentConfig config)
    : store_(store), data_root_(std::move(data_root)), config_(config) {}

std::mutex& Enrollment::person_lock(const std::string& id) {
  std::lock_guard lock(locks_mu_);
  auto& slot = person_locks_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

PersonRecord Enrollment::register_person(const std::string& id, const std::string& name) {
  if (!valid_person_id(id)) throw Error(ErrorCode::InvalidId, "person id must match [A-Za-z0-9_-]{1,64}");
  if (name.empty()) throw Error(ErrorCode::InvalidId, "person name must not be empty");
  std::lock_guard lock(person_lock(id));
  PersonRecord rec{id, name, 0, "enrolling"};
  try {
    store_.insert(db::Collection::Persons, {id, rec.to_json()});
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DuplicateId) throw Error(ErrorCode::DuplicateId, "person " + id + " already exists");
    throw;
  }
  return rec;
}

CaptureResult Enrollment::capture_sample(const std::string& person_id, const AnyImage& frame,
                                         const haar::HaarCascade& cascade) {
  std::lock_guard lock(person_lock(person_id));
  const auto doc = store_.get(db::Collection::Persons, person_id);
  if (!doc) throw Error(ErrorCode::PersonNotFound, "no person " + person_id);
  const PersonRecord rec = PersonRecord::from_json(doc->body);
  if (rec.status == "ready") throw Error(ErrorCode::AlreadyReady, "person " + person_id + " is already enrolled");

  const GrayImage gray = to_gray(frame);
  if (gray.width() < cascade.base_w || gray.height() < cascade.base_h) {
    throw Error(ErrorCode::NoFace, "frame smaller than the detection window");
  }
  const auto faces = haar::detect_faces(gray, cascade, config_.detect, config_.nms_iou);
  if (faces.empty()) throw Error(ErrorCode::NoFace, "no face found in frame");
  if (faces.size() > 1) {
    throw Error(ErrorCode::MultipleFaces, std::to_string(faces.size()) + " faces found in frame");
  }

  const RgbImage chip = siamese::chip_image(frame, faces[0].box, config_.chip_size);
  const fs::path path = sample_path(data_root_, person_id, rec.sample_count);
  fs::create_directories(path.parent_path());
  write_pnm_file(path.string(), chip);
  if (const int dfd = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY); dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
  const auto count = store_.increment(db::Collection::Persons, person_id, "sample_count", 1);
  return {path, static_cast<int>(count), faces[0].box};
}

PersonRecord Enrollment::finalize(const std::string& person_id) {
  std::lock_guard lock(person_lock(person_id));
  const auto doc = store_.get(db::Collection::Persons, person_id);
  if (!doc) throw Error(ErrorCode::PersonNotFound, "no person " + person_id);
  PersonRecord rec = PersonRecord::from_json(doc->body);
  if (rec.status == "ready") return rec;
  if (rec.sample_count < config_.k_min) {
    throw Error(ErrorCode::InsufficientSamples, "person " + person_id + " has " + std::to_string(rec.sample_count) +
                                                    " samples, needs " + std::to_string(config_.k_min));
  }
  rec.status = "ready";
  store_.update(db::Collection::Persons, {person_id, rec.to_json()});
  return rec;
}

std::optional<PersonRecord> Enrollment::person(const std::string& person_id) const {
  const auto doc = store_.get(db::Collection::Persons, person_id);
  if (!doc) return std::nullopt;
  return PersonRecord::from_json(doc->body);
}

std::vector<PersonRecord> Enrollment::persons() const {
  std::vector<PersonRecord> out;
  for (const auto& d : store_.query(db::Collection::Persons)) out.push_back(PersonRecord::from_json(d.body));
  return out;
}

TrainingSets build_training_sets(const db::DocStore& store, const fs::path& data_root, std::uint64_t seed) {
  const auto ready = store.query(db::Collection::Persons, {{"status", "ready"}});
  if (ready.size() < 2) throw Error(ErrorCode::NotEnoughPersons, "training needs at least two ready persons");

  TrainingSets sets;
  std::vector<std::vector<siamese::ChipRef>> by_person;
  for (const auto& doc : ready) {
    const PersonRecord rec = PersonRecord::from_json(doc.body);
    auto& chips = by_person.emplace_back();
    for (int i = 0; i < rec.sample_count; ++i) {
      const AnyImage img = read_pnm_file(sample_path(data_root, rec.person_id, i).string());
      const auto* rgb = std::get_if<RgbImage>(&img);
      auto chip = std::make_shared<const siamese::FaceChip>(
          siamese::chip_from_image(rgb ? *rgb : to_rgb(std::get<GrayImage>(img))));
      chips.push_back(chip);
      sets.labeled.push_back({chip, rec.person_id});
    }
  }

  for (const auto& chips : by_person) {
    for (std::size_t i = 0; i < chips.size(); ++i) {
      for (std::size_t j = i + 1; j < chips.size(); ++j) sets.pairs.push_back({chips[i], chips[j], 1});
    }
  }
  const std::size_t positives = sets.pairs.size();
  std::mt19937_64 rng(seed);
  const std::size_t persons = by_person.size();
  for (std::size_t k = 0; k < positives; ++k) {
    const std::size_t a = rng() % persons;
    std::size_t b = rng() % (persons - 1);
    if (b >= a) ++b;
    if (by_person[a].empty() || by_person[b].empty()) continue;
    const auto& ca = by_person[a][rng() % by_person[a].size()];
    const auto& cb = by_person[b][rng() % by_person[b].size()];
    sets.pairs.push_back({ca, cb, 0});
  }
  return sets;
}

}  // namespace presencia::enroll
