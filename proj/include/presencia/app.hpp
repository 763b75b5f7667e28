#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>

#include "presencia/attendance.hpp"
#include "presencia/classifier.hpp"
#include "presencia/docstore.hpp"
#include "presencia/enrollment.hpp"
#include "presencia/haar.hpp"
#include "presencia/siamese.hpp"

namespace presencia {

struct AppConfig {
  enroll::EnrollmentConfig enrollment;
  attend::PipelineConfig pipeline;
};

struct TrainConfig {
  siamese::SiameseHyper siamese;
  classifier::HeadHyper head;
  std::uint64_t pair_seed = 3;

  static TrainConfig from_json(const db::Json& siamese_hyper, const db::Json& head_hyper);
};

struct TrainMetrics {
  std::size_t persons = 0;
  std::size_t chips = 0;
  std::size_t pairs = 0;
  double mean_same_distance = 0.0;
  double mean_different_distance = 0.0;
  double tau = 0.0;
  double verify_accuracy = 0.0;
  double head_train_accuracy = 0.0;

  db::Json to_json() const;
};

// Library-level entry point: one data root, one store, the enrollment and
// attendance services, and the currently installed models. The HTTP service
// and the CLI are thin layers over this class.
//
// Layout under data_root: db/ (document store), samples/<id>/, models/
// (cascade.json, embedder_base.prsn, embedder.prsn, head.prsn,
// gallery.json), exports/<session>.csv.
class App {
 public:
  explicit App(std::filesystem::path data_root, AppConfig config = {});

  const std::filesystem::path& data_root() const { return data_root_; }
  db::DocStore& store() { return *store_; }
  const db::DocStore& store() const { return *store_; }
  enroll::Enrollment& enrollment() { return *enrollment_; }
  attend::AttendanceEngine& attendance() { return *attendance_; }

  void install_cascade(const haar::HaarCascade& cascade);
  std::optional<haar::HaarCascade> cascade() const;

  // Pretrained embedder that training fine-tunes instead of starting from
  // random weights. Used when its input size matches the enrolled chips.
  void install_base_embedder(const nn::Network& net);
  std::optional<nn::Network> base_embedder() const;

  // Captures with the installed cascade; ModelsNotReady without one.
  enroll::CaptureResult capture_sample(const std::string& person_id, const AnyImage& frame);

  // Builds training sets from ready persons, trains embedder and head,
  // persists both and makes them live for new frames.
  TrainMetrics train(const TrainConfig& config);

  bool models_ready() const { return attendance_->models() != nullptr; }

 private:
  void load_models();
  void put_model_doc(const std::string& id, const db::Json& body);

  std::filesystem::path data_root_;
  AppConfig config_;
  std::unique_ptr<db::DocStore> store_;
  std::unique_ptr<enroll::Enrollment> enrollment_;
  std::unique_ptr<attend::AttendanceEngine> attendance_;
  mutable std::mutex mu_;
  std::optional<haar::HaarCascade> cascade_;
  std::optional<nn::Network> base_embedder_;
  std::mutex train_mu_;
};

// Decimal rendering that parses back to the same double.
std::string exact_decimal(double v);

}  // namespace presencia
