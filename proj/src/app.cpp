#include "presencia/app.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>

namespace presencia {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const void* data, std::size_t n) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

// strtod rather than stod: subnormals must load too.
double parse_decimal(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw Error(ErrorCode::ParseError, "bad decimal '" + s + "'");
  return v;
}

std::string read_text(const fs::path& p) {
  const auto bytes = read_bytes(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

std::string exact_decimal(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TrainConfig TrainConfig::from_json(const db::Json& s, const db::Json& h) {
  TrainConfig c;
  if (s.is_object()) {
    c.siamese.epochs = s.value("epochs", c.siamese.epochs);
    c.siamese.lr = s.value("lr", c.siamese.lr);
    c.siamese.batch = s.value("batch", c.siamese.batch);
    c.siamese.margin = s.value("margin", c.siamese.margin);
    c.siamese.seed = s.value("seed", c.siamese.seed);
    c.pair_seed = s.value("pair_seed", c.pair_seed);
  }
  if (h.is_object()) {
    c.head.epochs = h.value("epochs", c.head.epochs);
    c.head.lr = h.value("lr", c.head.lr);
    c.head.hidden = h.value("hidden", c.head.hidden);
    c.head.batch = h.value("batch", c.head.batch);
    c.head.seed = h.value("seed", c.head.seed);
    c.head.theta = h.value("theta", c.head.theta);
  }
  return c;
}

db::Json TrainMetrics::to_json() const {
  return {{"persons", persons},
          {"chips", chips},
          {"pairs", pairs},
          {"mean_same_distance", mean_same_distance},
          {"mean_different_distance", mean_different_distance},
          {"tau", tau},
          {"verify_accuracy", verify_accuracy},
          {"head_train_accuracy", head_train_accuracy}};
}

App::App(fs::path data_root, AppConfig config) : data_root_(std::move(data_root)), config_(config) {
  store_ = db::DocStore::open(data_root_ / "db");
  enrollment_ = std::make_unique<enroll::Enrollment>(*store_, data_root_, config_.enrollment);
  attendance_ = std::make_unique<attend::AttendanceEngine>(*store_, data_root_, config_.pipeline);
  load_models();
}

void App::load_models() {
  const fs::path cascade_path = data_root_ / "models" / "cascade.json";
  if (fs::exists(cascade_path)) {
    const auto bytes = read_bytes(cascade_path);
    cascade_ = haar::load_cascade(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  const fs::path base_path = data_root_ / "models" / "embedder_base.prsn";
  if (const auto doc = store_->get(db::Collection::Models, "embedder_base"); doc && fs::exists(base_path)) {
    base_embedder_ = nn::load_weights(read_bytes(base_path), siamese::default_embedder_spec(),
                                      siamese::chip_shape(doc->body.at("chip_size").get<int>()));
  }
  const auto emb_doc = store_->get(db::Collection::Models, "embedder");
  const auto head_doc = store_->get(db::Collection::Models, "head");
  if (!cascade_ || !emb_doc || !head_doc) return;

  auto bundle = std::make_shared<attend::ModelBundle>();
  bundle->cascade = *cascade_;
  bundle->chip_size = emb_doc->body.at("chip_size").get<int>();
  bundle->tau = parse_decimal(emb_doc->body.at("tau").get<std::string>());
  bundle->embedder = nn::load_weights(read_bytes(data_root_ / "models" / "embedder.prsn"),
                                      siamese::default_embedder_spec(), siamese::chip_shape(bundle->chip_size));
  auto& head = bundle->head;
  head.class_ids = head_doc->body.at("class_ids").get<std::vector<std::string>>();
  head.theta = parse_decimal(head_doc->body.at("theta").get<std::string>());
  head.hidden = head_doc->body.at("hidden").get<int>();
  head.net = nn::load_weights(read_bytes(data_root_ / "models" / "head.prsn"),
                              classifier::head_spec(head.hidden, static_cast<int>(head.class_ids.size())),
                              {siamese::kEmbeddingDim});
  const auto gallery = db::Json::parse(read_text(data_root_ / "models" / "gallery.json"));
  bundle->gallery_ids = gallery.at("ids").get<std::vector<std::string>>();
  for (const auto& row : gallery.at("embeddings")) bundle->gallery.push_back({row.get<std::vector<float>>()});
  attendance_->set_models(std::move(bundle));
}

void App::install_cascade(const haar::HaarCascade& cascade) {
  const std::string text = haar::save_cascade(cascade);
  write_bytes(data_root_ / "models" / "cascade.json", text.data(), text.size());
  std::lock_guard lock(mu_);
  cascade_ = cascade;
  if (auto current = attendance_->models()) {
    auto updated = std::make_shared<attend::ModelBundle>(*current);
    updated->cascade = cascade;
    attendance_->set_models(std::move(updated));
  }
}

void App::put_model_doc(const std::string& id, const db::Json& body) {
  if (store_->get(db::Collection::Models, id)) store_->update(db::Collection::Models, {id, body});
  else store_->insert(db::Collection::Models, {id, body});
}

void App::install_base_embedder(const nn::Network& net) {
  const auto bytes = nn::save_weights(net);
  write_bytes(data_root_ / "models" / "embedder_base.prsn", bytes.data(), bytes.size());
  put_model_doc("embedder_base", {{"chip_size", net.input_shape.at(1)}});
  std::lock_guard lock(mu_);
  base_embedder_ = net;
}

std::optional<nn::Network> App::base_embedder() const {
  std::lock_guard lock(mu_);
  return base_embedder_;
}

std::optional<haar::HaarCascade> App::cascade() const {
  std::lock_guard lock(mu_);
  return cascade_;
}

enroll::CaptureResult App::capture_sample(const std::string& person_id, const AnyImage& frame) {
  const auto c = cascade();
  if (!c) throw Error(ErrorCode::ModelsNotReady, "no face detector installed");
  return enrollment_->capture_sample(person_id, frame, *c);
}

TrainMetrics App::train(const TrainConfig& config) {
  std::lock_guard train_lock(train_mu_);
  const auto c = cascade();
  if (!c) throw Error(ErrorCode::ModelsNotReady, "no face detector installed");

  const auto sets = enroll::build_training_sets(*store_, data_root_, config.pair_seed);
  const int chip_size = sets.labeled.front().chip->tensor.dim(1);

  auto bundle = std::make_shared<attend::ModelBundle>();
  bundle->cascade = *c;
  bundle->chip_size = chip_size;
  const auto base = base_embedder();
  if (base && base->input_shape == siamese::chip_shape(chip_size)) {
    bundle->embedder = siamese::train_siamese(sets.pairs, *base, config.siamese);
  } else {
    bundle->embedder = siamese::train_siamese(sets.pairs, siamese::default_embedder_spec(), config.siamese);
  }

  TrainMetrics m;
  m.chips = sets.labeled.size();
  m.pairs = sets.pairs.size();
  std::vector<double> distances;
  std::vector<int> labels;
  double same_sum = 0.0, diff_sum = 0.0;
  std::size_t same_n = 0, diff_n = 0;
  for (const auto& p : sets.pairs) {
    const double d = siamese::pair_distance(siamese::embed(bundle->embedder, *p.chip_a),
                                            siamese::embed(bundle->embedder, *p.chip_b));
    distances.push_back(d);
    labels.push_back(p.label);
    (p.label == 1 ? same_sum : diff_sum) += d;
    (p.label == 1 ? same_n : diff_n) += 1;
  }
  m.mean_same_distance = same_n ? same_sum / same_n : 0.0;
  m.mean_different_distance = diff_n ? diff_sum / diff_n : 0.0;
  const auto cal = siamese::calibrate_tau(distances, labels);
  bundle->tau = m.tau = cal.tau;
  m.verify_accuracy = 1.0 - cal.error;

  std::vector<siamese::Embedding> embeddings;
  std::vector<std::string> ids;
  for (const auto& l : sets.labeled) {
    embeddings.push_back(siamese::embed(bundle->embedder, *l.chip));
    ids.push_back(l.person_id);
  }
  bundle->head = classifier::train_head(embeddings, ids, config.head);
  bundle->gallery = embeddings;
  bundle->gallery_ids = ids;
  m.persons = bundle->head.class_ids.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    correct += classifier::predict(bundle->head, embeddings[i]).best_id == ids[i];
  }
  m.head_train_accuracy = static_cast<double>(correct) / static_cast<double>(embeddings.size());

  const auto emb_bytes = nn::save_weights(bundle->embedder);
  write_bytes(data_root_ / "models" / "embedder.prsn", emb_bytes.data(), emb_bytes.size());
  const auto head_bytes = nn::save_weights(bundle->head.net);
  write_bytes(data_root_ / "models" / "head.prsn", head_bytes.data(), head_bytes.size());

  db::Json gallery{{"ids", ids}, {"embeddings", db::Json::array()}};
  for (const auto& e : embeddings) gallery["embeddings"].push_back(e.values);
  const std::string gallery_text = gallery.dump() + "\n";
  write_bytes(data_root_ / "models" / "gallery.json", gallery_text.data(), gallery_text.size());

  const db::Json emb_meta{{"tau", exact_decimal(bundle->tau)}, {"chip_size", chip_size}, {"seed", config.siamese.seed}};
  const db::Json head_meta{{"class_ids", bundle->head.class_ids},
                           {"theta", exact_decimal(bundle->head.theta)},
                           {"hidden", bundle->head.hidden}};
  put_model_doc("embedder", emb_meta);
  put_model_doc("head", head_meta);
  attendance_->set_models(std::move(bundle));
  return m;
}

}  // namespace presencia
