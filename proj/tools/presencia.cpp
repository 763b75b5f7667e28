// Command-line front end: run the HTTP service, or drive enrollment,
// training and sessions headless from directories of PNM frames.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

#include "CLI11.hpp"
#include "httplib.h"
#include "presencia/app.hpp"
#include "presencia/service.hpp"
#include "presencia/synthetic.hpp"

namespace fs = std::filesystem;
using namespace presencia;

namespace {

std::vector<fs::path> frames_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::NotFound, "no such directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path default_data_root() {
  const char* env = std::getenv("PRESENCIA_DATA_ROOT");
  return env && *env ? fs::path(env) : fs::path("presencia-data");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"presencia: face-recognition attendance engine"};
  cli.require_subcommand(1);

  fs::path data_root = default_data_root();
  int k_min = enroll::kDefaultSamples;
  int chip_size = siamese::kChipSize;
  cli.add_option("--data-root", data_root, "data directory (default: $PRESENCIA_DATA_ROOT)");
  cli.add_option("--k-min", k_min, "samples required to finalize an enrollment")->check(CLI::PositiveNumber);
  cli.add_option("--chip-size", chip_size, "face chip side in pixels")->check(CLI::Range(8, 512));

  auto* serve = cli.add_subcommand("serve", "run the HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1";
  serve->add_option("--port", port, "listen port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "listen address");

  auto* train = cli.add_subcommand("train", "train embedder and classifier on ready persons");
  TrainConfig train_cfg;
  train->add_option("--epochs", train_cfg.siamese.epochs, "siamese epochs");
  train->add_option("--head-epochs", train_cfg.head.epochs, "classifier epochs");
  train->add_option("--theta", train_cfg.head.theta, "rejection threshold")->check(CLI::Range(0.0, 1.0));

  auto* enroll_cmd = cli.add_subcommand("enroll", "register a person from a directory of frames");
  std::string person_id;
  std::string person_name;
  fs::path frames_dir;
  enroll_cmd->add_option("--id", person_id, "person id")->required();
  enroll_cmd->add_option("--name", person_name, "display name")->required();
  enroll_cmd->add_option("--frames-dir", frames_dir, "directory of PPM/PGM frames")->required();

  auto* session = cli.add_subcommand("session", "run one attendance session over a directory of frames");
  fs::path csv_out;
  std::string session_name = "session";
  std::int64_t debounce = 30;
  std::string start_iso = "2024-01-01T00:00:00Z";
  std::int64_t interval = 1;
  session->add_option("--frames-dir", frames_dir, "frames in file-name order")->required();
  session->add_option("--out", csv_out, "where to write the CSV")->required();
  session->add_option("--name", session_name, "session name");
  session->add_option("--debounce", debounce, "debounce window in seconds")->check(CLI::NonNegativeNumber);
  session->add_option("--start", start_iso, "timestamp of the first frame (UTC, ISO-8601)");
  session->add_option("--interval", interval, "seconds between frames")->check(CLI::NonNegativeNumber);

  auto* install = cli.add_subcommand("install", "install a face detector and/or pretrained embedder");
  fs::path cascade_file;
  fs::path base_file;
  int base_chip = siamese::kChipSize;
  install->add_option("--cascade", cascade_file, "cascade JSON");
  install->add_option("--base-embedder", base_file, "PRSN weights of the default embedder");
  install->add_option("--base-chip-size", base_chip, "input size of --base-embedder");

  auto* fixtures = cli.add_subcommand("fixtures", "train the synthetic detector and pretrained embedder");
  fs::path fixtures_out;
  fixtures->add_option("--out", fixtures_out, "output directory")->required();

  auto* demo = cli.add_subcommand("demo-frames", "write the synthetic demo scenario as PPM frames");
  fs::path demo_out;
  int demo_samples = enroll::kDefaultSamples;
  demo->add_option("--out", demo_out, "output directory")->required();
  demo->add_option("--samples", demo_samples, "enrollment frames per person")->check(CLI::PositiveNumber);

  CLI11_PARSE(cli, argc, argv);

  try {
    if (*fixtures) {
      fs::create_directories(fixtures_out);
      std::cerr << "training detector cascade...\n";
      std::ofstream(fixtures_out / "cascade.json") << haar::save_cascade(synth::train_fixture_cascade());
      std::cerr << "pretraining embedder at " << chip_size << " px...\n";
      synth::PretrainConfig pc;
      pc.chip_size = chip_size;
      const auto bytes = nn::save_weights(synth::train_fixture_embedder(pc));
      std::ofstream(fixtures_out / "embedder_base.prsn", std::ios::binary)
          .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      return 0;
    }
    if (*demo) {
      synth::write_scenario(synth::demo_scenario(demo_samples), demo_out);
      return 0;
    }

    AppConfig app_cfg;
    app_cfg.enrollment.k_min = k_min;
    app_cfg.enrollment.chip_size = chip_size;
    App app(data_root, app_cfg);

    if (*install) {
      if (!cascade_file.empty()) app.install_cascade(haar::load_cascade(slurp(cascade_file)));
      if (!base_file.empty()) {
        const std::string raw = slurp(base_file);
        const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
        app.install_base_embedder(
            nn::load_weights(bytes, siamese::default_embedder_spec(), siamese::chip_shape(base_chip)));
      }
    } else if (*serve) {
      service::Service svc(app, train_cfg);
      httplib::Server server;
      svc.bind(server);
      std::cerr << "listening on " << host << ":" << port << ", data root " << data_root << "\n";
      if (!server.listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on port " + std::to_string(port));
    } else if (*train) {
      std::cout << app.train(train_cfg).to_json().dump(2) << "\n";
    } else if (*enroll_cmd) {
      if (!app.enrollment().person(person_id)) app.enrollment().register_person(person_id, person_name);
      for (const auto& f : frames_in(frames_dir)) {
        try {
          const auto r = app.capture_sample(person_id, read_pnm_file(f.string()));
          std::cerr << f.filename().string() << ": sample " << r.sample_count << "\n";
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NoFace && e.code() != ErrorCode::MultipleFaces) throw;
          std::cerr << f.filename().string() << ": skipped (" << error_code_name(e.code()) << ")\n";
        }
      }
      std::cout << app.enrollment().finalize(person_id).to_json().dump() << "\n";
    } else if (*session) {
      Timestamp t = parse_utc(start_iso);
      const auto s = app.attendance().start_session(session_name, debounce, t);
      for (const auto& f : frames_in(frames_dir)) {
        for (const auto& ev : app.attendance().process_frame(s.session_id, read_pnm_file(f.string()), t)) {
          std::cout << ev.to_json().dump() << "\n";
        }
        t += interval;
      }
      const auto summary = app.attendance().end_session(s.session_id);
      fs::copy_file(summary.export_path, csv_out, fs::copy_options::overwrite_existing);
      std::cerr << s.session_id << ": " << summary.persons_marked << " persons marked, CSV at " << csv_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
