#pragma once

// Deterministic synthetic faces, frames and scenarios. A "face" is a bright
// square with a dark hair band, two dark eyes and a dark mouth; identity is
// carried by skin tint, hair colour and a set of small marks. Everything is a
// pure function of its seed.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "presencia/haar.hpp"
#include "presencia/image.hpp"
#include "presencia/nn.hpp"
#include "presencia/timeutil.hpp"

namespace presencia::synth {

using Rng = std::mt19937_64;

struct Identity {
  std::array<std::uint8_t, 3> skin{};
  std::array<std::uint8_t, 3> hair{};
  std::array<std::uint8_t, 3> mark{};
  std::uint32_t marks = 0;  // bit i turns on mark i (six marks)
  friend bool operator==(const Identity&, const Identity&) = default;
};

// Identity number k of a fixed, well-separated family of six; k wraps.
Identity identity(int k);

// Anything from the face colour space; used for pretraining and clutter.
Identity random_identity(std::mt19937_64& rng);

// Detection windows of the default 24 px cascade at scale factor 1.2.
inline constexpr std::array<int, 7> kLadder{24, 29, 35, 41, 50, 60, 72};

struct FacePlacement {
  Rect box;
  Identity who;
};

int uniform_int(Rng& rng, int lo, int hi);  // inclusive

RgbImage background(int w, int h, Rng& rng);
void draw_face(RgbImage& img, const Rect& box, const Identity& who);
void add_noise(RgbImage& img, Rng& rng, int amplitude);

// Background plus faces plus per-pixel noise, all from `seed`.
RgbImage render_frame(int w, int h, const std::vector<FacePlacement>& faces, std::uint64_t seed,
                      int noise = 6);

// Base-size gray detector positives: a face cropped with small offset and
// scale jitter from a rendered frame.
GrayImage face_window(Rng& rng, int base = 24);
std::vector<GrayImage> detector_positives(std::size_t n, std::uint64_t seed, int base = 24);

// Base-size gray non-faces: background texture and clutter.
GrayImage clutter_window(Rng& rng, int base = 24);
std::vector<GrayImage> detector_negatives(std::size_t n, std::uint64_t seed, int base = 24);

// Hard-negative miner over random frames: windows the partial cascade accepts
// that overlap no true face by IoU >= 0.4. Gives up after `frame_budget`
// frames.
haar::NegativeMiner frame_miner(std::uint64_t seed, std::size_t frame_budget = 4000);

// The cascade used by fixtures and the demo commands.
haar::HaarCascade train_fixture_cascade(std::uint64_t seed = 1);

// A square chip of one identity with jitter and noise, for embedder tests.
RgbImage identity_chip(const Identity& who, int size, Rng& rng, int noise = 12);

struct PretrainConfig {
  int chip_size = 160;
  int identities = 60;
  int chips_per_identity = 4;
  int epochs = 20;
  std::uint64_t seed = 5;
};

// Stand-in for a large-scale pretrained face embedder: the default embedder
// trained on many random synthetic identities.
nn::Network train_fixture_embedder(const PretrainConfig& config = {});

// Scripted attendance scenario: a few enrolled people, a stranger, enrollment
// frames per person, and a timed session.
struct Person {
  std::string id;
  std::string name;
  Identity who;
};

struct ScriptedFrame {
  Timestamp timestamp = 0;
  std::vector<std::string> present;  // person ids or "stranger", in box order
  RgbImage image;
};

struct Scenario {
  std::vector<Person> enrolled;
  Identity stranger;
  std::vector<std::vector<RgbImage>> enrollment_frames;  // per enrolled person
  std::vector<ScriptedFrame> session;
  Timestamp session_start = 0;
};

// 3 people, `samples` enrollment frames each, 60 session frames one second
// apart in which the first two people and the stranger come and go.
Scenario demo_scenario(int samples = 5);

// Writes enroll/<id>/frame_NNN.ppm and session/frame_NNN.ppm.
void write_scenario(const Scenario& s, const std::filesystem::path& dir);

}  // namespace presencia::synth
