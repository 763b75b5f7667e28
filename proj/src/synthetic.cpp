#include "presencia/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "presencia/siamese.hpp"

namespace presencia::synth {

namespace fs = std::filesystem;

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<Rgb, 6> kSkins{{{235, 200, 170},
                                     {175, 215, 240},
                                     {230, 228, 150},
                                     {195, 240, 190},
                                     {245, 185, 215},
                                     {215, 200, 255}}};
constexpr std::array<Rgb, 6> kHair{{{45, 25, 10}, {15, 20, 70}, {80, 40, 5}, {20, 60, 20}, {70, 10, 45}, {10, 10, 10}}};
constexpr std::array<Rgb, 6> kMarkColours{
    {{160, 40, 40}, {40, 130, 50}, {50, 60, 170}, {150, 120, 20}, {120, 40, 150}, {30, 140, 140}}};
constexpr std::array<std::uint32_t, 6> kMarkSets{0b000101, 0b011010, 0b100011, 0b110100, 0b001110, 0b101001};

struct FracRect {
  double x0, y0, x1, y1;
};

// Marks in face-relative coordinates: forehead, both cheeks, chin, brow
// bar, nose.
constexpr std::array<FracRect, 6> kMarkRects{{{0.40, 0.24, 0.60, 0.32},
                                              {0.10, 0.52, 0.28, 0.64},
                                              {0.72, 0.52, 0.90, 0.64},
                                              {0.38, 0.84, 0.62, 0.95},
                                              {0.16, 0.30, 0.84, 0.34},
                                              {0.45, 0.50, 0.55, 0.64}}};

void fill(RgbImage& img, const Rect& box, const FracRect& f, const Rgb& c) {
  const auto at = [](int origin, int size, double frac) {
    return origin + static_cast<int>(std::lround(frac * size));
  };
  const int x0 = std::max(0, at(box.x, box.w, f.x0));
  const int y0 = std::max(0, at(box.y, box.h, f.y0));
  const int x1 = std::min(img.width(), at(box.x, box.w, f.x1));
  const int y1 = std::min(img.height(), at(box.y, box.h, f.y1));
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
    }
  }
}

std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

GrayImage gray_crop(const GrayImage& g, const Rect& r, int base) {
  auto c = crop(g, r);
  return r.w == base && r.h == base ? c : resize_bilinear(c, base, base);
}

// Up to `count` non-overlapping face boxes with sizes from the ladder.
std::vector<Rect> place_boxes(int w, int h, int count, Rng& rng) {
  std::vector<Rect> boxes;
  for (int attempt = 0; attempt < 40 && static_cast<int>(boxes.size()) < count; ++attempt) {
    const int side = kLadder[static_cast<std::size_t>(uniform_int(rng, 0, 5))];
    if (side > w || side > h) continue;
    const Rect r{uniform_int(rng, 0, w - side), uniform_int(rng, 0, h - side), side, side};
    const bool clear = std::none_of(boxes.begin(), boxes.end(), [&](const Rect& b) {
      return r.x < b.x + b.w + 4 && b.x < r.x + r.w + 4 && r.y < b.y + b.h + 4 && b.y < r.y + r.h + 4;
    });
    if (clear) boxes.push_back(r);
  }
  return boxes;
}

}  // namespace

int uniform_int(Rng& rng, int lo, int hi) {
  // explicit arithmetic keeps results identical across standard libraries
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

Identity random_identity(Rng& rng) {
  Identity id;
  for (int ch = 0; ch < 3; ++ch) {
    id.skin[ch] = static_cast<std::uint8_t>(uniform_int(rng, 160, 255));
    id.hair[ch] = static_cast<std::uint8_t>(uniform_int(rng, 0, 90));
    id.mark[ch] = static_cast<std::uint8_t>(uniform_int(rng, 20, 170));
  }
  id.marks = static_cast<std::uint32_t>(uniform_int(rng, 0, 63));
  return id;
}

Identity identity(int k) {
  const auto i = static_cast<std::size_t>(k) % kSkins.size();
  return {kSkins[i], kHair[i], kMarkColours[i], kMarkSets[i]};
}

RgbImage background(int w, int h, Rng& rng) {
  RgbImage img(w, h);
  Rgb base;
  for (auto& c : base) c = static_cast<std::uint8_t>(uniform_int(rng, 50, 120));
  const int gx = uniform_int(rng, -30, 30);
  const int gy = uniform_int(rng, -30, 30);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int shade = (gx * x) / std::max(1, w) + (gy * y) / std::max(1, h);
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = clamp_u8(base[ch] + shade);
    }
  }
  // clutter: furniture-like blocks and bars
  const int blocks = uniform_int(rng, 2, 6);
  for (int i = 0; i < blocks; ++i) {
    const int bw = uniform_int(rng, 3, std::max(3, w / 3));
    const int bh = uniform_int(rng, 3, std::max(3, h / 3));
    const Rect r{uniform_int(rng, 0, std::max(0, w - bw)), uniform_int(rng, 0, std::max(0, h - bh)), bw, bh};
    Rgb c;
    for (auto& v : c) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
    fill(img, r, {0, 0, 1, 1}, c);
  }
  return img;
}

void draw_face(RgbImage& img, const Rect& box, const Identity& who) {
  fill(img, box, {0.0, 0.0, 1.0, 1.0}, who.skin);
  fill(img, box, {0.0, 0.0, 1.0, 0.22}, who.hair);
  for (std::size_t i = 0; i < kMarkRects.size(); ++i) {
    if (who.marks & (1u << i)) fill(img, box, kMarkRects[i], who.mark);
  }
  const Rgb eye{20, 20, 25};
  fill(img, box, {0.18, 0.38, 0.40, 0.48}, eye);
  fill(img, box, {0.60, 0.38, 0.82, 0.48}, eye);
  fill(img, box, {0.30, 0.70, 0.70, 0.78}, {70, 15, 20});
}

void add_noise(RgbImage& img, Rng& rng, int amplitude) {
  if (amplitude <= 0) return;
  for (auto& p : img.pixels()) p = clamp_u8(p + uniform_int(rng, -amplitude, amplitude));
}

RgbImage render_frame(int w, int h, const std::vector<FacePlacement>& faces, std::uint64_t seed, int noise) {
  Rng rng(seed);
  RgbImage img = background(w, h, rng);
  for (const auto& f : faces) draw_face(img, f.box, f.who);
  add_noise(img, rng, noise);
  return img;
}

GrayImage face_window(Rng& rng, int base) {
  const int side = kLadder[static_cast<std::size_t>(uniform_int(rng, 0, 6))];
  const int pad = side / 2;
  const int canvas = side + 2 * pad;
  const Identity who = uniform_int(rng, 0, 1) ? identity(uniform_int(rng, 0, 5)) : random_identity(rng);
  RgbImage img = background(canvas, canvas, rng);
  draw_face(img, {pad, pad, side, side}, who);
  add_noise(img, rng, uniform_int(rng, 0, 12));
  // jitter roughly the size of the detector's stride and scale step
  const int win = std::max(base, static_cast<int>(std::lround(side * (0.93 + 0.14 * (rng() % 1001) / 1000.0))));
  const int slack = std::max(1, side / 16);
  const int x = std::clamp(pad + (side - win) / 2 + uniform_int(rng, -slack, slack), 0, canvas - win);
  const int y = std::clamp(pad + (side - win) / 2 + uniform_int(rng, -slack, slack), 0, canvas - win);
  return gray_crop(to_gray(img), {x, y, win, win}, base);
}

std::vector<GrayImage> detector_positives(std::size_t n, std::uint64_t seed, int base) {
  Rng rng(seed);
  std::vector<GrayImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(face_window(rng, base));
  return out;
}

GrayImage clutter_window(Rng& rng, int base) {
  const int side = base * uniform_int(rng, 1, 3);
  RgbImage img = background(side, side, rng);
  add_noise(img, rng, uniform_int(rng, 0, 20));
  return gray_crop(to_gray(img), {0, 0, side, side}, base);
}

std::vector<GrayImage> detector_negatives(std::size_t n, std::uint64_t seed, int base) {
  Rng rng(seed);
  std::vector<GrayImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(clutter_window(rng, base));
  return out;
}

haar::NegativeMiner frame_miner(std::uint64_t seed, std::size_t frame_budget) {
  auto rng = std::make_shared<Rng>(seed);
  auto frames_used = std::make_shared<std::size_t>(0);
  return [rng, frames_used, frame_budget](const haar::HaarCascade& cascade, std::size_t want) {
    std::vector<GrayImage> out;
    const int base = cascade.base_w;
    while (out.size() < want && *frames_used < frame_budget) {
      ++*frames_used;
      const int w = uniform_int(*rng, 64, 128);
      const int h = uniform_int(*rng, 64, 112);
      std::vector<FacePlacement> faces;
      for (const auto& box : place_boxes(w, h, uniform_int(*rng, 0, 2), *rng)) {
        faces.push_back({box, uniform_int(*rng, 0, 1) ? identity(uniform_int(*rng, 0, 5)) : random_identity(*rng)});
      }
      const GrayImage gray = to_gray(render_frame(w, h, faces, (*rng)(), uniform_int(*rng, 0, 12)));
      std::vector<Rect> hits;
      for (const auto& d : haar::detect_multiscale(gray, cascade)) {
        const bool near_face = std::any_of(faces.begin(), faces.end(),
                                           [&](const FacePlacement& f) { return haar::iou(d.box, f.box) >= 0.4; });
        if (!near_face) hits.push_back(d.box);
      }
      // a few per frame keeps the negative set diverse
      for (int k = 0; k < 6 && !hits.empty() && out.size() < want; ++k) {
        const std::size_t i = (*rng)() % hits.size();
        out.push_back(gray_crop(gray, hits[i], base));
        hits[i] = hits.back();
        hits.pop_back();
      }
    }
    return out;
  };
}

haar::HaarCascade train_fixture_cascade(std::uint64_t seed) {
  const auto positives = detector_positives(600, seed * 1000 + 1);
  const auto bank = haar::generate_feature_bank(24, 24, 2, 20000);
  haar::CascadeTrainConfig cfg;
  cfg.rounds_per_stage = {5, 10, 20, 30, 40};
  cfg.negatives_per_stage = 600;
  return haar::train_cascade(positives, frame_miner(seed * 1000 + 2), bank, cfg);
}

RgbImage identity_chip(const Identity& who, int size, Rng& rng, int noise) {
  const int pad = std::max(2, size / 8);
  const int canvas = size + 2 * pad;
  RgbImage img = background(canvas, canvas, rng);
  draw_face(img, {pad, pad, size, size}, who);
  add_noise(img, rng, noise);
  const int slack = std::max(1, size / 16);
  const int x = pad + uniform_int(rng, -slack, slack);
  const int y = pad + uniform_int(rng, -slack, slack);
  return crop(img, {x, y, size, size});
}

nn::Network train_fixture_embedder(const PretrainConfig& config) {
  Rng rng(config.seed);
  std::vector<std::vector<siamese::ChipRef>> by_identity;
  for (int i = 0; i < config.identities; ++i) {
    const Identity who = random_identity(rng);
    auto& chips = by_identity.emplace_back();
    for (int j = 0; j < config.chips_per_identity; ++j) {
      chips.push_back(std::make_shared<const siamese::FaceChip>(
          siamese::chip_from_image(identity_chip(who, config.chip_size, rng, 6))));
    }
  }
  std::vector<siamese::PairSample> pairs;
  for (const auto& chips : by_identity) {
    for (std::size_t a = 0; a < chips.size(); ++a) {
      for (std::size_t b = a + 1; b < chips.size(); ++b) pairs.push_back({chips[a], chips[b], 1});
    }
  }
  const std::size_t positives = pairs.size();
  const auto n = static_cast<std::uint64_t>(config.identities);
  const auto per = static_cast<std::uint64_t>(config.chips_per_identity);
  for (std::size_t k = 0; k < positives; ++k) {
    const auto a = rng() % n;
    auto b = rng() % (n - 1);
    if (b >= a) ++b;
    pairs.push_back({by_identity[a][rng() % per], by_identity[b][rng() % per], 0});
  }
  siamese::SiameseHyper hyper;
  hyper.epochs = config.epochs;
  return siamese::train_siamese(pairs, siamese::default_embedder_spec(), hyper);
}

namespace {

constexpr int kFrameW = 160;
constexpr int kFrameH = 120;

struct Appearance {
  int person;  // index into enrolled, or -1 for the stranger
  int first;
  int last;
};

// Who is on camera during which seconds of the session.
constexpr std::array<Appearance, 6> kScript{
    {{0, 0, 14}, {0, 30, 44}, {1, 20, 29}, {1, 35, 59}, {-1, 5, 12}, {-1, 50, 57}}};

}  // namespace

Scenario demo_scenario(int samples) {
  Scenario s;
  s.enrolled = {{"p001", "Ada Lovelace", identity(0)},
                {"p002", "Turing, Alan", identity(1)},
                {"p003", "Grace \"Amazing\" Hopper", identity(2)}};
  s.stranger = identity(4);
  Rng rng(20240601);
  for (std::size_t p = 0; p < s.enrolled.size(); ++p) {
    auto& frames = s.enrollment_frames.emplace_back();
    for (int i = 0; i < samples; ++i) {
      const int side = kLadder[static_cast<std::size_t>(uniform_int(rng, 3, 5))];
      const Rect box{uniform_int(rng, 0, kFrameW - side), uniform_int(rng, 0, kFrameH - side), side, side};
      frames.push_back(render_frame(kFrameW, kFrameH, {{box, s.enrolled[p].who}}, rng()));
    }
  }

  s.session_start = parse_utc("2024-03-04T09:00:00Z");
  for (int t = 0; t < 60; ++t) {
    ScriptedFrame f;
    f.timestamp = s.session_start + t;
    std::vector<FacePlacement> faces;
    // fixed slots: first person left, second middle, stranger right
    for (const auto& a : kScript) {
      if (t < a.first || t > a.last) continue;
      const int slot = a.person < 0 ? 2 : a.person;
      const Rect box{2 + slot * 53 + uniform_int(rng, 0, 2), 30 + uniform_int(rng, -6, 6), 50, 50};
      faces.push_back({box, a.person < 0 ? s.stranger : s.enrolled[static_cast<std::size_t>(a.person)].who});
      f.present.push_back(a.person < 0 ? "stranger" : s.enrolled[static_cast<std::size_t>(a.person)].id);
    }
    f.image = render_frame(kFrameW, kFrameH, faces, rng());
    s.session.push_back(std::move(f));
  }
  return s;
}

void write_scenario(const Scenario& s, const fs::path& dir) {
  char name[32];
  for (std::size_t p = 0; p < s.enrolled.size(); ++p) {
    const fs::path d = dir / "enroll" / s.enrolled[p].id;
    fs::create_directories(d);
    for (std::size_t i = 0; i < s.enrollment_frames[p].size(); ++i) {
      std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
      write_pnm_file((d / name).string(), s.enrollment_frames[p][i]);
    }
  }
  fs::create_directories(dir / "session");
  for (std::size_t i = 0; i < s.session.size(); ++i) {
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
    write_pnm_file((dir / "session" / name).string(), s.session[i].image);
  }
}

}  // namespace presencia::synth
