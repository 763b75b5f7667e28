#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "presencia/haar.hpp"
#include "support.hpp"

using namespace presencia;
using namespace presencia::haar;
using namespace testing_support;

namespace {

void expect_code(ErrorCode code, const std::function<void()>& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << error_code_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

HaarFeature left_right(int x, int y, int half_w, int h) {
  return {{{{x, y, half_w, h}, -1.0}, {{x + half_w, y, half_w, h}, 1.0}}};
}

// One weak classifier that always fires (threshold at the top sentinel).
HaarCascade vacuous_cascade(double stage_threshold = 0.0) {
  WeakClassifier wc{left_right(0, 0, 12, 24), kPosSentinel, 1, 1.0};
  return {24, 24, {{{wc}, stage_threshold}}};
}

GrayImage split_image(int w, int h, int cut, std::uint8_t left, std::uint8_t right) {
  GrayImage g(w, h, left);
  for (int y = 0; y < h; ++y)
    for (int x = cut; x < w; ++x) g.at(x, y) = right;
  return g;
}

// O(n^2) stump oracle: every candidate threshold, both polarities, errors
// summed directly; first strict improvement wins, scanning thresholds upward
// and polarity +1 before -1.
StumpFit brute_stump(const std::vector<double>& v, const std::vector<int>& y, const std::vector<double>& w) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{kNegSentinel};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(kPosSentinel);
  StumpFit best{0.0, 1, std::numeric_limits<double>::infinity()};
  for (double t : candidates) {
    for (int p : {1, -1}) {
      double err = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const int predicted = p * v[i] < p * t ? 1 : -1;
        if (predicted != y[i]) err += w[i];
      }
      if (err < best.weighted_error - kStumpTieTolerance) best = {t, p, err};
    }
  }
  return best;
}

double stage_accuracy(const CascadeStage& stage, const std::vector<TrainingWindow>& samples) {
  int correct = 0;
  for (const auto& s : samples) {
    const bool accepted = !(stage_response(s.ii, stage, {0, 0, 24, 24}, 24, 24) < stage.threshold);
    correct += accepted == (s.label == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// Bright-right-half positives and flat negatives, with mild noise.
std::vector<TrainingWindow> toy_set(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingWindow> out;
  for (int i = 0; i < 40; ++i) {
    GrayImage g = split_image(24, 24, 12, static_cast<std::uint8_t>(rand_in(rng, 10, 60)),
                              static_cast<std::uint8_t>(rand_in(rng, 150, 240)));
    out.push_back({IntegralImage(g), 1});
    GrayImage n(24, 24, static_cast<std::uint8_t>(rand_in(rng, 0, 255)));
    for (auto& p : n.pixels()) p = static_cast<std::uint8_t>(std::clamp<int>(p + rand_in(rng, -3, 3), 0, 255));
    out.push_back({IntegralImage(n), -1});
  }
  return out;
}

}  // namespace

TEST(Feature, ConstantImageIsExactlyZero) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 2000; ++i) {
    const auto f = random_feature(rng);
    const GrayImage g(64, 64, static_cast<std::uint8_t>(rng() & 0xff));
    const IntegralImage ii(g);
    const int ww = rand_in(rng, 24, 64), wh = rand_in(rng, 24, 64);
    const Rect win{rand_in(rng, 0, 64 - ww), rand_in(rng, 0, 64 - wh), ww, wh};
    ASSERT_EQ(feature_value(ii, f, win), 0.0);
  }
}

TEST(Feature, SignByConstruction) {
  const GrayImage g = split_image(24, 24, 12, 0, 255);
  EXPECT_GT(feature_value(IntegralImage(g), left_right(0, 0, 12, 24), {0, 0, 24, 24}), 0.0);
}

TEST(Feature, RampExample) {
  GrayImage ramp(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) ramp.at(x, y) = static_cast<std::uint8_t>(x);
  // Direct sums: left 2 columns (0+1)*4 = 4, right (2+3)*4 = 20; (20-4)/16.
  EXPECT_DOUBLE_EQ(feature_value(IntegralImage(ramp), left_right(0, 0, 2, 4), {0, 0, 4, 4}, 4, 4), 1.0);
}

TEST(Feature, MatchesPixelOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const GrayImage g = random_gray(rng, rand_in(rng, 24, 64), rand_in(rng, 24, 64));
    const IntegralImage ii(g);
    const auto f = random_feature(rng);
    const int ww = rand_in(rng, 24, g.width()), wh = rand_in(rng, 24, g.height());
    const Rect win{rand_in(rng, 0, g.width() - ww), rand_in(rng, 0, g.height() - wh), ww, wh};
    const double oracle = oracle_feature_value(g, f, win);
    double scale = 0.0;
    for (const auto& r : oracle_scaled_rects(f, win, 24, 24))
      scale += std::abs(r.weight) * static_cast<double>(brute_sum(g, r.r));
    scale /= static_cast<double>(win.area());
    ASSERT_NEAR(feature_value(ii, f, win), oracle, 1e-9 * std::max(std::abs(oracle), scale) + 1e-300);
  }
}

TEST(Feature, WindowMustFit) {
  const IntegralImage ii(GrayImage(30, 30));
  expect_code(ErrorCode::OutOfBounds, [&] { feature_value(ii, left_right(0, 0, 12, 24), {10, 10, 24, 24}); });
  expect_code(ErrorCode::OutOfBounds, [&] { window_stddev(ii, {-1, 0, 24, 24}); });
}

TEST(Stddev, Examples) {
  EXPECT_EQ(window_stddev(IntegralImage(GrayImage(8, 8, 99)), {0, 0, 8, 8}), 1.0);
  GrayImage alt(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) alt.at(x, y) = (x + y) % 2 ? 255 : 0;
  EXPECT_DOUBLE_EQ(window_stddev(IntegralImage(alt), {0, 0, 8, 8}), 127.5);

  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const GrayImage g = random_gray(rng, 32, 32);
    const Rect r = random_rect(rng, 32, 32);
    const double sd = window_stddev(IntegralImage(g), r);
    EXPECT_GE(sd, 1.0);
    EXPECT_NEAR(sd, oracle_stddev(g, r), 1e-9 * sd);
  }
}

TEST(Cascade, VacuousAndRejecting) {
  std::mt19937_64 rng(13);
  const GrayImage g = random_gray(rng, 40, 40);
  const IntegralImage ii(g);
  EXPECT_TRUE(eval_cascade(ii, vacuous_cascade(), {3, 4, 30, 30}).accepted);
  EXPECT_FALSE(eval_cascade(ii, vacuous_cascade(kPosSentinel), {3, 4, 30, 30}).accepted);
}

TEST(Cascade, EarlyExitMatchesExhaustiveOracle) {
  std::mt19937_64 rng(14);
  int accepted = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto c = random_cascade(rng, 2, 6);
    for (int i = 0; i < 100; ++i) {
      const GrayImage g = random_gray(rng, 48, 48);
      const int side = rand_in(rng, 24, 48);
      const Rect w{rand_in(rng, 0, 48 - side), rand_in(rng, 0, 48 - side), side, side};
      const bool got = eval_cascade(IntegralImage(g), c, w).accepted;
      ASSERT_EQ(got, oracle_accepts(g, c, w));
      accepted += got;
    }
  }
  // Both outcomes must actually occur for the comparison to mean anything.
  EXPECT_GT(accepted, 0);
  EXPECT_LT(accepted, 500);
}

TEST(Detect, SingleWindowAndEmpty) {
  const GrayImage g(24, 24, 50);
  const auto all = detect_multiscale(g, vacuous_cascade());
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].box, (Rect{0, 0, 24, 24}));
  EXPECT_TRUE(detect_multiscale(g, vacuous_cascade(kPosSentinel)).empty());
  expect_code(ErrorCode::ImageTooSmall, [] { detect_multiscale(GrayImage(23, 40), vacuous_cascade()); });
}

TEST(Detect, WindowEnumerationMatchesOracle) {
  DetectParams p;
  for (auto [w, h] : {std::pair{24, 24}, {64, 64}, {100, 37}, {160, 120}}) {
    std::vector<Rect> got;
    for (const auto& d : detect_multiscale(GrayImage(w, h), vacuous_cascade(), p)) got.push_back(d.box);
    EXPECT_EQ(got, oracle_windows(w, h, 24, 24, p)) << w << "x" << h;
  }
  p.min_size = 40;
  std::vector<Rect> got;
  for (const auto& d : detect_multiscale(GrayImage(90, 90), vacuous_cascade(), p)) got.push_back(d.box);
  EXPECT_EQ(got, oracle_windows(90, 90, 24, 24, p));
  EXPECT_TRUE(std::all_of(got.begin(), got.end(), [](const Rect& r) { return r.w >= 40; }));
}

TEST(Detect, PlantedPatternFound) {
  GrayImage g(64, 64, 0);
  for (int y = 16; y < 40; ++y)
    for (int x = 32; x < 44; ++x) g.at(x, y) = 255;
  // Fires when value > 0.9 * stddev.
  WeakClassifier wc{left_right(0, 0, 12, 24), 0.9, -1, 1.0};
  const HaarCascade c{24, 24, {{{wc}, 1.0}}};
  const auto dets = detect_multiscale(g, c);
  std::vector<Rect> oracle;
  for (const auto& w : oracle_windows(64, 64, 24, 24, {}))
    if (oracle_accepts(g, c, w)) oracle.push_back(w);
  std::vector<Rect> got;
  for (const auto& d : dets) got.push_back(d.box);
  EXPECT_EQ(got, oracle);
  EXPECT_TRUE(std::any_of(got.begin(), got.end(), [](const Rect& r) {
    return std::abs(r.x - 20) <= 2 && std::abs(r.y - 16) <= 2 && r.w == 24;
  }));
}

TEST(Detect, RandomCascadeMatchesOracle) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 4; ++trial) {
    const auto c = random_cascade(rng, 3, 4);
    const GrayImage g = random_gray(rng, 48, 40);
    std::vector<Rect> oracle;
    for (const auto& w : oracle_windows(48, 40, 24, 24, {}))
      if (oracle_accepts(g, c, w)) oracle.push_back(w);
    std::vector<Rect> got;
    for (const auto& d : detect_multiscale(g, c)) got.push_back(d.box);
    EXPECT_EQ(got, oracle);
  }
}

TEST(Detect, Deterministic) {
  std::mt19937_64 rng(16);
  const auto c = random_cascade(rng, 2, 5);
  const GrayImage g = random_gray(rng, 64, 64);
  EXPECT_EQ(detect_multiscale(g, c), detect_multiscale(g, c));
}

TEST(Nms, Examples) {
  const Detection a{{0, 0, 10, 10}, 2.0};
  const Detection b{{0, 0, 10, 10}, 1.0};
  const Detection far{{50, 50, 10, 10}, 1.5};
  EXPECT_EQ(nms({a}), std::vector<Detection>{a});
  EXPECT_EQ(nms({b, a}), std::vector<Detection>{a});
  EXPECT_EQ(nms({b, far}), (std::vector<Detection>{far, b}));
  EXPECT_TRUE(nms({}).empty());
}

TEST(Nms, IouExamples) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
  // Overlap 5x10 = 50, union 150.
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0);
}

TEST(Nms, PermutationInvariantAndSeparated) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 50; ++t) {
    std::vector<Detection> dets;
    for (int i = 0; i < 30; ++i) {
      dets.push_back({random_rect(rng, 60, 60), static_cast<double>(rng() % 5)});
    }
    const auto ref = nms(dets, 0.3);
    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t j = i + 1; j < ref.size(); ++j) EXPECT_LE(iou(ref[i].box, ref[j].box), 0.3);
    std::shuffle(dets.begin(), dets.end(), rng);
    EXPECT_EQ(nms(dets, 0.3), ref);
  }
}

TEST(Stump, Examples) {
  const std::vector<double> w2{0.5, 0.5};
  const auto sep = train_stump(std::vector<double>{0.0, 1.0}, std::vector<int>{-1, 1}, w2);
  EXPECT_EQ(sep.weighted_error, 0.0);

  const std::vector<double> same{3.0, 3.0, 3.0, 3.0};
  const std::vector<int> mixed{1, -1, -1, 1};
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  EXPECT_NEAR(train_stump(same, mixed, w).weighted_error, 0.5, 1e-15);  // min(0.5, 0.5)
  const std::vector<double> w_skew{0.1, 0.2, 0.5, 0.2};
  EXPECT_NEAR(train_stump(same, mixed, w_skew).weighted_error, 0.3, 1e-15);

  expect_code(ErrorCode::DegenerateLabels, [&] { train_stump(same, std::vector<int>{1, 1, 1, 1}, w); });
  expect_code(ErrorCode::DegenerateLabels, [&] { train_stump(same, std::vector<int>{1, 0, -1, 1}, w); });
  expect_code(ErrorCode::InvariantViolation, [] {
    train_stump(std::vector<double>{1.0}, std::vector<int>{1}, std::vector<double>{1.0});
  });
}

TEST(Stump, MatchesBruteForce) {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 300; ++t) {
    const int n = rand_in(rng, 2, 50);
    std::vector<double> v(n), w(n);
    std::vector<int> y(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      v[i] = static_cast<double>(rand_in(rng, -20, 20)) / 4.0;  // plenty of ties
      y[i] = rng() & 1 ? 1 : -1;
      w[i] = static_cast<double>(rand_in(rng, 1, 1000));
      total += w[i];
    }
    y[0] = 1;
    y[1] = -1;
    for (double& x : w) x /= total;
    const StumpFit got = train_stump(v, y, w);
    const StumpFit want = brute_stump(v, y, w);
    ASSERT_NEAR(got.weighted_error, want.weighted_error, 1e-12);
    ASSERT_EQ(got.threshold, want.threshold);
    ASSERT_EQ(got.polarity, want.polarity);
  }
}

TEST(Adaboost, SeparableToySet) {
  const auto samples = toy_set(19);
  const auto bank = generate_feature_bank(24, 24, 4);
  const auto one = adaboost_train(samples, bank, 1);
  ASSERT_EQ(one.weak.size(), 1u);
  EXPECT_EQ(stage_accuracy(one, samples), 1.0);

  const auto three = adaboost_train(samples, bank, 3);
  for (const auto& s : samples) {
    if (s.label == 1) {
      EXPECT_GE(stage_response(s.ii, three, {0, 0, 24, 24}, 24, 24), three.threshold);
    }
  }
  for (const auto& wc : three.weak) EXPECT_GE(wc.alpha, 0.0);
}

TEST(Adaboost, ErrorNonincreasingInRounds) {
  const auto samples = toy_set(20);
  const auto bank = generate_feature_bank(24, 24, 4);
  double prev = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double err = 1.0 - stage_accuracy(adaboost_train(samples, bank, t), samples);
    if (t > 1) {
      EXPECT_LE(err, prev);
    }
    prev = err;
  }
}

TEST(Adaboost, FirstRoundAlphaFromWeightedError) {
  // Oracle: the first round sees uniform weights, so its alpha follows from
  // the best stump error over the bank computed with train_stump directly.
  const auto samples = toy_set(21);
  const auto bank = generate_feature_bank(24, 24, 6);
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  const std::vector<double> w(samples.size(), 1.0 / static_cast<double>(samples.size()));
  double best = 1.0;
  for (const auto& f : bank) {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(feature_value(s.ii, f, {0, 0, 24, 24}) / window_stddev(s.ii, {0, 0, 24, 24}));
    best = std::min(best, train_stump(v, labels, w).weighted_error);
  }
  const double eps = std::clamp(best, 1e-10, 1.0 - 1e-10);
  const auto stage = adaboost_train(samples, bank, 1);
  EXPECT_NEAR(stage.weak[0].alpha, 0.5 * std::log((1.0 - eps) / eps), 1e-9);
}

TEST(Adaboost, Errors) {
  auto samples = toy_set(22);
  const auto bank = generate_feature_bank(24, 24, 4);
  expect_code(ErrorCode::EmptyFeatureBank, [&] { adaboost_train(samples, {}, 1); });
  std::vector<TrainingWindow> pos_only;
  for (const auto& s : samples)
    if (s.label == 1) pos_only.push_back(s);
  expect_code(ErrorCode::DegenerateLabels, [&] { adaboost_train(pos_only, bank, 1); });
}

TEST(FeatureBank, ValidCappedUnique) {
  const auto bank = generate_feature_bank();
  EXPECT_LE(bank.size(), 20000u);
  EXPECT_GT(bank.size(), 1000u);
  for (const auto& f : bank) ASSERT_NO_THROW(validate_feature(f, 24, 24));
  EXPECT_EQ(generate_feature_bank(24, 24, 2, 100).size(), 100u);
  for (std::size_t i = 1; i < 200; ++i) EXPECT_NE(bank[i], bank[i - 1]);
}

TEST(CascadeFile, RoundTrip) {
  std::mt19937_64 rng(23);
  const auto c = random_cascade(rng, 3, 4);
  EXPECT_EQ(load_cascade(save_cascade(c)), c);
  auto edge = vacuous_cascade(kNegSentinel);
  edge.stages[0].weak[0].threshold = kNegSentinel;
  EXPECT_EQ(load_cascade(save_cascade(edge)), edge);
}

TEST(CascadeFile, Rejects) {
  expect_code(ErrorCode::ParseError, [] { load_cascade("{not json"); });
  expect_code(ErrorCode::ParseError, [] { load_cascade(R"({"format_version":2,"base_w":24,"base_h":24,"stages":[]})"); });
  expect_code(ErrorCode::InvariantViolation,
              [] { load_cascade(R"({"format_version":1,"base_w":24,"base_h":24,"stages":[]})"); });
  expect_code(ErrorCode::InvariantViolation, [] {
    load_cascade(R"({"format_version":1,"base_w":24,"base_h":24,"stages":[{"threshold":0,"weak":[
      {"threshold":0,"polarity":1,"alpha":1,"rects":[[0,0,20,24,-1],[20,0,20,24,1]]}]}]})");
  });
  expect_code(ErrorCode::InvariantViolation, [] {
    load_cascade(R"({"format_version":1,"base_w":24,"base_h":24,"stages":[{"threshold":0,"weak":[
      {"threshold":0,"polarity":1,"alpha":1,"rects":[[0,0,12,24,-1],[12,0,12,24,2]]}]}]})");
  });
}

TEST(CascadeTraining, StopsWhenMinerIsEmpty) {
  const auto samples = toy_set(24);
  std::vector<GrayImage> pos;
  for (int i = 0; i < 10; ++i) pos.push_back(split_image(24, 24, 12, 20, 200));
  int calls = 0;
  NegativeMiner miner = [&](const HaarCascade&, std::size_t) {
    ++calls;
    return calls == 1 ? std::vector<GrayImage>(10, GrayImage(24, 24, 100)) : std::vector<GrayImage>{};
  };
  CascadeTrainConfig cfg;
  cfg.rounds_per_stage = {1, 2, 3};
  const auto c = train_cascade(pos, miner, generate_feature_bank(24, 24, 4), cfg);
  EXPECT_EQ(c.stages.size(), 1u);
  EXPECT_EQ(calls, 2);
  NegativeMiner none = [](const HaarCascade&, std::size_t) { return std::vector<GrayImage>{}; };
  expect_code(ErrorCode::DegenerateLabels, [&] { train_cascade(pos, none, generate_feature_bank(24, 24, 4), cfg); });
}
