// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <unistd.h>

#include "evdi/simulator.hpp"
#include "oracles.hpp"
#include "scenes.hpp"

namespace evdi {
namespace {

namespace fs = std::filesystem;
using testing::dense_oracle;
using testing::random_smooth_sequence;

FrameSequence two_frames(double a, double b, Timestamp t1 = 1000) {
  std::vector<Frame> f;
  f.push_back({0, ImageBuffer(1, 1, 1, Domain::Linear, a), std::nullopt});
  f.push_back({t1, ImageBuffer(1, 1, 1, Domain::Linear, b), std::nullopt});
  return FrameSequence(std::move(f));
}

SimulatorConfig config(double theta) {
  SimulatorConfig cfg;
  cfg.thresholds = ThresholdConfig::symmetric(theta);
  return cfg;
}

TEST(Simulate, RampOfTwoThresholdsFiresTwice) {
  const FrameSequence seq = two_frames(0.5, 0.5 * std::exp(0.4));
  const EventStream s = events_from_frames(seq, config(0.2));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.events()[0].t, 500u);
  EXPECT_EQ(s.events()[1].t, 1000u);
  EXPECT_EQ(s.events()[0].p, 1);
  EXPECT_EQ(s.events()[1].p, 1);
}

TEST(Simulate, DownRampFiresNegative) {
  const EventStream s = events_from_frames(two_frames(0.5, 0.5 * std::exp(-0.45)), config(0.2));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.events()[0].p, -1);
  EXPECT_EQ(s.events()[1].p, -1);
  EXPECT_EQ(s.events()[0].t, 445u);  // 0.2 / 0.45 of the interval, rounded up
}

TEST(Simulate, ConstantSignalIsSilent) {
  const EventStream s = events_from_frames(testing::static_scene({}), config(0.2));
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(s.coverage().end, 200000u);
}

TEST(Simulate, HysteresisNeedsFullThreshold) {
  // Up by 0.15, then back down by 0.15: no level is reached either way.
  std::vector<Frame> f;
  for (int k = 0; k < 3; ++k) {
    f.push_back({static_cast<Timestamp>(k) * 1000, ImageBuffer(1, 1, 1, Domain::Linear, 0.5 * std::exp(k == 1 ? 0.15 : 0.0)),
                 std::nullopt});
  }
  EXPECT_TRUE(events_from_frames(FrameSequence(std::move(f)), config(0.2)).empty());
}

TEST(Simulate, MatchesDenseOracle) {
  const FrameSequence seq = random_smooth_sequence(12, 10, 60, 1000, 17);
  const EventStream s = events_from_frames(seq, config(0.2));
  const auto oracle = dense_oracle(seq, 0.2, 100);
  std::size_t total = 0;
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) {
      const auto ours = s.pixel_events(x, y);
      const auto& ref = oracle[static_cast<std::size_t>(y) * 12 + x];
      ASSERT_EQ(ours.size(), ref.size()) << "pixel " << x << "," << y;
      for (std::size_t i = 0; i < ours.size(); ++i) {
        EXPECT_EQ(ours[i].p, ref[i].p);
        const auto dt = static_cast<std::int64_t>(ours[i].t) - static_cast<std::int64_t>(ref[i].t);
        EXPECT_LE(std::abs(dt), 1000);  // one coarse frame interval
        EXPECT_LE(std::abs(dt), 10);    // in practice: one dense step
      }
      total += ours.size();
    }
  }
  EXPECT_GT(total, 500u);
}

TEST(Simulate, ScaleInvariantWithScaledFloor) {
  const FrameSequence seq = random_smooth_sequence(8, 8, 40, 1000, 3);
  const EventStream base = events_from_frames(seq, config(0.2));
  for (double k : {0.5, 2.0}) {
    std::vector<Frame> scaled = seq.frames();
    for (Frame& f : scaled) {
      for (double& v : f.image.data()) v *= k;
    }
    SimulatorConfig cfg = config(0.2);
    cfg.log_floor = 1e-3 * k;
    EXPECT_EQ(events_from_frames(FrameSequence(std::move(scaled)), cfg), base) << "k=" << k;
  }
}

TEST(Simulate, ClosureWithinOneThreshold) {
  const FrameSequence seq = random_smooth_sequence(10, 10, 80, 1000, 8);
  for (double theta : {0.1, 0.2, 0.5}) {
    const EventStream s = events_from_frames(seq, config(theta));
    for (int y = 0; y < 10; ++y) {
      for (int x = 0; x < 10; ++x) {
        double sum = 0.0;
        for (const Event& e : s.pixel_events(x, y)) sum += e.p * theta;
        const double first = std::log(seq.frames().front().image(x, y));
        const double last = std::log(seq.frames().back().image(x, y));
        EXPECT_LT(std::abs(sum - (last - first)), theta + 1e-9);
      }
    }
  }
}

TEST(Simulate, AsymmetricThresholds) {
  SimulatorConfig cfg;
  cfg.thresholds = ThresholdConfig(0.3, 0.1);
  const EventStream s = events_from_frames(two_frames(0.5, 0.5 * std::exp(0.65)), cfg);
  EXPECT_EQ(s.size(), 2u);
  const EventStream d = events_from_frames(two_frames(0.5, 0.5 * std::exp(-0.35)), cfg);
  EXPECT_EQ(d.size(), 3u);
}

TEST(Simulate, RefractoryDropsButKeepsReference) {
  // Five crossings within 1000 us; a 300 us gap keeps some of them.
  SimulatorConfig cfg = config(0.2);
  cfg.refractory_us = 300;
  const EventStream s = events_from_frames(two_frames(0.5, 0.5 * std::exp(1.0)), cfg);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.events()[0].t, 200u);
  EXPECT_EQ(s.events()[1].t, 600u);
  EXPECT_EQ(s.events()[2].t, 1000u);
  // The reference still moved by five levels: a further 0.2 rise fires once.
  std::vector<Frame> f = two_frames(0.5, 0.5 * std::exp(1.0)).frames();
  f.push_back({2000, ImageBuffer(1, 1, 1, Domain::Linear, 0.5 * std::exp(1.2)), std::nullopt});
  EXPECT_EQ(events_from_frames(FrameSequence(std::move(f)), cfg).size(), 4u);
}

TEST(Simulate, FloorClampsDarkPixels) {
  // Both frames below the floor: no signal.
  EXPECT_TRUE(events_from_frames(two_frames(1e-5, 1e-4), config(0.2)).empty());
}

TEST(Simulate, BayerModeUsesMosaic) {
  std::vector<Frame> f;
  ImageBuffer a(2, 2, 3, Domain::Linear, 0.5), b = a;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) b(x, y, 0) = 0.5 * std::exp(0.3);  // red only
  }
  f.push_back({0, a, std::nullopt});
  f.push_back({1000, b, std::nullopt});
  SimulatorConfig cfg = config(0.2);
  cfg.mode = EventMode::Bayer;
  cfg.pattern = BayerPattern::GBRG;  // red at (0, 1)
  const EventStream s = events_from_frames(FrameSequence(f), cfg);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.events()[0].x, 0);
  EXPECT_EQ(s.events()[0].y, 1);
  // Luma sees 0.299 of the red change: log rise below 0.2.
  EXPECT_TRUE(events_from_frames(FrameSequence(f), config(0.2)).empty());
}

TEST(Simulate, ResponseCurveAppliedBeforeLog) {
  SimulatorConfig cfg = config(0.2);
  cfg.response = [](double v) { return v * v; };  // doubles every log change
  EXPECT_EQ(events_from_frames(two_frames(0.5, 0.5 * std::exp(0.25)), cfg).size(), 2u);
}

TEST(Simulate, RejectsShortAndInvalidSequences) {
  std::vector<Frame> one{{0, ImageBuffer(1, 1, 1, Domain::Linear, 0.5), std::nullopt}};
  EXPECT_THROW(events_from_frames(FrameSequence(one), config(0.2)), ArgumentError);
  std::vector<Frame> dup{one[0], one[0]};
  EXPECT_THROW(FrameSequence{dup}, ArgumentError);
  std::vector<Frame> gamma{one[0], {5, ImageBuffer(1, 1, 1, Domain::Gamma, 0.5), std::nullopt}};
  EXPECT_THROW(FrameSequence{gamma}, ArgumentError);
  std::vector<Frame> shape{one[0], {5, ImageBuffer(2, 1, 1, Domain::Linear, 0.5), std::nullopt}};
  EXPECT_THROW(FrameSequence{shape}, ArgumentError);
  SimulatorConfig cfg = config(0.2);
  cfg.log_floor = 0.0;
  EXPECT_THROW(events_from_frames(two_frames(0.5, 0.6), cfg), ArgumentError);
}

TEST(Simulate, IndependentOfThreadCount) {
  const FrameSequence seq = random_smooth_sequence(16, 16, 30, 1000, 12);
  set_num_threads(1);
  const EventStream one = events_from_frames(seq, config(0.2));
  set_num_threads(7);
  const EventStream many = events_from_frames(seq, config(0.2));
  set_num_threads(0);
  EXPECT_EQ(one, many);
}

TEST(Blur, MeanOfFortyFrames) {
  testing::SceneSpec spec;
  const FrameSequence seq = testing::translating_scene(spec);
  const ImageBuffer blur = synthesize_blur(seq, 60000, 40000);
  ImageBuffer sum(spec.width, spec.height, 1, Domain::Linear, 0.0);
  int count = 0;
  for (const Frame& f : seq.frames()) {
    if (f.t >= 40000 && f.t < 80000) {
      for (std::size_t i = 0; i < sum.data().size(); ++i) sum.data()[i] += f.image.data()[i];
      ++count;
    }
  }
  EXPECT_EQ(count, 40);
  for (std::size_t i = 0; i < sum.data().size(); ++i) EXPECT_NEAR(blur.data()[i], sum.data()[i] / 40.0, 1e-12);
}

TEST(Blur, InvariantToFrameOrderInsideWindow) {
  const FrameSequence seq = random_smooth_sequence(6, 5, 50, 1000, 2);
  std::vector<Frame> shuffled = seq.frames();
  std::vector<std::size_t> idx;
  for (std::size_t k = 10; k < 30; ++k) idx.push_back(k);
  std::vector<std::size_t> perm = idx;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  for (std::size_t i = 0; i < idx.size(); ++i) shuffled[idx[i]].image = seq.frames()[perm[i]].image;
  const ImageBuffer a = synthesize_blur(seq, 20000, 20000);
  const ImageBuffer b = synthesize_blur(FrameSequence(std::move(shuffled)), 20000, 20000);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Blur, WindowOutsideSpanRejected) {
  const FrameSequence seq = random_smooth_sequence(2, 2, 10, 1000, 2);  // span [0, 10000]
  EXPECT_THROW(synthesize_blur(seq, 9000, 4000), ArgumentError);
  EXPECT_NO_THROW(synthesize_blur(seq, 8000, 4000));
}

TEST(Views, OneSecondYieldsTwentyFive) {
  const auto mids = view_times({0, 1000000}, 40000, 40000);
  ASSERT_EQ(mids.size(), 25u);
  EXPECT_EQ(mids.front(), 20000u);
  EXPECT_EQ(mids.back(), 980000u);
}

TEST(Views, OverlappingAndShortSpans) {
  EXPECT_EQ(view_times({0, 100000}, 40000, 20000).size(), 4u);
  EXPECT_TRUE(view_times({0, 30000}, 40000, 40000).empty());
  EXPECT_EQ(view_times({1000, 41000}, 40000, 40000), std::vector<Timestamp>{21000});
  EXPECT_THROW(view_times({0, 10}, 0, 5), ArgumentError);
}

class RenderTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("evdi_render_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(RenderTest, WritesDatasetThatReloads) {
  testing::SceneSpec spec;
  spec.duration_s = 0.1;
  const FrameSequence seq = testing::translating_scene(spec);
  const DatasetManifest m = render_dataset(seq, 40000, 40000, config(0.2), dir_);
  EXPECT_EQ(m.views.size(), 2u);
  const DatasetManifest back = read_manifest(dir_ / "manifest.json");
  EXPECT_EQ(back.views.size(), 2u);
  EXPECT_EQ(back.exposure_us, 40000u);
  EXPECT_EQ(back.theta, 0.2);
  EXPECT_TRUE(back.has_ground_truth());
  EXPECT_EQ(load_events(back), events_from_frames(seq, config(0.2)));
  const LoadedView v = load_view(back, 1, true);
  EXPECT_EQ(v.blur.width(), spec.width);
  EXPECT_EQ(v.blur.domain(), Domain::Linear);
  // 16-bit gamma storage keeps the blur within a few 1e-5 of the mean.
  const ImageBuffer ref = synthesize_blur(seq, 60000, 40000);
  for (std::size_t i = 0; i < ref.data().size(); ++i) EXPECT_NEAR(v.blur.data()[i], ref.data()[i], 1e-4);
}

TEST_F(RenderTest, DeterministicBytes) {
  testing::SceneSpec spec;
  spec.duration_s = 0.05;
  const FrameSequence seq = testing::translating_scene(spec);
  render_dataset(seq, 40000, 40000, config(0.2), dir_ / "a");
  render_dataset(seq, 40000, 40000, config(0.2), dir_ / "b");
  for (const char* name : {"manifest.json", "events.evt1", "blur_0000.png", "sharp_0000.png"}) {
    EXPECT_EQ(detail::read_bytes(dir_ / "a" / name), detail::read_bytes(dir_ / "b" / name)) << name;
  }
}

TEST_F(RenderTest, WritesPosesWhenPresent) {
  std::vector<Frame> f;
  for (int k = 0; k < 50; ++k) {
    Pose p;
    p.translation = {0.001 * k, 0.0, 0.0};
    p.rotation = Quaternion::from_axis_angle({0, 0, 1}, 0.01 * k);
    f.push_back({static_cast<Timestamp>(k) * 1000, ImageBuffer(4, 4, 1, Domain::Linear, 0.2 + 0.01 * k), p});
  }
  const DatasetManifest m = render_dataset(FrameSequence(f), 40000, 40000, config(0.2), dir_);
  ASSERT_TRUE(m.poses.has_value());
  const PoseTrack track = read_poses(dir_ / *m.poses);
  EXPECT_EQ(track.size(), 50u);
  EXPECT_EQ(track.poses()[7].t, 7000u);
}

TEST_F(RenderTest, TooShortForOneView) {
  const FrameSequence seq = random_smooth_sequence(2, 2, 10, 1000, 2);
  EXPECT_THROW(render_dataset(seq, 40000, 40000, config(0.2), dir_), ArgumentError);
}

}  // namespace
}  // namespace evdi
