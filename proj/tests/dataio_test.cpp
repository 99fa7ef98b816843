// Copyright The evdi Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include <unistd.h>

#include "evdi/dataio.hpp"

namespace evdi {
namespace {

namespace fs = std::filesystem;

class DataioTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("evdi_dataio_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    detail::write_text(dir_ / name, text);
    return dir_ / name;
  }

  template <typename Fn>
  std::string error_of(Fn&& fn) {
    try {
      fn();
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  }

  fs::path dir_;
};

EventStream sample_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Event> raw(n);
  for (Event& e : raw) {
    e = {rng() % 1000000, static_cast<std::uint16_t>(rng() % 64), static_cast<std::uint16_t>(rng() % 48),
         static_cast<std::int8_t>(rng() % 2 ? 1 : -1)};
  }
  return build_stream(raw, 64, 48);
}

TEST_F(DataioTest, Evt1EmptyAndThreeEventSizes) {
  write_events(dir_ / "empty.evt1", build_stream({}, 5, 6));
  EXPECT_EQ(fs::file_size(dir_ / "empty.evt1"), 18u);
  const EventStream three = build_stream({{1, 0, 0, 1}, {2, 1, 0, -1}, {3, 0, 1, 1}}, 2, 2);
  write_events(dir_ / "three.evt1", three);
  EXPECT_EQ(fs::file_size(dir_ / "three.evt1"), 18u + 39u);
  const EventStream back = read_events(dir_ / "three.evt1");
  EXPECT_EQ(back, three);
  EXPECT_EQ(read_events(dir_ / "empty.evt1").width(), 5);
}

TEST_F(DataioTest, Evt1HeaderLayout) {
  const auto bytes = encode_evt1(build_stream({{0x0102030405, 3, 4, -1}}, 300, 7));
  ASSERT_EQ(bytes.size(), 31u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "EVT1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 300 & 0xFF);
  EXPECT_EQ(bytes[7], 300 >> 8);
  EXPECT_EQ(bytes[8], 7);
  EXPECT_EQ(bytes[10], 1);
  EXPECT_EQ(bytes[18], 0x05);
  EXPECT_EQ(bytes[22], 0x01);
  EXPECT_EQ(bytes[26], 3);
  EXPECT_EQ(bytes[28], 4);
  EXPECT_EQ(bytes[30], 0);  // negative polarity
}

TEST_F(DataioTest, Evt1RoundTripLarge) {
  const EventStream s = sample_stream(20000, 1);
  write_events(dir_ / "s.evt1", s);
  EXPECT_EQ(read_events(dir_ / "s.evt1"), s);
  EXPECT_EQ(read_events(dir_ / "s.evt1", StreamSize{64, 48}), s);
  EXPECT_THROW(read_events(dir_ / "s.evt1", StreamSize{64, 47}), FormatError);
}

TEST_F(DataioTest, CsvAndBinaryDecodeIdentically) {
  const EventStream s = sample_stream(3000, 2);
  write_events(dir_ / "s.evt1", s);
  write_events(dir_ / "s.csv", s);
  EXPECT_EQ(read_events(dir_ / "s.csv", StreamSize{64, 48}), read_events(dir_ / "s.evt1"));
  EXPECT_THROW(read_events(dir_ / "s.csv"), FormatError);
}

TEST_F(DataioTest, TruncationReportsOffset) {
  const EventStream s = build_stream({{1, 0, 0, 1}, {2, 1, 0, -1}, {3, 0, 1, 1}}, 2, 2);
  auto bytes = encode_evt1(s);
  bytes.resize(bytes.size() - 5);
  detail::write_bytes(dir_ / "t.evt1", bytes);
  const std::string msg = error_of([&] { read_events(dir_ / "t.evt1"); });
  EXPECT_NE(msg.find("byte offset 44"), std::string::npos) << msg;  // 18 + 2 * 13
  EXPECT_NE(msg.find("t.evt1"), std::string::npos);
  bytes.resize(10);
  detail::write_bytes(dir_ / "h.evt1", bytes);
  EXPECT_NE(error_of([&] { read_events(dir_ / "h.evt1"); }).find("header"), std::string::npos);
}

TEST_F(DataioTest, CorruptEvt1Rejected) {
  auto bytes = encode_evt1(build_stream({{1, 0, 0, 1}, {2, 1, 0, -1}}, 2, 2));
  auto bad = bytes;
  bad[0] = 'X';
  detail::write_bytes(dir_ / "a.evt1", bad);
  EXPECT_NE(error_of([&] { read_events(dir_ / "a.evt1"); }).find("magic"), std::string::npos);
  bad = bytes;
  bad[18 + 12] = 7;
  detail::write_bytes(dir_ / "b.evt1", bad);
  EXPECT_NE(error_of([&] { read_events(dir_ / "b.evt1"); }).find("byte offset 30"), std::string::npos);
  bad = bytes;
  bad[18 + 8] = 9;  // x out of range
  detail::write_bytes(dir_ / "c.evt1", bad);
  EXPECT_NE(error_of([&] { read_events(dir_ / "c.evt1"); }).find("outside"), std::string::npos);
  bad = bytes;
  bad.push_back(0);
  detail::write_bytes(dir_ / "d.evt1", bad);
  EXPECT_NE(error_of([&] { read_events(dir_ / "d.evt1"); }).find("trailing"), std::string::npos);
  bad = bytes;
  bad[18] = 5;  // first event later than the second
  detail::write_bytes(dir_ / "e.evt1", bad);
  EXPECT_NE(error_of([&] { read_events(dir_ / "e.evt1"); }).find("ordering"), std::string::npos);
}

TEST_F(DataioTest, CsvErrorsNameLine) {
  const auto p = write("e.csv", "t_us,x,y,p\n1,0,0,1\n2,0,0,0\n");
  EXPECT_NE(error_of([&] { read_events(p, StreamSize{2, 2}); }).find("line 3"), std::string::npos);
  const auto q = write("f.csv", "t,x,y,p\n");
  EXPECT_NE(error_of([&] { read_events(q, StreamSize{2, 2}); }).find("line 1"), std::string::npos);
  const auto r = write("g.csv", "t_us,x,y,p\n1,5,0,1\n");
  EXPECT_NE(error_of([&] { read_events(r, StreamSize{2, 2}); }).find("outside"), std::string::npos);
  const auto u = write("h.csv", "t_us,x,y,p\r\n1,1,0,-1\r\n\r\n");
  EXPECT_EQ(read_events(u, StreamSize{2, 2}).size(), 1u);
}

TEST_F(DataioTest, PfmBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-2.0f, 5.0f);
  for (int channels : {1, 3}) {
    ImageBuffer img(7, 5, channels, Domain::Linear);
    for (double& v : img.data()) v = u(rng);  // float-representable
    write_image(dir_ / "x.pfm", img);
    const ImageBuffer back = read_image(dir_ / "x.pfm");
    EXPECT_EQ(back, img);
    EXPECT_EQ(back.domain(), Domain::Linear);
  }
}

TEST_F(DataioTest, PfmBigEndianAndErrors) {
  // Big-endian 1x1 gray file holding 0.5.
  std::string s = "Pf\n1 1\n1.0\n";
  s += std::string("\x3f\x00\x00\x00", 4);
  EXPECT_EQ(read_pfm(write("be.pfm", s))(0, 0), 0.5);
  EXPECT_THROW(read_pfm(write("bad.pfm", "P6\n1 1\n255\n")), FormatError);
  EXPECT_THROW(read_pfm(write("short.pfm", "Pf\n2 2\n-1.0\nabc")), FormatError);
}

TEST_F(DataioTest, PfmRowOrderBottomUp) {
  ImageBuffer img(1, 2, 1, Domain::Linear);
  img(0, 0) = 1.0;
  img(0, 1) = 2.0;
  write_pfm(dir_ / "o.pfm", img);
  const auto bytes = detail::read_bytes(dir_ / "o.pfm");
  float first;
  std::memcpy(&first, bytes.data() + bytes.size() - 8, 4);
  EXPECT_EQ(first, 2.0f);
}

TEST_F(DataioTest, Png16WithinOneLevel) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int channels : {1, 3}) {
    ImageBuffer img(9, 4, channels, Domain::Gamma);
    for (double& v : img.data()) v = u(rng);
    write_image(dir_ / "x.png", img);
    const ImageBuffer back = read_image(dir_ / "x.png");
    EXPECT_EQ(back.domain(), Domain::Gamma);
    EXPECT_EQ(back.channels(), channels);
    for (std::size_t i = 0; i < img.data().size(); ++i) {
      EXPECT_LE(std::abs(back.data()[i] - img.data()[i]), 0.5 / 65535.0 + 1e-15);
    }
  }
}

TEST_F(DataioTest, Png8AndLinearFlag) {
  ImageBuffer img(3, 3, 1, Domain::Gamma, 0.5);
  write_png(dir_ / "e.png", img, 8);
  const ImageBuffer back = read_png(dir_ / "e.png");
  EXPECT_EQ(back(1, 1), 128.0 / 255.0);
  EXPECT_EQ(read_image(dir_ / "e.png", {true}).domain(), Domain::Linear);
  EXPECT_EQ(read_linear_image(dir_ / "e.png", GammaCurve::power(2.0))(0, 0), std::pow(128.0 / 255.0, 2.0));
  EXPECT_THROW(write_png(dir_ / "f.png", img, 4), FormatError);
  EXPECT_THROW(read_png(write("g.png", "not a png")), FormatError);
  EXPECT_THROW(read_image(write("g.bmp", "x")), FormatError);
  EXPECT_THROW(read_image(dir_ / "missing.png"), FormatError);
}

TEST_F(DataioTest, PosesRoundTripAndNormalization) {
  std::vector<Pose> p(3);
  for (int k = 0; k < 3; ++k) {
    p[k].t = 1000 * k;
    p[k].translation = {0.1 * k, -0.2, 1.0 / 3.0};
    p[k].rotation = Quaternion::from_axis_angle({1, 1, 0}, 0.2 * k);
  }
  write_poses(dir_ / "p.csv", PoseTrack(p));
  EXPECT_EQ(read_poses(dir_ / "p.csv"), PoseTrack(p));
  const auto q = write("q.csv", "t_us,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,0.999,0,0,0\n");
  EXPECT_NEAR(read_poses(q).poses()[0].rotation.w, 1.0, 1e-15);
}

TEST_F(DataioTest, PosesErrorsNameRow) {
  const auto dup = write("d.csv", "t_us,tx,ty,tz,qw,qx,qy,qz\n5,0,0,0,1,0,0,0\n5,0,0,0,1,0,0,0\n");
  EXPECT_NE(error_of([&] { read_poses(dup); }).find("row 3"), std::string::npos);
  const auto zero = write("z.csv", "t_us,tx,ty,tz,qw,qx,qy,qz\n5,0,0,0,0,0,0,0\n");
  EXPECT_NE(error_of([&] { read_poses(zero); }).find("row 2"), std::string::npos);
  const auto cols = write("c.csv", "t_us,tx,ty,tz,qw,qx,qy,qz\n5,0,0,0,1,0,0\n");
  EXPECT_THROW(read_poses(cols), FormatError);
}

DatasetManifest small_manifest(const fs::path& dir) {
  DatasetManifest m;
  m.base_dir = dir;
  m.events = "events.evt1";
  m.width = 4;
  m.height = 3;
  m.events_span = TimeSpan{0, 100000};
  m.exposure_us = 40000;
  m.theta = 0.25;
  m.theta_neg = 0.2;
  m.bayer = BayerPattern::GRBG;
  m.gamma = GammaCurve::srgb();
  m.views.push_back({20000, "blur_0000.png", "sharp_0000.png", {}});
  m.views.push_back({60000, "blur_0001.png", std::nullopt, {}});
  m.extra["camera"] = "synthetic";
  m.views[1].extra["note"] = 3;
  return m;
}

void materialize(const DatasetManifest& m) {
  write_events(m.resolve(m.events), build_stream({{10, 1, 1, 1}}, 4, 3));
  for (const auto& rel : manifest_paths(m)) {
    if (rel.ends_with(".png")) write_png(m.resolve(rel), ImageBuffer(4, 3, 1, Domain::Gamma, 0.5));
  }
}

TEST_F(DataioTest, ManifestRoundTrip) {
  const DatasetManifest m = small_manifest(dir_);
  materialize(m);
  write_manifest(dir_ / "manifest.json", m);
  const DatasetManifest back = read_manifest(dir_ / "manifest.json");
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.thresholds().neg(), 0.2);
  EXPECT_EQ(*back.bayer, BayerPattern::GRBG);
  EXPECT_EQ(back.extra["camera"], "synthetic");
  EXPECT_EQ(back.views[1].extra["note"], 3);
  EXPECT_FALSE(back.has_ground_truth());
  EXPECT_EQ(load_events(back).coverage(), (TimeSpan{0, 100000}));
  const LoadedView v = load_view(back, 0, true);
  EXPECT_EQ(v.blur.domain(), Domain::Linear);
  EXPECT_TRUE(v.sharp.has_value());
  EXPECT_THROW(load_view(back, 2), ArgumentError);
}

TEST_F(DataioTest, ManifestMissingKeyNamed) {
  Json j = manifest_to_json(small_manifest(dir_));
  j.erase("exposure_us");
  detail::write_text(dir_ / "m.json", j.dump());
  EXPECT_NE(error_of([&] { read_manifest(dir_ / "m.json"); }).find("exposure_us"), std::string::npos);
}

TEST_F(DataioTest, ManifestDanglingPathNamed) {
  const DatasetManifest m = small_manifest(dir_);
  materialize(m);
  fs::remove(dir_ / "sharp_0000.png");
  write_manifest(dir_ / "manifest.json", m);
  EXPECT_NE(error_of([&] { read_manifest(dir_ / "manifest.json"); }).find("sharp_0000.png"), std::string::npos);
}

TEST_F(DataioTest, ManifestInvalidValues) {
  const DatasetManifest m = small_manifest(dir_);
  materialize(m);
  auto expect_bad = [&](const std::function<void(Json&)>& edit, const std::string& needle) {
    Json j = manifest_to_json(m);
    edit(j);
    detail::write_text(dir_ / "m.json", j.dump());
    EXPECT_NE(error_of([&] { read_manifest(dir_ / "m.json"); }).find(needle), std::string::npos) << needle;
  };
  expect_bad([](Json& j) { j["theta"] = -1.0; }, "thresholds");
  expect_bad([](Json& j) { j["exposure_us"] = 0; }, "exposure_us");
  expect_bad([](Json& j) { j["theta"] = "x"; }, "wrong type");
  expect_bad([](Json& j) { j["views"] = Json::array(); }, "views");
  expect_bad([](Json& j) { j["views"][1]["t_mid_us"] = 1; }, "views[1]");
  expect_bad([](Json& j) { j["bayer_pattern"] = "XYZW"; }, "XYZW");
  expect_bad([](Json& j) { j["gamma"] = "linear"; }, "gamma");
  expect_bad([](Json& j) { j.erase("events_end_us"); }, "together");
  detail::write_text(dir_ / "broken.json", "{\"events\": ");
  EXPECT_NE(error_of([&] { read_manifest(dir_ / "broken.json"); }).find("invalid JSON"), std::string::npos);
}

}  // namespace
}  // namespace evdi
