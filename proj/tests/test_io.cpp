#include <gtest/gtest.h>

#include <fstream>

#include "mbttbf/io.hpp"
#include "test_util.hpp"

using namespace mbttbf;
using nlohmann::json;
namespace fs = std::filesystem;

TEST(Annotations, ParsesSinglePoint) {
  const auto r = io::parse_annotations(json::parse(R"({"image_size":[10,10],"points":[[2,3]]})"));
  ASSERT_EQ(r.annotations.size(), 1u);
  EXPECT_EQ(r.annotations.points[0].x, 2.0);
  EXPECT_EQ(r.annotations.points[0].y, 3.0);
  EXPECT_EQ(r.annotations.height, 10);
  EXPECT_EQ(r.clamped, 0);
}

TEST(Annotations, EmptyPoints) {
  const auto r = io::parse_annotations(json::parse(R"({"image_size":[4,6],"points":[]})"));
  EXPECT_TRUE(r.annotations.empty());
  EXPECT_EQ(r.annotations.width, 6);
}

TEST(Annotations, OutOfBoundsIsClamped) {
  const auto r = io::parse_annotations(json::parse(R"({"image_size":[10,10],"points":[[12,3],[-1,-4],[4,4]]})"));
  EXPECT_EQ(r.clamped, 2);
  EXPECT_EQ(r.annotations.points[0], (density::PointAnnotation{9, 3}));
  EXPECT_EQ(r.annotations.points[1], (density::PointAnnotation{0, 0}));
  EXPECT_EQ(r.annotations.points[2], (density::PointAnnotation{4, 4}));
}

TEST(Annotations, ErrorNamesOffendingEntry) {
  try {
    io::parse_annotations(json::parse(R"({"image_size":[10,10],"points":[[1,1],[2,"x"]]})"), "a.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("points[1]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("a.json"), std::string::npos);
  }
  EXPECT_THROW(io::parse_annotations(json::parse(R"({"points":[]})")), FormatError);
  EXPECT_THROW(io::parse_annotations(json::parse(R"({"image_size":[3],"points":[]})")), FormatError);
  EXPECT_THROW(io::parse_annotations(json::parse(R"([1,2])")), FormatError);
}

TEST(Annotations, MalformedFileIsFormatError) {
  const auto dir = fixtures::scratch_dir("io_bad");
  io::write_text(dir / "bad.json", "{\"image_size\": [3, 3], \"points\": [");
  EXPECT_THROW(io::load_annotations(dir / "bad.json"), FormatError);
  EXPECT_THROW(io::load_annotations(dir / "missing.json"), FormatError);
}

TEST(Annotations, RoundTripKeepsOrder) {
  synth::Rng rng(1);
  const auto a = fixtures::random_annotations(rng, 31, 17, 25);
  const auto dir = fixtures::scratch_dir("io_ann");
  io::save_annotations(dir / "a.json", a);
  const auto b = io::load_annotations(dir / "a.json");
  EXPECT_EQ(b.annotations, a);
  EXPECT_EQ(b.clamped, 0);
}

TEST(Sigmas, RoundTripAndPath) {
  const auto dir = fixtures::scratch_dir("io_sig");
  density::SigmaAssignment s{{1.5, 2.25, 7.0}, density::SigmaMethod::mrf};
  const auto p = io::sigma_path_for(dir / "scene.json");
  EXPECT_EQ(p.filename(), "scene.sigmas.json");
  io::save_sigmas(p, s);
  const auto t = io::load_sigmas(p);
  EXPECT_EQ(t.sigmas, s.sigmas);
  EXPECT_EQ(t.method, s.method);
  const auto doc = io::read_json(p);
  EXPECT_EQ(doc["method"], "mrf");
}

TEST(DensityFile, RandomMapRoundTrip) {
  synth::Rng rng(2);
  density::DensityMap m(7, 5, 4);
  for (double& v : m.grid.values()) v = static_cast<float>(rng.uniform(0, 3));
  const auto dir = fixtures::scratch_dir("io_den");
  io::save_density(dir / "m.density", m);
  EXPECT_EQ(io::load_density(dir / "m.density"), m);
  EXPECT_EQ(fs::file_size(dir / "m.density"), 7u * 5u * 4u);
  const auto side = io::read_json(dir / "m.density.json");
  EXPECT_EQ(side, (json{{"height", 7}, {"width", 5}, {"stride", 4}}));
}

TEST(DensityFile, ZeroMapRoundTrip) {
  density::DensityMap m(3, 3, 1);
  const auto dir = fixtures::scratch_dir("io_zero");
  io::save_density(dir / "z.density", m);
  EXPECT_EQ(io::load_density(dir / "z.density"), m);
}

TEST(DensityFile, LittleEndianLayout) {
  density::DensityMap m(1, 2, 1);
  m.grid(0, 0) = 1.0;
  m.grid(0, 1) = -2.0;
  const auto dir = fixtures::scratch_dir("io_le");
  io::save_density(dir / "x.density", m);
  const std::string bytes = io::read_text(dir / "x.density");
  ASSERT_EQ(bytes.size(), 8u);
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000, little-endian.
  const unsigned char expect[8] = {0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expect[i]);
}

TEST(DensityFile, TamperedPayloadRejected) {
  density::DensityMap m(4, 4, 1);
  const auto dir = fixtures::scratch_dir("io_tamper");
  io::save_density(dir / "t.density", m);
  {
    std::ofstream f(dir / "t.density", std::ios::binary | std::ios::app);
    f << "xx";
  }
  EXPECT_THROW(io::load_density(dir / "t.density"), FormatError);
  io::write_text(dir / "t.density", std::string(60, '\0'));
  EXPECT_THROW(io::load_density(dir / "t.density"), FormatError);
}

TEST(Images, PngRoundTripIs8BitExact) {
  synth::Rng rng(3);
  const auto img = io::quantize_8bit(fixtures::random_image(rng, 9, 13));
  const auto dir = fixtures::scratch_dir("io_png");
  io::save_image(dir / "a.png", img);
  io::save_image(dir / "a.ppm", img);
  const auto p = io::load_image(dir / "a.png");
  const auto q = io::load_image(dir / "a.ppm");
  EXPECT_EQ(p.height, 9);
  EXPECT_EQ(p.width, 13);
  EXPECT_EQ(p.data, img.data);
  EXPECT_EQ(q.data, img.data);
}

TEST(Images, NotAnImage) {
  const auto dir = fixtures::scratch_dir("io_notimg");
  io::write_text(dir / "x.png", "hello");
  EXPECT_THROW(io::load_image(dir / "x.png"), FormatError);
  io::write_text(dir / "x.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(io::load_image(dir / "x.ppm"), FormatError);
}

TEST(Manifest, SortedAndResolved) {
  const auto dir = fixtures::scratch_dir("io_manifest");
  for (const char* n : {"b", "a", "c"}) {
    io::write_text(dir / "img" / (std::string(n) + ".png"), "");
    io::write_text(dir / "ann" / (std::string(n) + ".json"), "");
  }
  io::write_text(dir / "m.json", R"({"split":"val","entries":[
    {"image":"img/b.png","annotations":"ann/b.json"},
    {"image":"img/c.png","annotations":"ann/c.json"},
    {"image":"img/a.png","annotations":"ann/a.json"}]})");
  const auto m = io::load_manifest(dir / "m.json");
  EXPECT_EQ(m.split, io::Split::val);
  ASSERT_EQ(m.entries.size(), 3u);
  EXPECT_EQ(m.entries[0].image, dir / "img/a.png");
  EXPECT_EQ(m.entries[2].annotations, dir / "ann/c.json");

  io::save_manifest(dir / "copy.json", m);
  const auto doc = io::read_json(dir / "copy.json");
  EXPECT_EQ(doc["entries"][0]["image"], "img/a.png");
  const auto again = io::load_manifest(dir / "copy.json");
  EXPECT_EQ(again.entries, m.entries);
}

TEST(Manifest, MissingFilesRejected) {
  const auto dir = fixtures::scratch_dir("io_manifest_missing");
  io::write_text(dir / "m.json", R"({"split":"train","entries":[{"image":"x.png","annotations":"x.json"}]})");
  EXPECT_THROW(io::load_manifest(dir / "m.json"), FormatError);
  EXPECT_NO_THROW(io::load_manifest(dir / "m.json", false));
  io::write_text(dir / "s.json", R"({"split":"holdout","entries":[]})");
  EXPECT_THROW(io::load_manifest(dir / "s.json"), FormatError);
}
