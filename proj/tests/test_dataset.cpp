#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "gorqat/dataset.hpp"

using namespace gorqat;

namespace {

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void be32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v >> 24));
  buf.push_back(static_cast<unsigned char>(v >> 16));
  buf.push_back(static_cast<unsigned char>(v >> 8));
  buf.push_back(static_cast<unsigned char>(v));
}

}  // namespace

TEST_CASE("blobs") {
  SECTION("same seed twice gives identical datasets") {
    const Dataset a = make_blobs(2, 1000, 0.4, 7);
    const Dataset b = make_blobs(2, 1000, 0.4, 7);
    REQUIRE(a.train.size() == 800);
    REQUIRE(a.test.size() == 200);
    REQUIRE(a.num_classes == 2);
    REQUIRE(a.feature_dim == 2);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      REQUIRE(a.train[i].y == b.train[i].y);
      REQUIRE(a.train[i].x == b.train[i].x);
    }
  }
  SECTION("labels stay in range and roughly balanced") {
    const Dataset d = make_blobs(3, 900, 0.3, 11);
    std::vector<int> counts(3, 0);
    for (const auto& s : d.train) {
      REQUIRE(s.y >= 0);
      REQUIRE(s.y < 3);
      ++counts[s.y];
    }
    for (int c : counts) REQUIRE(c > 150);
  }
  SECTION("argument validation") {
    REQUIRE_THROWS_AS(make_blobs(1, 100, 0.4, 1), ValueError);
    REQUIRE_THROWS_AS(make_blobs(2, 1, 0.4, 1), ValueError);
    REQUIRE_THROWS_AS(make_blobs(2, 100, 0.0, 1), ValueError);
  }
}

TEST_CASE("csv loader") {
  SECTION("hand fixture parses exactly") {
    const auto path = temp_file("gorqat_fixture.csv");
    write_file(path, "f0,f1,label\n1.5,2.5,0\n-1,0.25,1\n3,4,1\n");
    const Dataset d = load_csv(path.string(), 1);
    REQUIRE(d.feature_dim == 2);
    REQUIRE(d.num_classes == 2);
    REQUIRE(d.train.size() + d.test.size() == 3);
    std::vector<Sample> all = d.train;
    all.insert(all.end(), d.test.begin(), d.test.end());
    bool saw_first = false;
    for (const auto& s : all) {
      if (s.x == std::vector<double>{1.5, 2.5}) {
        REQUIRE(s.y == 0);
        saw_first = true;
      }
    }
    REQUIRE(saw_first);
    std::filesystem::remove(path);
  }
  SECTION("bad header") {
    const auto path = temp_file("gorqat_badheader.csv");
    write_file(path, "a,b,label\n1,2,0\n");
    REQUIRE_THROWS_AS(load_csv(path.string(), 1), IoError);
    std::filesystem::remove(path);
  }
  SECTION("malformed row reports a byte offset") {
    const auto path = temp_file("gorqat_badrow.csv");
    write_file(path, "f0,label\n1.0,0\nnope,1\n");
    try {
      load_csv(path.string(), 1);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.kind() == IoError::Kind::parse);
      REQUIRE(std::string(e.what()).find("byte") != std::string::npos);
    }
    std::filesystem::remove(path);
  }
  SECTION("negative label") {
    const auto path = temp_file("gorqat_neglabel.csv");
    write_file(path, "f0,label\n1.0,-2\n");
    REQUIRE_THROWS_AS(load_csv(path.string(), 1), ValueError);
    std::filesystem::remove(path);
  }
}

TEST_CASE("idx loader") {
  // Four 2x2 images with distinct pixel values, labels read big-endian.
  std::vector<unsigned char> images;
  be32(images, 0x00000803u);
  be32(images, 4);
  be32(images, 2);
  be32(images, 2);
  for (unsigned v = 0; v < 16; ++v) images.push_back(static_cast<unsigned char>(v * 15));
  std::vector<unsigned char> labels;
  be32(labels, 0x00000801u);
  be32(labels, 4);
  for (unsigned char v : {0, 1, 2, 1}) labels.push_back(v);

  const auto img_path = temp_file("gorqat_images.idx");
  const auto lab_path = temp_file("gorqat_labels.idx");
  write_file(img_path, std::string(images.begin(), images.end()));
  write_file(lab_path, std::string(labels.begin(), labels.end()));

  SECTION("fixture parses with scaled pixels") {
    const auto samples = load_idx_pair(img_path.string(), lab_path.string());
    REQUIRE(samples.size() == 4);
    REQUIRE(samples[0].x.size() == 4);
    REQUIRE(samples[0].x[0] == 0.0);
    REQUIRE(samples[0].x[1] == Catch::Approx(15.0 / 255.0));
    REQUIRE(samples[3].x[3] == Catch::Approx(225.0 / 255.0));
    REQUIRE(samples[0].y == 0);
    REQUIRE(samples[1].y == 1);
    REQUIRE(samples[2].y == 2);
    REQUIRE(samples[3].y == 1);

    const Dataset d = load_idx(img_path.string(), lab_path.string(), "", "", 3);
    REQUIRE(d.feature_dim == 4);
    REQUIRE(d.num_classes == 3);
    REQUIRE(d.train.size() == 3);
    REQUIRE(d.test.size() == 1);
  }
  SECTION("bad magic is rejected with the offset") {
    auto broken = images;
    broken[0] = 0xff;
    const auto bad = temp_file("gorqat_badmagic.idx");
    write_file(bad, std::string(broken.begin(), broken.end()));
    try {
      load_idx_pair(bad.string(), lab_path.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.kind() == IoError::Kind::bad_magic);
    }
    std::filesystem::remove(bad);
  }
  SECTION("image/label count mismatch") {
    std::vector<unsigned char> short_labels;
    be32(short_labels, 0x00000801u);
    be32(short_labels, 3);
    short_labels.insert(short_labels.end(), {0, 1, 2});
    const auto bad = temp_file("gorqat_shortlabels.idx");
    write_file(bad, std::string(short_labels.begin(), short_labels.end()));
    REQUIRE_THROWS_AS(load_idx_pair(img_path.string(), bad.string()), IoError);
    std::filesystem::remove(bad);
  }
  SECTION("truncated pixel payload") {
    auto truncated = images;
    truncated.resize(truncated.size() - 4);
    const auto bad = temp_file("gorqat_truncated.idx");
    write_file(bad, std::string(truncated.begin(), truncated.end()));
    try {
      load_idx_pair(bad.string(), lab_path.string());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      REQUIRE(e.kind() == IoError::Kind::truncated);
    }
    std::filesystem::remove(bad);
  }
  std::filesystem::remove(img_path);
  std::filesystem::remove(lab_path);
}

TEST_CASE("make_batch") {
  const Dataset d = make_blobs(2, 100, 0.4, 1);
  auto [x, y] = make_batch(d.train, {0, 3, 5});
  REQUIRE(x.shape() == Shape{3, 2});
  REQUIRE(y.size() == 3);
  REQUIRE(x.values()[2] == d.train[3].x[0]);
  REQUIRE_THROWS_AS(make_batch(d.train, {}), ValueError);
}
