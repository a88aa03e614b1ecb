#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "seedet/detect.hpp"
#include "seedet/error.hpp"
#include "seedet/patches.hpp"
#include "seedet/phantom.hpp"
#include "seedet/volume.hpp"

using namespace seedet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("seedet_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Volume ramp(std::size_t n) {
  Volume v("ramp", n, n + 1, n + 2);
  for (std::size_t i = 0; i < v.size(); ++i) v.values[i] = static_cast<float>(i % 97) / 97.0f;
  return v;
}

// Preprocessed cube with a bright ball of the given radius.
PatchSample ball_patch(std::size_t P, double cx, double cy, double cz, double radius) {
  PatchSample s;
  s.scan_id = "ball";
  s.size = P;
  s.values.assign(P * P * P, 0.1f);
  for (std::size_t z = 0; z < P; ++z)
    for (std::size_t y = 0; y < P; ++y)
      for (std::size_t x = 0; x < P; ++x) {
        const double d = std::hypot(x - cx, y - cy, z - cz);
        if (d <= radius) s.values[(z * P + y) * P + x] = 0.9f;
      }
  s.annotations.push_back({"ball", cx, cy, cz, 2 * radius});
  return s;
}

float sample_at(const PatchSample& s, double x, double y, double z) {
  const auto r = [&](double v) { return static_cast<std::size_t>(std::clamp(std::lround(v), 0L, long(s.size) - 1)); };
  return s.values[(r(z) * s.size + r(y)) * s.size + r(x)];
}

}  // namespace

TEST_CASE("intensity preprocessing") {
  CHECK(normalize_intensity(-1200) == 0.0);
  CHECK(normalize_intensity(600) == 1.0);
  CHECK(normalize_intensity(-1500) == 0.0);
  CHECK(normalize_intensity(-300) == 0.5);
  CHECK(normalize_intensity(2000) == 1.0);

  Volume v("v", 8, 8, 8, -300.0f);
  v.at(1, 2, 3) = -5000.0f;
  v.at(4, 4, 4) = 900.0f;
  const Volume p = preprocess(v);
  CHECK(p.at(0, 0, 0) == 0.5f);
  CHECK(p.at(1, 2, 3) == 0.0f);
  CHECK(p.at(4, 4, 4) == 1.0f);
  for (float x : p.values) CHECK((x >= 0.0f && x <= 1.0f));

  v.mask = std::vector<std::uint8_t>(v.size(), 1);
  (*v.mask)[v.index(0, 0, 0)] = 0;
  const Volume m = preprocess(v);
  CHECK(m.at(0, 0, 0) == 0.0f);
  CHECK(m.at(1, 0, 0) == 0.5f);

  CHECK_THROWS_AS(preprocess(v, 0, 0), ConfigError);
  Volume bad("bad", 8, 8, 8);
  bad.values[5] = std::nanf("");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(Volume("small", 4, 8, 8).validate(), ConfigError);
}

TEST_CASE("volume, mask and annotation files round trip") {
  const fs::path dir = scratch("io");
  Volume v = ramp(9);
  v.values[7] = -1234.5f;
  write_volume(dir / "scan_a.vol3", v);
  const Volume back = read_volume(dir / "scan_a.vol3");
  CHECK(back.scan_id == "scan_a");
  CHECK(back.nx == 9);
  CHECK(back.ny == 10);
  CHECK(back.nz == 11);
  CHECK(back.values == v.values);

  // Header bytes are fixed little-endian.
  std::ifstream is(dir / "scan_a.vol3", std::ios::binary);
  char head[10];
  is.read(head, 10);
  CHECK(std::string(head, 4) == "VOL3");
  CHECK(static_cast<unsigned char>(head[6]) == 9);
  CHECK(fs::file_size(dir / "scan_a.vol3") == 18 + 4 * v.size());

  v.mask = std::vector<std::uint8_t>(v.size(), 0);
  (*v.mask)[3] = 1;
  write_mask(dir / "scan_a.mask.vol3", v);
  Volume plain = read_volume(dir / "scan_a.vol3");
  read_mask(dir / "scan_a.mask.vol3", plain);
  CHECK(plain.mask == v.mask);
  Volume other = ramp(8);
  CHECK_THROWS_AS(read_mask(dir / "scan_a.mask.vol3", other), IoError);

  const std::vector<NoduleAnnotation> rows{{"scan_a", 1.25, 2.5, 3.75, 6.0}, {"scan_b", 40.125, 0.5, 7, 12.5}};
  write_annotations(dir / "ann.csv", rows);
  CHECK(read_annotations(dir / "ann.csv") == rows);
  CHECK(annotations_for(rows, "scan_b").size() == 1);

  CHECK_THROWS_AS(read_volume(dir / "missing.vol3"), IoError);
  std::ofstream(dir / "junk.vol3") << "not a volume";
  CHECK_THROWS(read_volume(dir / "junk.vol3"));
  std::ofstream(dir / "bad.csv") << "scan_id,x,y,z,diameter\nscan_a,1,2,3,-4\n";
  CHECK_THROWS(read_annotations(dir / "bad.csv"));
  fs::remove_all(dir);
}

TEST_CASE("training crops") {
  Volume v = ramp(40);
  const std::vector<NoduleAnnotation> ann{{"ramp", 30, 12, 20, 6}};
  const CropParams always{16, 1.0, 4};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 r1(seed), r2(seed);
    const auto a = extract_train_patch(v, ann, r1, always);
    const auto b = extract_train_patch(v, ann, r2, always);
    CHECK(a.origin == b.origin);
    CHECK(a.values == b.values);
    REQUIRE(a.annotations.size() == 1);
    CHECK(a.annotations[0].x == 30.0 - a.origin[0]);
    CHECK(a.annotations[0].y == 12.0 - a.origin[1]);
    CHECK(a.annotations[0].z == 20.0 - a.origin[2]);
    for (double c : {a.annotations[0].x, a.annotations[0].y, a.annotations[0].z}) {
      CHECK(c >= 0.0);
      CHECK(c < 16.0);
    }
  }
  // Out-of-volume regions read as 0.
  const auto edge = crop_patch(v, ann, {-4, 0, 0}, 8);
  CHECK(edge.values[0] == 0.0f);
  CHECK(edge.values[4] == v.at(0, 0, 0));
  CHECK(edge.annotations.empty());
  const auto big = crop_patch(v, ann, {0, 0, 0}, 64);
  CHECK(big.values[(50 * 64 + 0) * 64 + 0] == 0.0f);
  CHECK(big.annotations.size() == 1);
}

TEST_CASE("augmentation transforms") {
  const std::size_t P = 24;
  const auto s = ball_patch(P, 7, 10, 15, 3);

  const auto same = apply_augmentation(s, {});
  CHECK(same.values == s.values);
  CHECK(same.annotations == s.annotations);

  const auto fx = apply_augmentation(s, {{true, false, false}, 1.0});
  CHECK(fx.annotations[0].x == double(P - 1) - 7);
  CHECK(fx.annotations[0].y == 10);
  CHECK(fx.values[(15 * P + 10) * P + (P - 1 - 7)] == 0.9f);

  const auto up = apply_augmentation(s, {{false, false, false}, 1.25});
  REQUIRE(up.annotations.size() == 1);
  CHECK(up.annotations[0].diameter == doctest::Approx(7.5));
  const auto nod = apply_augmentation(ball_patch(P, 12, 12, 12, 4), {{false, false, false}, 1.25});
  CHECK(nod.annotations[0].diameter == doctest::Approx(10.0));
  CHECK(up.augmentation.scale == 1.25);

  // Every flip/scale combination keeps the blob under its annotation.
  for (int mask = 0; mask < 8; ++mask)
    for (double f : {0.75, 0.9, 1.0, 1.1, 1.25}) {
      const AugmentParams p{{bool(mask & 1), bool(mask & 2), bool(mask & 4)}, f};
      const auto t = apply_augmentation(s, p);
      REQUIRE(t.annotations.size() == 1);
      const auto& a = t.annotations[0];
      CHECK(a.diameter == doctest::Approx(6.0 * f));
      CHECK(sample_at(t, a.x, a.y, a.z) > 0.8f);
      for (float x : t.values) CHECK((x >= 0.0f && x <= 1.0f));
    }

  // A nodule pushed outside by upscaling is dropped.
  const auto corner = apply_augmentation(ball_patch(P, 1, 1, 1, 1), {{false, false, false}, 1.25});
  CHECK(corner.annotations.empty());

  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto p = draw_augmentation(rng);
    CHECK(p.scale >= 0.75);
    CHECK(p.scale <= 1.25);
  }
  std::mt19937_64 r1(8), r2(8);
  CHECK(augment(s, r1).values == augment(s, r2).values);
}

TEST_CASE("test tiling") {
  CHECK(tile_origins(384, 208, 32) == std::vector<std::size_t>{0, 176});
  CHECK(tile_origins(208, 208, 32) == std::vector<std::size_t>{0});
  CHECK(tile_origins(400, 208, 32) == std::vector<std::size_t>{0, 176, 192});
  CHECK(tile_origins(100, 208, 32) == std::vector<std::size_t>{0});
  CHECK(tile_origins(96, 96, 32) == std::vector<std::size_t>{0});

  for (std::size_t extent : {40u, 64u, 97u, 130u, 200u}) {
    const auto o = tile_origins(extent, 32, 8);
    std::vector<int> cover(extent, 0);
    for (std::size_t s : o)
      for (std::size_t i = s; i < std::min(extent, s + 32); ++i) ++cover[i];
    for (int c : cover) CHECK(c >= 1);
    for (std::size_t k = 1; k < o.size(); ++k) {
      CHECK(cover[o[k]] >= 2);  // seams overlap
      CHECK(o[k] + 32 <= extent);
    }
  }

  Volume v("t", 40, 24, 24, 0.25f);
  v.at(39, 23, 23) = 0.75f;
  const std::vector<NoduleAnnotation> ann{{"t", 30, 10, 10, 4}};
  const auto patches = tile_test_patches(v, 24, 8, ann);
  CHECK(patches.size() == 2);
  CHECK(patches[1].origin == std::array<long, 3>{16, 0, 0});
  CHECK(patches[1].values.back() == 0.75f);
  CHECK(patches[1].annotations.size() == 1);
  const auto padded = tile_test_patches(Volume("s", 8, 8, 8, 0.5f), 16, 4);
  REQUIRE(padded.size() == 1);
  CHECK(padded[0].values.back() == 0.0f);
  CHECK(padded[0].annotations.empty());
}

TEST_CASE("phantom generator") {
  PhantomConfig cfg;
  cfg.dims = {48, 48, 48};
  const auto a = generate_phantom(5, cfg, "p");
  const auto b = generate_phantom(5, cfg, "p");
  CHECK(a.volume.values == b.volume.values);
  CHECK(a.nodules == b.nodules);
  CHECK(generate_phantom(6, cfg, "p").volume.values != a.volume.values);

  {
    PhantomConfig bad = cfg;
    bad.nodules_min = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.diameter_min = 30;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(phantom_config_from_json(to_json(cfg)) == cfg);
  }

  // Default phantoms: counts, sizes and center contrast on 100 seeds.
  const PhantomConfig def;
  double worst_margin = 1e9;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = generate_phantom(seed, def, "s");
    CHECK(p.nodules.size() >= def.nodules_min);
    CHECK(p.nodules.size() <= def.nodules_max);
    for (const auto& n : p.nodules) {
      CHECK(n.diameter >= 4.0);
      CHECK(n.diameter <= 20.0);
      const auto r = [](double c) { return static_cast<std::size_t>(std::lround(c)); };
      const double hu = p.volume.at(r(n.x), r(n.y), r(n.z));
      worst_margin = std::min(worst_margin, (hu - kPhantomBackgroundHu) / kPhantomBackgroundStd);
    }
    for (std::size_t i = 0; i < p.nodules.size(); ++i)
      for (std::size_t j = i + 1; j < p.nodules.size(); ++j) {
        const auto& u = p.nodules[i];
        const auto& w = p.nodules[j];
        CHECK(std::hypot(u.x - w.x, u.y - w.y, u.z - w.z) > u.radius() + w.radius());
      }
  }
  CHECK(worst_margin >= 3.0);
}

TEST_CASE("threshold baseline finds phantom nodules") {
  const PhantomConfig def;
  std::vector<Candidate> cands;
  std::vector<NoduleAnnotation> ann;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto p = generate_phantom(derive_seed(77, i), def, phantom_scan_id(i));
    const auto c = threshold_detect(p.volume);
    cands.insert(cands.end(), c.begin(), c.end());
    ann.insert(ann.end(), p.nodules.begin(), p.nodules.end());
  }
  const auto report = evaluate_detections(cands, ann, kFrocRates);
  CHECK(report.n_scans == 10);
  CHECK(report.curve.sensitivities[6] >= 0.5);
}

TEST_CASE("phantom datasets replay from their manifest") {
  const fs::path dir = scratch("ds");
  PhantomConfig cfg;
  cfg.dims = {32, 32, 32};
  cfg.n_volumes = 3;
  cfg.seed = 12;
  write_phantom_dataset(cfg, dir / "a");
  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "a" / "manifest.json"));
  const auto replay = phantom_config_from_json(manifest.at("config").dump());
  CHECK(replay == cfg);
  write_phantom_dataset(replay, dir / "b");
  const auto da = open_dataset(dir / "a"), db = open_dataset(dir / "b");
  REQUIRE(da.volumes.size() == 3);
  CHECK(da.annotations == db.annotations);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(da.volumes[i].filename() == db.volumes[i].filename());
    CHECK(read_volume(da.volumes[i]).values == read_volume(db.volumes[i]).values);
  }
  CHECK_THROWS_AS(open_dataset(dir / "none"), IoError);
  fs::remove_all(dir);
}
