#include "diffspeed/csi_io.hpp"
#include "diffspeed/errors.hpp"
#include "diffspeed/scene_io.hpp"
#include "diffspeed/wav.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace diffspeed;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("diffspeed_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Recording ramp(std::size_t n) {
  Recording r;
  r.sample_rate = 48000.0;
  for (std::size_t i = 0; i < n; ++i) r.pcm.push_back(static_cast<std::int32_t>(i * 37 % 65536) - 32768);
  return r;
}

CsiSeries small_series() {
  CsiSeries s;
  s.csi_rate = 187.5;
  s.subcarrier_frequencies = Eigen::VectorXd::LinSpaced(3, 20000.0, 20200.0);
  s.frames.resize(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index k = 0; k < 3; ++k) s.frames(i, k) = {0.1 * double(i) + 1e-17, -1.0 / double(k + 3)};
  s.timestamps = Eigen::VectorXd::LinSpaced(4, 0.0, 3.0 / 187.5);
  s.metadata = {{"source", "unit"}, {"seed", 7}};
  return s;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("wav round trip") {
    const auto dir = scratch_dir("wav");
    const Recording r = ramp(1001);
    write_wav(dir / "a.wav", r);
    CHECK(fs::file_size(dir / "a.wav") == 44 + 2 * 1001);
    const auto back = read_wav(dir / "a.wav");
    CHECK(back.warnings == 0);
    CHECK(back.recording.sample_rate == 48000.0);
    CHECK(back.recording.pcm == r.pcm);
  }

  TEST_CASE("truncated wav yields the complete samples and a warning") {
    const auto dir = scratch_dir("trunc");
    write_wav(dir / "a.wav", ramp(1000));
    fs::resize_file(dir / "a.wav", 44 + 2 * 600 + 1);
    const auto back = read_wav(dir / "a.wav");
    CHECK(back.recording.pcm.size() == 600);
    CHECK(back.warnings >= 1);
    CHECK_FALSE(back.note.empty());
  }

  TEST_CASE("wav format errors") {
    const auto dir = scratch_dir("bad");
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
    std::ofstream(dir / "junk.wav") << "not a wave file at all, sorry";
    CHECK_THROWS_AS(read_wav(dir / "junk.wav"), SchemaError);

    write_wav(dir / "stereo.wav", ramp(100));
    {
      std::fstream f(dir / "stereo.wav", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(22);
      const char two[2] = {2, 0};
      f.write(two, 2);
    }
    CHECK_THROWS_AS(read_wav(dir / "stereo.wav"), SchemaError);
  }

  TEST_CASE("csi container round trip is exact") {
    const auto s = small_series();
    std::stringstream ss;
    write_csi(ss, s);
    const auto back = read_csi(ss);
    CHECK(back.csi_rate == s.csi_rate);
    CHECK(back.frames == s.frames);
    CHECK(back.timestamps == s.timestamps);
    CHECK(back.subcarrier_frequencies == s.subcarrier_frequencies);
    CHECK(back.metadata == s.metadata);

    std::stringstream again;
    write_csi(again, back);
    CHECK(again.str() == ss.str());
  }

  TEST_CASE("csi container errors") {
    std::stringstream bad("DSCSX\0\0\0garbage");
    CHECK_THROWS_AS(read_csi(bad), SchemaError);

    std::stringstream ss;
    write_csi(ss, small_series());
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 5);
    std::stringstream cut(bytes);
    CHECK_THROWS(read_csi(cut));
    CHECK_THROWS_AS(read_csi(fs::path("/nonexistent/x.csi")), IoError);
  }

  TEST_CASE("scene schema names the missing or mistyped field") {
    json j = {{"geometry", "3d"}, {"num_scatterers", 10}, {"seed", 1}, {"duration", 2.0}, {"speed", 1.0}};
    CHECK(scene_from_json(j).num_scatterers == 10);

    for (const char* field : {"geometry", "num_scatterers", "seed", "duration"}) {
      json k = j;
      k.erase(field);
      try {
        scene_from_json(k);
        FAIL("expected a schema error");
      } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find(field) != std::string::npos);
      }
    }
    json k = j;
    k.erase("speed");
    CHECK_THROWS_AS(scene_from_json(k), SchemaError);
    k = j;
    k["num_scatterers"] = "many";
    try {
      scene_from_json(k);
      FAIL("expected a schema error");
    } catch (const SchemaError& e) {
      CHECK(std::string(e.what()).find("num_scatterers") != std::string::npos);
    }
  }

  TEST_CASE("scene json round trip") {
    json j = {{"geometry", "2d"},
              {"num_scatterers", 50},
              {"seed", 9},
              {"duration", 3.0},
              {"speed_profile", {{{"start", 0.0}, {"speed", 0.5}}, {{"start", 1.5}, {"speed", 1.0}}}},
              {"snr_db", nullptr},
              {"directions", "radial"},
              {"static_paths", {{{"delay", 0.001}, {"gain", {1.0, -0.5}}}}}};
    const SceneParams p = scene_from_json(j);
    CHECK(p.geometry == ModelKind::planar2d);
    CHECK_FALSE(p.snr_db.has_value());
    CHECK(p.speed_profile.size() == 2);
    CHECK(p.static_paths.at(0).gain == std::complex<double>(1.0, -0.5));
    const SceneParams q = scene_from_json(scene_to_json(p));
    CHECK(scene_to_json(q) == scene_to_json(p));
  }
}
