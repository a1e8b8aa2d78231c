#include "diffspeed/cli/commands.hpp"
#include "diffspeed/csi_io.hpp"
#include "diffspeed/wav.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace diffspeed;
using namespace diffspeed::cli;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run_cli(const std::vector<std::string>& args, const std::map<std::string, std::string>& env = {}) {
  std::ostringstream out, err;
  const EnvLookup lookup = [env](const std::string& name) -> std::optional<std::string> {
    auto it = env.find(name);
    return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
  };
  const int code = run(args, out, err, lookup);
  return {code, out.str(), err.str()};
}

fs::path dir_for(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("diffspeed_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kScene = R"({"geometry":"3d","num_scatterers":200,"seed":7,"duration":2.0,"speed":1.0})";

std::vector<std::string> csv_lines(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes") {
    const auto d = dir_for("codes");
    CHECK(run_cli({}).code == kConfigError);
    CHECK(run_cli({"estimate", "--bogus"}).code == kConfigError);
    CHECK(run_cli({"estimate", "-i", (d / "missing.csi").string(), "-o", (d / "x.csv").string()}).code == kIoError);
    CHECK(run_cli({"gen-tx", "--duration", "1", "--frame-length", "511", "-o", (d / "a.wav").string()}).code ==
          kConfigError);
    CHECK(run_cli({"gen-tx", "--duration", "1", "-o", (d / "no" / "such" / "a.wav").string()}).code == kIoError);
    CHECK(run_cli({"--help"}).code == kOk);
    CHECK(run_cli({"--version"}).out.find(kToolVersion) != std::string::npos);
  }

  TEST_CASE("schema error names the missing field") {
    const auto d = dir_for("schema");
    write_text(d / "s.json", R"({"geometry":"3d","seed":1,"duration":1.0,"speed":1.0})");
    const auto r = run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "a.csi").string()});
    CHECK(r.code == kSchemaError);
    CHECK(r.err.find("num_scatterers") != std::string::npos);
    write_text(d / "broken.json", "{ not json");
    CHECK(run_cli({"simulate", "-s", (d / "broken.json").string(), "--out-csi", (d / "a.csi").string()}).code ==
          kSchemaError);
  }

  TEST_CASE("simulate twice with seed 7 gives identical bytes, and replay reproduces them") {
    const auto d = dir_for("determinism");
    write_text(d / "s.json", kScene);
    REQUIRE(run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "a.csi").string()}).code == kOk);
    REQUIRE(run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "b.csi").string()}).code == kOk);
    CHECK(slurp(d / "a.csi") == slurp(d / "b.csi"));

    const auto manifest = d / "a.csi.manifest.json";
    REQUIRE(fs::exists(manifest));
    const json m = json::parse(slurp(manifest));
    CHECK(m.at("seed") == 7);
    CHECK(m.at("tool_version") == kToolVersion);
    CHECK(m.at("output_digests").at("csi") == file_digest(d / "a.csi"));
    REQUIRE(run_cli({"replay", "-m", manifest.string(), "--suffix", ".again"}).code == kOk);
    CHECK(slurp(d / "a.csi.again") == slurp(d / "a.csi"));
  }

  TEST_CASE("estimate writes units, header and the model per row") {
    const auto d = dir_for("estimate");
    write_text(d / "s.json", kScene);
    REQUIRE(run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "a.csi").string()}).code == kOk);
    REQUIRE(run_cli({"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.csv").string(), "--model", "both"}).code ==
            kOk);
    const auto lines = csv_lines(d / "v.csv");
    REQUIRE(lines.size() == 2 + 2 * 11);
    CHECK(lines[0].rfind("# ", 0) == 0);
    CHECK(lines[0].find("[m/s]") != std::string::npos);
    CHECK(lines[1] == "time_s,motion,speed_mps,tau_s,confidence,zcc,model");
    CHECK(lines[2].substr(lines[2].size() - 2) == "2d");
    CHECK(lines.back().substr(lines.back().size() - 2) == "3d");

    REQUIRE(run_cli({"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.jsonl").string()}).code == kOk);
    const auto jl = csv_lines(d / "v.jsonl");
    CHECK(jl.size() == 11);
    CHECK(json::parse(jl[0]).contains("speed_mps"));
  }

  TEST_CASE("still scene gives motion = 0 on every row") {
    const auto d = dir_for("still");
    write_text(d / "s.json", R"({"geometry":"3d","num_scatterers":300,"seed":5,"duration":2.0,"speed":0.0})");
    REQUIRE(run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "a.csi").string()}).code == kOk);
    REQUIRE(run_cli({"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.csv").string()}).code == kOk);
    const auto lines = csv_lines(d / "v.csv");
    REQUIRE(lines.size() > 2);
    for (std::size_t i = 2; i < lines.size(); ++i) CHECK(lines[i].find(",0,,") != std::string::npos);
  }

  TEST_CASE("configuration precedence: flags over environment over file") {
    const auto d = dir_for("precedence");
    write_text(d / "s.json", kScene);
    REQUIRE(run_cli({"simulate", "-s", (d / "s.json").string(), "--out-csi", (d / "a.csi").string()}).code == kOk);
    write_text(d / "c.json", R"({"estimator":{"window":1.5}})");
    auto windows = [&](const std::vector<std::string>& extra, const std::map<std::string, std::string>& env) {
      std::vector<std::string> args{"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.csv").string()};
      args.insert(args.end(), extra.begin(), extra.end());
      REQUIRE(run_cli(args, env).code == kOk);
      return json::parse(slurp(d / "v.csv.manifest.json")).at("invocation").at("estimator").at("window").get<double>();
    };
    CHECK(windows({}, {}) == 1.0);
    CHECK(windows({"--config", (d / "c.json").string()}, {}) == 1.5);
    CHECK(windows({"--config", (d / "c.json").string()}, {{"DIFFSPEED_WINDOW", "0.8"}}) == 0.8);
    CHECK(windows({"--config", (d / "c.json").string(), "--window", "1.2"}, {{"DIFFSPEED_WINDOW", "0.8"}}) == 1.2);

    CHECK(run_cli({"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.csv").string()},
              {{"DIFFSPEED_WINDOW", "wide"}})
              .code == kConfigError);
    write_text(d / "bad.json", R"({"estimator":{"windo":1.5}})");
    CHECK(run_cli({"estimate", "-i", (d / "a.csi").string(), "-o", (d / "v.csv").string(), "--config",
               (d / "bad.json").string()})
              .code == kConfigError);
  }

  TEST_CASE("gen-tx length, silence and decode of a truncated file") {
    const auto d = dir_for("gentx");
    REQUIRE(run_cli({"gen-tx", "--duration", "1.5", "-o", (d / "tx.wav").string()}).code == kOk);
    CHECK(read_wav(d / "tx.wav").recording.pcm.size() == 72000);
    REQUIRE(run_cli({"gen-tx", "--duration", "0.5", "--amplitude", "0", "-o", (d / "quiet.wav").string()}).code == kOk);
    for (auto s : read_wav(d / "quiet.wav").recording.pcm) REQUIRE(s == 0);

    REQUIRE(run_cli({"decode", "-i", (d / "tx.wav").string(), "-o", (d / "tx.csi").string()}).code == kOk);
    CHECK(read_csi(d / "tx.csi").csi_rate == 187.5);

    fs::copy_file(d / "tx.wav", d / "cut.wav");
    fs::resize_file(d / "cut.wav", fs::file_size(d / "cut.wav") - 1001);
    REQUIRE(run_cli({"decode", "-i", (d / "cut.wav").string(), "-o", (d / "cut.csi").string()}).code == kOk);
    const json m = json::parse(slurp(d / "cut.csi.manifest.json"));
    CHECK(m.at("report").at("warnings").get<int>() >= 1);
    CHECK(read_csi(d / "cut.csi").num_frames() > 0);
  }

  TEST_CASE("eval suites") {
    const auto d = dir_for("eval");
    write_text(d / "empty.json", R"({"kind":"rate_sweep","speeds":[],"csi_rates":[187.5],"seeds":[1],
                                     "scene":{"geometry":"3d","num_scatterers":50,"duration":2.0}})");
    CHECK(run_cli({"eval", "--suite", (d / "empty.json").string(), "-o", (d / "r.csv").string()}).code == kConfigError);

    write_text(d / "sweep.json", R"({"kind":"rate_sweep","speeds":[0.5],"csi_rates":[93.75,187.5],"seeds":[1],
                                     "scene":{"geometry":"3d","num_scatterers":150,"duration":2.0},
                                     "gate_on_motion":false})");
    REQUIRE(run_cli({"eval", "--suite", (d / "sweep.json").string(), "-o", (d / "r.csv").string(), "--summary",
                 (d / "r.json").string()})
                .code == kOk);
    const auto lines = csv_lines(d / "r.csv");
    CHECK(lines.size() == 4);
    CHECK(json::parse(slurp(d / "r.json")).at("rows").size() == 2);

    write_text(d / "dfs.json", R"({"kind":"dfs_vs_ase","cases":[
        {"label":"radial","scene":{"geometry":"3d","num_scatterers":100,"seed":2,"duration":2.0,"speed":0.6,
                                   "directions":"radial"}}]})");
    REQUIRE(run_cli({"eval", "--suite", (d / "dfs.json").string(), "-o", (d / "c.csv").string()}).code == kOk);
    CHECK(csv_lines(d / "c.csv").size() == 3);
  }

  TEST_CASE("psi and kasami outputs") {
    const auto d = dir_for("curves");
    REQUIRE(run_cli({"psi", "--model", "2d", "--points", "11", "-o", (d / "p.csv").string()}).code == kOk);
    const auto p = csv_lines(d / "p.csv");
    CHECK(p.size() == 13);
    CHECK(p[1] == "tau_s,x,psi");
    REQUIRE(run_cli({"kasami", "--index", "2", "-o", (d / "k.csv").string()}).code == kOk);
    const auto k = csv_lines(d / "k.csv");
    CHECK(k.size() == 2 + 63);
    CHECK(run_cli({"kasami", "--index", "9", "-o", (d / "k.csv").string()}).code == kConfigError);
  }
}
