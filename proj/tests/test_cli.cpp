#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "avgsim/cli.hpp"
#include "avgsim/errors.hpp"

using namespace avgsim;
using namespace avgsim::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("avgsim-test-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.toml";
  std::ofstream(p) << text;
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run_cmd(const std::string& command, const fs::path& config, const fs::path& out_dir,
               std::optional<std::size_t> threads = {}, bool verify = false) {
  Flags f;
  f.command = command;
  f.config_path = config.string();
  f.out = out_dir.string();
  f.threads = threads;
  f.verify = verify;
  std::ostringstream o, e;
  const int code = run(f, o, e);
  return {code, o.str(), e.str()};
}

const char* kSmallConverge = R"(seed_base = 3
[spaces]
slow_dim = 4
fast_dim = 4
[integrator]
step = 0.002
[plan]
theorem = "T1"
eps_list = [0.1, 0.02]
mc_paths = 8
horizon = 0.2
)";

}  // namespace

TEST_CASE("empty and minimal documents give the defaults") {
  CHECK(parse_config("") == RunConfig{});
  auto c = parse_config("# comment only\n[system]\nname = \"cahn_hilliard_heat_1d\"\n\n[plan]\n");
  CHECK(c == RunConfig{});
  CHECK(c.plan.mc_paths == 200);
  CHECK(c.integrator.step == 2e-4);
  CHECK(c.spaces.slow_dim == 16);
  CHECK(c.seed_base == 1);
}

TEST_CASE("model inequality is checked at parse time") {
  const std::string doc = "[system]\nc = 4.0\nphi_amplitudes = [4.0]\nphi_frequencies = [1.0]\nphi_phases = [0.0]\n";
  try {
    parse_config(doc);
    FAIL("expected rejection");
  } catch (const ConfigurationRejected& e) {
    CHECK(std::string(e.what()).find("phi_sup + c^2/2 must be < lambda_star (9.8696), got 12.0") != std::string::npos);
    CHECK(std::string(e.what()).rfind("system: ", 0) == 0);
  }
}

TEST_CASE("strict keys with a suggestion") {
  try {
    parse_config("[plan]\nepsilonn = 0.1\n");
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("plan.epsilonn") != std::string::npos);
    CHECK(msg.find("did you mean 'epsilon'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[nonsense]\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[provider]\nmode = \"psychic\"\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("[plan]\nmc_paths = -3\n"), InvalidArgument);
}

TEST_CASE("syntax errors carry a location") {
  try {
    parse_config("[plan]\nmc_paths = = 3\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() > 1);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[plan\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[output]\ndirectory = \"unterminated\n"), ParseError);
  CHECK_THROWS_AS(parse_config("[plan]\neps_list = [0.1, 0.02\n"), ParseError);
}

TEST_CASE("config round-trip") {
  RunConfig c;
  c.seed_base = 123456789012345ULL;
  c.system.name = ExampleName::porous_fast_1d;
  c.system.params.ell1 = {0.5, 2.0, 1.5};
  c.system.params.phi = {0.25, {{0.5, 1.0, 0.1}, {0.25, std::sqrt(2.0), -0.3}}};
  c.system.params.c = 0.3;
  c.system.params.fast_cubic = 2.0;
  c.system.params.generic_C = 12.5;
  c.spaces.slow_dim = 8;
  c.spaces.slow_kind = OperatorKind::dirichlet_laplacian_1d;
  c.integrator.scheme = Scheme::tamed_euler;
  c.integrator.step = 1e-3;
  c.integrator.finest_level = 18;
  c.provider.mode = DriftMode::nested_mc;
  c.provider.ensemble_M = 2000;
  c.plan.theorem = "T2";
  c.plan.eps_list = {0.3, 0.1 / 3.0};
  c.plan.delta_list = {0.1, 0.01};
  c.plan.ap_taus = {1.0, 2.0, 3.0};
  c.output.directory = "out dir/with \"quotes\"";
  c.output.write_paths = true;
  c.output.csv = false;
  c.provider.integrator = c.integrator;  // parse mirrors [integrator] into the provider
  const std::string text = serialize_config(c);
  const RunConfig back = parse_config(text);
  CHECK(back.seed_base == c.seed_base);
  CHECK(back.system == c.system);
  CHECK(back.spaces == c.spaces);
  CHECK(back.integrator == c.integrator);
  CHECK(back.provider == c.provider);
  CHECK(back.plan == c.plan);
  CHECK(back.output == c.output);
  CHECK(back == c);
  CHECK(serialize_config(back) == text);
}

TEST_CASE("string utilities") {
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("epsilonn", "epsilon") == 1);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
  CHECK(command_names().size() == 8);
}

TEST_CASE("conditions on defaults pass") {
  auto dir = scratch("conditions");
  auto cfg = write_config(dir, "[plan]\ncheck_samples = 10000\n");
  auto r = run_cmd("conditions", cfg, dir / "out");
  CHECK(r.code == kExitPass);
  CHECK(r.out.rfind("PASS", 0) == 0);
  auto j = nlohmann::json::parse(slurp(dir / "out" / "results.json"));
  REQUIRE(j.at("checks").size() == 5);
  for (const auto& c : j.at("checks")) CHECK(c.at("passed").get<bool>());
}

TEST_CASE("measure below the bias threshold reports the required S") {
  auto dir = scratch("measure");
  auto cfg = write_config(dir, "[spaces]\nslow_dim = 4\nfast_dim = 4\n[provider]\npullback_S = 0.05\nensemble_M = 100\n");
  auto r = run_cmd("measure", cfg, dir / "out");
  CHECK(r.code == kExitError);
  CHECK(r.err.find("required S") != std::string::npos);
  CHECK(r.out.find("PASS") == std::string::npos);
}

TEST_CASE("unknown command and bad config exit 1") {
  Flags f;
  f.command = "simulat";
  std::ostringstream o, e;
  CHECK(run(f, o, e) == kExitError);
  CHECK(e.str().find("simulate") != std::string::npos);
  auto dir = scratch("bad");
  auto r = run_cmd("simulate", write_config(dir, "[plan]\nmc_paths = = 1\n"), dir / "out");
  CHECK(r.code == kExitError);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("converge is deterministic across runs and worker counts, with a complete manifest") {
  auto dir = scratch("converge");
  auto cfg = write_config(dir, kSmallConverge);
  auto a = run_cmd("converge", cfg, dir / "a", 1);
  auto b = run_cmd("converge", cfg, dir / "b", 3);
  REQUIRE(a.code != kExitError);
  CHECK(a.code == b.code);
  CHECK(slurp(dir / "a" / "results.json") == slurp(dir / "b" / "results.json"));
  CHECK(slurp(dir / "a" / "tables" / "convergence.csv").rfind("eps,error,stderr,failures,wall_time", 0) == 0);
  if (a.code != kExitPass) CHECK(a.out.find("PASS") == std::string::npos);

  auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(m.at("seed_base") == 3);
  CHECK(m.at("command") == "converge");
  CHECK(m.contains("config_hash"));
  CHECK(m.contains("tool_version"));
  std::size_t listed = 0;
  for (const auto& f : m.at("files")) {
    const fs::path p = dir / "a" / f.at("path").get<std::string>();
    REQUIRE(fs::exists(p));
    CHECK(hex64(fnv1a64(slurp(p))) == f.at("fnv1a64").get<std::string>());
    ++listed;
  }
  std::size_t on_disk = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a"))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") ++on_disk;
  CHECK(listed == on_disk);

  std::ostringstream err;
  CHECK(verify_manifest((dir / "a").string(), err));
  auto v = run_cmd("converge", cfg, dir / "a", 2, true);
  CHECK(v.code == a.code);
  std::ofstream(dir / "a" / "results.json", std::ios::app) << " ";
  CHECK_FALSE(verify_manifest((dir / "a").string(), err));
}

TEST_CASE("every subcommand runs on a small config") {
  auto dir = scratch("all");
  auto cfg = write_config(dir, R"([spaces]
slow_dim = 3
fast_dim = 3
[integrator]
step = 0.002
[provider]
ensemble_M = 200
[plan]
mc_paths = 4
horizon = 0.2
epsilon = 0.05
delta_list = [0.1, 0.02]
bohr_T = 20.0
check_samples = 200
ap_M = 200
ap_scan_tau_max = 60.0
ap_scan_probe_max = 20.0
ap_scan_window = 20.0
[output]
write_paths = true
)");
  for (const auto& cmd : command_names()) {
    if (cmd == "converge") continue;
    auto r = run_cmd(cmd, cfg, dir / cmd);
    INFO(cmd << ": " << r.out << r.err);
    CHECK(r.code != kExitError);
    CHECK((r.code == kExitPass) == (r.out.rfind("PASS", 0) == 0));
    CHECK(fs::exists(dir / cmd / "results.json"));
    CHECK(fs::exists(dir / cmd / "manifest.json"));
    CHECK(fs::exists(dir / cmd / "config.toml"));
  }
  CHECK(fs::exists(dir / "simulate" / "paths" / "coupled.bin"));
}

TEST_CASE("the executable reports its version") {
  const char* exe = std::getenv("AVGSIM_CLI");
  if (exe == nullptr) {
    MESSAGE("AVGSIM_CLI not set; skipping");
    return;
  }
  const std::string cmd = std::string("\"") + exe + "\" --version";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[256] = {};
  std::string text;
  while (fgets(buf, sizeof buf, pipe)) text += buf;
  CHECK(pclose(pipe) == 0);
  CHECK(text.find(tool_version()) != std::string::npos);
}
