#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nabla/nabla.hpp"

using namespace nabla;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const json& j) {
  try {
    normalize_scenario(j);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io_error;
}

json small() {
  return json::parse(R"({
    "name": "small",
    "chart": {"points": 65},
    "bundle": "magnetic-example",
    "seed": 5,
    "checks": [
      {"id": "compat", "type": "metric-compatibility", "tolerance": 1e-12},
      {"id": "leibniz", "type": "leibniz", "tolerance": 1e-3, "trials": 2},
      {"id": "cover", "type": "covering", "tolerance": 1e-10, "coverings": 2, "p": [2, "inf"]}
    ]
  })");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NABLA_CALC) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("scenario validation", "[cli]") {
  CHECK(kind_of(json::array()) == ErrorKind::config_error);
  CHECK(kind_of({{"nme", "typo"}}) == ErrorKind::config_error);
  CHECK(kind_of(json::parse(R"({"checks": [{"id": "a", "type": "no-such-check", "tolerance": 1}]})")) ==
        ErrorKind::resolution_error);
  CHECK(kind_of(json::parse(R"({"checks": [{"id": "a", "type": "leibniz", "tolerance": 0}]})")) ==
        ErrorKind::config_error);
  CHECK(kind_of(json::parse(R"({"checks": [{"id": "a", "type": "leibniz", "tolerance": 1},
                                           {"id": "a", "type": "leibniz", "tolerance": 1}]})")) ==
        ErrorKind::config_error);
  CHECK(kind_of(json::parse(R"({"chart": {"fd_order": 6}})")) == ErrorKind::config_error);
  CHECK(kind_of(json::parse(R"({"chart": {"box": [[1, -1]]}})")) == ErrorKind::config_error);
  CHECK_THROWS_AS(builtin_scenario("nope"), Error);
}

TEST_CASE("defaults and overrides", "[cli]") {
  auto sc = normalize_scenario(json::object());
  CHECK(sc.config["chart"]["points"] == json({129, 129}));
  CHECK(sc.config["chart"]["fd_order"] == 4);
  CHECK(sc.config["metric"] == "euclidean");
  RunOptions opt;
  opt.h = 0.05;
  opt.fd_order = 2;
  opt.seed = 99;
  auto o = normalize_scenario(json::object(), opt);
  CHECK(o.config["chart"]["points"] == json({41, 41}));
  CHECK(o.config["chart"]["fd_order"] == 2);
  CHECK(o.seed == 99);
}

TEST_CASE("resolution errors surface before running", "[cli]") {
  auto j = small();
  j["checks"][0]["metric"] = "hyperbolic";
  auto sc = normalize_scenario(j);
  try {
    run_scenario(sc);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK((e.kind() == ErrorKind::resolution_error || e.kind() == ErrorKind::config_error));
  }
}

TEST_CASE("empty scenario", "[cli]") {
  auto rep = run_scenario(normalize_scenario(builtin_scenario("empty")));
  CHECK(rep.rows.empty());
  CHECK(rep.pass());
  CHECK(report_csv(rep) == "scenario,check_id,type,s,p,measured,bound,tolerance,pass,h,fd_order,inputs_digest,runtime_ms\n");
}

TEST_CASE("reports are reproducible", "[cli]") {
  auto sc = normalize_scenario(small());
  auto a = run_scenario(sc), b = run_scenario(sc);
  RunOptions threaded;
  threaded.threads = 3;
  auto c = run_scenario(sc, threaded);
  CHECK(report_csv(a) == report_csv(b));
  CHECK(report_csv(a) == report_csv(c));
  REQUIRE(a.rows.size() == 3);
  CHECK(a.rows[0].check_id == "compat");
  CHECK(a.rows[2].check_id == "cover");
  CHECK(a.pass());

  std::istringstream lines(report_csv(a));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 4);

  auto back = report_from_json(report_to_json(a));
  CHECK(report_csv(back) == report_csv(a));
  CHECK(report_to_json(back).dump() == report_to_json(a).dump());
}

TEST_CASE("digests track the resolved inputs", "[cli]") {
  auto a = run_scenario(normalize_scenario(small()));
  auto j = small();
  j["seed"] = 6;
  auto b = run_scenario(normalize_scenario(j));
  CHECK(a.rows[0].inputs_digest != b.rows[0].inputs_digest);
  RunOptions coarse;
  coarse.h = 2.0 / 48;
  auto c = run_scenario(normalize_scenario(small(), coarse));
  CHECK(c.rows[0].h == Catch::Approx(2.0 / 48));
  CHECK(c.rows[0].inputs_digest != a.rows[0].inputs_digest);
}

TEST_CASE("failing checks are reported, not thrown", "[cli]") {
  auto j = small();
  j["checks"][1]["tolerance"] = 1e-30;
  auto rep = run_scenario(normalize_scenario(j));
  CHECK(!rep.pass());
  CHECK(!rep.rows[1].pass);
  CHECK(rep.rows[0].pass);
}

TEST_CASE("fast built-ins pass", "[cli]") {
  for (const char* name : {"magnetic-example", "sphere-ffc", "covering", "norm-constants"}) {
    INFO(name);
    auto rep = run_scenario(normalize_scenario(builtin_scenario(name)));
    CHECK(!rep.rows.empty());
    for (const auto& r : rep.rows) {
      INFO(r.check_id << " measured " << r.measured << " " << r.note);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("command-line exit codes and output files", "[cli]") {
  const fs::path dir = fs::temp_directory_path() / "nabla_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path pass = dir / "pass.json", fail = dir / "fail.json", bad = dir / "bad.json";
  auto j = small();
  j["name"] = "pass";
  write_file(pass.string(), j.dump());
  j["name"] = "fail";
  j["checks"][1]["tolerance"] = 1e-30;
  write_file(fail.string(), j.dump());
  write_file(bad.string(), "{\"checks\": 3}");

  CHECK(run_cli("--list-builtins") == 0);
  CHECK(run_cli("run --scenario empty") == 0);
  CHECK(run_cli("run --scenario " + pass.string() + " --out " + (dir / "out").string()) == 0);
  CHECK(run_cli("run --scenario " + pass.string() + " --out " + (dir / "out").string() + " --format json") == 0);
  CHECK(run_cli("run --scenario " + fail.string()) == 1);
  CHECK(run_cli("run --scenario " + bad.string()) == 2);
  CHECK(run_cli("run --scenario no-such-builtin") == 2);
  CHECK(run_cli("run --scenario empty --fd-order 3") == 2);
  CHECK(run_cli("run --scenario " + (dir / "missing.json").string()) == 2);

  const std::string csv = slurp(dir / "out" / "pass.csv");
  CHECK(csv.rfind("scenario,check_id,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  auto doc = ojson::parse(slurp(dir / "out" / "pass.json"));
  CHECK(report_from_json(doc).rows.size() == 3);

  CHECK(run_cli("run --scenario " + pass.string() + " --out " + (dir / "again").string()) == 0);
  CHECK(slurp(dir / "again" / "pass.csv") == csv);
  fs::remove_all(dir);
}
