#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "nabla/nabla.hpp"

namespace fs = std::filesystem;

static int thread_cap() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("NABLA_CALC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      nabla::fail(nabla::ErrorKind::config_error, "NABLA_CALC_THREADS must be a positive integer");
    return static_cast<int>(std::min<long>(v, hw));
  }
  return hw;
}

static nabla::json load(const std::string& what) {
  if (fs::exists(what)) return nabla::read_json_file(what);
  if (nabla::has_builtin(what)) return nabla::builtin_scenario(what);
  nabla::fail(nabla::ErrorKind::resolution_error, "'" + what + "' is neither a file nor a built-in scenario");
}

int main(int argc, char** argv) {
  CLI::App app{"nabla-calc: connection-calculus scenario runner"};
  app.require_subcommand(0, 1);
  bool list = false;
  app.add_flag("--list-builtins", list, "List built-in scenario names");

  auto* run = app.add_subcommand("run", "Run a scenario and emit its report");
  run->set_help_flag("--help", "Print this help message and exit");
  std::string scenario, out, format = "csv";
  double h = 0;
  int fd_order = 0;
  std::uint64_t seed = 0;
  bool timing = false;
  run->add_option("--scenario", scenario, "Scenario JSON file or built-in name")->required();
  run->add_option("--out", out, "Directory for the report file (default: stdout)");
  run->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));
  auto* h_opt = run->add_option("--h", h, "Grid spacing override");
  auto* fd_opt = run->add_option("--fd-order", fd_order, "Stencil order")->check(CLI::IsMember({2, 4}));
  auto* seed_opt = run->add_option("--seed", seed, "Seed override");
  run->add_flag("--timing", timing, "Fill the runtime_ms column (makes reports non-reproducible)");
  run->add_flag("--list-builtins", list, "List built-in scenario names");

  auto* show = app.add_subcommand("show", "Print a built-in scenario as JSON");
  std::string show_name;
  show->add_option("name", show_name, "Built-in scenario name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (list) {
      for (const auto& n : nabla::builtin_names()) std::cout << n << "\n";
      return 0;
    }
    if (show->parsed()) {
      std::cout << nabla::builtin_scenario(show_name).dump(2) << "\n";
      return 0;
    }
    if (!run->parsed()) {
      std::cerr << app.help();
      return 2;
    }
    nabla::RunOptions opt;
    if (h_opt->count()) opt.h = h;
    if (fd_opt->count()) opt.fd_order = fd_order;
    if (seed_opt->count()) opt.seed = seed;
    opt.timing = timing;
    opt.threads = thread_cap();
    nabla::Scenario sc = nabla::normalize_scenario(load(scenario), opt);
    nabla::Report rep = nabla::run_scenario(sc, opt);
    const std::string text = nabla::report_text(rep, format);
    std::string target = out;
    if (!target.empty()) {
      std::error_code ec;
      fs::create_directories(target, ec);
      if (ec) nabla::fail(nabla::ErrorKind::io_error, "cannot create '" + target + "': " + ec.message());
      target = (fs::path(target) / (sc.name + "." + format)).string();
    } else if (sc.config.contains("output") && sc.config["output"].is_string()) {
      target = sc.config["output"].get<std::string>();
    }
    if (target.empty()) {
      std::cout << text;
    } else {
      nabla::write_file(target, text);
    }
    for (const auto& row : rep.rows)
      if (!row.pass)
        std::fprintf(stderr, "FAIL %s/%s measured=%s bound=%s %s\n", row.scenario.c_str(), row.check_id.c_str(),
                     nabla::fmt_double(row.measured).c_str(), nabla::fmt_double(row.bound).c_str(), row.note.c_str());
    return rep.pass() ? 0 : 1;
  } catch (const nabla::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == nabla::ErrorKind::config_error || e.kind() == nabla::ErrorKind::resolution_error ||
                   e.kind() == nabla::ErrorKind::io_error
               ? 2
               : 1;
  }
}
