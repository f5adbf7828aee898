// Runs the scenarios under scenarios/acceptance and prints one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "nabla/nabla.hpp"

namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  const char* title;
  double max_seconds = 0;  // 0 means no runtime limit
};

const std::vector<Criterion> kCriteria = {
    {1, "magnetic example closed forms", 10.0},
    {2, "Leibniz and curvature identities"},
    {3, "adjoint pairing, flat and conformal"},
    {4, "covering multiplicity bounds"},
    {5, "generator system identities"},
    {6, "operator rewriting closure"},
    {7, "explicit norm constants"},
    {8, "weighted conformal two-route ratio"},
    {9, "divergence-form duality"},
    {10, "fourth-order convergence of two-route residuals"},
};

std::vector<fs::path> scenario_files(int id) {
  char prefix[8];
  std::snprintf(prefix, sizeof prefix, "c%02d-", id);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(NABLA_ACCEPTANCE_DIR))
    if (e.path().extension() == ".json" && e.path().filename().string().rfind(prefix, 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main() {
  int failures = 0;
  for (const auto& c : kCriteria) {
    bool pass = true;
    std::string detail;
    double seconds = 0;
    try {
      const auto files = scenario_files(c.id);
      if (files.empty()) throw nabla::Error(nabla::ErrorKind::io_error, "no scenario files");
      for (const auto& f : files) {
        const auto t0 = std::chrono::steady_clock::now();
        nabla::Report rep = nabla::run_scenario(nabla::normalize_scenario(nabla::read_json_file(f.string())));
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& r : rep.rows) {
          pass = pass && r.pass;
          std::fprintf(stderr, "  c%02d %s/%s measured=%.3g bound=%.3g %s %s\n", c.id, r.scenario.c_str(),
                       r.check_id.c_str(), r.measured, r.bound, r.pass ? "ok" : "FAILED", r.note.c_str());
          char v[64];
          std::snprintf(v, sizeof v, "%s=%.3g", r.check_id.c_str(), r.measured);
          detail += (detail.empty() ? "" : ", ") + std::string(v);
        }
        if (rep.rows.empty()) pass = false;
      }
    } catch (const std::exception& e) {
      pass = false;
      detail = e.what();
    }
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.1f s", seconds);
    if (c.max_seconds > 0 && seconds >= c.max_seconds) {
      pass = false;
      detail += " (runtime limit exceeded)";
    }
    std::printf("%s criterion %d: %s [%s] %s\n", pass ? "PASS" : "FAIL", c.id, c.title, timing, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
