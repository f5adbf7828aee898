#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nabla/errors.hpp"

namespace nabla {

/// Named scenarios shipped with the runner; each finishes well under a minute on one core.
inline const std::vector<std::pair<std::string, const char*>>& builtin_table() {
  static const std::vector<std::pair<std::string, const char*>> t = {
      {"magnetic-example", R"J({
  "name": "magnetic-example",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 129, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": "magnetic-example",
  "seed": 7,
  "checks": [
    {"id": "closed-forms", "type": "magnetic-closed-forms", "tolerance": 1e-5, "trials": 20},
    {"id": "leibniz", "type": "leibniz", "tolerance": 1e-5, "trials": 10},
    {"id": "curvature", "type": "curvature-commutator", "tolerance": 1e-5, "trials": 10},
    {"id": "metric-compatible", "type": "metric-compatibility", "tolerance": 1e-12},
    {"id": "curvature-order", "type": "convergence", "tolerance": 12, "refinements": [65, 129],
     "of": {"type": "curvature-commutator", "trials": 4}}
  ]
})J"},
      {"sphere-ffc", R"J({
  "name": "sphere-ffc",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 129, "margin": 16, "fd_order": 4},
  "metric": "sphere-stereographic",
  "bundle": "magnetic-example",
  "embedding": "sphere-ambient",
  "seed": 11,
  "checks": [
    {"id": "sphere-identities", "type": "generator-identities", "tolerance": 1e-5, "trials": 4},
    {"id": "sphere-structure", "type": "structure-functions", "tolerance": 1e-4},
    {"id": "random-identities", "type": "generator-identities", "tolerance": 1e-5, "trials": 4,
     "metric": "embedding", "embedding": {"random": {"N": 4, "seed": 3, "wobble": 0.2}}}
  ]
})J"},
      {"flat-adjoint", R"J({
  "name": "flat-adjoint",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 385, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": "magnetic-example",
  "seed": 3,
  "checks": [
    {"id": "adjoint-flat", "type": "adjoint-pairing", "tolerance": 1e-6, "trials": 25},
    {"id": "adjoint-conformal", "type": "adjoint-pairing", "tolerance": 1e-6, "trials": 10,
     "metric": {"conformal": "exp(0.6*x1)"}}
  ]
})J"},
      {"conformal-halfline", R"J({
  "name": "conformal-halfline",
  "chart": {"box": [[0.2, 3.2]], "points": 129, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": {"trivial": 1},
  "weight": {"rho": "x1", "f0": "1", "admissible": true},
  "seed": 5,
  "checks": [
    {"id": "ratio-l0", "type": "conformal-ratio", "tolerance": 0.01, "l": 0, "p": 2, "refinements": [129, 257, 513]},
    {"id": "ratio-l1", "type": "conformal-ratio", "tolerance": 0.01, "l": 1, "p": 2, "refinements": [129, 257, 513]},
    {"id": "weighted-duality", "type": "weighted-duality", "tolerance": 1e-4, "m": 1, "trials": 3}
  ]
})J"},
      {"covering", R"J({
  "name": "covering",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 65, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": "magnetic-example",
  "seed": 13,
  "checks": [
    {"id": "multiplicity", "type": "covering", "tolerance": 1e-10, "coverings": 10, "s": 1,
     "multiplicities": [1, 2, 3, 4], "p": [1, 2, "inf"]}
  ]
})J"},
      {"operator-rewriting", R"J({
  "name": "operator-rewriting",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 193, "margin": 16, "fd_order": 4},
  "metric": "sphere-stereographic",
  "bundle": "magnetic-example",
  "embedding": "sphere-ambient",
  "seed": 17,
  "checks": [
    {"id": "round-trip", "type": "operator-rewriting", "tolerance": 1e-4, "order": 3, "specs": 6}
  ]
})J"},
      {"divergence-form", R"J({
  "name": "divergence-form",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 193, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": "magnetic-example",
  "seed": 19,
  "checks": [
    {"id": "magnetic-m1", "type": "divergence-duality", "tolerance": 1e-5, "m": 1, "forms": 3, "pairs": 3},
    {"id": "flat-m1", "type": "divergence-duality", "tolerance": 1e-5, "m": 1, "forms": 3, "pairs": 3,
     "bundle": {"trivial": 1}},
    {"id": "magnetic-m2", "type": "divergence-duality", "tolerance": 1e-5, "m": 2, "forms": 1, "pairs": 2, "points": 257}
  ]
})J"},
      {"norm-constants", R"J({
  "name": "norm-constants",
  "chart": {"box": [[-1, 1], [-1, 1]], "points": 65, "margin": 12, "fd_order": 4},
  "metric": "euclidean",
  "bundle": "magnetic-example",
  "seed": 23,
  "checks": [
    {"id": "multiplication-l2", "type": "norm-constant", "tolerance": 1e-12, "kind": "multiplication",
     "l": 2, "p": "inf", "q": 2, "r": 2, "expected": 5},
    {"id": "equivalence-l1", "type": "norm-constant", "tolerance": 1e-12, "kind": "equivalence",
     "l": 1, "p": 2, "normA": 1, "expected": 2.449489742783178},
    {"id": "equivalence-flat", "type": "norm-constant", "tolerance": 1e-12, "kind": "equivalence",
     "l": 1, "p": 2, "normA": 0, "expected": 2},
    {"id": "perturbed-l2", "type": "perturbed-norm", "tolerance": 1e-12, "l": 2, "p": 2, "trials": 20},
    {"id": "multiplication-trials", "type": "multiplication", "tolerance": 1e-12, "l": 2, "q": 2, "trials": 20},
    {"id": "mapping", "type": "mapping-bound", "tolerance": 1e-12, "order": 2, "k": 1, "p": 2, "trials": 5}
  ]
})J"},
      {"empty", R"J({"name": "empty", "checks": []})J"},
  };
  return t;
}

inline std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& [name, text] : builtin_table()) out.push_back(name);
  return out;
}

inline bool has_builtin(const std::string& name) {
  for (const auto& [n, text] : builtin_table())
    if (n == name) return true;
  return false;
}

inline nlohmann::json builtin_scenario(const std::string& name) {
  for (const auto& [n, text] : builtin_table())
    if (n == name) return nlohmann::json::parse(text);
  fail(ErrorKind::resolution_error, "no built-in scenario named '" + name + "'");
}

}  // namespace nabla
