#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pascl/tape.hpp"

namespace pascl {

struct GradCaseResult {
  std::string name;  // e.g. "primitive/matmul", "loss/pascl_contrastive/partial"
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradSuiteOptions {
  std::size_t seeds = 20;
  std::uint64_t first_seed = 0;
  double step = 1e-5;
  double tol = 1e-4;
  bool primitives = true;
  bool losses = true;
};

// Finite-difference checks of every tape primitive and every training loss
// on seeded random inputs (losses: batch 12, embedding width 4, 4 classes).
std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& opts = {});

}  // namespace pascl
