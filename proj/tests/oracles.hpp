#pragma once
// Brute-force reference implementations for the detection metrics and a
// random scored-set generator. Shared by unit tests and the acceptance run.

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "pascl/metrics.hpp"

namespace pascl::oracle {

// O(N^2) pair enumeration.
inline double auroc(const std::vector<ScoredExample>& ex) {
  double num = 0.0;
  double pairs = 0.0;
  for (const auto& o : ex) {
    if (!o.is_ood) continue;
    for (const auto& i : ex) {
      if (i.is_ood) continue;
      pairs += 1.0;
      if (o.score > i.score) num += 1.0;
      else if (o.score == i.score) num += 0.5;
    }
  }
  return num / pairs;
}

// Precision at each positive's rank, where a positive is preceded by every
// strictly higher example, every tied negative, and tied positives that
// come earlier in input order.
inline double aupr(const std::vector<ScoredExample>& ex) {
  double sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < ex.size(); ++k) {
    if (!ex[k].is_ood) continue;
    ++n_pos;
    std::size_t rank = 1, tp = 1;
    for (std::size_t j = 0; j < ex.size(); ++j) {
      if (j == k) continue;
      const bool ahead = ex[j].score > ex[k].score ||
                         (ex[j].score == ex[k].score && (!ex[j].is_ood || j < k));
      if (!ahead) continue;
      ++rank;
      if (ex[j].is_ood) ++tp;
    }
    sum += static_cast<double>(tp) / static_cast<double>(rank);
  }
  return sum / static_cast<double>(n_pos);
}

// Scan every distinct score from the top; keep the largest one whose OOD
// recall reaches n.
inline double fpr_at_tpr(const std::vector<ScoredExample>& ex, double n) {
  std::set<double, std::greater<>> cands;
  std::size_t n_ood = 0, n_in = 0;
  for (const auto& e : ex) {
    cands.insert(e.score);
    (e.is_ood ? n_ood : n_in)++;
  }
  for (double t : cands) {
    std::size_t tp = 0, fp = 0;
    for (const auto& e : ex) {
      if (e.score < t) continue;
      (e.is_ood ? tp : fp)++;
    }
    if (static_cast<double>(tp) / static_cast<double>(n_ood) >= n) {
      return static_cast<double>(fp) / static_cast<double>(n_in);
    }
  }
  return 1.0;
}

// Random scored set with 1..200 examples and at least one of each kind.
// Scores come from a small grid half the time so ties are common.
inline std::vector<ScoredExample> random_set(std::mt19937_64& rng, std::size_t max_n = 200) {
  std::uniform_int_distribution<std::size_t> size(2, max_n);
  std::bernoulli_distribution coarse(0.5), ood(0.4);
  std::uniform_int_distribution<int> grid(0, 6), cls(0, 4);
  std::normal_distribution<double> g;
  const std::size_t n = size(rng);
  const bool use_grid = coarse(rng);
  std::vector<ScoredExample> ex(n);
  for (auto& e : ex) {
    e.is_ood = ood(rng);
    e.score = use_grid ? 0.5 * grid(rng) : g(rng) + (e.is_ood ? 0.7 : 0.0);
    e.true_class = cls(rng);
    e.pred_class = cls(rng);
  }
  ex[0].is_ood = true;
  ex[1].is_ood = false;
  std::shuffle(ex.begin(), ex.end(), rng);
  return ex;
}

}  // namespace pascl::oracle
