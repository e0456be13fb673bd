#include "pascl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

struct Counts {
  std::size_t ood = 0;
  std::size_t in = 0;
};

Counts count(std::span<const ScoredExample> ex) {
  Counts c;
  for (const auto& e : ex) (e.is_ood ? c.ood : c.in)++;
  return c;
}

// Smallest c in [0, total] with c / total >= fraction.
std::size_t min_count_reaching(double fraction, std::size_t total) {
  const double t = static_cast<double>(total);
  auto c = static_cast<std::size_t>(std::max(0.0, std::floor(fraction * t) - 1.0));
  while (c < total && static_cast<double>(c) / t < fraction) ++c;
  return c;
}

MaybeRate accuracy_of(std::span<const ScoredExample> ex, auto&& keep) {
  std::size_t n = 0, correct = 0;
  for (const auto& e : ex) {
    if (e.is_ood || !keep(e)) continue;
    ++n;
    if (e.pred_class == e.true_class) ++correct;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string target_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

nlohmann::ordered_json rate_json(const MaybeRate& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

MaybeRate rate_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

double auroc(std::span<const ScoredExample> examples) {
  const Counts c = count(examples);
  if (c.ood == 0 || c.in == 0) {
    throw InputError("auroc: needs at least one OOD and one in-distribution example");
  }
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].score < examples[b].score;
  });
  // Numerator in half-pairs: 2 per concordant pair, 1 per tie.
  std::uint64_t half_pairs = 0;
  std::uint64_t in_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t o = 0, n = 0;
    while (j < order.size() && examples[order[j]].score == examples[order[i]].score) {
      (examples[order[j]].is_ood ? o : n)++;
      ++j;
    }
    half_pairs += 2 * o * in_below + o * n;
    in_below += n;
    i = j;
  }
  return static_cast<double>(half_pairs) /
         (2.0 * static_cast<double>(c.ood) * static_cast<double>(c.in));
}

double aupr(std::span<const ScoredExample> examples) {
  const Counts c = count(examples);
  if (c.ood == 0) throw InputError("aupr: needs at least one OOD example");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = examples[a];
    const auto& y = examples[b];
    if (x.score != y.score) return x.score > y.score;
    return !x.is_ood && y.is_ood;
  });
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!examples[order[k]].is_ood) continue;
    ++tp;
    ap += static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  return ap / static_cast<double>(c.ood);
}

double tpr_threshold(std::span<const ScoredExample> examples, double n) {
  if (!(n > 0.0 && n <= 1.0)) throw InputError("tpr target must lie in (0, 1]");
  std::vector<double> ood;
  for (const auto& e : examples) {
    if (e.is_ood) ood.push_back(e.score);
  }
  if (ood.empty()) throw InputError("tpr threshold needs at least one OOD example");
  std::sort(ood.begin(), ood.end(), std::greater<>());
  const std::size_t needed = std::max<std::size_t>(1, min_count_reaching(n, ood.size()));
  return ood[needed - 1];
}

double fpr_at_tpr(std::span<const ScoredExample> examples, double n) {
  const Counts c = count(examples);
  if (c.in == 0) throw InputError("fpr_at_tpr: needs in-distribution examples");
  const double t = tpr_threshold(examples, n);
  std::size_t fp = 0;
  for (const auto& e : examples) {
    if (!e.is_ood && e.score >= t) ++fp;
  }
  return static_cast<double>(fp) / static_cast<double>(c.in);
}

MaybeRate acc_at_tpr(std::span<const ScoredExample> examples, double n) {
  const double t = tpr_threshold(examples, n);
  return accuracy_of(examples, [t](const ScoredExample& e) { return e.score < t; });
}

MaybeRate acc_at_fpr(std::span<const ScoredExample> examples, double n) {
  if (!(n >= 0.0 && n < 1.0)) throw InputError("acc_at_fpr: n must lie in [0, 1)");
  if (n == 0.0) return accuracy_of(examples, [](const ScoredExample&) { return true; });
  std::vector<std::size_t> in_idx;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].is_ood) in_idx.push_back(i);
  }
  if (in_idx.empty()) return std::nullopt;
  std::stable_sort(in_idx.begin(), in_idx.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].score > examples[b].score;
  });
  const std::size_t rejected = min_count_reaching(n, in_idx.size());
  std::size_t kept = 0, correct = 0;
  for (std::size_t k = rejected; k < in_idx.size(); ++k) {
    const auto& e = examples[in_idx[k]];
    ++kept;
    if (e.pred_class == e.true_class) ++correct;
  }
  if (kept == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(kept);
}

HeadTailAccuracy head_tail_accuracy(std::span<const ScoredExample> examples,
                                    std::span<const int> tail_set) {
  auto in_tail = [&](int c) {
    return std::find(tail_set.begin(), tail_set.end(), c) != tail_set.end();
  };
  HeadTailAccuracy out;
  out.head = accuracy_of(examples, [&](const ScoredExample& e) { return !in_tail(e.true_class); });
  out.tail = accuracy_of(examples, [&](const ScoredExample& e) { return in_tail(e.true_class); });
  return out;
}

MetricsReport compute_report(std::span<const ScoredExample> examples,
                             std::span<const int> tail_set) {
  MetricsReport r;
  r.auroc = auroc(examples);
  r.aupr = aupr(examples);
  for (std::size_t i = 0; i < kTprTargets.size(); ++i) {
    r.fpr_at_tpr[i] = fpr_at_tpr(examples, kTprTargets[i]);
    r.acc_at_tpr[i] = acc_at_tpr(examples, kTprTargets[i]);
  }
  for (std::size_t i = 0; i < kFprTargets.size(); ++i) {
    r.acc_at_fpr[i] = acc_at_fpr(examples, kFprTargets[i]);
  }
  const HeadTailAccuracy ht = head_tail_accuracy(examples, tail_set);
  r.acc_head = ht.head;
  r.acc_tail = ht.tail;
  return r;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_rate(const MaybeRate& v) { return v ? format_real(*v) : "NA"; }

std::vector<std::string> metrics_csv_columns() {
  std::vector<std::string> cols = {"format_version", "seed", "config_hash", "score_fn",
                                   "abf", "auroc", "aupr"};
  for (double n : kTprTargets) cols.push_back("fpr_at_tpr_" + target_label(n));
  for (double n : kTprTargets) cols.push_back("acc_at_tpr_" + target_label(n));
  for (double n : kFprTargets) cols.push_back("acc_at_fpr_" + target_label(n));
  cols.push_back("acc_head");
  cols.push_back("acc_tail");
  return cols;
}

std::vector<std::string> metrics_csv_values(const MetricsReport& r) {
  std::vector<std::string> v = {std::to_string(kMetricsFormatVersion),
                                std::to_string(r.seed),
                                r.config_hash,
                                r.score_fn,
                                r.abf ? "1" : "0",
                                format_real(r.auroc),
                                format_real(r.aupr)};
  for (double x : r.fpr_at_tpr) v.push_back(format_real(x));
  for (const auto& x : r.acc_at_tpr) v.push_back(format_rate(x));
  for (const auto& x : r.acc_at_fpr) v.push_back(format_rate(x));
  v.push_back(format_rate(r.acc_head));
  v.push_back(format_rate(r.acc_tail));
  return v;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  auto join = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  join(metrics_csv_columns());
  join(metrics_csv_values(r));
}

void write_metrics_json(const std::filesystem::path& path, const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "pascl-metrics";
  j["version"] = kMetricsFormatVersion;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["score_fn"] = r.score_fn;
  j["abf"] = r.abf;
  j["auroc"] = r.auroc;
  j["aupr"] = r.aupr;
  nlohmann::ordered_json fpr, acc_tpr, acc_fpr;
  for (std::size_t i = 0; i < kTprTargets.size(); ++i) {
    fpr[target_label(kTprTargets[i])] = r.fpr_at_tpr[i];
    acc_tpr[target_label(kTprTargets[i])] = rate_json(r.acc_at_tpr[i]);
  }
  for (std::size_t i = 0; i < kFprTargets.size(); ++i) {
    acc_fpr[target_label(kFprTargets[i])] = rate_json(r.acc_at_fpr[i]);
  }
  j["fpr_at_tpr"] = fpr;
  j["acc_at_tpr"] = acc_tpr;
  j["acc_at_fpr"] = acc_fpr;
  j["acc_head"] = rate_json(r.acc_head);
  j["acc_tail"] = rate_json(r.acc_tail);
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  // nlohmann writes the shortest string that reads back to the same double.
  os << j.dump(2) << '\n';
}

MetricsReport read_metrics_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    if (j.at("format") != "pascl-metrics" || j.at("version") != kMetricsFormatVersion) {
      throw DataError(path.string() + ": unsupported metrics format");
    }
    MetricsReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.score_fn = j.at("score_fn").get<std::string>();
    r.abf = j.at("abf").get<bool>();
    r.auroc = j.at("auroc").get<double>();
    r.aupr = j.at("aupr").get<double>();
    for (std::size_t i = 0; i < kTprTargets.size(); ++i) {
      r.fpr_at_tpr[i] = j.at("fpr_at_tpr").at(target_label(kTprTargets[i])).get<double>();
      r.acc_at_tpr[i] = rate_from_json(j.at("acc_at_tpr").at(target_label(kTprTargets[i])));
    }
    for (std::size_t i = 0; i < kFprTargets.size(); ++i) {
      r.acc_at_fpr[i] = rate_from_json(j.at("acc_at_fpr").at(target_label(kFprTargets[i])));
    }
    r.acc_head = rate_from_json(j.at("acc_head"));
    r.acc_tail = rate_from_json(j.at("acc_tail"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_metrics_table(const MetricsReport& r) {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
    return std::string(buf);
  };
  auto pct_or_na = [&](const MaybeRate& v) { return v ? pct(*v) : std::string("    NA"); };
  std::ostringstream os;
  os << "score=" << r.score_fn << "  abf=" << (r.abf ? "on" : "off") << "  (percent)\n";
  os << " AUROC   AUPR  FPR95  ACC95    ACC\n";
  os << pct(r.auroc) << ' ' << pct(r.aupr) << ' ' << pct(r.fpr_at_tpr[1]) << ' '
     << pct_or_na(r.acc_at_tpr[1]) << ' ' << pct_or_na(r.acc_at_fpr[0]) << "\n\n";
  os << "FPR@TPRn   ";
  for (double n : kTprTargets) os << "  " << target_label(n) << "  ";
  os << "\n          ";
  for (double x : r.fpr_at_tpr) os << ' ' << pct(x);
  os << "\nACC@TPRn  ";
  for (const auto& x : r.acc_at_tpr) os << ' ' << pct_or_na(x);
  os << "\nACC@FPRn   ";
  for (double n : kFprTargets) os << "  " << target_label(n) << "  ";
  os << "\n          ";
  for (const auto& x : r.acc_at_fpr) os << ' ' << pct_or_na(x);
  os << "\nhead acc " << pct_or_na(r.acc_head) << "   tail acc " << pct_or_na(r.acc_tail)
     << '\n';
  return os.str();
}

}  // namespace pascl
