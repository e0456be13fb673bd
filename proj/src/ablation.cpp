#include "pascl/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

const std::set<std::string>& non_key_columns() {
  static const std::set<std::string> s = {"format_version", "seed", "config_hash"};
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string pct(const MetricSummary& m) {
  if (!m.mean) return "NA";
  char buf[64];
  if (m.stddev) {
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * *m.mean, 100.0 * *m.stddev);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *m.mean);
  }
  return buf;
}

}  // namespace

void AblationAxes::validate() const {
  if (variants.empty() && !oe_baseline) throw ConfigError("variant", "ablation axes are empty");
  if (seeds.empty()) throw ConfigError("seed", "ablation needs at least one seed");
  for (double k : ks) {
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("k", "tail fraction must lie in [0, 1]");
  }
  for (double l : lambda2s) {
    if (!(l >= 0.0)) throw ConfigError("lambda2", "must be non-negative");
  }
}

AblationAxes component_axes(std::size_t n_seeds, std::uint64_t first_seed) {
  AblationAxes a;
  a.variants = {ContrastVariant::kSclIn, ContrastVariant::kSclAll, ContrastVariant::kPartial,
                ContrastVariant::kAsymmetric, ContrastVariant::kPascl};
  for (std::size_t i = 0; i < n_seeds; ++i) a.seeds.push_back(first_seed + i);
  a.oe_baseline = true;
  return a;
}

std::string AblationCell::group_key() const {
  return name + "_k" + short_real(k) + "_l2_" + short_real(lambda2);
}

std::string AblationCell::run_id() const { return group_key() + "_s" + std::to_string(seed); }

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base_in,
                                         const AblationAxes& axes) {
  axes.validate();
  ExperimentConfig base = base_in;
  base.sync();
  const std::vector<double> ks =
      axes.ks.empty() ? std::vector<double>{base.data.tail_fraction} : axes.ks;
  const std::vector<double> l2s =
      axes.lambda2s.empty() ? std::vector<double>{base.train.weights.lambda2} : axes.lambda2s;

  std::vector<AblationCell> cells;
  std::set<std::string> seen;
  auto add = [&](const std::string& name, ContrastVariant v, double k, double l2,
                 std::uint64_t seed) {
    AblationCell c;
    c.name = name;
    c.k = k;
    c.lambda2 = l2;
    c.seed = seed;
    c.config = base;
    c.config.data.tail_fraction = k;
    c.config.train.weights.lambda2 = l2;
    c.config.train.variant = v;
    c.config.train.seed = seed;
    c.config.sync();
    if (seen.insert(c.run_id()).second) cells.push_back(std::move(c));
  };
  for (std::uint64_t seed : axes.seeds) {
    for (double k : ks) {
      if (axes.oe_baseline) add("oe", base.train.variant, k, 0.0, seed);
      for (double l2 : l2s) {
        for (ContrastVariant v : axes.variants) {
          if (l2 == 0.0) add("oe", base.train.variant, k, 0.0, seed);
          else add(std::string(variant_name(v)), v, k, l2, seed);
        }
      }
    }
  }
  std::sort(cells.begin(), cells.end(), [](const AblationCell& a, const AblationCell& b) {
    const std::string ga = a.group_key(), gb = b.group_key();
    return ga != gb ? ga < gb : a.seed < b.seed;
  });
  for (const auto& c : cells) c.config.validate();
  return cells;
}

std::vector<CellOutcome> ablation_grid(const ExperimentConfig& base, const AblationAxes& axes,
                                       std::size_t jobs,
                                       const std::function<void(const CellOutcome&)>& on_done) {
  const std::vector<AblationCell> cells = ablation_cells(base, axes);
  std::vector<CellOutcome> out(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      CellOutcome o;
      o.cell = cells[i];
      try {
        o.record = run_experiment(cells[i].config).record;
      } catch (const ConfigError& e) {
        o.error = e.what();
        o.error_kind = 2;
      } catch (const DataError& e) {
        o.error = e.what();
        o.error_kind = 3;
      } catch (const NumericError& e) {
        o.error = e.what();
        o.error_kind = 4;
      } catch (const std::exception& e) {
        o.error = e.what();
        o.error_kind = 1;
      }
      std::lock_guard<std::mutex> lock(mu);
      out[i] = std::move(o);
      if (on_done) on_done(out[i]);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty file");
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " fields, got " +
                      std::to_string(row.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  auto join = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  join(t.header);
  for (const auto& r : t.rows) join(r);
}

CsvTable grid_records(const std::vector<CellOutcome>& outcomes) {
  CsvTable t;
  t.header = record_csv_columns();
  for (const auto& o : outcomes) {
    if (!o.record) continue;
    for (auto& row : record_csv_rows(*o.record, o.cell.name)) t.rows.push_back(std::move(row));
  }
  return t;
}

const AggregateRow* AggregateTable::find(
    const std::vector<std::pair<std::string, std::string>>& match) const {
  for (const auto& row : rows) {
    bool ok = true;
    for (const auto& [col, val] : match) {
      const auto it = std::find(key_columns.begin(), key_columns.end(), col);
      if (it == key_columns.end() || row.key[it - key_columns.begin()] != val) {
        ok = false;
        break;
      }
    }
    if (ok) return &row;
  }
  return nullptr;
}

std::size_t AggregateTable::metric_index(const std::string& column) const {
  const auto it = std::find(metric_columns.begin(), metric_columns.end(), column);
  if (it == metric_columns.end()) throw InputError("no metric column " + column);
  return static_cast<std::size_t>(it - metric_columns.begin());
}

AggregateTable aggregate_records(const CsvTable& records) {
  const auto expected = record_csv_columns();
  if (records.header != expected) {
    throw DataError("record CSV header does not match the run-record layout");
  }
  AggregateTable t;
  std::vector<std::size_t> key_idx, metric_idx;
  bool metrics_started = false;
  for (std::size_t i = 0; i < records.header.size(); ++i) {
    const std::string& col = records.header[i];
    if (col == "auroc") metrics_started = true;
    if (metrics_started) {
      t.metric_columns.push_back(col);
      metric_idx.push_back(i);
    } else if (!non_key_columns().count(col)) {
      t.key_columns.push_back(col);
      key_idx.push_back(i);
    }
  }
  std::map<std::vector<std::string>, std::vector<std::vector<std::optional<double>>>> groups;
  for (const auto& row : records.rows) {
    std::vector<std::string> key;
    for (std::size_t i : key_idx) key.push_back(row[i]);
    std::vector<std::optional<double>> vals;
    for (std::size_t i : metric_idx) {
      if (row[i] == "NA") {
        vals.emplace_back();
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(row[i].c_str(), &end);
      if (row[i].empty() || *end != '\0') {
        throw DataError("record CSV: bad number '" + row[i] + "' in column " +
                        records.header[i]);
      }
      vals.emplace_back(v);
    }
    groups[key].push_back(std::move(vals));
  }
  for (const auto& [key, runs] : groups) {
    AggregateRow r;
    r.key = key;
    r.runs = runs.size();
    for (std::size_t m = 0; m < metric_idx.size(); ++m) {
      MetricSummary s;
      double sum = 0.0;
      for (const auto& run : runs) {
        if (run[m]) {
          sum += *run[m];
          ++s.n;
        }
      }
      if (s.n > 0) s.mean = sum / static_cast<double>(s.n);
      if (s.n > 1) {
        double ss = 0.0;
        for (const auto& run : runs) {
          if (run[m]) ss += (*run[m] - *s.mean) * (*run[m] - *s.mean);
        }
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
      }
      r.metrics.push_back(s);
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

CsvTable aggregate_csv(const AggregateTable& t) {
  CsvTable out;
  out.header = t.key_columns;
  out.header.push_back("runs");
  for (const auto& m : t.metric_columns) {
    out.header.push_back(m + "_n");
    out.header.push_back(m + "_mean");
    out.header.push_back(m + "_std");
  }
  for (const auto& r : t.rows) {
    std::vector<std::string> row = r.key;
    row.push_back(std::to_string(r.runs));
    for (const auto& s : r.metrics) {
      row.push_back(std::to_string(s.n));
      row.push_back(s.mean ? format_real(*s.mean) : "NA");
      row.push_back(s.stddev ? format_real(*s.stddev) : "NA");
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string format_aggregate(const AggregateTable& t) {
  std::ostringstream os;
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < t.key_columns.size(); ++i) {
      os << (i ? " " : "") << t.key_columns[i] << '=' << r.key[i];
    }
    os << "  (runs=" << r.runs << ")\n";
    for (std::size_t m = 0; m < t.metric_columns.size(); ++m) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "  %-18s", t.metric_columns[m].c_str());
      os << buf << pct(r.metrics[m]) << '\n';
    }
  }
  return os.str();
}

std::string format_component_table(const AggregateTable& t, const std::string& score_fn) {
  struct RowSpec {
    const char* label;
    const char* cell;
    const char* asym;
    const char* partial;
    const char* abf;
  };
  static const RowSpec kRows[] = {
      {"OE (no contrastive loss)", "oe", "-", "-", "0"},
      {"SCL", "scl_all", "no", "no", "0"},
      {"partial only", "partial", "no", "yes", "0"},
      {"asymmetric only", "asymmetric", "yes", "no", "0"},
      {"PASCL", "pascl", "yes", "yes", "0"},
      {"PASCL + ABF", "pascl", "yes", "yes", "1"},
  };
  const std::vector<std::string> cols = {"auroc",          "aupr",
                                         "fpr_at_tpr_0.95", "acc_at_tpr_0.95",
                                         "acc_at_fpr_0",   "acc_at_fpr_0.001",
                                         "acc_at_fpr_0.01", "acc_at_fpr_0.1",
                                         "acc_tail"};
  const auto col_of = [&](const std::string& name) {
    const auto it = std::find(t.key_columns.begin(), t.key_columns.end(), name);
    if (it == t.key_columns.end()) throw DataError("aggregate lacks column " + name);
    return static_cast<std::size_t>(it - t.key_columns.begin());
  };
  const std::size_t ci = col_of("cell"), ki = col_of("k"), li = col_of("lambda2"),
                    si = col_of("score_fn");

  std::set<std::pair<std::string, std::string>> settings;
  for (const auto& r : t.rows) {
    if (r.key[si] == score_fn && r.key[ci] != "oe") settings.insert({r.key[ki], r.key[li]});
  }
  if (settings.empty()) {
    for (const auto& r : t.rows) {
      if (r.key[si] == score_fn) settings.insert({r.key[ki], "-"});
    }
  }

  std::ostringstream os;
  char buf[256];
  for (const auto& [k, l2] : settings) {
    os << "score=" << score_fn << " k=" << k << " lambda2=" << l2
       << "  (percent, mean ± stddev over runs)\n";
    std::snprintf(buf, sizeof buf, "%-26s %-5s %-8s %-4s", "row", "asym", "partial", "abf");
    os << buf;
    const char* heads[] = {"AUROC", "AUPR", "FPR95", "ACC95", "ACC@FPR0",
                           "ACC@FPR0.001", "ACC@FPR0.01", "ACC@FPR0.1", "tail ACC"};
    for (const char* h : heads) {
      std::snprintf(buf, sizeof buf, " %-16s", h);
      os << buf;
    }
    os << " runs\n";
    for (const RowSpec& spec : kRows) {
      std::vector<std::pair<std::string, std::string>> match = {
          {"cell", spec.cell}, {"k", k}, {"score_fn", score_fn}, {"abf", spec.abf}};
      if (std::string(spec.cell) != "oe" && l2 != "-") match.emplace_back("lambda2", l2);
      const AggregateRow* row = t.find(match);
      std::snprintf(buf, sizeof buf, "%-26s %-5s %-8s %-4s", spec.label, spec.asym,
                    spec.partial, std::string(spec.abf) == "1" ? "yes" : "no");
      os << buf;
      if (row == nullptr) {
        os << " missing\n";
        continue;
      }
      for (const auto& c : cols) {
        std::snprintf(buf, sizeof buf, " %-16s", pct(row->metrics[t.metric_index(c)]).c_str());
        os << buf;
      }
      os << ' ' << row->runs << '\n';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pascl
