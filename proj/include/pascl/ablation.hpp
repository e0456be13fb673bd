#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pascl/config.hpp"
#include "pascl/pipeline.hpp"

namespace pascl {

// Grid axes. Empty ks / lambda2s fall back to the base config's value.
// Cells with lambda2 = 0 train no contrastive term, so the variant is
// irrelevant there: they collapse into one "oe" cell per (k, seed).
struct AblationAxes {
  std::vector<ContrastVariant> variants;
  std::vector<double> ks;
  std::vector<double> lambda2s;
  std::vector<std::uint64_t> seeds;
  bool oe_baseline = true;  // adds a lambda2 = 0 cell per k

  void validate() const;
};

// All five variants plus the OE baseline over seeds first_seed.. .
AblationAxes component_axes(std::size_t n_seeds = 6, std::uint64_t first_seed = 0);

struct AblationCell {
  std::string name;  // "oe" or the variant name
  double k = 0.0;
  double lambda2 = 0.0;
  std::uint64_t seed = 0;
  ExperimentConfig config;

  // Identifies the cell without its seed, e.g. "pascl_k0.5_l2_0.1".
  std::string group_key() const;
  std::string run_id() const;  // group_key() + "_s<seed>"
};

// Cells sorted by (group key, seed).
std::vector<AblationCell> ablation_cells(const ExperimentConfig& base, const AblationAxes& axes);

struct CellOutcome {
  AblationCell cell;
  std::optional<RunRecord> record;
  std::string error;  // empty on success
  int error_kind = 0;  // exit-code style: 2 config, 3 data, 4 numeric
};

// Runs every cell, at most `jobs` at a time. A failing cell is recorded
// and the rest of the grid continues. `on_done` is called under a lock as
// each cell finishes. Results come back in ablation_cells() order.
std::vector<CellOutcome> ablation_grid(const ExperimentConfig& base, const AblationAxes& axes,
                                       std::size_t jobs,
                                       const std::function<void(const CellOutcome&)>& on_done = {});

// ---- aggregation over record CSVs ----

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& t);

// Record rows (record_csv_columns() layout) of every successful cell.
CsvTable grid_records(const std::vector<CellOutcome>& outcomes);

struct MetricSummary {
  std::size_t n = 0;                  // defined values
  std::optional<double> mean;
  std::optional<double> stddev;       // sample stddev, needs n >= 2
};

struct AggregateRow {
  std::vector<std::string> key;       // values of key_columns
  std::size_t runs = 0;
  std::vector<MetricSummary> metrics; // parallel to metric_columns
};

struct AggregateTable {
  std::vector<std::string> key_columns;
  std::vector<std::string> metric_columns;
  std::vector<AggregateRow> rows;     // sorted by key

  const AggregateRow* find(const std::vector<std::pair<std::string, std::string>>& match) const;
  std::size_t metric_index(const std::string& column) const;
};

// Groups rows by every run-identifying column except seed and config_hash
// and summarizes each metric column over the group. Rows may come from any
// number of files as long as they share the record header.
AggregateTable aggregate_records(const CsvTable& records);

// Long form: key columns, runs, then <metric>_n/_mean/_std per metric.
CsvTable aggregate_csv(const AggregateTable& t);

// Every group as "mean ± std" percentages.
std::string format_aggregate(const AggregateTable& t);

// The component-importance layout: OE, SCL (scl_all), partial only,
// asymmetric only, PASCL, PASCL + ABF; one block per (k, lambda2) setting.
// Missing rows print as "missing".
std::string format_component_table(const AggregateTable& t, const std::string& score_fn = "msp");

}  // namespace pascl
