// pascl: data generation, training, evaluation, ablation grids,
// gradient checks and report aggregation.
//
// Exit codes: 0 ok, 1 usage or state error, 2 config error, 3 data error,
// 4 numeric failure, 5 check failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pascl/ablation.hpp"
#include "pascl/config.hpp"
#include "pascl/errors.hpp"
#include "pascl/gradsuite.hpp"
#include "pascl/longtail.hpp"
#include "pascl/metrics.hpp"
#include "pascl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pascl;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4, kCheck = 5 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::string> seed;
  bool force = false;
  bool verbose = false;
};

struct Overrides {
  std::optional<std::string> variant, k, lambda1, lambda2, tau, score, n1, n2;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file");
  app->add_option("--out", c.out, "output directory (default $PASCL_OUT_ROOT/<command>)");
  app->add_option("--seed", c.seed, "seed override");
  app->add_flag("--force", c.force, "overwrite existing artifacts");
  app->add_flag("--verbose", c.verbose, "print progress details");
}

void add_overrides(CLI::App* app, Overrides& o) {
  app->add_option("--variant", o.variant, "scl_in|scl_all|partial|asymmetric|pascl");
  app->add_option("--k", o.k, "tail-class fraction");
  app->add_option("--lambda1", o.lambda1, "outlier-uniformity weight");
  app->add_option("--lambda2", o.lambda2, "contrastive weight");
  app->add_option("--tau", o.tau, "contrastive temperature");
  app->add_option("--score", o.score, "msp|energy");
  app->add_option("--n1", o.n1, "stage-1 epochs");
  app->add_option("--n2", o.n2, "stage-2 epochs (0 disables ABF)");
}

ExperimentConfig load_config(const Common& c, const Overrides* o) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config_file(c.config);
  auto set = [&](const char* key, const std::optional<std::string>& v) {
    if (v) apply_setting(cfg, key, *v);
  };
  set("seed", c.seed);
  if (o != nullptr) {
    set("variant", o->variant);
    set("k", o->k);
    set("lambda1", o->lambda1);
    set("lambda2", o->lambda2);
    set("tau", o->tau);
    set("score", o->score);
    set("n1", o->n1);
    set("n2", o->n2);
  }
  cfg.sync();
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c, const std::string& command) {
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv("PASCL_OUT_ROOT");
  return fs::path(root != nullptr && *root != '\0' ? root : "runs") / command;
}

// Creates `dir` and refuses to clobber any of `files` unless forced.
void prepare_out(const fs::path& dir, const std::vector<std::string>& files, bool force) {
  fs::create_directories(dir);
  if (force) return;
  for (const auto& f : files) {
    if (fs::exists(dir / f)) {
      throw ConfigError("out", (dir / f).string() + " exists; pass --force to overwrite");
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << text;
}

void write_timing(const fs::path& path, double seconds) {
  nlohmann::ordered_json j;
  j["wall_seconds"] = seconds;
  write_text(path, j.dump(2) + "\n");
}

// The tail set follows the configured k even when the data was generated
// with another one.
void retarget_tail(ClassProfile& profile, DatasetSplit& split, double k) {
  profile = make_profile(profile.counts, k);
  for (auto* part : {&split.train_in, &split.test_in}) {
    for (auto& ex : *part) ex.tail = profile.is_tail(ex.label);
  }
}

void check_shape(const ExperimentConfig& cfg, const ClassProfile& profile,
                 const DatasetSplit& split) {
  if (profile.num_classes() != cfg.data.num_classes) {
    throw ConfigError("C", "config has " + std::to_string(cfg.data.num_classes) +
                               " classes, data has " + std::to_string(profile.num_classes()));
  }
  if (!split.train_in.empty() && split.train_in.front().features.size() != cfg.data.dim) {
    throw ConfigError("d", "config dimension disagrees with the data");
  }
}

std::string tail_list(const ClassProfile& p) {
  std::string s = "[";
  for (std::size_t i = 0; i < p.tail_set.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(p.tail_set[i]);
  }
  return s + "]";
}

// ---- commands ----

int cmd_gen_data(const Common& c, const Overrides& o) {
  const ExperimentConfig cfg = load_config(c, &o);
  const fs::path dir = out_dir(c, "data");
  prepare_out(dir, {"train_in.csv", "train_out.csv", "test_in.csv", "test_out.csv", "profile.json"},
              c.force);
  auto [profile, split] = generate_synthetic(cfg.data);
  write_dataset(dir, profile, split, cfg.data);
  std::cout << "wrote " << dir.string() << '\n';
  std::cout << "counts";
  for (auto n : profile.counts) std::cout << ' ' << n;
  std::cout << "\nrequested rho " << cfg.data.rho << "  realized rho " << profile.realized_rho()
            << "\ntail classes (k=" << cfg.data.tail_fraction << ") " << tail_list(profile)
            << '\n';
  if (c.verbose) {
    std::cout << "train_in " << split.train_in.size() << "  train_out " << split.train_out.size()
              << "  test_in " << split.test_in.size() << "  test_out " << split.test_out.size()
              << '\n';
  }
  return kOk;
}

int cmd_train(const Common& c, const Overrides& o, const std::string& data, bool embeddings) {
  const ExperimentConfig cfg = load_config(c, &o);
  const fs::path dir = out_dir(c, "train");
  prepare_out(dir,
              {"checkpoint.txt", "config.txt", "record.csv", "record.json", "loss_trace.csv",
               "timing.json", "embeddings_test.csv"},
              c.force);
  ClassProfile profile;
  DatasetSplit split;
  if (data.empty()) {
    std::tie(profile, split) = generate_synthetic(cfg.data);
  } else {
    std::tie(profile, split) = read_dataset(data);
    check_shape(cfg, profile, split);
    retarget_tail(profile, split, cfg.data.tail_fraction);
  }
  write_text(dir / "config.txt", render_config(cfg));
  TrainStats live;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    RunOutputs run = run_experiment(cfg, split, profile, &live);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.net.save(dir / "checkpoint.txt");
    write_record_csv(dir / "record.csv", run.record);
    write_record_json(dir / "record.json", run.record);
    write_loss_trace(dir / "loss_trace.csv", run.record.trace);
    write_timing(dir / "timing.json", secs);
    if (embeddings) {
      export_embeddings(run.net, split.test_in, Branch::kMain, dir / "embeddings_test.csv");
    }
    if (c.verbose) {
      for (const auto& e : run.record.trace) {
        std::cout << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.loss << '\n';
      }
      std::cout << "contrast participants: head " << run.record.stats.contrast.head_participants
                << " tail " << run.record.stats.contrast.tail_participants << " ood "
                << run.record.stats.contrast.ood_participants << '\n';
    }
    std::cout << "config_hash " << run.record.config_hash << "  (" << secs << " s)\n";
    std::cout << format_metrics_table(run.record.report(cfg.train.score, false));
    if (cfg.train.n2 > 0) std::cout << '\n' << format_metrics_table(run.record.report(cfg.train.score, true));
    std::cout << "wrote " << dir.string() << '\n';
  } catch (const NumericError&) {
    write_loss_trace(dir / "loss_trace.csv", live.completed);
    std::cerr << "loss trace up to the divergence: " << (dir / "loss_trace.csv").string() << '\n';
    throw;
  }
  return kOk;
}

int cmd_eval(const Common& c, const Overrides& o, const std::string& checkpoint,
             const std::string& data, bool no_abf) {
  if (checkpoint.empty()) throw ConfigError("checkpoint", "--checkpoint is required");
  if (data.empty()) throw ConfigError("data", "--data is required");
  // The run's own config (seed, hash, k) unless one is given.
  Common cc = c;
  const fs::path sibling = fs::path(checkpoint).parent_path() / "config.txt";
  if (cc.config.empty() && fs::exists(sibling)) cc.config = sibling.string();
  const ExperimentConfig cfg = load_config(cc, &o);
  const DualBranchNetwork net = DualBranchNetwork::load(checkpoint);
  if (!(net.config().num_classes == cfg.net.num_classes && net.config().input_dim == cfg.net.input_dim)) {
    throw DataError("checkpoint shape disagrees with the config");
  }
  auto [profile, split] = read_dataset(data);
  check_shape(cfg, profile, split);
  retarget_tail(profile, split, cfg.data.tail_fraction);
  const bool abf = !no_abf && net.aux_initialized();
  const std::string score(score_name(cfg.train.score));
  const std::string stem = "metrics_" + score + (abf ? "_abf" : "");
  const fs::path dir = out_dir(c, "eval");
  prepare_out(dir, {stem + ".csv", stem + ".json"}, c.force);
  MetricsReport r = evaluate(net, split, profile, cfg.train.score, abf);
  r.seed = cfg.train.seed;
  r.config_hash = config_hash(cfg);
  write_metrics_csv(dir / (stem + ".csv"), r);
  write_metrics_json(dir / (stem + ".json"), r);
  std::cout << format_metrics_table(r) << "wrote " << (dir / (stem + ".csv")).string() << '\n';
  return kOk;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& text, F parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(parse(item));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(key, "bad list entry '" + item + "'");
    }
  }
  return out;
}

int cmd_ablate(const Common& c, const std::string& variants, const std::string& ks,
               const std::string& lambda2s, std::size_t seeds, std::uint64_t first_seed,
               bool no_oe, std::size_t jobs) {
  const ExperimentConfig base = load_config(c, nullptr);
  AblationAxes axes = component_axes(seeds, c.seed ? std::stoull(*c.seed) : first_seed);
  if (!variants.empty()) {
    axes.variants = parse_list<ContrastVariant>("variant", variants,
                                                [](const std::string& s) { return parse_variant(s); });
  }
  axes.ks = parse_list<double>("k", ks, [](const std::string& s) { return std::stod(s); });
  axes.lambda2s =
      parse_list<double>("lambda2", lambda2s, [](const std::string& s) { return std::stod(s); });
  axes.oe_baseline = !no_oe;
  const auto cells = ablation_cells(base, axes);

  const fs::path dir = out_dir(c, "ablate");
  prepare_out(dir, {"records.csv", "aggregate.csv", "components_msp.txt", "components_energy.txt",
                    "failures.csv", "cells"},
              c.force);
  fs::create_directories(dir / "cells");
  std::cout << cells.size() << " runs, " << jobs << " job(s)\n" << std::flush;

  std::size_t done = 0;
  const auto outcomes = ablation_grid(base, axes, jobs, [&](const CellOutcome& o) {
    ++done;
    const fs::path stem = dir / "cells" / o.cell.run_id();
    if (o.record) {
      write_record_csv(stem.string() + ".csv", *o.record, o.cell.name);
      write_record_json(stem.string() + ".json", *o.record);
      write_timing(stem.string() + ".timing.json", o.record->wall_seconds);
    }
    if (c.verbose || !o.error.empty()) {
      std::cout << '[' << done << '/' << cells.size() << "] " << o.cell.run_id()
                << (o.error.empty() ? " ok" : " FAILED: " + o.error);
      if (o.record) std::cout << " (" << o.record->wall_seconds << " s)";
      std::cout << '\n' << std::flush;
    }
  });

  const CsvTable records = grid_records(outcomes);
  write_csv(dir / "records.csv", records);
  CsvTable failures;
  failures.header = {"run_id", "error_kind", "error"};
  int code = kOk;
  for (const auto& o : outcomes) {
    if (o.error.empty()) continue;
    std::string msg = o.error;
    for (char& ch : msg) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    failures.rows.push_back({o.cell.run_id(), std::to_string(o.error_kind), msg});
    if (code == kOk) code = o.error_kind == 1 ? kUsage : o.error_kind;
  }
  write_csv(dir / "failures.csv", failures);
  if (!records.rows.empty()) {
    const AggregateTable agg = aggregate_records(records);
    write_csv(dir / "aggregate.csv", aggregate_csv(agg));
    const std::string t_msp = format_component_table(agg, "msp");
    write_text(dir / "components_msp.txt", t_msp);
    write_text(dir / "components_energy.txt", format_component_table(agg, "energy"));
    std::cout << t_msp;
  }
  std::cout << failures.rows.size() << " failed run(s); wrote " << dir.string() << '\n';
  return code;
}

int cmd_gradcheck(const Common& c, std::size_t seeds) {
  GradSuiteOptions opts;
  opts.seeds = seeds;
  if (c.seed) opts.first_seed = std::stoull(*c.seed);
  const auto results = run_grad_suite(opts);
  std::map<std::string, std::pair<std::size_t, double>> per_case;  // failures, worst rel err
  for (const auto& r : results) {
    auto& e = per_case[r.name];
    if (!r.report.pass) ++e.first;
    e.second = std::max(e.second, r.report.max_rel_error);
    if (c.verbose) {
      std::cout << r.name << " seed " << r.seed << " rel " << r.report.max_rel_error
                << (r.report.pass ? "" : "  FAIL") << '\n';
    }
  }
  std::size_t failed = 0;
  for (const auto& [name, e] : per_case) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-44s %s  max rel err %.3e  (%zu seeds)\n", name.c_str(),
                  e.first == 0 ? "PASS" : "FAIL", e.second, seeds);
    std::cout << buf;
    failed += e.first;
  }
  if (!c.out.empty()) {
    prepare_out(c.out, {"gradcheck.csv"}, c.force);
    CsvTable t;
    t.header = {"case", "seed", "max_abs_error", "max_rel_error", "pass"};
    for (const auto& r : results) {
      t.rows.push_back({r.name, std::to_string(r.seed), format_real(r.report.max_abs_error),
                        format_real(r.report.max_rel_error), r.report.pass ? "1" : "0"});
    }
    write_csv(fs::path(c.out) / "gradcheck.csv", t);
  }
  std::cout << (failed == 0 ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return failed == 0 ? kOk : kCheck;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw ConfigError("inputs", "no record CSVs given");
  CsvTable all;
  all.header = record_csv_columns();
  auto add_file = [&](const fs::path& p) {
    CsvTable t = read_csv(p);
    if (t.header != all.header) throw DataError(p.string() + ": not a run-record CSV");
    for (auto& r : t.rows) all.rows.push_back(std::move(r));
  };
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.path().extension() != ".csv") continue;
        std::ifstream is(e.path());
        std::string first;
        std::getline(is, first);
        if (first.rfind("cell,variant,", 0) == 0) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        if (f.filename() != "records.csv") add_file(f);
      }
    } else if (fs::exists(in)) {
      add_file(in);
    } else {
      throw DataError("no such file: " + in);
    }
  }
  const AggregateTable agg = aggregate_records(all);
  bool grid = false;
  for (const auto& r : agg.rows) grid = grid || r.key[0] == "oe" || r.key[0] == "pascl";
  std::cout << (grid ? format_component_table(agg, "msp") : format_aggregate(agg));
  if (!c.out.empty()) {
    prepare_out(c.out, {"aggregate.csv", "report.txt"}, c.force);
    write_csv(fs::path(c.out) / "aggregate.csv", aggregate_csv(agg));
    write_text(fs::path(c.out) / "report.txt",
               (grid ? format_component_table(agg, "msp") + format_component_table(agg, "energy") : std::string()) +
                   format_aggregate(agg));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed OOD detection experiments"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, abl_c, gc_c, rep_c;
  Overrides gen_o, train_o, eval_o;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic long-tailed dataset");
  add_common(gen, gen_c);
  add_overrides(gen, gen_o);

  std::string train_data;
  bool train_emb = false;
  auto* train = app.add_subcommand("train", "two-stage training");
  add_common(train, train_c);
  add_overrides(train, train_o);
  train->add_option("--data", train_data, "dataset directory (default: generate from config)");
  train->add_flag("--embeddings", train_emb, "also export test-set penultimate features");

  std::string eval_ckpt, eval_data;
  bool eval_no_abf = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_c);
  add_overrides(eval, eval_o);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_flag("--no-abf", eval_no_abf, "classify with the main branch");

  std::string abl_variants, abl_ks, abl_l2;
  std::size_t abl_seeds = 6, abl_jobs = 1;
  std::uint64_t abl_first = 0;
  bool abl_no_oe = false;
  auto* abl = app.add_subcommand("ablate", "variant x k x lambda2 x seed grid");
  add_common(abl, abl_c);
  abl->add_option("--variants", abl_variants, "comma list (default: all five)");
  abl->add_option("--ks", abl_ks, "comma list of tail fractions");
  abl->add_option("--lambda2s", abl_l2, "comma list of contrastive weights");
  abl->add_option("--seeds", abl_seeds, "number of seeds")->check(CLI::PositiveNumber);
  abl->add_option("--first-seed", abl_first, "first seed");
  abl->add_flag("--no-oe", abl_no_oe, "skip the lambda2 = 0 baseline");
  abl->add_option("--jobs", abl_jobs, "concurrent runs")->check(CLI::PositiveNumber);

  std::size_t gc_seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gc, gc_c);
  gc->add_option("--seeds", gc_seeds, "random inputs per case")->check(CLI::PositiveNumber);

  std::vector<std::string> rep_inputs;
  auto* rep = app.add_subcommand("report", "aggregate run-record CSVs");
  add_common(rep, rep_c);
  rep->add_option("inputs", rep_inputs, "record CSV files or directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_c, gen_o);
    if (*train) return cmd_train(train_c, train_o, train_data, train_emb);
    if (*eval) return cmd_eval(eval_c, eval_o, eval_ckpt, eval_data, eval_no_abf);
    if (*abl) {
      return cmd_ablate(abl_c, abl_variants, abl_ks, abl_l2, abl_seeds, abl_first, abl_no_oe,
                        abl_jobs);
    }
    if (*gc) return cmd_gradcheck(gc_c, gc_seeds);
    if (*rep) return cmd_report(rep_c, rep_inputs);
  } catch (const ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
