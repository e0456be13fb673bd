#include "pascl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kStage1Stream = 1000;
constexpr std::uint64_t kStage2Stream = 2000000;

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

void apply_gradients(Tape& tape, const ParamBinding& binding, DualBranchNetwork& net,
                     Optimizer& opt, double lr) {
  for (const auto& [name, node] : binding) {
    opt.step(net.parameter(name), name, tape.grad(node), lr);
  }
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace

Optimizer::Optimizer(OptimizerKind kind, double momentum)
    : kind_(kind), momentum_(momentum) {}

void Optimizer::step(TensorBuf& param, const std::string& name,
                     const std::vector<double>& grad, double lr) {
  Slot& s = slots_[name];
  const std::size_t n = param.size();
  if (s.m.empty()) {
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
  }
  ++s.t;
  if (kind_ == OptimizerKind::kSgdMomentum) {
    for (std::size_t i = 0; i < n; ++i) {
      s.m[i] = momentum_ * s.m[i] + grad[i];
      param[i] -= lr * s.m[i];
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < n; ++i) {
    s.m[i] = b1 * s.m[i] + (1.0 - b1) * grad[i];
    s.v[i] = b2 * s.v[i] + (1.0 - b2) * grad[i] * grad[i];
    param[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps);
  }
}

double scheduled_lr(Schedule s, double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  switch (s) {
    case Schedule::kCosine:
      return 0.5 * base * (1.0 + std::cos(std::numbers::pi * frac));
    case Schedule::kStep:
      return base * (frac < 0.6 ? 1.0 : frac < 0.8 ? 0.1 : 0.01);
    case Schedule::kConstant:
      return base;
  }
  return base;
}

TensorBuf features_of(const std::vector<LabeledExample>& examples) {
  if (examples.empty()) throw InputError("features_of: no examples");
  const std::size_t d = examples.front().features.size();
  std::vector<double> data;
  data.reserve(examples.size() * d);
  for (const auto& ex : examples) {
    if (ex.features.size() != d) throw InputError("features_of: ragged features");
    data.insert(data.end(), ex.features.begin(), ex.features.end());
  }
  return TensorBuf::matrix(examples.size(), d, std::move(data));
}

std::vector<EpochLoss> run_stage1(DualBranchNetwork& net, const DatasetSplit& split,
                                  const ClassProfile& profile, const TrainConfig& cfg,
                                  TrainStats* stats) {
  cfg.validate();
  if (profile.num_classes() != net.config().num_classes) {
    throw InputError("run_stage1: profile and network disagree on the class count");
  }
  const bool with_out = cfg.weights.lambda1 > 0.0 || cfg.weights.lambda2 > 0.0;
  const bool with_proj = cfg.weights.lambda2 > 0.0;
  const ContrastSpec spec{cfg.variant, profile.tail_set};
  const std::vector<std::string> trainable = net.trainable_parameters(1);
  Optimizer opt(cfg.optimizer, cfg.momentum);

  std::vector<std::vector<BatchPair>> epochs;
  std::size_t total_steps = 0;
  for (std::size_t e = 0; e < cfg.n1; ++e) {
    epochs.push_back(mixed_batches(split, cfg.batch_in, cfg.batch_out,
                                   derive_seed(cfg.seed, kStage1Stream + e), with_out));
    total_steps += epochs.back().size();
  }

  std::vector<EpochLoss> trace;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.n1; ++e) {
    EpochLoss acc{1, e};
    for (const BatchPair& batch : epochs[e]) {
      std::vector<LabeledExample> rows;
      std::vector<int> labels;
      for (std::size_t i : batch.in) {
        rows.push_back(split.train_in[i]);
        labels.push_back(split.train_in[i].label);
      }
      for (std::size_t i : batch.out) rows.push_back(split.train_out[i]);
      const std::size_t n_in = batch.in.size(), n_out = batch.out.size();

      Tape tape;
      ParamBinding binding;
      DualBranchNetwork::TapeOptions opts;
      opts.mode = Mode::kTrain;
      opts.with_projection = with_proj;
      opts.trainable = &trainable;
      opts.binding = &binding;
      Stage1Terms terms;
      try {
        ForwardNodes fwd = net.forward_on_tape(tape, tape.constant(features_of(rows)),
                                               Branch::kMain, opts);
        Stage1Inputs in;
        in.labels_in = labels;
        in.n_out = n_out;
        in.logits_in = n_out > 0 ? tape.gather_rows(fwd.logits, iota_range(0, n_in)) : fwd.logits;
        if (n_out > 0) in.logits_out = tape.gather_rows(fwd.logits, iota_range(n_in, n_in + n_out));
        if (with_proj) in.projection = fwd.projection;
        terms = stage1_loss(tape, in, spec, cfg.weights);
        tape.backward(terms.total);
      } catch (const NumericError& err) {
        throw NumericError("stage 1 diverged at epoch " + std::to_string(e) + ", step " +
                           std::to_string(step) + ": " + err.what());
      }
      apply_gradients(tape, binding, net, opt,
                      scheduled_lr(cfg.schedule, cfg.lr1, step, total_steps));
      ++step;
      acc.loss += tape.value(terms.total)[0];
      acc.cross_entropy += terms.cross_entropy;
      acc.outlier += terms.outlier;
      acc.contrastive += terms.contrastive;
      if (stats != nullptr) {
        stats->contrast += terms.stats;
        ++stats->stage1_steps;
      }
    }
    const double steps = static_cast<double>(epochs[e].size());
    acc.loss /= steps;
    acc.cross_entropy /= steps;
    acc.outlier /= steps;
    acc.contrastive /= steps;
    trace.push_back(acc);
    if (stats != nullptr) stats->completed.push_back(acc);
    net.record_stage1_epoch();
  }
  return trace;
}

std::vector<EpochLoss> run_stage2(DualBranchNetwork& net, const DatasetSplit& split,
                                  const ClassProfile& profile, const TrainConfig& cfg,
                                  TrainStats* stats) {
  cfg.validate();
  if (cfg.n2 == 0) return {};
  if (net.stage1_epochs() == 0) throw StateError("run_stage2: stage 1 has not run");
  net.clone_aux_from_main();
  const std::vector<std::string> trainable = net.trainable_parameters(2, cfg.abf_scope);
  Optimizer opt(cfg.optimizer, cfg.momentum);

  std::vector<std::vector<BatchPair>> epochs;
  std::size_t total_steps = 0;
  for (std::size_t e = 0; e < cfg.n2; ++e) {
    epochs.push_back(mixed_batches(split, cfg.batch_in, 0,
                                   derive_seed(cfg.seed, kStage2Stream + e), false));
    total_steps += epochs.back().size();
  }

  std::vector<EpochLoss> trace;
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.n2; ++e) {
    EpochLoss acc{2, e};
    for (const BatchPair& batch : epochs[e]) {
      std::vector<LabeledExample> rows;
      std::vector<int> labels;
      for (std::size_t i : batch.in) {
        rows.push_back(split.train_in[i]);
        labels.push_back(split.train_in[i].label);
      }
      if (stats != nullptr) {
        stats->stage2_examples += rows.size();
        for (const auto& r : rows) {
          if (r.domain == Domain::kOut) ++stats->stage2_ood_examples;
        }
        ++stats->stage2_steps;
      }
      Tape tape;
      ParamBinding binding;
      DualBranchNetwork::TapeOptions opts;
      opts.mode = Mode::kTrain;
      opts.with_projection = false;
      opts.trainable = &trainable;
      opts.binding = &binding;
      NodeRef loss;
      try {
        ForwardNodes fwd = net.forward_on_tape(tape, tape.constant(features_of(rows)),
                                               Branch::kAux, opts);
        loss = logit_adjusted_ce(tape, fwd.logits, labels, profile.priors,
                                 cfg.weights.tau_la);
        tape.backward(loss);
      } catch (const NumericError& err) {
        throw NumericError("stage 2 diverged at epoch " + std::to_string(e) + ": " +
                           err.what());
      }
      apply_gradients(tape, binding, net, opt,
                      scheduled_lr(cfg.schedule, cfg.lr2, step, total_steps));
      ++step;
      acc.loss += tape.value(loss)[0];
      acc.cross_entropy += tape.value(loss)[0];
    }
    const double steps = static_cast<double>(epochs[e].size());
    acc.loss /= steps;
    acc.cross_entropy /= steps;
    trace.push_back(acc);
    if (stats != nullptr) stats->completed.push_back(acc);
  }
  return trace;
}

MetricsReport evaluate(const DualBranchNetwork& net, const DatasetSplit& split,
                       const ClassProfile& profile, ScoreFn score, bool abf_enabled) {
  if (abf_enabled && !net.aux_initialized()) {
    throw StateError("evaluate: ABF requested but the auxiliary branch was never trained");
  }
  std::vector<LabeledExample> all = split.test_in;
  all.insert(all.end(), split.test_out.begin(), split.test_out.end());
  const TensorBuf x = features_of(all);
  const ForwardOutputs main = net.infer(x, Branch::kMain);
  const std::vector<double> s = ood_score(main.logits, score);
  TensorBuf cls_logits = abf_enabled ? net.infer(x, Branch::kAux).logits : main.logits;

  std::vector<ScoredExample> scored(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    scored[i].score = s[i];
    scored[i].is_ood = all[i].domain == Domain::kOut;
    scored[i].true_class = all[i].label;
    scored[i].pred_class = static_cast<int>(argmax(cls_logits.row(i)));
  }
  MetricsReport r = compute_report(scored, profile.tail_set);
  r.score_fn = std::string(score_name(score));
  r.abf = abf_enabled;
  return r;
}

const MetricsReport& RunRecord::report(ScoreFn score, bool abf) const {
  for (const auto& r : reports) {
    if (r.score_fn == score_name(score) && r.abf == abf) return r;
  }
  throw InputError("run record has no report for the requested score/abf");
}

RunOutputs run_experiment(const ExperimentConfig& cfg_in, const DatasetSplit& split,
                          const ClassProfile& profile, TrainStats* live) {
  ExperimentConfig cfg = cfg_in;
  cfg.sync();
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunOutputs out{RunRecord{}, DualBranchNetwork(cfg.net, derive_seed(cfg.train.seed, kInitStream))};
  RunRecord& rec = out.record;
  rec.config = cfg;
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.train.seed;
  TrainStats local;
  TrainStats* stats = live != nullptr ? live : &local;
  rec.trace = run_stage1(out.net, split, profile, cfg.train, stats);
  auto stage2 = run_stage2(out.net, split, profile, cfg.train, stats);
  rec.trace.insert(rec.trace.end(), stage2.begin(), stage2.end());
  rec.stats = *stats;
  for (ScoreFn s : {ScoreFn::kMsp, ScoreFn::kEnergy}) {
    for (bool abf : {false, true}) {
      if (abf && cfg.train.n2 == 0) continue;
      MetricsReport r = evaluate(out.net, split, profile, s, abf);
      r.seed = rec.seed;
      r.config_hash = rec.config_hash;
      rec.reports.push_back(std::move(r));
    }
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

RunOutputs run_experiment(const ExperimentConfig& cfg_in, TrainStats* live) {
  ExperimentConfig cfg = cfg_in;
  cfg.sync();
  cfg.validate();
  auto [profile, split] = generate_synthetic(cfg.data);
  return run_experiment(cfg, split, profile, live);
}

std::vector<std::string> record_csv_columns() {
  std::vector<std::string> cols = {"cell", "variant", "k", "lambda1", "lambda2",
                                   "tau", "n1", "n2"};
  for (const auto& c : metrics_csv_columns()) cols.push_back(c);
  return cols;
}

std::vector<std::vector<std::string>> record_csv_rows(const RunRecord& r,
                                                      const std::string& cell) {
  std::vector<std::vector<std::string>> rows;
  const auto& c = r.config;
  for (const auto& rep : r.reports) {
    std::vector<std::string> row = {cell,
                                    std::string(variant_name(c.train.variant)),
                                    format_real(c.data.tail_fraction),
                                    format_real(c.train.weights.lambda1),
                                    format_real(c.train.weights.lambda2),
                                    format_real(c.train.weights.tau),
                                    std::to_string(c.train.n1),
                                    std::to_string(c.train.n2)};
    for (auto& v : metrics_csv_values(rep)) row.push_back(std::move(v));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_record_csv(const std::filesystem::path& path, const RunRecord& r,
                      const std::string& cell) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  auto join = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  join(record_csv_columns());
  for (const auto& row : record_csv_rows(r, cell)) join(row);
}

void write_record_json(const std::filesystem::path& path, const RunRecord& r) {
  nlohmann::ordered_json j;
  j["format"] = "pascl-run-record";
  j["version"] = 1;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["config"] = render_config(r.config);
  nlohmann::ordered_json trace = nlohmann::ordered_json::array();
  for (const auto& e : r.trace) {
    trace.push_back({{"stage", e.stage},
                     {"epoch", e.epoch},
                     {"loss", e.loss},
                     {"cross_entropy", e.cross_entropy},
                     {"outlier", e.outlier},
                     {"contrastive", e.contrastive}});
  }
  j["loss_trace"] = trace;
  nlohmann::ordered_json reports = nlohmann::ordered_json::array();
  const auto cols = metrics_csv_columns();
  for (const auto& rep : r.reports) {
    nlohmann::ordered_json o;
    const auto vals = metrics_csv_values(rep);
    for (std::size_t i = 0; i < cols.size(); ++i) o[cols[i]] = vals[i];
    reports.push_back(o);
  }
  j["reports"] = reports;
  j["stats"] = {{"contrast_anchors", r.stats.contrast.anchors},
                {"contrast_participants", r.stats.contrast.participants},
                {"contrast_head_participants", r.stats.contrast.head_participants},
                {"contrast_tail_participants", r.stats.contrast.tail_participants},
                {"contrast_ood_participants", r.stats.contrast.ood_participants},
                {"stage1_steps", r.stats.stage1_steps},
                {"stage2_steps", r.stats.stage2_steps},
                {"stage2_examples", r.stats.stage2_examples},
                {"stage2_ood_examples", r.stats.stage2_ood_examples}};
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<EpochLoss>& trace) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "stage,epoch,loss,cross_entropy,outlier,contrastive\n";
  for (const auto& e : trace) {
    os << e.stage << ',' << e.epoch << ',' << format_real(e.loss) << ','
       << format_real(e.cross_entropy) << ',' << format_real(e.outlier) << ','
       << format_real(e.contrastive) << '\n';
  }
}

std::string embeddings_csv(const DualBranchNetwork& net,
                           const std::vector<LabeledExample>& examples, Branch branch) {
  std::ostringstream os;
  const std::size_t w = net.config().width;
  for (std::size_t i = 0; i < w; ++i) os << "h_" << i << ',';
  os << "label,domain,tail\n";
  if (examples.empty()) return os.str();
  const ForwardOutputs out = net.infer(features_of(examples), branch);
  for (std::size_t r = 0; r < examples.size(); ++r) {
    for (double v : out.penultimate.row(r)) os << format_real(v) << ',';
    const auto& ex = examples[r];
    if (ex.domain == Domain::kOut) os << "OOD,OUT,";
    else os << ex.label << ",IN,";
    os << (ex.tail ? 1 : 0) << '\n';
  }
  return os.str();
}

void export_embeddings(const DualBranchNetwork& net, const std::vector<LabeledExample>& examples,
                       Branch branch, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << embeddings_csv(net, examples, branch);
}

}  // namespace pascl
