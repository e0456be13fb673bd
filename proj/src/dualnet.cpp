#include "pascl/dualnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

Affine init_affine(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Affine a{TensorBuf({in, out}), TensorBuf({out})};
  for (double& v : a.weight.values()) v = u(rng);
  for (double& v : a.bias.values()) v = u(rng);
  return a;
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

void fnv_vector(std::uint64_t& h, const std::string& name,
                const std::vector<double>& v) {
  fnv_bytes(h, name.data(), name.size());
  fnv_bytes(h, v.data(), v.size() * sizeof(double));
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("checkpoint: bad number '" + s + "'");
  return v;
}

}  // namespace

BNParams BNParams::identity(std::size_t features, double eps, double momentum) {
  BNParams p;
  p.gamma = TensorBuf({features}, 1.0);
  p.beta = TensorBuf({features}, 0.0);
  p.running_mean.assign(features, 0.0);
  p.running_var.assign(features, 1.0);
  p.eps = eps;
  p.momentum = momentum;
  return p;
}

void BNParams::update_running(const std::vector<double>& batch_mean,
                              const std::vector<double>& batch_var_unbiased) {
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * batch_mean[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * batch_var_unbiased[c];
  }
}

BatchStatistics batch_statistics(const TensorBuf& x) {
  const std::size_t m = x.rows(), f = x.cols();
  BatchStatistics s;
  s.mean.assign(f, 0.0);
  s.var_biased.assign(f, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < f; ++c) s.mean[c] += x.at(r, c);
  for (double& v : s.mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      const double d = x.at(r, c) - s.mean[c];
      s.var_biased[c] += d * d;
    }
  }
  s.var_unbiased = s.var_biased;
  for (std::size_t c = 0; c < f; ++c) {
    s.var_biased[c] /= static_cast<double>(m);
    s.var_unbiased[c] = m > 1 ? s.var_unbiased[c] / static_cast<double>(m - 1) : 0.0;
  }
  return s;
}

TensorBuf batchnorm(const TensorBuf& x, BNParams& params, Mode mode) {
  if (x.rank() != 2 || x.cols() != params.features()) {
    throw InputError("batchnorm: input must be [batch, features]");
  }
  if (mode == Mode::kTrain && x.rows() < 2) {
    throw InputError("batchnorm: training mode needs a batch of at least 2");
  }
  Tape tape;
  NodeRef in = tape.constant(x);
  NodeRef g = tape.constant(params.gamma);
  NodeRef b = tape.constant(params.beta);
  if (mode == Mode::kTrain) {
    NodeRef y = tape.batch_norm_train(in, g, b, params.eps);
    const BatchStatistics s = batch_statistics(x);
    params.update_running(s.mean, s.var_unbiased);
    return tape.value(y);
  }
  return tape.value(tape.batch_norm_eval(in, g, b, params.running_mean,
                                         params.running_var, params.eps));
}

void NetConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim", "must be positive");
  if (width < 1) throw ConfigError("width", "must be positive");
  if (num_blocks < 1) throw ConfigError("blocks", "must be positive");
  if (proj_dim < 1) throw ConfigError("proj_dim", "must be positive");
  if (num_classes < 2) throw ConfigError("C", "must be at least 2");
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps", "must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0))
    throw ConfigError("bn_momentum", "must lie in (0, 1]");
}

DualBranchNetwork::DualBranchNetwork(NetConfig cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = cfg_.input_dim;
  for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
    Block b;
    b.affine = init_affine(in, cfg_.width, rng);
    b.bn_main = BNParams::identity(cfg_.width, cfg_.bn_eps, cfg_.bn_momentum);
    b.bn_aux = b.bn_main;
    blocks_.push_back(std::move(b));
    in = cfg_.width;
  }
  proj_.push_back(init_affine(cfg_.width, cfg_.width, rng));
  proj_.push_back(init_affine(cfg_.width, cfg_.proj_dim, rng));
  clf_main_ = init_affine(cfg_.width, cfg_.num_classes, rng);
  clf_aux_ = clf_main_;
}

void DualBranchNetwork::check_branch(Branch b) const {
  if (b == Branch::kAux && !aux_initialized_) {
    throw StateError("auxiliary branch used before clone_aux_from_main");
  }
}

ForwardNodes DualBranchNetwork::forward_on_tape(Tape& tape, NodeRef input,
                                                Branch branch,
                                                const TapeOptions& opts) {
  check_branch(branch);
  const TensorBuf& x = tape.value(input);
  if (x.rank() != 2 || x.cols() != cfg_.input_dim) {
    throw InputError("forward: batch must be [n, input_dim]");
  }
  if (opts.mode == Mode::kTrain && x.rows() < 2) {
    throw InputError("forward: training mode needs a batch of at least 2");
  }

  auto bind = [&](const std::string& name, const TensorBuf& value) {
    const bool learn = opts.trainable != nullptr &&
                       std::find(opts.trainable->begin(), opts.trainable->end(),
                                 name) != opts.trainable->end();
    NodeRef n = learn ? tape.parameter(value) : tape.constant(value);
    if (learn && opts.binding != nullptr) (*opts.binding)[name] = n;
    return n;
  };

  const std::string bn_tag = branch == Branch::kMain ? "bn_main" : "bn_aux";
  NodeRef h = input;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    NodeRef w = bind(prefix + "weight", blk.affine.weight);
    NodeRef b = bind(prefix + "bias", blk.affine.bias);
    NodeRef pre = tape.add(tape.matmul(h, w), b);
    BNParams& bn = branch == Branch::kMain ? blk.bn_main : blk.bn_aux;
    NodeRef gamma = bind(prefix + bn_tag + ".gamma", bn.gamma);
    NodeRef beta = bind(prefix + bn_tag + ".beta", bn.beta);
    NodeRef normed;
    if (opts.mode == Mode::kTrain) {
      normed = tape.batch_norm_train(pre, gamma, beta, bn.eps);
      const BatchStatistics s = batch_statistics(tape.value(pre));
      bn.update_running(s.mean, s.var_unbiased);
    } else {
      normed = tape.batch_norm_eval(pre, gamma, beta, bn.running_mean,
                                    bn.running_var, bn.eps);
    }
    h = tape.relu(normed);
  }

  ForwardNodes out;
  out.penultimate = h;
  const Affine& clf = branch == Branch::kMain ? clf_main_ : clf_aux_;
  const std::string clf_tag = branch == Branch::kMain ? "clf_main." : "clf_aux.";
  out.logits = tape.add(tape.matmul(h, bind(clf_tag + "weight", clf.weight)),
                        bind(clf_tag + "bias", clf.bias));
  if (opts.with_projection) {
    NodeRef p = tape.add(tape.matmul(h, bind("proj.0.weight", proj_[0].weight)),
                         bind("proj.0.bias", proj_[0].bias));
    p = tape.relu(p);
    p = tape.add(tape.matmul(p, bind("proj.1.weight", proj_[1].weight)),
                 bind("proj.1.bias", proj_[1].bias));
    out.projection = tape.row_l2_normalize(p);
    out.has_projection = true;
  }
  return out;
}

ForwardOutputs DualBranchNetwork::forward(const TensorBuf& batch, Branch branch,
                                          Mode mode) {
  Tape tape;
  TapeOptions opts;
  opts.mode = mode;
  ForwardNodes n = forward_on_tape(tape, tape.constant(batch), branch, opts);
  return {tape.value(n.logits), tape.value(n.penultimate), tape.value(n.projection)};
}

ForwardOutputs DualBranchNetwork::infer(const TensorBuf& batch, Branch branch) const {
  // EVAL never touches running statistics, so the const_cast is not observable.
  return const_cast<DualBranchNetwork*>(this)->forward(batch, branch, Mode::kEval);
}

void DualBranchNetwork::clone_aux_from_main() {
  for (Block& b : blocks_) b.bn_aux = b.bn_main;
  clf_aux_ = clf_main_;
  aux_initialized_ = true;
}

std::string_view abf_scope_name(AbfScope s) {
  switch (s) {
    case AbfScope::kBnClf: return "bn_clf";
    case AbfScope::kClfOnly: return "clf_only";
    case AbfScope::kAllLayers: return "all_layers";
  }
  return "unknown";
}

AbfScope parse_abf_scope(std::string_view name) {
  if (name == "bn_clf") return AbfScope::kBnClf;
  if (name == "clf_only") return AbfScope::kClfOnly;
  if (name == "all_layers") return AbfScope::kAllLayers;
  throw ConfigError("abf_scope", "expected bn_clf, clf_only or all_layers");
}

std::vector<std::string> DualBranchNetwork::trainable_parameters(int stage,
                                                                 AbfScope scope) const {
  std::vector<std::string> names;
  if (stage == 1) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      names.insert(names.end(), {p + "weight", p + "bias", p + "bn_main.gamma",
                                 p + "bn_main.beta"});
    }
    names.insert(names.end(), {"proj.0.weight", "proj.0.bias", "proj.1.weight",
                               "proj.1.bias", "clf_main.weight", "clf_main.bias"});
  } else if (stage == 2) {
    if (!aux_initialized_) {
      throw StateError("stage-2 parameters requested before clone_aux_from_main");
    }
    for (std::size_t i = 0; i < blocks_.size() && scope != AbfScope::kClfOnly; ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      if (scope == AbfScope::kAllLayers) names.insert(names.end(), {p + "weight", p + "bias"});
      names.insert(names.end(), {p + "bn_aux.gamma", p + "bn_aux.beta"});
    }
    names.insert(names.end(), {"clf_aux.weight", "clf_aux.bias"});
  } else {
    throw InputError("trainable_parameters: stage must be 1 or 2");
  }
  return names;
}

std::vector<std::string> DualBranchNetwork::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    names.insert(names.end(),
                 {p + "weight", p + "bias", p + "bn_main.gamma", p + "bn_main.beta",
                  p + "bn_aux.gamma", p + "bn_aux.beta"});
  }
  names.insert(names.end(), {"proj.0.weight", "proj.0.bias", "proj.1.weight",
                             "proj.1.bias", "clf_main.weight", "clf_main.bias",
                             "clf_aux.weight", "clf_aux.bias"});
  return names;
}

const TensorBuf& DualBranchNetwork::parameter(const std::string& name) const {
  auto field = [&](const std::string& rest, const Affine& a) -> const TensorBuf& {
    if (rest == "weight") return a.weight;
    if (rest == "bias") return a.bias;
    throw InputError("unknown parameter " + name);
  };
  if (name.rfind("blocks.", 0) == 0) {
    const std::size_t dot = name.find('.', 7);
    const std::size_t i = std::stoul(name.substr(7, dot - 7));
    if (i >= blocks_.size()) throw InputError("unknown parameter " + name);
    const std::string rest = name.substr(dot + 1);
    const Block& b = blocks_[i];
    if (rest == "bn_main.gamma") return b.bn_main.gamma;
    if (rest == "bn_main.beta") return b.bn_main.beta;
    if (rest == "bn_aux.gamma") return b.bn_aux.gamma;
    if (rest == "bn_aux.beta") return b.bn_aux.beta;
    return field(rest, b.affine);
  }
  if (name.rfind("proj.0.", 0) == 0) return field(name.substr(7), proj_[0]);
  if (name.rfind("proj.1.", 0) == 0) return field(name.substr(7), proj_[1]);
  if (name.rfind("clf_main.", 0) == 0) return field(name.substr(9), clf_main_);
  if (name.rfind("clf_aux.", 0) == 0) return field(name.substr(8), clf_aux_);
  throw InputError("unknown parameter " + name);
}

TensorBuf& DualBranchNetwork::parameter(const std::string& name) {
  return const_cast<TensorBuf&>(std::as_const(*this).parameter(name));
}

std::vector<std::pair<std::string, const std::vector<double>*>>
DualBranchNetwork::all_vectors() const {
  std::vector<std::pair<std::string, const std::vector<double>*>> out;
  for (const std::string& n : parameter_names()) out.emplace_back(n, &parameter(n).values());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "bn_main.running_mean", &blocks_[i].bn_main.running_mean);
    out.emplace_back(p + "bn_main.running_var", &blocks_[i].bn_main.running_var);
    out.emplace_back(p + "bn_aux.running_mean", &blocks_[i].bn_aux.running_mean);
    out.emplace_back(p + "bn_aux.running_var", &blocks_[i].bn_aux.running_var);
  }
  return out;
}

std::uint64_t DualBranchNetwork::main_state_hash() const {
  std::uint64_t h = kFnvOffset;
  for (const std::string& n : trainable_parameters(1)) fnv_vector(h, n, parameter(n).values());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    fnv_vector(h, "rm" + std::to_string(i), blocks_[i].bn_main.running_mean);
    fnv_vector(h, "rv" + std::to_string(i), blocks_[i].bn_main.running_var);
  }
  return h;
}

std::uint64_t DualBranchNetwork::full_state_hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, vec] : all_vectors()) fnv_vector(h, name, *vec);
  const unsigned char flag = aux_initialized_ ? 1 : 0;
  fnv_bytes(h, &flag, 1);
  return h;
}

double DualBranchNetwork::branch_distance() const {
  auto sq = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc;
  };
  double d = sq(clf_main_.weight.values(), clf_aux_.weight.values()) +
             sq(clf_main_.bias.values(), clf_aux_.bias.values());
  for (const Block& b : blocks_) {
    d += sq(b.bn_main.gamma.values(), b.bn_aux.gamma.values());
    d += sq(b.bn_main.beta.values(), b.bn_aux.beta.values());
    d += sq(b.bn_main.running_mean, b.bn_aux.running_mean);
    d += sq(b.bn_main.running_var, b.bn_aux.running_var);
  }
  return d;
}

bool operator==(const DualBranchNetwork& a, const DualBranchNetwork& b) {
  if (!(a.cfg_ == b.cfg_) || a.aux_initialized_ != b.aux_initialized_ ||
      a.stage1_epochs_ != b.stage1_epochs_) {
    return false;
  }
  const auto va = a.all_vectors();
  const auto vb = b.all_vectors();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const auto& x = *va[i].second;
    const auto& y = *vb[i].second;
    if (x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void DualBranchNetwork::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "pascl-checkpoint " << kCheckpointVersion << '\n';
  os << "config input_dim=" << cfg_.input_dim << " width=" << cfg_.width
     << " num_blocks=" << cfg_.num_blocks << " proj_dim=" << cfg_.proj_dim
     << " num_classes=" << cfg_.num_classes << " bn_eps=" << hex(cfg_.bn_eps)
     << " bn_momentum=" << hex(cfg_.bn_momentum) << '\n';
  os << "aux_initialized " << (aux_initialized_ ? 1 : 0) << '\n';
  os << "stage1_epochs " << stage1_epochs_ << '\n';
  for (const auto& [name, vec] : all_vectors()) {
    os << "tensor " << name << ' ' << vec->size() << '\n';
    for (std::size_t i = 0; i < vec->size(); ++i) {
      if (i) os << ' ';
      os << hex((*vec)[i]);
    }
    os << '\n';
  }
  os << "end\n";
  if (!os) throw DataError("write failed: " + path.string());
}

DualBranchNetwork DualBranchNetwork::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::string line, word;
  int version = 0;
  if (!std::getline(is, line)) throw DataError("checkpoint: empty file");
  {
    std::istringstream ss(line);
    ss >> word >> version;
    if (word != "pascl-checkpoint") throw DataError("checkpoint: bad magic");
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
  }
  NetConfig cfg;
  if (!std::getline(is, line)) throw DataError("checkpoint: missing config");
  {
    std::istringstream ss(line);
    ss >> word;
    if (word != "config") throw DataError("checkpoint: missing config");
    std::string kv;
    while (ss >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError("checkpoint: bad config entry");
      const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      try {
        if (k == "input_dim") cfg.input_dim = std::stoul(v);
        else if (k == "width") cfg.width = std::stoul(v);
        else if (k == "num_blocks") cfg.num_blocks = std::stoul(v);
        else if (k == "proj_dim") cfg.proj_dim = std::stoul(v);
        else if (k == "num_classes") cfg.num_classes = std::stoul(v);
        else if (k == "bn_eps") cfg.bn_eps = parse_hex(v);
        else if (k == "bn_momentum") cfg.bn_momentum = parse_hex(v);
        else throw DataError("checkpoint: unknown config key " + k);
      } catch (const std::logic_error&) {
        throw DataError("checkpoint: bad config value for " + k);
      }
    }
  }
  DualBranchNetwork net(cfg, 0);
  if (!std::getline(is, line)) throw DataError("checkpoint: truncated");
  {
    std::istringstream ss(line);
    int flag = -1;
    ss >> word >> flag;
    if (word != "aux_initialized" || (flag != 0 && flag != 1)) {
      throw DataError("checkpoint: bad aux_initialized line");
    }
    net.aux_initialized_ = flag == 1;
  }
  if (!std::getline(is, line)) throw DataError("checkpoint: truncated");
  {
    std::istringstream ss(line);
    long long epochs = -1;
    ss >> word >> epochs;
    if (word != "stage1_epochs" || epochs < 0) throw DataError("checkpoint: bad stage1_epochs line");
    net.stage1_epochs_ = static_cast<std::size_t>(epochs);
  }
  for (const auto& [name, vec] : net.all_vectors()) {
    if (!std::getline(is, line)) throw DataError("checkpoint: truncated at " + name);
    std::istringstream header(line);
    std::string tag, got;
    std::size_t n = 0;
    header >> tag >> got >> n;
    if (tag != "tensor" || got != name || n != vec->size()) {
      throw DataError("checkpoint: expected tensor " + name + " of size " +
                      std::to_string(vec->size()));
    }
    if (!std::getline(is, line)) throw DataError("checkpoint: truncated at " + name);
    std::istringstream values(line);
    auto& dst = const_cast<std::vector<double>&>(*vec);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(values >> word)) throw DataError("checkpoint: short tensor " + name);
      dst[i] = parse_hex(word);
    }
  }
  if (!std::getline(is, line) || line != "end") throw DataError("checkpoint: missing end marker");
  return net;
}

}  // namespace pascl
