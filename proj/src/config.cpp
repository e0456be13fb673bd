#include "pascl/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pascl/errors.hpp"

namespace pascl {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError(key, "expected a number, got '" + v + "'");
  return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key, "integer out of range: '" + v + "'");
  }
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct KeySpec {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using Table = std::vector<std::pair<std::string, KeySpec>>;

template <typename Field>
KeySpec uint_key(const std::string& key, Field field) {
  return {[=](ExperimentConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(to_uint(key, v));
          },
          [=](const ExperimentConfig& c) {
            return std::to_string(field(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename Field>
KeySpec real_key(const std::string& key, Field field) {
  return {[=](ExperimentConfig& c, const std::string& v) { field(c) = to_real(key, v); },
          [=](const ExperimentConfig& c) {
            return real_text(field(const_cast<ExperimentConfig&>(c)));
          }};
}

const Table& table() {
  static const Table t = [] {
    Table t;
    auto u = [&](const std::string& k, auto f) { t.emplace_back(k, uint_key(k, f)); };
    auto r = [&](const std::string& k, auto f) { t.emplace_back(k, real_key(k, f)); };
    using C = ExperimentConfig;
    // data
    u("C", [](C& c) -> std::size_t& { return c.data.num_classes; });
    u("n_max", [](C& c) -> std::size_t& { return c.data.n_max; });
    r("rho", [](C& c) -> double& { return c.data.rho; });
    r("k", [](C& c) -> double& { return c.data.tail_fraction; });
    u("d", [](C& c) -> std::size_t& { return c.data.dim; });
    r("id_center_radius", [](C& c) -> double& { return c.data.id_center_radius; });
    r("id_cluster_std", [](C& c) -> double& { return c.data.id_cluster_std; });
    u("n_ood_clusters", [](C& c) -> std::size_t& { return c.data.n_ood_clusters; });
    t.emplace_back("ood_placement",
                   KeySpec{[](C& c, const std::string& v) {
                             if (v == "spread") c.data.ood_placement = OodPlacement::kSpread;
                             else if (v == "tail") c.data.ood_placement = OodPlacement::kTail;
                             else throw ConfigError("ood_placement", "expected spread or tail");
                           },
                           [](const C& c) {
                             return std::string(c.data.ood_placement == OodPlacement::kSpread
                                                    ? "spread"
                                                    : "tail");
                           }});
    r("ood_cluster_std", [](C& c) -> double& { return c.data.ood_cluster_std; });
    u("n_ood_train", [](C& c) -> std::size_t& { return c.data.n_ood_train; });
    u("n_test_per_class", [](C& c) -> std::size_t& { return c.data.n_test_per_class; });
    u("n_ood_test", [](C& c) -> std::size_t& { return c.data.n_ood_test; });
    // network
    u("width", [](C& c) -> std::size_t& { return c.net.width; });
    u("blocks", [](C& c) -> std::size_t& { return c.net.num_blocks; });
    u("proj_dim", [](C& c) -> std::size_t& { return c.net.proj_dim; });
    r("bn_eps", [](C& c) -> double& { return c.net.bn_eps; });
    r("bn_momentum", [](C& c) -> double& { return c.net.bn_momentum; });
    // training
    u("n1", [](C& c) -> std::size_t& { return c.train.n1; });
    u("n2", [](C& c) -> std::size_t& { return c.train.n2; });
    t.emplace_back("optimizer",
                   KeySpec{[](C& c, const std::string& v) {
                             if (v == "adam") c.train.optimizer = OptimizerKind::kAdam;
                             else if (v == "sgd") c.train.optimizer = OptimizerKind::kSgdMomentum;
                             else throw ConfigError("optimizer", "expected adam or sgd");
                           },
                           [](const C& c) { return std::string(optimizer_name(c.train.optimizer)); }});
    r("lr1", [](C& c) -> double& { return c.train.lr1; });
    r("lr2", [](C& c) -> double& { return c.train.lr2; });
    t.emplace_back("abf_scope",
                   KeySpec{[](C& c, const std::string& v) { c.train.abf_scope = parse_abf_scope(v); },
                           [](const C& c) { return std::string(abf_scope_name(c.train.abf_scope)); }});
    t.emplace_back("schedule",
                   KeySpec{[](C& c, const std::string& v) {
                             if (v == "cosine") c.train.schedule = Schedule::kCosine;
                             else if (v == "step") c.train.schedule = Schedule::kStep;
                             else if (v == "constant") c.train.schedule = Schedule::kConstant;
                             else throw ConfigError("schedule", "expected cosine, step or constant");
                           },
                           [](const C& c) { return std::string(schedule_name(c.train.schedule)); }});
    r("momentum", [](C& c) -> double& { return c.train.momentum; });
    u("batch_in", [](C& c) -> std::size_t& { return c.train.batch_in; });
    u("batch_out", [](C& c) -> std::size_t& { return c.train.batch_out; });
    r("lambda1", [](C& c) -> double& { return c.train.weights.lambda1; });
    r("lambda2", [](C& c) -> double& { return c.train.weights.lambda2; });
    r("tau", [](C& c) -> double& { return c.train.weights.tau; });
    r("tau_la", [](C& c) -> double& { return c.train.weights.tau_la; });
    t.emplace_back("variant",
                   KeySpec{[](C& c, const std::string& v) { c.train.variant = parse_variant(v); },
                           [](const C& c) { return std::string(variant_name(c.train.variant)); }});
    t.emplace_back("score",
                   KeySpec{[](C& c, const std::string& v) { c.train.score = parse_score(v); },
                           [](const C& c) { return std::string(score_name(c.train.score)); }});
    t.emplace_back("seed", KeySpec{[](C& c, const std::string& v) {
                                     c.train.seed = to_uint("seed", v);
                                     c.data.seed = c.train.seed;
                                   },
                                   [](const C& c) { return std::to_string(c.train.seed); }});
    return t;
  }();
  return t;
}

}  // namespace

std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

std::string_view schedule_name(Schedule s) {
  switch (s) {
    case Schedule::kCosine: return "cosine";
    case Schedule::kStep: return "step";
    case Schedule::kConstant: return "constant";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (n1 < 1) throw ConfigError("n1", "must be at least 1");
  if (!(lr1 > 0.0)) throw ConfigError("lr1", "must be positive");
  if (!(lr2 > 0.0)) throw ConfigError("lr2", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (batch_in < 2) throw ConfigError("batch_in", "must be at least 2");
  if (batch_out < 1) throw ConfigError("batch_out", "must be at least 1");
  weights.validate();
}

void ExperimentConfig::sync() {
  net.input_dim = data.dim;
  net.num_classes = data.num_classes;
  train.weights.num_classes = data.num_classes;
  data.seed = train.seed;
}

void ExperimentConfig::validate() const {
  data.validate();
  net.validate();
  train.validate();
  if (net.input_dim != data.dim || net.num_classes != data.num_classes ||
      train.weights.num_classes != data.num_classes) {
    throw ConfigError("", "network shape disagrees with the data configuration");
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, spec] : table()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, spec] : table()) {
    if (name == key) {
      spec.set(cfg, value);
      cfg.sync();
      return;
    }
  }
  throw ConfigError(key, "unknown configuration key");
}

ExperimentConfig parse_config_text(std::string_view text) {
  ExperimentConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.sync();
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [name, spec] : table()) out += name + " = " + spec.get(cfg) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = render_config(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pascl
