#pragma once

// Experiment configuration: a sectioned key/value schema read from INI or
// JSON files, validated field by field and serialized back deterministically.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/json_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hirl/baselines.hpp"
#include "hirl/coordinator.hpp"

namespace hirl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  std::vector<double> lambdas{0.7, 0.8, 0.9};
  std::vector<double> gamma_fails{1.0, 1.5, 2.0};
  std::string regime = "high";
};

struct ExperimentConfig {
  std::vector<PolicyKind> algorithms{PolicyKind::Hirl};
  std::vector<Ablations> ablations{Ablations{}};
  int episodes = 150;  // training episodes per seed
  int eval_episodes = 30;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> rates{4, 8, 16};
  std::vector<std::string> regimes{"low", "medium", "high"};
  std::string output_dir = "results";
  int jobs = 1;
  ScenarioConfig scenario;
  LearningConfig learning;
  SweepConfig sweep;

  [[nodiscard]] int rate_of(const std::string& regime) const {
    for (std::size_t i = 0; i < regimes.size(); ++i)
      if (regimes[i] == regime) return rates[i];
    throw ConfigError("unknown regime '" + regime + "'");
  }
};

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += f(v[i]);
  }
  return out;
}

inline double parse_double(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || !std::isfinite(v))
    throw ConfigError(name + ": expected a number, got '" + text + "'");
  return v;
}

inline long long parse_int(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw ConfigError(name + ": expected an integer, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& name, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(name + ": expected a boolean, got '" + text + "'");
}

inline void check_range(const std::string& name, double v, double lo, double hi) {
  if (v < lo || v > hi)
    throw ConfigError(name + ": value " + format_double(v) + " outside [" + format_double(lo) + ", " +
                      format_double(hi) + "]");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  [[nodiscard]] std::string name() const { return section + "." + key; }
};

inline Field real(std::string sec, std::string key, double lo, double hi,
                  std::function<double&(ExperimentConfig&)> ref) {
  Field f{sec, key, nullptr, nullptr};
  const std::string name = sec + "." + key;
  f.get = [ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); };
  f.set = [ref, name, lo, hi](ExperimentConfig& c, const std::string& v) {
    const double x = parse_double(name, v);
    check_range(name, x, lo, hi);
    ref(c) = x;
  };
  return f;
}

template <typename I>
Field integer(std::string sec, std::string key, long long lo, long long hi,
              std::function<I&(ExperimentConfig&)> ref) {
  Field f{sec, key, nullptr, nullptr};
  const std::string name = sec + "." + key;
  f.get = [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); };
  f.set = [ref, name, lo, hi](ExperimentConfig& c, const std::string& v) {
    const long long x = parse_int(name, v);
    if (x < lo || x > hi)
      throw ConfigError(name + ": value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    ref(c) = static_cast<I>(x);
  };
  return f;
}

inline Field boolean(std::string sec, std::string key, std::function<bool&(ExperimentConfig&)> ref) {
  Field f{sec, key, nullptr, nullptr};
  const std::string name = sec + "." + key;
  f.get = [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); };
  f.set = [ref, name](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); };
  return f;
}

inline Field real_list(std::string sec, std::string key, double lo, double hi,
                       std::function<std::vector<double>&(ExperimentConfig&)> ref) {
  Field f{sec, key, nullptr, nullptr};
  const std::string name = sec + "." + key;
  f.get = [ref](const ExperimentConfig& c) {
    return join<double>(ref(const_cast<ExperimentConfig&>(c)), [](const double& x) { return format_double(x); });
  };
  f.set = [ref, name, lo, hi](ExperimentConfig& c, const std::string& v) {
    std::vector<double> out;
    for (const auto& s : split(v)) {
      const double x = parse_double(name, s);
      check_range(name, x, lo, hi);
      out.push_back(x);
    }
    if (out.empty()) throw ConfigError(name + ": list must not be empty");
    ref(c) = out;
  };
  return f;
}

inline Field text_list(std::string sec, std::string key,
                       std::function<std::vector<std::string>&(ExperimentConfig&)> ref,
                       std::function<void(const std::string&)> check = {}) {
  Field f{sec, key, nullptr, nullptr};
  const std::string name = sec + "." + key;
  f.get = [ref](const ExperimentConfig& c) {
    return join<std::string>(ref(const_cast<ExperimentConfig&>(c)), [](const std::string& s) { return s; });
  };
  f.set = [ref, name, check](ExperimentConfig& c, const std::string& v) {
    auto items = split(v);
    if (items.empty()) throw ConfigError(name + ": list must not be empty");
    if (check) {
      for (const auto& s : items) {
        try {
          check(s);
        } catch (const std::exception& e) {
          throw ConfigError(name + ": " + e.what());
        }
      }
    }
    ref(c) = items;
  };
  return f;
}

inline const std::vector<Field>& schema() {
  using C = ExperimentConfig;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    // [experiment]
    f.push_back(Field{"experiment", "algorithm",
                      [](const C& c) {
                        return join<PolicyKind>(c.algorithms, [](const PolicyKind& k) { return std::string(to_string(k)); });
                      },
                      [](C& c, const std::string& v) {
                        std::vector<PolicyKind> out;
                        for (const auto& s : split(v)) {
                          try {
                            out.push_back(parse_policy(s));
                          } catch (const std::exception& e) {
                            throw ConfigError(std::string("experiment.algorithm: ") + e.what());
                          }
                        }
                        if (out.empty()) throw ConfigError("experiment.algorithm: list must not be empty");
                        c.algorithms = out;
                      }});
    f.push_back(Field{"experiment", "ablations",
                      [](const C& c) { return join<Ablations>(c.ablations, [](const Ablations& a) { return a.name(); }); },
                      [](C& c, const std::string& v) {
                        std::vector<Ablations> out;
                        for (const auto& s : split(v)) {
                          try {
                            out.push_back(parse_ablations(s));
                          } catch (const std::exception& e) {
                            throw ConfigError(std::string("experiment.ablations: ") + e.what());
                          }
                        }
                        if (out.empty()) throw ConfigError("experiment.ablations: list must not be empty");
                        c.ablations = out;
                      }});
    f.push_back(integer<int>("experiment", "episodes", 0, 1000000, [](C& c) -> int& { return c.episodes; }));
    f.push_back(integer<int>("experiment", "eval_episodes", 1, 1000000, [](C& c) -> int& { return c.eval_episodes; }));
    f.push_back(Field{"experiment", "seeds",
                      [](const C& c) {
                        return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
                      },
                      [](C& c, const std::string& v) {
                        std::vector<std::uint64_t> out;
                        for (const auto& s : split(v)) {
                          const long long x = parse_int("experiment.seeds", s);
                          if (x < 0) throw ConfigError("experiment.seeds: seeds must be nonnegative");
                          out.push_back(static_cast<std::uint64_t>(x));
                        }
                        if (out.empty()) throw ConfigError("experiment.seeds: list must not be empty");
                        c.seeds = out;
                      }});
    f.push_back(Field{"experiment", "rates",
                      [](const C& c) { return join<int>(c.rates, [](const int& r) { return std::to_string(r); }); },
                      [](C& c, const std::string& v) {
                        std::vector<int> out;
                        for (const auto& s : split(v)) {
                          const long long x = parse_int("experiment.rates", s);
                          if (x < 0 || x > 100000) throw ConfigError("experiment.rates: rate out of range");
                          out.push_back(static_cast<int>(x));
                        }
                        if (out.empty()) throw ConfigError("experiment.rates: list must not be empty");
                        c.rates = out;
                      }});
    f.push_back(text_list("experiment", "regimes", [](C& c) -> std::vector<std::string>& { return c.regimes; }));
    f.push_back(Field{"experiment", "output_dir", [](const C& c) { return c.output_dir; },
                      [](C& c, const std::string& v) {
                        if (trim(v).empty()) throw ConfigError("experiment.output_dir: must not be empty");
                        c.output_dir = trim(v);
                      }});
    f.push_back(integer<int>("experiment", "jobs", 1, 1024, [](C& c) -> int& { return c.jobs; }));

    // [scenario]
    f.push_back(integer<int>("scenario", "devices", 1, 10000, [](C& c) -> int& { return c.scenario.topology.devices; }));
    f.push_back(integer<int>("scenario", "servers", 0, 1000, [](C& c) -> int& { return c.scenario.topology.servers; }));
    auto gpu_check = [](const std::string& s) { require_gpu(s); };
    f.push_back(text_list("scenario", "server_gpus",
                          [](C& c) -> std::vector<std::string>& { return c.scenario.topology.server_gpus; }, gpu_check));
    f.push_back(text_list("scenario", "device_gpus",
                          [](C& c) -> std::vector<std::string>& { return c.scenario.topology.device_gpus; }, gpu_check));
    f.push_back(integer<int>("scenario", "horizon", 1, 100000, [](C& c) -> int& { return c.scenario.horizon; }));
    f.push_back(integer<int>("scenario", "generation_slots", 1, 100000,
                             [](C& c) -> int& { return c.scenario.workload.generation_slots; }));
    f.push_back(real("scenario", "slot_s", 1e-6, 1e6, [](C& c) -> double& { return c.scenario.cost.slot_s; }));
    f.push_back(real("scenario", "theta_min", 0, 1, [](C& c) -> double& { return c.scenario.theta_min; }));
    f.push_back(real("scenario", "gpu_efficiency", 1e-9, 1, [](C& c) -> double& { return c.scenario.cost.gpu_efficiency; }));
    f.push_back(real("scenario", "bandwidth_hz", 1, 1e12, [](C& c) -> double& { return c.scenario.channel.bandwidth_hz; }));
    f.push_back(real("scenario", "noise_w", 1e-30, 1, [](C& c) -> double& { return c.scenario.channel.noise_w; }));
    f.push_back(real("scenario", "g0", 1e-30, 1e6, [](C& c) -> double& { return c.scenario.channel.g0; }));
    f.push_back(real("scenario", "d0_m", 1e-6, 1e6, [](C& c) -> double& { return c.scenario.channel.d0_m; }));
    f.push_back(real("scenario", "distance_min_m", 1e-6, 1e9, [](C& c) -> double& { return c.scenario.mobility.min_m; }));
    f.push_back(real("scenario", "distance_max_m", 1e-6, 1e9, [](C& c) -> double& { return c.scenario.mobility.max_m; }));
    f.push_back(real("scenario", "initial_distance_min_m", 1e-6, 1e9,
                     [](C& c) -> double& { return c.scenario.topology.initial_distance_m.lo; }));
    f.push_back(real("scenario", "initial_distance_max_m", 1e-6, 1e9,
                     [](C& c) -> double& { return c.scenario.topology.initial_distance_m.hi; }));
    f.push_back(real("scenario", "load_sensitivity", 0, 1e6, [](C& c) -> double& { return c.scenario.load_sensitivity; }));
    f.push_back(real("scenario", "w_q", 0, 1, [](C& c) -> double& { return c.scenario.weights.w_q; }));
    f.push_back(real("scenario", "w_u", 0, 1, [](C& c) -> double& { return c.scenario.weights.w_u; }));
    f.push_back(real("scenario", "w_g", 0, 1, [](C& c) -> double& { return c.scenario.weights.w_g; }));

    // [cost]
    f.push_back(real("cost", "lambda", 0, 1, [](C& c) -> double& { return c.scenario.cost.lambda; }));
    f.push_back(real("cost", "lambda_e", 0, 1, [](C& c) -> double& { return c.scenario.cost.lambda_e; }));
    f.push_back(real("cost", "alpha_fail", 0, 1e6, [](C& c) -> double& { return c.scenario.cost.alpha_fail; }));
    f.push_back(real("cost", "kappa", 1e-40, 1, [](C& c) -> double& { return c.scenario.cost.kappa; }));

    // [learning]
    f.push_back(Field{"learning", "hidden",
                      [](const C& c) { return join<int>(c.learning.ddqn.hidden, [](const int& h) { return std::to_string(h); }); },
                      [](C& c, const std::string& v) {
                        std::vector<int> out;
                        for (const auto& s : split(v)) {
                          const long long x = parse_int("learning.hidden", s);
                          if (x < 1 || x > 65536) throw ConfigError("learning.hidden: layer width out of range");
                          out.push_back(static_cast<int>(x));
                        }
                        if (out.empty()) throw ConfigError("learning.hidden: list must not be empty");
                        c.learning.ddqn.hidden = out;
                        c.learning.td3.hidden = out;
                      }});
    f.push_back(real("learning", "actor_lr", 0, 1, [](C& c) -> double& { return c.learning.td3.actor_lr; }));
    f.push_back(real("learning", "critic_lr", 0, 1, [](C& c) -> double& { return c.learning.td3.critic_lr; }));
    f.push_back(real("learning", "td3_discount", 0, 1, [](C& c) -> double& { return c.learning.td3.discount; }));
    f.push_back(real("learning", "tau", 0, 1, [](C& c) -> double& { return c.learning.td3.tau; }));
    f.push_back(integer<int>("learning", "policy_delay", 1, 1000, [](C& c) -> int& { return c.learning.td3.policy_delay; }));
    f.push_back(real("learning", "smoothing_sigma", 0, 10, [](C& c) -> double& { return c.learning.td3.smoothing_sigma; }));
    f.push_back(real("learning", "smoothing_clip", 0, 10, [](C& c) -> double& { return c.learning.td3.smoothing_clip; }));
    f.push_back(real("learning", "sigma_base", 0, 10, [](C& c) -> double& { return c.learning.td3.sigma_base; }));
    f.push_back(real("learning", "noise_alpha", 0, 100, [](C& c) -> double& { return c.learning.td3.noise_alpha; }));
    f.push_back(integer<std::size_t>("learning", "td3_batch", 1, 1 << 20, [](C& c) -> std::size_t& { return c.learning.td3.batch; }));
    f.push_back(integer<std::size_t>("learning", "td3_buffer", 1, 1 << 26, [](C& c) -> std::size_t& { return c.learning.td3.buffer; }));
    f.push_back(real("learning", "gamma_fail", 0, 1e6, [](C& c) -> double& { return c.learning.ddqn.gamma_fail; }));
    f.push_back(real("learning", "eps_min", 0, 1, [](C& c) -> double& { return c.learning.ddqn.eps_min; }));
    f.push_back(real("learning", "eps_max", 0, 1, [](C& c) -> double& { return c.learning.ddqn.eps_max; }));
    f.push_back(real("learning", "beta", 0, 1e6, [](C& c) -> double& { return c.learning.ddqn.beta; }));
    f.push_back(real("learning", "eta_base", 0, 1, [](C& c) -> double& { return c.learning.ddqn.eta_base; }));
    f.push_back(real("learning", "alpha_lr", 0, 1e6, [](C& c) -> double& { return c.learning.ddqn.alpha_lr; }));
    f.push_back(integer<std::uint64_t>("learning", "hard_update", 0, 1LL << 40,
                                       [](C& c) -> std::uint64_t& { return c.learning.ddqn.hard_update; }));
    f.push_back(real("learning", "ddqn_discount", 0, 1, [](C& c) -> double& { return c.learning.ddqn.discount; }));
    f.push_back(integer<std::size_t>("learning", "ddqn_batch", 1, 1 << 20, [](C& c) -> std::size_t& { return c.learning.ddqn.batch; }));
    f.push_back(integer<std::size_t>("learning", "ddqn_buffer", 1, 1 << 26, [](C& c) -> std::size_t& { return c.learning.ddqn.buffer; }));
    f.push_back(boolean("learning", "temporal_state", [](C& c) -> bool& { return c.learning.temporal_state; }));
    f.push_back(boolean("learning", "alloc_bootstrap", [](C& c) -> bool& { return c.learning.alloc_bootstrap; }));
    f.push_back(integer<int>("learning", "qpso_particles", 2, 100000, [](C& c) -> int& { return c.learning.qpso.particles; }));
    f.push_back(integer<int>("learning", "qpso_iterations", 0, 100000, [](C& c) -> int& { return c.learning.qpso.iterations; }));

    // [sweep]
    f.push_back(real_list("sweep", "lambdas", 0, 1, [](C& c) -> std::vector<double>& { return c.sweep.lambdas; }));
    f.push_back(real_list("sweep", "gamma_fails", 0, 1e6, [](C& c) -> std::vector<double>& { return c.sweep.gamma_fails; }));
    f.push_back(Field{"sweep", "regime", [](const C& c) { return c.sweep.regime; },
                      [](C& c, const std::string& v) { c.sweep.regime = trim(v); }});
    return f;
  }();
  return fields;
}

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : schema())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace config_detail

// Cross-field checks applied after every load or override.
inline void validate(ExperimentConfig& c) {
  c.learning.td3.gamma_fail = c.learning.ddqn.gamma_fail;
  if (c.rates.size() != c.regimes.size())
    throw ConfigError("experiment.regimes: " + std::to_string(c.regimes.size()) + " names for " +
                      std::to_string(c.rates.size()) + " rates");
  if (!c.scenario.weights.valid()) throw ConfigError("scenario.w_q: load weights must sum to 1");
  if (c.learning.ddqn.eps_min > c.learning.ddqn.eps_max)
    throw ConfigError("learning.eps_min: exceeds learning.eps_max");
  if (c.scenario.mobility.min_m >= c.scenario.mobility.max_m)
    throw ConfigError("scenario.distance_min_m: must be below scenario.distance_max_m");
  if (c.scenario.topology.initial_distance_m.lo > c.scenario.topology.initial_distance_m.hi)
    throw ConfigError("scenario.initial_distance_min_m: exceeds scenario.initial_distance_max_m");
  if (c.scenario.horizon < c.scenario.workload.generation_slots)
    throw ConfigError("scenario.horizon: must cover scenario.generation_slots");
  if (c.scenario.topology.servers > 0 && c.scenario.topology.server_gpus.empty())
    throw ConfigError("scenario.server_gpus: must not be empty");
  bool regime_found = false;
  for (const auto& r : c.regimes) regime_found = regime_found || r == c.sweep.regime;
  if (!regime_found) throw ConfigError("sweep.regime: '" + c.sweep.regime + "' is not a listed regime");
}

// Sets one "section.key" to a textual value.
inline void set_option(ExperimentConfig& c, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) throw ConfigError("option '" + dotted + "' must be section.key");
  const auto* f = config_detail::find_field(dotted.substr(0, dot), dotted.substr(dot + 1));
  if (f == nullptr) throw ConfigError("unknown key '" + dotted + "'");
  f->set(c, value);
}

inline ExperimentConfig config_from_tree(const boost::property_tree::ptree& tree) {
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' must live inside a section");
    for (const auto& [key, node] : body) {
      const auto* f = config_detail::find_field(section, key);
      if (f == nullptr) throw ConfigError("unknown key '" + section + "." + key + "'");
      std::string value = node.data();
      if (!node.empty()) {  // JSON array
        std::vector<std::string> items;
        for (const auto& [k, item] : node) items.push_back(item.data());
        value = config_detail::join<std::string>(items, [](const std::string& s) { return s; });
      }
      f->set(c, value);
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& text, bool json) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    if (json) {
      boost::property_tree::read_json(is, tree);
    } else {
      boost::property_tree::read_ini(is, tree);
    }
  } catch (const boost::property_tree::file_parser_error& e) {
    throw ConfigError(std::string("parse error: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  return config_from_tree(tree);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const bool json = std::filesystem::path(path).extension() == ".json";
  return parse_config(ss.str(), json);
}

// Every schema key in fixed order, INI syntax.
inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : config_detail::schema()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

}  // namespace hirl
