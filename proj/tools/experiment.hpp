#pragma once

// Experiment descriptions, config parsing and scenario runners for the CLI.

#include "itkrm/adaptive.hpp"
#include "itkrm/engine.hpp"
#include "itkrm/image.hpp"
#include "itkrm/io.hpp"
#include "itkrm/omp.hpp"
#include "itkrm/signals.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace itkrm::cli {

/// Invalid experiment description; maps to exit code 2.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"plain_recovery",   "replacement_compare", "adaptive_synthetic",
                                              "adaptive_image",   "fixedpoint_probe",    "contraction_sweep"};
  return names;
}

struct ExperimentSpec {
  std::string scenario = "replacement_compare";
  // generating dictionary and signals
  long d = 128;
  long K = 192;
  std::string dict = "random-sphere";  // or dirac-hadamard
  std::string coeffs = "geometric";    // geometric, two-sparse, balanced
  std::string S = "6";                 // one level, or a list for a mixture
  std::string S_weights;               // mixture weights, default uniform
  double q_min = 0.9;
  double q_max = 1.0;
  double b_min = 0.9;
  double b_max = 1.0;
  double snr = 16.0;       // 0 disables noise
  double outliers = 0.05;  // fraction replaced by pure noise of std 1/d
  long N = 120000;
  double scale = 1.0;
  // learning
  long iterations = 100;
  long trials = 20;
  long seed = 1;
  long S_e = 6;
  std::string replacement = "candidate";  // none, random, candidate, all
  double mu_max = 0.7;
  std::string combine = "merge";
  long L = 0;  // 0: round(log d)
  long m = 0;  // 0: round(log d)
  double M = 0.0;  // 0: round(d log d)
  long K_e = 0;    // 0: K (synthetic) or d (image)
  double recovery_threshold = 0.99;
  long block_size = 256;
  bool deterministic = true;
  // probes
  std::string eps = "0.1,0.3";
  long spurious_pairs = 0;
  // images
  std::string image;
  double sigma = 0.0;
  long patch = 8;
  long approx_smax = 12;
  bool flat = true;
  std::string output_dir = "itkrm_out";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long r = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw SpecError("invalid integer for '" + key + "': " + v);
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw SpecError("invalid number for '" + key + "': " + v);
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw SpecError("invalid boolean for '" + key + "': " + v);
}

struct Field {
  std::function<void(ExperimentSpec&, const std::string&)> set;
  std::function<nlohmann::json(const ExperimentSpec&)> get;
};

template <class T>
Field make_field(const std::string& key, T ExperimentSpec::*member) {
  Field f;
  f.set = [key, member](ExperimentSpec& s, const std::string& v) {
    if constexpr (std::is_same_v<T, long>) s.*member = to_long(key, v);
    else if constexpr (std::is_same_v<T, double>) s.*member = to_double(key, v);
    else if constexpr (std::is_same_v<T, bool>) s.*member = to_bool(key, v);
    else s.*member = v;
  };
  f.get = [member](const ExperimentSpec& s) { return nlohmann::json(s.*member); };
  return f;
}

}  // namespace detail

/// Every settable key, in manifest order.
inline const std::vector<std::pair<std::string, detail::Field>>& spec_fields() {
  using detail::make_field;
  static const std::vector<std::pair<std::string, detail::Field>> fields{
      {"scenario", make_field("scenario", &ExperimentSpec::scenario)},
      {"d", make_field("d", &ExperimentSpec::d)},
      {"K", make_field("K", &ExperimentSpec::K)},
      {"dict", make_field("dict", &ExperimentSpec::dict)},
      {"coeffs", make_field("coeffs", &ExperimentSpec::coeffs)},
      {"S", make_field("S", &ExperimentSpec::S)},
      {"S_weights", make_field("S_weights", &ExperimentSpec::S_weights)},
      {"q_min", make_field("q_min", &ExperimentSpec::q_min)},
      {"q_max", make_field("q_max", &ExperimentSpec::q_max)},
      {"b_min", make_field("b_min", &ExperimentSpec::b_min)},
      {"b_max", make_field("b_max", &ExperimentSpec::b_max)},
      {"snr", make_field("snr", &ExperimentSpec::snr)},
      {"outliers", make_field("outliers", &ExperimentSpec::outliers)},
      {"N", make_field("N", &ExperimentSpec::N)},
      {"scale", make_field("scale", &ExperimentSpec::scale)},
      {"iterations", make_field("iterations", &ExperimentSpec::iterations)},
      {"trials", make_field("trials", &ExperimentSpec::trials)},
      {"seed", make_field("seed", &ExperimentSpec::seed)},
      {"S_e", make_field("S_e", &ExperimentSpec::S_e)},
      {"replacement", make_field("replacement", &ExperimentSpec::replacement)},
      {"mu_max", make_field("mu_max", &ExperimentSpec::mu_max)},
      {"combine", make_field("combine", &ExperimentSpec::combine)},
      {"L", make_field("L", &ExperimentSpec::L)},
      {"m", make_field("m", &ExperimentSpec::m)},
      {"M", make_field("M", &ExperimentSpec::M)},
      {"K_e", make_field("K_e", &ExperimentSpec::K_e)},
      {"recovery_threshold", make_field("recovery_threshold", &ExperimentSpec::recovery_threshold)},
      {"block_size", make_field("block_size", &ExperimentSpec::block_size)},
      {"deterministic", make_field("deterministic", &ExperimentSpec::deterministic)},
      {"eps", make_field("eps", &ExperimentSpec::eps)},
      {"spurious_pairs", make_field("spurious_pairs", &ExperimentSpec::spurious_pairs)},
      {"image", make_field("image", &ExperimentSpec::image)},
      {"sigma", make_field("sigma", &ExperimentSpec::sigma)},
      {"patch", make_field("patch", &ExperimentSpec::patch)},
      {"approx_smax", make_field("approx_smax", &ExperimentSpec::approx_smax)},
      {"flat", make_field("flat", &ExperimentSpec::flat)},
      {"output_dir", make_field("output_dir", &ExperimentSpec::output_dir)},
  };
  return fields;
}

inline void set_field(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : spec_fields()) {
    if (name == key) {
      field.set(spec, value);
      return;
    }
  }
  throw SpecError("unknown key '" + key + "'");
}

/// Flat `key = value` lines; `[section]` headers group keys and may prefix
/// them (`section.key`), which is accepted as `key`. `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw SpecError("config line " + std::to_string(lineno) + ": malformed section header");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SpecError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (const auto dot = key.rfind('.'); dot != std::string::npos) key = key.substr(dot + 1);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw SpecError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, value);
  }
  return out;
}

inline void validate_spec(const ExperimentSpec& s) {
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), s.scenario) == names.end()) throw SpecError("unknown scenario '" + s.scenario + "'");
  if (s.d < 2) throw SpecError("'d' must be >= 2");
  if (s.K < 1) throw SpecError("'K' must be >= 1");
  if (s.dict != "random-sphere" && s.dict != "dirac-hadamard") throw SpecError("'dict' must be random-sphere or dirac-hadamard");
  if (s.dict == "dirac-hadamard" && (!is_power_of_two(s.d) || s.K > 2 * s.d))
    throw SpecError("'dict' dirac-hadamard needs d a power of two and K <= 2d");
  if (s.coeffs != "geometric" && s.coeffs != "two-sparse" && s.coeffs != "balanced")
    throw SpecError("'coeffs' must be geometric, two-sparse or balanced");
  if (!(s.q_min > 0.0 && s.q_min <= s.q_max && s.q_max <= 1.0)) throw SpecError("need 0 < q_min <= q_max <= 1");
  if (!(s.b_min >= 0.0 && s.b_min <= s.b_max && s.b_max <= 1.0)) throw SpecError("need 0 <= b_min <= b_max <= 1");
  if (!(s.snr >= 0.0)) throw SpecError("'snr' must be >= 0");
  if (!(s.outliers >= 0.0 && s.outliers < 1.0)) throw SpecError("'outliers' must lie in [0, 1)");
  if (s.N < 1) throw SpecError("'N' must be >= 1");
  if (!(s.scale > 0.0 && s.scale <= 1.0)) throw SpecError("'scale' must lie in (0, 1]");
  if (s.iterations < 0) throw SpecError("'iterations' must be >= 0");
  if (s.trials < 0) throw SpecError("'trials' must be >= 0");
  if (s.seed < 0) throw SpecError("'seed' must be >= 0");
  if (s.S_e < 1 || s.S_e > std::min(s.d, s.K)) throw SpecError("'S_e' must lie in [1, min(d, K)]");
  if (s.replacement != "none" && s.replacement != "random" && s.replacement != "candidate" && s.replacement != "all")
    throw SpecError("'replacement' must be none, random, candidate or all");
  if (!(s.mu_max > 0.0 && s.mu_max < 1.0)) throw SpecError("'mu_max' must lie in (0, 1)");
  if (s.combine != "merge" && s.combine != "add" && s.combine != "delete") throw SpecError("'combine' must be merge, add or delete");
  if (s.L < 0 || s.m < 0 || s.K_e < 0 || s.M < 0.0) throw SpecError("'L', 'm', 'M' and 'K_e' must be >= 0");
  if (!(s.recovery_threshold > 0.0 && s.recovery_threshold <= 1.0)) throw SpecError("'recovery_threshold' must lie in (0, 1]");
  if (s.block_size < 1) throw SpecError("'block_size' must be >= 1");
  if (s.spurious_pairs < 0 || 3 * s.spurious_pairs > s.K) throw SpecError("'spurious_pairs' must lie in [0, K/3]");
  if (!(s.sigma >= 0.0)) throw SpecError("'sigma' must be >= 0");
  if (s.patch < 1) throw SpecError("'patch' must be >= 1");
  if (s.approx_smax < 1) throw SpecError("'approx_smax' must be >= 1");
  if (s.scenario == "adaptive_image" && s.image.empty()) throw SpecError("'image' is required for adaptive_image");
  for (const auto& e : detail::split(s.eps, ','))
    if (const double v = detail::to_double("eps", e); !(v > 0.0 && v < std::sqrt(2.0))) throw SpecError("'eps' values must lie in (0, sqrt 2)");
  for (const auto& v : detail::split(s.S, ','))
    if (detail::to_long("S", v) < 1 || detail::to_long("S", v) > s.K) throw SpecError("'S' values must lie in [1, K]");
  if (!s.S_weights.empty() && detail::split(s.S_weights, ',').size() != detail::split(s.S, ',').size())
    throw SpecError("'S_weights' must have one weight per 'S' value");
  if (s.coeffs == "two-sparse" && s.S != "2") throw SpecError("'coeffs' two-sparse needs S = 2");
}

/// Shrinks (d, K, N) by `scale`, keeping d a power of two for
/// Dirac-Hadamard dictionaries.
inline ExperimentSpec apply_scale(ExperimentSpec s) {
  if (s.scale == 1.0) return s;
  s.d = std::max(2L, std::lround(static_cast<double>(s.d) * s.scale));
  if (s.dict == "dirac-hadamard") s.d = 1L << static_cast<int>(std::lround(std::log2(static_cast<double>(s.d))));
  s.K = std::max(1L, std::lround(static_cast<double>(s.K) * s.scale));
  s.N = std::max(1L, std::lround(static_cast<double>(s.N) * s.scale));
  s.scale = 1.0;
  return s;
}

/// Defaults, then config file entries, then flags.
inline ExperimentSpec parse_spec(const std::vector<std::pair<std::string, std::string>>& flags,
                                 const std::string& config_text = {}, ExperimentSpec base = {}) {
  ExperimentSpec spec = std::move(base);
  for (const auto& [k, v] : parse_config_text(config_text)) set_field(spec, k, v);
  for (const auto& [k, v] : flags) set_field(spec, k, v);
  validate_spec(spec);
  spec = apply_scale(spec);
  validate_spec(spec);
  return spec;
}

inline nlohmann::json spec_to_json(const ExperimentSpec& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, field] : spec_fields()) j[name] = field.get(s);
  return j;
}

// ---------------------------------------------------------------------------
// Derived settings

inline long log_d(long d) { return std::max(1L, std::lround(std::log(static_cast<double>(d)))); }
inline long resolved_L(const ExperimentSpec& s) { return s.L > 0 ? s.L : log_d(s.d); }
inline long resolved_m(const ExperimentSpec& s) { return s.m > 0 ? s.m : log_d(s.d); }
inline double resolved_M(const ExperimentSpec& s) {
  const double d = static_cast<double>(s.d);
  return s.M > 0.0 ? s.M : std::round(d * std::log(d));
}
inline long resolved_K_e(const ExperimentSpec& s) {
  if (s.K_e > 0) return s.K_e;
  return s.scenario == "adaptive_image" ? s.d : s.K;
}

inline CoefficientModel coefficient_model(const ExperimentSpec& s) {
  auto simple = [&](int S) -> SimpleCoeffModel {
    if (s.coeffs == "two-sparse") return TwoSparseCoeffs{s.b_min, s.b_max};
    if (s.coeffs == "balanced") return BalancedCoeffs{S};
    return GeometricCoeffs{s.q_min, s.q_max, S};
  };
  const auto levels = detail::split(s.S, ',');
  if (levels.size() == 1) {
    const SimpleCoeffModel m = simple(static_cast<int>(detail::to_long("S", levels[0])));
    return std::visit([](const auto& v) -> CoefficientModel { return v; }, m);
  }
  std::vector<double> w(levels.size(), 1.0);
  if (!s.S_weights.empty()) {
    const auto ws = detail::split(s.S_weights, ',');
    for (std::size_t i = 0; i < ws.size(); ++i) w[i] = detail::to_double("S_weights", ws[i]);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw SpecError("'S_weights' must sum to a positive value");
  MixtureCoeffs mix;
  for (std::size_t i = 0; i < levels.size(); ++i)
    mix.components.emplace_back(w[i] / total, simple(static_cast<int>(detail::to_long("S", levels[i]))));
  return mix;
}

inline Dictionary generating_dictionary(const ExperimentSpec& s, std::uint64_t trial_seed) {
  if (s.dict == "dirac-hadamard") return make_dirac_hadamard(s.d, s.K);
  CounterRng rng(trial_seed, streams::kGenerating);
  return make_random_sphere(s.d, s.K, rng);
}

inline SignalModel signal_model(const ExperimentSpec& s, Dictionary phi, std::uint64_t trial_seed) {
  SignalModel m;
  m.dictionary = std::move(phi);
  m.coeffs = coefficient_model(s);
  m.noise_std = s.snr > 0.0 ? std::sqrt(1.0 / (s.snr * static_cast<double>(s.d))) : 0.0;
  m.outlier_rate = s.outliers;
  m.outlier_std = 1.0 / static_cast<double>(s.d);
  m.seed = trial_seed;
  return m;
}

inline std::uint64_t trial_seed(const ExperimentSpec& s, long trial) {
  return static_cast<std::uint64_t>(s.seed) + static_cast<std::uint64_t>(trial);
}

inline ReplacementStrategy parse_strategy(const std::string& v) {
  if (v == "none") return ReplacementStrategy::none;
  if (v == "random") return ReplacementStrategy::random;
  return ReplacementStrategy::candidate;
}

inline const char* strategy_name(ReplacementStrategy s) {
  switch (s) {
    case ReplacementStrategy::none: return "none";
    case ReplacementStrategy::random: return "random";
    case ReplacementStrategy::candidate: return "candidate";
  }
  return "none";
}

inline CombineMode parse_combine(const std::string& v) {
  if (v == "add") return CombineMode::add;
  if (v == "delete") return CombineMode::del;
  return CombineMode::merge;
}

inline AdaptiveConfig adaptive_config(const ExperimentSpec& s, std::uint64_t seed) {
  AdaptiveConfig c = AdaptiveConfig::defaults(s.d, resolved_M(s));
  c.mu_max = s.mu_max;
  c.memory = static_cast<int>(resolved_m(s));
  c.candidate_count = resolved_L(s);
  c.start_adapt = c.memory;
  c.start_prune = 2 * c.memory;
  c.freeze_add_tail = 3 * c.memory;
  c.seed = seed;
  c.recovery_threshold = s.recovery_threshold;
  c.block_size = s.block_size;
  c.deterministic_reduction = s.deterministic;
  return c;
}

// ---------------------------------------------------------------------------
// Output

struct RunOutput {
  std::string label;  // trial (and strategy) identifier
  std::string group;  // aggregate group, e.g. the strategy
  std::vector<IterationRecord> records;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

/// Per group and iteration: mean and std over trials. No timing columns, so
/// reruns give identical bytes.
inline std::string aggregate_csv(const std::vector<RunOutput>& runs) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "group,iter,trials,distance_mean,distance_std,mean_atom_distance_mean,recovery_rate_mean,recovery_rate_std,"
        "K_mean,K_std,S_e_mean,replaced_mean\n";
  std::vector<std::string> groups;
  for (const auto& r : runs)
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  for (const auto& g : groups) {
    std::size_t iters = 0;
    for (const auto& r : runs)
      if (r.group == g) iters = std::max(iters, r.records.size());
    for (std::size_t i = 0; i < iters; ++i) {
      std::vector<double> dist, mad, rate, K, Se, repl;
      for (const auto& r : runs) {
        if (r.group != g || i >= r.records.size()) continue;
        const auto& rec = r.records[i];
        dist.push_back(rec.distance);
        mad.push_back(rec.mean_atom_distance);
        rate.push_back(rec.recovery_rate);
        K.push_back(static_cast<double>(rec.K));
        Se.push_back(rec.S_e);
        repl.push_back(rec.replaced);
      }
      os << g << ',' << (i + 1) << ',' << dist.size() << ',';
      write_csv_number(os, mean_of(dist));
      os << ',';
      write_csv_number(os, std_of(dist));
      os << ',';
      write_csv_number(os, mean_of(mad));
      os << ',';
      write_csv_number(os, mean_of(rate));
      os << ',';
      write_csv_number(os, std_of(rate));
      os << ',' << mean_of(K) << ',' << std_of(K) << ',' << mean_of(Se) << ',' << mean_of(repl) << '\n';
    }
  }
  return os.str();
}

struct ExperimentResult {
  std::filesystem::path directory;
  std::vector<RunOutput> runs;
  nlohmann::json summary = nlohmann::json::object();
};

namespace detail {

inline std::string trial_label(long t) {
  std::ostringstream os;
  os << "trial_" << std::setw(3) << std::setfill('0') << t;
  return os.str();
}

inline std::string trajectory_text(const std::vector<IterationRecord>& recs, bool adaptive) {
  std::ostringstream os;
  write_trajectory_csv(os, recs, adaptive);
  return os.str();
}

inline void save_dico(const std::filesystem::path& p, const Dictionary& d) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  write_dictionary(out, d);
}

inline void run_learning_scenario(const ExperimentSpec& s, ExperimentResult& res) {
  std::vector<ReplacementStrategy> strategies;
  if (s.scenario == "plain_recovery") strategies = {ReplacementStrategy::none};
  else if (s.replacement == "all" || s.scenario == "replacement_compare" && s.replacement == "candidate")
    strategies = {ReplacementStrategy::none, ReplacementStrategy::random, ReplacementStrategy::candidate};
  else strategies = {parse_strategy(s.replacement)};
  nlohmann::json& sum = res.summary["trials"];
  sum = nlohmann::json::array();
  for (long t = 0; t < s.trials; ++t) {
    const std::uint64_t seed = trial_seed(s, t);
    const Dictionary phi = generating_dictionary(s, seed);
    CounterRng init_rng(seed, streams::kInitDictionary);
    const Dictionary init = make_random_sphere(s.d, s.K, init_rng);
    for (ReplacementStrategy strat : strategies) {
      SyntheticSource src(signal_model(s, phi, seed), s.N);
      LearnConfig cfg;
      cfg.engine.sparsity = static_cast<int>(s.S_e);
      cfg.engine.candidate_subbatches = static_cast<int>(resolved_m(s));
      cfg.engine.block_size = s.block_size;
      cfg.engine.deterministic_reduction = s.deterministic;
      cfg.replacement = strat;
      cfg.policy = {s.mu_max, parse_combine(s.combine)};
      cfg.candidate_count = resolved_L(s);
      cfg.seed = seed;
      cfg.recovery_threshold = s.recovery_threshold;
      const Trajectory tr = run_learning(init, src, cfg, static_cast<int>(s.iterations));
      const std::string label = trial_label(t) + (strategies.size() > 1 ? std::string("_") + strategy_name(strat) : "");
      write_text(res.directory / (label + ".csv"), trajectory_text(tr.records, false));
      save_dico(res.directory / (label + ".spdk"), tr.final_dictionary);
      if (strat != ReplacementStrategy::none) {
        std::ostringstream ev;
        write_events_csv(ev, tr.events);
        write_text(res.directory / (label + "_events.csv"), ev.str());
      }
      const double rate = tr.records.empty() ? recovery_rate(phi, init, s.recovery_threshold) : tr.records.back().recovery_rate;
      sum.push_back({{"trial", t}, {"strategy", strategy_name(strat)}, {"seed", seed},
                     {"recovered", std::lround(rate * static_cast<double>(s.K))}, {"recovery_rate", rate}});
      res.runs.push_back({label, strategy_name(strat), tr.records});
    }
  }
}

inline void run_adaptive_synthetic(const ExperimentSpec& s, ExperimentResult& res) {
  nlohmann::json& sum = res.summary["trials"];
  sum = nlohmann::json::array();
  for (long t = 0; t < s.trials; ++t) {
    const std::uint64_t seed = trial_seed(s, t);
    const Dictionary phi = generating_dictionary(s, seed);
    CounterRng init_rng(seed, streams::kInitDictionary);
    const Dictionary init = make_random_sphere(s.d, resolved_K_e(s), init_rng);
    SyntheticSource src(signal_model(s, phi, seed), s.N);
    const Trajectory tr = run_adaptive(init, src, adaptive_config(s, seed), static_cast<int>(s.iterations));
    const std::string label = trial_label(t);
    write_text(res.directory / (label + ".csv"), trajectory_text(tr.records, true));
    save_dico(res.directory / (label + ".spdk"), tr.final_dictionary);
    const IterationRecord last = tr.records.empty() ? IterationRecord{} : tr.records.back();
    sum.push_back({{"trial", t}, {"seed", seed}, {"final_K", tr.final_dictionary.size()}, {"final_S_e", final_sparsity(tr)},
                   {"recovery_rate", tr.records.empty() ? recovery_rate(phi, init, s.recovery_threshold) : last.recovery_rate}});
    res.runs.push_back({label, "adaptive", tr.records});
  }
}

inline void run_adaptive_image(const ExperimentSpec& s, ExperimentResult& res) {
  const Image clean = load_image_gray(s.image);
  PatchConfig pc;
  pc.patch_side = s.patch;
  const SignalBatch clean_patches = extract_patches(clean, pc);
  const long d = s.patch * s.patch;
  ExperimentSpec sd = s;
  sd.d = d;
  nlohmann::json& sum = res.summary["trials"];
  sum = nlohmann::json::array();
  for (long t = 0; t < s.trials; ++t) {
    const std::uint64_t seed = trial_seed(s, t);
    CounterRng noise_rng(seed, streams::kImageNoise);
    const Image noisy = add_image_noise(clean, s.sigma, noise_rng);
    FixedSource src(extract_patches(noisy, pc));
    CounterRng init_rng(seed, streams::kInitDictionary);
    const long K_e = s.K_e > 0 ? s.K_e : d;
    const Dictionary init = make_random_sphere(d, K_e, init_rng);
    const Trajectory tr = run_adaptive(init, src, adaptive_config(sd, seed), static_cast<int>(s.iterations));
    const std::string label = trial_label(t);
    write_text(res.directory / (label + ".csv"), trajectory_text(tr.records, true));
    save_dico(res.directory / (label + ".spdk"), tr.final_dictionary);
    std::vector<int> range;
    const long smax = std::min<long>(s.approx_smax, std::min<long>(d, tr.final_dictionary.size() + 1) - 1);
    for (int k = 1; k <= smax; ++k) range.push_back(k);
    ApproxOptions opts;
    opts.augment_flat = s.flat;
    const ApproxReport rep = approximation_power(tr.final_dictionary, clean_patches, range, opts);
    std::ostringstream ap;
    write_approx_csv(ap, rep);
    write_text(res.directory / (label + "_approx.csv"), ap.str());
    const IterationRecord last = tr.records.empty() ? IterationRecord{} : tr.records.back();
    sum.push_back({{"trial", t}, {"seed", seed}, {"final_K", tr.final_dictionary.size()}, {"final_S_e", final_sparsity(tr)},
                   {"S_t", last.S_t}, {"noisy_psnr", psnr(clean, noisy)}, {"patches", clean_patches.count()}});
    res.runs.push_back({label, "adaptive_image", tr.records});
  }
}

/// Random initializations (or a constructed spurious estimate) on the
/// plain iteration; reports recovered counts, sorted errors and diagnostics.
inline void run_fixedpoint_probe(const ExperimentSpec& s, ExperimentResult& res) {
  nlohmann::json& sum = res.summary["trials"];
  sum = nlohmann::json::array();
  for (long t = 0; t < s.trials; ++t) {
    const std::uint64_t seed = trial_seed(s, t);
    const Dictionary phi = generating_dictionary(s, seed);
    Dictionary init;
    if (s.spurious_pairs > 0) {
      std::vector<SpuriousTriple> triples;
      for (long p = 0; p < s.spurious_pairs; ++p) triples.push_back({3 * p, 3 * p + 1, 3 * p + 2});
      init = make_spurious_estimate(phi, triples);
    } else {
      CounterRng init_rng(seed, streams::kInitDictionary);
      init = make_random_sphere(s.d, s.K, init_rng);
    }
    SyntheticSource src(signal_model(s, phi, seed), s.N);
    LearnConfig cfg;
    cfg.engine.sparsity = static_cast<int>(s.S_e);
    cfg.engine.block_size = s.block_size;
    cfg.engine.deterministic_reduction = s.deterministic;
    cfg.recovery_threshold = s.recovery_threshold;
    const Trajectory tr = run_learning(init, src, cfg, static_cast<int>(s.iterations));
    const std::string label = trial_label(t);
    write_text(res.directory / (label + ".csv"), trajectory_text(tr.records, false));
    save_dico(res.directory / (label + ".spdk"), tr.final_dictionary);
    const auto errors = sorted_atom_errors(phi, tr.final_dictionary);
    std::ostringstream es;
    es << std::setprecision(10) << "rank,distance\n";
    for (std::size_t i = 0; i < errors.size(); ++i) es << i + 1 << ',' << errors[i] << '\n';
    write_text(res.directory / (label + "_sorted_errors.csv"), es.str());
    const double rate = recovery_rate(phi, tr.final_dictionary, s.recovery_threshold);
    const long recovered = std::lround(rate * static_cast<double>(s.K));
    double max_move = 0.0;
    for (const auto& r : tr.records) max_move = std::max(max_move, r.max_atom_movement);
    sum.push_back({{"trial", t}, {"seed", seed}, {"recovered", recovered}, {"missing", s.K - recovered},
                   {"max_atom_movement", max_move}});
    res.runs.push_back({label, "plain", tr.records});
  }
}

/// One plain iteration from eps-perturbations of the generating dictionary.
inline void run_contraction_sweep(const ExperimentSpec& s, ExperimentResult& res) {
  std::ostringstream os;
  os << std::setprecision(10) << "eps,trial,distance_before,distance_after,factor\n";
  nlohmann::json& sum = res.summary["eps"];
  sum = nlohmann::json::array();
  for (const auto& e : split(s.eps, ',')) {
    const double eps = to_double("eps", e);
    std::vector<double> factors;
    long decreased = 0;
    for (long t = 0; t < s.trials; ++t) {
      const std::uint64_t seed = trial_seed(s, t);
      const Dictionary phi = generating_dictionary(s, seed);
      CounterRng prng(seed, streams::kInitDictionary);
      const Dictionary psi = make_perturbed(phi, eps, prng);
      const SignalBatch batch = generate_batch(signal_model(s, phi, seed), s.N, 1);
      EngineConfig ec;
      ec.sparsity = static_cast<int>(s.S_e);
      ec.block_size = s.block_size;
      ec.deterministic_reduction = s.deterministic;
      CounterRng crng(seed, streams::kCandidates);
      const IterationOutput out = run_iteration(psi, batch, ec, CandidateSet{}, crng);
      const double before = asym_distance(phi, psi).value;
      const double after = asym_distance(phi, out.dictionary).value;
      factors.push_back(after / before);
      if (after < before) ++decreased;
      os << eps << ',' << t << ',' << before << ',' << after << ',' << after / before << '\n';
    }
    sum.push_back({{"eps", eps}, {"trials", s.trials}, {"decreased", decreased}, {"mean_factor", mean_of(factors)}});
  }
  write_text(res.directory / "contraction.csv", os.str());
}

}  // namespace detail

/// Runs all trials and writes the manifest, per-trial CSVs, dictionaries
/// and the aggregate CSV into `spec.output_dir`.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  ExperimentResult res;
  res.directory = spec.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(res.directory, ec);
  if (ec || !std::filesystem::is_directory(res.directory))
    throw std::runtime_error("cannot create output directory " + spec.output_dir);

  nlohmann::json manifest;
  manifest["spec"] = spec_to_json(spec);
  manifest["derived"] = {{"L", resolved_L(spec)}, {"m", resolved_m(spec)}, {"M", resolved_M(spec)}, {"K_e", resolved_K_e(spec)}};
  write_text(res.directory / "manifest.json", manifest.dump(2) + "\n");
  if (spec.trials == 0) return res;

  const std::string& sc = spec.scenario;
  if (sc == "plain_recovery" || sc == "replacement_compare") detail::run_learning_scenario(spec, res);
  else if (sc == "adaptive_synthetic") detail::run_adaptive_synthetic(spec, res);
  else if (sc == "adaptive_image") detail::run_adaptive_image(spec, res);
  else if (sc == "fixedpoint_probe") detail::run_fixedpoint_probe(spec, res);
  else if (sc == "contraction_sweep") detail::run_contraction_sweep(spec, res);

  if (!res.runs.empty()) write_text(res.directory / "aggregate.csv", aggregate_csv(res.runs));
  manifest["summary"] = res.summary;
  write_text(res.directory / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

}  // namespace itkrm::cli
