// itkrm: dictionary learning experiments from the command line.
//
//   itkrm learn --scenario replacement_compare --scale 0.5 --trials 4
//   itkrm probe --scenario fixedpoint_probe --d 32 --K 48 --dict dirac-hadamard --S 2 --coeffs two-sparse
//   itkrm eval  --dict out/trial_000.spdk --reference phi.spdk
//
// Exit codes: 0 success, 2 invalid arguments or spec, 3 runtime failure.

#include "experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace {

using itkrm::cli::ExperimentSpec;
using itkrm::cli::SpecError;

constexpr int kExitSpec = 2;
constexpr int kExitRuntime = 3;

struct SpecFlags {
  std::map<std::string, std::optional<std::string>> values;
  std::string config;
};

void add_spec_flags(CLI::App* cmd, SpecFlags& flags) {
  cmd->add_option("--config", flags.config, "key = value config file; flags override it");
  for (const auto& [name, field] : itkrm::cli::spec_fields()) {
    (void)field;
    cmd->add_option("--" + name, flags.values[name], "experiment field '" + name + "'");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentSpec resolve(const SpecFlags& flags, const std::vector<std::string>& allowed_scenarios) {
  std::vector<std::pair<std::string, std::string>> given;
  for (const auto& [k, v] : flags.values)
    if (v) given.emplace_back(k, *v);
  ExperimentSpec base;
  base.scenario = allowed_scenarios.front() == "fixedpoint_probe" ? "fixedpoint_probe" : "replacement_compare";
  ExperimentSpec spec =
      itkrm::cli::parse_spec(given, flags.config.empty() ? std::string{} : read_file(flags.config), base);
  if (std::find(allowed_scenarios.begin(), allowed_scenarios.end(), spec.scenario) == allowed_scenarios.end())
    throw SpecError("scenario '" + spec.scenario + "' is not available for this subcommand");
  return spec;
}

int run_spec(const ExperimentSpec& spec) {
  const auto res = itkrm::cli::run_experiment(spec);
  std::cout << "wrote " << res.directory.string() << " (" << res.runs.size() << " runs)\n";
  if (!res.summary.empty()) std::cout << res.summary.dump(2) << "\n";
  return 0;
}

struct EvalArgs {
  std::string dict;
  std::string reference;
  std::string image;
  double sigma = 0.0;
  int smax = 12;
  bool flat = true;
  std::uint64_t seed = 1;
  std::string output;
};

int run_eval(const EvalArgs& a) {
  using namespace itkrm;
  const Dictionary dico = load_dictionary(a.dict);
  std::ostringstream os;
  os << std::setprecision(10);
  if (!a.reference.empty()) {
    const Dictionary ref = load_dictionary(a.reference);
    if (ref.dim() != dico.dim()) throw SpecError("--reference dimension differs from --dict");
    const auto errors = sorted_atom_errors(ref, dico);
    std::cout << "distance " << asym_distance(ref, dico).value << "\nmean_atom_distance " << mean_atom_distance(ref, dico)
              << "\nrecovery_rate " << recovery_rate(ref, dico) << "\n";
    if (ref.size() == dico.size() && ref.size() >= 2) {
      const DiagnosticsReport rep = theorem_conditions_report(ref, dico);
      std::cout << "coherence " << rep.coherence << "\noperator_norm_sq " << rep.operator_norm_sq << "\ncross_coherence "
                << rep.cross_coherence << "\nalpha_min " << rep.alpha_min << "\nalpha_max " << rep.alpha_max
                << "\ndiagonally_dominant " << rep.diagonally_dominant << "\n";
    }
    os << "rank,distance\n";
    for (std::size_t i = 0; i < errors.size(); ++i) os << i + 1 << ',' << errors[i] << '\n';
  }
  if (!a.image.empty()) {
    const Image clean = load_image_gray(a.image);
    PatchConfig pc;
    pc.patch_side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(dico.dim()))));
    if (pc.patch_side * pc.patch_side != dico.dim()) throw SpecError("dictionary dimension is not a square patch size");
    const SignalBatch patches = extract_patches(clean, pc);
    std::optional<SignalBatch> noisy;
    if (a.sigma > 0.0) {
      CounterRng rng(a.seed, streams::kImageNoise);
      noisy = extract_patches(add_image_noise(clean, a.sigma, rng), pc);
    }
    const int extra = a.flat ? 1 : 0;
    const int smax = std::min<int>(a.smax, static_cast<int>(std::min(dico.dim(), dico.size() + extra)));
    std::vector<int> range;
    for (int s = 1; s <= smax; ++s) range.push_back(s);
    ApproxOptions opts;
    opts.augment_flat = a.flat;
    const ApproxReport rep = noisy ? approximation_power(dico, *noisy, range, opts, &patches)
                                   : approximation_power(dico, patches, range, opts);
    write_approx_csv(os, rep);
  }
  if (a.reference.empty() && a.image.empty()) throw SpecError("eval needs --reference and/or --image");
  if (a.output.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream out(a.output, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + a.output);
    out << os.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dictionary learning with iterative thresholding and K residual means"};
  app.require_subcommand(1);

  SpecFlags learn_flags, probe_flags;
  CLI::App* learn = app.add_subcommand("learn", "plain_recovery, replacement_compare, adaptive_synthetic, adaptive_image");
  add_spec_flags(learn, learn_flags);
  CLI::App* probe = app.add_subcommand("probe", "fixedpoint_probe, contraction_sweep");
  add_spec_flags(probe, probe_flags);

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "sorted atom errors and OMP approximation power of a dictionary");
  eval->add_option("--dict", eval_args.dict, "dictionary container")->required();
  eval->add_option("--reference", eval_args.reference, "generating dictionary container");
  eval->add_option("--image", eval_args.image, "PGM or raw grayscale image");
  eval->add_option("--sigma", eval_args.sigma, "noise std on the 0-255 scale for the training patches");
  eval->add_option("--smax", eval_args.smax, "largest OMP sparsity");
  eval->add_option("--flat", eval_args.flat, "prepend the constant atom");
  eval->add_option("--seed", eval_args.seed, "noise seed");
  eval->add_option("--output", eval_args.output, "CSV output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitSpec;
  }

  try {
    if (*learn) {
      return run_spec(resolve(learn_flags, {"plain_recovery", "replacement_compare", "adaptive_synthetic", "adaptive_image"}));
    }
    if (*probe) {
      return run_spec(resolve(probe_flags, {"fixedpoint_probe", "contraction_sweep"}));
    }
    return run_eval(eval_args);
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSpec;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
