#include "experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace itkrm;
using namespace itkrm::cli;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("itkrm_exp_" + std::to_string(::getpid()) + "_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(ParseSpec, EmptyArgumentsGiveDefaults) {
  const ExperimentSpec s = parse_spec({});
  EXPECT_EQ(s.scenario, "replacement_compare");
  EXPECT_EQ(s.d, 128);
  EXPECT_EQ(s.K, 192);
  EXPECT_EQ(s.N, 120000);
  EXPECT_DOUBLE_EQ(s.snr, 16.0);
  EXPECT_DOUBLE_EQ(s.mu_max, 0.7);
  EXPECT_EQ(resolved_L(s), 5);
  EXPECT_EQ(resolved_m(s), 5);
  EXPECT_DOUBLE_EQ(resolved_M(s), std::round(128 * std::log(128.0)));
  EXPECT_EQ(resolved_K_e(s), 192);
}

TEST(ParseSpec, FlagsOverrideConfigOverrideDefaults) {
  const std::string cfg =
      "# setup of the Dirac-Hadamard experiment\n"
      "[model]\n"
      "d = 32\n"
      "model.K = 48\n"
      "dict = \"dirac-hadamard\"\n"
      "[run]\n"
      "iterations = 25   # inline comment\n"
      "S = 2\n"
      "coeffs = two-sparse\n"
      "S_e = 2\n";
  const ExperimentSpec s = parse_spec({{"iterations", "7"}}, cfg);
  EXPECT_EQ(s.d, 32);
  EXPECT_EQ(s.K, 48);
  EXPECT_EQ(s.dict, "dirac-hadamard");
  EXPECT_EQ(s.iterations, 7);
  EXPECT_EQ(s.S, "2");
}

TEST(ParseSpec, ErrorsNameTheField) {
  auto message = [](const std::vector<std::pair<std::string, std::string>>& flags, const std::string& cfg = {}) {
    try {
      parse_spec(flags, cfg);
    } catch (const SpecError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message({{"bogus", "1"}}).find("bogus"), std::string::npos);
  EXPECT_NE(message({{"d", "abc"}}).find("'d'"), std::string::npos);
  EXPECT_NE(message({{"mu_max", "1.5"}}).find("mu_max"), std::string::npos);
  EXPECT_NE(message({{"scenario", "nope"}}).find("scenario"), std::string::npos);
  EXPECT_NE(message({}, "unknown_key = 3\n").find("unknown_key"), std::string::npos);
  EXPECT_NE(message({}, "just text\n").find("line 1"), std::string::npos);
  EXPECT_NE(message({{"dict", "dirac-hadamard"}, {"d", "24"}}).find("dirac-hadamard"), std::string::npos);
  EXPECT_NE(message({{"S", "4,6"}, {"S_weights", "1"}}).find("S_weights"), std::string::npos);
  EXPECT_NE(message({{"scenario", "adaptive_image"}}).find("image"), std::string::npos);
}

TEST(ParseSpec, ScaleShrinksProportionally) {
  const ExperimentSpec s = parse_spec({{"scale", "0.5"}});
  EXPECT_EQ(s.d, 64);
  EXPECT_EQ(s.K, 96);
  EXPECT_EQ(s.N, 60000);
  const ExperimentSpec h = parse_spec({{"scale", "0.3"}, {"dict", "dirac-hadamard"}, {"K", "192"}});
  EXPECT_EQ(h.d, 32);  // 38 rounded to a power of two
  EXPECT_EQ(h.K, 58);
}

TEST(SpecResolvers, MixtureAndSignalModel) {
  const ExperimentSpec s = parse_spec({{"d", "64"}, {"K", "96"}, {"S", "4,6,8"}, {"S_weights", "1,2,1"}});
  const CoefficientModel m = coefficient_model(s);
  const auto* mix = std::get_if<MixtureCoeffs>(&m);
  ASSERT_NE(mix, nullptr);
  ASSERT_EQ(mix->components.size(), 3u);
  EXPECT_DOUBLE_EQ(mix->components[1].first, 0.5);
  const SignalModel sm = signal_model(s, generating_dictionary(s, 1), 1);
  EXPECT_DOUBLE_EQ(sm.noise_std, std::sqrt(1.0 / (16.0 * 64.0)));
  EXPECT_DOUBLE_EQ(sm.outlier_std, 1.0 / 64.0);
  EXPECT_EQ(sm.dictionary.size(), 96);
  EXPECT_EQ(trial_seed(s, 3), 4u);
  const AdaptiveConfig ac = adaptive_config(s, 9);
  EXPECT_EQ(ac.memory, 4);
  EXPECT_DOUBLE_EQ(ac.min_observations, 266.0);
  EXPECT_EQ(ac.seed, 9u);
}

TEST(SpecJson, RoundTripsThroughFlags) {
  const ExperimentSpec s = parse_spec({{"d", "32"}, {"K", "40"}, {"eps", "0.2"}, {"seed", "5"}});
  const nlohmann::json j = spec_to_json(s);
  std::vector<std::pair<std::string, std::string>> flags;
  for (const auto& [k, v] : j.items()) flags.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
  const ExperimentSpec back = parse_spec(flags);
  EXPECT_EQ(spec_to_json(back), j);
}

TEST(RunExperiment, ZeroTrialsWritesManifestOnly) {
  const auto dir = scratch_dir("zero");
  const ExperimentSpec s = parse_spec({{"trials", "0"}, {"output_dir", dir.string()}});
  const ExperimentResult r = run_experiment(s);
  EXPECT_TRUE(r.runs.empty());
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "aggregate.csv"));
  const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(j["spec"]["d"], 128);
  std::filesystem::remove_all(dir);
}

TEST(RunExperiment, SameSpecGivesIdenticalAggregate) {
  const auto dir1 = scratch_dir("det1"), dir2 = scratch_dir("det2");
  std::vector<std::pair<std::string, std::string>> flags{
      {"scenario", "replacement_compare"}, {"d", "16"}, {"K", "24"}, {"N", "1500"}, {"S", "2"}, {"S_e", "2"},
      {"iterations", "4"},                 {"trials", "2"}};
  auto f1 = flags, f2 = flags;
  f1.emplace_back("output_dir", dir1.string());
  f2.emplace_back("output_dir", dir2.string());
  const ExperimentResult r = run_experiment(parse_spec(f1));
  run_experiment(parse_spec(f2));
  EXPECT_EQ(r.runs.size(), 6u);  // three strategies, two trials
  const std::string a = slurp(dir1 / "aggregate.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir2 / "aggregate.csv"));
  const auto j = nlohmann::json::parse(slurp(dir1 / "manifest.json"));
  EXPECT_TRUE(j.contains("summary"));
  EXPECT_TRUE(j.contains("derived"));
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST(RunExperiment, ContractionSweepWritesTable) {
  const auto dir = scratch_dir("contr");
  const ExperimentSpec s = parse_spec({{"scenario", "contraction_sweep"}, {"d", "16"}, {"K", "24"}, {"S", "2"},
                                       {"S_e", "2"}, {"N", "3000"}, {"trials", "2"}, {"output_dir", dir.string()}});
  run_experiment(s);
  const std::string t = slurp(dir / "contraction.csv");
  EXPECT_NE(t.find("eps"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(RunExperiment, UnwritableDirectoryFails) {
  const ExperimentSpec s = parse_spec({{"trials", "0"}, {"output_dir", "/proc/itkrm_cannot_exist"}});
  EXPECT_THROW(run_experiment(s), std::runtime_error);
}
