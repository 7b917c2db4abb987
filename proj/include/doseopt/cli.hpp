#pragma once

// Command-line front end. Each command reads one JSON run configuration,
// writes its artifacts into the output directory, and leaves a snapshot of the
// fully resolved configuration next to them.

#include "doseopt/eval.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace doseopt {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An upstream stage's artifact is missing.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitConfig = 2, kExitMissing = 3, kExitNumerical = 4 };

enum class Verbosity { quiet, info, debug };

// Top-level keys: seed, out, verbosity, sim, dcnet, gps, policy, eval. Every
// section is optional and overlays the defaults; unknown keys are rejected.
// Dimensions of the model sections follow sim.d and sim.p.
struct RunConfig {
  unsigned long long seed = 0;
  std::filesystem::path out = "doseopt_out";
  Verbosity verbosity = Verbosity::info;
  SimConfig sim;
  DcnetConfig dcnet;
  FlowConfig gps;
  PolicyTrainConfig policy;
  MuKind policy_outcome_model = MuKind::dcnet;
  EvalConfig eval;
  bool eval_seeds_follow_seed = true;  // eval.seeds absent from the file
  int surface_resolution = 101;
  std::size_t surface_sample = 0;  // test-split row used for the surface grid

  RunConfig();
  nlohmann::json to_json() const;
  // Throws ConfigError naming the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

inline constexpr const char* kOutDirEnv = "DOSEOPT_OUT";

// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* kDataset = "data.csv";
inline constexpr const char* kOracle = "oracle.json";
inline constexpr const char* kGps = "gps.json";
inline constexpr const char* kGpsLog = "gps_log.csv";
inline constexpr const char* kResolvedConfig = "resolved_config.json";
inline constexpr const char* kEvaluation = "evaluation.json";
inline constexpr const char* kSurface = "surface.csv";
std::string mu(MuKind kind);
std::string mu_log(MuKind kind);
std::string policy(MuKind kind, PolicyMode mode);
std::string policy_log(MuKind kind, PolicyMode mode);
}  // namespace artifact

// argv-style entry point (args[0] is the program name); returns an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace doseopt
