#pragma once

// The subcommands of the `coopnets` tool as plain functions returning the
// process exit code, so they can be driven from tests.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "coopnets/training.hpp"

namespace coopnets {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int eval_failure = 1;
inline constexpr int usage = 2;
inline constexpr int divergence = 3;
}  // namespace exit_code

struct TrainArgs {
  std::string config;  // file path or bundled preset name
  std::optional<TrainMode> mode;
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> iterations;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> data;  // replaces dataset.path
  std::vector<std::string> overrides;         // section.key=value
  std::size_t threads = 1;
  bool quiet = false;
};

/// Writes metrics.csv, periodic montages (or point CSVs for non-image
/// signals) and checkpoints under the output directory. The final state is
/// always saved as checkpoint.ckpt.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct SampleArgs {
  std::filesystem::path checkpoint;
  std::size_t count = 16;
  std::filesystem::path out = "samples.png";
  std::size_t revise_steps = 0;
  std::optional<double> step_size;  // default: the checkpoint's descriptor step size
  double temperature = 1.0;
  bool noise = false;  // add N(0, sigma^2) to the drafts
  std::uint64_t seed = 0;
  std::size_t cols = 8;
  std::size_t threads = 1;
};

/// Writes <stem>_draft<ext> and <stem>_revised<ext>. Signals that are not 1-
/// or 3-channel images are written as CSV rows instead. Prints the mean
/// descriptor energy of both batches when a descriptor is available.
int cmd_sample(const SampleArgs& args, std::ostream& out, std::ostream& err);

struct InpaintArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path images;
  std::optional<std::size_t> mask_size;           // random square, side in pixels
  std::optional<std::filesystem::path> mask_dir;  // or mask images: nonzero = observed
  std::filesystem::path out_dir = "inpaint";
  std::size_t steps = 1000;
  double step_size = 0.02;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Per image: places the mask, runs masked inference from N(0, I), writes the
/// completion g(X) and records the mean absolute error on the occluded pixels
/// (intensity units, [0, 1]) next to the mean-fill baseline in errors.csv.
int cmd_inpaint(const InpaintArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string suite;  // oracles | trends | all
  std::filesystem::path out = "report.csv";
  std::size_t threads = 1;
};

/// Exit 0 when every check passes, 1 otherwise.
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

}  // namespace coopnets
