#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kpm/cli_io.hpp"
#include "kpm/synth.hpp"

namespace kpm {

struct SynthDatasetOptions {
  int pairs = 10;
  std::uint64_t seed = 0;
  SynthConfig scene;
  bool homography = false;
  double corner_shift_px = 60.0;      // homography mode
  double prior_corner_noise_px = 2.0;  // homography mode
};

// Writes feature files and manifest.jsonl into `dir` (created if needed) and
// returns the manifest path.
fs::path write_synth_dataset(const fs::path& dir, const SynthDatasetOptions& options);

// kpmatch entry point: subcommands match, train, eval, synth, check-grad.
// Returns the process exit code (0 ok, 1 usage, 2 parse, 3 numeric).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kpm
