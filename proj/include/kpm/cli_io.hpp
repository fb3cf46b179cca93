#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpm/attention_gnn.hpp"
#include "kpm/features.hpp"
#include "kpm/imu_prior.hpp"
#include "kpm/train.hpp"

namespace kpm {

namespace fs = std::filesystem;

// Feature file: little-endian "KPMF", u32 version, u32 N, u32 D, then
// N x (f32 x, f32 y, f32 depth or NaN), then N x D f32 descriptors.
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

// Values are stored as f32; anything not representable is rounded.
void save_features(const fs::path& path, const FeatureSet& features);
// ParseError with a byte offset on malformed input (including N = 0);
// DimMismatch if expected_dim >= 0 and differs from the file.
FeatureSet load_features(const fs::path& path, int expected_dim = -1);

// IMU text: t, wx, wy, wz, ax, ay, az per line; '#' starts a comment.
void save_imu(const fs::path& path, const std::vector<ImuSample>& samples);
std::vector<ImuSample> load_imu(const fs::path& path);
std::vector<ImuSample> parse_imu(std::istream& in);

// Weights file: "KPMW", u32 version, u32 tensor count, then per tensor:
// u32 name length, name bytes, u32 rank, u32 dims, f64 payload row-major.
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

void save_weights(const fs::path& path, const ModelParams& params);
// Loads into tensors already shaped by `params.config`. The whole file is
// validated before anything is assigned. Throws ParseError, VersionMismatch,
// UnknownTensorName, ShapeMismatch (also for missing tensors).
void load_weights(const fs::path& path, ModelParams& params);

// Flat dotted key=value text; '#' comments; blank lines ignored.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const fs::path& path);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;          // its model field is overwritten by `model`
  double prior_sigma = 0.1;   // Gaussian width of the spatial prior
  std::uint64_t seed = 0;

  // σ > 0, mg > th > 0, L >= 1, threshold in [0, 1); InvalidConfig otherwise.
  void validate() const;
  MatchOptions match_options() const;
};

// Applies known keys over the defaults. Unknown keys or malformed values
// throw InvalidConfig.
RunConfig run_config_from(const KeyValues& values, RunConfig base = {});
KeyValues to_key_values(const RunConfig& config);

struct ImuPriorSpec {
  std::string file;
  double t_a = 0.0;
  double t_b = 0.0;
  Vec3 velocity = Vec3::Zero();
  Vec3 gravity = Vec3(0.0, 0.0, 9.81);
};

// One image pair of a dataset manifest (one JSON object per line). Paths are
// relative to the manifest directory.
struct PairRecord {
  std::string id_a;
  std::string id_b;
  std::string features_a;
  std::string features_b;
  CameraIntrinsics K_a;
  CameraIntrinsics K_b;
  double t_a = 0.0;
  double t_b = 0.0;
  std::optional<Pose> gt_pose;
  std::optional<Homography> gt_homography;
  std::optional<Pose> prior_pose;
  std::optional<Homography> prior_homography;
  std::optional<ImuPriorSpec> imu;

  // Exactly one ground-truth mode and at most one prior; InvalidConfig.
  void validate() const;
};

std::string to_json_line(const PairRecord& record);
PairRecord pair_record_from_json(const std::string& line);
void save_manifest(const fs::path& path, const std::vector<PairRecord>& records);
std::vector<PairRecord> load_manifest(const fs::path& path);

struct LoadedPair {
  PairData data;
  MotionPrior prior;  // gt geometry if the record has no prior
  MotionPrior truth;
};

LoadedPair load_pair(const PairRecord& record, const fs::path& base_dir);
// Pixel reprojection distances under the true geometry.
Matrix truth_distances(const LoadedPair& pair);

// One "a b confidence" line per match, %.17g.
void write_matches(std::ostream& out, const MatchSet& matches);
MatchSet read_matches(std::istream& in, Eigen::Index n_a, Eigen::Index n_b);

}  // namespace kpm
