#include "kpm/cli_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "kpm/error.hpp"

namespace kpm {

static_assert(std::endian::native == std::endian::little, "codecs assume a little-endian host");

namespace {

using json = nlohmann::json;

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.append(raw, sizeof(T));
  }
  void put_bytes(const std::string& s) { bytes_.append(s); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char* magic) {
    if (get_bytes(4, "magic") != magic) fail("bad magic, expected " + std::string(magic));
  }

  void expect_end() {
    if (pos_ != bytes_.size()) fail(std::to_string(bytes_.size() - pos_) + " trailing bytes");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ParseError, what_ + " at offset " + std::to_string(pos_) + ": " + msg);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) fail(std::string("truncated while reading ") + field);
  }

  const std::vector<char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return trim(hash == std::string::npos ? line : line.substr(0, hash));
}

double parse_double(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || trim(text.substr(used)) != "") {
    throw Error(ErrorCode::ParseError, where + ": not a number: '" + text + "'");
  }
  return v;
}

}  // namespace

void save_features(const fs::path& path, const FeatureSet& features) {
  features.validate();
  Writer w;
  w.put_bytes("KPMF");
  w.put<std::uint32_t>(kFeatureFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.dim()));
  const bool depth = features.depths.size() == features.size();
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    w.put<float>(static_cast<float>(features.keypoints(i, 0)));
    w.put<float>(static_cast<float>(features.keypoints(i, 1)));
    w.put<float>(depth ? static_cast<float>(features.depths(i))
                       : std::numeric_limits<float>::quiet_NaN());
  }
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    for (Eigen::Index k = 0; k < features.dim(); ++k) {
      w.put<float>(static_cast<float>(features.descriptors(i, k)));
    }
  }
  write_file(path, w.bytes());
}

FeatureSet load_features(const fs::path& path, int expected_dim) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  r.expect_magic("KPMF");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                path.string() + ": feature format version " + std::to_string(version));
  }
  const auto n = r.get<std::uint32_t>("N");
  const auto d = r.get<std::uint32_t>("D");
  if (n == 0) r.fail("N must be >= 1");
  if (d == 0) r.fail("D must be >= 1");
  if (expected_dim >= 0 && d != static_cast<std::uint32_t>(expected_dim)) {
    throw Error(ErrorCode::DimMismatch, path.string() + ": descriptor dim " + std::to_string(d) +
                                            ", expected " + std::to_string(expected_dim));
  }
  const std::uint64_t payload = static_cast<std::uint64_t>(n) * (3 + static_cast<std::uint64_t>(d)) * 4;
  if (payload != r.remaining()) {
    r.fail("payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(payload));
  }

  FeatureSet fs;
  fs.keypoints.resize(n, 2);
  fs.descriptors.resize(n, d);
  Vector depths(n);
  bool any_depth = false;
  for (std::uint32_t i = 0; i < n; ++i) {
    fs.keypoints(i, 0) = r.get<float>("x");
    fs.keypoints(i, 1) = r.get<float>("y");
    depths(i) = r.get<float>("depth");
    any_depth = any_depth || !std::isnan(depths(i));
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < d; ++k) fs.descriptors(i, k) = r.get<float>("descriptor");
  }
  r.expect_end();
  if (any_depth) fs.depths = std::move(depths);
  if (!fs.keypoints.allFinite()) throw Error(ErrorCode::ParseError, path.string() + ": non-finite keypoint");
  if (!fs.descriptors.allFinite()) {
    throw Error(ErrorCode::ParseError, path.string() + ": non-finite descriptor");
  }
  return fs;
}

void save_imu(const fs::path& path, const std::vector<ImuSample>& samples) {
  std::ostringstream out;
  out << "# t,wx,wy,wz,ax,ay,az\n";
  char buf[64];
  for (const auto& s : samples) {
    const double values[7] = {s.timestamp, s.omega.x(), s.omega.y(), s.omega.z(),
                              s.accel.x(),  s.accel.y(), s.accel.z()};
    for (int k = 0; k < 7; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[k]);
      out << (k ? "," : "") << buf;
    }
    out << '\n';
  }
  write_file(path, out.str());
}

std::vector<ImuSample> parse_imu(std::istream& in) {
  std::vector<ImuSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = strip_comment(line);
    if (body.empty()) continue;
    std::vector<double> values;
    std::stringstream ss(body);
    std::string cell;
    const std::string where = "imu line " + std::to_string(line_no);
    while (std::getline(ss, cell, ',')) values.push_back(parse_double(trim(cell), where));
    if (values.size() != 7) {
      throw Error(ErrorCode::ParseError,
                  where + ": expected 7 columns, got " + std::to_string(values.size()));
    }
    ImuSample s;
    s.timestamp = values[0];
    s.omega = Vec3(values[1], values[2], values[3]);
    s.accel = Vec3(values[4], values[5], values[6]);
    if (!samples.empty() && !(s.timestamp > samples.back().timestamp)) {
      throw Error(ErrorCode::NonMonotonicTimestamps, where + ": timestamp does not increase");
    }
    samples.push_back(s);
  }
  if (samples.empty()) throw Error(ErrorCode::EmptyMeasurements, "no IMU samples");
  return samples;
}

std::vector<ImuSample> load_imu(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_imu(in);
}

void save_weights(const fs::path& path, const ModelParams& params) {
  Writer w;
  w.put_bytes("KPMW");
  w.put<std::uint32_t>(kWeightsFormatVersion);
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Matrix&) { ++count; });
  w.put<std::uint32_t>(count);
  params.for_each([&](const std::string& name, const Matrix& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint32_t>(2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.put<double>(m(i, j));
    }
  });
  write_file(path, w.bytes());
}

void load_weights(const fs::path& path, ModelParams& params) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  r.expect_magic("KPMW");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightsFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                path.string() + ": weights format version " + std::to_string(version));
  }
  std::map<std::string, Matrix*> targets;
  params.for_each([&](const std::string& name, Matrix& m) { targets[name] = &m; });

  const auto count = r.get<std::uint32_t>("tensor count");
  std::map<std::string, Matrix> loaded;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = r.get<std::uint32_t>("name length");
    const std::string name = r.get_bytes(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 2) r.fail("tensor " + name + " has rank " + std::to_string(rank));
    std::uint32_t dims[2] = {1, 1};
    for (std::uint32_t k = 0; k < rank; ++k) dims[k] = r.get<std::uint32_t>("dim");
    // rank 1 is a row vector
    const Eigen::Index rows = rank == 1 ? 1 : dims[0];
    const Eigen::Index cols = rank == 1 ? dims[0] : dims[1];
    if (static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8 > r.remaining()) {
      r.fail("truncated payload of " + name);
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.get<double>("payload");
    }
    if (!loaded.emplace(name, std::move(m)).second) r.fail("duplicate tensor " + name);
  }
  r.expect_end();

  for (const auto& [name, m] : loaded) {
    const auto it = targets.find(name);
    if (it == targets.end()) throw Error(ErrorCode::UnknownTensorName, name);
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols()) {
      throw Error(ErrorCode::ShapeMismatch,
                  name + ": file has " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                      ", model expects " + std::to_string(it->second->rows()) + "x" +
                      std::to_string(it->second->cols()));
    }
  }
  for (const auto& [name, target] : targets) {
    if (!loaded.count(name)) throw Error(ErrorCode::ShapeMismatch, "missing tensor " + name);
  }
  for (auto& [name, m] : loaded) *targets[name] = std::move(m);
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = strip_comment(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, "config line " + std::to_string(line_no) + ": missing '='");
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::ParseError, "config line " + std::to_string(line_no) + ": empty key");
    }
    out[key] = trim(body.substr(eq + 1));
  }
  return out;
}

KeyValues load_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_key_values(in);
}

void RunConfig::validate() const {
  model.validate();
  const auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (!(model.sigma_init > 0.0)) bad("model.sigma_init must be > 0");
  if (!(prior_sigma > 0.0)) bad("prior.sigma must be > 0");
  if (!(train.loss.threshold_px > 0.0)) bad("loss.th must be > 0");
  if (!(train.loss.margin_px > train.loss.threshold_px)) bad("loss.mg must exceed loss.th");
  if (model.layers < 1) bad("model.layers must be >= 1");
  if (!(train.confidence_threshold >= 0.0 && train.confidence_threshold < 1.0)) {
    bad("match.threshold must be in [0, 1)");
  }
  if (train.sinkhorn.iterations < 1) bad("sinkhorn.iterations must be >= 1");
  if (!(train.sinkhorn.temperature > 0.0)) bad("sinkhorn.temperature must be > 0");
  if (!(train.adam.learning_rate > 0.0)) bad("train.lr must be > 0");
  if (train.batch_size < 1) bad("train.batch_size must be >= 1");
  if (train.max_epochs < 1) bad("train.max_epochs must be >= 1");
  if (train.patience < 0) bad("train.patience must be >= 0");
  if (!(train.validation_fraction >= 0.0 && train.validation_fraction < 1.0)) {
    bad("train.validation_fraction must be in [0, 1)");
  }
}

MatchOptions RunConfig::match_options() const {
  MatchOptions o;
  o.prior_sigma = prior_sigma;
  o.sinkhorn = train.sinkhorn;
  o.confidence_threshold = train.confidence_threshold;
  return o;
}

namespace {

double as_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v, key);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidConfig, key + ": not a number: '" + v + "'");
  }
}

long long as_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw Error(ErrorCode::InvalidConfig, key + ": not an integer: '" + v + "'");
  }
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::InvalidConfig, key + ": not a boolean: '" + v + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig run_config_from(const KeyValues& values, RunConfig base) {
  RunConfig c = std::move(base);
  for (const auto& [key, v] : values) {
    if (key == "model.variant") c.model.variant = attention_variant_from_string(v);
    else if (key == "model.layers") c.model.layers = static_cast<int>(as_int(key, v));
    else if (key == "model.descriptor_dim") c.model.descriptor_dim = static_cast<int>(as_int(key, v));
    else if (key == "model.position_encoder") c.model.position_encoder = as_bool(key, v);
    else if (key == "model.sigma_init") c.model.sigma_init = as_double(key, v);
    else if (key == "model.dustbin_init") c.model.dustbin_init = as_double(key, v);
    else if (key == "prior.sigma") c.prior_sigma = as_double(key, v);
    else if (key == "loss.kind") c.train.loss.kind = loss_kind_from_string(v);
    else if (key == "loss.th") c.train.loss.threshold_px = as_double(key, v);
    else if (key == "loss.mg") c.train.loss.margin_px = as_double(key, v);
    else if (key == "sinkhorn.iterations") c.train.sinkhorn.iterations = static_cast<int>(as_int(key, v));
    else if (key == "sinkhorn.temperature") c.train.sinkhorn.temperature = as_double(key, v);
    else if (key == "match.threshold") c.train.confidence_threshold = as_double(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(as_int(key, v));
    else if (key == "train.lr") c.train.adam.learning_rate = as_double(key, v);
    else if (key == "train.beta1") c.train.adam.beta1 = as_double(key, v);
    else if (key == "train.beta2") c.train.adam.beta2 = as_double(key, v);
    else if (key == "train.epsilon") c.train.adam.epsilon = as_double(key, v);
    else if (key == "train.batch_size") c.train.batch_size = static_cast<int>(as_int(key, v));
    else if (key == "train.max_epochs") c.train.max_epochs = static_cast<int>(as_int(key, v));
    else if (key == "train.patience") c.train.patience = static_cast<int>(as_int(key, v));
    else if (key == "train.validation_fraction") c.train.validation_fraction = as_double(key, v);
    else throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  }
  c.train.model = c.model;
  c.validate();
  return c;
}

KeyValues to_key_values(const RunConfig& c) {
  return {
      {"model.variant", to_string(c.model.variant)},
      {"model.layers", std::to_string(c.model.layers)},
      {"model.descriptor_dim", std::to_string(c.model.descriptor_dim)},
      {"model.position_encoder", c.model.position_encoder ? "true" : "false"},
      {"model.sigma_init", fmt(c.model.sigma_init)},
      {"model.dustbin_init", fmt(c.model.dustbin_init)},
      {"prior.sigma", fmt(c.prior_sigma)},
      {"loss.kind", to_string(c.train.loss.kind)},
      {"loss.th", fmt(c.train.loss.threshold_px)},
      {"loss.mg", fmt(c.train.loss.margin_px)},
      {"sinkhorn.iterations", std::to_string(c.train.sinkhorn.iterations)},
      {"sinkhorn.temperature", fmt(c.train.sinkhorn.temperature)},
      {"match.threshold", fmt(c.train.confidence_threshold)},
      {"seed", std::to_string(c.seed)},
      {"train.lr", fmt(c.train.adam.learning_rate)},
      {"train.beta1", fmt(c.train.adam.beta1)},
      {"train.beta2", fmt(c.train.adam.beta2)},
      {"train.epsilon", fmt(c.train.adam.epsilon)},
      {"train.batch_size", std::to_string(c.train.batch_size)},
      {"train.max_epochs", std::to_string(c.train.max_epochs)},
      {"train.patience", std::to_string(c.train.patience)},
      {"train.validation_fraction", fmt(c.train.validation_fraction)},
  };
}

void PairRecord::validate() const {
  if (gt_pose.has_value() == gt_homography.has_value()) {
    throw Error(ErrorCode::InvalidConfig,
                "pair " + id_a + "/" + id_b + ": exactly one of gt_pose, gt_homography required");
  }
  const int priors = int(prior_pose.has_value()) + int(prior_homography.has_value()) + int(imu.has_value());
  if (priors > 1) {
    throw Error(ErrorCode::InvalidConfig, "pair " + id_a + "/" + id_b + ": more than one prior");
  }
  if (features_a.empty() || features_b.empty()) {
    throw Error(ErrorCode::InvalidConfig, "pair " + id_a + "/" + id_b + ": missing feature path");
  }
}

namespace {

json intrinsics_json(const CameraIntrinsics& K) {
  return json::array({K.fx, K.fy, K.cx, K.cy, K.width, K.height});
}

CameraIntrinsics intrinsics_from(const json& j) {
  if (!j.is_array() || j.size() != 6) {
    throw Error(ErrorCode::ParseError, "intrinsics must be [fx, fy, cx, cy, width, height]");
  }
  CameraIntrinsics K{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                     j[3].get<double>(), j[4].get<double>(), j[5].get<double>()};
  K.validate();
  return K;
}

json pose_json(const Pose& T) {
  json R = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) R.push_back(T.rotation()(i, k));
  }
  return {{"R", R}, {"t", json::array({T.translation().x(), T.translation().y(), T.translation().z()})}};
}

Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::ParseError, std::string(what) + " must have 3 entries");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Pose pose_from(const json& j) {
  const json& R = j.at("R");
  if (!R.is_array() || R.size() != 9) throw Error(ErrorCode::ParseError, "pose R must have 9 entries");
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = R[static_cast<std::size_t>(3 * i + k)].get<double>();
  }
  return Pose(m, vec3_from(j.at("t"), "pose t"));
}

json homography_json(const Homography& H) {
  json a = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) a.push_back(H.matrix()(i, k));
  }
  return a;
}

Homography homography_from(const json& j) {
  if (!j.is_array() || j.size() != 9) throw Error(ErrorCode::ParseError, "homography must have 9 entries");
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = j[static_cast<std::size_t>(3 * i + k)].get<double>();
  }
  return Homography(m);
}

}  // namespace

std::string to_json_line(const PairRecord& r) {
  json j;
  j["id_a"] = r.id_a;
  j["id_b"] = r.id_b;
  j["features_a"] = r.features_a;
  j["features_b"] = r.features_b;
  j["K_a"] = intrinsics_json(r.K_a);
  j["K_b"] = intrinsics_json(r.K_b);
  j["t_a"] = r.t_a;
  j["t_b"] = r.t_b;
  if (r.gt_pose) j["gt_pose"] = pose_json(*r.gt_pose);
  if (r.gt_homography) j["gt_homography"] = homography_json(*r.gt_homography);
  if (r.prior_pose) j["prior_pose"] = pose_json(*r.prior_pose);
  if (r.prior_homography) j["prior_homography"] = homography_json(*r.prior_homography);
  if (r.imu) {
    j["imu"] = {{"file", r.imu->file},
                {"t_a", r.imu->t_a},
                {"t_b", r.imu->t_b},
                {"velocity", json::array({r.imu->velocity.x(), r.imu->velocity.y(), r.imu->velocity.z()})},
                {"gravity", json::array({r.imu->gravity.x(), r.imu->gravity.y(), r.imu->gravity.z()})}};
  }
  return j.dump();
}

PairRecord pair_record_from_json(const std::string& line) {
  PairRecord r;
  try {
    const json j = json::parse(line);
    r.id_a = j.at("id_a").get<std::string>();
    r.id_b = j.at("id_b").get<std::string>();
    r.features_a = j.at("features_a").get<std::string>();
    r.features_b = j.at("features_b").get<std::string>();
    r.K_a = intrinsics_from(j.at("K_a"));
    r.K_b = intrinsics_from(j.at("K_b"));
    r.t_a = j.value("t_a", 0.0);
    r.t_b = j.value("t_b", 0.0);
    if (j.contains("gt_pose")) r.gt_pose = pose_from(j["gt_pose"]);
    if (j.contains("gt_homography")) r.gt_homography = homography_from(j["gt_homography"]);
    if (j.contains("prior_pose")) r.prior_pose = pose_from(j["prior_pose"]);
    if (j.contains("prior_homography")) r.prior_homography = homography_from(j["prior_homography"]);
    if (j.contains("imu")) {
      const json& m = j["imu"];
      ImuPriorSpec spec;
      spec.file = m.at("file").get<std::string>();
      spec.t_a = m.at("t_a").get<double>();
      spec.t_b = m.at("t_b").get<double>();
      if (m.contains("velocity")) spec.velocity = vec3_from(m["velocity"], "imu velocity");
      if (m.contains("gravity")) spec.gravity = vec3_from(m["gravity"], "imu gravity");
      r.imu = spec;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest record: ") + e.what());
  }
  r.validate();
  return r;
}

void save_manifest(const fs::path& path, const std::vector<PairRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  write_file(path, out);
}

std::vector<PairRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<PairRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(pair_record_from_json(line));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

LoadedPair load_pair(const PairRecord& record, const fs::path& base_dir) {
  record.validate();
  LoadedPair out{PairData{}, Pose(), Pose()};
  out.data.a = load_features(base_dir / record.features_a);
  out.data.b = load_features(base_dir / record.features_b, static_cast<int>(out.data.a.dim()));
  out.data.K_a = record.K_a;
  out.data.K_b = record.K_b;
  if (record.gt_pose) out.truth = *record.gt_pose;
  else out.truth = *record.gt_homography;

  if (record.prior_pose) {
    out.prior = *record.prior_pose;
  } else if (record.prior_homography) {
    out.prior = *record.prior_homography;
  } else if (record.imu) {
    const auto samples = load_imu(base_dir / record.imu->file);
    out.prior = integrate_imu(samples, record.imu->velocity, record.imu->gravity, record.imu->t_a,
                              record.imu->t_b);
  } else {
    out.prior = out.truth;
  }
  return out;
}

Matrix truth_distances(const LoadedPair& pair) {
  if (const auto* T = std::get_if<Pose>(&pair.truth)) {
    return reprojection_distances(pair.data.K_a, pair.data.K_b, *T, pair.data.a, pair.data.b);
  }
  return reprojection_distances(pair.data.K_b, std::get<Homography>(pair.truth), pair.data.a,
                                pair.data.b);
}

void write_matches(std::ostream& out, const MatchSet& matches) {
  char buf[64];
  for (const auto& m : matches.matches) {
    std::snprintf(buf, sizeof(buf), "%.17g", m.confidence);
    out << m.a << ' ' << m.b << ' ' << buf << '\n';
  }
}

MatchSet read_matches(std::istream& in, Eigen::Index n_a, Eigen::Index n_b) {
  MatchSet set;
  std::vector<char> used_a(static_cast<std::size_t>(n_a), 0), used_b(static_cast<std::size_t>(n_b), 0);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = strip_comment(line);
    if (body.empty()) continue;
    std::istringstream ss(body);
    long long a = -1, b = -1;
    std::string conf;
    if (!(ss >> a >> b >> conf) || a < 0 || b < 0 || a >= n_a || b >= n_b ||
        used_a[static_cast<std::size_t>(a)] || used_b[static_cast<std::size_t>(b)]) {
      throw Error(ErrorCode::ParseError, "match line " + std::to_string(line_no));
    }
    used_a[static_cast<std::size_t>(a)] = 1;
    used_b[static_cast<std::size_t>(b)] = 1;
    set.matches.push_back({static_cast<int>(a), static_cast<int>(b),
                           parse_double(conf, "match line " + std::to_string(line_no))});
  }
  for (Eigen::Index i = 0; i < n_a; ++i) {
    if (!used_a[static_cast<std::size_t>(i)]) set.unmatched_a.push_back(static_cast<int>(i));
  }
  for (Eigen::Index j = 0; j < n_b; ++j) {
    if (!used_b[static_cast<std::size_t>(j)]) set.unmatched_b.push_back(static_cast<int>(j));
  }
  return set;
}

}  // namespace kpm
