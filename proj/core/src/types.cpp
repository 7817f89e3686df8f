#include "bcr/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bcr/errors.hpp"

namespace bcr {

ImageTensor::ImageTensor(int height, int width, std::vector<double> chw)
    : height_(height), width_(width), data_(std::move(chw)) {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  if (data_.size() != static_cast<std::size_t>(kChannels) * pixel_count()) {
    std::ostringstream os;
    os << "expected " << kChannels * pixel_count() << " values for a 3x" << height << "x"
       << width << " image, got " << data_.size();
    throw ShapeError(os.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const double v = data_[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      std::ostringstream os;
      os << "pixel value " << v << " at flat index " << i << " outside [0, 1]";
      throw RangeError(os.str());
    }
  }
}

ImageTensor ImageTensor::filled(int height, int width, double value) {
  const auto n = static_cast<std::size_t>(kChannels) * static_cast<std::size_t>(std::max(height, 0)) *
                 static_cast<std::size_t>(std::max(width, 0));
  return ImageTensor(height, width, std::vector<double>(n, value));
}

ImageTensor validate_image(const RawArray& raw) {
  if (raw.shape.size() != 3 || raw.shape[0] != static_cast<std::size_t>(ImageTensor::kChannels)) {
    std::ostringstream os;
    os << "expected a 3xHxW array, got shape (";
    for (std::size_t i = 0; i < raw.shape.size(); ++i) os << (i ? "," : "") << raw.shape[i];
    os << ")";
    throw ShapeError(os.str());
  }
  return ImageTensor(static_cast<int>(raw.shape[1]), static_cast<int>(raw.shape[2]), raw.data);
}

double linf_distance(const ImageTensor& a, const ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeMismatch("linf_distance: image shapes differ");
  }
  double worst = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) worst = std::max(worst, std::abs(da[i] - db[i]));
  return worst;
}

void check_roi(const RoiSpec& roi, int height, int width) {
  if (roi.boxes.empty()) throw BoundsError("ROI has no boxes");
  for (const Box& b : roi.boxes) {
    if (!(0 <= b.x_min && b.x_min < b.x_max && b.x_max <= width && 0 <= b.y_min &&
          b.y_min < b.y_max && b.y_max <= height)) {
      std::ostringstream os;
      os << "box (" << b.x_min << "," << b.y_min << "," << b.x_max << "," << b.y_max
         << ") is empty or leaves the " << width << "x" << height << " image";
      throw BoundsError(os.str());
    }
  }
}

std::string to_string(SimilarityMode mode) {
  return mode == SimilarityMode::kCosine ? "cosine" : "raw-dot";
}

std::string to_string(StepRule rule) {
  return rule == StepRule::kSignedGradient ? "signed-gradient" : "plain-gradient";
}

std::string to_string(TvScope scope) { return scope == TvScope::kRoi ? "roi" : "full-image"; }

SimilarityMode parse_similarity_mode(const std::string& text) {
  if (text == "cosine") return SimilarityMode::kCosine;
  if (text == "raw-dot") return SimilarityMode::kRawDot;
  throw ConfigError("unknown similarity mode '" + text + "'");
}

StepRule parse_step_rule(const std::string& text) {
  if (text == "signed-gradient") return StepRule::kSignedGradient;
  if (text == "plain-gradient") return StepRule::kPlainGradient;
  throw ConfigError("unknown step rule '" + text + "'");
}

TvScope parse_tv_scope(const std::string& text) {
  if (text == "roi") return TvScope::kRoi;
  if (text == "full-image") return TvScope::kFullImage;
  throw ConfigError("unknown tv scope '" + text + "'");
}

AttackConfig default_config() { return AttackConfig{}; }

void validate_config(const AttackConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(c.epsilon >= 0.0)) fail("epsilon must be >= 0");
  if (!(c.step_size >= 0.0)) fail("step_size must be >= 0");
  if (c.steps < 0) fail("steps must be >= 0");
  if (!(c.tau > 0.0)) fail("tau must be > 0");
  if (!(c.lambda_stat >= 0.0 && c.lambda_dict >= 0.0 && c.lambda_pres >= 0.0 && c.lambda_tv >= 0.0)) {
    fail("loss weights must be >= 0");
  }
  if (c.layers.empty()) fail("layer set must be non-empty");
  if (!(c.roi_overlap_threshold >= 0.0 && c.roi_overlap_threshold <= 1.0)) {
    fail("roi_overlap_threshold must lie in [0, 1]");
  }
}

std::vector<int> late_layers(int depth, int count) {
  std::vector<int> out;
  for (int l = std::max(1, depth - count + 1); l <= depth; ++l) out.push_back(l);
  return out;
}

}  // namespace bcr
