#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bcr {

// Untyped n-dimensional buffer as it arrives from a decoder or a caller.
struct RawArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

// 3 x H x W image with every value in [0, 1], stored channel-major (CHW).
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  // Throws ShapeError on a size mismatch and RangeError on out-of-range or
  // non-finite values.
  ImageTensor(int height, int width, std::vector<double> chw);

  static ImageTensor filled(int height, int width, double value);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  std::size_t size() const noexcept { return data_.size(); }

  double at(int channel, int y, int x) const {
    return data_[index(channel, y, x)];
  }
  std::size_t index(int channel, int y, int x) const noexcept {
    return (static_cast<std::size_t>(channel) * height_ + y) * width_ + x;
  }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  int height_;
  int width_;
  std::vector<double> data_;
};

ImageTensor validate_image(const RawArray& raw);

// Max absolute per-pixel difference. Throws ShapeMismatch.
double linf_distance(const ImageTensor& a, const ImageTensor& b);

// Corner-form box, half-open: x in [x_min, x_max), y in [y_min, y_max).
struct Box {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  bool operator==(const Box&) const = default;
};

struct RoiSpec {
  std::vector<Box> boxes;
};

// Throws BoundsError if the ROI is empty, a box is degenerate, or a box leaves
// the height x width image.
void check_roi(const RoiSpec& roi, int height, int width);

enum class SimilarityMode { kCosine, kRawDot };
enum class StepRule { kSignedGradient, kPlainGradient };
enum class TvScope { kRoi, kFullImage };

std::string to_string(SimilarityMode mode);
std::string to_string(StepRule rule);
std::string to_string(TvScope scope);
SimilarityMode parse_similarity_mode(const std::string& text);
StepRule parse_step_rule(const std::string& text);
TvScope parse_tv_scope(const std::string& text);

struct AttackConfig {
  double epsilon = 0.2;
  double step_size = 0.01;
  int steps = 200;
  // 1-based transformer block indices.
  std::vector<int> layers = {1, 2, 3, 4};
  double lambda_stat = 1.0;
  double lambda_dict = 1.0;
  double lambda_pres = 1.0;
  double lambda_tv = 1e-3;
  double tau = 0.07;
  SimilarityMode similarity_mode = SimilarityMode::kCosine;
  StepRule step_rule = StepRule::kSignedGradient;
  TvScope tv_scope = TvScope::kRoi;
  // Zero the update outside the ROI pixel mask (ablation).
  bool roi_only_perturbation = false;
  // Minimum covered fraction of a patch for it to count as ROI; 0 = any overlap.
  double roi_overlap_threshold = 0.0;

  bool operator==(const AttackConfig&) const = default;
};

AttackConfig default_config();

// Throws ConfigError naming the first violated invariant.
void validate_config(const AttackConfig& config);

// The last `count` blocks of a depth-`depth` encoder (all of them if shallower).
std::vector<int> late_layers(int depth, int count = 4);

struct LossRecord {
  double total = 0.0;
  double stat = 0.0;
  double dict = 0.0;
  double pres = 0.0;
  double tv = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct AttackMetadata {
  AttackConfig config;
  std::string encoder_id;
  double elapsed_seconds = 0.0;
};

struct AttackResult {
  ImageTensor adversarial_image;
  // One record per iteration, evaluated at the iterate before its update.
  std::vector<LossRecord> loss_trace;
  // Loss of the returned adversarial image.
  LossRecord final_loss;
  double converged_linf = 0.0;
  AttackMetadata metadata;
};

}  // namespace bcr
