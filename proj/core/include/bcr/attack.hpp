#pragma once

#include <functional>
#include <vector>

#include "bcr/encoder.hpp"
#include "bcr/errors.hpp"
#include "bcr/losses.hpp"
#include "bcr/roi.hpp"
#include "bcr/types.hpp"

namespace bcr {

// Raised when the objective turns NaN/Inf; carries the records collected so far.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::vector<LossRecord> trace)
      : Error("NonFiniteLossError", what), trace_(std::move(trace)) {}

  const std::vector<LossRecord>& trace() const noexcept { return trace_; }

 private:
  std::vector<LossRecord> trace_;
};

// Called after every projected update with the 1-based step and the iterate.
using IterateObserver = std::function<void(int step, const ImageTensor& iterate)>;

// Pixel-space minimisation of the composite objective under the l-inf budget.
AttackResult run_bcr_attack(const Encoder& encoder, const ImageTensor& image, const RoiSpec& roi,
                            const AttackConfig& config, const IterateObserver& observer = {});

// Objective value and its pixel gradient (3 x H*W, CHW order) at `image_adv`.
struct ObjectiveEvaluation {
  losses::LossBreakdown breakdown;
  ad::Matrix gradient;
};

ObjectiveEvaluation evaluate_objective(const Encoder& encoder, const ImageTensor& image_adv,
                                       const LayerFeatureSet& clean_features, const TokenPartition& partition,
                                       const PixelMask& roi_mask, const AttackConfig& config);

// Clamp into [max(0, x - eps), min(1, x + eps)] per pixel. Throws ShapeMismatch.
ImageTensor linf_project_and_clamp(const ImageTensor& x_adv, const ImageTensor& x_clean, double epsilon);
// Same, on raw values that may leave [0, 1].
ImageTensor linf_project_and_clamp(std::span<const double> x_adv, const ImageTensor& x_clean, double epsilon);

// Pixel-space obfuscation baselines.
ImageTensor mask_roi(const ImageTensor& image, const RoiSpec& roi, double fill_value = 0.5);
// Gaussian blur with sigma = radius / 2 and a (2*radius + 1) tap kernel,
// reflected at the image border; only ROI pixels are replaced.
ImageTensor blur_roi(const ImageTensor& image, const RoiSpec& roi, int kernel_radius);

}  // namespace bcr
