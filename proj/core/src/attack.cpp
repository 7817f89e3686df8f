#include "bcr/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace bcr {

ObjectiveEvaluation evaluate_objective(const Encoder& encoder, const ImageTensor& image_adv,
                                       const LayerFeatureSet& clean_features, const TokenPartition& partition,
                                       const PixelMask& roi_mask, const AttackConfig& config) {
  ad::Tape tape;
  ad::Var pixels = tape.variable(image_to_matrix(image_adv));
  auto features = encoder.forward(pixels, config.layers);
  auto objective =
      losses::composite_objective(config, features, clean_features, partition, pixels, roi_mask);
  tape.backward(objective.total);
  ObjectiveEvaluation out{std::move(objective.breakdown), pixels.grad()};
  if (out.gradient.size() == 0) out.gradient = ad::Matrix::Zero(pixels.rows(), pixels.cols());
  return out;
}

ImageTensor linf_project_and_clamp(std::span<const double> x_adv, const ImageTensor& x_clean, double epsilon) {
  if (x_adv.size() != x_clean.size()) throw ShapeMismatch("linf_project_and_clamp: shapes differ");
  auto clean = x_clean.data();
  std::vector<double> out(x_adv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lo = std::max(0.0, clean[i] - epsilon);
    const double hi = std::min(1.0, clean[i] + epsilon);
    out[i] = std::clamp(x_adv[i], lo, hi);
  }
  return ImageTensor(x_clean.height(), x_clean.width(), std::move(out));
}

ImageTensor linf_project_and_clamp(const ImageTensor& x_adv, const ImageTensor& x_clean, double epsilon) {
  if (x_adv.height() != x_clean.height() || x_adv.width() != x_clean.width()) {
    throw ShapeMismatch("linf_project_and_clamp: shapes differ");
  }
  return linf_project_and_clamp(x_adv.data(), x_clean, epsilon);
}

AttackResult run_bcr_attack(const Encoder& encoder, const ImageTensor& image, const RoiSpec& roi,
                            const AttackConfig& config, const IterateObserver& observer) {
  const auto started = std::chrono::steady_clock::now();
  validate_config(config);
  check_layers(encoder, config.layers);
  check_resolution(encoder, image);

  const PixelMask mask = build_pixel_mask(roi, image.height(), image.width());
  const TokenPartition partition = partition_tokens(roi, image.height(), image.width(),
                                                    encoder.descriptor().patch_size, config.roi_overlap_threshold);
  const LayerFeatureSet clean = extract_features(encoder, image, config.layers);

  std::vector<LossRecord> trace;
  trace.reserve(static_cast<std::size_t>(config.steps));
  ImageTensor current = image;
  std::vector<double> next(image.size());
  const std::size_t plane = image.pixel_count();

  for (int step = 1; step <= config.steps; ++step) {
    ObjectiveEvaluation eval = evaluate_objective(encoder, current, clean, partition, mask, config);
    const LossRecord rec = eval.breakdown.record();
    if (!std::isfinite(rec.total) || !eval.gradient.allFinite()) {
      throw NonFiniteLossError("objective became non-finite at step " + std::to_string(step), trace);
    }
    trace.push_back(rec);

    auto x = current.data();
    const double* g = eval.gradient.data();
    for (std::size_t i = 0; i < next.size(); ++i) {
      double update = config.step_rule == StepRule::kSignedGradient
                          ? static_cast<double>((g[i] > 0.0) - (g[i] < 0.0))
                          : g[i];
      if (config.roi_only_perturbation) {
        const std::size_t p = i % plane;
        if (!mask.bits()[p]) update = 0.0;
      }
      next[i] = x[i] - config.step_size * update;
    }
    current = linf_project_and_clamp(next, image, config.epsilon);
    if (observer) observer(step, current);
  }

  AttackResult result{current, std::move(trace), {}, linf_distance(current, image), {}};
  {
    ad::Tape tape;
    ad::Var pixels = tape.constant(image_to_matrix(current));
    auto features = encoder.forward(pixels, config.layers);
    auto final_obj = losses::composite_objective(config, features, clean, partition, pixels, mask);
    result.final_loss = final_obj.breakdown.record();
  }
  result.metadata.config = config;
  result.metadata.encoder_id = encoder.descriptor().identifier;
  result.metadata.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

ImageTensor mask_roi(const ImageTensor& image, const RoiSpec& roi, double fill_value) {
  const PixelMask mask = build_pixel_mask(roi, image.height(), image.width());
  std::vector<double> out(image.data().begin(), image.data().end());
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        if (mask.at(y, x)) out[image.index(c, y, x)] = fill_value;
      }
    }
  }
  return ImageTensor(image.height(), image.width(), std::move(out));
}

namespace {

// Reflect about the edge pixel: -1 -> 1, n -> n - 2.
int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

ImageTensor blur_roi(const ImageTensor& image, const RoiSpec& roi, int kernel_radius) {
  if (kernel_radius < 1) throw ConfigError("blur_roi: kernel_radius must be >= 1");
  const PixelMask mask = build_pixel_mask(roi, image.height(), image.width());
  const double sigma = kernel_radius / 2.0;
  std::vector<double> kernel(static_cast<std::size_t>(2 * kernel_radius + 1));
  double norm = 0.0;
  for (int k = -kernel_radius; k <= kernel_radius; ++k) {
    const double v = std::exp(-(k * k) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(k + kernel_radius)] = v;
    norm += v;
  }
  for (double& v : kernel) v /= norm;

  const int h = image.height();
  const int w = image.width();
  std::vector<double> horizontal(image.size());
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -kernel_radius; k <= kernel_radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + kernel_radius)] * image.at(c, y, reflect(x + k, w));
        }
        horizontal[image.index(c, y, x)] = acc;
      }
    }
  }
  std::vector<double> out(image.data().begin(), image.data().end());
  for (int c = 0; c < ImageTensor::kChannels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask.at(y, x)) continue;
        double acc = 0.0;
        for (int k = -kernel_radius; k <= kernel_radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + kernel_radius)] * horizontal[image.index(c, reflect(y + k, h), x)];
        }
        out[image.index(c, y, x)] = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return ImageTensor(h, w, std::move(out));
}

}  // namespace bcr
