#pragma once

#include <map>

#include "bcr/autodiff.hpp"
#include "bcr/encoder.hpp"
#include "bcr/roi.hpp"
#include "bcr/types.hpp"

namespace bcr::losses {

using ad::Matrix;

inline constexpr double kStdStabilizer = 1e-8;

struct LayerTerms {
  double stat = 0.0;
  double dict = 0.0;
  double pres = 0.0;
};

// stat/dict/pres are unweighted sums over layers; total applies the weights.
struct LossBreakdown {
  double stat = 0.0;
  double dict = 0.0;
  double pres = 0.0;
  double tv = 0.0;
  double total = 0.0;
  std::map<int, LayerTerms> per_layer;

  LossRecord record() const { return LossRecord{total, stat, dict, pres, tv}; }
};

// ---- differentiable forms (record on the operands' tape) ------------------

// ||mu(Zr) - mu(Zb)||^2 + ||sigma(Zr) - sigma(Zb)||^2, population std with a
// 1e-8 stabiliser under the root.
ad::Var stat_loss(ad::Var zr, ad::Var zb);

// |Ir| x |Ib| row-stochastic matrix softmax(sim(Zr, Zb) / tau).
ad::Var soft_assignment(ad::Var zr, ad::Var zb, double tau, SimilarityMode mode);

// Mean squared residual between each ROI token and its soft projection onto
// the background dictionary. Gradients reach both Zr and Zb.
ad::Var dictionary_loss(ad::Var zr, ad::Var zb, double tau, SimilarityMode mode);

// Mean over background tokens of the squared drift from the clean features,
// which are treated as constants.
ad::Var preservation_loss(ad::Var zb_adv, const Matrix& zb_clean);

// Anisotropic TV of a 3 x (H*W) pixel matrix over horizontal/vertical pairs
// whose endpoints both lie inside `mask`.
ad::Var tv_loss(ad::Var pixels, const PixelMask& mask);

// ---- value forms ----------------------------------------------------------

double stat_loss(const Matrix& zr, const Matrix& zb);
Matrix soft_assignment(const Matrix& zr, const Matrix& zb, double tau, SimilarityMode mode);
double dictionary_loss(const Matrix& zr, const Matrix& zb, double tau, SimilarityMode mode);
double preservation_loss(const Matrix& zb_adv, const Matrix& zb_clean);
double tv_loss(const ImageTensor& image, const PixelMask& mask);

// Rows of `features` at the given token indices.
Matrix select_tokens(const Matrix& features, const std::vector<int>& indices);
ad::Var select_tokens(ad::Var features, const std::vector<int>& indices);

// Composite multi-layer objective. TV runs over `roi_mask` or, with
// TvScope::kFullImage, over the whole image.
struct CompositeObjective {
  ad::Var total;
  LossBreakdown breakdown;
};

CompositeObjective composite_objective(const AttackConfig& config, const std::map<int, ad::Var>& features_adv,
                                       const LayerFeatureSet& features_clean, const TokenPartition& partition,
                                       ad::Var pixels_adv, const PixelMask& roi_mask);

LossBreakdown composite_loss(const AttackConfig& config, const LayerFeatureSet& features_adv,
                             const LayerFeatureSet& features_clean, const TokenPartition& partition,
                             const ImageTensor& image_adv, const PixelMask& roi_mask);

}  // namespace bcr::losses
