#include "bcr/losses.hpp"

#include <string>

#include "bcr/errors.hpp"

namespace bcr::losses {

namespace {

void require_nonempty(ad::Var zr, ad::Var zb, const char* op) {
  if (zr.rows() == 0 || zb.rows() == 0) throw EmptySetError(std::string(op) + ": empty token set");
  if (zr.cols() != zb.cols()) throw ShapeMismatch(std::string(op) + ": feature dimensions differ");
}

ad::Var column_std(ad::Var z, ad::Var mean) {
  ad::Var centred = ad::sub_row(z, mean);
  return ad::sqrt(ad::add_scalar(ad::col_mean(ad::square(centred)), kStdStabilizer));
}

template <typename Fn>
auto on_tape(Fn&& fn) {
  ad::Tape tape;
  return fn(tape);
}

}  // namespace

ad::Var stat_loss(ad::Var zr, ad::Var zb) {
  require_nonempty(zr, zb, "stat_loss");
  ad::Var mu_r = ad::col_mean(zr);
  ad::Var mu_b = ad::col_mean(zb);
  ad::Var sd_r = column_std(zr, mu_r);
  ad::Var sd_b = column_std(zb, mu_b);
  return ad::add(ad::sum(ad::square(ad::sub(mu_r, mu_b))), ad::sum(ad::square(ad::sub(sd_r, sd_b))));
}

ad::Var soft_assignment(ad::Var zr, ad::Var zb, double tau, SimilarityMode mode) {
  require_nonempty(zr, zb, "soft_assignment");
  if (!(tau > 0.0)) throw ConfigError("soft_assignment: tau must be > 0");
  ad::Var qr = zr;
  ad::Var qb = zb;
  if (mode == SimilarityMode::kCosine) {
    qr = ad::normalize_rows(zr);
    qb = ad::normalize_rows(zb);
  }
  ad::Var logits = ad::scale(ad::matmul(qr, ad::transpose(qb)), 1.0 / tau);
  return ad::softmax_rows(logits);
}

ad::Var dictionary_loss(ad::Var zr, ad::Var zb, double tau, SimilarityMode mode) {
  ad::Var alpha = soft_assignment(zr, zb, tau, mode);
  ad::Var projected = ad::matmul(alpha, zb);
  return ad::scale(ad::sum(ad::square(ad::sub(zr, projected))), 1.0 / static_cast<double>(zr.rows()));
}

ad::Var preservation_loss(ad::Var zb_adv, const Matrix& zb_clean) {
  if (zb_adv.rows() != zb_clean.rows() || zb_adv.cols() != zb_clean.cols()) {
    throw ShapeMismatch("preservation_loss: adversarial and clean background shapes differ");
  }
  if (zb_adv.rows() == 0) throw EmptySetError("preservation_loss: empty background set");
  ad::Var clean = zb_adv.tape()->constant(zb_clean);
  return ad::scale(ad::sum(ad::square(ad::sub(zb_adv, clean))), 1.0 / static_cast<double>(zb_adv.rows()));
}

ad::Var tv_loss(ad::Var pixels, const PixelMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  if (pixels.cols() != static_cast<Eigen::Index>(h) * w) {
    throw ShapeMismatch("tv_loss: mask does not match image dimensions");
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  std::vector<Eigen::Index> first;
  std::vector<Eigen::Index> second;
  for (Eigen::Index c = 0; c < pixels.rows(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask.at(y, x)) continue;
        const Eigen::Index here = c * plane + static_cast<Eigen::Index>(y) * w + x;
        if (x + 1 < w && mask.at(y, x + 1)) {
          first.push_back(here + 1);
          second.push_back(here);
        }
        if (y + 1 < h && mask.at(y + 1, x)) {
          first.push_back(here + w);
          second.push_back(here);
        }
      }
    }
  }
  if (first.empty()) return pixels.tape()->constant(Matrix::Zero(1, 1));
  const auto n = static_cast<Eigen::Index>(first.size());
  ad::Var a = ad::gather_flat(pixels, first, n, 1);
  ad::Var b = ad::gather_flat(pixels, second, n, 1);
  return ad::sum(ad::abs(ad::sub(a, b)));
}

double stat_loss(const Matrix& zr, const Matrix& zb) {
  return on_tape([&](ad::Tape& t) { return stat_loss(t.constant(zr), t.constant(zb)).scalar(); });
}

Matrix soft_assignment(const Matrix& zr, const Matrix& zb, double tau, SimilarityMode mode) {
  return on_tape([&](ad::Tape& t) { return Matrix(soft_assignment(t.constant(zr), t.constant(zb), tau, mode).value()); });
}

double dictionary_loss(const Matrix& zr, const Matrix& zb, double tau, SimilarityMode mode) {
  return on_tape([&](ad::Tape& t) { return dictionary_loss(t.constant(zr), t.constant(zb), tau, mode).scalar(); });
}

double preservation_loss(const Matrix& zb_adv, const Matrix& zb_clean) {
  return on_tape([&](ad::Tape& t) { return preservation_loss(t.constant(zb_adv), zb_clean).scalar(); });
}

double tv_loss(const ImageTensor& image, const PixelMask& mask) {
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw ShapeMismatch("tv_loss: mask does not match image dimensions");
  }
  return on_tape([&](ad::Tape& t) { return tv_loss(t.constant(image_to_matrix(image)), mask).scalar(); });
}

Matrix select_tokens(const Matrix& features, const std::vector<int>& indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), features.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= features.rows()) throw ShapeMismatch("token index out of range");
    out.row(static_cast<Eigen::Index>(i)) = features.row(indices[i]);
  }
  return out;
}

ad::Var select_tokens(ad::Var features, const std::vector<int>& indices) {
  return ad::gather_rows(features, std::vector<Eigen::Index>(indices.begin(), indices.end()));
}

CompositeObjective composite_objective(const AttackConfig& config, const std::map<int, ad::Var>& features_adv,
                                       const LayerFeatureSet& features_clean, const TokenPartition& partition,
                                       ad::Var pixels_adv, const PixelMask& roi_mask) {
  ad::Tape& tape = *pixels_adv.tape();
  CompositeObjective out;
  ad::Var total = tape.constant(Matrix::Zero(1, 1));
  for (int layer : config.layers) {
    auto it = features_adv.find(layer);
    if (it == features_adv.end()) {
      throw LayerOutOfRange("adversarial features lack layer " + std::to_string(layer));
    }
    ad::Var z = it->second;
    if (z.rows() != partition.token_count()) {
      throw ShapeMismatch("feature token count does not match the token partition");
    }
    ad::Var zr = select_tokens(z, partition.roi_indices);
    ad::Var zb = select_tokens(z, partition.background_indices);
    const Matrix zb_clean = select_tokens(features_clean.at(layer), partition.background_indices);

    ad::Var stat = stat_loss(zr, zb);
    ad::Var dict = dictionary_loss(zr, zb, config.tau, config.similarity_mode);
    ad::Var pres = preservation_loss(zb, zb_clean);

    total = ad::add(total, ad::scale(stat, config.lambda_stat));
    total = ad::add(total, ad::scale(dict, config.lambda_dict));
    total = ad::add(total, ad::scale(pres, config.lambda_pres));

    LayerTerms terms{stat.scalar(), dict.scalar(), pres.scalar()};
    out.breakdown.stat += terms.stat;
    out.breakdown.dict += terms.dict;
    out.breakdown.pres += terms.pres;
    out.breakdown.per_layer[layer] = terms;
  }
  const PixelMask full = PixelMask::full(roi_mask.height(), roi_mask.width());
  ad::Var tv = tv_loss(pixels_adv, config.tv_scope == TvScope::kRoi ? roi_mask : full);
  total = ad::add(total, ad::scale(tv, config.lambda_tv));
  out.breakdown.tv = tv.scalar();
  out.breakdown.total = total.scalar();
  out.total = total;
  return out;
}

LossBreakdown composite_loss(const AttackConfig& config, const LayerFeatureSet& features_adv,
                             const LayerFeatureSet& features_clean, const TokenPartition& partition,
                             const ImageTensor& image_adv, const PixelMask& roi_mask) {
  if (image_adv.height() != roi_mask.height() || image_adv.width() != roi_mask.width()) {
    throw ShapeMismatch("composite_loss: mask does not match image dimensions");
  }
  ad::Tape tape;
  std::map<int, ad::Var> adv;
  for (int layer : config.layers) adv.emplace(layer, tape.constant(features_adv.at(layer)));
  ad::Var pixels = tape.constant(image_to_matrix(image_adv));
  return composite_objective(config, adv, features_clean, partition, pixels, roi_mask).breakdown;
}

}  // namespace bcr::losses
