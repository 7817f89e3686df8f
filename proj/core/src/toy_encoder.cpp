#include <cmath>
#include <sstream>

#include "bcr/encoder.hpp"
#include "bcr/errors.hpp"
#include "bcr/rng.hpp"

namespace bcr {

namespace {

ad::Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double mean, double stddev) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(mean, stddev);
  return m;
}

}  // namespace

ToyEncoder::ToyEncoder(std::uint64_t seed, EncoderDescriptor descriptor)
    : seed_(seed), descriptor_(std::move(descriptor)) {
  validate_descriptor(descriptor_);
  std::ostringstream id;
  id << "toy-vit(seed=" << seed_ << ",depth=" << descriptor_.depth << ",dim=" << descriptor_.feature_dim
     << ",patch=" << descriptor_.patch_size << ",res=" << descriptor_.input_resolution
     << ",heads=" << descriptor_.num_heads << ")";
  descriptor_.identifier = id.str();

  const int p = descriptor_.patch_size;
  const int res = descriptor_.input_resolution;
  const int grid = descriptor_.grid_side();
  const int patch_len = ImageTensor::kChannels * p * p;
  const int d = descriptor_.feature_dim;

  // pixels is 3 x (res*res) row-major: flat index = c*res*res + y*res + x.
  patch_gather_.reserve(static_cast<std::size_t>(grid) * grid * patch_len);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      for (int c = 0; c < ImageTensor::kChannels; ++c) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            const int y = gy * p + dy;
            const int x = gx * p + dx;
            patch_gather_.push_back(static_cast<Eigen::Index>(c) * res * res + y * res + x);
          }
        }
      }
    }
  }

  Rng rng(seed_);
  patch_weight_ = gaussian(rng, patch_len, d, 0.0, 1.0 / std::sqrt(patch_len));
  patch_bias_ = gaussian(rng, 1, d, 0.0, 0.1);
  cls_token_ = gaussian(rng, 1, d, 0.0, 1.0);
  position_ = gaussian(rng, descriptor_.token_count(), d, 0.0, 0.3);

  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_hidden = 1.0 / std::sqrt(4.0 * d);
  blocks_.reserve(static_cast<std::size_t>(descriptor_.depth));
  for (int b = 0; b < descriptor_.depth; ++b) {
    Block blk;
    blk.ln1_gamma = gaussian(rng, 1, d, 1.0, 0.1);
    blk.ln1_beta = gaussian(rng, 1, d, 0.0, 0.05);
    blk.w_q = gaussian(rng, d, d, 0.0, s);
    blk.w_k = gaussian(rng, d, d, 0.0, s);
    blk.w_v = gaussian(rng, d, d, 0.0, s);
    blk.w_o = gaussian(rng, d, d, 0.0, s);
    blk.b_q = gaussian(rng, 1, d, 0.0, 0.02);
    blk.b_k = gaussian(rng, 1, d, 0.0, 0.02);
    blk.b_v = gaussian(rng, 1, d, 0.0, 0.02);
    blk.b_o = gaussian(rng, 1, d, 0.0, 0.02);
    blk.ln2_gamma = gaussian(rng, 1, d, 1.0, 0.1);
    blk.ln2_beta = gaussian(rng, 1, d, 0.0, 0.05);
    blk.w_fc1 = gaussian(rng, d, 4 * d, 0.0, s);
    blk.b_fc1 = gaussian(rng, 1, 4 * d, 0.0, 0.02);
    blk.w_fc2 = gaussian(rng, 4 * d, d, 0.0, s_hidden);
    blk.b_fc2 = gaussian(rng, 1, d, 0.0, 0.02);
    blocks_.push_back(std::move(blk));
  }
}

ad::Var ToyEncoder::embed(ad::Var pixels) const {
  ad::Tape& tape = *pixels.tape();
  const Eigen::Index grid = descriptor_.grid_side();
  const Eigen::Index patch_len = patch_weight_.rows();
  // Map [0, 1] to [-1, 1] before the patch projection.
  ad::Var centred = ad::scale(ad::add_scalar(pixels, -0.5), 2.0);
  ad::Var patches = ad::gather_flat(centred, patch_gather_, grid * grid, patch_len);
  ad::Var tokens = ad::add_row(ad::matmul(patches, tape.constant(patch_weight_)), tape.constant(patch_bias_));
  ad::Var seq = ad::concat_rows({tape.constant(cls_token_), tokens});
  return ad::add(seq, tape.constant(position_));
}

ad::Var ToyEncoder::block_forward(const Block& blk, ad::Var x) const {
  ad::Tape& tape = *x.tape();
  const int heads = descriptor_.num_heads;
  const Eigen::Index head_dim = descriptor_.feature_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ad::Var h = ad::layer_norm_rows(x, tape.constant(blk.ln1_gamma), tape.constant(blk.ln1_beta));
  ad::Var q = ad::add_row(ad::matmul(h, tape.constant(blk.w_q)), tape.constant(blk.b_q));
  ad::Var k = ad::add_row(ad::matmul(h, tape.constant(blk.w_k)), tape.constant(blk.b_k));
  ad::Var v = ad::add_row(ad::matmul(h, tape.constant(blk.w_v)), tape.constant(blk.b_v));
  std::vector<ad::Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int i = 0; i < heads; ++i) {
    ad::Var qh = ad::col_block(q, i * head_dim, head_dim);
    ad::Var kh = ad::col_block(k, i * head_dim, head_dim);
    ad::Var vh = ad::col_block(v, i * head_dim, head_dim);
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
    outputs.push_back(ad::matmul(attn, vh));
  }
  ad::Var attended = ad::add_row(ad::matmul(ad::concat_cols(outputs), tape.constant(blk.w_o)), tape.constant(blk.b_o));
  x = ad::add(x, attended);

  ad::Var h2 = ad::layer_norm_rows(x, tape.constant(blk.ln2_gamma), tape.constant(blk.ln2_beta));
  ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(h2, tape.constant(blk.w_fc1)), tape.constant(blk.b_fc1)));
  ad::Var mlp = ad::add_row(ad::matmul(hidden, tape.constant(blk.w_fc2)), tape.constant(blk.b_fc2));
  return ad::add(x, mlp);
}

std::map<int, ad::Var> ToyEncoder::forward(ad::Var pixels, const std::vector<int>& layers) const {
  const auto pixel_count = static_cast<Eigen::Index>(descriptor_.input_resolution) * descriptor_.input_resolution;
  if (pixels.rows() != ImageTensor::kChannels || pixels.cols() != pixel_count) {
    throw ResolutionMismatch("toy encoder received a pixel matrix of the wrong shape");
  }
  int deepest = 0;
  for (int l : layers) deepest = std::max(deepest, l);
  std::map<int, ad::Var> out;
  ad::Var x = embed(pixels);
  for (int l = 1; l <= deepest; ++l) {
    x = block_forward(blocks_[static_cast<std::size_t>(l - 1)], x);
    if (std::find(layers.begin(), layers.end(), l) != layers.end()) out.emplace(l, x);
  }
  return out;
}

std::shared_ptr<const Encoder> toy_encoder(std::uint64_t seed, const EncoderDescriptor& descriptor) {
  return std::make_shared<ToyEncoder>(seed, descriptor);
}

}  // namespace bcr
