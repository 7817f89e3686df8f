#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bcr/autodiff.hpp"
#include "bcr/types.hpp"

namespace bcr {

struct EncoderDescriptor {
  int depth = 4;
  int patch_size = 2;
  int feature_dim = 32;
  int input_resolution = 16;
  int num_heads = 4;
  std::string identifier = "toy";

  int grid_side() const noexcept { return input_resolution / patch_size; }
  int token_count() const noexcept { return grid_side() * grid_side() + 1; }

  bool operator==(const EncoderDescriptor&) const = default;
};

// Throws ConfigError.
void validate_descriptor(const EncoderDescriptor& descriptor);

// Per-layer T x D hidden states; row 0 is CLS.
struct LayerFeatureSet {
  std::map<int, ad::Matrix> features;
  int token_count = 0;
  int feature_dim = 0;

  const ad::Matrix& at(int layer) const;
};

// A frozen vision encoder. Pixels come in as a 3 x (H*W) row-major matrix in
// [0, 1] (CHW order); any model-specific normalisation happens inside.
// Layer l is the output of transformer block l after its residual additions.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual const EncoderDescriptor& descriptor() const = 0;

  // Records the forward pass on `pixels.tape()` and returns one T x D node
  // per requested layer. Layers are assumed validated.
  virtual std::map<int, ad::Var> forward(ad::Var pixels, const std::vector<int>& layers) const = 0;

  // False if concurrent forward() calls on one instance are unsafe.
  virtual bool reentrant() const { return true; }
};

// Throws LayerOutOfRange / ResolutionMismatch.
void check_layers(const Encoder& encoder, const std::vector<int>& layers);
void check_resolution(const Encoder& encoder, const ImageTensor& image);

// Pixels as a tape matrix of shape 3 x (H*W).
ad::Matrix image_to_matrix(const ImageTensor& image);

LayerFeatureSet extract_features(const Encoder& encoder, const ImageTensor& image, const std::vector<int>& layers);

// Miniature pre-norm ViT: patch embedding, learned CLS and position
// embeddings, then `depth` blocks of multi-head self-attention + GELU MLP.
class ToyEncoder final : public Encoder {
 public:
  ToyEncoder(std::uint64_t seed, EncoderDescriptor descriptor);

  const EncoderDescriptor& descriptor() const override { return descriptor_; }
  std::map<int, ad::Var> forward(ad::Var pixels, const std::vector<int>& layers) const override;

  // Token embeddings fed to block 1 (patch projection + position), T x D.
  ad::Var embed(ad::Var pixels) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  struct Block {
    ad::Matrix ln1_gamma, ln1_beta;
    ad::Matrix w_q, w_k, w_v, w_o;
    ad::Matrix b_q, b_k, b_v, b_o;
    ad::Matrix ln2_gamma, ln2_beta;
    ad::Matrix w_fc1, b_fc1, w_fc2, b_fc2;
  };

  ad::Var block_forward(const Block& block, ad::Var x) const;

  std::uint64_t seed_;
  EncoderDescriptor descriptor_;
  std::vector<Eigen::Index> patch_gather_;
  ad::Matrix patch_weight_, patch_bias_, cls_token_, position_;
  std::vector<Block> blocks_;
};

std::shared_ptr<const Encoder> toy_encoder(std::uint64_t seed, const EncoderDescriptor& descriptor);

// Named encoder factories. Options are an opaque, adapter-specific JSON block
// (weight paths, seeds, ...).
class EncoderRegistry {
 public:
  using Factory = std::function<std::shared_ptr<const Encoder>(const nlohmann::json& options)>;

  // Throws DuplicateAdapterError.
  void register_adapter(const std::string& name, Factory factory);
  // Throws UnknownAdapterError.
  std::shared_ptr<const Encoder> load(const std::string& name, const nlohmann::json& options = {}) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  // Process-wide registry with the "toy" adapter pre-registered.
  static EncoderRegistry& global();

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Factory> factories_;
};

// Factory for the toy adapter; options: seed, depth, feature_dim, patch_size,
// input_resolution, num_heads.
std::shared_ptr<const Encoder> make_toy_from_options(const nlohmann::json& options);

}  // namespace bcr
