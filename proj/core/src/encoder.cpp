#include "bcr/encoder.hpp"

#include <algorithm>
#include <sstream>

#include "bcr/errors.hpp"

namespace bcr {

void validate_descriptor(const EncoderDescriptor& d) {
  if (d.depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (d.patch_size < 1 || d.input_resolution < 1 || d.input_resolution % d.patch_size != 0) {
    throw ConfigError("input resolution must be a positive multiple of the patch size");
  }
  if (d.feature_dim < 1 || d.num_heads < 1 || d.feature_dim % d.num_heads != 0) {
    throw ConfigError("feature_dim must be a positive multiple of num_heads");
  }
}

const ad::Matrix& LayerFeatureSet::at(int layer) const {
  auto it = features.find(layer);
  if (it == features.end()) {
    throw LayerOutOfRange("layer " + std::to_string(layer) + " is not in the feature set");
  }
  return it->second;
}

void check_layers(const Encoder& encoder, const std::vector<int>& layers) {
  const int depth = encoder.descriptor().depth;
  if (layers.empty()) throw LayerOutOfRange("no layers requested");
  for (int l : layers) {
    if (l < 1 || l > depth) {
      std::ostringstream os;
      os << "layer " << l << " outside 1.." << depth << " for encoder '" << encoder.descriptor().identifier << "'";
      throw LayerOutOfRange(os.str());
    }
  }
}

void check_resolution(const Encoder& encoder, const ImageTensor& image) {
  const int res = encoder.descriptor().input_resolution;
  if (image.height() != res || image.width() != res) {
    std::ostringstream os;
    os << "encoder expects " << res << "x" << res << " input, got " << image.width() << "x" << image.height();
    throw ResolutionMismatch(os.str());
  }
}

ad::Matrix image_to_matrix(const ImageTensor& image) {
  ad::Matrix m(ImageTensor::kChannels, static_cast<Eigen::Index>(image.pixel_count()));
  std::copy(image.data().begin(), image.data().end(), m.data());
  return m;
}

LayerFeatureSet extract_features(const Encoder& encoder, const ImageTensor& image, const std::vector<int>& layers) {
  check_layers(encoder, layers);
  check_resolution(encoder, image);
  ad::Tape tape;
  auto out = encoder.forward(tape.constant(image_to_matrix(image)), layers);
  LayerFeatureSet set;
  set.token_count = encoder.descriptor().token_count();
  set.feature_dim = encoder.descriptor().feature_dim;
  for (int l : layers) set.features.emplace(l, out.at(l).value());
  return set;
}

void EncoderRegistry::register_adapter(const std::string& name, Factory factory) {
  std::lock_guard lock(mutex_);
  if (!factories_.emplace(name, std::move(factory)).second) {
    throw DuplicateAdapterError("encoder adapter '" + name + "' is already registered");
  }
}

std::shared_ptr<const Encoder> EncoderRegistry::load(const std::string& name, const nlohmann::json& options) const {
  Factory factory;
  {
    std::lock_guard lock(mutex_);
    auto it = factories_.find(name);
    if (it == factories_.end()) throw UnknownAdapterError("no encoder adapter named '" + name + "'");
    factory = it->second;
  }
  return factory(options);
}

bool EncoderRegistry::contains(const std::string& name) const {
  std::lock_guard lock(mutex_);
  return factories_.count(name) != 0;
}

std::vector<std::string> EncoderRegistry::names() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [name, _] : factories_) out.push_back(name);
  return out;
}

EncoderRegistry& EncoderRegistry::global() {
  static EncoderRegistry* registry = [] {
    auto* r = new EncoderRegistry();
    r->register_adapter("toy", make_toy_from_options);
    return r;
  }();
  return *registry;
}

std::shared_ptr<const Encoder> make_toy_from_options(const nlohmann::json& options) {
  const nlohmann::json opts = options.is_object() ? options : nlohmann::json::object();
  EncoderDescriptor d;
  d.depth = opts.value("depth", d.depth);
  d.feature_dim = opts.value("feature_dim", d.feature_dim);
  d.patch_size = opts.value("patch_size", d.patch_size);
  d.input_resolution = opts.value("input_resolution", d.input_resolution);
  d.num_heads = opts.value("num_heads", d.num_heads);
  return toy_encoder(opts.value("seed", std::uint64_t{7}), d);
}

}  // namespace bcr
