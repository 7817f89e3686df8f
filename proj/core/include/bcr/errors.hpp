#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bcr {

// Base of every error raised by the library. `kind()` is the stable name that
// ends up in report flags, so it must not change between releases.
class Error : public std::runtime_error {
 public:
  Error(std::string_view kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  std::string_view kind() const noexcept { return kind_; }

 private:
  std::string_view kind_;
};

#define BCR_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(#Name, what) {}      \
  };

// core_model
BCR_DEFINE_ERROR(ShapeError)
BCR_DEFINE_ERROR(RangeError)
BCR_DEFINE_ERROR(ConfigError)
// roi_tokenizer
BCR_DEFINE_ERROR(BoundsError)
BCR_DEFINE_ERROR(GeometryError)
BCR_DEFINE_ERROR(EmptyBackgroundError)
// encoder_interface
BCR_DEFINE_ERROR(LayerOutOfRange)
BCR_DEFINE_ERROR(ResolutionMismatch)
BCR_DEFINE_ERROR(DuplicateAdapterError)
BCR_DEFINE_ERROR(UnknownAdapterError)
// bcr_losses
BCR_DEFINE_ERROR(EmptySetError)
BCR_DEFINE_ERROR(ShapeMismatch)
// evaluation_metrics
BCR_DEFINE_ERROR(ExtractorUnavailable)
BCR_DEFINE_ERROR(EmptyPhraseError)
BCR_DEFINE_ERROR(UndefinedMetricError)
BCR_DEFINE_ERROR(EmbedderUnavailable)
BCR_DEFINE_ERROR(ZeroVectorError)
BCR_DEFINE_ERROR(TooSmallError)
BCR_DEFINE_ERROR(BackendUnavailable)
// grounding_verifier
BCR_DEFINE_ERROR(GroundingServiceError)
BCR_DEFINE_ERROR(UnverifiableError)
// experiment_cli
BCR_DEFINE_ERROR(ParseError)
BCR_DEFINE_ERROR(MissingImageError)
BCR_DEFINE_ERROR(InvalidBoxError)
BCR_DEFINE_ERROR(EmptyDatasetError)
BCR_DEFINE_ERROR(IOError)

#undef BCR_DEFINE_ERROR

}  // namespace bcr
