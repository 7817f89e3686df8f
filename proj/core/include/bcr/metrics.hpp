#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bcr/types.hpp"

namespace bcr::metrics {

// Normalised object phrases of one caption with their head nouns, index-aligned.
struct CaptionObjectSet {
  std::vector<std::string> phrases;
  std::vector<std::string> head_nouns;
  std::string source_caption;

  std::set<std::string> phrase_set() const { return {phrases.begin(), phrases.end()}; }
  std::set<std::string> head_set() const { return {head_nouns.begin(), head_nouns.end()}; }
  bool empty() const noexcept { return phrases.empty(); }
};

// Which representation set comparisons use.
enum class MatchLevel { kPhrase, kHeadNoun };

class ObjectExtractor {
 public:
  virtual ~ObjectExtractor() = default;
  virtual CaptionObjectSet extract(const std::string& caption) const = 0;
};

// Offline extractor: lowercases, tokenises on non-alphanumerics, then takes the
// longest vocabulary phrase at each position. The last word of a phrase also
// matches with a trailing plural "s".
class LexiconExtractor final : public ObjectExtractor {
 public:
  explicit LexiconExtractor(std::vector<std::string> vocabulary);
  // Newline-separated UTF-8 phrases; blank lines and '#' comments skipped.
  static LexiconExtractor from_file(const std::filesystem::path& path);

  CaptionObjectSet extract(const std::string& caption) const override;
  const std::vector<std::vector<std::string>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::vector<std::string>> entries_;
};

// Throws ExtractorUnavailable when `extractor` is null.
CaptionObjectSet extract_objects(const std::string& caption, const ObjectExtractor* extractor);

// Last whitespace-separated token, lowercased. Throws EmptyPhraseError.
std::string head_noun(const std::string& phrase);

// Lowercase + collapse internal whitespace.
std::string normalize_phrase(const std::string& phrase);

// Builds a set from already-normalised phrases (e.g. fixtures).
CaptionObjectSet make_object_set(const std::vector<std::string>& phrases, std::string caption = {});

int concealment_success(const std::string& target, const CaptionObjectSet& clean, const CaptionObjectSet& adv,
                        MatchLevel level = MatchLevel::kPhrase);

// |clean ∩ adv| / |clean|. Throws UndefinedMetricError if clean is empty.
double global_preservation(const CaptionObjectSet& clean, const CaptionObjectSet& adv,
                           MatchLevel level = MatchLevel::kPhrase);

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Signed feature-hashing bag of words over lowercase alphanumeric tokens.
// Deterministic and offline; not a sentence encoder.
class HashingEmbedder final : public TextEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256) : dimension_(dimension) {}
  std::vector<double> embed(const std::string& text) const override;

 private:
  std::size_t dimension_;
};

// 1 - cos(phi(c), phi(c')), clamped to [0, 2]; exactly 0 for equal captions.
// Throws EmbedderUnavailable / ZeroVectorError.
double semantic_drift(const std::string& caption_clean, const std::string& caption_adv, const TextEmbedder* embedder);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over all fully-contained windows, averaged over channels.
// Throws ShapeMismatch / TooSmallError.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& params = {});

class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  virtual std::string name() const = 0;
  virtual double distance(const ImageTensor& a, const ImageTensor& b) const = 0;
};

// Root-mean-square pixel difference. Stands in where no learned metric is
// configured; it is not LPIPS.
class RmsPixelBackend final : public PerceptualBackend {
 public:
  std::string name() const override { return "rms-pixel"; }
  double distance(const ImageTensor& a, const ImageTensor& b) const override;
};

// Throws BackendUnavailable when `backend` is null.
double perceptual_distance(const ImageTensor& a, const ImageTensor& b, const PerceptualBackend* backend);

struct MetricsReport {
  std::optional<int> concealment;
  std::optional<int> concealment_head;
  std::optional<double> global_preservation;
  std::optional<double> grounded_hallucination;
  std::optional<double> head_noun_hallucination;
  std::optional<double> semantic_drift;
  std::optional<double> ssim;
  std::optional<double> perceptual_distance;
  std::vector<std::string> flags;
};

}  // namespace bcr::metrics
